#pragma once

#include "semverify/boundprop.hpp"
#include "semverify/lp.hpp"

#include <vector>

namespace semverify::detail {

struct RegionBound {
    double lower = 0.0;
    std::vector<double> point;
    bool infeasible = false;
};

/// Certified lower bound of row `r` of `form` over box ∩ cuts, and the point
/// where the relaxation attains it.
inline RegionBound minimize_on_region(const AffineForm &form, std::size_t r, const lp::Constraints &cuts,
                                      const Box &box) {
    RegionBound out;
    auto c = form.row(r);
    const double c0 = form.constant[r];
    const double box_bound = lp::lagrangian_bound(c, c0, cuts, box, {}, &out.point);
    out.lower = box_bound;
    if (cuts.rows() == 0)
        return out;
    auto sol = lp::minimize(c, cuts, box);
    if (sol.status == lp::Status::Infeasible) {
        if (lp::certifies_infeasible(cuts, box, sol.multipliers)) {
            out.infeasible = true;
            return out;
        }
        return out;
    }
    if (sol.status == lp::Status::Optimal) {
        out.lower = std::max(box_bound, lp::lagrangian_bound(c, c0, cuts, box, sol.multipliers));
        out.point = std::move(sol.x);
    }
    return out;
}

} // namespace semverify::detail
