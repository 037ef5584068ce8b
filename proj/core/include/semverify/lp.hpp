#pragma once

#include "semverify/box.hpp"

#include <cstddef>
#include <span>
#include <vector>

namespace semverify::lp {

/// Row-major dense constraint block A (rows x cols) with right-hand side b,
/// read as A x <= b.
struct Constraints {
    std::size_t cols = 0;
    std::vector<double> a;
    std::vector<double> b;

    explicit Constraints(std::size_t num_vars = 0) : cols(num_vars) {}
    std::size_t rows() const noexcept { return b.size(); }
    void add_row(std::span<const double> coeffs, double rhs);
    std::span<const double> row(std::size_t i) const { return {a.data() + i * cols, cols}; }
};

enum class Status { Optimal, Infeasible, IterationLimit };

struct Solution {
    Status status = Status::IterationLimit;
    std::vector<double> x;
    double objective = 0.0;
    /// Nonnegative row multipliers. For Optimal they certify the objective
    /// bound, for Infeasible they certify emptiness (see the helpers below).
    std::vector<double> multipliers;
    std::size_t iterations = 0;
};

/// minimize c.x subject to A x <= b and x in `box`, by a two-phase
/// bounded-variable primal simplex on a dense tableau.
Solution minimize(std::span<const double> c, const Constraints &constraints, const Box &box);

/// Sound lower bound on min { c.x + c0 : A x <= b, x in box } obtained from any
/// nonnegative multipliers: min over the box of (c + A^T lambda).x - lambda.b + c0,
/// shifted down by a floating-point error allowance. Writes the minimizing box
/// vertex of the Lagrangian to `argmin` when non-null.
double lagrangian_bound(std::span<const double> c, double c0, const Constraints &constraints, const Box &box,
                        std::span<const double> multipliers, std::vector<double> *argmin = nullptr);

/// True when `multipliers` prove {A x <= b} ∩ box is empty, i.e.
/// min over the box of lambda.(A x - b) is positive beyond rounding error.
bool certifies_infeasible(const Constraints &constraints, const Box &box, std::span<const double> multipliers);

} // namespace semverify::lp
