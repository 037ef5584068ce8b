#include "semverify/lp.hpp"

#include "semverify/error.hpp"

#include <algorithm>
#include <cmath>
#include <limits>

namespace semverify::lp {

void Constraints::add_row(std::span<const double> coeffs, double rhs) {
    if (coeffs.size() != cols)
        throw Error(ErrorCode::InvalidArgument, "constraint row has wrong length");
    a.insert(a.end(), coeffs.begin(), coeffs.end());
    b.push_back(rhs);
}

namespace {

constexpr double kInf = std::numeric_limits<double>::infinity();
constexpr double kCostTol = 1e-9;
constexpr double kPivotTol = 1e-9;
constexpr double kFeasTol = 1e-9;

// Columns: n structural, m slacks, m artificials. Row i reads
// A_i x + s_i - a_i = b_i.
class Tableau {
public:
    Tableau(const Constraints &cons, const Box &box) : n_(cons.cols), m_(cons.rows()), cols_(n_ + 2 * m_) {
        lo_.assign(cols_, 0.0);
        hi_.assign(cols_, kInf);
        value_.assign(cols_, 0.0);
        basic_row_.assign(cols_, -1);
        basis_.assign(m_, 0);
        t_.assign(m_ * cols_, 0.0);
        for (std::size_t j = 0; j < n_; ++j) {
            lo_[j] = box.lower(j);
            hi_[j] = box.upper(j);
            value_[j] = lo_[j];
        }
        for (std::size_t i = 0; i < m_; ++i) {
            auto row = cons.row(i);
            double r = cons.b[i];
            for (std::size_t j = 0; j < n_; ++j)
                r -= row[j] * lo_[j];
            const double sign = r >= 0.0 ? 1.0 : -1.0;
            for (std::size_t j = 0; j < n_; ++j)
                at(i, j) = sign * row[j];
            at(i, n_ + i) = sign;
            at(i, n_ + m_ + i) = -sign;
            std::size_t basic = r >= 0.0 ? n_ + i : n_ + m_ + i;
            if (r >= 0.0)
                hi_[n_ + m_ + i] = 0.0;
            basis_[i] = basic;
            basic_row_[basic] = static_cast<long>(i);
            value_[basic] = std::fabs(r);
        }
        cost_.assign(cols_, 0.0);
        d_.assign(cols_, 0.0);
    }

    void set_cost(std::span<const double> c) {
        std::fill(cost_.begin(), cost_.end(), 0.0);
        std::copy(c.begin(), c.end(), cost_.begin());
        refresh_reduced_costs();
    }

    void set_phase_one_cost() {
        std::fill(cost_.begin(), cost_.end(), 0.0);
        for (std::size_t i = 0; i < m_; ++i)
            cost_[n_ + m_ + i] = 1.0;
        refresh_reduced_costs();
    }

    void close_artificials() {
        for (std::size_t i = 0; i < m_; ++i)
            hi_[n_ + m_ + i] = 0.0;
    }

    double artificial_sum() const {
        double s = 0.0;
        for (std::size_t i = 0; i < m_; ++i)
            s += value_[n_ + m_ + i];
        return s;
    }

    double objective() const {
        double s = 0.0;
        for (std::size_t j = 0; j < cols_; ++j)
            s += cost_[j] * value_[j];
        return s;
    }

    // Returns false when the iteration limit is hit.
    bool optimize(std::size_t &iterations, std::size_t limit) {
        std::size_t degenerate = 0;
        while (true) {
            if (iterations >= limit)
                return false;
            const bool bland = degenerate > 50;
            long enter = -1;
            double best = 0.0;
            for (std::size_t j = 0; j < cols_; ++j) {
                if (basic_row_[j] >= 0 || hi_[j] - lo_[j] <= 0.0)
                    continue;
                const bool at_lower = value_[j] <= lo_[j];
                double gain = at_lower ? -d_[j] : d_[j];
                if (gain <= kCostTol)
                    continue;
                if (bland) {
                    enter = static_cast<long>(j);
                    break;
                }
                if (gain > best) {
                    best = gain;
                    enter = static_cast<long>(j);
                }
            }
            if (enter < 0)
                return true;
            ++iterations;
            const auto q = static_cast<std::size_t>(enter);
            const double dir = value_[q] <= lo_[q] ? 1.0 : -1.0;

            double step = hi_[q] - lo_[q];
            long leave = -1;
            for (std::size_t i = 0; i < m_; ++i) {
                const double alpha = at(i, q) * dir;
                const std::size_t bv = basis_[i];
                double limit_i = kInf;
                if (alpha > kPivotTol)
                    limit_i = (value_[bv] - lo_[bv]) / alpha;
                else if (alpha < -kPivotTol && std::isfinite(hi_[bv]))
                    limit_i = (hi_[bv] - value_[bv]) / -alpha;
                else
                    continue;
                limit_i = std::max(limit_i, 0.0);
                if (limit_i < step ||
                    (leave >= 0 && limit_i == step &&
                     (bland ? bv < basis_[static_cast<std::size_t>(leave)]
                            : std::fabs(alpha) > std::fabs(at(static_cast<std::size_t>(leave), q))))) {
                    step = limit_i;
                    leave = static_cast<long>(i);
                }
            }
            if (!std::isfinite(step))
                return false; // unbounded: cannot happen with a bounded box
            degenerate = step <= 1e-12 ? degenerate + 1 : 0;

            for (std::size_t i = 0; i < m_; ++i)
                value_[basis_[i]] -= at(i, q) * dir * step;
            value_[q] += dir * step;

            if (leave < 0) {
                value_[q] = dir > 0 ? hi_[q] : lo_[q];
                continue;
            }
            const auto r = static_cast<std::size_t>(leave);
            const std::size_t out = basis_[r];
            value_[out] = (at(r, q) * dir > 0) ? lo_[out] : hi_[out];
            pivot(r, q);
        }
    }

    std::vector<double> structural() const {
        std::vector<double> x(value_.begin(), value_.begin() + static_cast<long>(n_));
        for (std::size_t j = 0; j < n_; ++j)
            x[j] = std::clamp(x[j], lo_[j], hi_[j]);
        return x;
    }

    std::vector<double> slack_reduced_costs() const {
        std::vector<double> lambda(m_);
        for (std::size_t i = 0; i < m_; ++i)
            lambda[i] = std::max(0.0, d_[n_ + i]);
        return lambda;
    }

private:
    double &at(std::size_t i, std::size_t j) { return t_[i * cols_ + j]; }
    double at(std::size_t i, std::size_t j) const { return t_[i * cols_ + j]; }

    void refresh_reduced_costs() {
        d_ = cost_;
        for (std::size_t i = 0; i < m_; ++i) {
            const double cb = cost_[basis_[i]];
            if (cb == 0.0)
                continue;
            for (std::size_t j = 0; j < cols_; ++j)
                d_[j] -= cb * at(i, j);
        }
    }

    void pivot(std::size_t r, std::size_t q) {
        const double p = at(r, q);
        double *row_r = &t_[r * cols_];
        for (std::size_t j = 0; j < cols_; ++j)
            row_r[j] /= p;
        for (std::size_t i = 0; i < m_; ++i) {
            if (i == r)
                continue;
            double *row_i = &t_[i * cols_];
            const double f = row_i[q];
            if (f == 0.0)
                continue;
            for (std::size_t j = 0; j < cols_; ++j)
                row_i[j] -= f * row_r[j];
            row_i[q] = 0.0;
        }
        const double fd = d_[q];
        if (fd != 0.0) {
            for (std::size_t j = 0; j < cols_; ++j)
                d_[j] -= fd * row_r[j];
            d_[q] = 0.0;
        }
        basic_row_[basis_[r]] = -1;
        basis_[r] = q;
        basic_row_[q] = static_cast<long>(r);
    }

    std::size_t n_, m_, cols_;
    std::vector<double> t_;
    std::vector<double> lo_, hi_, value_, cost_, d_;
    std::vector<std::size_t> basis_;
    std::vector<long> basic_row_;
};

double magnitude(const Box &box, std::size_t j) { return std::max(std::fabs(box.lower(j)), std::fabs(box.upper(j))); }

} // namespace

Solution minimize(std::span<const double> c, const Constraints &constraints, const Box &box) {
    if (c.size() != constraints.cols || box.size() != constraints.cols)
        throw Error(ErrorCode::InvalidArgument, "lp dimension mismatch");
    Solution sol;
    Tableau tab(constraints, box);
    const std::size_t limit = 200 * (constraints.rows() + constraints.cols) + 1000;

    tab.set_phase_one_cost();
    if (!tab.optimize(sol.iterations, limit)) {
        sol.status = Status::IterationLimit;
        sol.x = tab.structural();
        sol.multipliers.assign(constraints.rows(), 0.0);
        return sol;
    }
    double scale = 1.0;
    for (double v : constraints.b)
        scale = std::max(scale, std::fabs(v));
    if (tab.artificial_sum() > kFeasTol * scale) {
        sol.status = Status::Infeasible;
        sol.x = tab.structural();
        sol.multipliers = tab.slack_reduced_costs();
        return sol;
    }
    tab.close_artificials();
    tab.set_cost(c);
    const bool done = tab.optimize(sol.iterations, limit);
    sol.status = done ? Status::Optimal : Status::IterationLimit;
    sol.x = tab.structural();
    sol.objective = tab.objective();
    sol.multipliers = done ? tab.slack_reduced_costs() : std::vector<double>(constraints.rows(), 0.0);
    return sol;
}

double lagrangian_bound(std::span<const double> c, double c0, const Constraints &constraints, const Box &box,
                        std::span<const double> multipliers, std::vector<double> *argmin) {
    const std::size_t n = constraints.cols, m = constraints.rows();
    std::vector<double> g(c.begin(), c.end());
    double err = std::fabs(c0);
    double value = c0;
    for (std::size_t i = 0; i < m; ++i) {
        const double lambda = multipliers.empty() ? 0.0 : std::max(0.0, multipliers[i]);
        if (lambda == 0.0)
            continue;
        auto row = constraints.row(i);
        for (std::size_t j = 0; j < n; ++j) {
            g[j] += lambda * row[j];
            err += std::fabs(lambda * row[j]) * magnitude(box, j);
        }
        value -= lambda * constraints.b[i];
        err += std::fabs(lambda * constraints.b[i]);
    }
    if (argmin)
        argmin->assign(n, 0.0);
    for (std::size_t j = 0; j < n; ++j) {
        const bool take_lower = g[j] >= 0.0;
        const double xj = take_lower ? box.lower(j) : box.upper(j);
        value += g[j] * xj;
        err += std::fabs(g[j]) * magnitude(box, j) + std::fabs(c[j]) * magnitude(box, j);
        if (argmin)
            (*argmin)[j] = xj;
    }
    const double gamma = static_cast<double>(n + m + 4) * std::numeric_limits<double>::epsilon();
    return value - gamma * err - std::numeric_limits<double>::denorm_min();
}

bool certifies_infeasible(const Constraints &constraints, const Box &box, std::span<const double> multipliers) {
    std::vector<double> zero(constraints.cols, 0.0);
    return lagrangian_bound(zero, 0.0, constraints, box, multipliers) > 0.0;
}

} // namespace semverify::lp
