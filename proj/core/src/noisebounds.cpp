#include "semverify/noisebounds.hpp"

#include "parallel.hpp"
#include "region.hpp"
#include "semverify/boundprop.hpp"
#include "semverify/error.hpp"
#include "semverify/eval.hpp"

#include <algorithm>
#include <chrono>
#include <cmath>
#include <memory>
#include <queue>

namespace semverify {

double pnr_to_rho(double pnr_db, double latent_power) {
    if (!(latent_power > 0.0) || !std::isfinite(latent_power))
        throw Error(ErrorCode::InvalidArgument, "latent power must be positive");
    if (!std::isfinite(pnr_db))
        throw Error(ErrorCode::InvalidArgument, "PNR must be finite");
    return latent_power * std::pow(10.0, pnr_db / 10.0);
}

PowerSpec PowerSpec::from_rho(double rho) {
    if (!(rho >= 0.0) || !std::isfinite(rho))
        throw Error(ErrorCode::InvalidArgument, "rho must be finite and nonnegative");
    PowerSpec p;
    p.rho = rho;
    return p;
}

PowerSpec PowerSpec::from_pnr(double pnr_db, double latent_power) {
    PowerSpec p;
    p.rho = pnr_to_rho(pnr_db, latent_power);
    p.pnr_db = pnr_db;
    p.latent_power = latent_power;
    return p;
}

double PowerSpec::amplitude() const { return std::sqrt(rho); }

namespace {

using Clock = std::chrono::steady_clock;

struct SearchNode {
    PhaseAssignment phases;
    NodeBounds bounds;
    double upper = 0.0;
    std::size_t index = 0;
};

struct WorseFirst {
    bool operator()(const SearchNode *a, const SearchNode *b) const {
        if (a->upper != b->upper)
            return a->upper < b->upper;
        return a->index > b->index;
    }
};

} // namespace

ExtremumResult maximize_output(const NetworkGraph &graph, const Box &box, std::size_t index, double sign,
                               double tol, const SearchBudget &budget) {
    graph.require_valid();
    if (index >= graph.numel(graph.output()))
        throw Error(ErrorCode::InvalidArgument, "output index out of range");
    const auto start = Clock::now();
    auto out_of_time = [&] {
        return std::chrono::duration<double>(Clock::now() - start).count() > budget.time_limit_s;
    };

    ExtremumResult res;
    std::vector<std::unique_ptr<SearchNode>> storage;
    std::priority_queue<SearchNode *, std::vector<SearchNode *>, WorseFirst> open;
    double settled = -std::numeric_limits<double>::infinity();
    std::size_t created = 0;

    auto consider = [&](const std::vector<double> &x) {
        auto y = forward_f64(graph, x);
        const double v = sign * y[index];
        if (v > res.incumbent) {
            res.incumbent = v;
            res.witness = x;
        }
    };

    // Bounds a region; returns nullptr when it is empty.
    auto expand = [&](PhaseAssignment phases, const NodeBounds *parent) -> std::unique_ptr<SearchNode> {
        ++res.bound_calls;
        auto lr = linear_bounds(graph, box, phases, parent);
        if (lr.empty_region())
            return nullptr;
        const NodeId out = graph.output();
        // maximize sign * f(x)  <=>  minimize -sign * f(x)
        const AffineForm &src = sign > 0 ? lr.upper_forms[out] : lr.lower_forms[out];
        AffineForm neg;
        neg.rows = 1;
        neg.cols = src.cols;
        auto row = src.row(index);
        neg.coeff.assign(row.begin(), row.end());
        for (auto &c : neg.coeff)
            c = -sign * c;
        neg.constant = {-sign * src.constant[index]};
        auto cuts = phase_constraints(graph, lr, phases);
        auto region = detail::minimize_on_region(neg, 0, cuts, box);
        if (region.infeasible)
            return nullptr;
        double upper = -region.lower;
        upper = std::min(upper, sign > 0 ? lr.output().upper(index) : -lr.output().lower(index));
        consider(region.point);
        auto node = std::make_unique<SearchNode>();
        node->phases = std::move(phases);
        node->bounds = std::move(lr.bounds);
        node->upper = upper;
        node->index = created++;
        return node;
    };

    {
        std::vector<double> center(box.size());
        for (std::size_t i = 0; i < box.size(); ++i)
            center[i] = box.center(i);
        consider(center);
    }
    if (auto root = expand(PhaseAssignment(graph), nullptr)) {
        open.push(root.get());
        storage.push_back(std::move(root));
    }

    bool exhausted = false;
    while (!open.empty()) {
        SearchNode *top = open.top();
        if (top->upper - res.incumbent <= tol)
            break;
        if (res.nodes >= budget.max_nodes || out_of_time()) {
            exhausted = true;
            break;
        }
        open.pop();
        ++res.nodes;
        if (top->upper <= res.incumbent)
            continue;
        auto split = widest_unstable(graph, top->bounds, top->phases);
        if (!split) {
            // All phases decided: the relaxation is exact up to LP accuracy.
            settled = std::max(settled, top->upper);
            continue;
        }
        for (Phase phase : {Phase::Active, Phase::Inactive}) {
            PhaseAssignment child = top->phases;
            child.set(*split, phase);
            if (auto node = expand(std::move(child), &top->bounds)) {
                if (node->upper > res.incumbent) {
                    open.push(node.get());
                    storage.push_back(std::move(node));
                }
            }
        }
    }

    double bound = std::max(res.incumbent, settled);
    if (!open.empty())
        bound = std::max(bound, open.top()->upper);
    res.bound = bound;
    res.converged = !exhausted && bound - res.incumbent <= tol;
    return res;
}

NoiseBoundsResult compute_noise_bounds(const NetworkGraph &generator, const Box &trigger_box, const PowerSpec &power,
                                       const NoiseBoundsOptions &options) {
    generator.require_valid();
    const std::size_t dim = generator.numel(generator.output());
    if (generator.input_dim() != trigger_box.size() || dim != trigger_box.size())
        throw Error(ErrorCode::ShapeMismatch, "generator must map a " + std::to_string(trigger_box.size()) +
                                                  "-dim trigger to noise of the same dimension (got input " +
                                                  std::to_string(generator.input_dim()) + ", output " +
                                                  std::to_string(dim) + ")");
    if (trigger_box.size() == 0)
        throw Error(ErrorCode::InvalidArgument, "empty trigger box");
    if (!(options.tol > 0.0))
        throw Error(ErrorCode::InvalidArgument, "tolerance must be positive");
    if (!(power.rho >= 0.0))
        throw Error(ErrorCode::InvalidArgument, "rho must be nonnegative");

    const auto start = Clock::now();
    std::vector<ExtremumResult> results(2 * dim);
    detail::parallel_for(2 * dim, options.workers, [&](std::size_t task) {
        SearchBudget b = options.budget;
        const double elapsed = std::chrono::duration<double>(Clock::now() - start).count();
        b.time_limit_s = std::max(0.0, options.budget.time_limit_s - elapsed);
        const std::size_t j = task / 2;
        const double sign = task % 2 == 0 ? 1.0 : -1.0;
        results[task] = maximize_output(generator, trigger_box, j, sign, options.tol, b);
    });

    NoiseBoundsResult out;
    out.rho = power.rho;
    const double a = power.amplitude();
    std::vector<double> raw_lo(dim), raw_hi(dim), lo(dim), hi(dim);
    out.clamped.assign(dim, false);
    out.infeasible.assign(dim, false);
    out.exact_gap.assign(dim, 0.0);
    for (std::size_t j = 0; j < dim; ++j) {
        const auto &up = results[2 * j];
        const auto &down = results[2 * j + 1];
        raw_hi[j] = up.bound;
        raw_lo[j] = -down.bound;
        out.exact_gap[j] = std::max(0.0, std::max(up.bound - up.incumbent, down.bound - down.incumbent));
        out.stats.nodes += up.nodes + down.nodes;
        out.stats.bound_calls += up.bound_calls + down.bound_calls;
        out.stats.budget_exhausted = out.stats.budget_exhausted || !up.converged || !down.converged;
        lo[j] = std::clamp(raw_lo[j], -a, a);
        hi[j] = std::clamp(raw_hi[j], -a, a);
        out.clamped[j] = raw_hi[j] > a || raw_lo[j] < -a;
        out.infeasible[j] = raw_lo[j] > a || raw_hi[j] < -a;
    }
    out.raw = Box(std::move(raw_lo), std::move(raw_hi));
    out.bounds = Box(std::move(lo), std::move(hi));
    out.stats.wall_time_s = std::chrono::duration<double>(Clock::now() - start).count();
    return out;
}

} // namespace semverify
