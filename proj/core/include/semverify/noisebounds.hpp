#pragma once

#include "semverify/box.hpp"
#include "semverify/graph.hpp"

#include <cstddef>
#include <limits>
#include <optional>
#include <vector>

namespace semverify {

/// rho = latent_power * 10^(pnr_db / 10). Throws when latent_power <= 0.
double pnr_to_rho(double pnr_db, double latent_power);

/// Per-dimension squared-magnitude limit on generator outputs.
struct PowerSpec {
    double rho = 0.0;
    std::optional<double> pnr_db;
    double latent_power = 0.0;

    static PowerSpec from_rho(double rho);
    static PowerSpec from_pnr(double pnr_db, double latent_power);
    double amplitude() const;
};

struct SearchBudget {
    double time_limit_s = std::numeric_limits<double>::infinity();
    std::size_t max_nodes = 200000;
};

struct ExtremumResult {
    /// Sound bound on max over the box of sign * output[index].
    double bound = 0.0;
    /// Best value attained at a concrete point (a lower certificate on the max).
    double incumbent = -std::numeric_limits<double>::infinity();
    std::vector<double> witness;
    std::size_t nodes = 0;
    std::size_t bound_calls = 0;
    bool converged = false;
};

/// Branch-and-bound maximization of sign * output[index] over `box`, bounded
/// by linear relaxation plus phase cuts, split on the widest unstable ReLU,
/// stopped once bound - incumbent <= tol or the budget runs out. The returned
/// bound is sound whenever the search stops.
ExtremumResult maximize_output(const NetworkGraph &graph, const Box &box, std::size_t index, double sign,
                               double tol, const SearchBudget &budget);

struct NoiseBoundsOptions {
    double tol = 1e-4;
    SearchBudget budget;   // per optimization problem; time limit is shared overall
    std::size_t workers = 1;
};

struct NoiseBoundsStats {
    std::size_t nodes = 0;
    std::size_t bound_calls = 0;
    double wall_time_s = 0.0;
    bool budget_exhausted = false;
};

struct NoiseBoundsResult {
    /// Enclosure of the clipped generator range, inside [-sqrt(rho), sqrt(rho)].
    Box bounds;
    /// Enclosure of the raw generator range before the power limit.
    Box raw;
    /// The power limit cut the raw range in this dimension.
    std::vector<bool> clamped;
    /// The raw range lies entirely outside [-sqrt(rho), sqrt(rho)].
    std::vector<bool> infeasible;
    /// max(upper gap, lower gap) between sound bound and attained value.
    std::vector<double> exact_gap;
    double rho = 0.0;
    NoiseBoundsStats stats;
};

/// Range of the generator over the trigger box, one maximization and one
/// minimization per output dimension, then intersected with the power limit.
NoiseBoundsResult compute_noise_bounds(const NetworkGraph &generator, const Box &trigger_box, const PowerSpec &power,
                                       const NoiseBoundsOptions &options = {});

} // namespace semverify
