#pragma once

#include "semverify/box.hpp"
#include "semverify/graph.hpp"
#include "semverify/lp.hpp"

#include <cstdint>
#include <optional>
#include <span>
#include <vector>

namespace semverify {

enum class Phase : std::uint8_t { Unknown, Active, Inactive };

/// Phase per ReLU neuron, indexed by the graph's global neuron id
/// (position in NetworkGraph::relu_neurons()).
class PhaseAssignment {
public:
    PhaseAssignment() = default;
    explicit PhaseAssignment(const NetworkGraph &graph) : phases_(graph.relu_neurons().size(), Phase::Unknown) {}

    std::size_t size() const noexcept { return phases_.size(); }
    Phase operator[](std::size_t neuron) const { return phases_.at(neuron); }
    void set(std::size_t neuron, Phase phase) { phases_.at(neuron) = phase; }
    std::size_t fixed_count() const noexcept;

    friend bool operator==(const PhaseAssignment &, const PhaseAssignment &) = default;

private:
    std::vector<Phase> phases_;
};

/// Concrete per-node enclosures. lower/upper are indexed by node id.
struct NodeBounds {
    std::vector<std::vector<double>> lower;
    std::vector<std::vector<double>> upper;
    Box output;
    /// A fixed phase contradicts the bounds: the region is empty and can be pruned.
    bool empty_region = false;
    std::optional<NodeId> empty_at;
};

/// Interval propagation with outward-inflated float64 endpoints. Fixed
/// phases act as identity (active) or zero (inactive) on the region where
/// they hold.
NodeBounds interval_bounds(const NetworkGraph &graph, const Box &input_box, const PhaseAssignment &phases);

/// Linear functions of the external input, one row per element of a node.
struct AffineForm {
    std::size_t rows = 0;
    std::size_t cols = 0;
    std::vector<double> coeff; // rows x cols, row-major
    std::vector<double> constant;

    std::span<const double> row(std::size_t r) const { return {coeff.data() + r * cols, cols}; }
    double min_over(std::size_t r, const Box &box) const;
    double max_over(std::size_t r, const Box &box) const;
    double evaluate(std::size_t r, std::span<const double> x) const;
};

/// Slopes relating a ReLU output y to its pre-activation x, valid on the
/// region: lower_slope * x <= y <= upper_slope * x + upper_intercept.
struct ReluRelaxation {
    std::vector<double> lower_slope;
    std::vector<double> upper_slope;
    std::vector<double> upper_intercept;
};

struct LinearRelaxation {
    NodeBounds bounds;
    /// Lower and upper affine forms for every analyzed node (ReLU
    /// pre-activations and the output), indexed by node id; empty otherwise.
    std::vector<AffineForm> lower_forms;
    std::vector<AffineForm> upper_forms;
    std::vector<ReluRelaxation> relu; // indexed by node id

    bool empty_region() const noexcept { return bounds.empty_region; }
    const Box &output() const noexcept { return bounds.output; }
};

/// Backward linear relaxation (CROWN/DeepPoly-style substitution). Unknown
/// unstable ReLUs use the upper chord and the lower line alpha*x with
/// alpha = 1 when |u| >= |l|, else 0. Every concretized interval is
/// intersected with interval propagation and, when given, with `prior`
/// (bounds of an enclosing region, e.g. a branch-and-bound parent).
LinearRelaxation linear_bounds(const NetworkGraph &graph, const Box &input_box, const PhaseAssignment &phases,
                               const NodeBounds *prior = nullptr);

/// Lower affine bounds on spec * output (spec is rows x output-size,
/// row-major), valid on the region described by `relaxation`.
AffineForm objective_lower_form(const NetworkGraph &graph, const LinearRelaxation &relaxation,
                                std::span<const double> spec, std::size_t rows);

/// Linear necessary conditions for the fixed phases: pre-activation upper
/// form >= 0 for active neurons, lower form <= 0 for inactive ones. Cuts
/// already implied by the box are left out.
lp::Constraints phase_constraints(const NetworkGraph &graph, const LinearRelaxation &relaxation,
                                  const PhaseAssignment &phases);

/// Interval of the pre-activation feeding a ReLU neuron.
struct PreActivation {
    double lower;
    double upper;
};
PreActivation pre_activation(const NetworkGraph &graph, const NodeBounds &bounds, std::size_t neuron);

/// Unknown-phase neuron whose pre-activation interval straddles zero with the
/// largest width; ties go to the lowest neuron id.
std::optional<std::size_t> widest_unstable(const NetworkGraph &graph, const NodeBounds &bounds,
                                           const PhaseAssignment &phases);

/// Activation pattern of a concrete point (active iff pre-activation > 0).
PhaseAssignment activation_pattern(const NetworkGraph &graph, std::span<const double> flat_input);

} // namespace semverify
