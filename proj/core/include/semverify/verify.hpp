#pragma once

#include "semverify/boundprop.hpp"
#include "semverify/compose.hpp"
#include "semverify/falsify.hpp"
#include "semverify/noisebounds.hpp"

#include <cstddef>
#include <functional>
#include <limits>
#include <optional>
#include <string>
#include <vector>

namespace semverify {

enum class VerdictStatus { Sat, SatUnrealized, Unsat, Timeout };
const char *to_string(VerdictStatus s);
/// Inverse of to_string; throws Format on an unknown name.
VerdictStatus verdict_status_from_string(const std::string &s);

struct BranchNode {
    PhaseAssignment phases;
    NodeBounds bounds;
    Box region_output_bounds;
    /// Lower bound on min over the region of (true logit - max other logit).
    double margin_lower = -std::numeric_limits<double>::infinity();
    /// Classes already proven below the true class on this region.
    std::vector<bool> verified;
    std::size_t depth = 0;
    std::size_t creation_index = 0;
};

struct VerifyBudget {
    double timeout_s = std::numeric_limits<double>::infinity();
    std::size_t max_nodes = 1000000;
    std::size_t workers = 1;
};

struct VerifyStats {
    std::size_t nodes = 0;
    std::size_t max_depth = 0;
    std::size_t bound_calls = 0;
    std::size_t open_nodes = 0;
    /// Fully split leaves whose margin could be neither proven nor refuted
    /// beyond rounding tolerance; they force a timeout verdict.
    std::size_t undecided_leaves = 0;
    double wall_time_s = 0.0;
};

struct Verdict {
    VerdictStatus status = VerdictStatus::Timeout;
    std::optional<Counterexample> witness;
    VerifyStats stats;
};

/// Called on a violating point before it is reported; returns the same
/// counterexample with its realizability decided.
using WitnessValidator = std::function<Counterexample(Counterexample)>;

/// Best-first branch-and-bound on ReLU phases: prune regions whose certified
/// margin is positive, evaluate the relaxation's worst point exactly, split
/// the widest unstable ReLU otherwise.
Verdict verify(const PipelineProperty &property, const VerifyBudget &budget,
               const WitnessValidator &validator = {});

enum class VScanPhase { NoiseBounds, Attack, Verification };
const char *to_string(VScanPhase p);

struct VScanConfig {
    double timeout_s = 60.0;
    double bounds_fraction = 0.05;
    double attack_fraction = 0.10;
    AttackConfig attack;
    std::size_t pgm_samples = 1000;
    NoiseBoundsOptions noise;
    std::size_t workers = 1;
    std::size_t max_nodes = 1000000;
    /// Stop after the attack; an undecided run reports timeout with the root open.
    bool attack_only = false;
};

struct Provenance {
    VScanPhase decided_by = VScanPhase::Verification;
    bool noise_bounds_converged = true;
    /// Phase 3 found a counterexample that no trigger realizes.
    bool attack_found_unrealized = false;
    std::string attack_source; // "pgd", "pgm" or empty
    double bounds_time_s = 0.0;
    double attack_time_s = 0.0;
    double verify_time_s = 0.0;
};

struct VScanModels {
    const NetworkGraph &generator;
    const NetworkGraph &encoder;
    const NetworkGraph &decoder;
    const NetworkGraph &classifier;
    double latent_power = 0.0;
};

struct VScanResult {
    Verdict verdict;
    NoiseBoundsResult noise;
    PipelineProperty property;
    Provenance provenance;
};

/// Noise bounds, property construction, attack with realizability check,
/// then formal verification with the remaining budget. With `precomputed`,
/// phase 1 is skipped and those bounds are used; they must match the
/// latent dimension and the property's rho.
VScanResult run_vscan(const VScanModels &models, const PropertySpec &spec, const VScanConfig &config,
                      const NoiseBoundsResult *precomputed = nullptr);

} // namespace semverify
