#pragma once

#include "semverify/box.hpp"
#include "semverify/compose.hpp"
#include "semverify/graph.hpp"

#include <cstddef>
#include <cstdint>
#include <limits>
#include <optional>
#include <span>
#include <vector>

namespace semverify {

struct AttackConfig {
    std::size_t steps = 100;
    /// Fraction of the box width per dimension.
    double step_size = 0.02;
    std::size_t restarts = 10;
    std::uint64_t seed = 0;
    double time_limit_s = std::numeric_limits<double>::infinity();

    void validate() const;
};

enum class Realizability { Unchecked, Realizable, Unrealizable };
const char *to_string(Realizability r);

struct Counterexample {
    /// Flattened (s, n, eps); every entry is a float value inside the input box.
    std::vector<double> assignment;
    std::vector<float> logits;
    std::size_t true_label = 0;
    std::size_t winning_label = 0;
    Realizability realizability = Realizability::Unchecked;
    /// Set when realizable: a trigger in the trigger box and the (s, clip(G(r)), eps)
    /// assignment it induces, together with its logits.
    std::vector<double> trigger;
    std::vector<double> realized_assignment;
    std::vector<float> realized_logits;

    double margin() const;
};

/// max_{c != t} logits[c] - logits[t]; a violation is margin >= 0.
double logit_margin(std::span<const float> logits, std::size_t true_label, std::size_t *winner = nullptr);

/// Exact float forward of the pipeline at `x`; returns a counterexample when
/// argmax is violated.
std::optional<Counterexample> check_point(const PipelineProperty &property, std::span<const double> x);

/// Nearest float vector inside the box (componentwise), used before every
/// exact evaluation so witnesses never leave the box through rounding.
std::vector<double> snap_to_box(std::span<const double> x, const Box &box);

/// Sign-gradient ascent on the logit margin with projection after each step.
/// Restart 0 starts at the box center, later restarts at seeded uniform points.
std::optional<Counterexample> pgd_attack(const PipelineProperty &property, const AttackConfig &cfg);

/// Samples (r, s, eps), sets n = clip(G(r)) (clamped into the noise box) and
/// reports the first violation. A hit is realizable by construction.
std::optional<Counterexample> pgm_sample_attack(const NetworkGraph &generator, const PipelineProperty &property,
                                                const Box &trigger_box, double rho, std::size_t num_samples,
                                                std::uint64_t seed);

/// Searches r in the trigger box (jointly with s and eps) for a misclassification
/// of pipeline(s, clip(G(r)), eps). Restart 0 starts from the witness itself.
Counterexample validate_realizability(const NetworkGraph &generator, const PipelineProperty &property,
                                      Counterexample cex, const Box &trigger_box, double rho,
                                      const AttackConfig &cfg);

} // namespace semverify
