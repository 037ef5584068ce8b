#pragma once

#include "semverify/box.hpp"
#include "semverify/graph.hpp"
#include "semverify/noisebounds.hpp"
#include "semverify/tensor.hpp"

#include <cstddef>
#include <optional>
#include <vector>

namespace semverify {

/// Normalized k x k kernel applied per channel with zero "same" padding, and
/// the range of the strength variable s.
struct BlurSpec {
    std::size_t k = 1;
    std::vector<double> kernel{1.0};
    double s_lower = 0.0;
    double s_upper = 0.0;

    static BlurSpec box(std::size_t k, double s_lower, double s_upper);
    /// Throws InvalidArgument unless k is odd, entries are nonnegative and
    /// sum to 1 within 1e-9, and 0 <= s_lower <= s_upper <= 1.
    void validate() const;
};

/// K ⊛ x for an image of rank 1 (one row), 2 ([H,W]) or 3 ([C,H,W]).
std::vector<double> blur_image(const Tensor &image, const BlurSpec &blur);

/// Graph with input "s" of shape {1} and output x'(s) = x + s (K⊛x − x),
/// shaped like the image.
NetworkGraph build_blur_front(const Tensor &x_clean, const BlurSpec &blur);

inline constexpr const char *kStrengthInput = "s";
inline constexpr const char *kNoiseInput = "n";
inline constexpr const char *kAwgnInput = "eps";

/// classifier(decoder(encoder(front(s)) + n + eps)) as one graph with inputs
/// s, n, eps in that order. Each piece must have exactly one input.
NetworkGraph compose_pipeline(const NetworkGraph &encoder, const NetworkGraph &decoder,
                              const NetworkGraph &classifier, const NetworkGraph &front);

struct PipelineProperty {
    NetworkGraph pipeline;
    /// Over the flattened (s, n, eps) input.
    Box input_box;
    std::size_t true_label = 0;
    Tensor clean_logits;
    std::size_t latent_dim = 0;
    double awgn_sigma = 0.0;

    Box strength_box() const { return input_box.slice(0, 1); }
    Box noise_box() const { return input_box.slice(1, latent_dim); }
    Box awgn_box() const { return input_box.slice(1 + latent_dim, latent_dim); }
    std::size_t num_classes() const { return clean_logits.size(); }
};

/// [s_L, s_U] x noise_box x [-3 sigma, 3 sigma]^d. Refuses (Misclassified)
/// when the clean logits do not put true_label strictly on top.
PipelineProperty build_property(const NetworkGraph &pipeline, const Box &noise_box, const BlurSpec &blur,
                                double awgn_sigma, std::size_t true_label);
PipelineProperty build_property(const NetworkGraph &pipeline, const NoiseBoundsResult &noise, const BlurSpec &blur,
                                double awgn_sigma, std::size_t true_label);

/// Everything a property file states, before noise bounds are resolved.
struct PropertySpec {
    Tensor clean_input;
    std::size_t true_label = 0;
    BlurSpec blur;
    double trigger_lower = -1.0;
    double trigger_upper = 1.0;
    std::optional<double> pnr_db;
    std::optional<double> rho;
    double awgn_sigma = 0.0;
    double timeout_seconds = 60.0;

    /// Throws InvalidArgument on any violated field constraint.
    void validate() const;
    Box trigger_box(std::size_t latent_dim) const { return Box::uniform(latent_dim, trigger_lower, trigger_upper); }
    /// Uses rho when given, else converts pnr_db with the encoder's latent power.
    PowerSpec power(double latent_power) const;
};

} // namespace semverify
