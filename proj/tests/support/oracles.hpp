#pragma once

#include <semverify/box.hpp>
#include <semverify/compose.hpp>
#include <semverify/graph.hpp>

#include <optional>

#include <vector>

namespace semverify::testing {

/// Straight-line evaluator working directly on the op parameters (no sparse
/// forms). Accumulates each output element in double in the same term order
/// as the engine so results compare bit for bit.
std::vector<float> reference_forward(const NetworkGraph &graph, const std::vector<float> &flat_input);

/// Exact max of sign * output[j] over a 2-D box for a net whose only ReLU
/// layer follows its first affine node. Every linear piece is bounded by the
/// box edges and the hidden hyperplanes, so the max sits on a pairwise
/// intersection of those lines.
double vertex_extremum_2d(const NetworkGraph &graph, const Box &box, std::size_t j, double sign);

/// Direct 2-D "same" convolution of each channel of a [C,H,W] image with a
/// k x k kernel, zero padding.
std::vector<double> direct_blur(const std::vector<float> &image, std::size_t channels, std::size_t h,
                                std::size_t w, const std::vector<double> &kernel, std::size_t k);

/// Dense (steps+1)^2 grid over the strength and the single noise coordinate of
/// a |Z| = 1 property, AWGN held at the lower end of its box. Returns the
/// first grid point whose float forward pass violates the argmax.
std::optional<std::vector<double>> grid_violation(const PipelineProperty &property, std::size_t steps);

} // namespace semverify::testing
