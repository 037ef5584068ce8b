#pragma once

#include "semverify/graph.hpp"
#include "semverify/tensor.hpp"

#include <map>
#include <span>
#include <string>
#include <vector>

namespace semverify {

using InputMap = std::map<std::string, Tensor>;

/// Exact float32 inference in topological order. Affine-like nodes accumulate
/// in double and round once per output element. Throws on missing, extra or
/// mis-shaped inputs and on any non-finite intermediate (naming the node).
Tensor forward(const NetworkGraph &graph, const InputMap &inputs);

/// Same evaluation on an already-flattened external input vector.
Tensor forward_flat(const NetworkGraph &graph, std::span<const float> flat_input);

/// float32 values of every node, indexed by node id.
std::vector<std::vector<float>> forward_all(const NetworkGraph &graph, std::span<const float> flat_input);

/// float64 evaluation of the real-valued network (no per-node float rounding);
/// used for incumbent certificates and as a precision reference.
std::vector<double> forward_f64(const NetworkGraph &graph, std::span<const double> flat_input);
std::vector<std::vector<double>> forward_all_f64(const NetworkGraph &graph, std::span<const double> flat_input);

/// Gradient of <cotangent, forward(inputs)> with respect to every input.
/// The ReLU subgradient at exactly zero is 0.
std::map<std::string, Tensor> backward(const NetworkGraph &graph, const InputMap &inputs,
                                       const Tensor &output_cotangent);

/// Flat variant: gradient with respect to the flattened external input.
std::vector<double> backward_flat(const NetworkGraph &graph, std::span<const float> flat_input,
                                  std::span<const double> output_cotangent);

std::vector<float> flatten_inputs(const NetworkGraph &graph, const InputMap &inputs);
InputMap split_inputs(const NetworkGraph &graph, std::span<const float> flat_input);

} // namespace semverify
