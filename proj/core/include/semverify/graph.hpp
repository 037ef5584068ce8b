#pragma once

#include "semverify/tensor.hpp"

#include <cstddef>
#include <map>
#include <string>
#include <variant>
#include <vector>

namespace semverify {

using NodeId = std::size_t;

struct InputOp {
    std::string name;
    Shape shape;
};

struct ConstantOp {
    Tensor value;
};

/// y = W x + b on a rank-1 input. W is row-major [out_features x in_features].
struct AffineOp {
    std::size_t out_features = 0;
    std::size_t in_features = 0;
    std::vector<float> weights;
    std::vector<float> bias;
};

/// Input [C_in, H, W]; kernels [C_out, C_in, kh, kw]; zero padding.
struct Conv2dOp {
    std::size_t out_channels = 0;
    std::size_t in_channels = 0;
    std::size_t kernel_h = 0;
    std::size_t kernel_w = 0;
    std::size_t stride = 1;
    std::size_t padding = 0;
    std::vector<float> kernels;
    std::vector<float> bias;
};

/// Input [C_in, H, W]; kernels [C_in, C_out, kh, kw];
/// output side (H - 1) * stride - 2 * padding + kh.
struct ConvTranspose2dOp {
    std::size_t in_channels = 0;
    std::size_t out_channels = 0;
    std::size_t kernel_h = 0;
    std::size_t kernel_w = 0;
    std::size_t stride = 1;
    std::size_t padding = 0;
    std::vector<float> kernels;
    std::vector<float> bias;
};

struct ReluOp {};
struct AddOp {};
struct FlattenOp {};

struct ReshapeOp {
    Shape target;
};

using NodeOp = std::variant<InputOp, ConstantOp, AffineOp, Conv2dOp, ConvTranspose2dOp, ReluOp, AddOp,
                            FlattenOp, ReshapeOp>;

struct Node {
    NodeOp op;
    std::vector<NodeId> inputs;
};

const char *node_kind_name(const NodeOp &op);

enum class GraphErrorKind {
    BadReference,
    OrderViolation,
    Arity,
    ShapeMismatch,
    BadParameters,
    DuplicateInput,
    DeadNode,
    NoInputs,
};

struct GraphError {
    NodeId node;
    GraphErrorKind kind;
    std::string message;
};

/// Sparse row form of an affine-like node: out[r] = sum_k w_k * in[col_k] + bias[r].
/// Row entries are kept in the summation order used by forward evaluation.
struct SparseAffine {
    std::size_t rows = 0;
    std::size_t cols = 0;
    std::vector<std::size_t> row_start;
    std::vector<std::size_t> col_index;
    std::vector<double> weight;
    std::vector<double> bias;
};

/// A ReLU neuron: element `index` of ReLU node `node`.
struct NeuronRef {
    NodeId node;
    std::size_t index;

    friend auto operator<=>(const NeuronRef &, const NeuronRef &) = default;
};

/// Immutable dataflow DAG. Nodes are stored in topological order: every
/// predecessor id is smaller than the id of the node that references it.
/// Output shapes and sparse affine forms are computed once at construction
/// for valid graphs; an invalid graph keeps its error list and refuses
/// evaluation.
class NetworkGraph {
public:
    NetworkGraph() = default;
    NetworkGraph(std::vector<Node> nodes, NodeId output);

    const std::vector<Node> &nodes() const noexcept { return nodes_; }
    const Node &node(NodeId id) const { return nodes_.at(id); }
    NodeId output() const noexcept { return output_; }
    std::size_t size() const noexcept { return nodes_.size(); }

    bool valid() const noexcept { return errors_.empty(); }
    const std::vector<GraphError> &errors() const noexcept { return errors_; }
    /// Throws Error(InvalidGraph) listing every structural error.
    void require_valid() const;

    const std::vector<NodeId> &topological_order() const noexcept { return order_; }
    const Shape &shape(NodeId id) const { return shapes_.at(id); }
    std::size_t numel(NodeId id) const { return numel_.at(id); }
    const Shape &output_shape() const { return shapes_.at(output_); }

    /// Input nodes in node order; the flattened external input vector is the
    /// concatenation of their values in this order.
    const std::vector<NodeId> &input_ids() const noexcept { return inputs_; }
    std::vector<std::string> input_names() const;
    std::size_t input_dim() const noexcept { return input_dim_; }
    std::size_t input_offset(NodeId input) const { return input_offset_.at(input); }
    NodeId input_id(const std::string &name) const;

    /// Defined for Affine, Conv2d and ConvTranspose2d nodes.
    const SparseAffine &affine_form(NodeId id) const;

    /// All ReLU neurons, ordered by (node id, index). Positions in this list
    /// are the global neuron ids used by PhaseAssignment.
    const std::vector<NeuronRef> &relu_neurons() const noexcept { return relu_neurons_; }
    /// Global id of the first neuron of a ReLU node.
    std::size_t relu_offset(NodeId relu) const { return relu_offset_.at(relu); }

    std::size_t layer_count() const noexcept;
    std::size_t parameter_count() const noexcept;

private:
    void analyze();

    std::vector<Node> nodes_;
    NodeId output_ = 0;
    std::vector<GraphError> errors_;
    std::vector<NodeId> order_;
    std::vector<Shape> shapes_;
    std::vector<std::size_t> numel_;
    std::vector<NodeId> inputs_;
    std::size_t input_dim_ = 0;
    std::map<NodeId, std::size_t> input_offset_;
    std::map<NodeId, SparseAffine> affine_;
    std::vector<NeuronRef> relu_neurons_;
    std::map<NodeId, std::size_t> relu_offset_;
};

std::vector<GraphError> validate_graph(const NetworkGraph &graph);

/// Incremental construction helper that appends nodes in topological order.
class GraphBuilder {
public:
    NodeId input(std::string name, Shape shape);
    NodeId constant(Tensor value);
    NodeId affine(NodeId x, std::size_t out_features, std::vector<float> weights, std::vector<float> bias);
    NodeId conv2d(NodeId x, Conv2dOp op);
    NodeId conv_transpose2d(NodeId x, ConvTranspose2dOp op);
    NodeId relu(NodeId x);
    NodeId add(NodeId a, NodeId b);
    NodeId flatten(NodeId x);
    NodeId reshape(NodeId x, Shape target);
    NodeId push(Node node);

    /// Copies every non-input node of `graph`, wiring each of its Input nodes
    /// to the builder node bound to that input's name. Returns the id of the
    /// copied output node.
    NodeId splice(const NetworkGraph &graph, const std::map<std::string, NodeId> &bindings);

    std::size_t size() const noexcept { return nodes_.size(); }

    NetworkGraph build(NodeId output) const;

private:
    std::vector<Node> nodes_;
};

} // namespace semverify
