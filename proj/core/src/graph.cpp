#include "semverify/graph.hpp"

#include "semverify/error.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>
#include <optional>
#include <set>
#include <sstream>

namespace semverify {

namespace {

template <class... Ts> struct overloaded : Ts... {
    using Ts::operator()...;
};

std::size_t expected_arity(const NodeOp &op) {
    return std::visit(overloaded{
                          [](const InputOp &) -> std::size_t { return 0; },
                          [](const ConstantOp &) -> std::size_t { return 0; },
                          [](const AddOp &) -> std::size_t { return 2; },
                          [](const auto &) -> std::size_t { return 1; },
                      },
                      op);
}

bool all_finite(const std::vector<float> &v) {
    return std::all_of(v.begin(), v.end(), [](float x) { return std::isfinite(x); });
}

SparseAffine affine_rows(const AffineOp &op) {
    SparseAffine form;
    form.rows = op.out_features;
    form.cols = op.in_features;
    form.row_start.reserve(form.rows + 1);
    form.row_start.push_back(0);
    for (std::size_t r = 0; r < op.out_features; ++r) {
        for (std::size_t c = 0; c < op.in_features; ++c) {
            form.col_index.push_back(c);
            form.weight.push_back(op.weights[r * op.in_features + c]);
        }
        form.row_start.push_back(form.col_index.size());
        form.bias.push_back(op.bias.empty() ? 0.0 : op.bias[r]);
    }
    return form;
}

SparseAffine conv_rows(const Conv2dOp &op, const Shape &in, const Shape &out) {
    const std::size_t H = in[1], W = in[2], OH = out[1], OW = out[2];
    SparseAffine form;
    form.rows = shape_numel(out);
    form.cols = shape_numel(in);
    form.row_start.push_back(0);
    for (std::size_t co = 0; co < op.out_channels; ++co)
        for (std::size_t oy = 0; oy < OH; ++oy)
            for (std::size_t ox = 0; ox < OW; ++ox) {
                for (std::size_t ci = 0; ci < op.in_channels; ++ci)
                    for (std::size_t ky = 0; ky < op.kernel_h; ++ky)
                        for (std::size_t kx = 0; kx < op.kernel_w; ++kx) {
                            auto iy = static_cast<long>(oy * op.stride + ky) - static_cast<long>(op.padding);
                            auto ix = static_cast<long>(ox * op.stride + kx) - static_cast<long>(op.padding);
                            if (iy < 0 || ix < 0 || iy >= static_cast<long>(H) || ix >= static_cast<long>(W))
                                continue;
                            form.col_index.push_back((ci * H + static_cast<std::size_t>(iy)) * W +
                                                     static_cast<std::size_t>(ix));
                            form.weight.push_back(
                                op.kernels[((co * op.in_channels + ci) * op.kernel_h + ky) * op.kernel_w + kx]);
                        }
                form.row_start.push_back(form.col_index.size());
                form.bias.push_back(op.bias.empty() ? 0.0 : op.bias[co]);
            }
    return form;
}

SparseAffine conv_transpose_rows(const ConvTranspose2dOp &op, const Shape &in, const Shape &out) {
    const std::size_t H = in[1], W = in[2], OH = out[1], OW = out[2];
    std::vector<std::vector<std::pair<std::size_t, double>>> rows(shape_numel(out));
    for (std::size_t ci = 0; ci < op.in_channels; ++ci)
        for (std::size_t iy = 0; iy < H; ++iy)
            for (std::size_t ix = 0; ix < W; ++ix)
                for (std::size_t co = 0; co < op.out_channels; ++co)
                    for (std::size_t ky = 0; ky < op.kernel_h; ++ky)
                        for (std::size_t kx = 0; kx < op.kernel_w; ++kx) {
                            auto oy = static_cast<long>(iy * op.stride + ky) - static_cast<long>(op.padding);
                            auto ox = static_cast<long>(ix * op.stride + kx) - static_cast<long>(op.padding);
                            if (oy < 0 || ox < 0 || oy >= static_cast<long>(OH) || ox >= static_cast<long>(OW))
                                continue;
                            auto row = (co * OH + static_cast<std::size_t>(oy)) * OW + static_cast<std::size_t>(ox);
                            rows[row].emplace_back(
                                (ci * H + iy) * W + ix,
                                op.kernels[((ci * op.out_channels + co) * op.kernel_h + ky) * op.kernel_w + kx]);
                        }
    SparseAffine form;
    form.rows = rows.size();
    form.cols = shape_numel(in);
    form.row_start.push_back(0);
    for (std::size_t r = 0; r < rows.size(); ++r) {
        for (auto [c, w] : rows[r]) {
            form.col_index.push_back(c);
            form.weight.push_back(w);
        }
        form.row_start.push_back(form.col_index.size());
        form.bias.push_back(op.bias.empty() ? 0.0 : op.bias[r / (OH * OW)]);
    }
    return form;
}

} // namespace

const char *node_kind_name(const NodeOp &op) {
    return std::visit(overloaded{
                          [](const InputOp &) { return "input"; },
                          [](const ConstantOp &) { return "constant"; },
                          [](const AffineOp &) { return "affine"; },
                          [](const Conv2dOp &) { return "conv2d"; },
                          [](const ConvTranspose2dOp &) { return "conv_transpose2d"; },
                          [](const ReluOp &) { return "relu"; },
                          [](const AddOp &) { return "add"; },
                          [](const FlattenOp &) { return "flatten"; },
                          [](const ReshapeOp &) { return "reshape"; },
                      },
                      op);
}

NetworkGraph::NetworkGraph(std::vector<Node> nodes, NodeId output) : nodes_(std::move(nodes)), output_(output) {
    analyze();
}

void NetworkGraph::analyze() {
    const std::size_t n = nodes_.size();
    std::vector<std::optional<Shape>> shapes(n);
    auto fail = [&](NodeId id, GraphErrorKind kind, std::string msg) {
        std::ostringstream out;
        out << "node " << id;
        if (id < n)
            out << " (" << node_kind_name(nodes_[id].op) << ")";
        out << ": " << msg;
        errors_.push_back({id, kind, out.str()});
    };

    std::set<std::string> input_names;
    for (NodeId id = 0; id < n; ++id) {
        const Node &node = nodes_[id];
        bool refs_ok = true;
        for (NodeId pred : node.inputs) {
            if (pred >= n) {
                fail(id, GraphErrorKind::BadReference, "references missing node " + std::to_string(pred));
                refs_ok = false;
            } else if (pred >= id) {
                fail(id, GraphErrorKind::OrderViolation,
                     "references node " + std::to_string(pred) + " which is not earlier in topological order");
                refs_ok = false;
            }
        }
        if (node.inputs.size() != expected_arity(node.op)) {
            fail(id, GraphErrorKind::Arity,
                 "expects " + std::to_string(expected_arity(node.op)) + " predecessors, has " +
                     std::to_string(node.inputs.size()));
            refs_ok = false;
        }
        std::vector<const Shape *> in;
        for (NodeId pred : node.inputs)
            if (refs_ok && shapes[pred])
                in.push_back(&*shapes[pred]);
        const bool have_inputs = refs_ok && in.size() == node.inputs.size();

        std::visit(
            overloaded{
                [&](const InputOp &op) {
                    if (op.shape.empty() || shape_numel(op.shape) == 0) {
                        fail(id, GraphErrorKind::BadParameters, "input shape must be non-empty and positive");
                        return;
                    }
                    if (!input_names.insert(op.name).second)
                        fail(id, GraphErrorKind::DuplicateInput, "duplicate input name '" + op.name + "'");
                    shapes[id] = op.shape;
                },
                [&](const ConstantOp &op) { shapes[id] = op.value.shape(); },
                [&](const AffineOp &op) {
                    if (op.out_features == 0 || op.in_features == 0 ||
                        op.weights.size() != op.out_features * op.in_features ||
                        (!op.bias.empty() && op.bias.size() != op.out_features)) {
                        fail(id, GraphErrorKind::BadParameters, "affine parameter sizes inconsistent");
                        return;
                    }
                    if (!all_finite(op.weights) || !all_finite(op.bias)) {
                        fail(id, GraphErrorKind::BadParameters, "non-finite affine parameter");
                        return;
                    }
                    if (have_inputs && (in[0]->size() != 1 || (*in[0])[0] != op.in_features)) {
                        fail(id, GraphErrorKind::ShapeMismatch,
                             "affine " + std::to_string(op.out_features) + "x" + std::to_string(op.in_features) +
                                 " fed shape " + shape_to_string(*in[0]));
                        return;
                    }
                    if (have_inputs)
                        shapes[id] = Shape{op.out_features};
                },
                [&](const Conv2dOp &op) {
                    if (op.out_channels == 0 || op.in_channels == 0 || op.kernel_h == 0 || op.kernel_w == 0 ||
                        op.stride == 0 ||
                        op.kernels.size() != op.out_channels * op.in_channels * op.kernel_h * op.kernel_w ||
                        (!op.bias.empty() && op.bias.size() != op.out_channels)) {
                        fail(id, GraphErrorKind::BadParameters, "conv2d parameter sizes inconsistent");
                        return;
                    }
                    if (!all_finite(op.kernels) || !all_finite(op.bias)) {
                        fail(id, GraphErrorKind::BadParameters, "non-finite conv2d parameter");
                        return;
                    }
                    if (!have_inputs)
                        return;
                    const Shape &s = *in[0];
                    if (s.size() != 3 || s[0] != op.in_channels || s[1] + 2 * op.padding < op.kernel_h ||
                        s[2] + 2 * op.padding < op.kernel_w) {
                        fail(id, GraphErrorKind::ShapeMismatch, "conv2d fed shape " + shape_to_string(s));
                        return;
                    }
                    shapes[id] = Shape{op.out_channels, (s[1] + 2 * op.padding - op.kernel_h) / op.stride + 1,
                                       (s[2] + 2 * op.padding - op.kernel_w) / op.stride + 1};
                },
                [&](const ConvTranspose2dOp &op) {
                    if (op.out_channels == 0 || op.in_channels == 0 || op.kernel_h == 0 || op.kernel_w == 0 ||
                        op.stride == 0 ||
                        op.kernels.size() != op.out_channels * op.in_channels * op.kernel_h * op.kernel_w ||
                        (!op.bias.empty() && op.bias.size() != op.out_channels)) {
                        fail(id, GraphErrorKind::BadParameters, "conv_transpose2d parameter sizes inconsistent");
                        return;
                    }
                    if (!all_finite(op.kernels) || !all_finite(op.bias)) {
                        fail(id, GraphErrorKind::BadParameters, "non-finite conv_transpose2d parameter");
                        return;
                    }
                    if (!have_inputs)
                        return;
                    const Shape &s = *in[0];
                    if (s.size() != 3 || s[0] != op.in_channels ||
                        (s[1] - 1) * op.stride + op.kernel_h <= 2 * op.padding ||
                        (s[2] - 1) * op.stride + op.kernel_w <= 2 * op.padding) {
                        fail(id, GraphErrorKind::ShapeMismatch, "conv_transpose2d fed shape " + shape_to_string(s));
                        return;
                    }
                    shapes[id] = Shape{op.out_channels, (s[1] - 1) * op.stride + op.kernel_h - 2 * op.padding,
                                       (s[2] - 1) * op.stride + op.kernel_w - 2 * op.padding};
                },
                [&](const ReluOp &) {
                    if (have_inputs)
                        shapes[id] = *in[0];
                },
                [&](const AddOp &) {
                    if (!have_inputs)
                        return;
                    if (*in[0] != *in[1]) {
                        fail(id, GraphErrorKind::ShapeMismatch,
                             "add of shapes " + shape_to_string(*in[0]) + " and " + shape_to_string(*in[1]));
                        return;
                    }
                    shapes[id] = *in[0];
                },
                [&](const FlattenOp &) {
                    if (have_inputs)
                        shapes[id] = Shape{shape_numel(*in[0])};
                },
                [&](const ReshapeOp &op) {
                    if (!have_inputs)
                        return;
                    if (op.target.empty() || shape_numel(op.target) != shape_numel(*in[0]) ||
                        std::find(op.target.begin(), op.target.end(), 0u) != op.target.end()) {
                        fail(id, GraphErrorKind::ShapeMismatch,
                             "reshape " + shape_to_string(*in[0]) + " to " + shape_to_string(op.target));
                        return;
                    }
                    shapes[id] = op.target;
                },
            },
            node.op);
    }

    if (n == 0 || output_ >= n) {
        errors_.push_back({output_, GraphErrorKind::BadReference, "output node does not exist"});
        return;
    }

    // Every node must contribute to the output.
    std::vector<char> live(n, 0);
    live[output_] = 1;
    for (NodeId id = n; id-- > 0;) {
        if (!live[id])
            continue;
        for (NodeId pred : nodes_[id].inputs)
            if (pred < id)
                live[pred] = 1;
    }
    bool any_input = false;
    for (NodeId id = 0; id < n; ++id) {
        if (!live[id])
            fail(id, GraphErrorKind::DeadNode, "does not contribute to the output");
        if (std::holds_alternative<InputOp>(nodes_[id].op))
            any_input = true;
    }
    if (!any_input)
        errors_.push_back({output_, GraphErrorKind::NoInputs, "graph has no input nodes"});

    if (!errors_.empty())
        return;

    order_.resize(n);
    std::iota(order_.begin(), order_.end(), NodeId{0});
    for (auto &s : shapes) {
        shapes_.push_back(*s);
        numel_.push_back(shape_numel(shapes_.back()));
    }
    for (NodeId id = 0; id < n; ++id) {
        const Node &node = nodes_[id];
        if (std::holds_alternative<InputOp>(node.op)) {
            inputs_.push_back(id);
            input_offset_[id] = input_dim_;
            input_dim_ += numel_[id];
        } else if (auto *a = std::get_if<AffineOp>(&node.op)) {
            affine_.emplace(id, affine_rows(*a));
        } else if (auto *c = std::get_if<Conv2dOp>(&node.op)) {
            affine_.emplace(id, conv_rows(*c, shapes_[node.inputs[0]], shapes_[id]));
        } else if (auto *t = std::get_if<ConvTranspose2dOp>(&node.op)) {
            affine_.emplace(id, conv_transpose_rows(*t, shapes_[node.inputs[0]], shapes_[id]));
        } else if (std::holds_alternative<ReluOp>(node.op)) {
            relu_offset_[id] = relu_neurons_.size();
            for (std::size_t k = 0; k < numel_[id]; ++k)
                relu_neurons_.push_back({id, k});
        }
    }
}

void NetworkGraph::require_valid() const {
    if (valid())
        return;
    std::ostringstream out;
    for (std::size_t i = 0; i < errors_.size(); ++i)
        out << (i ? "; " : "") << errors_[i].message;
    throw Error(ErrorCode::InvalidGraph, out.str());
}

std::vector<std::string> NetworkGraph::input_names() const {
    std::vector<std::string> names;
    for (NodeId id : inputs_)
        names.push_back(std::get<InputOp>(nodes_[id].op).name);
    return names;
}

NodeId NetworkGraph::input_id(const std::string &name) const {
    for (NodeId id : inputs_)
        if (std::get<InputOp>(nodes_[id].op).name == name)
            return id;
    throw Error(ErrorCode::MissingInput, "graph has no input named '" + name + "'");
}

const SparseAffine &NetworkGraph::affine_form(NodeId id) const {
    auto it = affine_.find(id);
    if (it == affine_.end())
        throw Error(ErrorCode::InvalidArgument, "node " + std::to_string(id) + " is not affine-like");
    return it->second;
}

std::size_t NetworkGraph::layer_count() const noexcept {
    return static_cast<std::size_t>(std::count_if(nodes_.begin(), nodes_.end(), [](const Node &node) {
        return !std::holds_alternative<InputOp>(node.op);
    }));
}

std::size_t NetworkGraph::parameter_count() const noexcept {
    std::size_t total = 0;
    for (const Node &node : nodes_)
        std::visit(overloaded{
                       [&](const ConstantOp &op) { total += op.value.size(); },
                       [&](const AffineOp &op) { total += op.weights.size() + op.bias.size(); },
                       [&](const Conv2dOp &op) { total += op.kernels.size() + op.bias.size(); },
                       [&](const ConvTranspose2dOp &op) { total += op.kernels.size() + op.bias.size(); },
                       [](const auto &) {},
                   },
                   node.op);
    return total;
}

std::vector<GraphError> validate_graph(const NetworkGraph &graph) { return graph.errors(); }

NodeId GraphBuilder::push(Node node) {
    nodes_.push_back(std::move(node));
    return nodes_.size() - 1;
}

NodeId GraphBuilder::input(std::string name, Shape shape) {
    return push({InputOp{std::move(name), std::move(shape)}, {}});
}

NodeId GraphBuilder::constant(Tensor value) { return push({ConstantOp{std::move(value)}, {}}); }

NodeId GraphBuilder::affine(NodeId x, std::size_t out_features, std::vector<float> weights,
                            std::vector<float> bias) {
    AffineOp op;
    op.out_features = out_features;
    op.in_features = out_features ? weights.size() / out_features : 0;
    op.weights = std::move(weights);
    op.bias = std::move(bias);
    return push({std::move(op), {x}});
}

NodeId GraphBuilder::conv2d(NodeId x, Conv2dOp op) { return push({std::move(op), {x}}); }

NodeId GraphBuilder::conv_transpose2d(NodeId x, ConvTranspose2dOp op) { return push({std::move(op), {x}}); }

NodeId GraphBuilder::relu(NodeId x) { return push({ReluOp{}, {x}}); }

NodeId GraphBuilder::add(NodeId a, NodeId b) { return push({AddOp{}, {a, b}}); }

NodeId GraphBuilder::flatten(NodeId x) { return push({FlattenOp{}, {x}}); }

NodeId GraphBuilder::reshape(NodeId x, Shape target) { return push({ReshapeOp{std::move(target)}, {x}}); }

NodeId GraphBuilder::splice(const NetworkGraph &graph, const std::map<std::string, NodeId> &bindings) {
    graph.require_valid();
    std::vector<NodeId> remap(graph.size());
    for (NodeId id = 0; id < graph.size(); ++id) {
        const Node &node = graph.node(id);
        if (auto *in = std::get_if<InputOp>(&node.op)) {
            auto it = bindings.find(in->name);
            if (it == bindings.end())
                throw Error(ErrorCode::MissingInput, "no binding for spliced input '" + in->name + "'");
            remap[id] = it->second;
            continue;
        }
        Node copy = node;
        for (auto &pred : copy.inputs)
            pred = remap[pred];
        remap[id] = push(std::move(copy));
    }
    return remap[graph.output()];
}

NetworkGraph GraphBuilder::build(NodeId output) const { return NetworkGraph(nodes_, output); }

} // namespace semverify
