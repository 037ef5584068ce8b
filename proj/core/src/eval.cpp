#include "semverify/eval.hpp"

#include "semverify/error.hpp"

#include <cmath>
#include <set>

namespace semverify {

namespace {

template <class T>
std::vector<std::vector<T>> evaluate(const NetworkGraph &graph, std::span<const T> flat, bool check_finite) {
    graph.require_valid();
    if (flat.size() != graph.input_dim())
        throw Error(ErrorCode::ShapeMismatch, "flat input has " + std::to_string(flat.size()) +
                                                  " elements, graph expects " + std::to_string(graph.input_dim()));
    std::vector<std::vector<T>> values(graph.size());
    for (NodeId id : graph.topological_order()) {
        const Node &node = graph.node(id);
        auto &out = values[id];
        out.resize(graph.numel(id));
        if (std::holds_alternative<InputOp>(node.op)) {
            auto offset = graph.input_offset(id);
            for (std::size_t i = 0; i < out.size(); ++i)
                out[i] = flat[offset + i];
        } else if (auto *c = std::get_if<ConstantOp>(&node.op)) {
            for (std::size_t i = 0; i < out.size(); ++i)
                out[i] = static_cast<T>(c->value[i]);
        } else if (std::holds_alternative<ReluOp>(node.op)) {
            const auto &x = values[node.inputs[0]];
            for (std::size_t i = 0; i < out.size(); ++i)
                out[i] = x[i] > T(0) ? x[i] : T(0);
        } else if (std::holds_alternative<AddOp>(node.op)) {
            const auto &a = values[node.inputs[0]];
            const auto &b = values[node.inputs[1]];
            for (std::size_t i = 0; i < out.size(); ++i)
                out[i] = static_cast<T>(static_cast<double>(a[i]) + static_cast<double>(b[i]));
        } else if (std::holds_alternative<FlattenOp>(node.op) || std::holds_alternative<ReshapeOp>(node.op)) {
            out = values[node.inputs[0]];
        } else {
            const SparseAffine &form = graph.affine_form(id);
            const auto &x = values[node.inputs[0]];
            for (std::size_t r = 0; r < form.rows; ++r) {
                double acc = 0.0;
                for (std::size_t k = form.row_start[r]; k < form.row_start[r + 1]; ++k)
                    acc += form.weight[k] * static_cast<double>(x[form.col_index[k]]);
                acc += form.bias[r];
                out[r] = static_cast<T>(acc);
            }
        }
        if (check_finite)
            for (std::size_t i = 0; i < out.size(); ++i)
                if (!std::isfinite(out[i]))
                    throw Error(ErrorCode::NonFinite, "node " + std::to_string(id) + " (" +
                                                          node_kind_name(node.op) + ") produced a non-finite value");
    }
    return values;
}

} // namespace

std::vector<float> flatten_inputs(const NetworkGraph &graph, const InputMap &inputs) {
    graph.require_valid();
    std::vector<float> flat;
    flat.reserve(graph.input_dim());
    std::set<std::string> expected;
    for (NodeId id : graph.input_ids()) {
        const auto &op = std::get<InputOp>(graph.node(id).op);
        expected.insert(op.name);
        auto it = inputs.find(op.name);
        if (it == inputs.end())
            throw Error(ErrorCode::MissingInput, "no value for input '" + op.name + "'");
        if (it->second.shape() != op.shape)
            throw Error(ErrorCode::ShapeMismatch, "input '" + op.name + "' expects shape " +
                                                      shape_to_string(op.shape) + ", got " +
                                                      shape_to_string(it->second.shape()));
        flat.insert(flat.end(), it->second.values().begin(), it->second.values().end());
    }
    for (const auto &[name, value] : inputs)
        if (!expected.count(name))
            throw Error(ErrorCode::UnexpectedInput, "graph has no input named '" + name + "'");
    return flat;
}

InputMap split_inputs(const NetworkGraph &graph, std::span<const float> flat_input) {
    graph.require_valid();
    if (flat_input.size() != graph.input_dim())
        throw Error(ErrorCode::ShapeMismatch, "flat input size mismatch");
    InputMap inputs;
    for (NodeId id : graph.input_ids()) {
        const auto &op = std::get<InputOp>(graph.node(id).op);
        auto offset = graph.input_offset(id);
        auto n = graph.numel(id);
        inputs.emplace(op.name, Tensor(op.shape, std::vector<float>(flat_input.begin() + offset,
                                                                    flat_input.begin() + offset + n)));
    }
    return inputs;
}

std::vector<std::vector<float>> forward_all(const NetworkGraph &graph, std::span<const float> flat_input) {
    return evaluate<float>(graph, flat_input, true);
}

Tensor forward_flat(const NetworkGraph &graph, std::span<const float> flat_input) {
    auto values = forward_all(graph, flat_input);
    return Tensor(graph.output_shape(), std::move(values[graph.output()]));
}

Tensor forward(const NetworkGraph &graph, const InputMap &inputs) {
    auto flat = flatten_inputs(graph, inputs);
    return forward_flat(graph, flat);
}

std::vector<std::vector<double>> forward_all_f64(const NetworkGraph &graph, std::span<const double> flat_input) {
    return evaluate<double>(graph, flat_input, false);
}

std::vector<double> forward_f64(const NetworkGraph &graph, std::span<const double> flat_input) {
    auto values = forward_all_f64(graph, flat_input);
    return std::move(values[graph.output()]);
}

std::vector<double> backward_flat(const NetworkGraph &graph, std::span<const float> flat_input,
                                  std::span<const double> output_cotangent) {
    auto values = forward_all(graph, flat_input);
    if (output_cotangent.size() != graph.numel(graph.output()))
        throw Error(ErrorCode::ShapeMismatch, "output cotangent size mismatch");
    std::vector<std::vector<double>> cot(graph.size());
    cot[graph.output()].assign(output_cotangent.begin(), output_cotangent.end());
    std::vector<double> grad(graph.input_dim(), 0.0);

    const auto &order = graph.topological_order();
    for (auto it = order.rbegin(); it != order.rend(); ++it) {
        NodeId id = *it;
        if (cot[id].empty())
            continue;
        const Node &node = graph.node(id);
        const auto &g = cot[id];
        auto pred_cot = [&](std::size_t which) -> std::vector<double> & {
            auto &c = cot[node.inputs[which]];
            if (c.empty())
                c.assign(graph.numel(node.inputs[which]), 0.0);
            return c;
        };
        if (std::holds_alternative<InputOp>(node.op)) {
            auto offset = graph.input_offset(id);
            for (std::size_t i = 0; i < g.size(); ++i)
                grad[offset + i] += g[i];
        } else if (std::holds_alternative<ConstantOp>(node.op)) {
        } else if (std::holds_alternative<ReluOp>(node.op)) {
            const auto &pre = values[node.inputs[0]];
            auto &c = pred_cot(0);
            for (std::size_t i = 0; i < g.size(); ++i)
                if (pre[i] > 0.0f)
                    c[i] += g[i];
        } else if (std::holds_alternative<AddOp>(node.op)) {
            for (std::size_t which = 0; which < 2; ++which) {
                auto &c = pred_cot(which);
                for (std::size_t i = 0; i < g.size(); ++i)
                    c[i] += g[i];
            }
        } else if (std::holds_alternative<FlattenOp>(node.op) || std::holds_alternative<ReshapeOp>(node.op)) {
            auto &c = pred_cot(0);
            for (std::size_t i = 0; i < g.size(); ++i)
                c[i] += g[i];
        } else {
            const SparseAffine &form = graph.affine_form(id);
            auto &c = pred_cot(0);
            for (std::size_t r = 0; r < form.rows; ++r) {
                if (g[r] == 0.0)
                    continue;
                for (std::size_t k = form.row_start[r]; k < form.row_start[r + 1]; ++k)
                    c[form.col_index[k]] += form.weight[k] * g[r];
            }
        }
        if (id != graph.output())
            cot[id].clear();
    }
    return grad;
}

std::map<std::string, Tensor> backward(const NetworkGraph &graph, const InputMap &inputs,
                                       const Tensor &output_cotangent) {
    auto flat = flatten_inputs(graph, inputs);
    if (output_cotangent.shape() != graph.output_shape())
        throw Error(ErrorCode::ShapeMismatch, "output cotangent shape " +
                                                  shape_to_string(output_cotangent.shape()) + " != output shape " +
                                                  shape_to_string(graph.output_shape()));
    std::vector<double> cot(output_cotangent.values().begin(), output_cotangent.values().end());
    auto grad = backward_flat(graph, flat, cot);
    std::map<std::string, Tensor> result;
    for (NodeId id : graph.input_ids()) {
        const auto &op = std::get<InputOp>(graph.node(id).op);
        auto offset = graph.input_offset(id);
        std::vector<float> g(graph.numel(id));
        for (std::size_t i = 0; i < g.size(); ++i)
            g[i] = static_cast<float>(grad[offset + i]);
        result.emplace(op.name, Tensor(op.shape, std::move(g)));
    }
    return result;
}

} // namespace semverify
