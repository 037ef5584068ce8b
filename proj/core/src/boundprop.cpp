#include "semverify/boundprop.hpp"

#include "semverify/error.hpp"
#include "semverify/eval.hpp"

#include <algorithm>
#include <cmath>
#include <limits>

namespace semverify {

namespace {

constexpr double kInf = std::numeric_limits<double>::infinity();
constexpr double kRelativeSlack = 1e-12;

double down(double v, double magnitude) {
    return std::nextafter(v - kRelativeSlack * magnitude, -kInf);
}

double up(double v, double magnitude) {
    return std::nextafter(v + kRelativeSlack * magnitude, kInf);
}

void check_box(const NetworkGraph &graph, const Box &box, const PhaseAssignment &phases) {
    graph.require_valid();
    if (box.size() != graph.input_dim())
        throw Error(ErrorCode::ShapeMismatch, "input box has " + std::to_string(box.size()) +
                                                  " dimensions, graph expects " + std::to_string(graph.input_dim()));
    if (phases.size() != graph.relu_neurons().size())
        throw Error(ErrorCode::InvalidArgument, "phase assignment does not match the graph's ReLU count");
}

bool is_analyzed(const NetworkGraph &graph, NodeId id, const std::vector<char> &feeds_relu) {
    return id == graph.output() || feeds_relu[id];
}

std::vector<char> relu_feeders(const NetworkGraph &graph) {
    std::vector<char> feeds(graph.size(), 0);
    for (NodeId id = 0; id < graph.size(); ++id)
        if (std::holds_alternative<ReluOp>(graph.node(id).op))
            feeds[graph.node(id).inputs[0]] = 1;
    return feeds;
}

// Interval image of one node given its predecessors' enclosures. ReLU nodes
// are handled by the caller.
void interval_step(const NetworkGraph &graph, NodeId id, const Box &box, NodeBounds &b) {
    const Node &node = graph.node(id);
    auto &lo = b.lower[id];
    auto &hi = b.upper[id];
    const std::size_t n = graph.numel(id);
    lo.assign(n, 0.0);
    hi.assign(n, 0.0);
    if (std::holds_alternative<InputOp>(node.op)) {
        auto offset = graph.input_offset(id);
        for (std::size_t i = 0; i < n; ++i) {
            lo[i] = box.lower(offset + i);
            hi[i] = box.upper(offset + i);
        }
    } else if (auto *c = std::get_if<ConstantOp>(&node.op)) {
        for (std::size_t i = 0; i < n; ++i)
            lo[i] = hi[i] = c->value[i];
    } else if (std::holds_alternative<AddOp>(node.op)) {
        const auto p = node.inputs[0], q = node.inputs[1];
        for (std::size_t i = 0; i < n; ++i) {
            double mag = std::max({std::fabs(b.lower[p][i]), std::fabs(b.upper[p][i]), std::fabs(b.lower[q][i]),
                                   std::fabs(b.upper[q][i])});
            lo[i] = down(b.lower[p][i] + b.lower[q][i], mag);
            hi[i] = up(b.upper[p][i] + b.upper[q][i], mag);
        }
    } else if (std::holds_alternative<FlattenOp>(node.op) || std::holds_alternative<ReshapeOp>(node.op)) {
        lo = b.lower[node.inputs[0]];
        hi = b.upper[node.inputs[0]];
    } else {
        const SparseAffine &form = graph.affine_form(id);
        const auto &pl = b.lower[node.inputs[0]];
        const auto &pu = b.upper[node.inputs[0]];
        for (std::size_t r = 0; r < form.rows; ++r) {
            double l = form.bias[r], u = form.bias[r], mag = std::fabs(form.bias[r]);
            for (std::size_t k = form.row_start[r]; k < form.row_start[r + 1]; ++k) {
                const double w = form.weight[k];
                const std::size_t c = form.col_index[k];
                if (w >= 0.0) {
                    l += w * pl[c];
                    u += w * pu[c];
                } else {
                    l += w * pu[c];
                    u += w * pl[c];
                }
                mag += std::fabs(w) * std::max(std::fabs(pl[c]), std::fabs(pu[c]));
            }
            const double slack = static_cast<double>(form.row_start[r + 1] - form.row_start[r] + 2) *
                                 std::numeric_limits<double>::epsilon() * mag;
            lo[r] = down(l - slack, mag);
            hi[r] = up(u + slack, mag);
        }
    }
}

// ReLU image under the node's phases. Returns false on an empty region.
bool relu_step(const NetworkGraph &graph, NodeId id, const PhaseAssignment &phases, NodeBounds &b,
               ReluRelaxation *relax) {
    const NodeId p = graph.node(id).inputs[0];
    const std::size_t n = graph.numel(id);
    const std::size_t base = graph.relu_offset(id);
    auto &lo = b.lower[id];
    auto &hi = b.upper[id];
    lo.assign(n, 0.0);
    hi.assign(n, 0.0);
    if (relax) {
        relax->lower_slope.assign(n, 0.0);
        relax->upper_slope.assign(n, 0.0);
        relax->upper_intercept.assign(n, 0.0);
    }
    for (std::size_t k = 0; k < n; ++k) {
        const double l = b.lower[p][k], u = b.upper[p][k];
        const Phase phase = phases[base + k];
        bool active = false, inactive = false;
        if (phase == Phase::Active) {
            if (u < 0.0)
                return false;
            active = true;
        } else if (phase == Phase::Inactive) {
            if (l > 0.0)
                return false;
            inactive = true;
        } else if (l >= 0.0) {
            active = true;
        } else if (u <= 0.0) {
            inactive = true;
        }
        if (active) {
            lo[k] = std::max(l, 0.0);
            hi[k] = std::max(u, 0.0);
            if (relax) {
                relax->lower_slope[k] = 1.0;
                relax->upper_slope[k] = 1.0;
            }
        } else if (inactive) {
            // region output is exactly zero
        } else {
            lo[k] = 0.0;
            hi[k] = u;
            if (relax) {
                const double slope = u / (u - l);
                relax->upper_slope[k] = slope;
                const double err = 4.0 * std::numeric_limits<double>::epsilon() * slope * (u - l);
                relax->upper_intercept[k] = up(-slope * l + err, std::fabs(slope * l));
                relax->lower_slope[k] = (u >= -l) ? 1.0 : 0.0;
            }
        }
    }
    return true;
}

// Back-substitutes `spec` (rows x numel(target)) through the graph. In lower
// mode the result bounds spec * value(target) from below on the region, in
// upper mode from above.
AffineForm backsubstitute(const NetworkGraph &graph, NodeId target, std::span<const double> spec, std::size_t rows,
                          const std::vector<ReluRelaxation> &relax, bool upper_mode) {
    const std::size_t D = graph.input_dim();
    AffineForm form;
    form.rows = rows;
    form.cols = D;
    form.coeff.assign(rows * D, 0.0);
    form.constant.assign(rows, 0.0);

    std::vector<std::vector<double>> lam(graph.size());
    lam[target].assign(spec.begin(), spec.end());

    auto lam_of = [&](NodeId id) -> std::vector<double> & {
        auto &l = lam[id];
        if (l.empty())
            l.assign(rows * graph.numel(id), 0.0);
        return l;
    };

    for (NodeId v = target + 1; v-- > 0;) {
        if (lam[v].empty())
            continue;
        const Node &node = graph.node(v);
        const std::size_t nv = graph.numel(v);
        const auto &L = lam[v];
        if (std::holds_alternative<InputOp>(node.op)) {
            const auto offset = graph.input_offset(v);
            for (std::size_t r = 0; r < rows; ++r)
                for (std::size_t k = 0; k < nv; ++k)
                    form.coeff[r * D + offset + k] += L[r * nv + k];
        } else if (auto *c = std::get_if<ConstantOp>(&node.op)) {
            for (std::size_t r = 0; r < rows; ++r)
                for (std::size_t k = 0; k < nv; ++k)
                    form.constant[r] += L[r * nv + k] * c->value[k];
        } else if (std::holds_alternative<AddOp>(node.op)) {
            for (std::size_t which = 0; which < 2; ++which) {
                auto &P = lam_of(node.inputs[which]);
                for (std::size_t i = 0; i < L.size(); ++i)
                    P[i] += L[i];
            }
        } else if (std::holds_alternative<FlattenOp>(node.op) || std::holds_alternative<ReshapeOp>(node.op)) {
            auto &P = lam_of(node.inputs[0]);
            for (std::size_t i = 0; i < L.size(); ++i)
                P[i] += L[i];
        } else if (std::holds_alternative<ReluOp>(node.op)) {
            const auto &rx = relax[v];
            auto &P = lam_of(node.inputs[0]);
            for (std::size_t r = 0; r < rows; ++r)
                for (std::size_t k = 0; k < nv; ++k) {
                    const double l = L[r * nv + k];
                    if (l == 0.0)
                        continue;
                    const bool use_upper = (l >= 0.0) == upper_mode;
                    if (use_upper) {
                        P[r * nv + k] += l * rx.upper_slope[k];
                        form.constant[r] += l * rx.upper_intercept[k];
                    } else {
                        P[r * nv + k] += l * rx.lower_slope[k];
                    }
                }
        } else {
            const SparseAffine &aff = graph.affine_form(v);
            const NodeId p = node.inputs[0];
            const std::size_t np = graph.numel(p);
            auto &P = lam_of(p);
            for (std::size_t r = 0; r < rows; ++r) {
                double *prow = P.data() + r * np;
                for (std::size_t k = 0; k < nv; ++k) {
                    const double l = L[r * nv + k];
                    if (l == 0.0)
                        continue;
                    form.constant[r] += l * aff.bias[k];
                    for (std::size_t e = aff.row_start[k]; e < aff.row_start[k + 1]; ++e)
                        prow[aff.col_index[e]] += l * aff.weight[e];
                }
            }
        }
        lam[v].clear();
        lam[v].shrink_to_fit();
    }
    return form;
}

double form_magnitude(const AffineForm &form, std::size_t r, const Box &box) {
    double mag = std::fabs(form.constant[r]);
    auto row = form.row(r);
    for (std::size_t i = 0; i < row.size(); ++i)
        mag += std::fabs(row[i]) * std::max(std::fabs(box.lower(i)), std::fabs(box.upper(i)));
    return mag;
}

std::vector<double> identity(std::size_t n) {
    std::vector<double> eye(n * n, 0.0);
    for (std::size_t i = 0; i < n; ++i)
        eye[i * n + i] = 1.0;
    return eye;
}

void finalize_output(const NetworkGraph &graph, NodeBounds &b) {
    if (b.empty_region) {
        std::vector<double> zero(graph.numel(graph.output()), 0.0);
        b.output = Box(zero, zero);
        return;
    }
    b.output = Box(b.lower[graph.output()], b.upper[graph.output()]);
}

} // namespace

std::size_t PhaseAssignment::fixed_count() const noexcept {
    return static_cast<std::size_t>(
        std::count_if(phases_.begin(), phases_.end(), [](Phase p) { return p != Phase::Unknown; }));
}

double AffineForm::min_over(std::size_t r, const Box &box) const {
    double v = constant[r];
    auto c = row(r);
    for (std::size_t i = 0; i < cols; ++i)
        v += c[i] >= 0.0 ? c[i] * box.lower(i) : c[i] * box.upper(i);
    return v;
}

double AffineForm::max_over(std::size_t r, const Box &box) const {
    double v = constant[r];
    auto c = row(r);
    for (std::size_t i = 0; i < cols; ++i)
        v += c[i] >= 0.0 ? c[i] * box.upper(i) : c[i] * box.lower(i);
    return v;
}

double AffineForm::evaluate(std::size_t r, std::span<const double> x) const {
    double v = constant[r];
    auto c = row(r);
    for (std::size_t i = 0; i < cols; ++i)
        v += c[i] * x[i];
    return v;
}

NodeBounds interval_bounds(const NetworkGraph &graph, const Box &input_box, const PhaseAssignment &phases) {
    check_box(graph, input_box, phases);
    NodeBounds b;
    b.lower.resize(graph.size());
    b.upper.resize(graph.size());
    for (NodeId id : graph.topological_order()) {
        if (std::holds_alternative<ReluOp>(graph.node(id).op)) {
            if (!relu_step(graph, id, phases, b, nullptr)) {
                b.empty_region = true;
                b.empty_at = id;
                break;
            }
        } else {
            interval_step(graph, id, input_box, b);
        }
    }
    finalize_output(graph, b);
    return b;
}

LinearRelaxation linear_bounds(const NetworkGraph &graph, const Box &input_box, const PhaseAssignment &phases,
                               const NodeBounds *prior) {
    check_box(graph, input_box, phases);
    const auto feeds = relu_feeders(graph);
    LinearRelaxation lr;
    NodeBounds &b = lr.bounds;
    b.lower.resize(graph.size());
    b.upper.resize(graph.size());
    lr.lower_forms.resize(graph.size());
    lr.upper_forms.resize(graph.size());
    lr.relu.resize(graph.size());

    for (NodeId id : graph.topological_order()) {
        const Node &node = graph.node(id);
        if (std::holds_alternative<ReluOp>(node.op)) {
            if (!relu_step(graph, id, phases, b, &lr.relu[id])) {
                b.empty_region = true;
                b.empty_at = id;
                break;
            }
        } else {
            interval_step(graph, id, input_box, b);
        }

        if (is_analyzed(graph, id, feeds) && !std::holds_alternative<InputOp>(node.op) &&
            !std::holds_alternative<ConstantOp>(node.op)) {
            const std::size_t n = graph.numel(id);
            const auto eye = identity(n);
            lr.lower_forms[id] = backsubstitute(graph, id, eye, n, lr.relu, false);
            lr.upper_forms[id] = backsubstitute(graph, id, eye, n, lr.relu, true);
            for (std::size_t k = 0; k < n; ++k) {
                const double lmag = form_magnitude(lr.lower_forms[id], k, input_box);
                const double umag = form_magnitude(lr.upper_forms[id], k, input_box);
                const double l = down(lr.lower_forms[id].min_over(k, input_box), lmag);
                const double u = up(lr.upper_forms[id].max_over(k, input_box), umag);
                b.lower[id][k] = std::max(b.lower[id][k], l);
                b.upper[id][k] = std::min(b.upper[id][k], u);
            }
        } else if (is_analyzed(graph, id, feeds)) {
            // Input/constant pre-activations: the identity form is exact.
            const std::size_t n = graph.numel(id);
            AffineForm f;
            f.rows = n;
            f.cols = graph.input_dim();
            f.coeff.assign(n * f.cols, 0.0);
            f.constant.assign(n, 0.0);
            if (auto *c = std::get_if<ConstantOp>(&node.op)) {
                for (std::size_t k = 0; k < n; ++k)
                    f.constant[k] = c->value[k];
            } else {
                const auto offset = graph.input_offset(id);
                for (std::size_t k = 0; k < n; ++k)
                    f.coeff[k * f.cols + offset + k] = 1.0;
            }
            lr.lower_forms[id] = f;
            lr.upper_forms[id] = std::move(f);
        }

        if (prior && !prior->empty_region && prior->lower.size() == graph.size() && !prior->lower[id].empty()) {
            for (std::size_t k = 0; k < graph.numel(id); ++k) {
                b.lower[id][k] = std::max(b.lower[id][k], prior->lower[id][k]);
                b.upper[id][k] = std::min(b.upper[id][k], prior->upper[id][k]);
            }
        }
        bool crossed = false;
        for (std::size_t k = 0; k < graph.numel(id); ++k)
            if (b.lower[id][k] > b.upper[id][k])
                crossed = true;
        if (crossed) {
            b.empty_region = true;
            b.empty_at = id;
            break;
        }
    }
    finalize_output(graph, b);
    return lr;
}

AffineForm objective_lower_form(const NetworkGraph &graph, const LinearRelaxation &relaxation,
                                std::span<const double> spec, std::size_t rows) {
    if (spec.size() != rows * graph.numel(graph.output()))
        throw Error(ErrorCode::ShapeMismatch, "objective specification has wrong size");
    if (relaxation.empty_region())
        throw Error(ErrorCode::InvalidArgument, "objective requested on an empty region");
    return backsubstitute(graph, graph.output(), spec, rows, relaxation.relu, false);
}

lp::Constraints phase_constraints(const NetworkGraph &graph, const LinearRelaxation &relaxation,
                                  const PhaseAssignment &phases) {
    lp::Constraints cons(graph.input_dim());
    std::vector<double> row(graph.input_dim());
    const auto &neurons = graph.relu_neurons();
    for (std::size_t g = 0; g < neurons.size(); ++g) {
        const Phase phase = phases[g];
        if (phase == Phase::Unknown)
            continue;
        const NodeId p = graph.node(neurons[g].node).inputs[0];
        const std::size_t k = neurons[g].index;
        if (phase == Phase::Active) {
            if (relaxation.bounds.lower[p][k] >= 0.0)
                continue;
            const AffineForm &f = relaxation.upper_forms[p];
            auto c = f.row(k);
            for (std::size_t i = 0; i < row.size(); ++i)
                row[i] = -c[i];
            cons.add_row(row, f.constant[k]);
        } else {
            if (relaxation.bounds.upper[p][k] <= 0.0)
                continue;
            const AffineForm &f = relaxation.lower_forms[p];
            auto c = f.row(k);
            cons.add_row(c, -f.constant[k]);
        }
    }
    return cons;
}

PreActivation pre_activation(const NetworkGraph &graph, const NodeBounds &bounds, std::size_t neuron) {
    const NeuronRef ref = graph.relu_neurons().at(neuron);
    const NodeId p = graph.node(ref.node).inputs[0];
    return {bounds.lower[p][ref.index], bounds.upper[p][ref.index]};
}

std::optional<std::size_t> widest_unstable(const NetworkGraph &graph, const NodeBounds &bounds,
                                           const PhaseAssignment &phases) {
    std::optional<std::size_t> best;
    double best_width = 0.0;
    for (std::size_t g = 0; g < phases.size(); ++g) {
        if (phases[g] != Phase::Unknown)
            continue;
        auto pre = pre_activation(graph, bounds, g);
        if (!(pre.lower < 0.0 && pre.upper > 0.0))
            continue;
        const double w = pre.upper - pre.lower;
        if (!best || w > best_width) {
            best = g;
            best_width = w;
        }
    }
    return best;
}

PhaseAssignment activation_pattern(const NetworkGraph &graph, std::span<const double> flat_input) {
    auto values = forward_all_f64(graph, flat_input);
    PhaseAssignment phases(graph);
    const auto &neurons = graph.relu_neurons();
    for (std::size_t g = 0; g < neurons.size(); ++g) {
        const NodeId p = graph.node(neurons[g].node).inputs[0];
        phases.set(g, values[p][neurons[g].index] > 0.0 ? Phase::Active : Phase::Inactive);
    }
    return phases;
}

} // namespace semverify
