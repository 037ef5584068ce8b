#include "oracles.hpp"

#include <semverify/eval.hpp>

#include <algorithm>
#include <array>
#include <cmath>
#include <limits>
#include <stdexcept>
#include <variant>

namespace semverify::testing {

std::vector<float> reference_forward(const NetworkGraph &graph, const std::vector<float> &flat_input) {
    std::vector<std::vector<float>> v(graph.size());
    std::size_t offset = 0;
    for (NodeId id = 0; id < graph.size(); ++id) {
        const Node &n = graph.node(id);
        if (auto *in = std::get_if<InputOp>(&n.op)) {
            const std::size_t len = shape_numel(in->shape);
            v[id].assign(flat_input.begin() + offset, flat_input.begin() + offset + len);
            offset += len;
        } else if (auto *c = std::get_if<ConstantOp>(&n.op)) {
            v[id] = c->value.values();
        } else if (auto *a = std::get_if<AffineOp>(&n.op)) {
            const auto &x = v[n.inputs[0]];
            v[id].resize(a->out_features);
            for (std::size_t r = 0; r < a->out_features; ++r) {
                double acc = 0.0;
                for (std::size_t k = 0; k < a->in_features; ++k)
                    acc += double(a->weights[r * a->in_features + k]) * double(x[k]);
                acc += a->bias.empty() ? 0.0 : double(a->bias[r]);
                v[id][r] = float(acc);
            }
        } else if (auto *cv = std::get_if<Conv2dOp>(&n.op)) {
            const auto &x = v[n.inputs[0]];
            const auto &s = graph.shape(n.inputs[0]);
            const long H = long(s[1]), W = long(s[2]);
            const long OH = (H + 2 * long(cv->padding) - long(cv->kernel_h)) / long(cv->stride) + 1;
            const long OW = (W + 2 * long(cv->padding) - long(cv->kernel_w)) / long(cv->stride) + 1;
            v[id].assign(cv->out_channels * OH * OW, 0.0f);
            for (std::size_t co = 0; co < cv->out_channels; ++co)
                for (long oy = 0; oy < OH; ++oy)
                    for (long ox = 0; ox < OW; ++ox) {
                        double acc = 0.0;
                        for (std::size_t ci = 0; ci < cv->in_channels; ++ci)
                            for (std::size_t ky = 0; ky < cv->kernel_h; ++ky)
                                for (std::size_t kx = 0; kx < cv->kernel_w; ++kx) {
                                    long iy = oy * long(cv->stride) + long(ky) - long(cv->padding);
                                    long ix = ox * long(cv->stride) + long(kx) - long(cv->padding);
                                    if (iy < 0 || ix < 0 || iy >= H || ix >= W)
                                        continue;
                                    acc += double(cv->kernels[((co * cv->in_channels + ci) * cv->kernel_h + ky) *
                                                                  cv->kernel_w +
                                                              kx]) *
                                           double(x[(long(ci) * H + iy) * W + ix]);
                                }
                        acc += cv->bias.empty() ? 0.0 : double(cv->bias[co]);
                        v[id][(long(co) * OH + oy) * OW + ox] = float(acc);
                    }
        } else if (auto *t = std::get_if<ConvTranspose2dOp>(&n.op)) {
            const auto &x = v[n.inputs[0]];
            const auto &s = graph.shape(n.inputs[0]);
            const long H = long(s[1]), W = long(s[2]);
            const long OH = (H - 1) * long(t->stride) - 2 * long(t->padding) + long(t->kernel_h);
            const long OW = (W - 1) * long(t->stride) - 2 * long(t->padding) + long(t->kernel_w);
            std::vector<double> acc(t->out_channels * OH * OW, 0.0);
            for (std::size_t ci = 0; ci < t->in_channels; ++ci)
                for (long iy = 0; iy < H; ++iy)
                    for (long ix = 0; ix < W; ++ix)
                        for (std::size_t co = 0; co < t->out_channels; ++co)
                            for (std::size_t ky = 0; ky < t->kernel_h; ++ky)
                                for (std::size_t kx = 0; kx < t->kernel_w; ++kx) {
                                    long oy = iy * long(t->stride) + long(ky) - long(t->padding);
                                    long ox = ix * long(t->stride) + long(kx) - long(t->padding);
                                    if (oy < 0 || ox < 0 || oy >= OH || ox >= OW)
                                        continue;
                                    acc[(long(co) * OH + oy) * OW + ox] +=
                                        double(t->kernels[((ci * t->out_channels + co) * t->kernel_h + ky) *
                                                              t->kernel_w +
                                                          kx]) *
                                        double(x[(long(ci) * H + iy) * W + ix]);
                                }
            v[id].resize(acc.size());
            for (std::size_t i = 0; i < acc.size(); ++i)
                v[id][i] = float(acc[i] + (t->bias.empty() ? 0.0 : double(t->bias[i / (OH * OW)])));
        } else if (std::holds_alternative<ReluOp>(n.op)) {
            v[id] = v[n.inputs[0]];
            for (auto &e : v[id])
                e = e > 0.0f ? e : 0.0f;
        } else if (std::holds_alternative<AddOp>(n.op)) {
            const auto &a = v[n.inputs[0]];
            const auto &b = v[n.inputs[1]];
            v[id].resize(a.size());
            for (std::size_t i = 0; i < a.size(); ++i)
                v[id][i] = float(double(a[i]) + double(b[i]));
        } else {
            v[id] = v[n.inputs[0]];
        }
    }
    return v[graph.output()];
}

double vertex_extremum_2d(const NetworkGraph &graph, const Box &box, std::size_t j, double sign) {
    if (box.size() != 2)
        throw std::invalid_argument("vertex oracle needs a 2-D box");
    // lines a*x + b*y = c
    std::vector<std::array<double, 3>> lines = {{1, 0, box.lower(0)},
                                                {1, 0, box.upper(0)},
                                                {0, 1, box.lower(1)},
                                                {0, 1, box.upper(1)}};
    for (NodeId id = 0; id < graph.size(); ++id)
        if (auto *a = std::get_if<AffineOp>(&graph.node(id).op)) {
            if (a->in_features != 2)
                throw std::invalid_argument("first affine must read the 2-D input");
            for (std::size_t r = 0; r < a->out_features; ++r)
                lines.push_back({a->weights[2 * r], a->weights[2 * r + 1], a->bias.empty() ? 0.0 : -a->bias[r]});
            break;
        }
    double best = -std::numeric_limits<double>::infinity();
    for (std::size_t p = 0; p < lines.size(); ++p)
        for (std::size_t q = p + 1; q < lines.size(); ++q) {
            const auto &l1 = lines[p];
            const auto &l2 = lines[q];
            const double det = l1[0] * l2[1] - l1[1] * l2[0];
            if (std::abs(det) < 1e-14)
                continue;
            double x = (l1[2] * l2[1] - l1[1] * l2[2]) / det;
            double y = (l1[0] * l2[2] - l1[2] * l2[0]) / det;
            if (x < box.lower(0) - 1e-12 || x > box.upper(0) + 1e-12 || y < box.lower(1) - 1e-12 ||
                y > box.upper(1) + 1e-12)
                continue;
            x = std::clamp(x, box.lower(0), box.upper(0));
            y = std::clamp(y, box.lower(1), box.upper(1));
            std::vector<double> pt = {x, y};
            best = std::max(best, sign * forward_f64(graph, pt)[j]);
        }
    return best;
}

std::vector<double> direct_blur(const std::vector<float> &image, std::size_t channels, std::size_t h,
                                std::size_t w, const std::vector<double> &kernel, std::size_t k) {
    std::vector<double> out(image.size(), 0.0);
    const long r = long(k / 2);
    for (std::size_t c = 0; c < channels; ++c)
        for (long y = 0; y < long(h); ++y)
            for (long x = 0; x < long(w); ++x) {
                double acc = 0.0;
                for (long dy = -r; dy <= r; ++dy)
                    for (long dx = -r; dx <= r; ++dx) {
                        long yy = y + dy, xx = x + dx;
                        if (yy < 0 || xx < 0 || yy >= long(h) || xx >= long(w))
                            continue;
                        acc += kernel[(dy + r) * long(k) + (dx + r)] * image[(c * h + yy) * w + xx];
                    }
                out[(c * h + y) * w + x] = acc;
            }
    return out;
}

std::optional<std::vector<double>> grid_violation(const PipelineProperty &property, std::size_t steps) {
    const Box &box = property.input_box;
    std::vector<float> x(box.size());
    for (std::size_t i = 0; i < box.size(); ++i)
        x[i] = static_cast<float>(box.lower(i));
    for (std::size_t i = 0; i <= steps; ++i)
        for (std::size_t j = 0; j <= steps; ++j) {
            const double t = static_cast<double>(i) / static_cast<double>(steps);
            const double u = static_cast<double>(j) / static_cast<double>(steps);
            x[0] = static_cast<float>(box.lower(0) + t * box.width(0));
            x[1] = static_cast<float>(box.lower(1) + u * box.width(1));
            x[0] = std::clamp(x[0], static_cast<float>(box.lower(0)), static_cast<float>(box.upper(0)));
            x[1] = std::clamp(x[1], static_cast<float>(box.lower(1)), static_cast<float>(box.upper(1)));
            if (!box.contains(std::span<const float>(x)))
                continue;
            auto logits = forward_flat(property.pipeline, x);
            bool violated = false;
            for (std::size_t c = 0; c < logits.size(); ++c)
                if (c != property.true_label && logits[c] >= logits[property.true_label])
                    violated = true;
            if (violated)
                return std::vector<double>(x.begin(), x.end());
        }
    return std::nullopt;
}

} // namespace semverify::testing
