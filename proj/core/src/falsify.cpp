#include "semverify/falsify.hpp"

#include "semverify/error.hpp"
#include "semverify/eval.hpp"

#include <algorithm>
#include <chrono>
#include <cmath>
#include <random>
#include <tuple>

namespace semverify {

void AttackConfig::validate() const {
    if (steps == 0 || restarts == 0)
        throw Error(ErrorCode::InvalidArgument, "attack steps and restarts must be positive");
    if (!(step_size > 0.0) || !std::isfinite(step_size))
        throw Error(ErrorCode::InvalidArgument, "attack step size must be positive");
    if (!(time_limit_s >= 0.0))
        throw Error(ErrorCode::InvalidArgument, "attack time limit must be nonnegative");
}

const char *to_string(Realizability r) {
    switch (r) {
    case Realizability::Unchecked:
        return "unchecked";
    case Realizability::Realizable:
        return "realizable";
    case Realizability::Unrealizable:
        return "unrealizable";
    }
    return "?";
}

double logit_margin(std::span<const float> logits, std::size_t true_label, std::size_t *winner) {
    double best = -std::numeric_limits<double>::infinity();
    std::size_t arg = true_label;
    for (std::size_t c = 0; c < logits.size(); ++c) {
        if (c == true_label)
            continue;
        const double m = static_cast<double>(logits[c]) - static_cast<double>(logits[true_label]);
        if (m > best) {
            best = m;
            arg = c;
        }
    }
    if (winner)
        *winner = arg;
    return best;
}

double Counterexample::margin() const { return logit_margin(logits, true_label); }

std::vector<double> snap_to_box(std::span<const double> x, const Box &box) {
    std::vector<double> out(x.size());
    for (std::size_t i = 0; i < x.size(); ++i) {
        const double lo = box.lower(i), hi = box.upper(i);
        float f = static_cast<float>(std::clamp(x[i], lo, hi));
        if (f < lo)
            f = std::nextafter(f, std::numeric_limits<float>::infinity());
        if (f > hi)
            f = std::nextafter(f, -std::numeric_limits<float>::infinity());
        if (f < lo || f > hi)
            f = static_cast<float>(lo); // no float inside a degenerate interval
        out[i] = f;
    }
    return out;
}

namespace {

using Clock = std::chrono::steady_clock;

std::vector<float> as_float(std::span<const double> x) { return {x.begin(), x.end()}; }

std::optional<Counterexample> violation(std::span<const double> x, const Tensor &logits, std::size_t true_label) {
    std::size_t winner = 0;
    if (logit_margin(logits.data(), true_label, &winner) < 0.0)
        return std::nullopt;
    Counterexample cex;
    cex.assignment.assign(x.begin(), x.end());
    cex.logits = logits.values();
    cex.true_label = true_label;
    cex.winning_label = winner;
    return cex;
}

std::vector<double> margin_cotangent(std::span<const float> logits, std::size_t true_label) {
    std::size_t winner = 0;
    logit_margin(logits, true_label, &winner);
    std::vector<double> cot(logits.size(), 0.0);
    cot[winner] += 1.0;
    cot[true_label] -= 1.0;
    return cot;
}

std::vector<double> uniform_point(const Box &box, std::mt19937_64 &rng) {
    std::vector<double> x(box.size());
    std::uniform_real_distribution<double> u(0.0, 1.0);
    for (std::size_t i = 0; i < box.size(); ++i)
        x[i] = box.lower(i) + u(rng) * box.width(i);
    return x;
}

std::vector<double> box_center(const Box &box) {
    std::vector<double> x(box.size());
    for (std::size_t i = 0; i < box.size(); ++i)
        x[i] = box.center(i);
    return x;
}

std::mt19937_64 restart_rng(std::uint64_t seed, std::size_t restart) {
    std::seed_seq seq{static_cast<std::uint32_t>(seed), static_cast<std::uint32_t>(seed >> 32),
                      static_cast<std::uint32_t>(restart)};
    return std::mt19937_64(seq);
}

/// Projected sign-gradient ascent of `objective` over `box`; returns the first
/// point `accept` reports as a success.
template <class Eval, class Accept>
std::optional<Counterexample> sign_ascent(const Box &box, const AttackConfig &cfg,
                                          const std::vector<double> &first_start, Eval &&eval_grad,
                                          Accept &&accept) {
    cfg.validate();
    const auto start = Clock::now();
    auto out_of_time = [&] {
        return std::chrono::duration<double>(Clock::now() - start).count() > cfg.time_limit_s;
    };
    for (std::size_t restart = 0; restart < cfg.restarts; ++restart) {
        if (out_of_time())
            break;
        auto rng = restart_rng(cfg.seed, restart);
        std::vector<double> x = snap_to_box(restart == 0 ? first_start : uniform_point(box, rng), box);
        if (auto hit = accept(x))
            return hit;
        for (std::size_t step = 0; step < cfg.steps; ++step) {
            auto grad = eval_grad(x);
            for (std::size_t i = 0; i < x.size(); ++i) {
                const double g = grad[i];
                const double dir = g > 0 ? 1.0 : (g < 0 ? -1.0 : 0.0);
                x[i] += dir * cfg.step_size * box.width(i);
            }
            x = snap_to_box(x, box);
            if (auto hit = accept(x))
                return hit;
            if (step % 16 == 15 && out_of_time())
                break;
        }
    }
    return std::nullopt;
}

} // namespace

std::optional<Counterexample> check_point(const PipelineProperty &property, std::span<const double> x) {
    auto logits = forward_flat(property.pipeline, as_float(x));
    return violation(x, logits, property.true_label);
}

std::optional<Counterexample> pgd_attack(const PipelineProperty &property, const AttackConfig &cfg) {
    const Box &box = property.input_box;
    auto grad = [&](const std::vector<double> &x) {
        auto xf = as_float(x);
        auto logits = forward_flat(property.pipeline, xf);
        return backward_flat(property.pipeline, xf, margin_cotangent(logits.data(), property.true_label));
    };
    auto accept = [&](const std::vector<double> &x) { return check_point(property, x); };
    return sign_ascent(box, cfg, box_center(box), grad, accept);
}

namespace {

void check_generator(const NetworkGraph &generator, const PipelineProperty &property, const Box &trigger_box) {
    generator.require_valid();
    if (generator.input_dim() != trigger_box.size())
        throw Error(ErrorCode::ShapeMismatch, "trigger box has " + std::to_string(trigger_box.size()) +
                                                  " dimensions, generator takes " +
                                                  std::to_string(generator.input_dim()));
    if (generator.numel(generator.output()) != property.latent_dim)
        throw Error(ErrorCode::ShapeMismatch, "generator output does not match the latent dimension");
}

std::vector<float> clip_noise(const NetworkGraph &generator, std::span<const double> r, double amplitude,
                              std::vector<double> *mask) {
    auto g = forward_flat(generator, as_float(r));
    std::vector<float> n(g.size());
    if (mask)
        mask->assign(g.size(), 0.0);
    for (std::size_t j = 0; j < g.size(); ++j) {
        const double v = g[j];
        n[j] = static_cast<float>(std::clamp(v, -amplitude, amplitude));
        if (mask && v > -amplitude && v < amplitude)
            (*mask)[j] = 1.0;
    }
    return n;
}

std::vector<double> join(std::span<const double> s, std::span<const float> n, std::span<const double> eps) {
    std::vector<double> x;
    x.reserve(s.size() + n.size() + eps.size());
    x.insert(x.end(), s.begin(), s.end());
    x.insert(x.end(), n.begin(), n.end());
    x.insert(x.end(), eps.begin(), eps.end());
    return x;
}

} // namespace

std::optional<Counterexample> pgm_sample_attack(const NetworkGraph &generator, const PipelineProperty &property,
                                                const Box &trigger_box, double rho, std::size_t num_samples,
                                                std::uint64_t seed) {
    check_generator(generator, property, trigger_box);
    const double a = std::sqrt(rho);
    const std::size_t d = property.latent_dim;
    std::mt19937_64 rng(seed);
    const Box s_box = property.strength_box();
    const Box eps_box = property.awgn_box();
    for (std::size_t i = 0; i < num_samples; ++i) {
        auto r = snap_to_box(uniform_point(trigger_box, rng), trigger_box);
        auto s = uniform_point(s_box, rng);
        auto eps = uniform_point(eps_box, rng);
        auto n = clip_noise(generator, r, a, nullptr);
        auto realized = snap_to_box(join(s, n, eps), Box::product(std::vector<Box>{
                                                             s_box, Box::uniform(d, -a, a), eps_box}));
        auto logits = forward_flat(property.pipeline, as_float(realized));
        if (logit_margin(logits.data(), property.true_label) < 0.0)
            continue;
        // the same point, kept inside the resolved property box
        auto cex = check_point(property, snap_to_box(realized, property.input_box));
        if (!cex)
            continue;
        cex->realizability = Realizability::Realizable;
        cex->trigger = r;
        cex->realized_assignment = realized;
        cex->realized_logits = logits.values();
        return cex;
    }
    return std::nullopt;
}

Counterexample validate_realizability(const NetworkGraph &generator, const PipelineProperty &property,
                                      Counterexample cex, const Box &trigger_box, double rho,
                                      const AttackConfig &cfg) {
    check_generator(generator, property, trigger_box);
    if (cex.assignment.size() != property.input_box.size())
        throw Error(ErrorCode::ShapeMismatch, "counterexample does not match the property input");
    const double a = std::sqrt(rho);
    const std::size_t d = property.latent_dim;
    const std::size_t dr = trigger_box.size();
    const Box s_box = property.strength_box();
    const Box eps_box = property.awgn_box();
    const Box search = Box::product(std::vector<Box>{trigger_box, s_box, eps_box});

    auto split = [&](const std::vector<double> &v) {
        std::span<const double> all(v);
        return std::tuple{all.subspan(0, dr), all.subspan(dr, 1), all.subspan(dr + 1, d)};
    };
    auto realize = [&](const std::vector<double> &v, std::vector<double> *mask) {
        auto [r, s, eps] = split(v);
        return join(s, clip_noise(generator, r, a, mask), eps);
    };
    auto grad = [&](const std::vector<double> &v) {
        std::vector<double> mask;
        auto x = as_float(realize(v, &mask));
        auto logits = forward_flat(property.pipeline, x);
        auto gx = backward_flat(property.pipeline, x, margin_cotangent(logits.data(), property.true_label));
        std::vector<double> cot_n(d);
        for (std::size_t j = 0; j < d; ++j)
            cot_n[j] = gx[1 + j] * mask[j];
        auto [r, s, eps] = split(v);
        auto gr = backward_flat(generator, as_float(r), cot_n);
        std::vector<double> out(search.size());
        std::copy(gr.begin(), gr.end(), out.begin());
        out[dr] = gx[0];
        for (std::size_t j = 0; j < d; ++j)
            out[dr + 1 + j] = gx[1 + d + j];
        return out;
    };
    auto accept = [&](const std::vector<double> &v) -> std::optional<Counterexample> {
        auto x = realize(v, nullptr);
        auto logits = forward_flat(property.pipeline, as_float(x));
        auto hit = violation(x, logits, property.true_label);
        if (hit)
            hit->trigger.assign(v.begin(), v.begin() + static_cast<long>(dr));
        return hit;
    };

    std::vector<double> first(search.size());
    for (std::size_t i = 0; i < dr; ++i)
        first[i] = dr == d ? std::clamp(cex.assignment[1 + i], trigger_box.lower(i), trigger_box.upper(i))
                           : trigger_box.center(i);
    first[dr] = cex.assignment[0];
    for (std::size_t j = 0; j < d; ++j)
        first[dr + 1 + j] = cex.assignment[1 + d + j];

    auto found = sign_ascent(search, cfg, first, grad, accept);
    if (found) {
        cex.realizability = Realizability::Realizable;
        cex.trigger = std::move(found->trigger);
        cex.realized_assignment = std::move(found->assignment);
        cex.realized_logits = std::move(found->logits);
    } else {
        cex.realizability = Realizability::Unrealizable;
        cex.trigger.clear();
        cex.realized_assignment.clear();
        cex.realized_logits.clear();
    }
    return cex;
}

} // namespace semverify
