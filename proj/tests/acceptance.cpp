#include "oracles.hpp"
#include "random_nets.hpp"

#include <semverify/boundprop.hpp>
#include <semverify/compose.hpp>
#include <semverify/eval.hpp>
#include <semverify/falsify.hpp>
#include <semverify/fixtures.hpp>
#include <semverify/noisebounds.hpp>
#include <semverify/verify.hpp>

#include <algorithm>
#include <chrono>
#include <cmath>
#include <cstdio>
#include <functional>
#include <map>
#include <sstream>
#include <string>

using namespace semverify;
using namespace semverify::testing;

namespace {

using Clock = std::chrono::steady_clock;

double since(Clock::time_point t) { return std::chrono::duration<double>(Clock::now() - t).count(); }

bool within(const Box &inner, const Box &outer) {
    if (inner.size() != outer.size())
        return false;
    for (std::size_t i = 0; i < inner.size(); ++i)
        if (inner.lower(i) < outer.lower(i) || inner.upper(i) > outer.upper(i))
            return false;
    return true;
}

struct Outcome {
    bool pass = false;
    std::string detail;
};

/// Re-checks every sat witness any criterion produces.
struct WitnessAudit {
    std::size_t checked = 0;
    std::vector<std::string> failures;

    void check(const std::string &where, const PipelineProperty &p, const Counterexample &cex,
               const NetworkGraph *generator = nullptr, const Box *trigger_box = nullptr, double amplitude = 0.0) {
        ++checked;
        auto fail = [&](const std::string &why) { failures.push_back(where + ": " + why); };
        if (!p.input_box.contains(cex.assignment))
            return fail("assignment outside the input box");
        auto logits = forward_flat(p.pipeline, to_float(cex.assignment));
        if (logit_margin(logits.data(), p.true_label) < 0.0)
            return fail("assignment does not violate argmax");
        if (logits.values() != cex.logits)
            return fail("reported logits differ from a fresh forward pass");
        if (cex.realizability != Realizability::Realizable || !generator)
            return;
        if (!trigger_box->contains(cex.trigger))
            return fail("trigger outside the trigger box");
        auto g = forward_flat(*generator, to_float(cex.trigger));
        for (std::size_t j = 0; j < p.latent_dim; ++j) {
            const float n = static_cast<float>(std::clamp<double>(g[j], -amplitude, amplitude));
            if (static_cast<float>(cex.realized_assignment[1 + j]) != n)
                return fail("realized noise is not the clipped generator output");
        }
        auto realized = forward_flat(p.pipeline, to_float(cex.realized_assignment));
        if (logit_margin(realized.data(), p.true_label) < 0.0)
            return fail("realized assignment does not violate argmax");
    }
};

WitnessAudit audit;

void audit_run(const std::string &where, const VScanModels &models, const PropertySpec &spec, const VScanResult &run) {
    if (!run.verdict.witness)
        return;
    const Box trigger = spec.trigger_box(models.generator.input_dim());
    audit.check(where, run.property, *run.verdict.witness, &models.generator, &trigger,
                spec.power(models.latent_power).amplitude());
}

Outcome noise_bound_exactness() {
    const auto start = Clock::now();
    std::mt19937_64 rng(101);
    double worst = 0.0;
    for (int trial = 0; trial < 25; ++trial) {
        auto g = random_mlp({2, 4, 2}, rng, 2.0);
        const Box box({-1, -1}, {1, 1});
        NoiseBoundsOptions opt;
        opt.tol = 1e-6;
        auto res = compute_noise_bounds(g, box, PowerSpec::from_rho(100.0), opt);
        for (std::size_t j = 0; j < 2; ++j) {
            worst = std::max(worst, std::abs(res.raw.upper(j) - vertex_extremum_2d(g, box, j, 1.0)));
            worst = std::max(worst, std::abs(res.raw.lower(j) + vertex_extremum_2d(g, box, j, -1.0)));
        }
    }
    const double t = since(start);
    std::ostringstream os;
    os << "25 generators 2-4-2, max |bound - enumeration| = " << worst << " (tol 1e-6), " << t << " s (limit 10)";
    return {worst <= 1e-6 && t < 10.0, os.str()};
}

Outcome noise_bound_soundness() {
    const auto start = Clock::now();
    std::mt19937_64 rng(102);
    const double rho = 0.3, a = std::sqrt(rho);
    std::size_t escapes = 0, samples = 0, clipped_away = 0, converged = 0;
    double worst_gap = 0.0;
    for (int trial = 0; trial < 10; ++trial) {
        auto g = random_mlp({16, 32, 32, 16}, rng);
        const Box box = trial % 2 ? Box::uniform(16, -1.0, 1.0) : Box::uniform(16, -0.1, 0.1);
        NoiseBoundsOptions opt;
        opt.budget.time_limit_s = 4.0;
        auto res = compute_noise_bounds(g, box, PowerSpec::from_rho(rho), opt);
        converged += !res.stats.budget_exhausted;
        for (double gap : res.exact_gap)
            worst_gap = std::max(worst_gap, gap);
        for (int s = 0; s < 100000; ++s) {
            auto y = forward_f64(g, sample_box(box, rng));
            ++samples;
            for (std::size_t j = 0; j < 16; ++j) {
                const double clipped = std::clamp(y[j], -a, a);
                clipped_away += clipped != y[j];
                if (clipped < res.bounds.lower(j) - 1e-6 || clipped > res.bounds.upper(j) + 1e-6)
                    ++escapes;
            }
        }
    }
    const double t = since(start);
    std::ostringstream os;
    os << "10 generators 16-32-32-16, " << samples << " samples, " << escapes << " escapes at 1e-6, " << converged
       << "/10 converged, max exact_gap " << worst_gap << ", " << clipped_away << " coordinates clipped, " << t
       << " s (limit 60)";
    return {escapes == 0 && samples == 1000000 && t < 60.0, os.str()};
}

Outcome verifier_grid_agreement() {
    const auto start = Clock::now();
    std::mt19937_64 rng(103);
    std::size_t instances = 0, sat = 0, unsat = 0, grid_sat = 0, disagreements = 0, draws = 0;
    std::size_t max_relus = 0;
    while (instances < 20 && draws < 200) {
        ++draws;
        auto p = random_toy_property(rng);
        if (!p)
            continue;
        ++instances;
        max_relus = std::max(max_relus, p->pipeline.relu_neurons().size());
        VerifyBudget budget;
        budget.timeout_s = 20.0;
        auto v = verify(*p, budget);
        auto grid = grid_violation(*p, 500);
        if (v.witness)
            audit.check("grid #" + std::to_string(instances), *p, *v.witness);
        const bool ok = v.status == VerdictStatus::Sat ? true
                        : v.status == VerdictStatus::Unsat ? !grid.has_value()
                                                            : false;
        disagreements += !ok;
        grid_sat += grid.has_value();
        sat += v.status == VerdictStatus::Sat;
        unsat += v.status == VerdictStatus::Unsat;
    }
    const double t = since(start);
    std::ostringstream os;
    os << instances << " toy pipelines (<= " << max_relus << " ReLUs, 2 free variables), 501x501 grid, " << sat
       << " sat / " << unsat << " unsat, grid violated on " << grid_sat << ", " << disagreements << " disagreements, " << t << " s (limit 120)";
    return {instances == 20 && max_relus <= 8 && disagreements == 0 && t < 120.0, os.str()};
}

Outcome gradient_check() {
    std::mt19937_64 rng(104);
    const double h = 1e-3;
    double worst = 0.0;
    std::size_t coords = 0, skipped = 0, graphs = 0;
    for (int trial = 0; trial < 20; ++trial) {
        auto g = trial % 2 ? random_mlp({4, 8, 8, 3}, rng) : random_conv_net(rng);
        std::vector<double> x;
        for (int attempt = 0; attempt < 1000 && x.empty(); ++attempt) {
            x = to_double(random_floats(g.input_dim(), rng));
            auto all = forward_all_f64(g, x);
            for (const auto &n : g.relu_neurons())
                if (std::abs(all[g.node(n.node).inputs[0]][n.index]) < 1e-2) {
                    x.clear();
                    break;
                }
        }
        if (x.empty())
            continue;
        ++graphs;
        auto cot = to_double(random_floats(g.numel(g.output()), rng));
        auto grad = backward_flat(g, to_float(x), cot);
        auto f = [&](const std::vector<double> &p) {
            auto y = forward_f64(g, p);
            double s = 0;
            for (std::size_t k = 0; k < y.size(); ++k)
                s += cot[k] * y[k];
            return s;
        };
        for (std::size_t i = 0; i < x.size(); ++i) {
            auto xp = x, xm = x;
            xp[i] += h;
            xm[i] -= h;
            if (!(activation_pattern(g, xp) == activation_pattern(g, xm))) {
                ++skipped;
                continue;
            }
            ++coords;
            const double fd = (f(xp) - f(xm)) / (2 * h);
            worst = std::max(worst, std::abs(grad[i] - fd) / std::max({std::abs(grad[i]), std::abs(fd), 1e-8}));
        }
    }
    std::ostringstream os;
    os << graphs << " graphs, " << coords << " coordinates, max relative error " << worst << " (limit 1e-4), "
       << skipped << " skipped for a phase change inside the stencil";
    return {graphs == 20 && worst < 1e-4, os.str()};
}

Outcome rho_monotonicity() {
    auto f = build_fixture("rho-trend");
    const auto &bench = *f.benchmark;
    const double small = *std::min_element(bench.rho.begin(), bench.rho.end());
    const double large = *std::max_element(bench.rho.begin(), bench.rho.end());
    const auto models = f.models.view();

    std::vector<std::vector<VerdictStatus>> verdicts(3);
    std::vector<std::vector<Box>> boxes(3);
    for (int rerun = 0; rerun < 3; ++rerun) {
        for (const auto &p : f.properties) {
            VScanConfig cfg;
            cfg.timeout_s = p.spec.timeout_seconds;
            auto run = run_vscan(models, p.spec, cfg);
            if (rerun == 0)
                audit_run("rho-trend " + p.id, models, p.spec, run);
            verdicts[rerun].push_back(run.verdict.status);
            boxes[rerun].push_back(run.noise.bounds);
        }
    }
    const bool deterministic =
        verdicts[0] == verdicts[1] && verdicts[0] == verdicts[2] && boxes[0] == boxes[1] && boxes[0] == boxes[2];

    std::size_t unsat_small = 0, unsat_large = 0, timeouts = 0;
    std::map<std::string, std::vector<std::pair<double, Box>>> by_cell;
    for (std::size_t i = 0; i < f.properties.size(); ++i) {
        const auto &p = f.properties[i];
        const double rho = *p.spec.rho;
        unsat_small += rho == small && verdicts[0][i] == VerdictStatus::Unsat;
        unsat_large += rho == large && verdicts[0][i] == VerdictStatus::Unsat;
        timeouts += verdicts[0][i] == VerdictStatus::Timeout;
        by_cell[p.id.substr(0, p.id.rfind('-'))].emplace_back(rho, boxes[0][i]);
    }
    std::size_t nested_pairs = 0, broken = 0;
    for (auto &[cell, list] : by_cell) {
        std::sort(list.begin(), list.end(), [](auto &a, auto &b) { return a.first < b.first; });
        for (std::size_t k = 1; k < list.size(); ++k) {
            ++nested_pairs;
            broken += !within(list[k - 1].second, list[k].second);
        }
    }
    std::ostringstream os;
    os << f.properties.size() << " properties, unsat at rho=" << small << ": " << unsat_small << ", at rho=" << large
       << ": " << unsat_large << ", " << timeouts << " timeouts, " << nested_pairs - broken << "/" << nested_pairs
       << " bound boxes nested, 3 reruns " << (deterministic ? "identical" : "differ");
    return {f.properties.size() >= 20 && unsat_small >= unsat_large && broken == 0 && deterministic, os.str()};
}

Outcome blur_endpoints() {
    std::mt19937_64 rng(105);
    std::size_t images = 0, bitwise = 0;
    double worst = 0.0;
    for (const Shape &shape : {Shape{3, 3}, Shape{4, 4}, Shape{1, 6, 5}, Shape{3, 4, 4}, Shape{2, 7, 7}}) {
        for (std::size_t k : {1u, 3u}) {
            auto v = random_floats(shape_numel(shape), rng);
            Tensor x(shape, v);
            const auto blur = BlurSpec::box(k, 0.0, 1.0);
            auto front = build_blur_front(x, blur);
            ++images;
            bitwise += forward_flat(front, std::vector<float>{0.0f}).values() == v;
            const std::size_t C = shape.size() == 3 ? shape[0] : 1;
            auto oracle = direct_blur(v, C, shape[shape.size() - 2], shape.back(), blur.kernel, k);
            auto at_one = forward_flat(front, std::vector<float>{1.0f});
            for (std::size_t i = 0; i < oracle.size(); ++i)
                worst = std::max(worst, std::abs(at_one[i] - oracle[i]));
        }
    }
    std::ostringstream os;
    os << images << " images, x'(0) bitwise equal on " << bitwise << ", max |x'(1) - direct convolution| = " << worst
       << " (limit 1e-6)";
    return {bitwise == images && worst <= 1e-6, os.str()};
}

Outcome motivating_box() {
    auto f = build_fixture("identity-gen");
    const auto &spec = f.properties[0].spec;
    VScanConfig cfg;
    cfg.timeout_s = spec.timeout_seconds;
    const auto models = f.models.view();
    auto run = run_vscan(models, spec, cfg);
    audit_run("identity-gen", models, spec, run);
    const auto &p = run.property;
    bool exact = p.noise_box() == Box::uniform(p.latent_dim, -0.5, 0.5);
    bool strength = p.strength_box() == Box({0.0}, {1.0});
    double eps_err = 0.0;
    for (std::size_t i = 0; i < p.latent_dim; ++i)
        eps_err = std::max({eps_err, std::abs(p.awgn_box().lower(i) + 0.01), std::abs(p.awgn_box().upper(i) - 0.01)});
    std::ostringstream os;
    os << "rho=" << *spec.rho << ", noise box " << (exact ? "exactly" : "not") << " [-0.5, 0.5]^" << p.latent_dim
       << ", s in [" << p.strength_box().lower(0) << ", " << p.strength_box().upper(0) << "], eps within " << eps_err
       << " of [-0.01, 0.01], verdict " << to_string(run.verdict.status);
    return {exact && strength && eps_err <= 1e-12 && *spec.rho == 0.25, os.str()};
}

Outcome witness_validity() {
    for (const auto &name : fixture_names()) {
        if (name == "rho-trend")
            continue;
        for (std::uint64_t seed : {0u, 1u, 2u}) {
            auto f = build_fixture(name, seed);
            const auto models = f.models.view();
            for (const auto &p : f.properties) {
                VScanConfig cfg;
                cfg.timeout_s = p.spec.timeout_seconds;
                audit_run(name + "/" + p.id, models, p.spec, run_vscan(models, p.spec, cfg));
            }
        }
    }
    std::ostringstream os;
    os << audit.checked << " witnesses re-evaluated, " << audit.failures.size() << " invalid";
    for (const auto &f : audit.failures)
        os << "\n      " << f;
    return {audit.checked > 0 && audit.failures.empty(), os.str()};
}

} // namespace

int main() {
    const std::vector<std::pair<std::string, std::function<Outcome()>>> criteria = {
        {"noise-bound-exactness", noise_bound_exactness},
        {"noise-bound-soundness", noise_bound_soundness},
        {"verifier-grid-agreement", verifier_grid_agreement},
        {"gradient-check", gradient_check},
        {"rho-monotonicity", rho_monotonicity},
        {"blur-endpoints", blur_endpoints},
        {"motivating-box", motivating_box},
        {"witness-validity", witness_validity},
    };
    std::size_t passed = 0;
    for (const auto &[name, run] : criteria) {
        Outcome o;
        try {
            o = run();
        } catch (const std::exception &e) {
            o = {false, std::string("threw: ") + e.what()};
        }
        passed += o.pass;
        std::printf("%s %-24s %s\n", o.pass ? "PASS" : "FAIL", name.c_str(), o.detail.c_str());
        std::fflush(stdout);
    }
    std::printf("%zu/%zu criteria passed\n", passed, criteria.size());
    return passed == criteria.size() ? 0 : 1;
}
