#include "oracles.hpp"
#include "random_nets.hpp"

#include <semverify/compose.hpp>
#include <semverify/error.hpp>
#include <semverify/eval.hpp>
#include <semverify/falsify.hpp>
#include <semverify/fixtures.hpp>
#include <semverify/verify.hpp>

#include <gtest/gtest.h>

#include <random>

using namespace semverify;
using namespace semverify::testing;

namespace {

PipelineProperty semcom_property(const SemCom &m, std::size_t d, double a, double sigma,
                                 BlurSpec blur = BlurSpec::box(3, 0.0, 1.0)) {
    auto pipe = compose_pipeline(m.encoder, m.decoder, m.classifier, build_blur_front(m.image, blur));
    return build_property(pipe, Box::uniform(d, -a, a), blur, sigma, m.label);
}

VerifyBudget generous(std::size_t workers = 1) {
    VerifyBudget b;
    b.timeout_s = 60.0;
    b.workers = workers;
    return b;
}

void expect_valid_witness(const PipelineProperty &p, const Counterexample &c) {
    EXPECT_TRUE(p.input_box.contains(c.assignment));
    auto logits = forward_flat(p.pipeline, to_float(c.assignment));
    EXPECT_GE(logit_margin(logits.data(), p.true_label), 0.0);
    EXPECT_EQ(logits.values(), c.logits);
}

/// 10^5 uniform samples plus 10^3 PGD restarts.
bool finds_violation(const PipelineProperty &p, std::uint64_t seed) {
    std::mt19937_64 rng(seed);
    for (int i = 0; i < 100000; ++i)
        if (check_point(p, snap_to_box(sample_box(p.input_box, rng), p.input_box)))
            return true;
    AttackConfig cfg;
    cfg.restarts = 1000;
    cfg.steps = 50;
    cfg.seed = seed;
    return pgd_attack(p, cfg).has_value();
}

} // namespace

TEST(Verify, ConstantLogitsAreUnsatAtTheRoot) {
    auto f = build_fixture("zero-weight");
    const auto &m = f.models;
    const auto &spec = f.properties[0].spec;
    auto pipe = compose_pipeline(m.encoder.graph, m.decoder.graph, m.classifier.graph,
                                 build_blur_front(spec.clean_input, spec.blur));
    auto p = build_property(pipe, Box::uniform(2, -0.5, 0.5), spec.blur, spec.awgn_sigma, 0);
    auto v = verify(p, generous());
    EXPECT_EQ(v.status, VerdictStatus::Unsat);
    EXPECT_EQ(v.stats.nodes, 1u);
    EXPECT_EQ(v.stats.open_nodes, 0u);
}

TEST(Verify, PlantedCrossingIsSatWithValidatedWitness) {
    for (const char *name : {"planted-sat-2d", "planted-sat-4d"}) {
        auto f = build_fixture(name, 2);
        const auto &m = f.models;
        const auto &spec = f.properties[0].spec;
        const std::size_t d = m.generator.meta.latent_dim;
        auto pipe = compose_pipeline(m.encoder.graph, m.decoder.graph, m.classifier.graph,
                                     build_blur_front(spec.clean_input, spec.blur));
        auto p = build_property(pipe, Box::uniform(d, -0.5, 0.5), spec.blur, spec.awgn_sigma, 0);
        const Box trig = spec.trigger_box(d);
        WitnessValidator validator = [&](Counterexample c) {
            return validate_realizability(m.generator.graph, p, std::move(c), trig, 0.25, AttackConfig{});
        };
        auto v = verify(p, generous(), validator);
        ASSERT_EQ(v.status, VerdictStatus::Sat) << name;
        ASSERT_TRUE(v.witness);
        expect_valid_witness(p, *v.witness);
        EXPECT_EQ(v.witness->realizability, Realizability::Realizable);
        auto unchecked = verify(p, generous());
        ASSERT_EQ(unchecked.status, VerdictStatus::Sat);
        EXPECT_EQ(unchecked.witness->realizability, Realizability::Unchecked);
    }
}

TEST(Verify, UnrealizableWitnessIsReportedDistinctly) {
    auto f = build_fixture("planted-sat-2d", 2);
    const auto &m = f.models;
    const auto &spec = f.properties[0].spec;
    auto pipe = compose_pipeline(m.encoder.graph, m.decoder.graph, m.classifier.graph,
                                 build_blur_front(spec.clean_input, spec.blur));
    auto p = build_property(pipe, Box::uniform(2, -0.5, 0.5), spec.blur, spec.awgn_sigma, 0);
    auto zero = constant_generator({0.0f, 0.0f});
    WitnessValidator validator = [&](Counterexample c) {
        return validate_realizability(zero, p, std::move(c), Box::uniform(2, -1, 1), 0.25, AttackConfig{});
    };
    auto v = verify(p, generous(), validator);
    EXPECT_EQ(v.status, VerdictStatus::SatUnrealized);
    ASSERT_TRUE(v.witness);
    expect_valid_witness(p, *v.witness);
}

TEST(Verify, AgreesWithDenseGridOnToyPipelines) {
    std::mt19937_64 rng(100);
    std::size_t sat = 0, unsat = 0;
    for (int trial = 0; trial < 12; ++trial) {
        auto p = random_toy_property(rng);
        if (!p)
            continue;
        EXPECT_LE(p->pipeline.relu_neurons().size(), 8u);
        auto v = verify(*p, generous());
        auto grid = grid_violation(*p, 200);
        ASSERT_NE(v.status, VerdictStatus::Timeout) << "trial " << trial;
        if (grid)
            EXPECT_EQ(v.status, VerdictStatus::Sat) << "trial " << trial;
        if (v.status == VerdictStatus::Unsat) {
            EXPECT_FALSE(grid) << "trial " << trial;
            ++unsat;
        } else {
            expect_valid_witness(*p, *v.witness);
            ++sat;
        }
    }
    EXPECT_GT(sat, 0u);
    EXPECT_GT(unsat, 0u);
}

TEST(Verify, UnsatIsSoundAgainstSamplingAndAttack) {
    std::mt19937_64 rng(200);
    std::size_t checked = 0;
    for (int trial = 0; trial < 40 && checked < 4; ++trial) {
        auto m = random_semcom(2, rng);
        PipelineProperty p;
        try {
            p = semcom_property(m, 2, 0.4, 0.01 / 3.0);
        } catch (const Error &) {
            continue;
        }
        auto v = verify(p, generous());
        if (v.status != VerdictStatus::Unsat)
            continue;
        ++checked;
        EXPECT_FALSE(finds_violation(p, static_cast<std::uint64_t>(trial))) << "trial " << trial;
    }
    EXPECT_GE(checked, 2u);
}

TEST(Verify, StatusIndependentOfWorkersAndRepeatable) {
    std::mt19937_64 rng(300);
    std::size_t cases = 0;
    for (int trial = 0; trial < 10; ++trial) {
        auto m = random_semcom(2, rng);
        PipelineProperty p;
        try {
            p = semcom_property(m, 2, 0.3 + 0.2 * (trial % 4), 0.01);
        } catch (const Error &) {
            continue;
        }
        ++cases;
        auto single = verify(p, generous(1));
        auto again = verify(p, generous(1));
        EXPECT_EQ(single.status, again.status);
        EXPECT_EQ(single.stats.nodes, again.stats.nodes);
        if (single.witness)
            EXPECT_EQ(single.witness->assignment, again.witness->assignment);
        for (std::size_t w : {2u, 4u}) {
            auto multi = verify(p, generous(w));
            EXPECT_EQ(multi.status, single.status) << "trial " << trial << " workers " << w;
            if (multi.witness)
                expect_valid_witness(p, *multi.witness);
        }
    }
    EXPECT_GE(cases, 5u);
}

TEST(Verify, UnsatOnALargerBoxImpliesUnsatOnNestedBoxes) {
    std::mt19937_64 rng(400);
    std::size_t chains = 0;
    for (int trial = 0; trial < 30 && chains < 5; ++trial) {
        auto m = random_semcom(2, rng);
        PipelineProperty outer;
        try {
            outer = semcom_property(m, 2, 0.6, 0.01);
        } catch (const Error &) {
            continue;
        }
        if (verify(outer, generous()).status != VerdictStatus::Unsat)
            continue;
        ++chains;
        for (double shrink : {0.75, 0.5, 0.1}) {
            PipelineProperty inner = outer;
            std::vector<double> lo = outer.input_box.lower(), hi = outer.input_box.upper();
            for (std::size_t i = 0; i < lo.size(); ++i) {
                const double c = 0.5 * (lo[i] + hi[i]) + 0.1 * (hi[i] - lo[i]) * (i % 2 ? 1 : -1) * (1 - shrink);
                const double h = 0.5 * (hi[i] - lo[i]) * shrink;
                lo[i] = std::max(outer.input_box.lower(i), c - h);
                hi[i] = std::min(outer.input_box.upper(i), c + h);
            }
            inner.input_box = Box(lo, hi);
            ASSERT_TRUE(inner.input_box.subset_of(outer.input_box));
            EXPECT_EQ(verify(inner, generous()).status, VerdictStatus::Unsat) << "shrink " << shrink;
        }
    }
    EXPECT_GE(chains, 2u);
}

TEST(Verify, ExhaustedBudgetIsATimeoutWithOpenNodes) {
    std::mt19937_64 rng(500);
    std::size_t timeouts = 0;
    for (int trial = 0; trial < 20 && timeouts < 3; ++trial) {
        auto m = random_semcom(4, rng);
        PipelineProperty p;
        try {
            p = semcom_property(m, 4, 1.0, 0.01);
        } catch (const Error &) {
            continue;
        }
        VerifyBudget b;
        b.max_nodes = 1;
        auto v = verify(p, b);
        if (v.status == VerdictStatus::Sat)
            continue;
        if (v.status == VerdictStatus::Timeout) {
            ++timeouts;
            EXPECT_GT(v.stats.open_nodes, 0u);
            EXPECT_FALSE(v.witness);
        }
    }
    EXPECT_GT(timeouts, 0u);

    auto f = build_fixture("robust-2d");
    auto run_budget = VScanConfig{};
    run_budget.timeout_s = 0.0;
    auto run = run_vscan(f.models.view(), f.properties[0].spec, run_budget);
    EXPECT_EQ(run.verdict.status, VerdictStatus::Timeout);
    EXPECT_GT(run.verdict.stats.open_nodes, 0u);
}

TEST(Verify, RejectsInvalidProperty) {
    std::mt19937_64 rng(600);
    auto m = random_semcom(2, rng);
    PipelineProperty p;
    for (int i = 0; i < 10; ++i) {
        try {
            p = semcom_property(m, 2, 0.1, 0.0);
            break;
        } catch (const Error &) {
            m = random_semcom(2, rng);
        }
    }
    p.input_box = Box::uniform(3, 0, 1);
    EXPECT_THROW(verify(p, generous()), Error);
}

TEST(VScan, MotivatingConfigurationOnRobustFixtureIsUnsat) {
    auto f = build_fixture("identity-gen");
    auto run = run_vscan(f.models.view(), f.properties[0].spec, VScanConfig{});
    EXPECT_EQ(run.verdict.status, VerdictStatus::Unsat);
    EXPECT_EQ(run.provenance.decided_by, VScanPhase::Verification);
    EXPECT_TRUE(run.provenance.noise_bounds_converged);
    EXPECT_EQ(run.property.noise_box(), Box::uniform(2, -0.5, 0.5));
}

TEST(VScan, AttackedFixtureNeverEntersVerification) {
    auto f = build_fixture("planted-sat-4d");
    auto run = run_vscan(f.models.view(), f.properties[0].spec, VScanConfig{});
    EXPECT_EQ(run.verdict.status, VerdictStatus::Sat);
    EXPECT_EQ(run.provenance.decided_by, VScanPhase::Attack);
    EXPECT_FALSE(run.provenance.attack_source.empty());
    EXPECT_EQ(run.verdict.stats.nodes, 0u);
    EXPECT_EQ(run.provenance.verify_time_s, 0.0);
}

TEST(VScan, UnrealizableAttackContinuesToVerification) {
    // both noise coordinates copy r_1, so n_1 - n_2 >= 0.3 holds in the noise box but never on the generator's range
    GraphBuilder g;
    auto r = g.input("r", {2});
    auto gen = g.build(g.affine(r, 2, {1, 0, 1, 0}, {}));
    GraphBuilder e;
    auto x = e.input("x", {3, 3});
    auto enc = e.build(e.affine(e.flatten(x), 2, std::vector<float>(18, 0.0f), {}));
    GraphBuilder d;
    auto z = d.input("z", {2});
    auto dec = d.build(d.relu(d.affine(z, 2, {1, 0, 0, 1}, {3, 3})));
    GraphBuilder c;
    auto h = c.input("h", {2});
    auto cls = c.build(c.affine(h, 2, {0, 0, 1, -1}, {0.0f, -0.3f}));
    PropertySpec spec;
    spec.clean_input = Tensor({3, 3}, std::vector<float>(9, 0.5f));
    spec.blur = BlurSpec::box(3, 0.0, 1.0);
    spec.rho = 0.25;
    VScanModels models{gen, enc, dec, cls, 1.0};
    VScanConfig cfg;
    cfg.timeout_s = 20.0;
    auto run = run_vscan(models, spec, cfg);
    EXPECT_TRUE(run.provenance.attack_found_unrealized);
    EXPECT_EQ(run.verdict.status, VerdictStatus::SatUnrealized);
    EXPECT_EQ(run.provenance.decided_by, VScanPhase::Verification);
    EXPECT_GT(run.verdict.stats.nodes, 0u);
    ASSERT_TRUE(run.verdict.witness);
    EXPECT_EQ(run.verdict.witness->realizability, Realizability::Unrealizable);
    expect_valid_witness(run.property, *run.verdict.witness);
}

TEST(VScan, MisclassifiedCleanInputIsRefused) {
    auto f = build_fixture("robust-2d");
    auto spec = f.properties[0].spec;
    spec.true_label = 1;
    EXPECT_THROW(run_vscan(f.models.view(), spec, VScanConfig{}), Error);
}
