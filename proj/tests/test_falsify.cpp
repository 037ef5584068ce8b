#include "random_nets.hpp"

#include <semverify/compose.hpp>
#include <semverify/error.hpp>
#include <semverify/eval.hpp>
#include <semverify/falsify.hpp>
#include <semverify/fixtures.hpp>

#include <gtest/gtest.h>

#include <algorithm>
#include <cmath>
#include <random>

using namespace semverify;
using namespace semverify::testing;

namespace {

/// Pipeline whose margin (logit 1 - logit 0) is exactly z_1 - theta, where
/// z = n + eps: a zero encoder, an always-active ReLU(z + 3) decoder and a
/// two-class classifier reading its first unit.
PipelineProperty threshold_property(std::size_t d, double theta, const Box &noise, double sigma = 0.0,
                                    BlurSpec blur = BlurSpec::box(3, 0.0, 0.0)) {
    GraphBuilder e;
    auto x = e.input("x", {3, 3});
    auto enc = e.build(e.affine(e.flatten(x), d, std::vector<float>(9 * d, 0.0f), {}));
    GraphBuilder dd;
    auto z = dd.input("z", {d});
    std::vector<float> I(d * d, 0.0f);
    for (std::size_t i = 0; i < d; ++i)
        I[i * d + i] = 1.0f;
    auto dec = dd.build(dd.relu(dd.affine(z, d, I, std::vector<float>(d, 3.0f))));
    GraphBuilder c;
    auto h = c.input("h", {d});
    std::vector<float> W(2 * d, 0.0f);
    W[d] = 1.0f;
    auto cls = c.build(c.affine(h, 2, W, {0.0f, static_cast<float>(-3.0 - theta)}));
    Tensor img({3, 3}, std::vector<float>(9, 0.5f));
    auto pipe = compose_pipeline(enc, dec, cls, build_blur_front(img, blur));
    return build_property(pipe, noise, blur, sigma, 0);
}

NetworkGraph tiny_generator(std::mt19937_64 &rng) {
    GraphBuilder b;
    auto r = b.input("r", {2});
    auto h = b.relu(b.affine(r, 6, random_floats(12, rng, 1.0), random_floats(6, rng, 0.5)));
    return b.build(b.affine(h, 2, random_floats(12, rng, 0.6), {}));
}

void expect_valid_witness(const PipelineProperty &p, const Counterexample &c) {
    EXPECT_TRUE(p.input_box.contains(c.assignment));
    auto logits = forward_flat(p.pipeline, to_float(c.assignment));
    EXPECT_EQ(logits.values(), c.logits);
    std::size_t winner = 0;
    EXPECT_GE(logit_margin(logits.data(), c.true_label, &winner), 0.0);
    EXPECT_EQ(winner, c.winning_label);
    EXPECT_NE(c.winning_label, c.true_label);
}

} // namespace

TEST(AttackConfig, Validation) {
    AttackConfig c;
    EXPECT_NO_THROW(c.validate());
    c.steps = 0;
    EXPECT_THROW(c.validate(), Error);
    c = AttackConfig{};
    c.step_size = 0.0;
    EXPECT_THROW(c.validate(), Error);
    c = AttackConfig{};
    c.restarts = 0;
    EXPECT_THROW(c.validate(), Error);
}

TEST(Margin, TiesCountAsViolations) {
    std::vector<float> logits{1.0f, 1.0f, 0.5f};
    std::size_t w = 9;
    EXPECT_EQ(logit_margin(logits, 0, &w), 0.0);
    EXPECT_EQ(w, 1u);
    EXPECT_EQ(logit_margin(logits, 2, &w), 0.5);
}

TEST(SnapToBox, StaysInsideAndIsFloatExact) {
    Box box({0.1, -1.0 / 3.0, 0.2}, {0.7, 1.0 / 3.0, 0.2});
    std::mt19937_64 rng(1);
    std::uniform_real_distribution<double> u(-2.0, 2.0);
    for (int i = 0; i < 1000; ++i) {
        std::vector<double> x{u(rng), u(rng), u(rng)};
        auto y = snap_to_box(x, box);
        for (std::size_t k = 0; k < 2; ++k) {
            EXPECT_GE(y[k], box.lower(k));
            EXPECT_LE(y[k], box.upper(k));
            EXPECT_EQ(static_cast<double>(static_cast<float>(y[k])), y[k]);
        }
    }
}

TEST(Pgd, PointBoxWithCorrectCleanHasNoCounterexample) {
    auto p = threshold_property(2, 0.3, Box::uniform(2, 0.0, 0.0));
    EXPECT_FALSE(pgd_attack(p, AttackConfig{}));
}

TEST(Pgd, FindsThePlantedCrossing) {
    for (std::size_t d : {1u, 2u, 4u}) {
        for (double theta : {0.05, 0.3, 0.49}) {
            auto p = threshold_property(d, theta, Box::uniform(d, -0.5, 0.5), 0.01 / 3.0);
            auto c = pgd_attack(p, AttackConfig{});
            ASSERT_TRUE(c) << d << " " << theta;
            expect_valid_witness(p, *c);
            EXPECT_GE(c->assignment[1] + c->assignment[1 + d], theta - 1e-6);
            EXPECT_EQ(c->realizability, Realizability::Unchecked);
        }
    }
}

TEST(Pgd, NoFalsePositiveBeyondTheBox) {
    auto p = threshold_property(2, 0.52, Box::uniform(2, -0.5, 0.5), 0.01 / 3.0);
    EXPECT_FALSE(pgd_attack(p, AttackConfig{}));
}

TEST(Pgd, DeterministicGivenSeed) {
    std::mt19937_64 rng(5);
    auto m = random_semcom(2, rng);
    const auto blur = BlurSpec::box(3, 0.0, 1.0);
    auto pipe = compose_pipeline(m.encoder, m.decoder, m.classifier, build_blur_front(m.image, blur));
    std::size_t found = 0;
    for (double a : {0.5, 1.0, 2.0, 4.0}) {
        auto p = build_property(pipe, Box::uniform(2, -a, a), blur, 0.01, m.label);
        AttackConfig cfg;
        cfg.seed = 42;
        auto c1 = pgd_attack(p, cfg), c2 = pgd_attack(p, cfg);
        ASSERT_EQ(c1.has_value(), c2.has_value());
        if (c1) {
            ++found;
            EXPECT_EQ(c1->assignment, c2->assignment);
            expect_valid_witness(p, *c1);
        }
    }
    EXPECT_GT(found, 0u);
}

TEST(Pgd, RandomPipelinesOnlyReturnValidWitnesses) {
    std::mt19937_64 rng(6);
    std::size_t found = 0;
    for (int trial = 0; trial < 20; ++trial) {
        auto m = random_semcom(1 + trial % 3, rng);
        const std::size_t d = 1 + trial % 3;
        const auto blur = BlurSpec::box(3, 0.0, 1.0);
        auto pipe = compose_pipeline(m.encoder, m.decoder, m.classifier, build_blur_front(m.image, blur));
        PipelineProperty p;
        try {
            p = build_property(pipe, Box::uniform(d, -1.5, 1.5), blur, 0.02, m.label);
        } catch (const Error &) {
            continue;
        }
        AttackConfig cfg;
        cfg.seed = static_cast<std::uint64_t>(trial);
        if (auto c = pgd_attack(p, cfg)) {
            ++found;
            expect_valid_witness(p, *c);
        }
    }
    EXPECT_GT(found, 0u);
}

TEST(Pgm, ZeroGeneratorOnRobustPropertyFindsNothing) {
    auto p = threshold_property(2, 0.3, Box::uniform(2, 0.0, 0.0));
    auto gen = constant_generator({0.0f, 0.0f});
    EXPECT_FALSE(pgm_sample_attack(gen, p, Box::uniform(2, -1, 1), 0.25, 1000, 3));
}

TEST(Pgm, IdentityGeneratorFindsPlantedVulnerability) {
    auto p = threshold_property(2, 0.2, Box::uniform(2, -0.5, 0.5), 0.01 / 3.0);
    auto gen = identity_generator(2);
    auto c = pgm_sample_attack(gen, p, Box::uniform(2, -1, 1), 0.25, 1000, 3);
    ASSERT_TRUE(c);
    expect_valid_witness(p, *c);
    EXPECT_EQ(c->realizability, Realizability::Realizable);
    ASSERT_EQ(c->trigger.size(), 2u);
    for (std::size_t j = 0; j < 2; ++j) {
        EXPECT_GE(c->assignment[1 + j], -0.5);
        EXPECT_LE(c->assignment[1 + j], 0.5);
        EXPECT_EQ(c->assignment[1 + j], std::clamp(c->trigger[j], -0.5, 0.5));
    }
    auto again = pgm_sample_attack(gen, p, Box::uniform(2, -1, 1), 0.25, 1000, 3);
    ASSERT_TRUE(again);
    EXPECT_EQ(again->assignment, c->assignment);
}

TEST(Pgm, NoiseStaysWithinComputedBounds) {
    std::mt19937_64 rng(7);
    const Box trig = Box::uniform(2, -1, 1);
    std::size_t found = 0;
    for (int trial = 0; trial < 10; ++trial) {
        auto gen = tiny_generator(rng);
        auto nb = compute_noise_bounds(gen, trig, PowerSpec::from_rho(0.25));
        if (nb.bounds.upper(0) < 0.05)
            continue;
        auto p = threshold_property(2, 0.5 * nb.bounds.upper(0), nb.bounds);
        auto c = pgm_sample_attack(gen, p, trig, 0.25, 1000, 1);
        if (!c)
            continue;
        ++found;
        expect_valid_witness(p, *c);
        const std::vector<double> n(c->assignment.begin() + 1, c->assignment.begin() + 3);
        EXPECT_TRUE(nb.bounds.contains(n, 1e-9));
    }
    EXPECT_GE(found, 3u);
}

TEST(Realizability, IdentityGeneratorRealizesWithRIsN) {
    auto p = threshold_property(2, 0.2, Box::uniform(2, -0.5, 0.5));
    auto c = pgd_attack(p, AttackConfig{});
    ASSERT_TRUE(c);
    auto v = validate_realizability(identity_generator(2), p, *c, Box::uniform(2, -1, 1), 0.25, AttackConfig{});
    EXPECT_EQ(v.realizability, Realizability::Realizable);
    ASSERT_EQ(v.trigger.size(), 2u);
    EXPECT_EQ(v.trigger[0], c->assignment[1]);
    EXPECT_EQ(v.trigger[1], c->assignment[2]);
    EXPECT_EQ(v.assignment, c->assignment);
    auto logits = forward_flat(p.pipeline, to_float(v.realized_assignment));
    EXPECT_GE(logit_margin(logits.data(), 0), 0.0);
}

TEST(Realizability, ZeroRangeGeneratorIsUnrealizable) {
    auto p = threshold_property(2, 0.2, Box::uniform(2, -0.5, 0.5));
    auto c = pgd_attack(p, AttackConfig{});
    ASSERT_TRUE(c);
    auto v = validate_realizability(constant_generator({0.0f, 0.0f}), p, *c, Box::uniform(2, -1, 1), 0.25,
                                    AttackConfig{});
    EXPECT_EQ(v.realizability, Realizability::Unrealizable);
    EXPECT_TRUE(v.trigger.empty());
    EXPECT_EQ(v.assignment, c->assignment);
}

TEST(Realizability, DimensionMismatch) {
    auto p = threshold_property(2, 0.2, Box::uniform(2, -0.5, 0.5));
    auto c = pgd_attack(p, AttackConfig{});
    ASSERT_TRUE(c);
    EXPECT_THROW(validate_realizability(identity_generator(3), p, *c, Box::uniform(3, -1, 1), 0.25, {}), Error);
    EXPECT_THROW(validate_realizability(identity_generator(2), p, *c, Box::uniform(3, -1, 1), 0.25, {}), Error);
}

TEST(Realizability, AgreesWithTriggerGrid) {
    std::mt19937_64 rng(21);
    const Box trig = Box::uniform(2, -1, 1);
    const double a = 0.5;
    std::size_t realizable = 0, unrealizable = 0;
    for (int trial = 0; trial < 24; ++trial) {
        auto gen = tiny_generator(rng);
        double grid_max = -a;
        for (int i = 0; i <= 200; ++i)
            for (int j = 0; j <= 200; ++j) {
                std::vector<float> r{static_cast<float>(-1.0 + 0.01 * i), static_cast<float>(-1.0 + 0.01 * j)};
                grid_max = std::max(grid_max, std::clamp<double>(forward_flat(gen, r)[0], -a, a));
            }
        const bool want = trial % 2 == 0;
        const double theta = grid_max + (want ? -0.05 : 0.05);
        if (theta > a - 1e-3 || theta < 0.01)
            continue;
        auto p = threshold_property(2, theta, Box::uniform(2, -a, a));
        Counterexample cex;
        cex.assignment = {0.0, static_cast<float>(std::min(a, theta + 0.01)), 0.0, 0.0, 0.0};
        cex.true_label = 0;
        cex.winning_label = 1;
        auto v = validate_realizability(gen, p, cex, trig, a * a, AttackConfig{});
        EXPECT_EQ(v.realizability == Realizability::Realizable, want) << "trial " << trial;
        if (want) {
            auto logits = forward_flat(p.pipeline, to_float(v.realized_assignment));
            EXPECT_GE(logit_margin(logits.data(), 0), 0.0);
            ++realizable;
        } else {
            ++unrealizable;
        }
    }
    EXPECT_GE(realizable, 3u);
    EXPECT_GE(unrealizable, 3u);
}
