#include "semverify/verify.hpp"

#include "region.hpp"
#include "semverify/error.hpp"
#include "semverify/eval.hpp"

#include <atomic>
#include <chrono>
#include <condition_variable>
#include <memory>
#include <mutex>
#include <queue>
#include <thread>

namespace semverify {

const char *to_string(VerdictStatus s) {
    switch (s) {
    case VerdictStatus::Sat:
        return "sat";
    case VerdictStatus::SatUnrealized:
        return "sat_unrealized";
    case VerdictStatus::Unsat:
        return "unsat";
    case VerdictStatus::Timeout:
        return "timeout";
    }
    return "?";
}

VerdictStatus verdict_status_from_string(const std::string &s) {
    for (auto v : {VerdictStatus::Sat, VerdictStatus::SatUnrealized, VerdictStatus::Unsat, VerdictStatus::Timeout})
        if (s == to_string(v))
            return v;
    throw Error(ErrorCode::Format, "unknown verdict '" + s + "'");
}

const char *to_string(VScanPhase p) {
    switch (p) {
    case VScanPhase::NoiseBounds:
        return "noise_bounds";
    case VScanPhase::Attack:
        return "attack";
    case VScanPhase::Verification:
        return "verification";
    }
    return "?";
}

namespace {

using Clock = std::chrono::steady_clock;

double seconds_since(Clock::time_point t) { return std::chrono::duration<double>(Clock::now() - t).count(); }

enum class Outcome { Pruned, Violation, Open, Undecided };

struct Evaluation {
    Outcome outcome = Outcome::Pruned;
    std::unique_ptr<BranchNode> node;
    std::optional<Counterexample> cex;
};

Evaluation evaluate(const PipelineProperty &prop, PhaseAssignment phases, const NodeBounds *prior,
                    std::vector<bool> verified, std::size_t depth) {
    const NetworkGraph &g = prop.pipeline;
    const Box &box = prop.input_box;
    const std::size_t t = prop.true_label;
    const std::size_t k = prop.num_classes();
    Evaluation ev;

    auto lr = linear_bounds(g, box, phases, prior);
    if (lr.empty_region())
        return ev;

    std::vector<std::size_t> open_classes;
    for (std::size_t c = 0; c < k; ++c) {
        if (c == t || verified[c])
            continue;
        if (lr.output().lower(t) - lr.output().upper(c) > 0.0)
            verified[c] = true;
        else
            open_classes.push_back(c);
    }
    if (open_classes.empty())
        return ev;

    std::vector<double> spec(open_classes.size() * k, 0.0);
    for (std::size_t r = 0; r < open_classes.size(); ++r) {
        spec[r * k + t] = 1.0;
        spec[r * k + open_classes[r]] = -1.0;
    }
    auto form = objective_lower_form(g, lr, spec, open_classes.size());
    auto cuts = phase_constraints(g, lr, phases);

    double margin_lower = std::numeric_limits<double>::infinity();
    std::vector<std::vector<double>> candidates;
    for (std::size_t r = 0; r < open_classes.size(); ++r) {
        const std::size_t c = open_classes[r];
        auto region = detail::minimize_on_region(form, r, cuts, box);
        if (region.infeasible)
            return ev;
        const double lower = std::max(region.lower, lr.output().lower(t) - lr.output().upper(c));
        if (lower > 0.0) {
            verified[c] = true;
            continue;
        }
        margin_lower = std::min(margin_lower, lower);
        candidates.push_back(std::move(region.point));
    }
    if (candidates.empty())
        return ev;

    for (const auto &p : candidates)
        if (auto cex = check_point(prop, snap_to_box(p, box))) {
            ev.outcome = Outcome::Violation;
            ev.cex = std::move(cex);
            return ev;
        }

    auto node = std::make_unique<BranchNode>();
    auto split = widest_unstable(g, lr.bounds, phases);
    ev.outcome = split ? Outcome::Open : Outcome::Undecided;
    node->phases = std::move(phases);
    node->bounds = std::move(lr.bounds);
    node->region_output_bounds = node->bounds.output;
    node->margin_lower = margin_lower;
    node->verified = std::move(verified);
    node->depth = depth;
    ev.node = std::move(node);
    return ev;
}

struct LowestMarginFirst {
    bool operator()(const std::unique_ptr<BranchNode> &a, const std::unique_ptr<BranchNode> &b) const {
        if (a->margin_lower != b->margin_lower)
            return a->margin_lower > b->margin_lower;
        return a->creation_index > b->creation_index;
    }
};

class Search {
public:
    Search(const PipelineProperty &prop, const VerifyBudget &budget, const WitnessValidator &validator)
        : prop_(prop), budget_(budget), validator_(validator), start_(Clock::now()) {}

    Verdict run() {
        Verdict v;
        if (!(budget_.timeout_s > 0.0)) {
            v.stats.open_nodes = 1;
            return finish(v);
        }
        std::vector<bool> verified(prop_.num_classes(), false);
        ++evaluated_;
        ++bound_calls_;
        auto root = evaluate(prop_, PhaseAssignment(prop_.pipeline), nullptr, verified, 0);
        absorb(std::move(root));
        const std::size_t workers = std::max<std::size_t>(1, budget_.workers);
        if (pending_violation_) {
            auto cex = std::move(*pending_violation_);
            pending_violation_.reset();
            found(std::move(cex));
        } else if (workers == 1) {
            work();
        } else {
            std::vector<std::thread> pool;
            for (std::size_t w = 0; w < workers; ++w)
                pool.emplace_back([this] { work(); });
            for (auto &th : pool)
                th.join();
        }
        if (error_)
            std::rethrow_exception(error_);
        if (witness_) {
            v.status = witness_->realizability == Realizability::Unrealizable ? VerdictStatus::SatUnrealized
                                                                               : VerdictStatus::Sat;
            v.witness = std::move(witness_);
        } else if (exhausted_ || undecided_ > 0 || !open_.empty()) {
            v.status = VerdictStatus::Timeout;
        } else {
            v.status = VerdictStatus::Unsat;
        }
        v.stats.open_nodes = open_.size() + undecided_;
        return finish(v);
    }

private:
    Verdict finish(Verdict &v) {
        v.stats.nodes = evaluated_;
        v.stats.bound_calls = bound_calls_;
        v.stats.max_depth = max_depth_;
        v.stats.undecided_leaves = undecided_;
        v.stats.wall_time_s = seconds_since(start_);
        return std::move(v);
    }

    bool absorb(Evaluation ev) {
        switch (ev.outcome) {
        case Outcome::Pruned:
            return false;
        case Outcome::Violation:
            pending_violation_ = std::move(ev.cex);
            return true;
        case Outcome::Undecided:
            ++undecided_;
            return false;
        case Outcome::Open:
            ev.node->creation_index = next_index_++;
            max_depth_ = std::max(max_depth_, ev.node->depth);
            open_.push(std::move(ev.node));
            return false;
        }
        return false;
    }

    void found(Counterexample cex) {
        // validation may be slow; run it outside the queue lock
        try {
            if (validator_)
                cex = validator_(std::move(cex));
        } catch (...) {
            std::lock_guard lock(mutex_);
            if (!error_)
                error_ = std::current_exception();
        }
        std::lock_guard lock(mutex_);
        if (!witness_ && !error_)
            witness_ = std::move(cex);
        stop_ = true;
        cv_.notify_all();
    }

    void work() {
        std::unique_lock lock(mutex_);
        while (true) {
            cv_.wait(lock, [&] { return stop_ || !open_.empty() || in_flight_ == 0; });
            if (stop_ || (open_.empty() && in_flight_ == 0))
                break;
            if (evaluated_ >= budget_.max_nodes || seconds_since(start_) > budget_.timeout_s) {
                exhausted_ = true;
                stop_ = true;
                cv_.notify_all();
                break;
            }
            auto node = std::move(const_cast<std::unique_ptr<BranchNode> &>(open_.top()));
            open_.pop();
            ++in_flight_;
            const std::size_t neuron = *widest_unstable(prop_.pipeline, node->bounds, node->phases);
            evaluated_ += 2;
            bound_calls_ += 2;
            lock.unlock();

            std::optional<Counterexample> hit;
            std::vector<Evaluation> children;
            try {
                for (Phase phase : {Phase::Active, Phase::Inactive}) {
                    PhaseAssignment child = node->phases;
                    child.set(neuron, phase);
                    auto ev = evaluate(prop_, std::move(child), &node->bounds, node->verified, node->depth + 1);
                    if (ev.outcome == Outcome::Violation) {
                        hit = std::move(ev.cex);
                        break;
                    }
                    children.push_back(std::move(ev));
                }
            } catch (...) {
                lock.lock();
                if (!error_)
                    error_ = std::current_exception();
                stop_ = true;
                --in_flight_;
                cv_.notify_all();
                break;
            }
            if (hit) {
                found(std::move(*hit));
                lock.lock();
                --in_flight_;
                break;
            }
            lock.lock();
            for (auto &ev : children)
                absorb(std::move(ev));
            --in_flight_;
            cv_.notify_all();
        }
    }

    const PipelineProperty &prop_;
    VerifyBudget budget_;
    const WitnessValidator &validator_;
    Clock::time_point start_;

    std::mutex mutex_;
    std::condition_variable cv_;
    std::priority_queue<std::unique_ptr<BranchNode>, std::vector<std::unique_ptr<BranchNode>>, LowestMarginFirst>
        open_;
    std::size_t next_index_ = 0;
    std::size_t in_flight_ = 0;
    std::size_t evaluated_ = 0;
    std::size_t bound_calls_ = 0;
    std::size_t max_depth_ = 0;
    std::size_t undecided_ = 0;
    bool exhausted_ = false;
    bool stop_ = false;
    std::optional<Counterexample> pending_violation_;
    std::optional<Counterexample> witness_;
    std::exception_ptr error_;
};

} // namespace

Verdict verify(const PipelineProperty &property, const VerifyBudget &budget, const WitnessValidator &validator) {
    property.pipeline.require_valid();
    if (property.input_box.size() != property.pipeline.input_dim())
        throw Error(ErrorCode::ShapeMismatch, "property box does not match the pipeline input");
    if (property.true_label >= property.num_classes())
        throw Error(ErrorCode::InvalidArgument, "true label out of range");
    Search search(property, budget, validator);
    return search.run();
}

VScanResult run_vscan(const VScanModels &models, const PropertySpec &spec, const VScanConfig &config,
                      const NoiseBoundsResult *precomputed) {
    const auto start = Clock::now();
    spec.validate();
    config.attack.validate();
    const double total = config.timeout_s;
    auto remaining = [&] { return std::max(0.0, total - seconds_since(start)); };

    const NetworkGraph &gen = models.generator;
    gen.require_valid();
    const Box trigger_box = spec.trigger_box(gen.input_dim());
    const PowerSpec power = spec.power(models.latent_power);

    VScanResult out;
    NoiseBoundsOptions nopt = config.noise;
    nopt.workers = config.workers;
    nopt.budget.time_limit_s = std::min(nopt.budget.time_limit_s, config.bounds_fraction * total);
    if (precomputed) {
        if (precomputed->bounds.size() != gen.numel(gen.output()))
            throw Error(ErrorCode::ShapeMismatch, "precomputed noise bounds do not match the generator output");
        if (precomputed->rho != power.rho)
            throw Error(ErrorCode::InvalidArgument, "precomputed noise bounds were computed for rho " +
                                                        std::to_string(precomputed->rho) + ", property asks for " +
                                                        std::to_string(power.rho));
        out.noise = *precomputed;
    } else {
        out.noise = compute_noise_bounds(gen, trigger_box, power, nopt);
    }
    out.provenance.noise_bounds_converged = !out.noise.stats.budget_exhausted;
    out.provenance.bounds_time_s = seconds_since(start);

    auto front = build_blur_front(spec.clean_input, spec.blur);
    auto pipeline = compose_pipeline(models.encoder, models.decoder, models.classifier, front);
    out.property = build_property(pipeline, out.noise, spec.blur, spec.awgn_sigma, spec.true_label);
    const PipelineProperty &prop = out.property;

    const auto attack_start = Clock::now();
    AttackConfig acfg = config.attack;
    acfg.time_limit_s = std::min(acfg.time_limit_s, std::min(config.attack_fraction * total, remaining()));
    std::optional<Counterexample> unrealized;
    if (auto cex = pgd_attack(prop, acfg)) {
        AttackConfig vcfg = acfg;
        vcfg.time_limit_s = std::max(0.0, acfg.time_limit_s - seconds_since(attack_start));
        auto checked = validate_realizability(gen, prop, std::move(*cex), trigger_box, power.rho, vcfg);
        if (checked.realizability == Realizability::Realizable) {
            out.verdict.status = VerdictStatus::Sat;
            out.verdict.witness = std::move(checked);
            out.provenance.decided_by = VScanPhase::Attack;
            out.provenance.attack_source = "pgd";
        } else {
            out.provenance.attack_found_unrealized = true;
            unrealized = std::move(checked);
        }
    }
    if (!out.verdict.witness && seconds_since(attack_start) < acfg.time_limit_s) {
        if (auto cex = pgm_sample_attack(gen, prop, trigger_box, power.rho, config.pgm_samples, acfg.seed)) {
            out.verdict.status = VerdictStatus::Sat;
            out.verdict.witness = std::move(cex);
            out.provenance.decided_by = VScanPhase::Attack;
            out.provenance.attack_source = "pgm";
        }
    }
    out.provenance.attack_time_s = seconds_since(attack_start);
    if (out.verdict.witness)
        return out;
    if (config.attack_only) {
        out.verdict.stats.open_nodes = 1;
        out.provenance.decided_by = VScanPhase::Attack;
        if (unrealized) {
            out.verdict.status = VerdictStatus::SatUnrealized;
            out.verdict.witness = std::move(unrealized);
            out.provenance.attack_source = "pgd";
        }
        return out;
    }

    const auto verify_start = Clock::now();
    VerifyBudget vb;
    vb.timeout_s = remaining();
    vb.max_nodes = config.max_nodes;
    vb.workers = config.workers;
    AttackConfig rcfg = config.attack;
    rcfg.time_limit_s = std::min(rcfg.time_limit_s, std::max(0.01, 0.1 * vb.timeout_s));
    WitnessValidator validator = [&](Counterexample cex) {
        return validate_realizability(gen, prop, std::move(cex), trigger_box, power.rho, rcfg);
    };
    out.verdict = verify(prop, vb, validator);
    out.provenance.verify_time_s = seconds_since(verify_start);
    out.provenance.decided_by = VScanPhase::Verification;
    if (out.verdict.status == VerdictStatus::Timeout && unrealized) {
        VerifyStats stats = out.verdict.stats;
        out.verdict.status = VerdictStatus::SatUnrealized;
        out.verdict.witness = std::move(unrealized);
        out.verdict.stats = stats;
        out.provenance.decided_by = VScanPhase::Attack;
        out.provenance.attack_source = "pgd";
    }
    return out;
}

} // namespace semverify
