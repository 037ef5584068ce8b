#include "cli.hpp"

#include <semverify/error.hpp>
#include <semverify/fixtures.hpp>
#include <semverify/noisebounds.hpp>
#include <semverify/verify.hpp>

#include <CLI11.hpp>
#include <spdlog/sinks/stdout_sinks.h>
#include <spdlog/spdlog.h>

#include <algorithm>
#include <atomic>
#include <cstdlib>
#include <exception>
#include <fstream>
#include <iomanip>
#include <mutex>
#include <optional>
#include <regex>
#include <sstream>
#include <thread>

namespace semverify::cli {

namespace {

std::shared_ptr<spdlog::logger> logger() {
    static auto log = [] {
        auto l = spdlog::stderr_logger_mt("semverify");
        l->set_pattern("[%l] %v");
        return l;
    }();
    const char *env = std::getenv("SEMVERIFY_LOG");
    log->set_level(env ? spdlog::level::from_str(env) : spdlog::level::warn);
    return log;
}

struct Options {
    std::string model_dir;
    std::string property;
    std::string benchmark;
    std::string bounds;
    std::string out;
    std::optional<double> timeout_s;
    std::uint64_t seed = kDefaultSeed;
    std::size_t workers = 1;
    std::vector<std::string> results;
    std::string fixture;
    bool list = false;
};

using PropertyList = std::vector<std::pair<std::string, PropertySpec>>;

PropertyList load_properties(const Options &o) {
    if (!o.property.empty() && !o.benchmark.empty())
        throw Error(ErrorCode::InvalidArgument, "--property and --benchmark are mutually exclusive");
    if (!o.property.empty()) {
        std::filesystem::path p(o.property);
        std::string id = p.filename().string();
        if (auto pos = id.find('.'); pos != std::string::npos)
            id = id.substr(0, pos);
        return {{id, load_property(p)}};
    }
    if (!o.benchmark.empty())
        return load_benchmark_dir(o.benchmark);
    throw Error(ErrorCode::InvalidArgument, "one of --property or --benchmark is required");
}

VScanConfig vscan_config(const Options &o, const PropertySpec &spec, std::size_t workers) {
    VScanConfig cfg;
    cfg.timeout_s = o.timeout_s.value_or(spec.timeout_seconds);
    cfg.attack.seed = o.seed;
    cfg.workers = workers;
    return cfg;
}

class LineSink {
public:
    explicit LineSink(const std::string &path, std::ostream &fallback) : out_(&fallback) {
        if (!path.empty()) {
            file_.open(path, std::ios::binary | std::ios::trunc);
            if (!file_)
                throw Error(ErrorCode::Io, "cannot open " + path + " for writing");
            out_ = &file_;
        }
    }
    void write(const std::string &line) {
        std::lock_guard lock(mutex_);
        *out_ << line << '\n';
        out_->flush();
    }

private:
    std::ofstream file_;
    std::ostream *out_;
    std::mutex mutex_;
};

std::vector<ResultRecord> run_batch(const ModelSet &models, const PropertyList &props, const Options &o,
                                    bool attack_only, const NoiseBoundsResult *precomputed, LineSink *sink) {
    const std::size_t workers = std::max<std::size_t>(1, o.workers);
    const std::size_t threads = std::max<std::size_t>(1, std::min(workers, props.size()));
    const std::size_t per_run = std::max<std::size_t>(1, workers / threads);
    const auto view = models.view();
    auto log = logger();

    std::vector<ResultRecord> records(props.size());
    std::atomic<std::size_t> next{0};
    std::atomic<bool> stop{false};
    std::exception_ptr failure;
    std::mutex failure_mutex;

    auto work = [&] {
        while (!stop) {
            const std::size_t i = next++;
            if (i >= props.size())
                return;
            const auto &[id, spec] = props[i];
            try {
                VScanConfig cfg = vscan_config(o, spec, per_run);
                cfg.attack_only = attack_only;
                auto run = run_vscan(view, spec, cfg, precomputed);
                records[i] = make_result(id, run);
                log->info("{}: {} by {} ({} nodes, {:.3f} s)", id, to_string(records[i].verdict),
                          records[i].decided_by, records[i].stats.branch_count, records[i].stats.wall_time_s);
                if (sink)
                    sink->write(result_to_json_line(records[i]));
            } catch (...) {
                std::lock_guard lock(failure_mutex);
                if (!failure)
                    failure = std::current_exception();
                stop = true;
            }
        }
    };
    std::vector<std::thread> pool;
    for (std::size_t t = 1; t < threads; ++t)
        pool.emplace_back(work);
    work();
    for (auto &t : pool)
        t.join();
    if (failure)
        std::rethrow_exception(failure);
    return records;
}

bool any_timeout(const std::vector<ResultRecord> &records) {
    return std::any_of(records.begin(), records.end(),
                       [](const ResultRecord &r) { return r.verdict == VerdictStatus::Timeout; });
}

int cmd_bounds(const Options &o, std::ostream &out) {
    auto models = load_model_dir(o.model_dir);
    auto spec = load_property(o.property);
    const auto view = models.view();
    NoiseBoundsOptions nopt;
    nopt.workers = std::max<std::size_t>(1, o.workers);
    nopt.budget.time_limit_s = o.timeout_s.value_or(spec.timeout_seconds);
    auto res = compute_noise_bounds(view.generator, spec.trigger_box(view.generator.input_dim()),
                                    spec.power(view.latent_power), nopt);
    if (res.stats.budget_exhausted)
        logger()->warn("noise bounds did not converge; the relaxation bound is reported");
    const std::string json = noise_bounds_to_json(res);
    if (o.out.empty())
        out << json << '\n';
    else
        write_text_file(o.out, json + "\n");
    return kExitOk;
}

int cmd_verify(const Options &o, std::ostream &out, bool attack_only) {
    auto models = load_model_dir(o.model_dir);
    auto props = load_properties(o);
    std::optional<NoiseBoundsResult> bounds;
    if (!o.bounds.empty()) {
        if (props.size() != 1)
            throw Error(ErrorCode::InvalidArgument, "--bounds applies to a single --property");
        bounds = noise_bounds_from_json(read_text_file(o.bounds));
    }
    LineSink sink(o.out, out);
    auto records = run_batch(models, props, o, attack_only, bounds ? &*bounds : nullptr, &sink);
    return any_timeout(records) ? kExitTimeouts : kExitOk;
}

int cmd_bench(const Options &o, std::ostream &out) {
    auto models = load_model_dir(o.model_dir);
    auto props = load_benchmark_dir(o.benchmark);
    std::map<std::string, std::string> labels;
    for (const auto &[id, spec] : props)
        labels[id] = power_label(spec);
    std::optional<LineSink> sink;
    if (!o.out.empty())
        sink.emplace(o.out, out);
    auto records = run_batch(models, props, o, false, nullptr, sink ? &*sink : nullptr);
    out << format_table(summarize(records, labels));
    return any_timeout(records) ? kExitTimeouts : kExitOk;
}

int cmd_report(const Options &o, std::ostream &out) {
    std::vector<ResultRecord> records;
    for (const auto &path : o.results) {
        auto part = read_results(path);
        records.insert(records.end(), part.begin(), part.end());
    }
    std::map<std::string, std::string> labels;
    if (!o.benchmark.empty())
        for (const auto &[id, spec] : load_benchmark_dir(o.benchmark))
            labels[id] = power_label(spec);
    const std::string csv = format_csv(summarize(records, labels));
    if (o.out.empty())
        out << csv;
    else
        write_text_file(o.out, csv);
    return kExitOk;
}

int cmd_fixture(const Options &o, std::ostream &out) {
    if (o.list) {
        for (const auto &name : fixture_names())
            out << name << '\n';
        return kExitOk;
    }
    if (o.fixture.empty() || o.out.empty())
        throw Error(ErrorCode::InvalidArgument, "fixture needs a name and --out");
    auto f = make_fixture(o.fixture, o.seed, o.out);
    out << "wrote " << f.name << " (" << f.properties.size() << " properties) to " << o.out << '\n';
    return kExitOk;
}

void add_run_flags(CLI::App *sub, Options &o) {
    sub->add_option("--timeout-s", o.timeout_s, "Per-property budget in seconds")->check(CLI::NonNegativeNumber);
    sub->add_option("--workers", o.workers, "Worker threads")->check(CLI::PositiveNumber);
}

} // namespace

std::string SummaryRow::counts() const {
    return std::to_string(sat) + "/" + std::to_string(unsat) + "/" + std::to_string(timeout);
}

std::vector<SummaryRow> summarize(const std::vector<ResultRecord> &records,
                                  const std::map<std::string, std::string> &labels) {
    static const std::regex suffix("-(rho|pnr)([0-9]+)$");
    std::vector<SummaryRow> rows;
    for (const auto &r : records) {
        std::string label = "all";
        if (auto it = labels.find(r.property_id); it != labels.end()) {
            label = it->second;
        } else if (std::smatch m; std::regex_search(r.property_id, m, suffix)) {
            label = m[1].str() + "#" + m[2].str();
        }
        auto row = std::find_if(rows.begin(), rows.end(), [&](const SummaryRow &x) { return x.label == label; });
        if (row == rows.end()) {
            rows.push_back(SummaryRow{label});
            row = rows.end() - 1;
        }
        switch (r.verdict) {
        case VerdictStatus::Sat: ++row->sat; break;
        case VerdictStatus::SatUnrealized:
            ++row->sat;
            ++row->sat_unrealized;
            break;
        case VerdictStatus::Unsat: ++row->unsat; break;
        case VerdictStatus::Timeout: ++row->timeout; break;
        }
    }
    return rows;
}

SummaryRow total_row(const std::vector<SummaryRow> &rows) {
    SummaryRow t{"total"};
    for (const auto &r : rows) {
        t.sat += r.sat;
        t.sat_unrealized += r.sat_unrealized;
        t.unsat += r.unsat;
        t.timeout += r.timeout;
    }
    return t;
}

std::string format_table(const std::vector<SummaryRow> &rows) {
    std::size_t width = 5;
    for (const auto &r : rows)
        width = std::max(width, r.label.size());
    std::ostringstream os;
    auto line = [&](const std::string &a, const std::string &b, const std::string &c) {
        os << std::left << std::setw(static_cast<int>(width + 2)) << a << std::setw(20) << b << c << '\n';
    };
    line("group", "sat/unsat/timeout", "sat_unrealized");
    for (const auto &r : rows)
        line(r.label, r.counts(), std::to_string(r.sat_unrealized));
    const auto t = total_row(rows);
    line(t.label, t.counts(), std::to_string(t.sat_unrealized));
    return os.str();
}

std::string format_csv(const std::vector<SummaryRow> &rows) {
    std::ostringstream os;
    os << "group,sat,unsat,timeout,sat_unrealized,total\n";
    auto line = [&](const SummaryRow &r) {
        os << r.label << ',' << r.sat << ',' << r.unsat << ',' << r.timeout << ',' << r.sat_unrealized << ','
           << r.total() << '\n';
    };
    for (const auto &r : rows)
        line(r);
    line(total_row(rows));
    return os.str();
}

std::string power_label(const PropertySpec &spec) {
    if (spec.rho)
        return "rho=" + shortest_decimal(*spec.rho);
    if (spec.pnr_db)
        return "pnr=" + shortest_decimal(*spec.pnr_db) + "dB";
    return "all";
}

int run(int argc, const char *const *argv, std::ostream &out, std::ostream &err) {
    Options o;
    CLI::App app{"Robustness verification for semantic communication pipelines", "semverify"};
    app.require_subcommand(1);

    auto *bounds = app.add_subcommand("bounds", "Compute adversarial noise bounds for one property");
    bounds->add_option("--model-dir", o.model_dir, "Directory with the four model manifests")
        ->required()
        ->check(CLI::ExistingDirectory);
    bounds->add_option("--property", o.property, "Property file")->required()->check(CLI::ExistingFile);
    bounds->add_option("--out", o.out, "Bounds JSON path (default stdout)");
    add_run_flags(bounds, o);

    auto add_verify_like = [&](const char *name, const char *help) {
        auto *sub = app.add_subcommand(name, help);
        sub->add_option("--model-dir", o.model_dir, "Directory with the four model manifests")
            ->required()
            ->check(CLI::ExistingDirectory);
        auto *prop = sub->add_option("--property", o.property, "Property file")->check(CLI::ExistingFile);
        auto *bench = sub->add_option("--benchmark", o.benchmark, "Benchmark directory")->check(CLI::ExistingDirectory);
        prop->excludes(bench);
        sub->add_option("--seed", o.seed, "Attack seed");
        sub->add_option("--out", o.out, "Results jsonl path (default stdout)");
        add_run_flags(sub, o);
        return sub;
    };
    auto *verify = add_verify_like("verify", "Run the full pipeline on a property or benchmark");
    verify->add_option("--bounds", o.bounds, "Precomputed bounds JSON; skips bound computation")
        ->check(CLI::ExistingFile);
    auto *attack = add_verify_like("attack", "Run bounds and attack only");

    auto *bench = app.add_subcommand("bench", "Run a benchmark and print sat/unsat/timeout counts");
    bench->add_option("--model-dir", o.model_dir, "Directory with the four model manifests")
        ->required()
        ->check(CLI::ExistingDirectory);
    bench->add_option("--benchmark", o.benchmark, "Benchmark directory")->required()->check(CLI::ExistingDirectory);
    bench->add_option("--seed", o.seed, "Attack seed");
    bench->add_option("--out", o.out, "Results jsonl path");
    add_run_flags(bench, o);

    auto *report = app.add_subcommand("report", "Summarize results jsonl files as CSV");
    report->add_option("results", o.results, "Results jsonl files")->required()->check(CLI::ExistingFile);
    report->add_option("--benchmark", o.benchmark, "Benchmark directory used for group labels")
        ->check(CLI::ExistingDirectory);
    report->add_option("--out", o.out, "CSV path (default stdout)");

    auto *fixture = app.add_subcommand("fixture", "Write a built-in fixture to disk");
    fixture->add_option("name", o.fixture, "Fixture name");
    fixture->add_flag("--list", o.list, "List fixture names");
    fixture->add_option("--seed", o.seed, "Weight seed");
    fixture->add_option("--out", o.out, "Output directory");

    try {
        app.parse(argc, argv);
    } catch (const CLI::ParseError &e) {
        return app.exit(e, out, err) == 0 ? kExitOk : kExitInput;
    }

    try {
        if (bounds->parsed())
            return cmd_bounds(o, out);
        if (verify->parsed())
            return cmd_verify(o, out, false);
        if (attack->parsed())
            return cmd_verify(o, out, true);
        if (bench->parsed())
            return cmd_bench(o, out);
        if (report->parsed())
            return cmd_report(o, out);
        if (fixture->parsed())
            return cmd_fixture(o, out);
    } catch (const Error &e) {
        err << "error: " << e.what() << '\n';
        return kExitInput;
    } catch (const std::exception &e) {
        err << "internal error: " << e.what() << '\n';
        return kExitInternal;
    }
    return kExitInput;
}

int run(const std::vector<std::string> &args, std::ostream &out, std::ostream &err) {
    std::vector<const char *> argv{"semverify"};
    for (const auto &a : args)
        argv.push_back(a.c_str());
    return run(static_cast<int>(argv.size()), argv.data(), out, err);
}

} // namespace semverify::cli
