#include "semverify/fixtures.hpp"

#include "semverify/compose.hpp"
#include "semverify/error.hpp"
#include "semverify/eval.hpp"

#include <json.hpp>

#include <algorithm>
#include <cmath>
#include <random>

namespace semverify {

namespace {

constexpr double kMotivatingRho = 0.25;
constexpr double kMotivatingSigma = 0.01 / 3.0;
constexpr double kPlantedThreshold = 0.25;
constexpr double kPlantedDrift = 0.03;
const Shape kImageShape{3, 3};

std::vector<float> identity(std::size_t d) {
    std::vector<float> w(d * d, 0.0f);
    for (std::size_t i = 0; i < d; ++i)
        w[i * d + i] = 1.0f;
    return w;
}

std::vector<float> normal(std::size_t n, double scale, std::mt19937_64 &rng) {
    std::normal_distribution<double> dist(0.0, scale);
    std::vector<float> v(n);
    for (auto &x : v)
        x = static_cast<float>(dist(rng));
    return v;
}

Tensor random_image(std::mt19937_64 &rng) {
    std::uniform_real_distribution<double> u(0.0, 1.0);
    std::vector<float> v(shape_numel(kImageShape));
    for (auto &x : v)
        x = static_cast<float>(u(rng));
    return Tensor(kImageShape, std::move(v));
}

NetworkGraph encoder_graph(std::size_t d, std::vector<float> weights) {
    GraphBuilder b;
    auto x = b.input("x", kImageShape);
    auto f = b.flatten(x);
    return b.build(b.affine(f, d, std::move(weights), std::vector<float>(d, 0.0f)));
}

NetworkGraph decoder_graph(std::size_t d, std::size_t width, std::vector<float> weights, std::vector<float> bias) {
    GraphBuilder b;
    auto z = b.input("z", {d});
    return b.build(b.relu(b.affine(z, width, std::move(weights), std::move(bias))));
}

NetworkGraph classifier_graph(std::size_t width, std::size_t classes, std::vector<float> weights,
                              std::vector<float> bias) {
    GraphBuilder b;
    auto h = b.input("h", {width});
    return b.build(b.affine(h, classes, std::move(weights), std::move(bias)));
}

LoadedModel model(NetworkGraph g, ModelRole role, std::size_t d) {
    LoadedModel m{std::move(g), {}};
    m.meta.role = role;
    m.meta.latent_dim = d;
    if (role == ModelRole::Encoder)
        m.meta.latent_power = 1.0;
    return m;
}

ModelSet model_set(NetworkGraph gen, NetworkGraph enc, NetworkGraph dec, NetworkGraph cls, std::size_t d) {
    return ModelSet{model(std::move(gen), ModelRole::Generator, d), model(std::move(enc), ModelRole::Encoder, d),
                    model(std::move(dec), ModelRole::Decoder, d),
                    model(std::move(cls), ModelRole::Classifier, d)};
}

PropertySpec motivating_property(Tensor image, std::size_t label) {
    PropertySpec p;
    p.clean_input = std::move(image);
    p.true_label = label;
    p.blur = BlurSpec::box(3, 0.0, 1.0);
    p.trigger_lower = -1.0;
    p.trigger_upper = 1.0;
    p.rho = kMotivatingRho;
    p.awgn_sigma = kMotivatingSigma;
    p.timeout_seconds = 60.0;
    return p;
}

/// Per-pixel bound on |x'(s) - x| over the strength range.
std::vector<double> blur_drift(const Tensor &image, const BlurSpec &blur) {
    auto kx = blur_image(image, blur);
    std::vector<double> u(image.size());
    for (std::size_t i = 0; i < u.size(); ++i)
        u[i] = std::abs(kx[i] - image[i]) * blur.s_upper;
    return u;
}

std::vector<double> matvec(std::span<const float> w, std::size_t rows, std::span<const double> x) {
    std::vector<double> y(rows, 0.0);
    for (std::size_t r = 0; r < rows; ++r)
        for (std::size_t c = 0; c < x.size(); ++c)
            y[r] += static_cast<double>(w[r * x.size() + c]) * x[c];
    return y;
}

std::vector<double> image_values(const Tensor &image) { return {image.data().begin(), image.data().end()}; }

/// Random encoder, ReLU decoder and classifier whose clean margin exceeds
/// twice the largest change any admissible (s, n, eps) can cause.
Fixture robust(const std::string &name, std::size_t d, std::uint64_t seed, NetworkGraph generator) {
    std::mt19937_64 rng(seed);
    const std::size_t pixels = shape_numel(kImageShape), width = 8, classes = 3;
    Tensor image = random_image(rng);
    auto E = normal(d * pixels, 0.3, rng);
    auto D = normal(width * d, 0.5, rng);
    std::vector<float> Db(width, 0.1f);
    auto C = normal(classes * width, 0.5, rng);

    PropertySpec spec = motivating_property(image, 0);
    const auto u = blur_drift(image, spec.blur);
    const double noise = std::sqrt(kMotivatingRho) + 3.0 * kMotivatingSigma;
    std::vector<double> dz(d, noise);
    for (std::size_t k = 0; k < d; ++k)
        for (std::size_t i = 0; i < pixels; ++i)
            dz[k] += std::abs(E[k * pixels + i]) * u[i];
    std::vector<double> dh(width, 0.0);
    for (std::size_t h = 0; h < width; ++h)
        for (std::size_t k = 0; k < d; ++k)
            dh[h] += std::abs(D[h * d + k]) * dz[k];

    auto z = matvec(E, d, image_values(image));
    auto pre = matvec(D, width, z);
    for (std::size_t h = 0; h < width; ++h)
        pre[h] = std::max(0.0, pre[h] + Db[h]);
    auto logits = matvec(C, classes, pre);
    double bias0 = 0.0;
    for (std::size_t c = 1; c < classes; ++c) {
        double m = 0.0;
        for (std::size_t h = 0; h < width; ++h)
            m += std::abs(C[h] - C[c * width + h]) * dh[h];
        bias0 = std::max(bias0, logits[c] - logits[0] + 2.0 * m + 0.1);
    }
    std::vector<float> Cb(classes, 0.0f);
    Cb[0] = static_cast<float>(bias0);

    Fixture f;
    f.name = name;
    f.seed = seed;
    f.models = model_set(std::move(generator), encoder_graph(d, std::move(E)),
                         decoder_graph(d, width, std::move(D), std::move(Db)),
                         classifier_graph(width, classes, std::move(C), std::move(Cb)), d);
    f.properties.push_back({"motivating", std::move(spec), VerdictStatus::Unsat});
    return f;
}

NetworkGraph random_generator(std::size_t d, std::mt19937_64 &rng) {
    GraphBuilder b;
    auto r = b.input("r", {d});
    auto h = b.relu(b.affine(r, 8, normal(8 * d, 0.6, rng), normal(8, 0.2, rng)));
    return b.build(b.affine(h, d, normal(d * 8, 0.4, rng), std::vector<float>(d, 0.0f)));
}

/// z = E x' + n + eps with E small, h = ReLU(z + 3) always active, and the
/// wrong class wins once z_1 has moved by kPlantedThreshold from its clean value.
struct Planted {
    ModelSet models;
    Tensor image;
};

Planted planted(std::size_t d, std::uint64_t seed, NetworkGraph generator) {
    std::mt19937_64 rng(seed);
    const std::size_t pixels = shape_numel(kImageShape);
    Tensor image = random_image(rng);
    auto E = normal(d * pixels, 1.0, rng);
    const auto u = blur_drift(image, BlurSpec::box(3, 0.0, 1.0));
    double drift = 0.0;
    for (std::size_t k = 0; k < d; ++k) {
        double row = 0.0;
        for (std::size_t i = 0; i < pixels; ++i)
            row += std::abs(E[k * pixels + i]) * u[i];
        drift = std::max(drift, row);
    }
    const double scale = std::min(1.0, 0.99 * kPlantedDrift / drift);
    for (auto &w : E)
        w = static_cast<float>(w * scale);
    const double z1 = matvec(E, d, image_values(image))[0];

    std::vector<float> C(2 * d, 0.0f);
    C[d] = 1.0f;
    std::vector<float> Cb{0.0f, static_cast<float>(-(3.0 + z1 + kPlantedThreshold))};
    return {model_set(std::move(generator), encoder_graph(d, std::move(E)),
                      decoder_graph(d, d, identity(d), std::vector<float>(d, 3.0f)),
                      classifier_graph(d, 2, std::move(C), std::move(Cb)), d),
            std::move(image)};
}

Fixture planted_sat(const std::string &name, std::size_t d, std::uint64_t seed) {
    auto p = planted(d, seed, identity_generator(d));
    Fixture f;
    f.name = name;
    f.seed = seed;
    f.models = std::move(p.models);
    f.properties.push_back({"motivating", motivating_property(std::move(p.image), 0), VerdictStatus::Sat});
    return f;
}

Fixture constant_gen(std::uint64_t seed) {
    auto p = planted(2, seed, constant_generator({0.3f, -0.2f}));
    Fixture f;
    f.name = "constant-gen";
    f.seed = seed;
    f.models = std::move(p.models);
    PropertySpec loose = motivating_property(p.image, 0);
    loose.awgn_sigma = 0.0;
    PropertySpec tight = loose;
    tight.rho = 0.04;
    f.properties.push_back({"rho025", std::move(loose), VerdictStatus::Sat});
    f.properties.push_back({"rho004", std::move(tight), VerdictStatus::Unsat});
    return f;
}

Fixture zero_weight(std::uint64_t seed) {
    std::mt19937_64 rng(seed);
    const std::size_t d = 2, pixels = shape_numel(kImageShape), width = 4, classes = 3;
    Fixture f;
    f.name = "zero-weight";
    f.seed = seed;
    f.models = model_set(identity_generator(d), encoder_graph(d, std::vector<float>(d * pixels, 0.0f)),
                         decoder_graph(d, width, std::vector<float>(width * d, 0.0f), std::vector<float>(width, 0.0f)),
                         classifier_graph(width, classes, std::vector<float>(classes * width, 0.0f), {1.0f, 0.0f, 0.0f}),
                         d);
    f.properties.push_back({"motivating", motivating_property(random_image(rng), 0), VerdictStatus::Unsat});
    return f;
}

/// Margin is z_1 = x_0 + n_1 through an always-active ReLU, so a property is
/// sat exactly when the largest reachable n_1 = min(r_U, sqrt(rho)) reaches -x_0.
Fixture rho_trend(std::uint64_t seed) {
    std::mt19937_64 rng(seed);
    const std::size_t d = 2, pixels = shape_numel(kImageShape);
    const std::vector<double> thresholds{0.07, 0.17, 0.33, 0.52, 0.9};
    std::vector<float> E(d * pixels, 0.0f);
    E[0] = 1.0f;
    E[pixels + 1] = 1.0f;
    std::vector<float> C(2 * d, 0.0f);
    C[d] = 1.0f;

    BenchmarkManifest bench;
    BlurSpec blur;
    blur.s_lower = 0.0;
    blur.s_upper = 1.0;
    bench.blur = blur;
    for (double c : thresholds) {
        Tensor img = random_image(rng);
        std::vector<float> v = img.values();
        v[0] = static_cast<float>(-c);
        bench.images.push_back({Tensor(kImageShape, std::move(v)), 0});
    }
    bench.trigger_intervals = {{-1.0, 1.0}, {-0.5, 0.5}, {-0.75, 0.25}, {-0.25, 0.75}};
    bench.rho = {0.01, 0.04, 0.16, 0.36};
    bench.awgn_sigma = 0.0;
    bench.timeout_seconds = 20.0;

    Fixture f;
    f.name = "rho-trend";
    f.seed = seed;
    f.models = model_set(identity_generator(d), encoder_graph(d, std::move(E)),
                         decoder_graph(d, d, identity(d), std::vector<float>(d, 3.0f)),
                         classifier_graph(d, 2, std::move(C), {0.0f, -3.0f}), d);
    for (auto &[id, spec] : bench.expand()) {
        const double reach = std::min(spec.trigger_upper, std::sqrt(*spec.rho));
        const double need = -static_cast<double>(spec.clean_input[0]);
        f.properties.push_back({id, spec, reach >= need ? VerdictStatus::Sat : VerdictStatus::Unsat});
    }
    f.benchmark = std::move(bench);
    return f;
}

} // namespace

NetworkGraph identity_generator(std::size_t d) {
    GraphBuilder b;
    auto r = b.input("r", {d});
    return b.build(b.affine(r, d, identity(d), std::vector<float>(d, 0.0f)));
}

NetworkGraph constant_generator(std::vector<float> values) {
    const std::size_t d = values.size();
    GraphBuilder b;
    auto r = b.input("r", {d});
    return b.build(b.affine(r, d, std::vector<float>(d * d, 0.0f), std::move(values)));
}

const std::vector<std::string> &fixture_names() {
    static const std::vector<std::string> names{"robust-2d",    "robust-4d",    "planted-sat-2d", "planted-sat-4d",
                                                "identity-gen", "constant-gen", "zero-weight",    "rho-trend"};
    return names;
}

Fixture build_fixture(const std::string &name, std::uint64_t seed) {
    if (name == "robust-2d" || name == "robust-4d") {
        const std::size_t d = name == "robust-2d" ? 2 : 4;
        std::mt19937_64 rng(seed ^ 0x9e3779b97f4a7c15ull);
        return robust(name, d, seed, random_generator(d, rng));
    }
    if (name == "identity-gen")
        return robust(name, 2, seed, identity_generator(2));
    if (name == "planted-sat-2d")
        return planted_sat(name, 2, seed);
    if (name == "planted-sat-4d")
        return planted_sat(name, 4, seed);
    if (name == "constant-gen")
        return constant_gen(seed);
    if (name == "zero-weight")
        return zero_weight(seed);
    if (name == "rho-trend")
        return rho_trend(seed);
    throw Error(ErrorCode::InvalidArgument, "unknown fixture '" + name + "'");
}

void write_fixture(const Fixture &fixture, const std::filesystem::path &dir) {
    save_model_dir(fixture.models, dir);
    nlohmann::json expected = nlohmann::json::object();
    for (const auto &p : fixture.properties) {
        if (!fixture.benchmark)
            save_property(p.spec, dir / (p.id + ".property.json"));
        expected[p.id] = to_string(p.expected);
    }
    if (fixture.benchmark)
        write_text_file(dir / kBenchmarkFile, benchmark_to_json(*fixture.benchmark));
    nlohmann::json j{{"fixture", fixture.name}, {"seed", fixture.seed}, {"expected", expected}};
    write_text_file(dir / kExpectedFile, j.dump(2) + "\n");
}

Fixture make_fixture(const std::string &name, std::uint64_t seed, const std::filesystem::path &dir) {
    Fixture f = build_fixture(name, seed);
    write_fixture(f, dir);
    return f;
}

std::map<std::string, VerdictStatus> read_expected(const std::filesystem::path &dir) {
    nlohmann::json j;
    try {
        j = nlohmann::json::parse(read_text_file(dir / kExpectedFile));
    } catch (const nlohmann::json::exception &e) {
        throw Error(ErrorCode::Format, std::string("expected.json: ") + e.what());
    }
    std::map<std::string, VerdictStatus> out;
    if (!j.contains("expected") || !j["expected"].is_object())
        throw Error(ErrorCode::Format, "expected.json lacks an 'expected' object");
    for (const auto &[id, v] : j["expected"].items()) {
        if (!v.is_string())
            throw Error(ErrorCode::Format, "expected verdict for " + id + " must be a string");
        out[id] = verdict_status_from_string(v.get<std::string>());
    }
    return out;
}

} // namespace semverify
