#pragma once

#include "semverify/compose.hpp"
#include "semverify/graph.hpp"
#include "semverify/noisebounds.hpp"
#include "semverify/verify.hpp"

#include <filesystem>
#include <optional>
#include <string>
#include <vector>

namespace semverify {

inline constexpr int kFormatVersion = 1;

enum class ModelRole { Encoder, Decoder, Classifier, Generator, Discriminator };
const char *to_string(ModelRole r);
ModelRole model_role_from_string(const std::string &s);

struct ModelMetadata {
    ModelRole role = ModelRole::Generator;
    std::size_t latent_dim = 0;
    /// Present iff role == Encoder.
    std::optional<double> latent_power;
    /// Blob file name, relative to the manifest's directory. Empty means
    /// "<stem>.weights.bin" where <stem> is the manifest name without
    /// ".manifest.json".
    std::string weight_blob;
};

struct LoadedModel {
    NetworkGraph graph;
    ModelMetadata meta;
};

/// Reads `<name>.manifest.json` and its little-endian float32 blob. Throws
/// VersionMismatch, BlobLength, NonFinite, Format, Io or InvalidGraph.
LoadedModel load_model(const std::filesystem::path &manifest);
/// Writes the manifest and the blob next to it.
void save_model(const NetworkGraph &graph, const ModelMetadata &meta, const std::filesystem::path &manifest);

/// Manifest JSON (without the blob) and the blob bytes, for in-memory use.
std::string model_manifest_json(const NetworkGraph &graph, const ModelMetadata &meta);
std::vector<unsigned char> model_blob(const NetworkGraph &graph);
LoadedModel parse_model(const std::string &manifest_json, const std::vector<unsigned char> &blob);

std::string property_to_json(const PropertySpec &spec);
PropertySpec property_from_json(const std::string &text);
PropertySpec load_property(const std::filesystem::path &path);
void save_property(const PropertySpec &spec, const std::filesystem::path &path);

std::string noise_bounds_to_json(const NoiseBoundsResult &res);
NoiseBoundsResult noise_bounds_from_json(const std::string &text);

struct ResultStats {
    std::size_t branch_count = 0;
    std::size_t bound_calls = 0;
    std::size_t open_nodes = 0;
    double wall_time_s = 0.0;
    Box noise_bounds;
};

struct ResultRecord {
    std::string property_id;
    VerdictStatus verdict = VerdictStatus::Timeout;
    /// Present iff verdict is sat or sat_unrealized.
    std::optional<Counterexample> counterexample;
    ResultStats stats;
    std::string decided_by;
    bool noise_bounds_converged = true;

    /// Throws Format when the counterexample/verdict invariant is broken.
    void validate() const;
};

ResultRecord make_result(const std::string &property_id, const VScanResult &run);
/// One JSON object, no trailing newline.
std::string result_to_json_line(const ResultRecord &rec);
ResultRecord result_from_json_line(const std::string &line);
std::vector<ResultRecord> read_results(const std::filesystem::path &path);
void write_results(const std::vector<ResultRecord> &records, const std::filesystem::path &path);

/// The four models a run needs, stored in one directory as
/// generator/encoder/decoder/classifier.manifest.json.
struct ModelSet {
    LoadedModel generator;
    LoadedModel encoder;
    LoadedModel decoder;
    LoadedModel classifier;

    VScanModels view() const;
};

inline constexpr const char *kModelFiles[] = {"generator", "encoder", "decoder", "classifier"};

/// Checks roles and that every latent_dim agrees. Throws like load_model.
ModelSet load_model_dir(const std::filesystem::path &dir);
void save_model_dir(const ModelSet &models, const std::filesystem::path &dir);

struct BenchmarkImage {
    Tensor clean_input;
    std::size_t true_label = 0;
};

/// Cartesian grid of images x trigger intervals x power values sharing one
/// blur, noise level and per-property timeout. Stored as benchmark.json.
struct BenchmarkManifest {
    std::vector<BenchmarkImage> images;
    BlurSpec blur;
    std::vector<std::pair<double, double>> trigger_intervals;
    /// Exactly one of the two lists is non-empty.
    std::vector<double> pnr_db;
    std::vector<double> rho;
    double awgn_sigma = 0.0;
    double timeout_seconds = 60.0;

    std::size_t size() const;
    /// Properties in image-major order with ids "img<i>-trig<j>-<rho|pnr><k>".
    std::vector<std::pair<std::string, PropertySpec>> expand() const;
};

inline constexpr const char *kBenchmarkFile = "benchmark.json";

std::string benchmark_to_json(const BenchmarkManifest &bench);
BenchmarkManifest benchmark_from_json(const std::string &text);

/// benchmark.json when present, else every *.property.json sorted by name
/// (ids are the file stems). Throws Format when the directory holds neither.
std::vector<std::pair<std::string, PropertySpec>> load_benchmark_dir(const std::filesystem::path &dir);

/// Parsed form of an exchange-format property.
struct ExchangeProperty {
    Box input_box;
    std::size_t num_outputs = 0;
    /// Each disjunct (winner, true_label) stands for Y_winner >= Y_true_label.
    std::vector<std::pair<std::size_t, std::size_t>> disjuncts;
};

/// VNN-LIB style text: input box asserts and the disjunction over wrong
/// classes of "Y_c >= Y_true". Byte-deterministic. Throws UnresolvedBounds
/// when `input_box` does not cover the pipeline input.
std::string export_exchange_property(const NetworkGraph &pipeline, const Box &input_box, std::size_t true_label);
std::string export_exchange_property(const PipelineProperty &property);
ExchangeProperty parse_exchange_property(const std::string &text);

/// Shortest decimal text that parses back to exactly `v`.
std::string shortest_decimal(double v);
std::string shortest_decimal(float v);

std::string read_text_file(const std::filesystem::path &path);
void write_text_file(const std::filesystem::path &path, const std::string &text);

} // namespace semverify
