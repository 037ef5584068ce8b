#include "semverify/modelio.hpp"

#include "semverify/error.hpp"

#include <json.hpp>

#include <algorithm>
#include <charconv>
#include <cmath>
#include <cstring>
#include <fstream>
#include <set>
#include <sstream>

namespace semverify {

using nlohmann::json;

namespace {

[[noreturn]] void format_error(const std::string &msg) { throw Error(ErrorCode::Format, msg); }

void check_keys(const json &obj, const std::set<std::string> &allowed, const std::string &where) {
    if (!obj.is_object())
        format_error(where + " must be a JSON object");
    for (const auto &[key, _] : obj.items())
        if (!allowed.count(key))
            format_error(where + ": unexpected key '" + key + "'");
}

const json &field(const json &obj, const std::string &key, const std::string &where) {
    auto it = obj.find(key);
    if (it == obj.end())
        format_error(where + ": missing key '" + key + "'");
    return *it;
}

std::size_t as_size(const json &v, const std::string &what) {
    if (!v.is_number_unsigned())
        format_error(what + " must be a nonnegative integer");
    return v.get<std::size_t>();
}

double as_double(const json &v, const std::string &what) {
    if (!v.is_number())
        format_error(what + " must be a number");
    const double d = v.get<double>();
    if (!std::isfinite(d))
        format_error(what + " must be finite");
    return d;
}

bool as_bool(const json &v, const std::string &what) {
    if (!v.is_boolean())
        format_error(what + " must be a boolean");
    return v.get<bool>();
}

std::string as_string(const json &v, const std::string &what) {
    if (!v.is_string())
        format_error(what + " must be a string");
    return v.get<std::string>();
}

Shape as_shape(const json &v, const std::string &what) {
    if (!v.is_array())
        format_error(what + " must be an array");
    Shape s;
    for (const auto &e : v)
        s.push_back(as_size(e, what));
    return s;
}

std::vector<double> as_doubles(const json &v, const std::string &what) {
    if (!v.is_array())
        format_error(what + " must be an array");
    std::vector<double> out;
    out.reserve(v.size());
    for (const auto &e : v)
        out.push_back(as_double(e, what));
    return out;
}

/// A float as the JSON number whose shortest text parses back to that float.
json float_number(float f) { return std::stod(shortest_decimal(f)); }

json float_array(std::span<const float> v) {
    json a = json::array();
    for (float f : v)
        a.push_back(float_number(f));
    return a;
}

json double_array(std::span<const double> v) {
    json a = json::array();
    for (double d : v)
        a.push_back(d);
    return a;
}

std::vector<float> as_floats(const json &v, const std::string &what) {
    std::vector<float> out;
    for (double d : as_doubles(v, what)) {
        const float f = static_cast<float>(d);
        if (!std::isfinite(f))
            format_error(what + " overflows float32");
        out.push_back(f);
    }
    return out;
}

json tensor_json(const Tensor &t) { return {{"shape", t.shape()}, {"data", float_array(t.data())}}; }

Tensor tensor_from_json(const json &j, const std::string &what) {
    check_keys(j, {"shape", "data"}, what);
    auto shape = as_shape(field(j, "shape", what), what + ".shape");
    auto data = as_floats(field(j, "data", what), what + ".data");
    try {
        return Tensor(std::move(shape), std::move(data));
    } catch (const Error &e) {
        format_error(what + ": " + e.what());
    }
}

json box_json(const Box &b) { return {{"lower", double_array(b.lower())}, {"upper", double_array(b.upper())}}; }

Box box_from_json(const json &j, const std::string &what) {
    check_keys(j, {"lower", "upper"}, what);
    try {
        return Box(as_doubles(field(j, "lower", what), what), as_doubles(field(j, "upper", what), what));
    } catch (const Error &e) {
        format_error(what + ": " + e.what());
    }
}

json blur_json(const BlurSpec &blur) {
    json kernel = json::array();
    for (std::size_t r = 0; r < blur.k; ++r) {
        json row = json::array();
        for (std::size_t c = 0; c < blur.k; ++c)
            row.push_back(blur.kernel[r * blur.k + c]);
        kernel.push_back(row);
    }
    return {{"kernel", kernel}, {"s_range", {blur.s_lower, blur.s_upper}}};
}

BlurSpec blur_from_json(const json &blur) {
    check_keys(blur, {"kernel", "s_range"}, "blur");
    const json &kernel = field(blur, "kernel", "blur");
    if (!kernel.is_array() || kernel.empty())
        format_error("blur.kernel must be a non-empty square matrix");
    BlurSpec b;
    b.k = kernel.size();
    b.kernel.clear();
    for (const auto &row : kernel) {
        auto vals = as_doubles(row, "blur.kernel");
        if (vals.size() != b.k)
            format_error("blur.kernel must be square");
        b.kernel.insert(b.kernel.end(), vals.begin(), vals.end());
    }
    auto s = as_doubles(field(blur, "s_range", "blur"), "blur.s_range");
    if (s.size() != 2)
        format_error("blur.s_range must be [s_L, s_U]");
    b.s_lower = s[0];
    b.s_upper = s[1];
    return b;
}

json parse_json(const std::string &text, const std::string &what) {
    try {
        return json::parse(text);
    } catch (const json::exception &e) {
        format_error(what + " is not valid JSON: " + e.what());
    }
}

// ---- graph <-> JSON ----

json node_json(const Node &node) {
    json j;
    if (!node.inputs.empty())
        j["inputs"] = node.inputs;
    std::visit(
        [&](const auto &op) {
            using T = std::decay_t<decltype(op)>;
            if constexpr (std::is_same_v<T, InputOp>) {
                j["kind"] = "input";
                j["name"] = op.name;
                j["shape"] = op.shape;
            } else if constexpr (std::is_same_v<T, ConstantOp>) {
                j["kind"] = "constant";
                j["shape"] = op.value.shape();
            } else if constexpr (std::is_same_v<T, AffineOp>) {
                j["kind"] = "affine";
                j["out_features"] = op.out_features;
                j["in_features"] = op.in_features;
                j["bias"] = !op.bias.empty();
            } else if constexpr (std::is_same_v<T, Conv2dOp> || std::is_same_v<T, ConvTranspose2dOp>) {
                j["kind"] = std::is_same_v<T, Conv2dOp> ? "conv2d" : "conv_transpose2d";
                j["in_channels"] = op.in_channels;
                j["out_channels"] = op.out_channels;
                j["kernel"] = {op.kernel_h, op.kernel_w};
                j["stride"] = op.stride;
                j["padding"] = op.padding;
                j["bias"] = !op.bias.empty();
            } else if constexpr (std::is_same_v<T, ReluOp>) {
                j["kind"] = "relu";
            } else if constexpr (std::is_same_v<T, AddOp>) {
                j["kind"] = "add";
            } else if constexpr (std::is_same_v<T, FlattenOp>) {
                j["kind"] = "flatten";
            } else if constexpr (std::is_same_v<T, ReshapeOp>) {
                j["kind"] = "reshape";
                j["target"] = op.target;
            }
        },
        node.op);
    return j;
}

class BlobReader {
public:
    explicit BlobReader(const std::vector<unsigned char> &bytes) : bytes_(bytes) {}

    std::vector<float> take(std::size_t count, const std::string &where) {
        if (bytes_.size() / 4 < pos_ + count)
            throw Error(ErrorCode::BlobLength, "weight blob too short at " + where);
        std::vector<float> out(count);
        for (std::size_t i = 0; i < count; ++i) {
            const unsigned char *p = bytes_.data() + 4 * (pos_ + i);
            const std::uint32_t bits = std::uint32_t(p[0]) | (std::uint32_t(p[1]) << 8) |
                                       (std::uint32_t(p[2]) << 16) | (std::uint32_t(p[3]) << 24);
            std::memcpy(&out[i], &bits, 4);
            if (!std::isfinite(out[i]))
                throw Error(ErrorCode::NonFinite, "non-finite weight in " + where);
        }
        pos_ += count;
        return out;
    }
    std::size_t consumed_floats() const { return pos_; }

private:
    const std::vector<unsigned char> &bytes_;
    std::size_t pos_ = 0;
};

Node node_from_json(const json &j, std::size_t id, BlobReader &blob) {
    const std::string where = "node " + std::to_string(id);
    const std::string kind = as_string(field(j, "kind", where), where + ".kind");
    Node node;
    auto inputs = [&](std::size_t arity) {
        const json &in = field(j, "inputs", where);
        if (!in.is_array() || in.size() != arity)
            format_error(where + ": '" + kind + "' takes " + std::to_string(arity) + " input(s)");
        for (const auto &e : in)
            node.inputs.push_back(as_size(e, where + ".inputs"));
    };
    if (kind == "input") {
        check_keys(j, {"kind", "name", "shape"}, where);
        node.op = InputOp{as_string(field(j, "name", where), where + ".name"),
                          as_shape(field(j, "shape", where), where + ".shape")};
    } else if (kind == "constant") {
        check_keys(j, {"kind", "shape"}, where);
        auto shape = as_shape(field(j, "shape", where), where + ".shape");
        auto values = blob.take(shape_numel(shape), where);
        node.op = ConstantOp{Tensor(std::move(shape), std::move(values))};
    } else if (kind == "affine") {
        check_keys(j, {"kind", "inputs", "out_features", "in_features", "bias"}, where);
        inputs(1);
        AffineOp op;
        op.out_features = as_size(field(j, "out_features", where), where + ".out_features");
        op.in_features = as_size(field(j, "in_features", where), where + ".in_features");
        op.weights = blob.take(op.out_features * op.in_features, where);
        if (as_bool(field(j, "bias", where), where + ".bias"))
            op.bias = blob.take(op.out_features, where);
        node.op = std::move(op);
    } else if (kind == "conv2d" || kind == "conv_transpose2d") {
        check_keys(j, {"kind", "inputs", "in_channels", "out_channels", "kernel", "stride", "padding", "bias"}, where);
        inputs(1);
        const std::size_t cin = as_size(field(j, "in_channels", where), where + ".in_channels");
        const std::size_t cout = as_size(field(j, "out_channels", where), where + ".out_channels");
        auto kernel = as_shape(field(j, "kernel", where), where + ".kernel");
        if (kernel.size() != 2)
            format_error(where + ".kernel must be [kh, kw]");
        const std::size_t stride = as_size(field(j, "stride", where), where + ".stride");
        const std::size_t padding = as_size(field(j, "padding", where), where + ".padding");
        const bool bias = as_bool(field(j, "bias", where), where + ".bias");
        auto weights = blob.take(cin * cout * kernel[0] * kernel[1], where);
        std::vector<float> b;
        if (bias)
            b = blob.take(cout, where);
        if (kind == "conv2d")
            node.op = Conv2dOp{cout, cin, kernel[0], kernel[1], stride, padding, std::move(weights), std::move(b)};
        else
            node.op = ConvTranspose2dOp{cin,     cout, kernel[0], kernel[1], stride, padding, std::move(weights),
                                        std::move(b)};
    } else if (kind == "relu" || kind == "flatten") {
        check_keys(j, {"kind", "inputs"}, where);
        inputs(1);
        if (kind == "relu")
            node.op = ReluOp{};
        else
            node.op = FlattenOp{};
    } else if (kind == "add") {
        check_keys(j, {"kind", "inputs"}, where);
        inputs(2);
        node.op = AddOp{};
    } else if (kind == "reshape") {
        check_keys(j, {"kind", "inputs", "target"}, where);
        inputs(1);
        node.op = ReshapeOp{as_shape(field(j, "target", where), where + ".target")};
    } else {
        format_error(where + ": unknown node kind '" + kind + "'");
    }
    return node;
}

void append_blob(std::vector<unsigned char> &out, std::span<const float> values) {
    for (float f : values) {
        std::uint32_t bits;
        std::memcpy(&bits, &f, 4);
        for (int b = 0; b < 4; ++b)
            out.push_back(static_cast<unsigned char>((bits >> (8 * b)) & 0xffu));
    }
}

std::string default_stem(const std::filesystem::path &manifest) {
    std::string name = manifest.filename().string();
    const std::string suffix = ".manifest.json";
    if (name.size() > suffix.size() && name.compare(name.size() - suffix.size(), suffix.size(), suffix) == 0)
        return name.substr(0, name.size() - suffix.size());
    return manifest.stem().string();
}

void check_latent(const NetworkGraph &g, const ModelMetadata &meta) {
    const std::size_t d = meta.latent_dim;
    if (d == 0)
        format_error("latent_dim must be positive");
    auto input_numel = [&] { return g.input_ids().size() == 1 ? g.numel(g.input_ids()[0]) : 0; };
    switch (meta.role) {
    case ModelRole::Encoder:
        if (g.numel(g.output()) != d)
            format_error("encoder output size differs from latent_dim");
        break;
    case ModelRole::Decoder:
        if (input_numel() != d)
            format_error("decoder input size differs from latent_dim");
        break;
    case ModelRole::Generator:
        if (input_numel() != d || g.numel(g.output()) != d)
            format_error("generator must map latent_dim triggers to latent_dim noise");
        break;
    default:
        break;
    }
    if ((meta.role == ModelRole::Encoder) != meta.latent_power.has_value())
        format_error("latent_power must be present exactly for the encoder role");
    if (meta.latent_power && !(*meta.latent_power >= 0.0))
        format_error("latent_power must be nonnegative");
}

} // namespace

const char *to_string(ModelRole r) {
    switch (r) {
    case ModelRole::Encoder:
        return "encoder";
    case ModelRole::Decoder:
        return "decoder";
    case ModelRole::Classifier:
        return "classifier";
    case ModelRole::Generator:
        return "generator";
    case ModelRole::Discriminator:
        return "discriminator";
    }
    return "?";
}

ModelRole model_role_from_string(const std::string &s) {
    for (auto r : {ModelRole::Encoder, ModelRole::Decoder, ModelRole::Classifier, ModelRole::Generator,
                   ModelRole::Discriminator})
        if (s == to_string(r))
            return r;
    format_error("unknown model role '" + s + "'");
}

std::string shortest_decimal(double v) {
    char buf[64];
    auto res = std::to_chars(buf, buf + sizeof buf, v, std::chars_format::fixed);
    if (res.ec != std::errc())
        res = std::to_chars(buf, buf + sizeof buf, v);
    return std::string(buf, res.ptr);
}

std::string shortest_decimal(float v) {
    char buf[64];
    auto res = std::to_chars(buf, buf + sizeof buf, v);
    return std::string(buf, res.ptr);
}

std::string read_text_file(const std::filesystem::path &path) {
    std::ifstream in(path, std::ios::binary);
    if (!in)
        throw Error(ErrorCode::Io, "cannot open " + path.string());
    std::ostringstream ss;
    ss << in.rdbuf();
    return ss.str();
}

void write_text_file(const std::filesystem::path &path, const std::string &text) {
    std::ofstream out(path, std::ios::binary);
    if (!out)
        throw Error(ErrorCode::Io, "cannot write " + path.string());
    out << text;
    if (!out)
        throw Error(ErrorCode::Io, "write failed for " + path.string());
}

std::string model_manifest_json(const NetworkGraph &graph, const ModelMetadata &meta) {
    graph.require_valid();
    json nodes = json::array();
    for (const Node &n : graph.nodes())
        nodes.push_back(node_json(n));
    json j;
    j["format_version"] = kFormatVersion;
    j["role"] = to_string(meta.role);
    j["latent_dim"] = meta.latent_dim;
    if (meta.latent_power)
        j["latent_power"] = *meta.latent_power;
    j["weight_blob"] = meta.weight_blob;
    j["graph"] = {{"nodes", nodes}, {"output", graph.output()}};
    return j.dump(2) + "\n";
}

std::vector<unsigned char> model_blob(const NetworkGraph &graph) {
    std::vector<unsigned char> out;
    out.reserve(4 * graph.parameter_count());
    for (const Node &node : graph.nodes())
        std::visit(
            [&](const auto &op) {
                using T = std::decay_t<decltype(op)>;
                if constexpr (std::is_same_v<T, ConstantOp>) {
                    append_blob(out, op.value.data());
                } else if constexpr (std::is_same_v<T, AffineOp>) {
                    append_blob(out, op.weights);
                    append_blob(out, op.bias);
                } else if constexpr (std::is_same_v<T, Conv2dOp> || std::is_same_v<T, ConvTranspose2dOp>) {
                    append_blob(out, op.kernels);
                    append_blob(out, op.bias);
                }
            },
            node.op);
    return out;
}

LoadedModel parse_model(const std::string &manifest_json, const std::vector<unsigned char> &blob) {
    json j = parse_json(manifest_json, "manifest");
    check_keys(j, {"format_version", "role", "latent_dim", "latent_power", "weight_blob", "graph"}, "manifest");
    const json &ver = field(j, "format_version", "manifest");
    if (!ver.is_number_integer())
        format_error("format_version must be an integer");
    if (ver.get<long long>() != kFormatVersion)
        throw Error(ErrorCode::VersionMismatch, "manifest format_version " + ver.dump() + ", expected " +
                                                    std::to_string(kFormatVersion));
    LoadedModel m;
    m.meta.role = model_role_from_string(as_string(field(j, "role", "manifest"), "role"));
    m.meta.latent_dim = as_size(field(j, "latent_dim", "manifest"), "latent_dim");
    if (j.contains("latent_power"))
        m.meta.latent_power = as_double(j["latent_power"], "latent_power");
    m.meta.weight_blob = as_string(field(j, "weight_blob", "manifest"), "weight_blob");

    const json &g = field(j, "graph", "manifest");
    check_keys(g, {"nodes", "output"}, "graph");
    const json &nodes = field(g, "nodes", "graph");
    if (!nodes.is_array())
        format_error("graph.nodes must be an array");
    if (blob.size() % 4 != 0)
        throw Error(ErrorCode::BlobLength, "weight blob length " + std::to_string(blob.size()) +
                                               " is not a multiple of 4");
    BlobReader reader(blob);
    std::vector<Node> parsed;
    for (std::size_t i = 0; i < nodes.size(); ++i)
        parsed.push_back(node_from_json(nodes[i], i, reader));
    if (reader.consumed_floats() * 4 != blob.size())
        throw Error(ErrorCode::BlobLength, "weight blob has " + std::to_string(blob.size()) + " bytes, graph needs " +
                                               std::to_string(reader.consumed_floats() * 4));
    m.graph = NetworkGraph(std::move(parsed), as_size(field(g, "output", "graph"), "graph.output"));
    m.graph.require_valid();
    check_latent(m.graph, m.meta);
    return m;
}

LoadedModel load_model(const std::filesystem::path &manifest) {
    const std::string text = read_text_file(manifest);
    json j = parse_json(text, manifest.string());
    std::string blob_name = j.contains("weight_blob") && j["weight_blob"].is_string()
                                ? j["weight_blob"].get<std::string>()
                                : std::string();
    if (blob_name.empty())
        blob_name = default_stem(manifest) + ".weights.bin";
    const auto blob_path = manifest.parent_path() / blob_name;
    std::ifstream in(blob_path, std::ios::binary);
    if (!in)
        throw Error(ErrorCode::Io, "cannot open weight blob " + blob_path.string());
    std::vector<unsigned char> blob((std::istreambuf_iterator<char>(in)), std::istreambuf_iterator<char>());
    return parse_model(text, blob);
}

void save_model(const NetworkGraph &graph, const ModelMetadata &meta, const std::filesystem::path &manifest) {
    ModelMetadata m = meta;
    if (m.weight_blob.empty())
        m.weight_blob = default_stem(manifest) + ".weights.bin";
    check_latent(graph, m);
    write_text_file(manifest, model_manifest_json(graph, m));
    auto blob = model_blob(graph);
    std::ofstream out(manifest.parent_path() / m.weight_blob, std::ios::binary);
    if (!out)
        throw Error(ErrorCode::Io, "cannot write weight blob for " + manifest.string());
    out.write(reinterpret_cast<const char *>(blob.data()), static_cast<std::streamsize>(blob.size()));
    if (!out)
        throw Error(ErrorCode::Io, "write failed for weight blob of " + manifest.string());
}

// ---- property files ----

std::string property_to_json(const PropertySpec &spec) {
    spec.validate();
    json j;
    j["format_version"] = kFormatVersion;
    j["clean_input"] = tensor_json(spec.clean_input);
    j["true_label"] = spec.true_label;
    j["blur"] = blur_json(spec.blur);
    j["trigger_range"] = {spec.trigger_lower, spec.trigger_upper};
    if (spec.pnr_db)
        j["pnr_db"] = *spec.pnr_db;
    if (spec.rho)
        j["rho"] = *spec.rho;
    j["awgn_sigma"] = spec.awgn_sigma;
    j["timeout_seconds"] = spec.timeout_seconds;
    return j.dump(2) + "\n";
}

PropertySpec property_from_json(const std::string &text) {
    json j = parse_json(text, "property");
    check_keys(j,
               {"format_version", "clean_input", "true_label", "blur", "trigger_range", "pnr_db", "rho", "awgn_sigma",
                "timeout_seconds"},
               "property");
    const json &ver = field(j, "format_version", "property");
    if (!ver.is_number_integer() || ver.get<long long>() != kFormatVersion)
        throw Error(ErrorCode::VersionMismatch, "property format_version " + ver.dump() + ", expected " +
                                                    std::to_string(kFormatVersion));
    PropertySpec p;
    p.clean_input = tensor_from_json(field(j, "clean_input", "property"), "clean_input");
    p.true_label = as_size(field(j, "true_label", "property"), "true_label");
    p.blur = blur_from_json(field(j, "blur", "property"));
    auto r = as_doubles(field(j, "trigger_range", "property"), "trigger_range");
    if (r.size() != 2)
        format_error("trigger_range must be [r_L, r_U]");
    p.trigger_lower = r[0];
    p.trigger_upper = r[1];
    if (j.contains("pnr_db"))
        p.pnr_db = as_double(j["pnr_db"], "pnr_db");
    if (j.contains("rho"))
        p.rho = as_double(j["rho"], "rho");
    p.awgn_sigma = as_double(field(j, "awgn_sigma", "property"), "awgn_sigma");
    p.timeout_seconds = as_double(field(j, "timeout_seconds", "property"), "timeout_seconds");
    try {
        p.validate();
    } catch (const Error &e) {
        format_error(std::string("invalid property: ") + e.what());
    }
    return p;
}

PropertySpec load_property(const std::filesystem::path &path) { return property_from_json(read_text_file(path)); }

void save_property(const PropertySpec &spec, const std::filesystem::path &path) {
    write_text_file(path, property_to_json(spec));
}

// ---- noise bounds ----

std::string noise_bounds_to_json(const NoiseBoundsResult &res) {
    json j;
    j["format_version"] = kFormatVersion;
    j["rho"] = res.rho;
    j["bounds"] = box_json(res.bounds);
    j["raw"] = box_json(res.raw);
    j["clamped"] = res.clamped;
    j["infeasible"] = res.infeasible;
    j["exact_gap"] = res.exact_gap;
    j["stats"] = {{"nodes", res.stats.nodes},
                  {"bound_calls", res.stats.bound_calls},
                  {"wall_time_s", res.stats.wall_time_s},
                  {"budget_exhausted", res.stats.budget_exhausted}};
    return j.dump(2) + "\n";
}

NoiseBoundsResult noise_bounds_from_json(const std::string &text) {
    json j = parse_json(text, "noise bounds");
    check_keys(j, {"format_version", "rho", "bounds", "raw", "clamped", "infeasible", "exact_gap", "stats"},
               "noise bounds");
    const json &ver = field(j, "format_version", "noise bounds");
    if (!ver.is_number_integer() || ver.get<long long>() != kFormatVersion)
        throw Error(ErrorCode::VersionMismatch, "noise bounds format_version mismatch");
    NoiseBoundsResult r;
    r.rho = as_double(field(j, "rho", "noise bounds"), "rho");
    r.bounds = box_from_json(field(j, "bounds", "noise bounds"), "bounds");
    r.raw = box_from_json(field(j, "raw", "noise bounds"), "raw");
    auto bools = [&](const char *key) {
        const json &a = field(j, key, "noise bounds");
        if (!a.is_array() || a.size() != r.bounds.size())
            format_error(std::string(key) + " must have one entry per dimension");
        std::vector<bool> out;
        for (const auto &e : a)
            out.push_back(as_bool(e, key));
        return out;
    };
    r.clamped = bools("clamped");
    r.infeasible = bools("infeasible");
    r.exact_gap = as_doubles(field(j, "exact_gap", "noise bounds"), "exact_gap");
    if (r.exact_gap.size() != r.bounds.size() || r.raw.size() != r.bounds.size())
        format_error("noise bounds dimensions disagree");
    const json &st = field(j, "stats", "noise bounds");
    check_keys(st, {"nodes", "bound_calls", "wall_time_s", "budget_exhausted"}, "stats");
    r.stats.nodes = as_size(field(st, "nodes", "stats"), "nodes");
    r.stats.bound_calls = as_size(field(st, "bound_calls", "stats"), "bound_calls");
    r.stats.wall_time_s = as_double(field(st, "wall_time_s", "stats"), "wall_time_s");
    r.stats.budget_exhausted = as_bool(field(st, "budget_exhausted", "stats"), "budget_exhausted");
    return r;
}

// ---- results ----

void ResultRecord::validate() const {
    const bool is_sat = verdict == VerdictStatus::Sat || verdict == VerdictStatus::SatUnrealized;
    if (is_sat != counterexample.has_value())
        format_error("result '" + property_id + "': counterexample must be present exactly for sat verdicts");
}

ResultRecord make_result(const std::string &property_id, const VScanResult &run) {
    ResultRecord r;
    r.property_id = property_id;
    r.verdict = run.verdict.status;
    r.counterexample = run.verdict.witness;
    r.stats.branch_count = run.verdict.stats.nodes;
    r.stats.bound_calls = run.verdict.stats.bound_calls + run.noise.stats.bound_calls;
    r.stats.open_nodes = run.verdict.stats.open_nodes;
    r.stats.wall_time_s =
        run.provenance.bounds_time_s + run.provenance.attack_time_s + run.provenance.verify_time_s;
    r.stats.noise_bounds = run.noise.bounds;
    r.decided_by = to_string(run.provenance.decided_by);
    r.noise_bounds_converged = run.provenance.noise_bounds_converged;
    r.validate();
    return r;
}

std::string result_to_json_line(const ResultRecord &rec) {
    rec.validate();
    json j;
    j["property_id"] = rec.property_id;
    j["verdict"] = to_string(rec.verdict);
    if (rec.counterexample) {
        const auto &c = *rec.counterexample;
        const std::size_t d = (c.assignment.size() - 1) / 2;
        std::span<const double> a(c.assignment);
        json cj;
        cj["s"] = double_array(a.subspan(0, 1));
        cj["n"] = double_array(a.subspan(1, d));
        cj["eps"] = double_array(a.subspan(1 + d, d));
        cj["logits"] = float_array(c.logits);
        cj["true_label"] = c.true_label;
        cj["winning_label"] = c.winning_label;
        cj["realizability"] = to_string(c.realizability);
        cj["trigger"] = c.trigger.empty() ? json(nullptr) : double_array(c.trigger);
        cj["realized_assignment"] =
            c.realized_assignment.empty() ? json(nullptr) : double_array(c.realized_assignment);
        cj["realized_logits"] = c.realized_logits.empty() ? json(nullptr) : float_array(c.realized_logits);
        j["counterexample"] = cj;
    } else {
        j["counterexample"] = nullptr;
    }
    j["stats"] = {{"branch_count", rec.stats.branch_count},
                  {"bound_calls", rec.stats.bound_calls},
                  {"open_nodes", rec.stats.open_nodes},
                  {"wall_time_s", rec.stats.wall_time_s},
                  {"noise_bounds", box_json(rec.stats.noise_bounds)}};
    j["decided_by"] = rec.decided_by;
    j["noise_bounds_converged"] = rec.noise_bounds_converged;
    return j.dump();
}

ResultRecord result_from_json_line(const std::string &line) {
    json j = parse_json(line, "result line");
    check_keys(j, {"property_id", "verdict", "counterexample", "stats", "decided_by", "noise_bounds_converged"},
               "result");
    ResultRecord r;
    r.property_id = as_string(field(j, "property_id", "result"), "property_id");
    r.verdict = verdict_status_from_string(as_string(field(j, "verdict", "result"), "verdict"));
    const json &cj = field(j, "counterexample", "result");
    if (!cj.is_null()) {
        check_keys(cj,
                   {"s", "n", "eps", "logits", "true_label", "winning_label", "realizability", "trigger",
                    "realized_assignment", "realized_logits"},
                   "counterexample");
        Counterexample c;
        for (const char *part : {"s", "n", "eps"}) {
            auto v = as_doubles(field(cj, part, "counterexample"), part);
            c.assignment.insert(c.assignment.end(), v.begin(), v.end());
        }
        c.logits = as_floats(field(cj, "logits", "counterexample"), "logits");
        c.true_label = as_size(field(cj, "true_label", "counterexample"), "true_label");
        c.winning_label = as_size(field(cj, "winning_label", "counterexample"), "winning_label");
        const std::string real = as_string(field(cj, "realizability", "counterexample"), "realizability");
        if (real == "unchecked")
            c.realizability = Realizability::Unchecked;
        else if (real == "realizable")
            c.realizability = Realizability::Realizable;
        else if (real == "unrealizable")
            c.realizability = Realizability::Unrealizable;
        else
            format_error("unknown realizability '" + real + "'");
        const json &t = field(cj, "trigger", "counterexample");
        if (!t.is_null())
            c.trigger = as_doubles(t, "trigger");
        const json &ra = field(cj, "realized_assignment", "counterexample");
        if (!ra.is_null())
            c.realized_assignment = as_doubles(ra, "realized_assignment");
        const json &rl = field(cj, "realized_logits", "counterexample");
        if (!rl.is_null())
            c.realized_logits = as_floats(rl, "realized_logits");
        r.counterexample = std::move(c);
    }
    const json &st = field(j, "stats", "result");
    check_keys(st, {"branch_count", "bound_calls", "open_nodes", "wall_time_s", "noise_bounds"}, "stats");
    r.stats.branch_count = as_size(field(st, "branch_count", "stats"), "branch_count");
    r.stats.bound_calls = as_size(field(st, "bound_calls", "stats"), "bound_calls");
    r.stats.open_nodes = as_size(field(st, "open_nodes", "stats"), "open_nodes");
    r.stats.wall_time_s = as_double(field(st, "wall_time_s", "stats"), "wall_time_s");
    r.stats.noise_bounds = box_from_json(field(st, "noise_bounds", "stats"), "noise_bounds");
    r.decided_by = as_string(field(j, "decided_by", "result"), "decided_by");
    r.noise_bounds_converged = as_bool(field(j, "noise_bounds_converged", "result"), "noise_bounds_converged");
    r.validate();
    return r;
}

std::vector<ResultRecord> read_results(const std::filesystem::path &path) {
    std::istringstream in(read_text_file(path));
    std::vector<ResultRecord> out;
    std::string line;
    while (std::getline(in, line))
        if (!line.empty())
            out.push_back(result_from_json_line(line));
    return out;
}

void write_results(const std::vector<ResultRecord> &records, const std::filesystem::path &path) {
    std::string text;
    for (const auto &r : records)
        text += result_to_json_line(r) + "\n";
    write_text_file(path, text);
}

// ---- model directories and benchmarks ----

VScanModels ModelSet::view() const {
    return VScanModels{generator.graph, encoder.graph, decoder.graph, classifier.graph,
                       encoder.meta.latent_power.value_or(0.0)};
}

ModelSet load_model_dir(const std::filesystem::path &dir) {
    ModelSet m;
    LoadedModel *slots[] = {&m.generator, &m.encoder, &m.decoder, &m.classifier};
    const ModelRole roles[] = {ModelRole::Generator, ModelRole::Encoder, ModelRole::Decoder, ModelRole::Classifier};
    for (std::size_t i = 0; i < 4; ++i) {
        const auto path = dir / (std::string(kModelFiles[i]) + ".manifest.json");
        *slots[i] = load_model(path);
        if (slots[i]->meta.role != roles[i])
            format_error(path.string() + " has role " + to_string(slots[i]->meta.role) + ", expected " +
                         to_string(roles[i]));
        if (slots[i]->meta.latent_dim != m.generator.meta.latent_dim)
            format_error(path.string() + " disagrees on latent_dim");
    }
    return m;
}

void save_model_dir(const ModelSet &models, const std::filesystem::path &dir) {
    std::filesystem::create_directories(dir);
    const LoadedModel *slots[] = {&models.generator, &models.encoder, &models.decoder, &models.classifier};
    for (std::size_t i = 0; i < 4; ++i)
        save_model(slots[i]->graph, slots[i]->meta, dir / (std::string(kModelFiles[i]) + ".manifest.json"));
}

std::size_t BenchmarkManifest::size() const {
    return images.size() * trigger_intervals.size() * (pnr_db.empty() ? rho.size() : pnr_db.size());
}

std::vector<std::pair<std::string, PropertySpec>> BenchmarkManifest::expand() const {
    if (pnr_db.empty() == rho.empty())
        throw Error(ErrorCode::InvalidArgument, "benchmark needs exactly one of pnr_db and rho");
    const bool use_rho = !rho.empty();
    const auto &powers = use_rho ? rho : pnr_db;
    std::vector<std::pair<std::string, PropertySpec>> out;
    for (std::size_t i = 0; i < images.size(); ++i)
        for (std::size_t j = 0; j < trigger_intervals.size(); ++j)
            for (std::size_t k = 0; k < powers.size(); ++k) {
                PropertySpec p;
                p.clean_input = images[i].clean_input;
                p.true_label = images[i].true_label;
                p.blur = blur;
                p.trigger_lower = trigger_intervals[j].first;
                p.trigger_upper = trigger_intervals[j].second;
                if (use_rho)
                    p.rho = powers[k];
                else
                    p.pnr_db = powers[k];
                p.awgn_sigma = awgn_sigma;
                p.timeout_seconds = timeout_seconds;
                p.validate();
                out.emplace_back("img" + std::to_string(i) + "-trig" + std::to_string(j) +
                                     (use_rho ? "-rho" : "-pnr") + std::to_string(k),
                                 std::move(p));
            }
    return out;
}

std::string benchmark_to_json(const BenchmarkManifest &bench) {
    bench.expand();
    json images = json::array();
    for (const auto &img : bench.images)
        images.push_back({{"clean_input", tensor_json(img.clean_input)}, {"true_label", img.true_label}});
    json intervals = json::array();
    for (const auto &[lo, hi] : bench.trigger_intervals)
        intervals.push_back({lo, hi});
    json j;
    j["format_version"] = kFormatVersion;
    j["images"] = images;
    j["blur"] = blur_json(bench.blur);
    j["trigger_intervals"] = intervals;
    if (!bench.pnr_db.empty())
        j["pnr_db"] = bench.pnr_db;
    if (!bench.rho.empty())
        j["rho"] = bench.rho;
    j["awgn_sigma"] = bench.awgn_sigma;
    j["timeout_seconds"] = bench.timeout_seconds;
    return j.dump(2) + "\n";
}

BenchmarkManifest benchmark_from_json(const std::string &text) {
    json j = parse_json(text, "benchmark");
    check_keys(j,
               {"format_version", "images", "blur", "trigger_intervals", "pnr_db", "rho", "awgn_sigma",
                "timeout_seconds"},
               "benchmark");
    const json &ver = field(j, "format_version", "benchmark");
    if (!ver.is_number_integer() || ver.get<long long>() != kFormatVersion)
        throw Error(ErrorCode::VersionMismatch, "benchmark format_version mismatch");
    BenchmarkManifest b;
    const json &images = field(j, "images", "benchmark");
    if (!images.is_array())
        format_error("benchmark.images must be an array");
    for (const auto &img : images) {
        check_keys(img, {"clean_input", "true_label"}, "benchmark image");
        b.images.push_back({tensor_from_json(field(img, "clean_input", "image"), "clean_input"),
                            as_size(field(img, "true_label", "image"), "true_label")});
    }
    b.blur = blur_from_json(field(j, "blur", "benchmark"));
    try {
        b.blur.validate();
    } catch (const Error &e) {
        format_error(std::string("invalid blur: ") + e.what());
    }
    const json &intervals = field(j, "trigger_intervals", "benchmark");
    if (!intervals.is_array())
        format_error("benchmark.trigger_intervals must be an array");
    for (const auto &iv : intervals) {
        auto v = as_doubles(iv, "trigger interval");
        if (v.size() != 2)
            format_error("trigger intervals must be [r_L, r_U]");
        b.trigger_intervals.emplace_back(v[0], v[1]);
    }
    if (j.contains("pnr_db"))
        b.pnr_db = as_doubles(j["pnr_db"], "pnr_db");
    if (j.contains("rho"))
        b.rho = as_doubles(j["rho"], "rho");
    b.awgn_sigma = as_double(field(j, "awgn_sigma", "benchmark"), "awgn_sigma");
    b.timeout_seconds = as_double(field(j, "timeout_seconds", "benchmark"), "timeout_seconds");
    try {
        b.expand();
    } catch (const Error &e) {
        format_error(std::string("invalid benchmark: ") + e.what());
    }
    return b;
}

std::vector<std::pair<std::string, PropertySpec>> load_benchmark_dir(const std::filesystem::path &dir) {
    if (!std::filesystem::is_directory(dir))
        throw Error(ErrorCode::Io, dir.string() + " is not a directory");
    if (std::filesystem::exists(dir / kBenchmarkFile))
        return benchmark_from_json(read_text_file(dir / kBenchmarkFile)).expand();
    const std::string suffix = ".property.json";
    std::vector<std::filesystem::path> files;
    for (const auto &entry : std::filesystem::directory_iterator(dir)) {
        const std::string name = entry.path().filename().string();
        if (entry.is_regular_file() && name.size() > suffix.size() &&
            name.compare(name.size() - suffix.size(), suffix.size(), suffix) == 0)
            files.push_back(entry.path());
    }
    std::sort(files.begin(), files.end());
    if (files.empty())
        format_error(dir.string() + " holds no benchmark.json and no *.property.json files");
    std::vector<std::pair<std::string, PropertySpec>> out;
    for (const auto &f : files) {
        const std::string name = f.filename().string();
        out.emplace_back(name.substr(0, name.size() - suffix.size()), load_property(f));
    }
    return out;
}

// ---- exchange format ----

std::string export_exchange_property(const NetworkGraph &pipeline, const Box &input_box, std::size_t true_label) {
    pipeline.require_valid();
    if (input_box.size() == 0 || input_box.size() != pipeline.input_dim())
        throw Error(ErrorCode::UnresolvedBounds, "input box has " + std::to_string(input_box.size()) +
                                                     " dimensions, pipeline input has " +
                                                     std::to_string(pipeline.input_dim()));
    const std::size_t outputs = pipeline.numel(pipeline.output());
    if (true_label >= outputs)
        throw Error(ErrorCode::InvalidArgument, "true label out of range");
    std::ostringstream os;
    os << "; robustness property: " << input_box.size() << " inputs, " << outputs << " outputs, label "
       << true_label << "\n";
    for (std::size_t i = 0; i < input_box.size(); ++i)
        os << "(declare-const X_" << i << " Real)\n";
    for (std::size_t i = 0; i < outputs; ++i)
        os << "(declare-const Y_" << i << " Real)\n";
    for (std::size_t i = 0; i < input_box.size(); ++i) {
        os << "(assert (>= X_" << i << " " << shortest_decimal(input_box.lower(i)) << "))\n";
        os << "(assert (<= X_" << i << " " << shortest_decimal(input_box.upper(i)) << "))\n";
    }
    os << "(assert (or\n";
    for (std::size_t c = 0; c < outputs; ++c)
        if (c != true_label)
            os << "  (and (>= Y_" << c << " Y_" << true_label << "))\n";
    os << "))\n";
    return os.str();
}

std::string export_exchange_property(const PipelineProperty &property) {
    return export_exchange_property(property.pipeline, property.input_box, property.true_label);
}

namespace {

struct Sexpr {
    std::string atom;
    std::vector<Sexpr> list;
    bool is_list = false;
};

class SexprParser {
public:
    explicit SexprParser(const std::string &text) : s_(text) {}

    std::vector<Sexpr> parse_all() {
        std::vector<Sexpr> out;
        skip();
        while (pos_ < s_.size()) {
            out.push_back(parse());
            skip();
        }
        return out;
    }

private:
    void skip() {
        while (pos_ < s_.size()) {
            if (std::isspace(static_cast<unsigned char>(s_[pos_]))) {
                ++pos_;
            } else if (s_[pos_] == ';') {
                while (pos_ < s_.size() && s_[pos_] != '\n')
                    ++pos_;
            } else {
                break;
            }
        }
    }

    Sexpr parse() {
        skip();
        if (pos_ >= s_.size())
            format_error("unexpected end of exchange text");
        Sexpr e;
        if (s_[pos_] == '(') {
            ++pos_;
            e.is_list = true;
            skip();
            while (pos_ < s_.size() && s_[pos_] != ')') {
                e.list.push_back(parse());
                skip();
            }
            if (pos_ >= s_.size())
                format_error("unbalanced parentheses in exchange text");
            ++pos_;
            return e;
        }
        if (s_[pos_] == ')')
            format_error("unexpected ')' in exchange text");
        const std::size_t start = pos_;
        while (pos_ < s_.size() && !std::isspace(static_cast<unsigned char>(s_[pos_])) && s_[pos_] != '(' &&
               s_[pos_] != ')' && s_[pos_] != ';')
            ++pos_;
        e.atom = s_.substr(start, pos_ - start);
        return e;
    }

    const std::string &s_;
    std::size_t pos_ = 0;
};

bool is_atom(const Sexpr &e, const char *text) { return !e.is_list && e.atom == text; }

std::optional<std::size_t> var_index(const Sexpr &e, char prefix) {
    if (e.is_list || e.atom.size() < 3 || e.atom[0] != prefix || e.atom[1] != '_')
        return std::nullopt;
    std::size_t v = 0;
    auto res = std::from_chars(e.atom.data() + 2, e.atom.data() + e.atom.size(), v);
    if (res.ec != std::errc() || res.ptr != e.atom.data() + e.atom.size())
        return std::nullopt;
    return v;
}

double number(const Sexpr &e) {
    double v = 0;
    if (e.is_list)
        format_error("expected a number in exchange text");
    auto res = std::from_chars(e.atom.data(), e.atom.data() + e.atom.size(), v);
    if (res.ec != std::errc() || res.ptr != e.atom.data() + e.atom.size())
        format_error("bad number '" + e.atom + "' in exchange text");
    return v;
}

} // namespace

ExchangeProperty parse_exchange_property(const std::string &text) {
    auto forms = SexprParser(text).parse_all();
    std::size_t nx = 0, ny = 0;
    std::vector<std::optional<double>> lo, hi;
    ExchangeProperty out;
    bool have_output = false;
    for (const auto &f : forms) {
        if (!f.is_list || f.list.empty())
            format_error("top-level exchange forms must be lists");
        if (is_atom(f.list[0], "declare-const")) {
            if (f.list.size() != 3 || !is_atom(f.list[2], "Real"))
                format_error("malformed declare-const");
            if (auto i = var_index(f.list[1], 'X')) {
                if (*i != nx)
                    format_error("inputs must be declared in order");
                ++nx;
            } else if (auto k = var_index(f.list[1], 'Y')) {
                if (*k != ny)
                    format_error("outputs must be declared in order");
                ++ny;
            } else {
                format_error("unknown variable " + f.list[1].atom);
            }
            continue;
        }
        if (!is_atom(f.list[0], "assert") || f.list.size() != 2)
            format_error("expected declare-const or assert");
        const Sexpr &body = f.list[1];
        if (!body.is_list || body.list.empty())
            format_error("malformed assert");
        if (is_atom(body.list[0], "or")) {
            if (have_output)
                format_error("more than one output condition");
            have_output = true;
            for (const auto &conj : body.list) {
                if (&conj == &body.list[0])
                    continue;
                if (!conj.is_list || conj.list.size() != 2 || !is_atom(conj.list[0], "and"))
                    format_error("output disjuncts must be (and (>= Y_c Y_t))");
                const Sexpr &cmp = conj.list[1];
                if (!cmp.is_list || cmp.list.size() != 3 || !is_atom(cmp.list[0], ">="))
                    format_error("output comparison must be >=");
                auto c = var_index(cmp.list[1], 'Y');
                auto t = var_index(cmp.list[2], 'Y');
                if (!c || !t || *c >= ny || *t >= ny)
                    format_error("output comparison references an undeclared output");
                out.disjuncts.emplace_back(*c, *t);
            }
            continue;
        }
        if (body.list.size() != 3 || !(is_atom(body.list[0], ">=") || is_atom(body.list[0], "<=")))
            format_error("input asserts must be (>= X_i v) or (<= X_i v)");
        auto i = var_index(body.list[1], 'X');
        if (!i || *i >= nx)
            format_error("input assert references an undeclared input");
        lo.resize(nx);
        hi.resize(nx);
        auto &slot = is_atom(body.list[0], ">=") ? lo[*i] : hi[*i];
        if (slot)
            format_error("duplicate bound for X_" + std::to_string(*i));
        slot = number(body.list[2]);
    }
    lo.resize(nx);
    hi.resize(nx);
    std::vector<double> l(nx), u(nx);
    for (std::size_t i = 0; i < nx; ++i) {
        if (!lo[i] || !hi[i])
            format_error("X_" + std::to_string(i) + " lacks a bound");
        l[i] = *lo[i];
        u[i] = *hi[i];
    }
    if (!have_output)
        format_error("no output condition");
    out.input_box = Box(std::move(l), std::move(u));
    out.num_outputs = ny;
    return out;
}

} // namespace semverify
