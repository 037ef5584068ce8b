#include "semverify/compose.hpp"

#include "semverify/error.hpp"
#include "semverify/eval.hpp"

#include <cmath>
#include <string>

namespace semverify {

namespace {

struct ImageDims {
    std::size_t c, h, w;
};

ImageDims image_dims(const Shape &s) {
    switch (s.size()) {
    case 1:
        return {1, 1, s[0]};
    case 2:
        return {1, s[0], s[1]};
    case 3:
        return {s[0], s[1], s[2]};
    default:
        throw Error(ErrorCode::ShapeMismatch, "blur needs an image of rank 1 to 3, got " + shape_to_string(s));
    }
}

std::size_t single_input(const NetworkGraph &g, const char *what) {
    g.require_valid();
    if (g.input_ids().size() != 1)
        throw Error(ErrorCode::InvalidGraph, std::string(what) + " must have exactly one input");
    return g.input_ids()[0];
}

} // namespace

BlurSpec BlurSpec::box(std::size_t k, double s_lower, double s_upper) {
    BlurSpec b;
    b.k = k;
    b.kernel.assign(k * k, 1.0 / static_cast<double>(k * k));
    b.s_lower = s_lower;
    b.s_upper = s_upper;
    b.validate();
    return b;
}

void BlurSpec::validate() const {
    if (k == 0 || k % 2 == 0)
        throw Error(ErrorCode::InvalidArgument, "blur kernel size must be odd");
    if (kernel.size() != k * k)
        throw Error(ErrorCode::InvalidArgument, "blur kernel must have k*k entries");
    double sum = 0.0;
    for (double v : kernel) {
        if (!std::isfinite(v) || v < 0.0)
            throw Error(ErrorCode::InvalidArgument, "blur kernel entries must be finite and nonnegative");
        sum += v;
    }
    if (std::abs(sum - 1.0) > 1e-9)
        throw Error(ErrorCode::InvalidArgument, "blur kernel must sum to 1");
    if (!(0.0 <= s_lower && s_lower <= s_upper && s_upper <= 1.0))
        throw Error(ErrorCode::InvalidArgument, "blur strength range must satisfy 0 <= s_L <= s_U <= 1");
}

std::vector<double> blur_image(const Tensor &image, const BlurSpec &blur) {
    blur.validate();
    const auto [C, H, W] = image_dims(image.shape());
    if (blur.k > H || blur.k > W)
        throw Error(ErrorCode::InvalidArgument, "blur kernel is larger than the image");
    const long r = static_cast<long>(blur.k / 2);
    const long h = static_cast<long>(H), w = static_cast<long>(W), k = static_cast<long>(blur.k);
    std::vector<double> out(image.size(), 0.0);
    for (std::size_t c = 0; c < C; ++c)
        for (long y = 0; y < h; ++y)
            for (long x = 0; x < w; ++x) {
                double acc = 0.0;
                for (long dy = -r; dy <= r; ++dy)
                    for (long dx = -r; dx <= r; ++dx) {
                        const long yy = y + dy, xx = x + dx;
                        if (yy < 0 || xx < 0 || yy >= h || xx >= w)
                            continue;
                        acc += blur.kernel[static_cast<std::size_t>((dy + r) * k + dx + r)] *
                               image[(c * H + static_cast<std::size_t>(yy)) * W + static_cast<std::size_t>(xx)];
                    }
                out[(c * H + static_cast<std::size_t>(y)) * W + static_cast<std::size_t>(x)] = acc;
            }
    return out;
}

NetworkGraph build_blur_front(const Tensor &x_clean, const BlurSpec &blur) {
    auto blurred = blur_image(x_clean, blur);
    const std::size_t n = x_clean.size();
    std::vector<float> coef(n);
    std::vector<float> bias(x_clean.values());
    for (std::size_t i = 0; i < n; ++i)
        coef[i] = static_cast<float>(blurred[i] - static_cast<double>(x_clean[i]));
    GraphBuilder b;
    NodeId s = b.input(kStrengthInput, {1});
    NodeId x = b.affine(s, n, std::move(coef), std::move(bias));
    if (x_clean.shape().size() != 1)
        x = b.reshape(x, x_clean.shape());
    return b.build(x);
}

NetworkGraph compose_pipeline(const NetworkGraph &encoder, const NetworkGraph &decoder,
                              const NetworkGraph &classifier, const NetworkGraph &front) {
    const NodeId enc_in = single_input(encoder, "encoder");
    const NodeId dec_in = single_input(decoder, "decoder");
    const NodeId cls_in = single_input(classifier, "classifier");
    const NodeId front_in = single_input(front, "blur front");
    if (front.input_dim() != 1 || std::get<InputOp>(front.node(front_in).op).name != kStrengthInput)
        throw Error(ErrorCode::ShapeMismatch, "blur front must take the scalar input 's'");
    if (front.output_shape() != encoder.shape(enc_in))
        throw Error(ErrorCode::ShapeMismatch, "blur front produces " + shape_to_string(front.output_shape()) +
                                                  " but the encoder expects " +
                                                  shape_to_string(encoder.shape(enc_in)));
    const std::size_t d = encoder.numel(encoder.output());
    if (encoder.output_shape() != Shape{d})
        throw Error(ErrorCode::ShapeMismatch, "encoder output must be a vector, got " +
                                                  shape_to_string(encoder.output_shape()));
    if (decoder.shape(dec_in) != Shape{d})
        throw Error(ErrorCode::ShapeMismatch, "decoder expects " + shape_to_string(decoder.shape(dec_in)) +
                                                  " but the latent is " + shape_to_string({d}));
    if (decoder.output_shape() != classifier.shape(cls_in))
        throw Error(ErrorCode::ShapeMismatch, "decoder produces " + shape_to_string(decoder.output_shape()) +
                                                  " but the classifier expects " +
                                                  shape_to_string(classifier.shape(cls_in)));
    if (classifier.output_shape().size() != 1)
        throw Error(ErrorCode::ShapeMismatch, "classifier must produce a logit vector");

    auto name_of = [](const NetworkGraph &g, NodeId id) { return std::get<InputOp>(g.node(id).op).name; };
    GraphBuilder b;
    NodeId s = b.input(kStrengthInput, {1});
    NodeId n = b.input(kNoiseInput, {d});
    NodeId eps = b.input(kAwgnInput, {d});
    NodeId x = b.splice(front, {{kStrengthInput, s}});
    NodeId z = b.splice(encoder, {{name_of(encoder, enc_in), x}});
    NodeId zp = b.add(b.add(z, n), eps);
    NodeId xh = b.splice(decoder, {{name_of(decoder, dec_in), zp}});
    NodeId y = b.splice(classifier, {{name_of(classifier, cls_in), xh}});
    auto g = b.build(y);
    g.require_valid();
    return g;
}

namespace {

void check_clean(const Tensor &logits, std::size_t true_label) {
    if (true_label >= logits.size())
        throw Error(ErrorCode::InvalidArgument, "true label " + std::to_string(true_label) + " out of range");
    for (std::size_t c = 0; c < logits.size(); ++c)
        if (c != true_label && logits[c] >= logits[true_label])
            throw Error(ErrorCode::Misclassified, "clean input is not classified as " + std::to_string(true_label) +
                                                      " (class " + std::to_string(c) + " scores at least as high)");
}

} // namespace

PipelineProperty build_property(const NetworkGraph &pipeline, const Box &noise_box, const BlurSpec &blur,
                                double awgn_sigma, std::size_t true_label) {
    pipeline.require_valid();
    blur.validate();
    if (!(awgn_sigma >= 0.0) || !std::isfinite(awgn_sigma))
        throw Error(ErrorCode::InvalidArgument, "AWGN sigma must be finite and nonnegative");
    const auto names = pipeline.input_names();
    if (names != std::vector<std::string>{kStrengthInput, kNoiseInput, kAwgnInput})
        throw Error(ErrorCode::InvalidGraph, "pipeline inputs must be (s, n, eps)");
    const std::size_t d = pipeline.numel(pipeline.input_id(kNoiseInput));
    if (noise_box.size() != d)
        throw Error(ErrorCode::ShapeMismatch, "noise box has " + std::to_string(noise_box.size()) +
                                                  " dimensions, latent has " + std::to_string(d));

    PipelineProperty p;
    p.pipeline = pipeline;
    p.true_label = true_label;
    p.latent_dim = d;
    p.awgn_sigma = awgn_sigma;
    p.clean_logits = forward_flat(pipeline, std::vector<float>(pipeline.input_dim(), 0.0f));
    check_clean(p.clean_logits, true_label);
    const double half = 3.0 * awgn_sigma;
    std::vector<Box> parts = {Box({blur.s_lower}, {blur.s_upper}), noise_box, Box::uniform(d, -half, half)};
    p.input_box = Box::product(parts);
    return p;
}

PipelineProperty build_property(const NetworkGraph &pipeline, const NoiseBoundsResult &noise, const BlurSpec &blur,
                                double awgn_sigma, std::size_t true_label) {
    return build_property(pipeline, noise.bounds, blur, awgn_sigma, true_label);
}

void PropertySpec::validate() const {
    blur.validate();
    if (clean_input.size() == 0)
        throw Error(ErrorCode::InvalidArgument, "clean input is empty");
    if (!(trigger_lower <= trigger_upper) || !std::isfinite(trigger_lower) || !std::isfinite(trigger_upper))
        throw Error(ErrorCode::InvalidArgument, "trigger range must satisfy r_L <= r_U");
    if (pnr_db.has_value() == rho.has_value())
        throw Error(ErrorCode::InvalidArgument, "exactly one of pnr_db and rho must be given");
    if (rho && (!(*rho >= 0.0) || !std::isfinite(*rho)))
        throw Error(ErrorCode::InvalidArgument, "rho must be finite and nonnegative");
    if (pnr_db && !std::isfinite(*pnr_db))
        throw Error(ErrorCode::InvalidArgument, "pnr_db must be finite");
    if (!(awgn_sigma >= 0.0) || !std::isfinite(awgn_sigma))
        throw Error(ErrorCode::InvalidArgument, "awgn_sigma must be finite and nonnegative");
    if (!(timeout_seconds > 0.0))
        throw Error(ErrorCode::InvalidArgument, "timeout_seconds must be positive");
}

PowerSpec PropertySpec::power(double latent_power) const {
    if (rho)
        return PowerSpec::from_rho(*rho);
    return PowerSpec::from_pnr(*pnr_db, latent_power);
}

} // namespace semverify
