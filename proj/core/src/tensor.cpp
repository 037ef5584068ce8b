#include "semverify/tensor.hpp"

#include "semverify/error.hpp"

#include <cmath>
#include <numeric>
#include <sstream>

namespace semverify {

const char *to_string(ErrorCode code) {
    switch (code) {
    case ErrorCode::InvalidGraph: return "invalid graph";
    case ErrorCode::ShapeMismatch: return "shape mismatch";
    case ErrorCode::MissingInput: return "missing input";
    case ErrorCode::UnexpectedInput: return "unexpected input";
    case ErrorCode::NonFinite: return "non-finite value";
    case ErrorCode::InvalidArgument: return "invalid argument";
    case ErrorCode::Io: return "i/o error";
    case ErrorCode::Format: return "format error";
    case ErrorCode::VersionMismatch: return "version mismatch";
    case ErrorCode::BlobLength: return "blob length mismatch";
    case ErrorCode::UnresolvedBounds: return "unresolved bounds";
    case ErrorCode::Misclassified: return "clean input misclassified";
    }
    return "error";
}

std::size_t shape_numel(const Shape &shape) {
    return std::accumulate(shape.begin(), shape.end(), std::size_t{1}, std::multiplies<>());
}

std::string shape_to_string(const Shape &shape) {
    std::ostringstream out;
    out << '[';
    for (std::size_t i = 0; i < shape.size(); ++i) {
        if (i)
            out << ',';
        out << shape[i];
    }
    out << ']';
    return out.str();
}

Tensor::Tensor(Shape shape, std::vector<float> data) : shape_(std::move(shape)), data_(std::move(data)) {
    if (shape_.empty())
        throw Error(ErrorCode::ShapeMismatch, "tensor shape must have at least one dimension");
    for (auto d : shape_)
        if (d == 0)
            throw Error(ErrorCode::ShapeMismatch, "tensor dimensions must be positive: " + shape_to_string(shape_));
    if (shape_numel(shape_) != data_.size())
        throw Error(ErrorCode::ShapeMismatch, "tensor of shape " + shape_to_string(shape_) + " given " +
                                                  std::to_string(data_.size()) + " elements");
    for (std::size_t i = 0; i < data_.size(); ++i)
        if (!std::isfinite(data_[i]))
            throw Error(ErrorCode::NonFinite, "tensor element " + std::to_string(i) + " is not finite");
}

Tensor Tensor::zeros(Shape shape) {
    auto n = shape_numel(shape);
    return Tensor(std::move(shape), std::vector<float>(n, 0.0f));
}

Tensor Tensor::vector(std::vector<float> data) {
    Shape shape{data.size()};
    return Tensor(std::move(shape), std::move(data));
}

} // namespace semverify
