#include "semverify/box.hpp"

#include "semverify/error.hpp"

#include <cmath>

namespace semverify {

Box::Box(std::vector<double> lower, std::vector<double> upper) : lower_(std::move(lower)), upper_(std::move(upper)) {
    if (lower_.size() != upper_.size())
        throw Error(ErrorCode::InvalidArgument, "box lower/upper lengths differ");
    for (std::size_t i = 0; i < lower_.size(); ++i) {
        if (!std::isfinite(lower_[i]) || !std::isfinite(upper_[i]))
            throw Error(ErrorCode::NonFinite, "box dimension " + std::to_string(i) + " is not finite");
        if (lower_[i] > upper_[i])
            throw Error(ErrorCode::InvalidArgument, "box dimension " + std::to_string(i) + " is empty");
    }
}

Box Box::point(std::span<const double> x) {
    std::vector<double> v(x.begin(), x.end());
    return Box(v, v);
}

Box Box::uniform(std::size_t dim, double lower, double upper) {
    return Box(std::vector<double>(dim, lower), std::vector<double>(dim, upper));
}

Box Box::product(std::span<const Box> parts) {
    std::vector<double> lo, hi;
    for (const Box &b : parts) {
        lo.insert(lo.end(), b.lower_.begin(), b.lower_.end());
        hi.insert(hi.end(), b.upper_.begin(), b.upper_.end());
    }
    return Box(std::move(lo), std::move(hi));
}

Box Box::slice(std::size_t offset, std::size_t count) const {
    if (offset + count > size())
        throw Error(ErrorCode::InvalidArgument, "box slice out of range");
    return Box(std::vector<double>(lower_.begin() + offset, lower_.begin() + offset + count),
               std::vector<double>(upper_.begin() + offset, upper_.begin() + offset + count));
}

bool Box::contains(std::span<const double> x, double tol) const {
    if (x.size() != size())
        return false;
    for (std::size_t i = 0; i < x.size(); ++i)
        if (!(x[i] >= lower_[i] - tol && x[i] <= upper_[i] + tol))
            return false;
    return true;
}

bool Box::contains(std::span<const float> x, double tol) const {
    if (x.size() != size())
        return false;
    for (std::size_t i = 0; i < x.size(); ++i)
        if (!(x[i] >= lower_[i] - tol && x[i] <= upper_[i] + tol))
            return false;
    return true;
}

bool Box::subset_of(const Box &other, double tol) const {
    if (other.size() != size())
        return false;
    for (std::size_t i = 0; i < size(); ++i)
        if (lower_[i] < other.lower_[i] - tol || upper_[i] > other.upper_[i] + tol)
            return false;
    return true;
}

} // namespace semverify
