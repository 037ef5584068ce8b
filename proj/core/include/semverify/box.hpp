#pragma once

#include <cstddef>
#include <span>
#include <vector>

namespace semverify {

/// Axis-aligned box with finite float64 endpoints, lower[i] <= upper[i].
class Box {
public:
    Box() = default;
    Box(std::vector<double> lower, std::vector<double> upper);

    static Box point(std::span<const double> x);
    static Box uniform(std::size_t dim, double lower, double upper);
    /// Concatenation of boxes, in order.
    static Box product(std::span<const Box> parts);

    std::size_t size() const noexcept { return lower_.size(); }
    const std::vector<double> &lower() const noexcept { return lower_; }
    const std::vector<double> &upper() const noexcept { return upper_; }
    double lower(std::size_t i) const { return lower_[i]; }
    double upper(std::size_t i) const { return upper_[i]; }
    double width(std::size_t i) const { return upper_[i] - lower_[i]; }
    double center(std::size_t i) const { return 0.5 * (lower_[i] + upper_[i]); }

    Box slice(std::size_t offset, std::size_t count) const;

    bool contains(std::span<const double> x, double tol = 0.0) const;
    bool contains(std::span<const float> x, double tol = 0.0) const;
    /// this ⊆ other, allowing `tol` slack on each endpoint.
    bool subset_of(const Box &other, double tol = 0.0) const;

    friend bool operator==(const Box &, const Box &) = default;

private:
    std::vector<double> lower_;
    std::vector<double> upper_;
};

} // namespace semverify
