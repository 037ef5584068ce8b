#pragma once

#include <cstddef>
#include <span>
#include <string>
#include <vector>

namespace semverify {

using Shape = std::vector<std::size_t>;

std::size_t shape_numel(const Shape &shape);
std::string shape_to_string(const Shape &shape);

/// Dense row-major float32 tensor. Every element is finite.
class Tensor {
public:
    Tensor() = default;
    Tensor(Shape shape, std::vector<float> data);

    static Tensor zeros(Shape shape);
    static Tensor vector(std::vector<float> data);

    const Shape &shape() const noexcept { return shape_; }
    std::size_t size() const noexcept { return data_.size(); }
    std::span<const float> data() const noexcept { return data_; }
    const std::vector<float> &values() const noexcept { return data_; }

    float operator[](std::size_t i) const { return data_[i]; }

    friend bool operator==(const Tensor &, const Tensor &) = default;

private:
    Shape shape_;
    std::vector<float> data_;
};

} // namespace semverify
