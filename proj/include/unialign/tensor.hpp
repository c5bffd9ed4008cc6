#pragma once

#include <cstddef>
#include <string>
#include <vector>

namespace unialign {

// Dense row-major tensor of doubles. Rank 1-3 covers everything the
// networks need; no broadcasting, no views.
struct Tensor {
    std::vector<std::size_t> shape;
    std::vector<double> data;

    Tensor() = default;

    static Tensor zeros(std::vector<std::size_t> shape);
    static Tensor filled(std::vector<std::size_t> shape, double value);
    static Tensor from(std::vector<std::size_t> shape, std::vector<double> values);
    static Tensor scalar(double value);

    std::size_t numel() const { return data.size(); }
    std::size_t rank() const { return shape.size(); }
    std::size_t dim(std::size_t axis) const;

    double& operator()(std::size_t i) { return data[i]; }
    const double& operator()(std::size_t i) const { return data[i]; }
    double& operator()(std::size_t i, std::size_t j) { return data[i * shape[1] + j]; }
    const double& operator()(std::size_t i, std::size_t j) const { return data[i * shape[1] + j]; }
    double& operator()(std::size_t i, std::size_t j, std::size_t k) {
        return data[(i * shape[1] + j) * shape[2] + k];
    }
    const double& operator()(std::size_t i, std::size_t j, std::size_t k) const {
        return data[(i * shape[1] + j) * shape[2] + k];
    }

    bool same_shape(const Tensor& other) const { return shape == other.shape; }
    bool operator==(const Tensor& other) const = default;

    // "[2x3]"; used in shape-mismatch diagnostics.
    std::string shape_str() const;
};

std::size_t shape_numel(const std::vector<std::size_t>& shape);

}  // namespace unialign
