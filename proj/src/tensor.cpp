#include "unialign/tensor.hpp"

#include <stdexcept>

namespace unialign {

std::size_t shape_numel(const std::vector<std::size_t>& shape) {
    std::size_t n = 1;
    for (std::size_t d : shape) n *= d;
    return shape.empty() ? 0 : n;
}

Tensor Tensor::zeros(std::vector<std::size_t> shape) {
    return filled(std::move(shape), 0.0);
}

Tensor Tensor::filled(std::vector<std::size_t> shape, double value) {
    for (std::size_t d : shape) {
        if (d == 0) throw std::invalid_argument("tensor dimensions must be positive");
    }
    Tensor t;
    t.data.assign(shape_numel(shape), value);
    t.shape = std::move(shape);
    return t;
}

Tensor Tensor::from(std::vector<std::size_t> shape, std::vector<double> values) {
    if (shape_numel(shape) != values.size()) {
        throw std::invalid_argument("tensor data size " + std::to_string(values.size()) +
                                    " does not match shape product " +
                                    std::to_string(shape_numel(shape)));
    }
    Tensor t;
    t.shape = std::move(shape);
    t.data = std::move(values);
    return t;
}

Tensor Tensor::scalar(double value) {
    return from({1}, {value});
}

std::size_t Tensor::dim(std::size_t axis) const {
    if (axis >= shape.size()) throw std::out_of_range("tensor axis out of range");
    return shape[axis];
}

std::string Tensor::shape_str() const {
    std::string s = "[";
    for (std::size_t i = 0; i < shape.size(); ++i) {
        if (i) s += "x";
        s += std::to_string(shape[i]);
    }
    return s + "]";
}

}  // namespace unialign
