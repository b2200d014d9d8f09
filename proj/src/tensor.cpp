// SPDX-License-Identifier: Apache-2.0
#include "fedadapt/tensor.hpp"

#include <cmath>
#include <sstream>
#include <stdexcept>

namespace fedadapt {

int64_t shape_numel(const std::vector<int>& shape) {
    int64_t n = 1;
    for (int d : shape) {
        if (d <= 0) {
            throw std::invalid_argument("tensor extents must be positive, got " +
                                        shape_to_string(shape));
        }
        n *= d;
    }
    return n;
}

std::string shape_to_string(const std::vector<int>& shape) {
    std::ostringstream os;
    os << "[";
    for (size_t i = 0; i < shape.size(); ++i) {
        if (i) os << ",";
        os << shape[i];
    }
    os << "]";
    return os.str();
}

Tensor::Tensor(std::vector<int> s, bool req) : shape(std::move(s)), requires_grad(req) {
    data.assign(static_cast<size_t>(shape_numel(shape)), 0.0f);
}

TensorPtr Tensor::create(std::vector<int> shape, bool requires_grad) {
    return std::make_shared<Tensor>(std::move(shape), requires_grad);
}

TensorPtr Tensor::full(std::vector<int> shape, float value) {
    auto t = create(std::move(shape));
    std::fill(t->data.begin(), t->data.end(), value);
    return t;
}

TensorPtr Tensor::from(std::vector<int> shape, std::vector<float> values) {
    auto t = std::make_shared<Tensor>();
    t->shape = std::move(shape);
    if (shape_numel(t->shape) != static_cast<int64_t>(values.size())) {
        throw std::invalid_argument("value count does not match shape " +
                                    shape_to_string(t->shape));
    }
    t->data = std::move(values);
    return t;
}

TensorPtr Tensor::scalar(float value) { return from({1}, {value}); }

void Tensor::ensure_grad() {
    if (grad.size() != data.size()) {
        grad.assign(data.size(), 0.0f);
    }
}

void Tensor::zero_grad() {
    if (!grad.empty()) {
        std::fill(grad.begin(), grad.end(), 0.0f);
    }
}

bool Tensor::all_finite() const {
    for (float v : data) {
        if (!std::isfinite(v)) return false;
    }
    return true;
}

TensorPtr Tensor::clone() const {
    auto t = std::make_shared<Tensor>();
    t->shape = shape;
    t->data = data;
    t->requires_grad = requires_grad;
    return t;
}

std::string Tensor::shape_str() const { return shape_to_string(shape); }

}  // namespace fedadapt
