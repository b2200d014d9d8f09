// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <cstdint>
#include <memory>
#include <string>
#include <vector>

namespace fedadapt {

class Tensor;
using TensorPtr = std::shared_ptr<Tensor>;

// Dense row-major tensor of 32-bit floats. The gradient buffer is allocated
// lazily by the autograd machinery; `tracked` marks tensors produced by a
// recorded operation (as opposed to leaves).
class Tensor {
public:
    std::vector<int> shape;
    std::vector<float> data;
    std::vector<float> grad;
    bool requires_grad = false;
    bool tracked = false;

    Tensor() = default;
    explicit Tensor(std::vector<int> s, bool req = false);

    static TensorPtr create(std::vector<int> shape, bool requires_grad = false);
    static TensorPtr full(std::vector<int> shape, float value);
    static TensorPtr from(std::vector<int> shape, std::vector<float> values);
    static TensorPtr scalar(float value);

    int64_t numel() const { return static_cast<int64_t>(data.size()); }
    int rank() const { return static_cast<int>(shape.size()); }
    int dim(int i) const { return shape.at(static_cast<size_t>(i)); }

    bool wants_grad() const { return requires_grad || tracked; }
    void ensure_grad();
    void zero_grad();
    bool has_grad() const { return !grad.empty(); }
    bool all_finite() const;

    TensorPtr clone() const;
    std::string shape_str() const;
};

int64_t shape_numel(const std::vector<int>& shape);
std::string shape_to_string(const std::vector<int>& shape);

}  // namespace fedadapt
