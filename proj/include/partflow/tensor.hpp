#pragma once

#include <cstddef>
#include <initializer_list>
#include <string>
#include <vector>

#include "partflow/common.hpp"

namespace partflow {

// Dense row-major tensor of doubles. Gradient checks need 64-bit precision,
// so the whole numerics stack runs on doubles; checkpoints store float32.
class Tensor {
public:
    Tensor() = default;
    explicit Tensor(std::vector<size_t> shape);
    Tensor(std::vector<size_t> shape, std::vector<double> values);
    Tensor(size_t rows, size_t cols) : Tensor(std::vector<size_t>{rows, cols}) {}

    static Tensor zeros(std::vector<size_t> shape) { return Tensor(std::move(shape)); }
    static Tensor full(std::vector<size_t> shape, double value);
    static Tensor scalar(double value) {
        return Tensor(std::vector<size_t>{1}, std::vector<double>{value});
    }

    const std::vector<size_t>& shape() const { return shape_; }
    size_t rank() const { return shape_.size(); }
    size_t size() const { return data_.size(); }
    size_t rows() const;
    size_t cols() const;

    double* data() { return data_.data(); }
    const double* data() const { return data_.data(); }
    std::vector<double>& values() { return data_; }
    const std::vector<double>& values() const { return data_; }

    double& at(size_t i) { return data_[i]; }
    double at(size_t i) const { return data_[i]; }
    double& at(size_t r, size_t c) { return data_[r * cols() + c]; }
    double at(size_t r, size_t c) const { return data_[r * cols() + c]; }

    double* row(size_t r) { return data_.data() + r * cols(); }
    const double* row(size_t r) const { return data_.data() + r * cols(); }

    bool same_shape(const Tensor& other) const { return shape_ == other.shape_; }
    std::string shape_str() const;

    // Throws NumericalError if any value is NaN or infinite.
    void check_finite(const std::string& context) const;
    bool all_finite() const;

    double item() const;

private:
    std::vector<size_t> shape_;
    std::vector<double> data_;
};

// ---------------------------------------------------------------------------
// Raw kernels (no autodiff). The autodiff layer builds on these.
// ---------------------------------------------------------------------------

// C = A [m x k] * B [k x n]. Accumulation order over k is fixed per output
// element, so results are bit-identical run to run.
void matmul_into(const Tensor& a, const Tensor& b, Tensor& c);
Tensor matmul(const Tensor& a, const Tensor& b);

// C += A^T * B where A is [m x k], B is [m x n], C is [k x n].
void matmul_at_b_accum(const Tensor& a, const Tensor& b, Tensor& c);
// C += A * B^T where A is [m x k], B is [n x k], C is [m x n].
void matmul_a_bt_accum(const Tensor& a, const Tensor& b, Tensor& c);

Tensor transpose(const Tensor& a);

// Row-wise softmax in place.
void softmax_rows_inplace(Tensor& t);

}  // namespace partflow
