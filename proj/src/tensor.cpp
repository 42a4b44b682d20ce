#include "partflow/tensor.hpp"

#include <cmath>
#include <sstream>

namespace partflow {

namespace {

size_t product(const std::vector<size_t>& shape) {
    size_t n = 1;
    for (size_t d : shape) n *= d;
    return n;
}

}  // namespace

Tensor::Tensor(std::vector<size_t> shape) : shape_(std::move(shape)), data_(product(shape_), 0.0) {}

Tensor::Tensor(std::vector<size_t> shape, std::vector<double> values)
    : shape_(std::move(shape)), data_(std::move(values)) {
    if (data_.size() != product(shape_)) {
        raise(ErrorCode::ShapeError, "value count does not match shape " + shape_str());
    }
}

Tensor Tensor::full(std::vector<size_t> shape, double value) {
    Tensor t(std::move(shape));
    for (double& v : t.data_) v = value;
    return t;
}

size_t Tensor::rows() const {
    if (shape_.empty()) return 0;
    return shape_[0];
}

size_t Tensor::cols() const {
    if (shape_.size() < 2) return shape_.empty() ? 0 : 1;
    size_t n = 1;
    for (size_t i = 1; i < shape_.size(); ++i) n *= shape_[i];
    return n;
}

std::string Tensor::shape_str() const {
    std::ostringstream os;
    os << "[";
    for (size_t i = 0; i < shape_.size(); ++i) os << (i ? "x" : "") << shape_[i];
    os << "]";
    return os.str();
}

bool Tensor::all_finite() const {
    for (double v : data_) {
        if (!std::isfinite(v)) return false;
    }
    return true;
}

void Tensor::check_finite(const std::string& context) const {
    if (!all_finite()) {
        raise(ErrorCode::NumericalError, "non-finite value in " + context);
    }
}

double Tensor::item() const {
    if (data_.size() != 1) {
        raise(ErrorCode::ShapeError, "item() on tensor of size " + std::to_string(data_.size()));
    }
    return data_[0];
}

void matmul_into(const Tensor& a, const Tensor& b, Tensor& c) {
    const size_t m = a.rows(), k = a.cols(), n = b.cols();
    if (b.rows() != k) {
        raise(ErrorCode::ShapeError, "matmul " + a.shape_str() + " * " + b.shape_str());
    }
    if (c.rows() != m || c.cols() != n) {
        raise(ErrorCode::ShapeError, "matmul output shape " + c.shape_str());
    }
    const double* ap = a.data();
    const double* bp = b.data();
    double* cp = c.data();
    // ikj loop: each C row accumulates rank-1 updates in fixed k order. The
    // inner j loop vectorizes without reassociating any single sum.
    for (size_t i = 0; i < m; ++i) {
        double* crow = cp + i * n;
        for (size_t j = 0; j < n; ++j) crow[j] = 0.0;
        const double* arow = ap + i * k;
        for (size_t kk = 0; kk < k; ++kk) {
            const double aik = arow[kk];
            const double* brow = bp + kk * n;
            for (size_t j = 0; j < n; ++j) crow[j] += aik * brow[j];
        }
    }
}

Tensor matmul(const Tensor& a, const Tensor& b) {
    Tensor c(a.rows(), b.cols());
    matmul_into(a, b, c);
    return c;
}

void matmul_at_b_accum(const Tensor& a, const Tensor& b, Tensor& c) {
    const size_t m = a.rows(), k = a.cols(), n = b.cols();
    if (b.rows() != m || c.rows() != k || c.cols() != n) {
        raise(ErrorCode::ShapeError, "matmul_at_b shapes " + a.shape_str() + ", " + b.shape_str());
    }
    const double* ap = a.data();
    const double* bp = b.data();
    double* cp = c.data();
    for (size_t i = 0; i < m; ++i) {
        const double* arow = ap + i * k;
        const double* brow = bp + i * n;
        for (size_t kk = 0; kk < k; ++kk) {
            const double aik = arow[kk];
            double* crow = cp + kk * n;
            for (size_t j = 0; j < n; ++j) crow[j] += aik * brow[j];
        }
    }
}

void matmul_a_bt_accum(const Tensor& a, const Tensor& b, Tensor& c) {
    const size_t m = a.rows(), k = a.cols(), n = b.rows();
    if (b.cols() != k || c.rows() != m || c.cols() != n) {
        raise(ErrorCode::ShapeError, "matmul_a_bt shapes " + a.shape_str() + ", " + b.shape_str());
    }
    const double* ap = a.data();
    const double* bp = b.data();
    double* cp = c.data();
    for (size_t i = 0; i < m; ++i) {
        const double* arow = ap + i * k;
        double* crow = cp + i * n;
        for (size_t j = 0; j < n; ++j) {
            const double* brow = bp + j * k;
            double acc = 0.0;
            for (size_t kk = 0; kk < k; ++kk) acc += arow[kk] * brow[kk];
            crow[j] += acc;
        }
    }
}

Tensor transpose(const Tensor& a) {
    Tensor t(a.cols(), a.rows());
    for (size_t i = 0; i < a.rows(); ++i) {
        for (size_t j = 0; j < a.cols(); ++j) t.at(j, i) = a.at(i, j);
    }
    return t;
}

void softmax_rows_inplace(Tensor& t) {
    const size_t rows = t.rows(), cols = t.cols();
    for (size_t i = 0; i < rows; ++i) {
        double* row = t.row(i);
        double m = row[0];
        for (size_t j = 1; j < cols; ++j) m = std::max(m, row[j]);
        double sum = 0.0;
        for (size_t j = 0; j < cols; ++j) {
            row[j] = std::exp(row[j] - m);
            sum += row[j];
        }
        const double inv = 1.0 / sum;
        for (size_t j = 0; j < cols; ++j) row[j] *= inv;
    }
}

}  // namespace partflow
