#include "hytrec/tensor.hpp"

#include <cmath>

namespace hytrec {

namespace detail {
std::atomic<int64_t> TensorBytes::live{0};
std::atomic<int64_t> TensorBytes::peak{0};
}  // namespace detail

namespace {

int64_t shape_product(const std::vector<int64_t>& shape) {
    int64_t n = 1;
    for (int64_t d : shape) {
        HYT_CHECK_SHAPE(d >= 0, "negative dimension ", d);
        n *= d;
    }
    return n;
}

}  // namespace

Tensor::Tensor(std::vector<int64_t> shape) : shape_(std::move(shape)) {
    data_.assign(static_cast<size_t>(shape_product(shape_)), 0.0);
    cols_ = shape_.empty() ? 0 : shape_.back();
}

Tensor Tensor::scalar(double v) {
    Tensor t(std::vector<int64_t>{1});
    t.data_[0] = v;
    return t;
}

Tensor Tensor::from(std::vector<int64_t> shape, std::vector<double> values) {
    Tensor t;
    t.shape_ = std::move(shape);
    HYT_CHECK_SHAPE(shape_product(t.shape_) == static_cast<int64_t>(values.size()),
                    "shape/data mismatch: shape wants ", shape_product(t.shape_),
                    " values, got ", values.size());
    t.data_.assign(values.begin(), values.end());
    t.cols_ = t.shape_.empty() ? 0 : t.shape_.back();
    return t;
}

int64_t Tensor::rows() const {
    HYT_CHECK_SHAPE(ndim() == 2, "rows() on ", ndim(), "-d tensor");
    return shape_[0];
}

int64_t Tensor::cols() const {
    HYT_CHECK_SHAPE(ndim() == 2, "cols() on ", ndim(), "-d tensor");
    return shape_[1];
}

double& Tensor::at(int64_t i) {
    HYT_CHECK_SHAPE(i >= 0 && i < size(), "index ", i, " out of range [0,", size(), ")");
    return data_[static_cast<size_t>(i)];
}

double Tensor::at(int64_t i) const { return const_cast<Tensor*>(this)->at(i); }

double& Tensor::at(int64_t r, int64_t c) {
    HYT_CHECK_SHAPE(ndim() == 2 && r >= 0 && r < shape_[0] && c >= 0 && c < shape_[1],
                    "index (", r, ",", c, ") out of range");
    return data_[static_cast<size_t>(r * cols_ + c)];
}

double Tensor::at(int64_t r, int64_t c) const { return const_cast<Tensor*>(this)->at(r, c); }

void Tensor::fill(double v) {
    for (double& x : data_) x = v;
}

void Tensor::ensure_finite(const char* what) const {
    for (double x : data_) {
        if (!std::isfinite(x)) {
            HYT_THROW(NumericError, what, ": non-finite value ", x);
        }
    }
}

Tensor matmul(const Tensor& a, const Tensor& b) {
    HYT_CHECK_SHAPE(a.ndim() == 2 && b.ndim() == 2, "matmul expects 2-d tensors");
    HYT_CHECK_SHAPE(a.cols() == b.rows(), "matmul inner dims disagree: ", a.cols(), " vs ",
                    b.rows());
    const int64_t m = a.rows(), k = a.cols(), n = b.cols();
    Tensor out({m, n});
    for (int64_t i = 0; i < m; ++i) {
        double* out_row = out.data() + i * n;
        const double* a_row = a.data() + i * k;
        for (int64_t p = 0; p < k; ++p) {
            const double av = a_row[p];
            if (av == 0.0) continue;
            const double* b_row = b.data() + p * n;
            for (int64_t j = 0; j < n; ++j) {
                out_row[j] += av * b_row[j];
            }
        }
    }
    return out;
}

Tensor matmul_tn(const Tensor& a, const Tensor& b) {
    HYT_CHECK_SHAPE(a.ndim() == 2 && b.ndim() == 2, "matmul_tn expects 2-d tensors");
    HYT_CHECK_SHAPE(a.rows() == b.rows(), "matmul_tn inner dims disagree: ", a.rows(), " vs ",
                    b.rows());
    const int64_t m = a.cols(), k = a.rows(), n = b.cols();
    Tensor out({m, n});
    for (int64_t p = 0; p < k; ++p) {
        const double* a_row = a.data() + p * m;
        const double* b_row = b.data() + p * n;
        for (int64_t i = 0; i < m; ++i) {
            const double av = a_row[i];
            if (av == 0.0) continue;
            double* out_row = out.data() + i * n;
            for (int64_t j = 0; j < n; ++j) {
                out_row[j] += av * b_row[j];
            }
        }
    }
    return out;
}

Tensor matmul_nt(const Tensor& a, const Tensor& b) {
    HYT_CHECK_SHAPE(a.ndim() == 2 && b.ndim() == 2, "matmul_nt expects 2-d tensors");
    HYT_CHECK_SHAPE(a.cols() == b.cols(), "matmul_nt inner dims disagree: ", a.cols(), " vs ",
                    b.cols());
    const int64_t m = a.rows(), k = a.cols(), n = b.rows();
    Tensor out({m, n});
    for (int64_t i = 0; i < m; ++i) {
        const double* a_row = a.data() + i * k;
        double* out_row = out.data() + i * n;
        for (int64_t j = 0; j < n; ++j) {
            const double* b_row = b.data() + j * k;
            double acc = 0.0;
            for (int64_t p = 0; p < k; ++p) {
                acc += a_row[p] * b_row[p];
            }
            out_row[j] = acc;
        }
    }
    return out;
}

}  // namespace hytrec
