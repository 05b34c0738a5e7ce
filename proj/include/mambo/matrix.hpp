#pragma once

#include <cmath>
#include <cstdint>
#include <stdexcept>
#include <string>
#include <vector>

namespace mambo {

using index_t = std::int64_t;

namespace detail {

inline void require(bool cond, const std::string& msg) {
    if (!cond) throw std::invalid_argument(msg);
}

}  // namespace detail

// Dense row-major matrix. Sequences are stored frames-by-channels (T x C);
// row vectors (1 x C) double as parameter vectors and biases.
template <typename R>
class Mat {
public:
    Mat() = default;
    Mat(index_t rows, index_t cols, R fill = R(0))
        : rows_(rows), cols_(cols), data_(static_cast<std::size_t>(rows * cols), fill) {
        detail::require(rows >= 0 && cols >= 0, "Mat: negative dimension");
    }

    index_t rows() const { return rows_; }
    index_t cols() const { return cols_; }
    index_t size() const { return rows_ * cols_; }
    bool empty() const { return data_.empty(); }

    R* row(index_t i) { return data_.data() + i * cols_; }
    const R* row(index_t i) const { return data_.data() + i * cols_; }

    R& operator()(index_t i, index_t j) { return data_[static_cast<std::size_t>(i * cols_ + j)]; }
    R operator()(index_t i, index_t j) const { return data_[static_cast<std::size_t>(i * cols_ + j)]; }

    R* data() { return data_.data(); }
    const R* data() const { return data_.data(); }

    void fill(R v) { std::fill(data_.begin(), data_.end(), v); }
    void clear_to_zero() { fill(R(0)); }

    bool same_shape(const Mat& o) const { return rows_ == o.rows_ && cols_ == o.cols_; }

    bool all_finite() const {
        for (R v : data_)
            if (!std::isfinite(static_cast<double>(v))) return false;
        return true;
    }

    bool operator==(const Mat& o) const {
        return rows_ == o.rows_ && cols_ == o.cols_ && data_ == o.data_;
    }

    template <typename R2>
    Mat<R2> cast() const {
        Mat<R2> out(rows_, cols_);
        for (index_t i = 0; i < size(); ++i) out.data()[i] = static_cast<R2>(data_[static_cast<std::size_t>(i)]);
        return out;
    }

private:
    index_t rows_ = 0, cols_ = 0;
    std::vector<R> data_;
};

namespace detail {

// C (m x n) += A (m x k) * B (k x n)
template <typename R>
void mm_acc(Mat<R>& c, const Mat<R>& a, const Mat<R>& b) {
    require(a.cols() == b.rows() && c.rows() == a.rows() && c.cols() == b.cols(),
            "mm_acc: shape mismatch");
    const index_t m = a.rows(), k = a.cols(), n = b.cols();
    for (index_t i = 0; i < m; ++i) {
        const R* ai = a.row(i);
        R* ci = c.row(i);
        for (index_t l = 0; l < k; ++l) {
            const R av = ai[l];
            if (av == R(0)) continue;
            const R* bl = b.row(l);
            for (index_t j = 0; j < n; ++j) ci[j] += av * bl[j];
        }
    }
}

// C (m x n) += A (m x k) * B^T (B is n x k)
template <typename R>
void mm_nt_acc(Mat<R>& c, const Mat<R>& a, const Mat<R>& b) {
    require(a.cols() == b.cols() && c.rows() == a.rows() && c.cols() == b.rows(),
            "mm_nt_acc: shape mismatch");
    const index_t m = a.rows(), k = a.cols(), n = b.rows();
    for (index_t i = 0; i < m; ++i) {
        const R* ai = a.row(i);
        R* ci = c.row(i);
        for (index_t j = 0; j < n; ++j) {
            const R* bj = b.row(j);
            R acc = R(0);
            for (index_t l = 0; l < k; ++l) acc += ai[l] * bj[l];
            ci[j] += acc;
        }
    }
}

// C (m x n) += A^T * B (A is k x m, B is k x n)
template <typename R>
void mm_tn_acc(Mat<R>& c, const Mat<R>& a, const Mat<R>& b) {
    require(a.rows() == b.rows() && c.rows() == a.cols() && c.cols() == b.cols(),
            "mm_tn_acc: shape mismatch");
    const index_t k = a.rows(), m = a.cols(), n = b.cols();
    for (index_t l = 0; l < k; ++l) {
        const R* al = a.row(l);
        const R* bl = b.row(l);
        for (index_t i = 0; i < m; ++i) {
            const R av = al[i];
            if (av == R(0)) continue;
            R* ci = c.row(i);
            for (index_t j = 0; j < n; ++j) ci[j] += av * bl[j];
        }
    }
}

template <typename R>
Mat<R> mm(const Mat<R>& a, const Mat<R>& b) {
    Mat<R> c(a.rows(), b.cols());
    mm_acc(c, a, b);
    return c;
}

template <typename R>
Mat<R> mm_nt(const Mat<R>& a, const Mat<R>& b) {
    Mat<R> c(a.rows(), b.rows());
    mm_nt_acc(c, a, b);
    return c;
}

template <typename R>
Mat<R> mm_tn(const Mat<R>& a, const Mat<R>& b) {
    Mat<R> c(a.cols(), b.cols());
    mm_tn_acc(c, a, b);
    return c;
}

template <typename R>
void add_inplace(Mat<R>& a, const Mat<R>& b) {
    require(a.same_shape(b), "add_inplace: shape mismatch");
    for (index_t i = 0; i < a.size(); ++i) a.data()[i] += b.data()[i];
}

template <typename R>
void axpy_inplace(Mat<R>& a, R alpha, const Mat<R>& b) {
    require(a.same_shape(b), "axpy_inplace: shape mismatch");
    for (index_t i = 0; i < a.size(); ++i) a.data()[i] += alpha * b.data()[i];
}

template <typename R>
Mat<R> reversed_rows(const Mat<R>& x) {
    Mat<R> y(x.rows(), x.cols());
    for (index_t t = 0; t < x.rows(); ++t) {
        const R* src = x.row(x.rows() - 1 - t);
        R* dst = y.row(t);
        for (index_t j = 0; j < x.cols(); ++j) dst[j] = src[j];
    }
    return y;
}

template <typename R>
double max_abs(const Mat<R>& x) {
    double m = 0.0;
    for (index_t i = 0; i < x.size(); ++i) m = std::max(m, std::abs(static_cast<double>(x.data()[i])));
    return m;
}

template <typename R>
double max_abs_diff(const Mat<R>& a, const Mat<R>& b) {
    require(a.same_shape(b), "max_abs_diff: shape mismatch");
    double m = 0.0;
    for (index_t i = 0; i < a.size(); ++i)
        m = std::max(m, std::abs(static_cast<double>(a.data()[i]) - static_cast<double>(b.data()[i])));
    return m;
}

// max_ij |a-b| / max(1, max_ij |a|, max_ij |b|)
template <typename R>
double rel_diff(const Mat<R>& a, const Mat<R>& b) {
    double scale = std::max({1.0, max_abs(a), max_abs(b)});
    return max_abs_diff(a, b) / scale;
}

template <typename R>
R stable_softplus(R x) {
    if (x > R(20)) return x;
    if (x < R(-20)) return std::exp(x);
    return std::log1p(std::exp(x));
}

template <typename R>
R sigmoid(R x) {
    if (x >= R(0)) {
        const R e = std::exp(-x);
        return R(1) / (R(1) + e);
    }
    const R e = std::exp(x);
    return e / (R(1) + e);
}

template <typename R>
R silu(R x) {
    return x * sigmoid(x);
}

}  // namespace detail

}  // namespace mambo
