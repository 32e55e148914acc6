#pragma once

#include <cassert>
#include <cmath>
#include <cstddef>
#include <vector>

#include "retro/common.hpp"

namespace retro {

// Dense row-major matrix of 64-bit reals. The whole pipeline runs in double
// precision; sizes stay small enough that this is never the bottleneck worth
// trading gradient-check precision for.
class Matrix {
  public:
    Matrix() = default;
    Matrix(int rows, int cols)
        : rows_(rows), cols_(cols), data_(static_cast<std::size_t>(rows) * cols, 0.0) {
        assert(rows >= 0 && cols >= 0);
    }
    Matrix(int rows, int cols, std::vector<double> data)
        : rows_(rows), cols_(cols), data_(std::move(data)) {
        assert(data_.size() == static_cast<std::size_t>(rows) * cols);
    }

    static Matrix zeros(int rows, int cols) { return Matrix(rows, cols); }

    static Matrix filled(int rows, int cols, double v) {
        Matrix m(rows, cols);
        for (double& x : m.data_) x = v;
        return m;
    }

    static Matrix identity(int n) {
        Matrix m(n, n);
        for (int i = 0; i < n; ++i) m(i, i) = 1.0;
        return m;
    }

    int rows() const { return rows_; }
    int cols() const { return cols_; }
    std::size_t size() const { return data_.size(); }
    bool empty() const { return data_.empty(); }

    double& operator()(int i, int j) { return data_[static_cast<std::size_t>(i) * cols_ + j]; }
    double operator()(int i, int j) const { return data_[static_cast<std::size_t>(i) * cols_ + j]; }

    double* data() { return data_.data(); }
    const double* data() const { return data_.data(); }
    std::vector<double>& raw() { return data_; }
    const std::vector<double>& raw() const { return data_; }

    bool same_shape(const Matrix& o) const { return rows_ == o.rows_ && cols_ == o.cols_; }

    bool all_finite() const {
        for (double v : data_) {
            if (!std::isfinite(v)) return false;
        }
        return true;
    }

    void fill(double v) {
        for (double& x : data_) x = v;
    }

    Matrix reshaped(int rows, int cols) const {
        assert(static_cast<std::size_t>(rows) * cols == data_.size());
        Matrix m = *this;
        m.rows_ = rows;
        m.cols_ = cols;
        return m;
    }

  private:
    int rows_ = 0;
    int cols_ = 0;
    std::vector<double> data_;
};

// c += a * b
inline void matmul_acc(const Matrix& a, const Matrix& b, Matrix& c) {
    assert(a.cols() == b.rows() && c.rows() == a.rows() && c.cols() == b.cols());
    const int n = a.rows(), k = a.cols(), m = b.cols();
    for (int i = 0; i < n; ++i) {
        const double* ar = a.data() + static_cast<std::size_t>(i) * k;
        double* cr = c.data() + static_cast<std::size_t>(i) * m;
        for (int p = 0; p < k; ++p) {
            double av = ar[p];
            if (av == 0.0) continue;
            const double* br = b.data() + static_cast<std::size_t>(p) * m;
            for (int j = 0; j < m; ++j) cr[j] += av * br[j];
        }
    }
}

inline Matrix matmul(const Matrix& a, const Matrix& b) {
    Matrix c(a.rows(), b.cols());
    matmul_acc(a, b, c);
    return c;
}

// c += a * b^T
inline void matmul_nt_acc(const Matrix& a, const Matrix& b, Matrix& c) {
    assert(a.cols() == b.cols() && c.rows() == a.rows() && c.cols() == b.rows());
    const int n = a.rows(), k = a.cols(), m = b.rows();
    for (int i = 0; i < n; ++i) {
        const double* ar = a.data() + static_cast<std::size_t>(i) * k;
        double* cr = c.data() + static_cast<std::size_t>(i) * m;
        for (int j = 0; j < m; ++j) {
            const double* br = b.data() + static_cast<std::size_t>(j) * k;
            double s = 0.0;
            for (int p = 0; p < k; ++p) s += ar[p] * br[p];
            cr[j] += s;
        }
    }
}

inline Matrix matmul_nt(const Matrix& a, const Matrix& b) {
    Matrix c(a.rows(), b.rows());
    matmul_nt_acc(a, b, c);
    return c;
}

// c += a^T * b
inline void matmul_tn_acc(const Matrix& a, const Matrix& b, Matrix& c) {
    assert(a.rows() == b.rows() && c.rows() == a.cols() && c.cols() == b.cols());
    const int n = a.cols(), k = a.rows(), m = b.cols();
    for (int p = 0; p < k; ++p) {
        const double* ar = a.data() + static_cast<std::size_t>(p) * n;
        const double* br = b.data() + static_cast<std::size_t>(p) * m;
        for (int i = 0; i < n; ++i) {
            double av = ar[i];
            if (av == 0.0) continue;
            double* cr = c.data() + static_cast<std::size_t>(i) * m;
            for (int j = 0; j < m; ++j) cr[j] += av * br[j];
        }
    }
}

inline Matrix transpose(const Matrix& a) {
    Matrix t(a.cols(), a.rows());
    for (int i = 0; i < a.rows(); ++i)
        for (int j = 0; j < a.cols(); ++j) t(j, i) = a(i, j);
    return t;
}

inline void add_in_place(Matrix& a, const Matrix& b) {
    assert(a.same_shape(b));
    double* pa = a.data();
    const double* pb = b.data();
    for (std::size_t i = 0; i < a.size(); ++i) pa[i] += pb[i];
}

inline void axpy_in_place(Matrix& a, double alpha, const Matrix& b) {
    assert(a.same_shape(b));
    double* pa = a.data();
    const double* pb = b.data();
    for (std::size_t i = 0; i < a.size(); ++i) pa[i] += alpha * pb[i];
}

inline double max_abs_diff(const Matrix& a, const Matrix& b) {
    assert(a.same_shape(b));
    double m = 0.0;
    for (std::size_t i = 0; i < a.size(); ++i)
        m = std::max(m, std::fabs(a.data()[i] - b.data()[i]));
    return m;
}

inline bool bit_equal(const Matrix& a, const Matrix& b) {
    if (!a.same_shape(b)) return false;
    for (std::size_t i = 0; i < a.size(); ++i) {
        if (a.data()[i] != b.data()[i]) return false;
    }
    return true;
}

}  // namespace retro
