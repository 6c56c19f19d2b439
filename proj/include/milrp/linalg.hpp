// Small dense linear algebra: a row-major matrix, a cyclic Jacobi
// eigensolver for symmetric matrices, and a Cholesky solve.
#pragma once

#include "milrp/core.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>
#include <span>
#include <string>
#include <vector>

namespace milrp {

class Matrix {
public:
    Matrix() = default;
    Matrix(std::size_t rows, std::size_t cols, double fill = 0.0)
        : rows_(rows), cols_(cols), data_(rows * cols, fill) {}

    static Matrix identity(std::size_t n)
    {
        Matrix m(n, n);
        for (std::size_t i = 0; i < n; ++i) m(i, i) = 1.0;
        return m;
    }

    std::size_t rows() const { return rows_; }
    std::size_t cols() const { return cols_; }

    double& operator()(std::size_t r, std::size_t c) { return data_[r * cols_ + c]; }
    double operator()(std::size_t r, std::size_t c) const { return data_[r * cols_ + c]; }

    std::span<double> row(std::size_t r) { return {data_.data() + r * cols_, cols_}; }
    std::span<const double> row(std::size_t r) const { return {data_.data() + r * cols_, cols_}; }

    std::vector<double>& values() { return data_; }
    const std::vector<double>& values() const { return data_; }

    Matrix transposed() const
    {
        Matrix t(cols_, rows_);
        for (std::size_t r = 0; r < rows_; ++r)
            for (std::size_t c = 0; c < cols_; ++c) t(c, r) = (*this)(r, c);
        return t;
    }

    double trace() const
    {
        double s = 0.0;
        for (std::size_t i = 0; i < std::min(rows_, cols_); ++i) s += (*this)(i, i);
        return s;
    }

    Matrix& operator+=(const Matrix& o)
    {
        require_same(o);
        for (std::size_t i = 0; i < data_.size(); ++i) data_[i] += o.data_[i];
        return *this;
    }
    Matrix& operator-=(const Matrix& o)
    {
        require_same(o);
        for (std::size_t i = 0; i < data_.size(); ++i) data_[i] -= o.data_[i];
        return *this;
    }
    Matrix& operator*=(double s)
    {
        for (double& v : data_) v *= s;
        return *this;
    }

    friend Matrix operator+(Matrix a, const Matrix& b) { return a += b; }
    friend Matrix operator-(Matrix a, const Matrix& b) { return a -= b; }
    friend Matrix operator*(Matrix a, double s) { return a *= s; }

    friend Matrix operator*(const Matrix& a, const Matrix& b)
    {
        if (a.cols_ != b.rows_)
            throw InputError("matrix product shape mismatch: " + std::to_string(a.rows_) + "x" +
                             std::to_string(a.cols_) + " * " + std::to_string(b.rows_) + "x" +
                             std::to_string(b.cols_));
        Matrix out(a.rows_, b.cols_);
        for (std::size_t i = 0; i < a.rows_; ++i)
            for (std::size_t k = 0; k < a.cols_; ++k) {
                const double aik = a(i, k);
                if (aik == 0.0) continue;
                for (std::size_t j = 0; j < b.cols_; ++j) out(i, j) += aik * b(k, j);
            }
        return out;
    }

    friend bool operator==(const Matrix&, const Matrix&) = default;

private:
    void require_same(const Matrix& o) const
    {
        if (rows_ != o.rows_ || cols_ != o.cols_) throw InputError("matrix shape mismatch");
    }

    std::size_t rows_ = 0;
    std::size_t cols_ = 0;
    std::vector<double> data_;
};

struct SymmetricEigen {
    std::vector<double> values;  // ascending
    Matrix vectors;              // column i is the eigenvector for values[i]
    int sweeps = 0;
};

/// Cyclic Jacobi eigendecomposition of a symmetric matrix. Only the upper
/// triangle is read. Eigenvalues are returned in ascending order.
inline SymmetricEigen jacobi_eigen(const Matrix& input, double tol = 1e-15, int max_sweeps = 100)
{
    const std::size_t n = input.rows();
    if (n != input.cols()) throw InputError("jacobi_eigen: matrix is not square");

    Matrix a(n, n);
    for (std::size_t i = 0; i < n; ++i)
        for (std::size_t j = i; j < n; ++j) a(i, j) = a(j, i) = input(i, j);
    Matrix v = Matrix::identity(n);

    const auto off_norm = [&] {
        double s = 0.0;
        for (std::size_t i = 0; i < n; ++i)
            for (std::size_t j = i + 1; j < n; ++j) s += a(i, j) * a(i, j);
        return std::sqrt(2.0 * s);
    };
    double scale = 0.0;
    for (double x : a.values()) scale += x * x;
    scale = std::sqrt(scale);

    int sweep = 0;
    for (; sweep < max_sweeps; ++sweep) {
        if (off_norm() <= tol * scale) break;
        for (std::size_t p = 0; p + 1 < n; ++p) {
            for (std::size_t q = p + 1; q < n; ++q) {
                const double apq = a(p, q);
                if (apq == 0.0) continue;
                // Rotation angle from the stable tangent formula.
                const double theta = (a(q, q) - a(p, p)) / (2.0 * apq);
                const double t = std::copysign(1.0, theta) / (std::abs(theta) + std::sqrt(theta * theta + 1.0));
                const double c = 1.0 / std::sqrt(t * t + 1.0);
                const double s = t * c;

                for (std::size_t k = 0; k < n; ++k) {
                    const double akp = a(k, p);
                    const double akq = a(k, q);
                    a(k, p) = c * akp - s * akq;
                    a(k, q) = s * akp + c * akq;
                }
                for (std::size_t k = 0; k < n; ++k) {
                    const double apk = a(p, k);
                    const double aqk = a(q, k);
                    a(p, k) = c * apk - s * aqk;
                    a(q, k) = s * apk + c * aqk;
                }
                a(p, q) = a(q, p) = 0.0;
                for (std::size_t k = 0; k < n; ++k) {
                    const double vkp = v(k, p);
                    const double vkq = v(k, q);
                    v(k, p) = c * vkp - s * vkq;
                    v(k, q) = s * vkp + c * vkq;
                }
            }
        }
    }
    if (off_norm() > 1e-10 * std::max(scale, 1e-300))
        throw RuntimeFailure("jacobi_eigen: no convergence after " + std::to_string(max_sweeps) + " sweeps");

    std::vector<std::size_t> order(n);
    std::iota(order.begin(), order.end(), 0);
    std::stable_sort(order.begin(), order.end(), [&](std::size_t x, std::size_t y) { return a(x, x) < a(y, y); });

    SymmetricEigen out;
    out.values.resize(n);
    out.vectors = Matrix(n, n);
    out.sweeps = sweep;
    for (std::size_t j = 0; j < n; ++j) {
        out.values[j] = a(order[j], order[j]);
        for (std::size_t k = 0; k < n; ++k) out.vectors(k, j) = v(k, order[j]);
    }
    return out;
}

/// Solves A x = b for symmetric positive definite A. Throws if A is not
/// numerically positive definite.
inline std::vector<double> cholesky_solve(const Matrix& a, std::span<const double> b)
{
    const std::size_t n = a.rows();
    if (n != a.cols() || b.size() != n) throw InputError("cholesky_solve: shape mismatch");
    Matrix l(n, n);
    for (std::size_t j = 0; j < n; ++j) {
        double d = a(j, j);
        for (std::size_t k = 0; k < j; ++k) d -= l(j, k) * l(j, k);
        if (!(d > 0.0) || !std::isfinite(d))
            throw RuntimeFailure("cholesky_solve: matrix is not positive definite (pivot " + std::to_string(j) + ")");
        l(j, j) = std::sqrt(d);
        for (std::size_t i = j + 1; i < n; ++i) {
            double s = a(i, j);
            for (std::size_t k = 0; k < j; ++k) s -= l(i, k) * l(j, k);
            l(i, j) = s / l(j, j);
        }
    }
    std::vector<double> y(n);
    for (std::size_t i = 0; i < n; ++i) {
        double s = b[i];
        for (std::size_t k = 0; k < i; ++k) s -= l(i, k) * y[k];
        y[i] = s / l(i, i);
    }
    std::vector<double> x(n);
    for (std::size_t i = n; i-- > 0;) {
        double s = y[i];
        for (std::size_t k = i + 1; k < n; ++k) s -= l(k, i) * x[k];
        x[i] = s / l(i, i);
    }
    return x;
}

} // namespace milrp
