#include "ksim/matrix.hpp"

#include <cmath>

namespace ksim {

Matrix::Matrix(std::size_t rows, std::size_t cols, std::vector<double> data)
    : rows_(rows), cols_(cols), data_(std::move(data)) {
    if (data_.size() != rows_ * cols_)
        throw DimensionError("Matrix", "data length " + std::to_string(data_.size()) +
                                           " != " + std::to_string(rows_) + "x" + std::to_string(cols_));
}

Matrix::Matrix(std::initializer_list<std::initializer_list<double>> rows) {
    rows_ = rows.size();
    cols_ = rows_ ? rows.begin()->size() : 0;
    data_.reserve(rows_ * cols_);
    for (const auto& r : rows) {
        if (r.size() != cols_) throw DimensionError("Matrix", "ragged initializer");
        data_.insert(data_.end(), r.begin(), r.end());
    }
}

Matrix Matrix::identity(std::size_t n) {
    Matrix m(n, n);
    for (std::size_t i = 0; i < n; ++i) m(i, i) = 1.0;
    return m;
}

bool Matrix::all_finite() const {
    for (double v : data_)
        if (!std::isfinite(v)) return false;
    return true;
}

Matrix& Matrix::operator+=(const Matrix& o) {
    if (!same_shape(o)) throw DimensionError("add", "shape mismatch");
    for (std::size_t i = 0; i < data_.size(); ++i) data_[i] += o.data_[i];
    return *this;
}

Matrix& Matrix::operator*=(double s) {
    for (double& v : data_) v *= s;
    return *this;
}

Matrix operator+(Matrix a, const Matrix& b) {
    a += b;
    return a;
}

Matrix operator*(double s, Matrix a) {
    a *= s;
    return a;
}

Matrix matmul(const Matrix& a, const Matrix& b) {
    if (a.cols() != b.rows())
        throw DimensionError("matmul", std::to_string(a.rows()) + "x" + std::to_string(a.cols()) + " * " +
                                           std::to_string(b.rows()) + "x" + std::to_string(b.cols()));
    Matrix c(a.rows(), b.cols());
    const std::size_t n = b.cols();
    for (std::size_t i = 0; i < a.rows(); ++i) {
        double* out = c.row(i).data();
        for (std::size_t k = 0; k < a.cols(); ++k) {
            const double aik = a(i, k);
            const double* brow = b.row(k).data();
            for (std::size_t j = 0; j < n; ++j) out[j] += aik * brow[j];
        }
    }
    return c;
}

Matrix matmul_nt(const Matrix& a, const Matrix& b) {
    if (a.cols() != b.cols())
        throw DimensionError("matmul_nt", "inner dims " + std::to_string(a.cols()) + " vs " + std::to_string(b.cols()));
    Matrix c(a.rows(), b.rows());
    for (std::size_t i = 0; i < a.rows(); ++i)
        for (std::size_t j = 0; j < b.rows(); ++j) c(i, j) = dot(a.row(i), b.row(j));
    return c;
}

Matrix matmul_tn(const Matrix& a, const Matrix& b) {
    if (a.rows() != b.rows())
        throw DimensionError("matmul_tn", "outer dims " + std::to_string(a.rows()) + " vs " + std::to_string(b.rows()));
    Matrix c(a.cols(), b.cols());
    const std::size_t n = b.cols();
    for (std::size_t k = 0; k < a.rows(); ++k) {
        const double* brow = b.row(k).data();
        for (std::size_t i = 0; i < a.cols(); ++i) {
            const double aki = a(k, i);
            double* out = c.row(i).data();
            for (std::size_t j = 0; j < n; ++j) out[j] += aki * brow[j];
        }
    }
    return c;
}

Matrix transpose(const Matrix& a) {
    Matrix t(a.cols(), a.rows());
    for (std::size_t i = 0; i < a.rows(); ++i)
        for (std::size_t j = 0; j < a.cols(); ++j) t(j, i) = a(i, j);
    return t;
}

Matrix gather_rows(const Matrix& a, std::span<const std::size_t> rows) {
    Matrix out(rows.size(), a.cols());
    for (std::size_t i = 0; i < rows.size(); ++i) {
        if (rows[i] >= a.rows()) throw DimensionError("gather_rows", "row index out of range");
        auto src = a.row(rows[i]);
        std::copy(src.begin(), src.end(), out.row(i).begin());
    }
    return out;
}

Matrix normalize_rows(const Matrix& a) {
    Matrix out = a;
    for (std::size_t i = 0; i < a.rows(); ++i) {
        const double n = norm2(a.row(i));
        if (n == 0.0) continue;
        for (double& v : out.row(i)) v /= n;
    }
    return out;
}

double dot(std::span<const double> a, std::span<const double> b) {
    double s = 0.0;
    for (std::size_t i = 0; i < a.size(); ++i) s += a[i] * b[i];
    return s;
}

double norm2(std::span<const double> a) { return std::sqrt(dot(a, a)); }

}  // namespace ksim
