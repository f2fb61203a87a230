#pragma once

#include <cstddef>
#include <initializer_list>
#include <span>
#include <stdexcept>
#include <string>
#include <vector>

namespace ksim {

/// Thrown when operand shapes do not satisfy an operation's contract.
class DimensionError : public std::invalid_argument {
public:
    DimensionError(const std::string& op, const std::string& detail)
        : std::invalid_argument(op + ": " + detail) {}
};

/// Dense row-major matrix of doubles.
class Matrix {
public:
    Matrix() = default;
    Matrix(std::size_t rows, std::size_t cols, double fill = 0.0)
        : rows_(rows), cols_(cols), data_(rows * cols, fill) {}
    Matrix(std::size_t rows, std::size_t cols, std::vector<double> data);
    Matrix(std::initializer_list<std::initializer_list<double>> rows);

    static Matrix identity(std::size_t n);

    std::size_t rows() const { return rows_; }
    std::size_t cols() const { return cols_; }
    std::size_t size() const { return data_.size(); }
    bool empty() const { return data_.empty(); }

    double& operator()(std::size_t r, std::size_t c) { return data_[r * cols_ + c]; }
    double operator()(std::size_t r, std::size_t c) const { return data_[r * cols_ + c]; }

    std::span<double> row(std::size_t r) { return {data_.data() + r * cols_, cols_}; }
    std::span<const double> row(std::size_t r) const { return {data_.data() + r * cols_, cols_}; }

    std::span<double> values() { return data_; }
    std::span<const double> values() const { return data_; }
    const std::vector<double>& data() const { return data_; }

    bool same_shape(const Matrix& o) const { return rows_ == o.rows_ && cols_ == o.cols_; }
    bool all_finite() const;

    Matrix& operator+=(const Matrix& o);
    Matrix& operator*=(double s);

    friend bool operator==(const Matrix& a, const Matrix& b) {
        return a.rows_ == b.rows_ && a.cols_ == b.cols_ && a.data_ == b.data_;
    }

private:
    std::size_t rows_ = 0;
    std::size_t cols_ = 0;
    std::vector<double> data_;
};

Matrix operator+(Matrix a, const Matrix& b);
Matrix operator*(double s, Matrix a);

/// C = A * B
Matrix matmul(const Matrix& a, const Matrix& b);
/// C = A * B^T
Matrix matmul_nt(const Matrix& a, const Matrix& b);
/// C = A^T * B
Matrix matmul_tn(const Matrix& a, const Matrix& b);
Matrix transpose(const Matrix& a);

/// Rows selected by index, in the given order.
Matrix gather_rows(const Matrix& a, std::span<const std::size_t> rows);

/// L2-normalizes every row. Zero rows stay zero.
Matrix normalize_rows(const Matrix& a);

double dot(std::span<const double> a, std::span<const double> b);
double norm2(std::span<const double> a);

}  // namespace ksim
