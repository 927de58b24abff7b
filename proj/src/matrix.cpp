#include "rdml/matrix.hpp"

#include <algorithm>
#include <cmath>

#include "rdml/error.hpp"

namespace rdml {

Matrix::Matrix(std::size_t rows, std::size_t cols, double fill)
    : rows_(rows), cols_(cols), data_(rows * cols, fill) {}

Matrix::Matrix(std::size_t rows, std::size_t cols, std::vector<double> data)
    : rows_(rows), cols_(cols), data_(std::move(data)) {
    require(data_.size() == rows * cols, ErrorKind::ShapeMismatch,
            "matrix data length " + std::to_string(data_.size()) + " does not match " +
                std::to_string(rows) + "x" + std::to_string(cols));
}

Matrix::Matrix(std::initializer_list<std::initializer_list<double>> rows) {
    rows_ = rows.size();
    cols_ = rows_ == 0 ? 0 : rows.begin()->size();
    data_.reserve(rows_ * cols_);
    for (const auto& r : rows) {
        require(r.size() == cols_, ErrorKind::ShapeMismatch, "ragged matrix initializer");
        data_.insert(data_.end(), r.begin(), r.end());
    }
}

Matrix Matrix::identity(std::size_t n) {
    Matrix m(n, n);
    for (std::size_t i = 0; i < n; ++i) m(i, i) = 1.0;
    return m;
}

std::string Matrix::shape_str() const {
    return std::to_string(rows_) + "x" + std::to_string(cols_);
}

bool Matrix::all_finite() const noexcept {
    return std::all_of(data_.begin(), data_.end(), [](double v) { return std::isfinite(v); });
}

void Matrix::fill(double v) { std::fill(data_.begin(), data_.end(), v); }

Matrix& Matrix::operator+=(const Matrix& other) {
    require(same_shape(other), ErrorKind::ShapeMismatch,
            "add: " + shape_str() + " vs " + other.shape_str());
    for (std::size_t i = 0; i < data_.size(); ++i) data_[i] += other.data_[i];
    return *this;
}

Matrix& Matrix::operator-=(const Matrix& other) {
    require(same_shape(other), ErrorKind::ShapeMismatch,
            "sub: " + shape_str() + " vs " + other.shape_str());
    for (std::size_t i = 0; i < data_.size(); ++i) data_[i] -= other.data_[i];
    return *this;
}

Matrix& Matrix::operator*=(double s) {
    for (auto& v : data_) v *= s;
    return *this;
}

Matrix Matrix::gather_rows(std::span<const std::size_t> idx) const {
    Matrix out(idx.size(), cols_);
    for (std::size_t i = 0; i < idx.size(); ++i) {
        require(idx[i] < rows_, ErrorKind::InvalidArgument, "gather_rows: index out of range");
        std::copy_n(data_.begin() + static_cast<std::ptrdiff_t>(idx[i] * cols_), cols_,
                    out.data_.begin() + static_cast<std::ptrdiff_t>(i * cols_));
    }
    return out;
}

Matrix operator+(Matrix a, const Matrix& b) { return a += b; }
Matrix operator-(Matrix a, const Matrix& b) { return a -= b; }
Matrix operator*(Matrix a, double s) { return a *= s; }

Matrix matmul(const Matrix& a, const Matrix& b) {
    require(a.cols() == b.rows(), ErrorKind::ShapeMismatch,
            "matmul: " + a.shape_str() + " * " + b.shape_str());
    Matrix out(a.rows(), b.cols());
    const std::size_t n = b.cols();
    for (std::size_t i = 0; i < a.rows(); ++i) {
        double* o = out.data().data() + i * n;
        for (std::size_t k = 0; k < a.cols(); ++k) {
            const double aik = a(i, k);
            const double* brow = b.data().data() + k * n;
            for (std::size_t j = 0; j < n; ++j) o[j] += aik * brow[j];
        }
    }
    return out;
}

Matrix matmul_tn(const Matrix& a, const Matrix& b) {
    require(a.rows() == b.rows(), ErrorKind::ShapeMismatch,
            "matmul_tn: " + a.shape_str() + "^T * " + b.shape_str());
    Matrix out(a.cols(), b.cols());
    const std::size_t n = b.cols();
    for (std::size_t k = 0; k < a.rows(); ++k) {
        const double* brow = b.data().data() + k * n;
        for (std::size_t i = 0; i < a.cols(); ++i) {
            const double aki = a(k, i);
            double* o = out.data().data() + i * n;
            for (std::size_t j = 0; j < n; ++j) o[j] += aki * brow[j];
        }
    }
    return out;
}

Matrix matmul_nt(const Matrix& a, const Matrix& b) {
    require(a.cols() == b.cols(), ErrorKind::ShapeMismatch,
            "matmul_nt: " + a.shape_str() + " * " + b.shape_str() + "^T");
    Matrix out(a.rows(), b.rows());
    for (std::size_t i = 0; i < a.rows(); ++i)
        for (std::size_t j = 0; j < b.rows(); ++j) out(i, j) = dot(a.row(i), b.row(j));
    return out;
}

Matrix transpose(const Matrix& a) {
    Matrix out(a.cols(), a.rows());
    for (std::size_t i = 0; i < a.rows(); ++i)
        for (std::size_t j = 0; j < a.cols(); ++j) out(j, i) = a(i, j);
    return out;
}

Matrix col_sums(const Matrix& a) {
    Matrix out(1, a.cols());
    for (std::size_t i = 0; i < a.rows(); ++i)
        for (std::size_t j = 0; j < a.cols(); ++j) out(0, j) += a(i, j);
    return out;
}

Matrix hconcat(std::span<const Matrix> blocks) {
    if (blocks.empty()) return {};
    std::size_t cols = 0;
    for (const auto& b : blocks) {
        require(b.rows() == blocks[0].rows(), ErrorKind::ShapeMismatch,
                "hconcat: row counts differ");
        cols += b.cols();
    }
    Matrix out(blocks[0].rows(), cols);
    for (std::size_t r = 0; r < out.rows(); ++r) {
        std::size_t off = 0;
        for (const auto& b : blocks) {
            std::copy(b.row(r).begin(), b.row(r).end(), out.row(r).begin() + static_cast<std::ptrdiff_t>(off));
            off += b.cols();
        }
    }
    return out;
}

double dot(std::span<const double> a, std::span<const double> b) {
    double s = 0.0;
    for (std::size_t i = 0; i < a.size(); ++i) s += a[i] * b[i];
    return s;
}

double norm2(std::span<const double> a) { return std::sqrt(dot(a, a)); }

double max_abs(const Matrix& a) {
    double m = 0.0;
    for (double v : a.data()) m = std::max(m, std::abs(v));
    return m;
}

double frobenius_norm(const Matrix& a) { return norm2(a.data()); }

}  // namespace rdml
