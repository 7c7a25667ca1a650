#pragma once

#include <cmath>
#include <cstddef>
#include <initializer_list>
#include <numeric>
#include <stdexcept>
#include <string>
#include <vector>

namespace ldlt {

struct DimensionMismatch : std::runtime_error {
    explicit DimensionMismatch(const std::string& what) : std::runtime_error(what) {}
};

struct NonFiniteValue : std::runtime_error {
    explicit NonFiniteValue(const std::string& what) : std::runtime_error(what) {}
};

/// Dense row-major matrix of 64-bit reals. Column vectors are n x 1.
class Matrix {
public:
    Matrix() = default;

    Matrix(int rows, int cols)
        : rows_(rows), cols_(cols), data_(static_cast<size_t>(rows) * cols, 0.0) {
        if (rows < 0 || cols < 0) throw DimensionMismatch("negative matrix dimension");
    }

    Matrix(int rows, int cols, std::vector<double> data)
        : rows_(rows), cols_(cols), data_(std::move(data)) {
        if (data_.size() != static_cast<size_t>(rows) * cols)
            throw DimensionMismatch("data length does not match rows*cols");
        check_finite();
    }

    Matrix(std::initializer_list<std::initializer_list<double>> rows) {
        rows_ = static_cast<int>(rows.size());
        cols_ = rows_ > 0 ? static_cast<int>(rows.begin()->size()) : 0;
        data_.reserve(static_cast<size_t>(rows_) * cols_);
        for (const auto& r : rows) {
            if (static_cast<int>(r.size()) != cols_)
                throw DimensionMismatch("ragged initializer list");
            data_.insert(data_.end(), r.begin(), r.end());
        }
        check_finite();
    }

    static Matrix zeros(int rows, int cols) { return Matrix(rows, cols); }

    static Matrix identity(int n) {
        Matrix m(n, n);
        for (int i = 0; i < n; ++i) m(i, i) = 1.0;
        return m;
    }

    static Matrix diag(const std::vector<double>& d) {
        Matrix m(static_cast<int>(d.size()), static_cast<int>(d.size()));
        for (size_t i = 0; i < d.size(); ++i) m(static_cast<int>(i), static_cast<int>(i)) = d[i];
        return m;
    }

    int rows() const { return rows_; }
    int cols() const { return cols_; }
    size_t size() const { return data_.size(); }

    double& operator()(int i, int j) { return data_[static_cast<size_t>(i) * cols_ + j]; }
    double operator()(int i, int j) const { return data_[static_cast<size_t>(i) * cols_ + j]; }

    double* data() { return data_.data(); }
    const double* data() const { return data_.data(); }

    bool same_shape(const Matrix& o) const { return rows_ == o.rows_ && cols_ == o.cols_; }

    void check_finite() const {
        for (double v : data_)
            if (!std::isfinite(v)) throw NonFiniteValue("matrix contains NaN/Inf");
    }

    bool is_finite() const {
        for (double v : data_)
            if (!std::isfinite(v)) return false;
        return true;
    }

private:
    int rows_ = 0;
    int cols_ = 0;
    std::vector<double> data_;
};

Matrix operator+(const Matrix& a, const Matrix& b);
Matrix operator-(const Matrix& a, const Matrix& b);
Matrix operator*(double s, const Matrix& a);
Matrix matmul(const Matrix& a, const Matrix& b);
/// a^T * b without forming the transpose.
Matrix matmul_tn(const Matrix& a, const Matrix& b);
/// a * b^T without forming the transpose.
Matrix matmul_nt(const Matrix& a, const Matrix& b);
Matrix transpose(const Matrix& a);
/// (a + a^T) / 2.
Matrix symmetrize(const Matrix& a);
/// a + s * I (square a).
Matrix add_scaled_identity(const Matrix& a, double s);
/// W^T W, exactly symmetric by construction.
Matrix gram_tn(const Matrix& w);
/// W W^T, exactly symmetric by construction.
Matrix gram_nt(const Matrix& w);
double frobenius_norm(const Matrix& a);
double dot(const Matrix& a, const Matrix& b);
double max_abs(const Matrix& a);

/// Ordered block sizes d_0..d_n of a block-partitioned square matrix.
struct BlockPartition {
    std::vector<int> sizes;

    explicit BlockPartition(std::vector<int> s) : sizes(std::move(s)) {
        for (int d : sizes)
            if (d < 1) throw DimensionMismatch("block sizes must be >= 1");
    }

    int num_blocks() const { return static_cast<int>(sizes.size()); }
    int total() const { return std::accumulate(sizes.begin(), sizes.end(), 0); }

    int offset(int k) const {
        int o = 0;
        for (int i = 0; i < k; ++i) o += sizes[i];
        return o;
    }
};

/// Copies block (bi, bj) of m under partition p.
Matrix extract_block(const Matrix& m, const BlockPartition& p, int bi, int bj);
/// Writes block (bi, bj) of m in place.
void set_block(Matrix& m, const BlockPartition& p, int bi, int bj, const Matrix& v);

} // namespace ldlt
