#include "ldlt/matrix.hpp"

#include <algorithm>

namespace ldlt {

static void require_same_shape(const Matrix& a, const Matrix& b, const char* op) {
    if (!a.same_shape(b)) throw DimensionMismatch(std::string(op) + ": shape mismatch");
}

Matrix operator+(const Matrix& a, const Matrix& b) {
    require_same_shape(a, b, "operator+");
    Matrix out(a.rows(), a.cols());
    for (size_t i = 0; i < a.size(); ++i) out.data()[i] = a.data()[i] + b.data()[i];
    return out;
}

Matrix operator-(const Matrix& a, const Matrix& b) {
    require_same_shape(a, b, "operator-");
    Matrix out(a.rows(), a.cols());
    for (size_t i = 0; i < a.size(); ++i) out.data()[i] = a.data()[i] - b.data()[i];
    return out;
}

Matrix operator*(double s, const Matrix& a) {
    Matrix out(a.rows(), a.cols());
    for (size_t i = 0; i < a.size(); ++i) out.data()[i] = s * a.data()[i];
    return out;
}

Matrix matmul(const Matrix& a, const Matrix& b) {
    if (a.cols() != b.rows()) throw DimensionMismatch("matmul: inner dimensions differ");
    Matrix out(a.rows(), b.cols());
    const int m = a.rows(), k = a.cols(), n = b.cols();
    for (int i = 0; i < m; ++i) {
        double* oi = out.data() + static_cast<size_t>(i) * n;
        for (int l = 0; l < k; ++l) {
            const double ail = a(i, l);
            if (ail == 0.0) continue;
            const double* bl = b.data() + static_cast<size_t>(l) * n;
            for (int j = 0; j < n; ++j) oi[j] += ail * bl[j];
        }
    }
    return out;
}

Matrix matmul_tn(const Matrix& a, const Matrix& b) {
    if (a.rows() != b.rows()) throw DimensionMismatch("matmul_tn: inner dimensions differ");
    Matrix out(a.cols(), b.cols());
    const int m = a.cols(), k = a.rows(), n = b.cols();
    for (int l = 0; l < k; ++l) {
        const double* al = a.data() + static_cast<size_t>(l) * m;
        const double* bl = b.data() + static_cast<size_t>(l) * n;
        for (int i = 0; i < m; ++i) {
            const double ali = al[i];
            if (ali == 0.0) continue;
            double* oi = out.data() + static_cast<size_t>(i) * n;
            for (int j = 0; j < n; ++j) oi[j] += ali * bl[j];
        }
    }
    return out;
}

Matrix matmul_nt(const Matrix& a, const Matrix& b) {
    if (a.cols() != b.cols()) throw DimensionMismatch("matmul_nt: inner dimensions differ");
    Matrix out(a.rows(), b.rows());
    const int m = a.rows(), k = a.cols(), n = b.rows();
    for (int i = 0; i < m; ++i) {
        const double* ai = a.data() + static_cast<size_t>(i) * k;
        for (int j = 0; j < n; ++j) {
            const double* bj = b.data() + static_cast<size_t>(j) * k;
            double acc = 0.0;
            for (int l = 0; l < k; ++l) acc += ai[l] * bj[l];
            out(i, j) = acc;
        }
    }
    return out;
}

Matrix transpose(const Matrix& a) {
    Matrix out(a.cols(), a.rows());
    for (int i = 0; i < a.rows(); ++i)
        for (int j = 0; j < a.cols(); ++j) out(j, i) = a(i, j);
    return out;
}

Matrix symmetrize(const Matrix& a) {
    if (a.rows() != a.cols()) throw DimensionMismatch("symmetrize: matrix not square");
    Matrix out(a.rows(), a.cols());
    for (int i = 0; i < a.rows(); ++i)
        for (int j = 0; j < a.cols(); ++j) out(i, j) = 0.5 * (a(i, j) + a(j, i));
    return out;
}

Matrix add_scaled_identity(const Matrix& a, double s) {
    if (a.rows() != a.cols()) throw DimensionMismatch("add_scaled_identity: matrix not square");
    Matrix out = a;
    for (int i = 0; i < a.rows(); ++i) out(i, i) += s;
    return out;
}

Matrix gram_tn(const Matrix& w) {
    Matrix out(w.cols(), w.cols());
    for (int i = 0; i < w.cols(); ++i)
        for (int j = i; j < w.cols(); ++j) {
            double acc = 0.0;
            for (int l = 0; l < w.rows(); ++l) acc += w(l, i) * w(l, j);
            out(i, j) = acc;
            out(j, i) = acc;
        }
    return out;
}

Matrix gram_nt(const Matrix& w) {
    Matrix out(w.rows(), w.rows());
    for (int i = 0; i < w.rows(); ++i)
        for (int j = i; j < w.rows(); ++j) {
            double acc = 0.0;
            for (int l = 0; l < w.cols(); ++l) acc += w(i, l) * w(j, l);
            out(i, j) = acc;
            out(j, i) = acc;
        }
    return out;
}

double frobenius_norm(const Matrix& a) {
    double acc = 0.0;
    for (size_t i = 0; i < a.size(); ++i) acc += a.data()[i] * a.data()[i];
    return std::sqrt(acc);
}

double dot(const Matrix& a, const Matrix& b) {
    require_same_shape(a, b, "dot");
    double acc = 0.0;
    for (size_t i = 0; i < a.size(); ++i) acc += a.data()[i] * b.data()[i];
    return acc;
}

double max_abs(const Matrix& a) {
    double m = 0.0;
    for (size_t i = 0; i < a.size(); ++i) m = std::max(m, std::abs(a.data()[i]));
    return m;
}

Matrix extract_block(const Matrix& m, const BlockPartition& p, int bi, int bj) {
    const int oi = p.offset(bi), oj = p.offset(bj);
    Matrix out(p.sizes[bi], p.sizes[bj]);
    for (int i = 0; i < out.rows(); ++i)
        for (int j = 0; j < out.cols(); ++j) out(i, j) = m(oi + i, oj + j);
    return out;
}

void set_block(Matrix& m, const BlockPartition& p, int bi, int bj, const Matrix& v) {
    if (v.rows() != p.sizes[bi] || v.cols() != p.sizes[bj])
        throw DimensionMismatch("set_block: block shape mismatch");
    const int oi = p.offset(bi), oj = p.offset(bj);
    for (int i = 0; i < v.rows(); ++i)
        for (int j = 0; j < v.cols(); ++j) m(oi + i, oj + j) = v(i, j);
}

} // namespace ldlt
