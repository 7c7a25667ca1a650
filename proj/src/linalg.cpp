#include "ldlt/linalg.hpp"

#include <algorithm>
#include <cmath>
#include <random>

namespace ldlt {

Matrix cholesky_upper(const Matrix& a) {
    if (a.rows() != a.cols()) throw DimensionMismatch("cholesky_upper: matrix not square");
    const int n = a.rows();
    Matrix s = symmetrize(a);
    Matrix r(n, n);
    for (int k = 0; k < n; ++k) {
        double pivot = s(k, k);
        for (int i = 0; i < k; ++i) pivot -= r(i, k) * r(i, k);
        if (pivot <= kPdFloor)
            throw NotPositiveDefinite("cholesky_upper: pivot " + std::to_string(pivot) +
                                      " at index " + std::to_string(k));
        const double rkk = std::sqrt(pivot);
        r(k, k) = rkk;
        for (int j = k + 1; j < n; ++j) {
            double v = s(k, j);
            for (int i = 0; i < k; ++i) v -= r(i, k) * r(i, j);
            r(k, j) = v / rkk;
        }
    }
    return r;
}

namespace {

// Solves T x = b columnwise for triangular T given as (value accessor, lower flag).
void check_triangular_solve(const Matrix& r, const Matrix& b, Side side) {
    if (r.rows() != r.cols()) throw DimensionMismatch("solve_triangular: r not square");
    const int need = side == Side::Left ? b.rows() : b.cols();
    if (need != r.rows()) throw DimensionMismatch("solve_triangular: shape mismatch");
    for (int i = 0; i < r.rows(); ++i)
        if (std::abs(r(i, i)) < 1e-300)
            throw SingularTriangular("zero diagonal at index " + std::to_string(i));
}

} // namespace

Matrix solve_triangular(const Matrix& r, const Matrix& b, Side side, bool transpose,
                        UpLo uplo) {
    check_triangular_solve(r, b, side);
    const int n = r.rows();
    // Effective orientation of op(r).
    const bool lower = (uplo == UpLo::Lower) != transpose;
    auto op = [&](int i, int j) { return transpose ? r(j, i) : r(i, j); };

    Matrix x = b;
    if (side == Side::Left) {
        // op(r) X = B, forward or back substitution over rows.
        const int m = b.cols();
        if (lower) {
            for (int i = 0; i < n; ++i) {
                for (int k = 0; k < i; ++k) {
                    const double c = op(i, k);
                    if (c == 0.0) continue;
                    for (int j = 0; j < m; ++j) x(i, j) -= c * x(k, j);
                }
                const double d = op(i, i);
                for (int j = 0; j < m; ++j) x(i, j) /= d;
            }
        } else {
            for (int i = n - 1; i >= 0; --i) {
                for (int k = i + 1; k < n; ++k) {
                    const double c = op(i, k);
                    if (c == 0.0) continue;
                    for (int j = 0; j < m; ++j) x(i, j) -= c * x(k, j);
                }
                const double d = op(i, i);
                for (int j = 0; j < m; ++j) x(i, j) /= d;
            }
        }
    } else {
        // X op(r) = B, substitution over columns.
        const int m = b.rows();
        if (lower) {
            for (int j = n - 1; j >= 0; --j) {
                for (int k = j + 1; k < n; ++k) {
                    const double c = op(k, j);
                    if (c == 0.0) continue;
                    for (int i = 0; i < m; ++i) x(i, j) -= x(i, k) * c;
                }
                const double d = op(j, j);
                for (int i = 0; i < m; ++i) x(i, j) /= d;
            }
        } else {
            for (int j = 0; j < n; ++j) {
                for (int k = 0; k < j; ++k) {
                    const double c = op(k, j);
                    if (c == 0.0) continue;
                    for (int i = 0; i < m; ++i) x(i, j) -= x(i, k) * c;
                }
                const double d = op(j, j);
                for (int i = 0; i < m; ++i) x(i, j) /= d;
            }
        }
    }
    return x;
}

Matrix LdltFactors::reconstruct() const {
    const int nb = partition.num_blocks();
    const int n = partition.total();
    // Assemble L and D densely; fine at verification scale.
    Matrix l = Matrix::identity(n);
    Matrix d(n, n);
    for (int k = 0; k < nb; ++k) set_block(d, partition, k, k, d_blocks[k]);
    for (const auto& [ij, blk] : l_blocks) set_block(l, partition, ij.first, ij.second, blk);
    return matmul(matmul(l, d), transpose(l));
}

LdltFactors block_ldlt(const Matrix& m, const BlockPartition& p) {
    if (m.rows() != m.cols() || m.rows() != p.total())
        throw DimensionMismatch("block_ldlt: partition does not match matrix");
    const Matrix s = symmetrize(m);
    const int nb = p.num_blocks();
    LdltFactors f{p, {}, {}};
    std::vector<Matrix> chol_d; // upper factor of each D_k, empty when not needed/failed
    chol_d.reserve(nb);
    for (int j = 0; j < nb; ++j) {
        // (LD1) D_j = A_jj - sum_k L_jk D_k L_jk^T
        Matrix dj = extract_block(s, p, j, j);
        for (int k = 0; k < j; ++k) {
            const Matrix* ljk = f.l_block(j, k);
            if (!ljk) continue;
            dj = dj - matmul_nt(matmul(*ljk, f.d_blocks[k]), *ljk);
        }
        dj = symmetrize(dj);
        f.d_blocks.push_back(dj);
        if (j + 1 == nb) break; // last pivot is never inverted
        Matrix rj(0, 0);
        try {
            rj = cholesky_upper(dj);
        } catch (const NotPositiveDefinite&) {
            throw SingularPivotBlock(j + 1);
        }
        // (LD2) L_ij = (A_ij - sum_k L_ik D_k L_jk^T) D_j^{-1}
        for (int i = j + 1; i < nb; ++i) {
            Matrix num = extract_block(s, p, i, j);
            for (int k = 0; k < j; ++k) {
                const Matrix* lik = f.l_block(i, k);
                const Matrix* ljk = f.l_block(j, k);
                if (!lik || !ljk) continue;
                num = num - matmul_nt(matmul(*lik, f.d_blocks[k]), *ljk);
            }
            // X D_j = num  =>  D_j X^T = num^T, two triangular solves on R_j.
            Matrix xt = solve_triangular(rj, transpose(num), Side::Left, true);
            xt = solve_triangular(rj, xt, Side::Left, false);
            f.l_blocks.emplace(std::make_pair(i, j), transpose(xt));
        }
    }
    return f;
}

double spectral_norm(const Matrix& a) {
    if (a.rows() == 0 || a.cols() == 0) return 0.0;
    std::mt19937_64 rng(kLibrarySeed);
    std::normal_distribution<double> gauss(0.0, 1.0);
    Matrix v(a.cols(), 1);
    for (int i = 0; i < a.cols(); ++i) v(i, 0) = gauss(rng);
    double nv = frobenius_norm(v);
    for (int i = 0; i < a.cols(); ++i) v(i, 0) /= nv;

    double prev = -1.0;
    for (int it = 0; it < 10000; ++it) {
        Matrix u = matmul(a, v);
        const double sigma = frobenius_norm(u);
        if (sigma == 0.0) return 0.0;
        if (prev >= 0.0 && std::abs(sigma - prev) < 1e-12 * sigma) return sigma;
        prev = sigma;
        v = matmul_tn(a, u);
        const double nw = frobenius_norm(v);
        if (nw == 0.0) return sigma;
        for (int i = 0; i < a.cols(); ++i) v(i, 0) /= nw;
    }
    // Not converged (clustered singular values); the oracle always answers.
    const Matrix g = a.rows() >= a.cols() ? gram_tn(a) : gram_nt(a);
    const auto eig = sym_eig(g);
    return std::sqrt(std::max(0.0, eig.eigenvalues.back()));
}

EigenDecomposition sym_eig(const Matrix& a) {
    if (a.rows() != a.cols()) throw DimensionMismatch("sym_eig: matrix not square");
    const int n = a.rows();
    Matrix d = symmetrize(a);
    Matrix v = Matrix::identity(n);
    if (n <= 1) return {{n == 1 ? d(0, 0) : 0.0}, v};

    const double scale = std::max(frobenius_norm(d), 1e-300);
    const int max_sweeps = 100 * n;
    for (int sweep = 0; sweep < max_sweeps; ++sweep) {
        double off = 0.0;
        for (int i = 0; i < n; ++i)
            for (int j = i + 1; j < n; ++j) off += d(i, j) * d(i, j);
        if (std::sqrt(off) <= 1e-15 * scale) {
            EigenDecomposition out;
            std::vector<int> order(n);
            for (int i = 0; i < n; ++i) order[i] = i;
            std::sort(order.begin(), order.end(),
                      [&](int x, int y) { return d(x, x) < d(y, y); });
            out.eigenvalues.resize(n);
            out.eigenvectors = Matrix(n, n);
            for (int c = 0; c < n; ++c) {
                out.eigenvalues[c] = d(order[c], order[c]);
                for (int rix = 0; rix < n; ++rix) out.eigenvectors(rix, c) = v(rix, order[c]);
            }
            return out;
        }
        for (int pq = 0; pq < n; ++pq) {
            for (int q = pq + 1; q < n; ++q) {
                const int p = pq;
                const double apq = d(p, q);
                if (apq == 0.0) continue;
                const double theta = (d(q, q) - d(p, p)) / (2.0 * apq);
                const double t = (theta >= 0.0 ? 1.0 : -1.0) /
                                 (std::abs(theta) + std::sqrt(theta * theta + 1.0));
                const double c = 1.0 / std::sqrt(t * t + 1.0);
                const double s = t * c;
                for (int k = 0; k < n; ++k) {
                    const double dkp = d(k, p), dkq = d(k, q);
                    d(k, p) = c * dkp - s * dkq;
                    d(k, q) = s * dkp + c * dkq;
                }
                for (int k = 0; k < n; ++k) {
                    const double dpk = d(p, k), dqk = d(q, k);
                    d(p, k) = c * dpk - s * dqk;
                    d(q, k) = s * dpk + c * dqk;
                }
                for (int k = 0; k < n; ++k) {
                    const double vkp = v(k, p), vkq = v(k, q);
                    v(k, p) = c * vkp - s * vkq;
                    v(k, q) = s * vkp + c * vkq;
                }
            }
        }
    }
    throw ConvergenceFailure("sym_eig: Jacobi sweeps exhausted");
}

Matrix sqrt_psd(const Matrix& a) {
    const auto eig = sym_eig(a);
    const int n = a.rows();
    double lmax = 0.0;
    for (double l : eig.eigenvalues) lmax = std::max(lmax, std::abs(l));
    const double floor = -1e-10 * std::max(lmax, 1.0);
    Matrix scaled = eig.eigenvectors;
    for (int j = 0; j < n; ++j) {
        const double l = eig.eigenvalues[j];
        if (l < floor) throw NotPSD("sqrt_psd: eigenvalue " + std::to_string(l));
        const double s = std::sqrt(std::max(l, 0.0));
        for (int i = 0; i < n; ++i) scaled(i, j) *= s;
    }
    return symmetrize(matmul_nt(scaled, eig.eigenvectors));
}

double min_eigenvalue(const Matrix& a) { return sym_eig(a).eigenvalues.front(); }

} // namespace ldlt
