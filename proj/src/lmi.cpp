#include "ldlt/lmi.hpp"

#include <cmath>
#include <cstdio>
#include <limits>
#include <utility>

namespace ldlt {

namespace {

// Lambda C with Lambda a positive diagonal.
Matrix lambda_scale(const std::vector<double>& lam, const Matrix& c) {
    if (static_cast<int>(lam.size()) != c.rows())
        throw DimensionMismatch("lambda size does not match C rows");
    Matrix out = c;
    for (int i = 0; i < c.rows(); ++i)
        for (int j = 0; j < c.cols(); ++j) out(i, j) *= lam[i];
    return out;
}

std::vector<double> scaled(const std::vector<double>& lam, double s) {
    std::vector<double> out(lam.size());
    for (size_t i = 0; i < lam.size(); ++i) out[i] = s * lam[i];
    return out;
}

void check_problem(const LmiProblem& prob) {
    const int n = static_cast<int>(prob.c.size());
    if (n < 1) throw DimensionMismatch("LMI needs at least one layer");
    if (prob.partition.num_blocks() != n + 1)
        throw DimensionMismatch("partition must have n+1 blocks");
    if (static_cast<int>(prob.lambda.size()) != n ||
        static_cast<int>(prob.slope.size()) != n)
        throw DimensionMismatch("lambda/slope count must match layer count");
    for (int j = 1; j <= n; ++j) {
        const Matrix& cj = prob.c[j - 1];
        if (cj.rows() != prob.partition.sizes[j] || cj.cols() != prob.partition.sizes[j - 1])
            throw DimensionMismatch("C_" + std::to_string(j) + " shape mismatch");
        if (static_cast<int>(prob.lambda[j - 1].size()) != cj.rows())
            throw DimensionMismatch("lambda_" + std::to_string(j) + " size mismatch");
        for (double v : prob.lambda[j - 1])
            if (!(v > 0.0) || !std::isfinite(v))
                throw DimensionMismatch("lambda entries must be positive and finite");
        const auto& [mj, lj] = prob.slope[j - 1];
        if (!std::isfinite(mj) || !std::isfinite(lj) || mj > lj)
            throw DimensionMismatch("slope bounds must be finite with m <= L");
    }
    if (prob.a.cols() != prob.partition.sizes[0])
        throw DimensionMismatch("A column count mismatch");
    if (prob.b.rows() != prob.a.rows() || prob.b.cols() != prob.partition.sizes[n])
        throw DimensionMismatch("B shape mismatch");
}

} // namespace

LmiProblem LmiProblem::from_residual(const ResidualBlockParams& p,
                                     const MaterializedBlock& m) {
    LmiProblem prob{p.lipschitz, m.a, m.b, m.c, {}, {}, BlockPartition({1})};
    std::vector<int> sizes;
    sizes.push_back(p.state_dim);
    for (int d : p.widths) sizes.push_back(d);
    prob.partition = BlockPartition(sizes);
    for (int j = 0; j < p.n(); ++j) {
        prob.lambda.push_back(std::vector<double>(p.widths[j], 1.0));
        prob.slope.emplace_back(p.activations[j].slope_min, p.activations[j].slope_max);
    }
    return prob;
}

LmiProblem LmiProblem::from_feedforward(const FeedforwardParams& p,
                                        const MaterializedFeedforward& m) {
    const int n = p.n();
    LmiProblem prob{p.lipschitz,
                    Matrix::zeros(p.widths[n], p.widths[0]),
                    Matrix::identity(p.widths[n]),
                    m.c,
                    {},
                    {},
                    BlockPartition(p.widths)};
    for (int j = 1; j <= n; ++j) {
        prob.lambda.push_back(std::vector<double>(p.widths[j], 1.0));
        prob.slope.emplace_back(p.activations[j - 1].slope_min,
                                p.activations[j - 1].slope_max);
    }
    return prob;
}

Matrix assemble_residual_lmi(const LmiProblem& prob) {
    check_problem(prob);
    const int n = static_cast<int>(prob.c.size());
    const auto& p = prob.partition;
    const double lip = prob.lipschitz;
    Matrix m(p.total(), p.total());

    // First diagonal block: L^2 I + 2 L_1 m_1 C_1^T Lambda_1 C_1 - A^T A.
    {
        const auto& [m1, l1] = prob.slope[0];
        Matrix b11 = (lip * lip) * Matrix::identity(p.sizes[0]) - matmul_tn(prob.a, prob.a);
        if (l1 * m1 != 0.0)
            b11 = b11 +
                  (2.0 * l1 * m1) * matmul_tn(prob.c[0], lambda_scale(prob.lambda[0], prob.c[0]));
        set_block(m, p, 0, 0, symmetrize(b11));
    }
    // Interior diagonal blocks: 2 L_j m_j C_j^T Lambda_j C_j + 2 Lambda_{j-1}.
    for (int j = 2; j <= n; ++j) {
        const auto& [mj, lj] = prob.slope[j - 1];
        Matrix blk = Matrix::diag(scaled(prob.lambda[j - 2], 2.0));
        if (lj * mj != 0.0)
            blk = blk + (2.0 * lj * mj) *
                            matmul_tn(prob.c[j - 1], lambda_scale(prob.lambda[j - 1], prob.c[j - 1]));
        set_block(m, p, j - 1, j - 1, symmetrize(blk));
    }
    // Last diagonal block: 2 Lambda_n - B^T B.
    set_block(m, p, n, n,
              symmetrize(Matrix::diag(scaled(prob.lambda[n - 1], 2.0)) - gram_tn(prob.b)));
    // Sub-diagonal: -(L_j + m_j) Lambda_j C_j; the corner -B^T A lands on the
    // same block when n = 1 and the two contributions add.
    for (int j = 1; j <= n; ++j) {
        const auto& [mj, lj] = prob.slope[j - 1];
        Matrix sub = (-(lj + mj)) * lambda_scale(prob.lambda[j - 1], prob.c[j - 1]);
        if (j == 1 && n == 1) sub = sub - matmul_tn(prob.b, prob.a);
        set_block(m, p, j, j - 1, sub);
        set_block(m, p, j - 1, j, transpose(sub));
    }
    if (n > 1) {
        const Matrix corner = -1.0 * matmul_tn(prob.b, prob.a);
        set_block(m, p, n, 0, corner);
        set_block(m, p, 0, n, transpose(corner));
    }
    return m;
}

Matrix assemble_feedforward_lmi(const LmiProblem& prob) {
    LmiProblem q = prob;
    q.a = Matrix::zeros(prob.partition.sizes.back(), prob.partition.sizes.front());
    q.b = Matrix::identity(prob.partition.sizes.back());
    return assemble_residual_lmi(q);
}

Certificate certify(const Matrix& m, const BlockPartition& p) {
    if (m.rows() != m.cols() || m.rows() != p.total())
        throw DimensionMismatch("certify: partition does not match matrix");
    const double tol = 1e-8 * std::max(1.0, spectral_norm(m));
    Certificate cert;
    try {
        LdltFactors f = block_ldlt(m, p);
        double lo = std::numeric_limits<double>::infinity();
        int arg = 0;
        for (int k = 0; k < p.num_blocks(); ++k) {
            const double e = min_eigenvalue(f.d_blocks[k]);
            if (e < lo) {
                lo = e;
                arg = k;
            }
        }
        cert.min_block_eigenvalue = lo;
        cert.factors = std::move(f);
        if (lo >= -tol) {
            cert.verdict = Verdict::Certified;
        } else {
            cert.verdict = Verdict::Refuted;
            cert.failing_block = arg + 1;
        }
    } catch (const SingularPivotBlock& e) {
        // A pivot that is not positive definite while later columns still
        // need it; no complete factorization exists, so refute outright.
        cert.verdict = Verdict::Refuted;
        cert.failing_block = e.block;
        cert.min_block_eigenvalue = min_eigenvalue(m);
    }
    return cert;
}

void dump_matrix(const Matrix& m, const std::string& path) {
    std::FILE* f = std::fopen(path.c_str(), "w");
    if (!f) throw std::runtime_error("dump_matrix: cannot open " + path);
    std::fprintf(f, "i,j,value\n");
    for (int i = 0; i < m.rows(); ++i)
        for (int j = 0; j < m.cols(); ++j) std::fprintf(f, "%d,%d,%.17g\n", i, j, m(i, j));
    std::fclose(f);
}

} // namespace ldlt
