#pragma once

#include <optional>
#include <string>

#include "ldlt/linalg.hpp"
#include "ldlt/matrix.hpp"
#include "ldlt/param.hpp"

namespace ldlt {

/// Explicit cyclic block-tridiagonal LMI data. Slope bounds and Lambda
/// multipliers are general; construction always uses (0, 1) and identity, but
/// the verifier accepts externally-trained weights under any finite bounds.
struct LmiProblem {
    double lipschitz = 1.0;
    Matrix a;                                    // maps state block; zero for feedforward
    Matrix b;                                    // identity for feedforward
    std::vector<Matrix> c;                       // C_1..C_n
    std::vector<std::vector<double>> lambda;     // positive diagonals, per layer
    std::vector<std::pair<double, double>> slope; // (m_j, L_j) per layer
    BlockPartition partition;                    // [d_x, d_1..d_n]

    static LmiProblem from_residual(const ResidualBlockParams& p, const MaterializedBlock& m);
    static LmiProblem from_feedforward(const FeedforwardParams& p,
                                       const MaterializedFeedforward& m);
};

enum class Verdict { Certified, Refuted };

struct Certificate {
    Verdict verdict = Verdict::Refuted;
    double min_block_eigenvalue = 0.0;
    std::optional<int> failing_block; // 1-based
    std::optional<LdltFactors> factors;
};

/// Returns the NEGATED LMI matrix M = -Mbar, so the Lipschitz property holds
/// iff M is PSD.
Matrix assemble_residual_lmi(const LmiProblem& prob);

/// Residual assembly with A = 0, B = I substituted.
Matrix assemble_feedforward_lmi(const LmiProblem& prob);

/// Block LDL^T certification: Certified iff every D block has
/// lambda_min >= -psd_tol, psd_tol = 1e-8 * max(1, ||m||_2).
Certificate certify(const Matrix& m, const BlockPartition& p);

/// CSV dump ("i,j,value", 17 significant digits) for external plotting.
void dump_matrix(const Matrix& m, const std::string& path);

} // namespace ldlt
