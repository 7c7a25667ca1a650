#pragma once

#include <cstdint>
#include <vector>

#include "ldlt/activation.hpp"
#include "ldlt/linalg.hpp"
#include "ldlt/matrix.hpp"

namespace ldlt {

struct InvalidParams : std::runtime_error {
    explicit InvalidParams(const std::string& what) : std::runtime_error(what) {}
};

/// Raw free parameters of one residual block, before materialization.
/// W_j maps layer j-1 to layer j (d_0 = state_dim).
struct ResidualBlockParams {
    double lipschitz = 1.0;
    int state_dim = 0;
    std::vector<int> widths;          // d_1 .. d_n
    Matrix w_a;                       // d_x x d_x
    Matrix w_b;                       // d_x x d_n
    std::vector<Matrix> w;            // W_j : d_j x d_{j-1}
    std::vector<Matrix> biases;       // d_j x 1
    double alpha_a = 1.0;
    double alpha_b = 1.0;
    std::vector<double> alphas;       // alpha_1 .. alpha_n
    std::vector<ActivationSpec> activations;

    int n() const { return static_cast<int>(widths.size()); }
    int layer_in(int j) const { return j == 1 ? state_dim : widths[j - 2]; } // d_{j-1}
    void validate() const;

    static ResidualBlockParams random(double lipschitz, int state_dim,
                                      const std::vector<int>& widths,
                                      const std::string& activation, std::uint64_t seed,
                                      double init_scale = 1.0);
};

/// Raw free parameters of a feedforward (A=0, B=I) stack; widths are d_0..d_n.
struct FeedforwardParams {
    double lipschitz = 1.0;
    std::vector<int> widths;          // d_0 .. d_n
    std::vector<Matrix> w;            // W_j : d_j x d_{j-1}
    std::vector<Matrix> biases;       // d_j x 1
    std::vector<double> alphas;       // alpha_1 .. alpha_n
    std::vector<ActivationSpec> activations;

    int n() const { return static_cast<int>(widths.size()) - 1; }
    void validate() const;

    static FeedforwardParams random(double lipschitz, const std::vector<int>& widths,
                                    const std::string& activation, std::uint64_t seed,
                                    double init_scale = 1.0);
};

/// Constraint-satisfying weights produced from raw params.
/// d holds D_1..D_{n+1} (0-indexed); r_omega[j] is the upper Cholesky factor
/// of Omega_j (Omega_0 = alpha_A I + W_A^T W_A, Omega_j = alpha_j I + W_j W_j^T).
struct MaterializedBlock {
    Matrix a;
    Matrix b;
    std::vector<Matrix> c;
    std::vector<Matrix> d;
    Matrix sigma;
    std::vector<Matrix> r_omega;
};

enum class BVariant {
    Tight,   // B = R_S^{-1} W_B R_B^{-1} R_K - S^{-1} A Gamma, R_K^T R_K = K (last-pivot budget)
    ScalarC, // same shift, scalar factor sqrt(2 alpha_n / (alpha_n + ||W_n||_2^2)) in place of R_K
};

/// gamma * W * R^{-1} with R the upper Cholesky factor of alpha I + W^T W.
/// Spectral norm of the result is gamma*s/sqrt(alpha+s^2) <= gamma, s = ||W||_2.
Matrix normalized_map(const Matrix& w, double gamma, double alpha);

Matrix materialize_A(const ResidualBlockParams& p);

/// D_1 = L^2 alpha_A (alpha_A I + W_A^T W_A)^{-1}, via Cholesky solves.
Matrix compute_D1(const ResidualBlockParams& p);

/// D_j = 2 alpha_{j-1} (alpha_{j-1} I + W_{j-1} W_{j-1}^T)^{-1}, 2 <= j <= n.
Matrix compute_Dj(const ResidualBlockParams& p, int j);

/// D_{n+1} = 2I - C_n D_n^{-1} C_n^T - B^T (I + A Sigma A^T) B
///           - 2 sym(B^T A Gamma_{n+1}), the exact last LDL^T pivot.
Matrix compute_Dn1(const ResidualBlockParams& p, const MaterializedBlock& m);

Matrix materialize_Cj(const ResidualBlockParams& p, int j);

/// Iterative Sigma update: Sigma = sum_j Gamma_j D_j^{-1} Gamma_j^T with
/// Gamma_1 = I, Gamma_{j+1} = Gamma_j D_j^{-1} C_j^T. Inverse applications go
/// through triangular solves on chol(D_j); no explicit inverses.
Matrix compute_sigma(const ResidualBlockParams& p, const std::vector<Matrix>& c,
                     const std::vector<Matrix>& d);

/// Bypass map keeping the last pivot PSD by construction: completing the
/// square in B turns the pivot into K - Bt^T S Bt with Bt = B + S^{-1} A Gamma,
/// so Bt is parameterized to stay within the budget K. Needs the full C/D
/// chains to evaluate Gamma_{n+1}.
Matrix materialize_B(const ResidualBlockParams& p, const Matrix& a, const Matrix& sigma,
                     const std::vector<Matrix>& c, const std::vector<Matrix>& d,
                     BVariant variant = BVariant::Tight);

MaterializedBlock materialize_residual(const ResidualBlockParams& p,
                                       BVariant variant = BVariant::Tight);

/// Feedforward materialization per the kappa-scaled parameterization:
/// C_1 = sqrt(kappa_1) L W_1 R_1^{-1}; C_j = sqrt(kappa_j kappa_{j-1} alpha_{j-1})
/// W_j R_j^{-1} Rbar_{j-1}^{-T} for j >= 2, kappa_j = 1 if j = n else 2.
struct MaterializedFeedforward {
    std::vector<Matrix> c;
    std::vector<Matrix> d; // D_1..D_{n+1}
};

MaterializedFeedforward materialize_feedforward(const FeedforwardParams& p);

} // namespace ldlt
