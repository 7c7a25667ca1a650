#include "ldlt/param.hpp"

#include <cmath>
#include <random>

namespace ldlt {

namespace {

Matrix random_matrix(int rows, int cols, std::mt19937_64& rng, double scale) {
    std::normal_distribution<double> gauss(0.0, 1.0);
    Matrix m(rows, cols);
    for (size_t i = 0; i < m.size(); ++i) m.data()[i] = scale * gauss(rng);
    return m;
}

/// Symmetric inverse of R^T R scaled by s, through two triangular solves.
Matrix scaled_gram_inverse(const Matrix& r, double s) {
    Matrix x = solve_triangular(r, Matrix::identity(r.rows()), Side::Left, true);
    x = solve_triangular(r, x, Side::Left, false);
    return symmetrize(s * x);
}

/// X with X * (R^T R) = b, i.e. b (R^T R)^{-1}, through two right solves.
Matrix right_apply_gram_inverse(const Matrix& r, const Matrix& b) {
    Matrix x = solve_triangular(r, b, Side::Right, false);
    return solve_triangular(r, x, Side::Right, true);
}

Matrix col_gram_chol(const Matrix& w, double alpha) {
    return cholesky_upper(add_scaled_identity(gram_tn(w), alpha));
}

Matrix row_gram_chol(const Matrix& w, double alpha) {
    return cholesky_upper(add_scaled_identity(gram_nt(w), alpha));
}

/// Gamma_{n+1} = Gamma_n D_n^{-1} C_n^T from the running recursion
/// Gamma_1 = I, Gamma_{j+1} = Gamma_j D_j^{-1} C_j^T.
Matrix last_gamma(int state_dim, const std::vector<Matrix>& c, const std::vector<Matrix>& d) {
    Matrix gamma = Matrix::identity(state_dim);
    for (size_t j = 0; j < c.size(); ++j) {
        const Matrix r_d = cholesky_upper(d[j]);
        gamma = matmul_nt(right_apply_gram_inverse(r_d, gamma), c[j]);
    }
    return gamma;
}

void validate_common(double lipschitz, const std::vector<double>& alphas,
                     const std::vector<ActivationSpec>& activations, int n) {
    if (lipschitz <= 0.0) throw InvalidParams("lipschitz must be > 0");
    if (n < 1) throw InvalidParams("at least one inner layer is required");
    if (static_cast<int>(alphas.size()) != n || static_cast<int>(activations.size()) != n)
        throw InvalidParams("alphas/activations must have one entry per layer");
    for (double a : alphas)
        if (!(a > 0.0)) throw InvalidParams("alphas must be > 0");
    for (const auto& act : activations)
        if (!act.unit_slope())
            throw InvalidParams("parameterization requires activations with (m, L) = (0, 1); '" +
                                act.name + "' has other slope bounds");
}

} // namespace

void ResidualBlockParams::validate() const {
    validate_common(lipschitz, alphas, activations, n());
    if (state_dim < 1) throw InvalidParams("state_dim must be >= 1");
    if (!(alpha_a > 0.0) || !(alpha_b > 0.0)) throw InvalidParams("alpha_A/alpha_B must be > 0");
    if (w_a.rows() != state_dim || w_a.cols() != state_dim)
        throw InvalidParams("W_A must be state_dim x state_dim");
    if (w_b.rows() != state_dim || w_b.cols() != widths.back())
        throw InvalidParams("W_B must be state_dim x d_n");
    if (static_cast<int>(w.size()) != n() || static_cast<int>(biases.size()) != n())
        throw InvalidParams("need one W_j and one bias per layer");
    for (int j = 1; j <= n(); ++j) {
        if (w[j - 1].rows() != widths[j - 1] || w[j - 1].cols() != layer_in(j))
            throw InvalidParams("W_" + std::to_string(j) + " shape mismatch");
        if (biases[j - 1].rows() != widths[j - 1] || biases[j - 1].cols() != 1)
            throw InvalidParams("bias " + std::to_string(j) + " shape mismatch");
    }
}

void FeedforwardParams::validate() const {
    if (static_cast<int>(widths.size()) < 2)
        throw InvalidParams("feedforward needs widths d_0..d_n with n >= 1");
    validate_common(lipschitz, alphas, activations, n());
    if (static_cast<int>(w.size()) != n() || static_cast<int>(biases.size()) != n())
        throw InvalidParams("need one W_j and one bias per layer");
    for (int j = 1; j <= n(); ++j) {
        if (w[j - 1].rows() != widths[j] || w[j - 1].cols() != widths[j - 1])
            throw InvalidParams("W_" + std::to_string(j) + " shape mismatch");
        if (biases[j - 1].rows() != widths[j] || biases[j - 1].cols() != 1)
            throw InvalidParams("bias " + std::to_string(j) + " shape mismatch");
    }
}

ResidualBlockParams ResidualBlockParams::random(double lipschitz, int state_dim,
                                                const std::vector<int>& widths,
                                                const std::string& activation,
                                                std::uint64_t seed, double init_scale) {
    std::mt19937_64 rng(seed);
    ResidualBlockParams p;
    p.lipschitz = lipschitz;
    p.state_dim = state_dim;
    p.widths = widths;
    const int n = p.n();
    p.w_a = random_matrix(state_dim, state_dim, rng, init_scale / std::sqrt(state_dim));
    p.w_b = random_matrix(state_dim, widths.back(), rng, init_scale / std::sqrt(widths.back()));
    for (int j = 1; j <= n; ++j) {
        const int din = p.layer_in(j);
        p.w.push_back(random_matrix(widths[j - 1], din, rng, init_scale / std::sqrt(din)));
        p.biases.push_back(Matrix(widths[j - 1], 1));
        p.alphas.push_back(1.0);
        p.activations.push_back(builtin_activation(activation));
    }
    p.validate();
    return p;
}

FeedforwardParams FeedforwardParams::random(double lipschitz, const std::vector<int>& widths,
                                            const std::string& activation, std::uint64_t seed,
                                            double init_scale) {
    std::mt19937_64 rng(seed);
    FeedforwardParams p;
    p.lipschitz = lipschitz;
    p.widths = widths;
    const int n = p.n();
    for (int j = 1; j <= n; ++j) {
        const int din = widths[j - 1];
        p.w.push_back(random_matrix(widths[j], din, rng, init_scale / std::sqrt(din)));
        p.biases.push_back(Matrix(widths[j], 1));
        p.alphas.push_back(1.0);
        p.activations.push_back(builtin_activation(activation));
    }
    p.validate();
    return p;
}

Matrix normalized_map(const Matrix& w, double gamma, double alpha) {
    if (!(alpha > 0.0)) throw InvalidParams("normalized_map: alpha must be > 0");
    const Matrix r = col_gram_chol(w, alpha);
    return gamma * solve_triangular(r, w, Side::Right, false);
}

Matrix materialize_A(const ResidualBlockParams& p) {
    // Mirrored form of the normalized map: with R from the row Gram
    // alpha I + W W^T, the push-through identity collapses L^2 I - A^T A to
    // exactly L^2 alpha (alpha I + W^T W)^{-1}, so the first LMI pivot equals
    // compute_D1. The right-sided W R^{-1} form breaks that cancellation.
    const Matrix r = row_gram_chol(p.w_a, p.alpha_a);
    return p.lipschitz * solve_triangular(r, p.w_a, Side::Left, true);
}

Matrix compute_D1(const ResidualBlockParams& p) {
    const Matrix r_a = col_gram_chol(p.w_a, p.alpha_a);
    return scaled_gram_inverse(r_a, p.lipschitz * p.lipschitz * p.alpha_a);
}

Matrix compute_Dj(const ResidualBlockParams& p, int j) {
    if (j < 2 || j > p.n()) throw InvalidParams("compute_Dj: j out of range");
    const Matrix r = row_gram_chol(p.w[j - 2], p.alphas[j - 2]);
    return scaled_gram_inverse(r, 2.0 * p.alphas[j - 2]);
}

Matrix materialize_Cj(const ResidualBlockParams& p, int j) {
    if (j < 1 || j > p.n()) throw InvalidParams("materialize_Cj: j out of range");
    const Matrix r_j = col_gram_chol(p.w[j - 1], p.alphas[j - 1]);
    Matrix x = solve_triangular(r_j, p.w[j - 1], Side::Right, false);
    if (j == 1) {
        const Matrix r_a = col_gram_chol(p.w_a, p.alpha_a);
        x = solve_triangular(r_a, x, Side::Right, true);
        return (std::sqrt(2.0 * p.alpha_a) * p.lipschitz) * x;
    }
    const Matrix r_prev = row_gram_chol(p.w[j - 2], p.alphas[j - 2]);
    x = solve_triangular(r_prev, x, Side::Right, true);
    return (2.0 * std::sqrt(p.alphas[j - 2])) * x;
}

Matrix compute_sigma(const ResidualBlockParams& p, const std::vector<Matrix>& c,
                     const std::vector<Matrix>& d) {
    const int n = p.n();
    if (static_cast<int>(c.size()) < n || static_cast<int>(d.size()) < n)
        throw InvalidParams("compute_sigma: need C_1..C_n and D_1..D_n");
    Matrix sigma(p.state_dim, p.state_dim);
    Matrix gamma = Matrix::identity(p.state_dim);
    for (int j = 1; j <= n; ++j) {
        const Matrix r_d = cholesky_upper(d[j - 1]);
        const Matrix t = right_apply_gram_inverse(r_d, gamma); // Gamma_j D_j^{-1}
        sigma = sigma + matmul_nt(t, gamma);
        if (j < n) gamma = matmul_nt(t, c[j - 1]); // Gamma_{j+1} = T C_j^T
    }
    return symmetrize(sigma);
}

Matrix materialize_B(const ResidualBlockParams& p, const Matrix& a, const Matrix& sigma,
                     const std::vector<Matrix>& c, const std::vector<Matrix>& d,
                     BVariant variant) {
    const int n = p.n();
    const double alpha_n = p.alphas[n - 1];
    const Matrix r_sigma =
        cholesky_upper(add_scaled_identity(matmul_nt(matmul(a, sigma), a), 1.0));
    const Matrix r_b = col_gram_chol(p.w_b, p.alpha_b);
    // Complete the square in B: with S = I + A Sigma A^T and Gamma = Gamma_{n+1},
    // the last pivot equals K - Bt^T S Bt with Bt = B + S^{-1} A Gamma and
    // K = 2I - C_n D_n^{-1} C_n^T + Gamma^T A^T S^{-1} A Gamma, where the first
    // two terms collapse to 2 alpha_n (alpha_n I + W_n W_n^T)^{-1}. Keeping
    // Bt^T S Bt within K makes the pivot PSD on every draw.
    const Matrix a_gamma = matmul(a, last_gamma(p.state_dim, c, d));
    const Matrix y = solve_triangular(r_sigma, a_gamma, Side::Left, true); // R_S^{-T} A Gamma
    const Matrix shift = solve_triangular(r_sigma, y, Side::Left, false); // S^{-1} A Gamma
    Matrix x = solve_triangular(r_sigma, p.w_b, Side::Left, false);
    x = solve_triangular(r_b, x, Side::Right, false);
    if (variant == BVariant::Tight) {
        const Matrix r_n = row_gram_chol(p.w[n - 1], alpha_n);
        const Matrix k = scaled_gram_inverse(r_n, 2.0 * alpha_n) + matmul_tn(y, y);
        x = matmul(x, cholesky_upper(k));
    } else {
        // Scalar factor below the whole spectrum of K; the smallest eigenvalue
        // of the 2 alpha_n Omega_n^{-1} part is 2 alpha_n / (alpha_n + ||W_n||_2^2).
        const double sn = spectral_norm(p.w[n - 1]);
        x = std::sqrt(2.0 * alpha_n / (alpha_n + sn * sn)) * x;
    }
    return x - shift;
}

Matrix compute_Dn1(const ResidualBlockParams& p, const MaterializedBlock& m) {
    const int n = p.n();
    const Matrix r_dn = cholesky_upper(m.d[n - 1]);
    const Matrix cn_dninv_cnt = matmul_nt(right_apply_gram_inverse(r_dn, m.c[n - 1]), m.c[n - 1]);
    const Matrix middle = add_scaled_identity(matmul_nt(matmul(m.a, m.sigma), m.a), 1.0);
    const Matrix bt_mid_b = matmul_tn(m.b, matmul(middle, m.b));
    // The last unit-lower factor row is -(C_n + B^T A Gamma_n) D_n^{-1}: squaring
    // it against D_n leaves 2 sym(B^T A Gamma_{n+1}) on top of the pure squares,
    // so the true pivot carries that cross coupling as well.
    const Matrix cross = matmul(matmul_tn(m.b, m.a), last_gamma(p.state_dim, m.c, m.d));
    Matrix out =
        add_scaled_identity((-1.0) * (cn_dninv_cnt + bt_mid_b + cross + transpose(cross)), 2.0);
    return symmetrize(out);
}

MaterializedBlock materialize_residual(const ResidualBlockParams& p, BVariant variant) {
    p.validate();
    const int n = p.n();
    MaterializedBlock m;
    m.r_omega.push_back(col_gram_chol(p.w_a, p.alpha_a)); // R_A
    for (int j = 1; j <= n; ++j) m.r_omega.push_back(row_gram_chol(p.w[j - 1], p.alphas[j - 1]));

    m.a = materialize_A(p);

    m.d.push_back(scaled_gram_inverse(m.r_omega[0], p.lipschitz * p.lipschitz * p.alpha_a));
    for (int j = 2; j <= n; ++j)
        m.d.push_back(scaled_gram_inverse(m.r_omega[j - 1], 2.0 * p.alphas[j - 2]));

    for (int j = 1; j <= n; ++j) {
        const Matrix r_j = col_gram_chol(p.w[j - 1], p.alphas[j - 1]);
        Matrix x = solve_triangular(r_j, p.w[j - 1], Side::Right, false);
        x = solve_triangular(m.r_omega[j - 1], x, Side::Right, true);
        const double scale = j == 1 ? std::sqrt(2.0 * p.alpha_a) * p.lipschitz
                                    : 2.0 * std::sqrt(p.alphas[j - 2]);
        m.c.push_back(scale * x);
    }

    m.sigma = compute_sigma(p, m.c, m.d);
    m.b = materialize_B(p, m.a, m.sigma, m.c, m.d, variant);
    m.d.push_back(compute_Dn1(p, m));
    return m;
}

MaterializedFeedforward materialize_feedforward(const FeedforwardParams& p) {
    p.validate();
    const int n = p.n();
    auto kappa = [n](int j) { return j == n ? 1.0 : 2.0; };
    MaterializedFeedforward m;
    m.d.push_back((p.lipschitz * p.lipschitz) * Matrix::identity(p.widths[0]));
    std::vector<Matrix> r_bar; // chol(alpha_j I + W_j W_j^T), 1-indexed via j-1
    for (int j = 1; j <= n; ++j) r_bar.push_back(row_gram_chol(p.w[j - 1], p.alphas[j - 1]));
    for (int j = 2; j <= n; ++j)
        m.d.push_back(scaled_gram_inverse(r_bar[j - 2], kappa(j - 1) * p.alphas[j - 2]));

    for (int j = 1; j <= n; ++j) {
        const Matrix r_j = col_gram_chol(p.w[j - 1], p.alphas[j - 1]);
        Matrix x = solve_triangular(r_j, p.w[j - 1], Side::Right, false);
        if (j == 1) {
            m.c.push_back((std::sqrt(kappa(1)) * p.lipschitz) * x);
        } else {
            x = solve_triangular(r_bar[j - 2], x, Side::Right, true);
            m.c.push_back(std::sqrt(kappa(j) * kappa(j - 1) * p.alphas[j - 2]) * x);
        }
    }

    // D_{n+1} = I - C_n D_n^{-1} C_n^T
    const Matrix r_dn = cholesky_upper(m.d[n - 1]);
    const Matrix tail = matmul_nt(right_apply_gram_inverse(r_dn, m.c[n - 1]), m.c[n - 1]);
    m.d.push_back(symmetrize(add_scaled_identity((-1.0) * tail, 1.0)));
    return m;
}

} // namespace ldlt
