#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "ldlt/param.hpp"

namespace ldlt {

enum class ModelKind { Residual, Feedforward };

struct ModelSpec {
    ModelKind kind = ModelKind::Residual;
    double lipschitz = 1.0;
    int input_dim = 0;
    int num_classes = 0;
    int state_dim = 0;
    std::vector<int> widths; // inner layer widths of each block
    int num_blocks = 1;
    std::string activation = "relu";

    void validate() const;
};

/// Classifier: 1-Lipschitz input projection, num_blocks certified blocks each
/// holding an L^(1/K) budget, 1-Lipschitz affine head. Raw weights are the
/// trainable degrees of freedom; materialized weights are derived and cached.
struct Model {
    ModelSpec spec;
    Matrix proj_w; // state_dim x input_dim (raw)
    Matrix proj_b; // state_dim x 1
    Matrix head_w; // num_classes x state_dim (raw)
    Matrix head_b; // num_classes x 1
    std::vector<ResidualBlockParams> res_blocks;
    std::vector<FeedforwardParams> ff_blocks;

    // Derived weights, refreshed by rematerialize().
    Matrix proj;
    Matrix head;
    std::vector<MaterializedBlock> res_mat;
    std::vector<MaterializedFeedforward> ff_mat;

    static Model random(const ModelSpec& spec, std::uint64_t seed);

    void rematerialize(BVariant variant = BVariant::Tight);

    /// Logits for a batch of column samples (input_dim x batch).
    Matrix forward(const Matrix& x) const;

    /// Certified bound: ||proj||_2 * prod_k L_k * ||head||_2 <= L.
    double lipschitz_bound() const;
};

/// y = A x + B w_n, w_0 = x, w_j = phi_j(C_j w_{j-1} + b_j).
Matrix residual_block_forward(const ResidualBlockParams& p, const MaterializedBlock& m,
                              const Matrix& x);

/// y = w_n, w_0 = x, w_j = phi_j(C_j w_{j-1} + b_j).
Matrix feedforward_block_forward(const FeedforwardParams& p, const MaterializedFeedforward& m,
                                 const Matrix& x);

/// Column-broadcast a + bias.
Matrix add_bias_cols(const Matrix& a, const Matrix& bias);

/// Max observed ||f(x) - f(x')|| / ||x - x'|| over Gaussian base points and
/// perturbation scales 1e-3..1. Deterministic in the seed; a lower bound on
/// the true constant, never above a correct certificate.
double empirical_lipschitz(const Model& model, int num_pairs, std::uint64_t seed);

} // namespace ldlt
