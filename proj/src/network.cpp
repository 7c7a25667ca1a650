#include "ldlt/network.hpp"

#include <cmath>
#include <random>

namespace ldlt {

namespace {

Matrix gaussian(int rows, int cols, std::mt19937_64& rng, double scale) {
    std::normal_distribution<double> gauss(0.0, 1.0);
    Matrix m(rows, cols);
    for (int i = 0; i < rows; ++i)
        for (int j = 0; j < cols; ++j) m(i, j) = scale * gauss(rng);
    return m;
}

// d_0 = state_dim, then the inner widths; the last width doubles as the block
// output so blocks chain and the head sees state_dim features.
std::vector<int> ff_widths(const ModelSpec& spec) {
    std::vector<int> w;
    w.push_back(spec.state_dim);
    w.insert(w.end(), spec.widths.begin(), spec.widths.end());
    return w;
}

} // namespace

void ModelSpec::validate() const {
    if (input_dim < 1 || num_classes < 2 || state_dim < 1 || num_blocks < 1)
        throw InvalidParams("model spec dimensions out of range");
    if (widths.empty()) throw InvalidParams("model spec needs at least one inner layer");
    for (int w : widths)
        if (w < 1) throw InvalidParams("inner widths must be >= 1");
    if (!(lipschitz > 0.0) || !std::isfinite(lipschitz))
        throw InvalidParams("lipschitz budget must be positive and finite");
    if (kind == ModelKind::Feedforward && widths.back() != state_dim)
        throw InvalidParams("feedforward blocks must end at state_dim so blocks and head chain");
}

Matrix add_bias_cols(const Matrix& a, const Matrix& bias) {
    if (bias.rows() != a.rows() || bias.cols() != 1)
        throw DimensionMismatch("add_bias_cols: bias must be rows x 1");
    Matrix out = a;
    for (int i = 0; i < a.rows(); ++i)
        for (int j = 0; j < a.cols(); ++j) out(i, j) += bias(i, 0);
    return out;
}

Model Model::random(const ModelSpec& spec, std::uint64_t seed) {
    spec.validate();
    Model m;
    m.spec = spec;
    std::mt19937_64 rng(seed);
    m.proj_w = gaussian(spec.state_dim, spec.input_dim, rng,
                        1.0 / std::sqrt(static_cast<double>(spec.input_dim)));
    m.proj_b = Matrix(spec.state_dim, 1);
    m.head_w = gaussian(spec.num_classes, spec.state_dim, rng,
                        1.0 / std::sqrt(static_cast<double>(spec.state_dim)));
    m.head_b = Matrix(spec.num_classes, 1);

    const double block_budget =
        std::pow(spec.lipschitz, 1.0 / static_cast<double>(spec.num_blocks));
    for (int k = 0; k < spec.num_blocks; ++k) {
        const std::uint64_t block_seed = rng();
        if (spec.kind == ModelKind::Residual) {
            m.res_blocks.push_back(ResidualBlockParams::random(
                block_budget, spec.state_dim, spec.widths, spec.activation, block_seed));
        } else {
            m.ff_blocks.push_back(FeedforwardParams::random(block_budget, ff_widths(spec),
                                                            spec.activation, block_seed));
        }
    }
    m.rematerialize();
    return m;
}

void Model::rematerialize(BVariant variant) {
    proj = normalized_map(proj_w, 1.0, 1.0);
    head = normalized_map(head_w, 1.0, 1.0);
    res_mat.clear();
    ff_mat.clear();
    for (const auto& b : res_blocks) res_mat.push_back(materialize_residual(b, variant));
    for (const auto& b : ff_blocks) ff_mat.push_back(materialize_feedforward(b));
}

Matrix residual_block_forward(const ResidualBlockParams& p, const MaterializedBlock& m,
                              const Matrix& x) {
    Matrix w = x;
    for (int j = 1; j <= p.n(); ++j)
        w = apply_vec(p.activations[j - 1], add_bias_cols(matmul(m.c[j - 1], w), p.biases[j - 1]));
    return matmul(m.a, x) + matmul(m.b, w);
}

Matrix feedforward_block_forward(const FeedforwardParams& p, const MaterializedFeedforward& m,
                                 const Matrix& x) {
    Matrix w = x;
    for (int j = 1; j <= p.n(); ++j)
        w = apply_vec(p.activations[j - 1], add_bias_cols(matmul(m.c[j - 1], w), p.biases[j - 1]));
    return w;
}

Matrix Model::forward(const Matrix& x) const {
    if (x.rows() != spec.input_dim) throw DimensionMismatch("forward: input dim mismatch");
    Matrix z = add_bias_cols(matmul(proj, x), proj_b);
    if (spec.kind == ModelKind::Residual) {
        for (size_t k = 0; k < res_blocks.size(); ++k)
            z = residual_block_forward(res_blocks[k], res_mat[k], z);
    } else {
        for (size_t k = 0; k < ff_blocks.size(); ++k)
            z = feedforward_block_forward(ff_blocks[k], ff_mat[k], z);
    }
    return add_bias_cols(matmul(head, z), head_b);
}

double Model::lipschitz_bound() const {
    double bound = spectral_norm(proj) * spectral_norm(head);
    for (const auto& b : res_blocks) bound *= b.lipschitz;
    for (const auto& b : ff_blocks) bound *= b.lipschitz;
    return bound;
}

double empirical_lipschitz(const Model& model, int num_pairs, std::uint64_t seed) {
    std::mt19937_64 rng(seed);
    std::normal_distribution<double> gauss(0.0, 1.0);
    const int d = model.spec.input_dim;
    const double scales[] = {1e-3, 1e-2, 1e-1, 1.0};
    double best = 0.0;
    for (int t = 0; t < num_pairs; ++t) {
        Matrix x(d, 1), dir(d, 1);
        for (int i = 0; i < d; ++i) x(i, 0) = gauss(rng);
        for (int i = 0; i < d; ++i) dir(i, 0) = gauss(rng);
        const double nd = frobenius_norm(dir);
        if (nd == 0.0) continue;
        const Matrix fx = model.forward(x);
        for (double s : scales) {
            Matrix xp = x;
            for (int i = 0; i < d; ++i) xp(i, 0) += s * dir(i, 0) / nd;
            const Matrix fxp = model.forward(xp);
            const double num = frobenius_norm(fx - fxp);
            const double den = frobenius_norm(x - xp);
            if (den > 0.0) best = std::max(best, num / den);
        }
    }
    return best;
}

} // namespace ldlt
