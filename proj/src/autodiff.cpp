#include "ldlt/autodiff.hpp"

#include <cmath>

namespace ldlt {

namespace {

// Upper-triangular mask including the diagonal.
Matrix upper_mask(const Matrix& a) {
    Matrix out(a.rows(), a.cols());
    for (int i = 0; i < a.rows(); ++i)
        for (int j = i; j < a.cols(); ++j) out(i, j) = a(i, j);
    return out;
}

// Lower triangle with halved diagonal; the Cholesky pullback projector.
Matrix phi(const Matrix& a) {
    Matrix out(a.rows(), a.cols());
    for (int i = 0; i < a.rows(); ++i) {
        for (int j = 0; j < i; ++j) out(i, j) = a(i, j);
        out(i, i) = 0.5 * a(i, i);
    }
    return out;
}

} // namespace

Tape::Id Tape::push(Node n) {
    nodes_.push_back(std::move(n));
    return static_cast<Id>(nodes_.size() - 1);
}

Tape::Id Tape::leaf(const Matrix& v) { return push({Op::Leaf, v, -1, -1, 0.0, {}, {}, {}}); }

Tape::Id Tape::add(Id a, Id b) {
    return push({Op::Add, value(a) + value(b), a, b, 0.0, {}, {}, {}});
}

Tape::Id Tape::sub(Id a, Id b) {
    return push({Op::Sub, value(a) - value(b), a, b, 0.0, {}, {}, {}});
}

Tape::Id Tape::scale(Id a, double s) {
    return push({Op::Scale, s * value(a), a, -1, s, {}, {}, {}});
}

Tape::Id Tape::matmul(Id a, Id b) {
    return push({Op::MatMul, ldlt::matmul(value(a), value(b)), a, b, 0.0, {}, {}, {}});
}

Tape::Id Tape::matmul_tn(Id a, Id b) {
    return push({Op::MatMulTN, ldlt::matmul_tn(value(a), value(b)), a, b, 0.0, {}, {}, {}});
}

Tape::Id Tape::matmul_nt(Id a, Id b) {
    return push({Op::MatMulNT, ldlt::matmul_nt(value(a), value(b)), a, b, 0.0, {}, {}, {}});
}

Tape::Id Tape::gram_tn(Id w) {
    return push({Op::GramTN, ldlt::gram_tn(value(w)), w, -1, 0.0, {}, {}, {}});
}

Tape::Id Tape::gram_nt(Id w) {
    return push({Op::GramNT, ldlt::gram_nt(value(w)), w, -1, 0.0, {}, {}, {}});
}

Tape::Id Tape::add_scaled_identity(Id a, double s) {
    return push({Op::AddScaledIdentity, ldlt::add_scaled_identity(value(a), s), a, -1, s, {}, {},
                 {}});
}

Tape::Id Tape::cholesky(Id a) {
    return push({Op::Cholesky, cholesky_upper(value(a)), a, -1, 0.0, {}, {}, {}});
}

Tape::Id Tape::solve_right(Id b, Id r, bool transpose) {
    Matrix x = solve_triangular(value(r), value(b), Side::Right, transpose);
    return push({transpose ? Op::SolveRightT : Op::SolveRight, std::move(x), b, r, 0.0, {}, {},
                 {}});
}

Tape::Id Tape::solve_left(Id r, Id b, bool transpose) {
    Matrix x = solve_triangular(value(r), value(b), Side::Left, transpose);
    return push({transpose ? Op::SolveLeftT : Op::SolveLeft, std::move(x), b, r, 0.0, {}, {}, {}});
}

Tape::Id Tape::add_bias(Id a, Id bias) {
    const Matrix& va = value(a);
    const Matrix& vb = value(bias);
    if (vb.rows() != va.rows() || vb.cols() != 1)
        throw DimensionMismatch("add_bias: bias must be rows x 1");
    Matrix out = va;
    for (int i = 0; i < va.rows(); ++i)
        for (int j = 0; j < va.cols(); ++j) out(i, j) += vb(i, 0);
    return push({Op::AddBias, std::move(out), a, bias, 0.0, {}, {}, {}});
}

Tape::Id Tape::activation(Id a, const ActivationSpec& spec) {
    const Matrix& va = value(a);
    Matrix out(va.rows(), va.cols());
    Matrix slopes(va.rows(), va.cols());
    for (size_t i = 0; i < va.size(); ++i) {
        out.data()[i] = spec.apply(va.data()[i]);
        slopes.data()[i] = spec.deriv(va.data()[i]);
    }
    return push({Op::Activation, std::move(out), a, -1, 0.0, std::move(slopes), {}, {}});
}

Tape::Id Tape::weighted_cross_entropy(Id logits, const std::vector<int>& labels,
                                      const std::vector<double>& class_weights) {
    const Matrix& z = value(logits);
    const int classes = z.rows();
    const int batch = z.cols();
    if (static_cast<int>(labels.size()) != batch)
        throw DimensionMismatch("weighted_cross_entropy: one label per column");
    std::vector<double> w(batch);
    for (int i = 0; i < batch; ++i) {
        const int y = labels[i];
        if (y < 0 || y >= classes)
            throw DimensionMismatch("weighted_cross_entropy: label out of range");
        w[i] = class_weights.empty() ? 1.0 : class_weights[y];
    }
    Matrix probs(classes, batch);
    double loss = 0.0;
    for (int i = 0; i < batch; ++i) {
        double zmax = z(0, i);
        for (int k = 1; k < classes; ++k) zmax = std::max(zmax, z(k, i));
        double sum = 0.0;
        for (int k = 0; k < classes; ++k) sum += std::exp(z(k, i) - zmax);
        const double lse = zmax + std::log(sum);
        for (int k = 0; k < classes; ++k) probs(k, i) = std::exp(z(k, i) - lse);
        loss += w[i] * (lse - z(labels[i], i));
        w[i] /= batch;
    }
    Matrix out(1, 1);
    out(0, 0) = loss / batch;
    return push({Op::WeightedCE, std::move(out), logits, -1, 0.0, std::move(probs), std::move(w),
                 labels});
}

void Tape::accumulate(Id id, const Matrix& g) {
    if (grads_[id].size() == 0)
        grads_[id] = g;
    else
        grads_[id] = grads_[id] + g;
}

Matrix Tape::grad(Id id) const {
    if (grads_[id].size() == 0) return Matrix(value(id).rows(), value(id).cols());
    return grads_[id];
}

void Tape::backward(Id output) {
    const Matrix& out = value(output);
    if (out.rows() != 1 || out.cols() != 1)
        throw DimensionMismatch("backward: output must be a 1x1 scalar");
    grads_.assign(nodes_.size(), Matrix());
    grads_[output] = Matrix{{1.0}};

    for (Id id = output; id >= 0; --id) {
        if (grads_[id].size() == 0) continue;
        const Node& n = nodes_[id];
        const Matrix& g = grads_[id];
        switch (n.op) {
            case Op::Leaf:
                break;
            case Op::Add:
                accumulate(n.a, g);
                accumulate(n.b, g);
                break;
            case Op::Sub:
                accumulate(n.a, g);
                accumulate(n.b, -1.0 * g);
                break;
            case Op::Scale:
                accumulate(n.a, n.s * g);
                break;
            case Op::MatMul:
                accumulate(n.a, ldlt::matmul_nt(g, value(n.b)));
                accumulate(n.b, ldlt::matmul_tn(value(n.a), g));
                break;
            case Op::MatMulTN:
                accumulate(n.a, ldlt::matmul_nt(value(n.b), g));
                accumulate(n.b, ldlt::matmul(value(n.a), g));
                break;
            case Op::MatMulNT:
                accumulate(n.a, ldlt::matmul(g, value(n.b)));
                accumulate(n.b, ldlt::matmul_tn(g, value(n.a)));
                break;
            case Op::GramTN:
                accumulate(n.a, ldlt::matmul(value(n.a), g + transpose(g)));
                break;
            case Op::GramNT:
                accumulate(n.a, ldlt::matmul(g + transpose(g), value(n.a)));
                break;
            case Op::AddScaledIdentity:
                accumulate(n.a, g);
                break;
            case Op::Cholesky: {
                // A = R^T R: Abar = sym(R^{-1} phi(R Rbar^T) R^{-T}).
                const Matrix& r = n.value;
                Matrix x = phi(ldlt::matmul_nt(r, g));
                x = solve_triangular(r, x, Side::Left, false);
                x = solve_triangular(r, x, Side::Right, true);
                accumulate(n.a, symmetrize(x));
                break;
            }
            case Op::SolveRight: {
                // X = B R^{-1}: Bbar = Xbar R^{-T}, Rbar = -triu(X^T Bbar).
                const Matrix gb = solve_triangular(value(n.b), g, Side::Right, true);
                accumulate(n.a, gb);
                accumulate(n.b, -1.0 * upper_mask(ldlt::matmul_tn(n.value, gb)));
                break;
            }
            case Op::SolveRightT: {
                // X = B R^{-T}: Bbar = Xbar R^{-1}, Rbar = -triu(Bbar^T X).
                const Matrix gb = solve_triangular(value(n.b), g, Side::Right, false);
                accumulate(n.a, gb);
                accumulate(n.b, -1.0 * upper_mask(ldlt::matmul_tn(gb, n.value)));
                break;
            }
            case Op::SolveLeft: {
                // X = R^{-1} B: Bbar = R^{-T} Xbar, Rbar = -triu(Bbar X^T).
                const Matrix gb = solve_triangular(value(n.b), g, Side::Left, true);
                accumulate(n.a, gb);
                accumulate(n.b, -1.0 * upper_mask(ldlt::matmul_nt(gb, n.value)));
                break;
            }
            case Op::SolveLeftT: {
                // X = R^{-T} B: Bbar = R^{-1} Xbar, Rbar = -triu(X Bbar^T).
                const Matrix gb = solve_triangular(value(n.b), g, Side::Left, false);
                accumulate(n.a, gb);
                accumulate(n.b, -1.0 * upper_mask(ldlt::matmul_nt(n.value, gb)));
                break;
            }
            case Op::AddBias: {
                accumulate(n.a, g);
                Matrix gbias(g.rows(), 1);
                for (int i = 0; i < g.rows(); ++i)
                    for (int j = 0; j < g.cols(); ++j) gbias(i, 0) += g(i, j);
                accumulate(n.b, gbias);
                break;
            }
            case Op::Activation: {
                Matrix ga = g;
                for (size_t i = 0; i < ga.size(); ++i) ga.data()[i] *= n.aux.data()[i];
                accumulate(n.a, ga);
                break;
            }
            case Op::WeightedCE: {
                const double gs = g(0, 0);
                Matrix gz = n.aux; // softmax probabilities
                for (int i = 0; i < gz.cols(); ++i) {
                    gz(n.labels[i], i) -= 1.0;
                    for (int k = 0; k < gz.rows(); ++k) gz(k, i) *= gs * n.sample_weight[i];
                }
                accumulate(n.a, gz);
                break;
            }
        }
    }
}

} // namespace ldlt
