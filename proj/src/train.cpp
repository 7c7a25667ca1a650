#include "ldlt/train.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <numeric>
#include <random>

namespace ldlt {

namespace {

// s * (R^T R)^{-1} on the tape.
Tape::Id taped_scaled_gram_inverse(Tape& t, Tape::Id r, double s) {
    const Tape::Id eye = t.leaf(Matrix::identity(t.value(r).rows()));
    Tape::Id x = t.solve_left(r, eye, true);
    x = t.solve_left(r, x, false);
    return t.scale(x, s);
}

// b (R^T R)^{-1} on the tape.
Tape::Id taped_right_gram_inverse(Tape& t, Tape::Id b, Tape::Id r) {
    return t.solve_right(t.solve_right(b, r, false), r, true);
}

Tape::Id taped_col_gram_chol(Tape& t, Tape::Id w, double alpha) {
    return t.cholesky(t.add_scaled_identity(t.gram_tn(w), alpha));
}

Tape::Id taped_row_gram_chol(Tape& t, Tape::Id w, double alpha) {
    return t.cholesky(t.add_scaled_identity(t.gram_nt(w), alpha));
}

Matrix gather_columns(const Matrix& x, const std::vector<int>& idx) {
    Matrix out(x.rows(), static_cast<int>(idx.size()));
    for (size_t j = 0; j < idx.size(); ++j)
        for (int i = 0; i < x.rows(); ++i) out(i, static_cast<int>(j)) = x(i, idx[j]);
    return out;
}

struct AdamState {
    std::vector<Matrix> m;
    std::vector<Matrix> v;
    long step = 0;
};

void adam_step(AdamState& st, const ModelGraph& g, const TrainConfig& cfg, double lr) {
    if (st.m.empty()) {
        for (const auto& p : g.params) {
            st.m.emplace_back(p.tensor->rows(), p.tensor->cols());
            st.v.emplace_back(p.tensor->rows(), p.tensor->cols());
        }
    }
    ++st.step;
    const double bc1 = 1.0 - std::pow(cfg.beta1, static_cast<double>(st.step));
    const double bc2 = 1.0 - std::pow(cfg.beta2, static_cast<double>(st.step));
    for (size_t i = 0; i < g.params.size(); ++i) {
        const Matrix grad = g.tape.grad(g.params[i].id);
        if (!grad.is_finite()) throw NonFiniteGradient("gradient has NaN/Inf entries");
        Matrix& m = st.m[i];
        Matrix& v = st.v[i];
        Matrix& theta = *g.params[i].tensor;
        const double decay = g.params[i].decay ? cfg.weight_decay : 0.0;
        for (size_t k = 0; k < grad.size(); ++k) {
            const double gk = grad.data()[k];
            m.data()[k] = cfg.beta1 * m.data()[k] + (1.0 - cfg.beta1) * gk;
            v.data()[k] = cfg.beta2 * v.data()[k] + (1.0 - cfg.beta2) * gk * gk;
            const double mhat = m.data()[k] / bc1;
            const double vhat = v.data()[k] / bc2;
            theta.data()[k] -= lr * (mhat / (std::sqrt(vhat) + cfg.eps) + decay * theta.data()[k]);
        }
    }
}

} // namespace

Tape::Id taped_normalized_map(Tape& t, Tape::Id w, double gamma, double alpha) {
    const Tape::Id r = taped_col_gram_chol(t, w, alpha);
    return t.scale(t.solve_right(w, r, false), gamma);
}

TapedBlock taped_materialize_residual(Tape& t, const ResidualBlockParams& p, Tape::Id w_a,
                                      Tape::Id w_b, const std::vector<Tape::Id>& w) {
    const int n = p.n();
    TapedBlock out;

    std::vector<Tape::Id> r_omega; // R_A, then chol(alpha_j I + W_j W_j^T)
    r_omega.push_back(taped_col_gram_chol(t, w_a, p.alpha_a));
    for (int j = 1; j <= n; ++j) r_omega.push_back(taped_row_gram_chol(t, w[j - 1], p.alphas[j - 1]));

    // Mirrored normalized map, matching materialize_A.
    out.a = t.scale(t.solve_left(taped_row_gram_chol(t, w_a, p.alpha_a), w_a, true), p.lipschitz);

    std::vector<Tape::Id> d;
    d.push_back(taped_scaled_gram_inverse(t, r_omega[0], p.lipschitz * p.lipschitz * p.alpha_a));
    for (int j = 2; j <= n; ++j)
        d.push_back(taped_scaled_gram_inverse(t, r_omega[j - 1], 2.0 * p.alphas[j - 2]));

    for (int j = 1; j <= n; ++j) {
        const Tape::Id r_j = taped_col_gram_chol(t, w[j - 1], p.alphas[j - 1]);
        Tape::Id x = t.solve_right(w[j - 1], r_j, false);
        x = t.solve_right(x, r_omega[j - 1], true);
        const double scale = j == 1 ? std::sqrt(2.0 * p.alpha_a) * p.lipschitz
                                    : 2.0 * std::sqrt(p.alphas[j - 2]);
        out.c.push_back(t.scale(x, scale));
    }

    // Sigma via the running Gamma recursion; the final update leaves
    // gamma = Gamma_{n+1}, which the bypass map consumes below.
    Tape::Id sigma = -1;
    Tape::Id gamma = t.leaf(Matrix::identity(p.state_dim));
    for (int j = 1; j <= n; ++j) {
        const Tape::Id r_d = t.cholesky(d[j - 1]);
        const Tape::Id tj = taped_right_gram_inverse(t, gamma, r_d);
        const Tape::Id term = t.matmul_nt(tj, gamma);
        sigma = j == 1 ? term : t.add(sigma, term);
        gamma = t.matmul_nt(tj, out.c[j - 1]);
    }

    // Tight B via the completed square, matching materialize_B.
    const double alpha_n = p.alphas[n - 1];
    const Tape::Id r_sigma =
        t.cholesky(t.add_scaled_identity(t.matmul_nt(t.matmul(out.a, sigma), out.a), 1.0));
    const Tape::Id r_b = taped_col_gram_chol(t, w_b, p.alpha_b);
    const Tape::Id a_gamma = t.matmul(out.a, gamma);
    const Tape::Id y = t.solve_left(r_sigma, a_gamma, true);
    const Tape::Id shift = t.solve_left(r_sigma, y, false);
    const Tape::Id k =
        t.add(taped_scaled_gram_inverse(t, r_omega[n], 2.0 * alpha_n), t.matmul_tn(y, y));
    Tape::Id x = t.solve_left(r_sigma, w_b, false);
    x = t.solve_right(x, r_b, false);
    x = t.matmul(x, t.cholesky(k));
    out.b = t.sub(x, shift);
    return out;
}

std::vector<Tape::Id> taped_materialize_feedforward(Tape& t, const FeedforwardParams& p,
                                                    const std::vector<Tape::Id>& w) {
    const int n = p.n();
    auto kappa = [n](int j) { return j == n ? 1.0 : 2.0; };
    std::vector<Tape::Id> r_bar;
    for (int j = 1; j <= n; ++j) r_bar.push_back(taped_row_gram_chol(t, w[j - 1], p.alphas[j - 1]));
    std::vector<Tape::Id> c;
    for (int j = 1; j <= n; ++j) {
        const Tape::Id r_j = taped_col_gram_chol(t, w[j - 1], p.alphas[j - 1]);
        Tape::Id x = t.solve_right(w[j - 1], r_j, false);
        if (j == 1) {
            c.push_back(t.scale(x, std::sqrt(kappa(1)) * p.lipschitz));
        } else {
            x = t.solve_right(x, r_bar[j - 2], true);
            c.push_back(t.scale(x, std::sqrt(kappa(j) * kappa(j - 1) * p.alphas[j - 2])));
        }
    }
    return c;
}

ModelGraph build_graph(Model& model, const Matrix& x, const std::vector<int>& labels,
                       const std::vector<double>& class_weights) {
    ModelGraph g;
    Tape& t = g.tape;
    auto reg = [&](Matrix* m, bool decay) {
        const Tape::Id id = t.leaf(*m);
        g.params.push_back({m, id, decay});
        return id;
    };

    const Tape::Id input = t.leaf(x);
    const Tape::Id pw = reg(&model.proj_w, true);
    const Tape::Id pb = reg(&model.proj_b, false);
    Tape::Id z = t.add_bias(t.matmul(taped_normalized_map(t, pw, 1.0, 1.0), input), pb);

    if (model.spec.kind == ModelKind::Residual) {
        for (auto& blk : model.res_blocks) {
            const Tape::Id wa = reg(&blk.w_a, true);
            const Tape::Id wb = reg(&blk.w_b, true);
            std::vector<Tape::Id> ws, bs;
            for (int j = 0; j < blk.n(); ++j) {
                ws.push_back(reg(&blk.w[j], true));
                bs.push_back(reg(&blk.biases[j], false));
            }
            const TapedBlock tb = taped_materialize_residual(t, blk, wa, wb, ws);
            Tape::Id h = z;
            for (int j = 0; j < blk.n(); ++j)
                h = t.activation(t.add_bias(t.matmul(tb.c[j], h), bs[j]), blk.activations[j]);
            z = t.add(t.matmul(tb.a, z), t.matmul(tb.b, h));
        }
    } else {
        for (auto& blk : model.ff_blocks) {
            std::vector<Tape::Id> ws, bs;
            for (int j = 0; j < blk.n(); ++j) {
                ws.push_back(reg(&blk.w[j], true));
                bs.push_back(reg(&blk.biases[j], false));
            }
            const auto c = taped_materialize_feedforward(t, blk, ws);
            for (int j = 0; j < blk.n(); ++j)
                z = t.activation(t.add_bias(t.matmul(c[j], z), bs[j]), blk.activations[j]);
        }
    }

    const Tape::Id hw = reg(&model.head_w, true);
    const Tape::Id hb = reg(&model.head_b, false);
    g.logits = t.add_bias(t.matmul(taped_normalized_map(t, hw, 1.0, 1.0), z), hb);
    g.loss = t.weighted_cross_entropy(g.logits, labels, class_weights);
    return g;
}

std::vector<double> balanced_class_weights(const std::vector<int>& labels, int num_classes) {
    std::vector<double> counts(num_classes, 0.0);
    for (int y : labels) counts[y] += 1.0;
    std::vector<double> w(num_classes, 0.0);
    for (int c = 0; c < num_classes; ++c)
        if (counts[c] > 0.0)
            w[c] = static_cast<double>(labels.size()) / (num_classes * counts[c]);
    return w;
}

double weighted_ce(const Matrix& logits, const std::vector<int>& labels,
                   const std::vector<double>& class_weights) {
    const int classes = logits.rows();
    const int batch = logits.cols();
    double loss = 0.0;
    for (int i = 0; i < batch; ++i) {
        double zmax = logits(0, i);
        for (int k = 1; k < classes; ++k) zmax = std::max(zmax, logits(k, i));
        double sum = 0.0;
        for (int k = 0; k < classes; ++k) sum += std::exp(logits(k, i) - zmax);
        const double w = class_weights.empty() ? 1.0 : class_weights[labels[i]];
        loss += w * (zmax + std::log(sum) - logits(labels[i], i));
    }
    return loss / batch;
}

double eval_loss(const Model& model, const Matrix& x, const std::vector<int>& labels,
                 const std::vector<double>& class_weights) {
    return weighted_ce(model.forward(x), labels, class_weights);
}

double accuracy(const Model& model, const Matrix& x, const std::vector<int>& labels) {
    const Matrix logits = model.forward(x);
    int hits = 0;
    for (int i = 0; i < logits.cols(); ++i) {
        int arg = 0;
        for (int k = 1; k < logits.rows(); ++k)
            if (logits(k, i) > logits(arg, i)) arg = k;
        if (arg == labels[i]) ++hits;
    }
    return static_cast<double>(hits) / std::max(1, logits.cols());
}

TrainResult train_classifier(const Model& init, const Matrix& x_train,
                             const std::vector<int>& y_train, const Matrix& x_val,
                             const std::vector<int>& y_val, const TrainConfig& cfg,
                             const EpochCallback& cb) {
    Model model = init;
    const int n = x_train.cols();
    if (n < 1 || static_cast<int>(y_train.size()) != n)
        throw DimensionMismatch("train_classifier: one label per training column");
    if (cfg.early_stop_patience < cfg.plateau_patience)
        throw InvalidParams("early_stop_patience must be >= plateau_patience");
    const auto class_w = balanced_class_weights(y_train, model.spec.num_classes);
    const int batch = n < cfg.full_batch_below ? n : cfg.batch_size;
    const bool has_val = x_val.cols() > 0;

    TrainResult result;
    result.model = model;
    result.best_val_acc = -1.0;

    AdamState adam;
    double lr = cfg.lr;
    int plateau = 0, since_best = 0;
    std::mt19937_64 rng(cfg.seed);
    std::vector<int> order(n);
    std::iota(order.begin(), order.end(), 0);

    for (int epoch = 1; epoch <= cfg.max_epochs; ++epoch) {
        std::shuffle(order.begin(), order.end(), rng);
        for (int start = 0; start < n; start += batch) {
            const int stop = std::min(start + batch, n);
            std::vector<int> idx(order.begin() + start, order.begin() + stop);
            std::vector<int> yb(idx.size());
            for (size_t i = 0; i < idx.size(); ++i) yb[i] = y_train[idx[i]];
            ModelGraph g = build_graph(model, gather_columns(x_train, idx), yb, class_w);
            g.tape.backward(g.loss);
            adam_step(adam, g, cfg, lr);
        }
        model.rematerialize();
        const double tl = eval_loss(model, x_train, y_train, class_w);
        const double va =
            has_val ? accuracy(model, x_val, y_val) : accuracy(model, x_train, y_train);
        result.train_loss.push_back(tl);
        result.val_acc.push_back(va);
        result.lr.push_back(lr);
        result.epochs_run = epoch;

        // Scheduler and early stop follow best validation accuracy; both
        // counters reset on strict improvement.
        if (va > result.best_val_acc) {
            result.best_val_acc = va;
            result.best_epoch = epoch;
            result.model = model;
            plateau = 0;
            since_best = 0;
        } else {
            ++plateau;
            ++since_best;
            if (plateau >= cfg.plateau_patience) {
                lr *= cfg.plateau_factor;
                plateau = 0;
            }
        }
        if (cb) cb(epoch, model, tl, va);
        if (since_best >= cfg.early_stop_patience) break;
    }
    return result;
}

} // namespace ldlt
