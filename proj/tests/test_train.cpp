#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <cmath>
#include <functional>
#include <random>

#include "doctest.h"
#include "ldlt/lmi.hpp"
#include "ldlt/train.hpp"

using namespace ldlt;

namespace {

Matrix random_matrix(int r, int c, std::mt19937_64& rng, double scale = 1.0) {
    std::normal_distribution<double> g(0.0, 1.0);
    Matrix m(r, c);
    for (size_t i = 0; i < m.size(); ++i) m.data()[i] = scale * g(rng);
    return m;
}

// Fixed linear functional turning any node into a scalar objective.
Tape::Id reduce(Tape& t, Tape::Id a) {
    const Matrix& v = t.value(a);
    Matrix u(v.rows(), 1), w(v.cols(), 1);
    for (int i = 0; i < v.rows(); ++i) u(i, 0) = 0.3 + 0.17 * i;
    for (int i = 0; i < v.cols(); ++i) w(i, 0) = 0.5 - 0.11 * i;
    return t.matmul_tn(t.leaf(u), t.matmul(a, t.leaf(w)));
}

using Builder = std::function<Tape::Id(Tape&, const std::vector<Tape::Id>&)>;

void check_grad(const Builder& build, std::vector<Matrix> inputs, double tol = 2e-5) {
    Tape t;
    std::vector<Tape::Id> ids;
    for (const auto& m : inputs) ids.push_back(t.leaf(m));
    const Tape::Id loss = build(t, ids);
    REQUIRE(t.value(loss).rows() == 1);
    REQUIRE(t.value(loss).cols() == 1);
    t.backward(loss);
    std::vector<Matrix> analytic;
    for (auto id : ids) analytic.push_back(t.grad(id));

    const double h = 1e-6;
    for (size_t k = 0; k < inputs.size(); ++k) {
        for (size_t e = 0; e < inputs[k].size(); ++e) {
            auto eval = [&](double delta) {
                std::vector<Matrix> pert = inputs;
                pert[k].data()[e] += delta;
                Tape tt;
                std::vector<Tape::Id> pid;
                for (const auto& m : pert) pid.push_back(tt.leaf(m));
                return tt.value(build(tt, pid))(0, 0);
            };
            const double fd = (eval(h) - eval(-h)) / (2.0 * h);
            CHECK(std::abs(analytic[k].data()[e] - fd) <=
                  tol * std::max(1.0, std::abs(fd)));
        }
    }
}

} // namespace

TEST_CASE("tape gradients: arithmetic and products") {
    std::mt19937_64 rng(401);
    const Matrix a = random_matrix(2, 3, rng);
    const Matrix b = random_matrix(2, 3, rng);
    check_grad([](Tape& t, const std::vector<Tape::Id>& in) {
        return reduce(t, t.sub(t.add(in[0], t.scale(in[1], 0.7)), in[1]));
    }, {a, b});

    const Matrix m1 = random_matrix(2, 3, rng);
    const Matrix m2 = random_matrix(3, 2, rng);
    check_grad([](Tape& t, const std::vector<Tape::Id>& in) {
        return reduce(t, t.matmul(in[0], in[1]));
    }, {m1, m2});
    check_grad([](Tape& t, const std::vector<Tape::Id>& in) {
        return reduce(t, t.matmul_tn(in[0], in[0]));
    }, {m1});
    check_grad([](Tape& t, const std::vector<Tape::Id>& in) {
        return reduce(t, t.matmul_nt(in[0], in[1]));
    }, {m1, random_matrix(4, 3, rng)});
}

TEST_CASE("tape gradients: grams and shifted identity") {
    std::mt19937_64 rng(403);
    const Matrix w = random_matrix(3, 2, rng);
    check_grad([](Tape& t, const std::vector<Tape::Id>& in) {
        return reduce(t, t.gram_tn(in[0]));
    }, {w});
    check_grad([](Tape& t, const std::vector<Tape::Id>& in) {
        return reduce(t, t.gram_nt(in[0]));
    }, {w});
    check_grad([](Tape& t, const std::vector<Tape::Id>& in) {
        return reduce(t, t.add_scaled_identity(t.gram_tn(in[0]), 0.5));
    }, {w});
}

TEST_CASE("tape gradients: cholesky and triangular solves") {
    std::mt19937_64 rng(405);
    const Matrix w = random_matrix(4, 3, rng);
    const Matrix b = random_matrix(2, 3, rng);
    const Matrix bl = random_matrix(3, 2, rng);
    check_grad([](Tape& t, const std::vector<Tape::Id>& in) {
        return reduce(t, t.cholesky(t.add_scaled_identity(t.gram_tn(in[0]), 1.0)));
    }, {w});
    for (bool tr : {false, true}) {
        check_grad([tr](Tape& t, const std::vector<Tape::Id>& in) {
            const Tape::Id r = t.cholesky(t.add_scaled_identity(t.gram_tn(in[0]), 1.0));
            return reduce(t, t.solve_right(in[1], r, tr));
        }, {w, b});
        check_grad([tr](Tape& t, const std::vector<Tape::Id>& in) {
            const Tape::Id r = t.cholesky(t.add_scaled_identity(t.gram_tn(in[0]), 1.0));
            return reduce(t, t.solve_left(r, in[1], tr));
        }, {w, bl});
    }
}

TEST_CASE("tape gradients: bias, activation, cross entropy") {
    std::mt19937_64 rng(407);
    const Matrix a = random_matrix(3, 4, rng);
    const Matrix bias = random_matrix(3, 1, rng);
    check_grad([](Tape& t, const std::vector<Tape::Id>& in) {
        return reduce(t, t.add_bias(in[0], in[1]));
    }, {a, bias});
    const auto th = builtin_activation("tanh");
    check_grad([&th](Tape& t, const std::vector<Tape::Id>& in) {
        return reduce(t, t.activation(in[0], th));
    }, {a});
    const std::vector<int> labels = {0, 2, 1, 0};
    const std::vector<double> cw = {1.0, 2.0, 0.5};
    check_grad([&](Tape& t, const std::vector<Tape::Id>& in) {
        return t.weighted_cross_entropy(t.matmul(in[0], in[1]), labels, cw);
    }, {random_matrix(3, 2, rng), random_matrix(2, 4, rng)});
}

TEST_CASE("taped materialization reproduces the plain one") {
    auto rp = ResidualBlockParams::random(1.5, 3, {4, 2}, "relu", 41001);
    const auto rm = materialize_residual(rp);
    Tape t;
    std::vector<Tape::Id> wids;
    for (const auto& w : rp.w) wids.push_back(t.leaf(w));
    const auto taped = taped_materialize_residual(t, rp, t.leaf(rp.w_a), t.leaf(rp.w_b), wids);
    CHECK(frobenius_norm(t.value(taped.a) - rm.a) < 1e-12);
    CHECK(frobenius_norm(t.value(taped.b) - rm.b) < 1e-12);
    for (int j = 0; j < rp.n(); ++j)
        CHECK(frobenius_norm(t.value(taped.c[j]) - rm.c[j]) < 1e-12);

    auto fp = FeedforwardParams::random(1.0, {3, 4, 3}, "relu", 41002);
    const auto fm = materialize_feedforward(fp);
    Tape t2;
    std::vector<Tape::Id> fids;
    for (const auto& w : fp.w) fids.push_back(t2.leaf(w));
    const auto ftaped = taped_materialize_feedforward(t2, fp, fids);
    for (int j = 0; j < fp.n(); ++j)
        CHECK(frobenius_norm(t2.value(ftaped[j]) - fm.c[j]) < 1e-12);
}

TEST_CASE("full-model gradients match finite differences") {
    std::mt19937_64 rng(409);
    for (ModelKind kind : {ModelKind::Residual, ModelKind::Feedforward}) {
        ModelSpec spec;
        spec.kind = kind;
        spec.lipschitz = 1.0;
        spec.input_dim = 3;
        spec.num_classes = 2;
        spec.state_dim = 3;
        spec.widths = {4, 3};
        spec.activation = "tanh"; // smooth, so central differences are clean
        Model model = Model::random(spec, 41010 + static_cast<int>(kind));
        const Matrix x = random_matrix(3, 6, rng);
        const std::vector<int> labels = {0, 1, 1, 0, 1, 0};
        const auto cw = balanced_class_weights(labels, 2);

        ModelGraph g = build_graph(model, x, labels, cw);
        g.tape.backward(g.loss);
        std::vector<Matrix> analytic;
        for (const auto& p : g.params) analytic.push_back(g.tape.grad(p.id));

        const double h = 1e-5;
        double max_grad = 0.0;
        for (size_t k = 0; k < g.params.size(); ++k) {
            Matrix* tensor = g.params[k].tensor;
            for (size_t e = 0; e < tensor->size(); ++e) {
                const double saved = tensor->data()[e];
                tensor->data()[e] = saved + h;
                ModelGraph gp = build_graph(model, x, labels, cw);
                const double fp = gp.tape.value(gp.loss)(0, 0);
                tensor->data()[e] = saved - h;
                ModelGraph gm = build_graph(model, x, labels, cw);
                const double fm = gm.tape.value(gm.loss)(0, 0);
                tensor->data()[e] = saved;
                const double fd = (fp - fm) / (2.0 * h);
                const double a = analytic[k].data()[e];
                CHECK(std::abs(a - fd) <= 1e-4 * std::max(1.0, std::abs(fd)));
                max_grad = std::max(max_grad, std::abs(a));
            }
        }
        CHECK(max_grad > 1e-6); // the audit is vacuous if everything is zero
    }
}

TEST_CASE("loss values on fixed logits") {
    const std::vector<double> unit = {1.0, 1.0};
    CHECK(weighted_ce(Matrix{{0.0}, {0.0}}, {0}, unit) == doctest::Approx(std::log(2.0)));
    CHECK(weighted_ce(Matrix{{20.0}, {-20.0}}, {0}, unit) == doctest::Approx(0.0).epsilon(1e-12));
    CHECK(weighted_ce(Matrix{{20.0}, {-20.0}}, {1}, unit) == doctest::Approx(40.0).epsilon(1e-6));
    // Weighted two-sample batch mean, recomputed by hand.
    const Matrix z{{1.0, 0.0}, {0.0, 1.0}};
    const std::vector<double> cw = {2.0, 1.0};
    const double ce = std::log(1.0 + std::exp(-1.0));
    CHECK(weighted_ce(z, {0, 1}, cw) == doctest::Approx((2.0 * ce + 1.0 * ce) / 2.0));
}

TEST_CASE("balanced_class_weights") {
    const auto w = balanced_class_weights({0, 0, 0, 1}, 2);
    CHECK(w[0] == doctest::Approx(4.0 / 6.0));
    CHECK(w[1] == doctest::Approx(2.0));
    CHECK(balanced_class_weights({0, 0, 1, 1}, 2)[0] == doctest::Approx(1.0));
    CHECK(balanced_class_weights({0}, 2)[1] == 0.0);
}

TEST_CASE("duplicating the batch leaves gradients unchanged") {
    std::mt19937_64 rng(411);
    ModelSpec spec;
    spec.kind = ModelKind::Feedforward;
    spec.lipschitz = 1.0;
    spec.input_dim = 2;
    spec.num_classes = 2;
    spec.state_dim = 3;
    spec.widths = {3, 3};
    Model model = Model::random(spec, 41020);
    const Matrix x = random_matrix(2, 4, rng);
    const std::vector<int> y = {0, 1, 1, 0};
    Matrix x2(2, 8);
    std::vector<int> y2;
    for (int rep = 0; rep < 2; ++rep)
        for (int i = 0; i < 4; ++i) {
            for (int r = 0; r < 2; ++r) x2(r, rep * 4 + i) = x(r, i);
            y2.push_back(y[i]);
        }
    const std::vector<double> cw = {1.0, 1.0};
    ModelGraph g1 = build_graph(model, x, y, cw);
    g1.tape.backward(g1.loss);
    ModelGraph g2 = build_graph(model, x2, y2, cw);
    g2.tape.backward(g2.loss);
    for (size_t k = 0; k < g1.params.size(); ++k)
        CHECK(frobenius_norm(g1.tape.grad(g1.params[k].id) - g2.tape.grad(g2.params[k].id)) <
              1e-12);
}

TEST_CASE("zero learning rate leaves parameters untouched") {
    std::mt19937_64 rng(413);
    ModelSpec spec;
    spec.kind = ModelKind::Residual;
    spec.lipschitz = 1.0;
    spec.input_dim = 2;
    spec.num_classes = 2;
    spec.state_dim = 4;
    spec.widths = {4, 4};
    Model init = Model::random(spec, 41030);
    const Matrix x = random_matrix(2, 20, rng);
    std::vector<int> y;
    for (int i = 0; i < 20; ++i) y.push_back(i % 2);
    TrainConfig cfg;
    cfg.lr = 0.0;
    cfg.weight_decay = 0.0;
    cfg.max_epochs = 2;
    const auto res = train_classifier(init, x, y, x, y, cfg);
    CHECK(frobenius_norm(res.model.proj_w - init.proj_w) == 0.0);
    CHECK(frobenius_norm(res.model.head_w - init.head_w) == 0.0);
    CHECK(frobenius_norm(res.model.res_blocks[0].w_a - init.res_blocks[0].w_a) == 0.0);
}

TEST_CASE("training is deterministic for a fixed seed") {
    std::mt19937_64 rng(417);
    ModelSpec spec;
    spec.kind = ModelKind::Feedforward;
    spec.lipschitz = 1.0;
    spec.input_dim = 2;
    spec.num_classes = 2;
    spec.state_dim = 4;
    spec.widths = {4, 4};
    Model init = Model::random(spec, 41040);
    const Matrix x = random_matrix(2, 32, rng);
    std::vector<int> y;
    for (int i = 0; i < 32; ++i) y.push_back(x(0, i) > 0 ? 1 : 0);
    TrainConfig cfg;
    cfg.max_epochs = 5;
    const auto r1 = train_classifier(init, x, y, x, y, cfg);
    const auto r2 = train_classifier(init, x, y, x, y, cfg);
    REQUIRE(r1.train_loss.size() == r2.train_loss.size());
    for (size_t i = 0; i < r1.train_loss.size(); ++i)
        CHECK(r1.train_loss[i] == r2.train_loss[i]);
    CHECK(frobenius_norm(r1.model.proj_w - r2.model.proj_w) == 0.0);
}

TEST_CASE("patience ordering is validated") {
    ModelSpec spec;
    spec.kind = ModelKind::Feedforward;
    spec.lipschitz = 1.0;
    spec.input_dim = 2;
    spec.num_classes = 2;
    spec.state_dim = 3;
    spec.widths = {3};
    Model init = Model::random(spec, 41050);
    const Matrix x = Matrix{{0.0, 1.0}, {1.0, 0.0}};
    const std::vector<int> y = {0, 1};
    TrainConfig cfg;
    cfg.early_stop_patience = 4;
    cfg.plateau_patience = 8;
    CHECK_THROWS_AS(train_classifier(init, x, y, x, y, cfg), InvalidParams);
}

TEST_CASE("a short run learns a separable problem and every epoch certifies") {
    std::mt19937_64 rng(419);
    const int n = 120;
    Matrix x(2, n);
    std::vector<int> y(n);
    for (int i = 0; i < n; ++i) {
        const int c = i % 2;
        x(0, i) = (c ? 2.0 : -2.0) + 0.3 * random_matrix(1, 1, rng)(0, 0);
        x(1, i) = 0.3 * random_matrix(1, 1, rng)(0, 0);
        y[i] = c;
    }
    ModelSpec spec;
    spec.kind = ModelKind::Feedforward;
    spec.lipschitz = 1.0;
    spec.input_dim = 2;
    spec.num_classes = 2;
    spec.state_dim = 8;
    spec.widths = {8, 8};
    Model init = Model::random(spec, 41060);
    TrainConfig cfg;
    cfg.max_epochs = 25;
    const auto res = train_classifier(init, x, y, x, y, cfg);
    CHECK(res.best_val_acc >= 0.9);
    CHECK(res.model.lipschitz_bound() <= 1.0 + 1e-9);
    // Certify the trained iterate exactly as stored.
    const auto& p = res.model.ff_blocks[0];
    const auto& mat = res.model.ff_mat[0];
    const auto prob = LmiProblem::from_feedforward(p, mat);
    CHECK(certify(assemble_feedforward_lmi(prob), prob.partition).verdict ==
          Verdict::Certified);
}
