// End-to-end acceptance gate. Each criterion prints one PASS/FAIL line;
// the exit code is the number of failures.
#include <chrono>
#include <cmath>
#include <cstdio>
#include <random>
#include <vector>

#include "ldlt/lmi.hpp"
#include "ldlt/pipeline.hpp"

using namespace ldlt;

namespace {

using Clock = std::chrono::steady_clock;

double seconds_since(Clock::time_point t0) {
    return std::chrono::duration<double>(Clock::now() - t0).count();
}

Matrix random_matrix(int r, int c, std::mt19937_64& rng, double scale = 1.0) {
    std::normal_distribution<double> g(0.0, 1.0);
    Matrix m(r, c);
    for (size_t i = 0; i < m.size(); ++i) m.data()[i] = scale * g(rng);
    return m;
}

Matrix psd_inverse(const Matrix& a) {
    const Matrix r = cholesky_upper(a);
    const Matrix y = solve_triangular(r, Matrix::identity(a.rows()), Side::Left, true);
    return solve_triangular(r, y, Side::Left, false);
}

ResidualBlockParams random_residual_draw(std::mt19937_64& rng, int max_dim = 32) {
    const double budgets[] = {0.5, 1.0, 2.0};
    const int n = 1 + static_cast<int>(rng() % 4);
    std::uniform_int_distribution<int> dim(1, max_dim);
    std::vector<int> widths;
    for (int j = 0; j < n; ++j) widths.push_back(dim(rng));
    return ResidualBlockParams::random(budgets[rng() % 3], dim(rng), widths, "relu", rng());
}

bool criterion_factorization_soundness() {
    const auto t0 = Clock::now();
    std::mt19937_64 rng(9001);
    bool ok = true;
    for (int t = 0; t < 20; ++t) {
        const auto p = random_residual_draw(rng);
        const auto m = materialize_residual(p);
        const auto prob = LmiProblem::from_residual(p, m);
        const Matrix lmi = assemble_residual_lmi(prob);
        const auto f = block_ldlt(lmi, prob.partition);
        ok = ok && frobenius_norm(f.reconstruct() - lmi) <= 1e-8 * frobenius_norm(lmi);
        for (const auto& d : f.d_blocks) ok = ok && min_eigenvalue(symmetrize(d)) >= -1e-8;
    }
    return ok && seconds_since(t0) < 10.0;
}

bool criterion_analytic_pivots() {
    std::mt19937_64 rng(9002);
    bool ok = true;
    for (int t = 0; t < 12; ++t) {
        const auto p = random_residual_draw(rng, 12);
        const auto m = materialize_residual(p);
        const auto prob = LmiProblem::from_residual(p, m);
        const auto f = block_ldlt(assemble_residual_lmi(prob), prob.partition);
        const int n = p.n();
        ok = ok && frobenius_norm(f.d_blocks[0] - compute_D1(p)) <=
                       1e-8 * frobenius_norm(compute_D1(p));
        for (int j = 2; j <= n; ++j)
            ok = ok && frobenius_norm(f.d_blocks[j - 1] - compute_Dj(p, j)) <=
                           1e-8 * frobenius_norm(compute_Dj(p, j));
        const Matrix dn1 = compute_Dn1(p, m);
        ok = ok && frobenius_norm(f.d_blocks[n] - dn1) <=
                       1e-8 * std::max(1.0, frobenius_norm(dn1));
    }
    return ok;
}

bool criterion_component_bounds() {
    std::mt19937_64 rng(9003);
    bool ok = true;
    for (int t = 0; t < 10; ++t) {
        const auto p = random_residual_draw(rng, 10);
        const auto m = materialize_residual(p, t % 2 ? BVariant::ScalarC : BVariant::Tight);
        ok = ok && spectral_norm(m.a) <= p.lipschitz * (1.0 + 1e-9);
        for (int j = 1; j <= p.n(); ++j) {
            const Matrix cdc =
                matmul(matmul(m.c[j - 1], psd_inverse(m.d[j - 1])), transpose(m.c[j - 1]));
            ok = ok && sym_eig(symmetrize(cdc)).eigenvalues.back() <= 2.0 + 1e-9;
        }
        ok = ok && min_eigenvalue(symmetrize(m.d.back())) >= -1e-9;

        auto fp = FeedforwardParams::random(0.5 + 0.5 * (t % 4), {4, 6, 5, 4}, "relu", 9100 + t);
        const auto fm = materialize_feedforward(fp);
        for (int j = 1; j <= fp.n(); ++j) {
            const double kappa = j == fp.n() ? 1.0 : 2.0;
            const Matrix cdc =
                matmul(matmul(fm.c[j - 1], psd_inverse(fm.d[j - 1])), transpose(fm.c[j - 1]));
            ok = ok && sym_eig(symmetrize(cdc)).eigenvalues.back() <= kappa + 1e-9;
        }
        ok = ok && min_eigenvalue(symmetrize(fm.d.back())) >= -1e-9;
    }
    return ok;
}

bool criterion_sigma_recursion() {
    std::mt19937_64 rng(9004);
    bool ok = true;
    for (int t = 0; t < 10; ++t) {
        const auto p = random_residual_draw(rng, 8);
        const auto m = materialize_residual(p);
        Matrix gamma = Matrix::identity(p.state_dim);
        Matrix sigma = Matrix::zeros(p.state_dim, p.state_dim);
        for (int j = 1; j <= p.n(); ++j) {
            const Matrix dinv = psd_inverse(m.d[j - 1]);
            sigma = sigma + matmul(matmul(gamma, dinv), transpose(gamma));
            gamma = matmul(matmul(gamma, dinv), transpose(m.c[j - 1]));
        }
        ok = ok && frobenius_norm(m.sigma - sigma) <= 1e-10 * frobenius_norm(sigma);
    }
    return ok;
}

bool criterion_norm_identities() {
    std::mt19937_64 rng(9005);
    std::uniform_int_distribution<int> dim(1, 10);
    bool ok = true;
    for (int t = 0; t < 100; ++t) {
        const Matrix w = random_matrix(dim(rng), dim(rng), rng);
        const double gamma = 0.25 + 0.025 * (t % 80);
        const double alpha = 0.1 + 0.03 * (t % 50);
        const double s = spectral_norm(w);

        const double norm = spectral_norm(normalized_map(w, gamma, alpha));
        ok = ok && std::abs(norm - gamma * s / std::sqrt(alpha + s * s)) <= 1e-9;

        const Matrix lhs = 2.0 * alpha * psd_inverse(add_scaled_identity(gram_nt(w), alpha));
        const Matrix rhs = add_scaled_identity(
            -2.0 * matmul(matmul(w, psd_inverse(add_scaled_identity(gram_tn(w), alpha))),
                          transpose(w)),
            2.0);
        ok = ok && frobenius_norm(lhs - rhs) <= 1e-10 * std::max(1.0, frobenius_norm(rhs));

        const Matrix gram = add_scaled_identity(gram_tn(w), alpha);
        const Matrix r = cholesky_upper(gram);
        const Matrix via_r = solve_triangular(r, w, Side::Right, false);
        const Matrix via_s = matmul(w, psd_inverse(sqrt_psd(gram)));
        ok = ok && std::abs(spectral_norm(via_r) - spectral_norm(via_s)) <= 1e-9;

        const Matrix q = matmul(r, psd_inverse(sqrt_psd(gram)));
        ok = ok && frobenius_norm(gram_tn(q) - Matrix::identity(q.cols())) <= 1e-8;
    }
    return ok;
}

bool criterion_empirical_lipschitz() {
    bool ok = true;
    for (int t = 0; t < 10; ++t) {
        for (ModelKind kind : {ModelKind::Residual, ModelKind::Feedforward}) {
            ModelSpec spec;
            spec.kind = kind;
            spec.lipschitz = (t % 3 == 0) ? 0.5 : (t % 3 == 1) ? 1.0 : 2.0;
            spec.input_dim = 3 + t % 3;
            spec.num_classes = 2 + t % 3;
            spec.state_dim = 6;
            spec.widths = {6, 6, 6};
            const Model m = Model::random(spec, 9200 + t);
            const double bound = m.lipschitz_bound();
            ok = ok && empirical_lipschitz(m, 10000, 9300 + t) <= bound * (1.0 + 1e-6);
        }
    }
    return ok;
}

bool criterion_gradient_audit() {
    std::mt19937_64 rng(9006);
    bool ok = true;
    for (ModelKind kind : {ModelKind::Residual, ModelKind::Feedforward}) {
        ModelSpec spec;
        spec.kind = kind;
        spec.lipschitz = 1.0;
        spec.input_dim = 3;
        spec.num_classes = 2;
        spec.state_dim = 3;
        spec.widths = {4, 3};
        spec.activation = "tanh";
        Model model = Model::random(spec, 9400 + static_cast<int>(kind));
        const Matrix x = random_matrix(3, 6, rng);
        const std::vector<int> labels = {0, 1, 1, 0, 1, 0};
        const auto cw = balanced_class_weights(labels, 2);
        ModelGraph g = build_graph(model, x, labels, cw);
        g.tape.backward(g.loss);
        const double h = 1e-5;
        for (const auto& prm : g.params) {
            const Matrix analytic = g.tape.grad(prm.id);
            for (size_t e = 0; e < prm.tensor->size(); ++e) {
                const double saved = prm.tensor->data()[e];
                prm.tensor->data()[e] = saved + h;
                ModelGraph gp = build_graph(model, x, labels, cw);
                const double fp = gp.tape.value(gp.loss)(0, 0);
                prm.tensor->data()[e] = saved - h;
                ModelGraph gm = build_graph(model, x, labels, cw);
                const double fm = gm.tape.value(gm.loss)(0, 0);
                prm.tensor->data()[e] = saved;
                const double fd = (fp - fm) / (2.0 * h);
                ok = ok && std::abs(analytic.data()[e] - fd) <= 1e-4 * std::max(1.0, std::abs(fd));
            }
        }
    }
    return ok;
}

struct SmokeOutcome {
    bool ok = false;
    Model model;
    Matrix x;
    std::vector<int> y;
};

SmokeOutcome training_smoke_one(ModelKind kind, const Dataset& ds) {
    ModelSpec spec;
    spec.kind = kind;
    spec.lipschitz = 1.0;
    spec.input_dim = ds.num_features();
    spec.num_classes = 2;
    spec.state_dim = 32;
    spec.widths = {32, 32, 32, 32};
    spec.activation = "relu";

    std::vector<int> rows;
    for (int i = 0; i < ds.num_samples(); ++i) rows.push_back(i);
    SmokeOutcome out;
    out.x = standardized_columns(ds.features, rows, ds.fold_stats[0]);
    out.y = ds.labels;

    Model init = Model::random(spec, 9500 + static_cast<int>(kind));
    TrainConfig cfg;
    bool every_epoch_certified = true;
    const auto res = train_classifier(
        init, out.x, out.y, out.x, out.y, cfg,
        [&](int, const Model& m, double, double) {
            every_epoch_certified = every_epoch_certified && verify_model(m).certified;
        });
    out.model = res.model;
    out.ok = every_epoch_certified && res.epochs_run <= 100 &&
             accuracy(res.model, out.x, out.y) >= 0.9;
    return out;
}

bool criterion_training_smoke(SmokeOutcome& res_out, SmokeOutcome& ff_out) {
    const auto t0 = Clock::now();
    const Dataset ds = synthetic_blobs(500, 2, 6.0, 9501);
    ff_out = training_smoke_one(ModelKind::Feedforward, ds);
    res_out = training_smoke_one(ModelKind::Residual, ds);
    return ff_out.ok && res_out.ok && seconds_since(t0) < 120.0;
}

bool criterion_certified_monotonicity(const SmokeOutcome& a, const SmokeOutcome& b) {
    bool ok = true;
    for (const auto* s : {&a, &b}) {
        if (s->x.cols() == 0) return false;
        const auto rep = evaluate(s->model, s->x, s->y);
        ok = ok && rep.certified_accuracy.size() == 4;
        double prev = rep.clean_accuracy;
        for (double c : rep.certified_accuracy) {
            ok = ok && c <= prev;
            prev = c;
        }
    }
    return ok;
}

bool criterion_tamper_detection() {
    bool ok = true;
    ModelSpec fspec;
    fspec.kind = ModelKind::Feedforward;
    fspec.lipschitz = 1.0;
    fspec.input_dim = 4;
    fspec.num_classes = 3;
    fspec.state_dim = 6;
    fspec.widths = {6, 6};
    Model fm = Model::random(fspec, 9600);
    ok = ok && verify_model(fm).certified;
    Model ft = fm;
    ft.ff_mat[0].c.back() = 10.0 * ft.ff_mat[0].c.back();
    const auto fv = verify_model(ft);
    ok = ok && !fv.certified && fv.failing_block == 1;

    ModelSpec rspec = fspec;
    rspec.kind = ModelKind::Residual;
    Model rm = Model::random(rspec, 9601);
    ok = ok && verify_model(rm).certified;
    Model rt = rm;
    rt.res_mat[0].a = Matrix::identity(6); // spectral norm 1 is fine...
    rt.res_mat[0].a = 1.5 * rt.res_mat[0].a; // ...1.5 exceeds the unit budget
    const auto rv = verify_model(rt);
    ok = ok && !rv.certified && rv.failing_block == 1;

    Model rc = rm;
    rc.res_mat[0].c.back() = 10.0 * rc.res_mat[0].c.back();
    const auto cv = verify_model(rc);
    ok = ok && !cv.certified && cv.failing_block == 1;
    return ok;
}

bool criterion_simplified_sigma_witness() {
    int witnesses = 0;
    for (int t = 0; t < 20; ++t) {
        auto p = ResidualBlockParams::random(1.0, 4, {5, 4, 5}, "relu", 9700 + t);
        const auto m = materialize_residual(p);
        const Matrix truth = matmul(matmul(m.a, m.sigma), transpose(m.a));
        const Matrix r_a = cholesky_upper(add_scaled_identity(gram_tn(p.w_a), p.alpha_a));
        Matrix inner = Matrix::zeros(4, 4);
        Matrix xi = Matrix::identity(4);
        for (int j = 2; j <= p.n(); ++j) {
            const Matrix& wk = p.w[j - 2];
            const double ak = p.alphas[j - 2];
            const Matrix r_prev =
                (j == 2) ? r_a
                         : cholesky_upper(add_scaled_identity(gram_nt(p.w[j - 3]),
                                                              p.alphas[j - 3]));
            const Matrix rtil = cholesky_upper(add_scaled_identity(gram_tn(wk), ak));
            const Matrix factor = matmul(
                transpose(r_prev), solve_triangular(rtil, transpose(wk), Side::Left, true));
            xi = matmul(xi, factor);
            inner = inner + matmul(matmul(xi, add_scaled_identity(gram_nt(wk), ak)),
                                   transpose(xi));
        }
        Matrix mid = solve_triangular(r_a, inner, Side::Left, false);
        mid = solve_triangular(r_a, mid, Side::Right, true);
        const Matrix shortcut = gram_nt(p.w_a) + matmul(matmul(p.w_a, mid), transpose(p.w_a));
        if (frobenius_norm(truth - shortcut) > 1e-6) ++witnesses;
    }
    return witnesses >= 1;
}

int report(const char* name, bool pass, double secs = -1.0) {
    if (secs >= 0.0)
        std::printf("%-38s %s (%.2fs)\n", name, pass ? "PASS" : "FAIL", secs);
    else
        std::printf("%-38s %s\n", name, pass ? "PASS" : "FAIL");
    std::fflush(stdout);
    return pass ? 0 : 1;
}

} // namespace

int main() {
    int failures = 0;

    auto t0 = Clock::now();
    bool c1 = criterion_factorization_soundness();
    failures += report("1. factorization soundness", c1, seconds_since(t0));
    failures += report("2. analytic pivot formulas", criterion_analytic_pivots());
    failures += report("3. component norm bounds", criterion_component_bounds());
    failures += report("4. sigma recursion vs expansion", criterion_sigma_recursion());
    failures += report("5. norm identities", criterion_norm_identities());
    failures += report("6. empirical vs certified bound", criterion_empirical_lipschitz());
    failures += report("7. gradient audit", criterion_gradient_audit());

    SmokeOutcome res_run, ff_run;
    t0 = Clock::now();
    bool c8 = criterion_training_smoke(res_run, ff_run);
    failures += report("8. training smoke test", c8, seconds_since(t0));
    failures += report("9. certified accuracy monotone",
                       criterion_certified_monotonicity(res_run, ff_run));
    failures += report("10. tamper detection", criterion_tamper_detection());
    failures += report("11. simplified-sigma counterexample",
                       criterion_simplified_sigma_witness());

    if (failures) std::printf("%d criterion(s) failed\n", failures);
    else std::printf("all 11 criteria passed\n");
    return failures;
}
