#include "ldlt/pipeline.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <limits>
#include <map>
#include <numeric>
#include <random>
#include <sstream>

namespace ldlt {

namespace {

double parse_number(const std::string& tok, const std::string& context) {
    char* end = nullptr;
    const double v = std::strtod(tok.c_str(), &end);
    if (end == tok.c_str() || *end != '\0')
        throw ParseError(context + ": not a number: '" + tok + "'");
    if (!std::isfinite(v)) throw ParseError(context + ": non-finite value '" + tok + "'");
    return v;
}

std::vector<std::string> split_csv_line(const std::string& line) {
    std::vector<std::string> out;
    std::string field;
    std::stringstream ss(line);
    while (std::getline(ss, field, ',')) {
        while (!field.empty() && (field.back() == '\r' || field.back() == ' '))
            field.pop_back();
        size_t start = 0;
        while (start < field.size() && field[start] == ' ') ++start;
        out.push_back(field.substr(start));
    }
    if (!line.empty() && line.back() == ',') out.push_back("");
    return out;
}

double sample_std(const std::vector<double>& v, double mean) {
    if (v.size() < 2) return 0.0;
    double s = 0.0;
    for (double x : v) s += (x - mean) * (x - mean);
    return std::sqrt(s / (static_cast<double>(v.size()) - 1.0));
}

// Stratified split of `rows` into `k` groups: shuffle within class, deal
// round-robin. Deterministic in the seed.
std::vector<int> stratified_groups(const std::vector<int>& rows, const std::vector<int>& labels,
                                   int k, std::uint64_t seed) {
    std::map<int, std::vector<int>> by_class;
    for (int r : rows) by_class[labels[r]].push_back(r);
    std::mt19937_64 rng(seed);
    std::vector<int> group(labels.size(), -1);
    for (auto& [cls, idx] : by_class) {
        (void)cls;
        std::shuffle(idx.begin(), idx.end(), rng);
        for (size_t i = 0; i < idx.size(); ++i) group[idx[i]] = static_cast<int>(i % k);
    }
    return group;
}

} // namespace

void assign_folds(Dataset& ds, int k, std::uint64_t seed) {
    std::vector<int> all(ds.num_samples());
    std::iota(all.begin(), all.end(), 0);
    ds.fold = stratified_groups(all, ds.labels, k, seed);

    ds.fold_stats.assign(k, FoldStats{});
    for (int f = 0; f < k; ++f) {
        FoldStats& st = ds.fold_stats[f];
        st.mean.assign(ds.num_features(), 0.0);
        st.sdev.assign(ds.num_features(), 1.0);
        for (int j = 0; j < ds.num_features(); ++j) {
            std::vector<double> col;
            for (int i = 0; i < ds.num_samples(); ++i)
                if (ds.fold[i] != f) col.push_back(ds.features(i, j));
            const double m = std::accumulate(col.begin(), col.end(), 0.0) /
                             std::max<size_t>(1, col.size());
            double s = sample_std(col, m);
            if (s < 1e-12) s = 1.0; // constant feature
            st.mean[j] = m;
            st.sdev[j] = s;
        }
    }
}

Dataset load_csv(const std::string& path, std::uint64_t seed) {
    std::ifstream in(path);
    if (!in) throw ParseError("cannot open '" + path + "'");
    std::string line;
    if (!std::getline(in, line)) throw EmptyDataset("'" + path + "' is empty");
    const size_t arity = split_csv_line(line).size();
    if (arity < 2) throw ParseError("header needs at least one feature and the label column");

    std::vector<std::vector<double>> rows;
    std::vector<int> labels;
    std::vector<std::string> class_names;
    std::map<std::string, int> class_ids;
    int line_no = 1;
    while (std::getline(in, line)) {
        ++line_no;
        if (line.empty() || line == "\r") continue;
        const auto fields = split_csv_line(line);
        if (fields.size() != arity)
            throw ParseError(path + ":" + std::to_string(line_no) + ": expected " +
                             std::to_string(arity) + " fields, got " +
                             std::to_string(fields.size()));
        std::vector<double> feat(arity - 1);
        for (size_t j = 0; j + 1 < arity; ++j)
            feat[j] = parse_number(fields[j], path + ":" + std::to_string(line_no));
        const std::string& label = fields.back();
        auto [it, fresh] = class_ids.emplace(label, static_cast<int>(class_names.size()));
        if (fresh) class_names.push_back(label);
        rows.push_back(std::move(feat));
        labels.push_back(it->second);
    }
    if (rows.empty()) throw EmptyDataset("'" + path + "' has no data rows");
    if (class_names.size() < 2) throw SingleClass("'" + path + "' has a single class");

    Dataset ds;
    ds.name = std::filesystem::path(path).stem().string();
    ds.features = Matrix(static_cast<int>(rows.size()), static_cast<int>(arity - 1));
    for (size_t i = 0; i < rows.size(); ++i)
        for (size_t j = 0; j + 1 < arity; ++j)
            ds.features(static_cast<int>(i), static_cast<int>(j)) = rows[i][j];
    ds.labels = std::move(labels);
    ds.class_names = std::move(class_names);
    ds.num_classes = static_cast<int>(ds.class_names.size());
    assign_folds(ds, 4, seed);
    return ds;
}

Dataset synthetic_blobs(int samples, int features, double separation, std::uint64_t seed) {
    std::mt19937_64 rng(seed);
    std::normal_distribution<double> gauss(0.0, 1.0);
    Dataset ds;
    ds.name = "synthetic_blobs";
    ds.features = Matrix(samples, features);
    ds.labels.resize(samples);
    for (int i = 0; i < samples; ++i) {
        const int cls = i % 2;
        const double center = (cls == 0 ? -0.5 : 0.5) * separation;
        for (int j = 0; j < features; ++j) ds.features(i, j) = center + gauss(rng);
        ds.labels[i] = cls;
    }
    ds.class_names = {"0", "1"};
    ds.num_classes = 2;
    assign_folds(ds, 4, seed + 1);
    return ds;
}

int width_heuristic(int num_features, int num_classes) {
    double b = std::min(std::max(4.0 * num_features, 32.0), 512.0);
    if (num_classes > 10) b *= 1.25;
    return static_cast<int>(std::pow(2.0, std::round(std::log2(b))));
}

Matrix standardized_columns(const Matrix& features, const std::vector<int>& rows,
                            const FoldStats& stats) {
    Matrix out(features.cols(), static_cast<int>(rows.size()));
    for (size_t c = 0; c < rows.size(); ++c)
        for (int j = 0; j < features.cols(); ++j)
            out(j, static_cast<int>(c)) = (features(rows[c], j) - stats.mean[j]) / stats.sdev[j];
    return out;
}

bool certified_correct(const Matrix& logits, int col, int label, double eps, double l_bound) {
    int arg = 0;
    for (int k = 1; k < logits.rows(); ++k)
        if (logits(k, col) > logits(arg, col)) arg = k;
    if (arg != label) return false;
    double runner = -std::numeric_limits<double>::infinity();
    for (int k = 0; k < logits.rows(); ++k)
        if (k != label) runner = std::max(runner, logits(k, col));
    return logits(label, col) - runner > std::sqrt(2.0) * l_bound * eps;
}

CertificationReport evaluate(const Model& model, const Matrix& x_cols,
                             const std::vector<int>& labels, const std::vector<double>& radii) {
    CertificationReport rep;
    rep.radii = radii;
    rep.lipschitz_bound = model.lipschitz_bound();
    const Matrix logits = model.forward(x_cols);
    const int n = logits.cols();
    int clean = 0;
    std::vector<int> cert(radii.size(), 0);
    for (int i = 0; i < n; ++i) {
        int arg = 0;
        for (int k = 1; k < logits.rows(); ++k)
            if (logits(k, i) > logits(arg, i)) arg = k;
        if (arg == labels[i]) ++clean;
        for (size_t r = 0; r < radii.size(); ++r)
            if (certified_correct(logits, i, labels[i], radii[r], rep.lipschitz_bound)) ++cert[r];
    }
    rep.clean_accuracy = static_cast<double>(clean) / std::max(1, n);
    for (size_t r = 0; r < radii.size(); ++r)
        rep.certified_accuracy.push_back(static_cast<double>(cert[r]) / std::max(1, n));
    return rep;
}

Matrix model_block_lmi(const Model& model, int block, BlockPartition* partition) {
    if (model.spec.kind == ModelKind::Residual) {
        const LmiProblem prob =
            LmiProblem::from_residual(model.res_blocks[block], model.res_mat[block]);
        if (partition) *partition = prob.partition;
        return assemble_residual_lmi(prob);
    }
    const LmiProblem prob =
        LmiProblem::from_feedforward(model.ff_blocks[block], model.ff_mat[block]);
    if (partition) *partition = prob.partition;
    return assemble_feedforward_lmi(prob);
}

ModelVerification verify_model(const Model& model) {
    ModelVerification out;
    out.proj_norm = spectral_norm(model.proj);
    out.head_norm = spectral_norm(model.head);
    out.min_block_eigenvalue = std::numeric_limits<double>::infinity();
    bool all_ok = out.proj_norm <= 1.0 + 1e-8 && out.head_norm <= 1.0 + 1e-8;
    for (int k = 0; k < model.spec.num_blocks; ++k) {
        BlockPartition part({1});
        const Matrix m = model_block_lmi(model, k, &part);
        Certificate cert = certify(m, part);
        out.min_block_eigenvalue = std::min(out.min_block_eigenvalue, cert.min_block_eigenvalue);
        if (cert.verdict != Verdict::Certified && all_ok) {
            all_ok = false;
            out.failing_block = k + 1;
        }
        out.blocks.push_back(std::move(cert));
    }
    out.certified = all_ok;
    return out;
}

namespace {

void write_tensor(std::FILE* f, const char* name, const Matrix& m) {
    std::fprintf(f, "tensor %s %d %d\n", name, m.rows(), m.cols());
    for (int i = 0; i < m.rows(); ++i) {
        for (int j = 0; j < m.cols(); ++j) std::fprintf(f, "%a%c", m(i, j), j + 1 == m.cols() ? '\n' : ' ');
    }
}

void write_vector(std::FILE* f, const std::vector<double>& v) {
    for (size_t i = 0; i < v.size(); ++i)
        std::fprintf(f, "%a%c", v[i], i + 1 == v.size() ? '\n' : ' ');
}

struct TokenReader {
    std::ifstream in;

    std::string next(const char* what) {
        std::string tok;
        if (!(in >> tok)) throw CorruptFile(std::string("unexpected end of file reading ") + what);
        return tok;
    }

    void expect(const char* literal) {
        const std::string tok = next(literal);
        if (tok != literal)
            throw CorruptFile(std::string("expected '") + literal + "', got '" + tok + "'");
    }

    int next_int(const char* what) {
        const std::string tok = next(what);
        try {
            size_t pos = 0;
            const int v = std::stoi(tok, &pos);
            if (pos != tok.size()) throw std::invalid_argument(tok);
            return v;
        } catch (const std::exception&) {
            throw CorruptFile(std::string("bad integer for ") + what + ": '" + tok + "'");
        }
    }

    double next_double(const char* what) {
        const std::string tok = next(what);
        char* end = nullptr;
        const double v = std::strtod(tok.c_str(), &end);
        if (end == tok.c_str() || *end != '\0')
            throw CorruptFile(std::string("bad number for ") + what + ": '" + tok + "'");
        return v;
    }

    Matrix next_tensor(const std::string& name) {
        expect("tensor");
        const std::string got = next("tensor name");
        if (got != name)
            throw CorruptFile("expected tensor '" + name + "', got '" + got + "'");
        const int r = next_int("rows");
        const int c = next_int("cols");
        if (r < 0 || c < 0 || static_cast<long long>(r) * c > (1LL << 26))
            throw CorruptFile("tensor '" + name + "' has implausible shape");
        std::vector<double> data(static_cast<size_t>(r) * c);
        for (auto& v : data) v = next_double(name.c_str());
        try {
            return Matrix(r, c, std::move(data));
        } catch (const NonFiniteValue&) {
            throw CorruptFile("tensor '" + name + "' contains non-finite values");
        }
    }
};

} // namespace

void save_model(const SavedModel& saved, const std::string& path) {
    const Model& m = saved.model;
    const std::string tmp = path + ".tmp";
    std::FILE* f = std::fopen(tmp.c_str(), "w");
    if (!f) throw std::runtime_error("cannot open '" + tmp + "' for writing");
    const ModelSpec& s = m.spec;
    std::fprintf(f, "ldlt-model 1\n");
    std::fprintf(f, "kind %s\n", s.kind == ModelKind::Residual ? "residual" : "feedforward");
    std::fprintf(f, "lipschitz %a\n", s.lipschitz);
    std::fprintf(f, "input_dim %d\n", s.input_dim);
    std::fprintf(f, "num_classes %d\n", s.num_classes);
    std::fprintf(f, "state_dim %d\n", s.state_dim);
    std::fprintf(f, "num_blocks %d\n", s.num_blocks);
    std::fprintf(f, "activation %s\n", s.activation.c_str());
    std::fprintf(f, "widths %zu", s.widths.size());
    for (int w : s.widths) std::fprintf(f, " %d", w);
    std::fprintf(f, "\n");
    std::fprintf(f, "standardizer %zu\n", saved.mean.size());
    if (!saved.mean.empty()) {
        write_vector(f, saved.mean);
        write_vector(f, saved.sdev);
    }

    write_tensor(f, "proj_w", m.proj_w);
    write_tensor(f, "proj_b", m.proj_b);
    write_tensor(f, "head_w", m.head_w);
    write_tensor(f, "head_b", m.head_b);
    for (int k = 0; k < s.num_blocks; ++k) {
        std::fprintf(f, "block %d\n", k);
        if (s.kind == ModelKind::Residual) {
            const auto& p = m.res_blocks[k];
            std::fprintf(f, "alpha_a %a\nalpha_b %a\n", p.alpha_a, p.alpha_b);
            std::fprintf(f, "alphas %zu ", p.alphas.size());
            write_vector(f, p.alphas);
            write_tensor(f, "w_a", p.w_a);
            write_tensor(f, "w_b", p.w_b);
            for (int j = 0; j < p.n(); ++j) {
                write_tensor(f, ("w_" + std::to_string(j + 1)).c_str(), p.w[j]);
                write_tensor(f, ("bias_" + std::to_string(j + 1)).c_str(), p.biases[j]);
            }
        } else {
            const auto& p = m.ff_blocks[k];
            std::fprintf(f, "alphas %zu ", p.alphas.size());
            write_vector(f, p.alphas);
            for (int j = 0; j < p.n(); ++j) {
                write_tensor(f, ("w_" + std::to_string(j + 1)).c_str(), p.w[j]);
                write_tensor(f, ("bias_" + std::to_string(j + 1)).c_str(), p.biases[j]);
            }
        }
    }
    // The verifier consumes these as-is; they are authoritative for forward().
    std::fprintf(f, "materialized\n");
    write_tensor(f, "proj", m.proj);
    write_tensor(f, "head", m.head);
    for (int k = 0; k < s.num_blocks; ++k) {
        std::fprintf(f, "block %d\n", k);
        if (s.kind == ModelKind::Residual) {
            const auto& mb = m.res_mat[k];
            write_tensor(f, "a", mb.a);
            write_tensor(f, "b", mb.b);
            for (size_t j = 0; j < mb.c.size(); ++j)
                write_tensor(f, ("c_" + std::to_string(j + 1)).c_str(), mb.c[j]);
        } else {
            const auto& mb = m.ff_mat[k];
            for (size_t j = 0; j < mb.c.size(); ++j)
                write_tensor(f, ("c_" + std::to_string(j + 1)).c_str(), mb.c[j]);
        }
    }
    std::fprintf(f, "end\n");
    std::fclose(f);
    std::filesystem::rename(tmp, path);
}

SavedModel load_model(const std::string& path) {
    TokenReader r;
    r.in.open(path);
    if (!r.in) throw CorruptFile("cannot open '" + path + "'");
    if (r.next("magic") != "ldlt-model") throw CorruptFile("'" + path + "' is not a model file");
    const int version = r.next_int("version");
    if (version != 1)
        throw VersionMismatch("model format version " + std::to_string(version) +
                              " is not supported (expected 1)");
    SavedModel saved;
    Model& m = saved.model;
    ModelSpec& s = m.spec;
    r.expect("kind");
    const std::string kind = r.next("kind");
    if (kind == "residual")
        s.kind = ModelKind::Residual;
    else if (kind == "feedforward")
        s.kind = ModelKind::Feedforward;
    else
        throw CorruptFile("unknown kind '" + kind + "'");
    r.expect("lipschitz");
    s.lipschitz = r.next_double("lipschitz");
    r.expect("input_dim");
    s.input_dim = r.next_int("input_dim");
    r.expect("num_classes");
    s.num_classes = r.next_int("num_classes");
    r.expect("state_dim");
    s.state_dim = r.next_int("state_dim");
    r.expect("num_blocks");
    s.num_blocks = r.next_int("num_blocks");
    r.expect("activation");
    s.activation = r.next("activation");
    r.expect("widths");
    const int nw = r.next_int("width count");
    for (int i = 0; i < nw; ++i) s.widths.push_back(r.next_int("width"));
    r.expect("standardizer");
    const int ns = r.next_int("standardizer size");
    for (int i = 0; i < ns; ++i) saved.mean.push_back(r.next_double("mean"));
    for (int i = 0; i < ns; ++i) saved.sdev.push_back(r.next_double("sdev"));
    try {
        s.validate();
    } catch (const InvalidParams& e) {
        throw CorruptFile(std::string("invalid model spec: ") + e.what());
    }

    const double block_budget = std::pow(s.lipschitz, 1.0 / s.num_blocks);
    m.proj_w = r.next_tensor("proj_w");
    m.proj_b = r.next_tensor("proj_b");
    m.head_w = r.next_tensor("head_w");
    m.head_b = r.next_tensor("head_b");
    for (int k = 0; k < s.num_blocks; ++k) {
        r.expect("block");
        r.next_int("block index");
        if (s.kind == ModelKind::Residual) {
            ResidualBlockParams p;
            p.lipschitz = block_budget;
            p.state_dim = s.state_dim;
            p.widths = s.widths;
            r.expect("alpha_a");
            p.alpha_a = r.next_double("alpha_a");
            r.expect("alpha_b");
            p.alpha_b = r.next_double("alpha_b");
            r.expect("alphas");
            const int na = r.next_int("alpha count");
            for (int j = 0; j < na; ++j) p.alphas.push_back(r.next_double("alpha"));
            p.w_a = r.next_tensor("w_a");
            p.w_b = r.next_tensor("w_b");
            for (int j = 0; j < static_cast<int>(s.widths.size()); ++j) {
                p.w.push_back(r.next_tensor("w_" + std::to_string(j + 1)));
                p.biases.push_back(r.next_tensor("bias_" + std::to_string(j + 1)));
                p.activations.push_back(builtin_activation(s.activation));
            }
            m.res_blocks.push_back(std::move(p));
        } else {
            FeedforwardParams p;
            p.lipschitz = block_budget;
            p.widths.push_back(s.state_dim);
            p.widths.insert(p.widths.end(), s.widths.begin(), s.widths.end());
            r.expect("alphas");
            const int na = r.next_int("alpha count");
            for (int j = 0; j < na; ++j) p.alphas.push_back(r.next_double("alpha"));
            for (int j = 0; j < static_cast<int>(s.widths.size()); ++j) {
                p.w.push_back(r.next_tensor("w_" + std::to_string(j + 1)));
                p.biases.push_back(r.next_tensor("bias_" + std::to_string(j + 1)));
                p.activations.push_back(builtin_activation(s.activation));
            }
            m.ff_blocks.push_back(std::move(p));
        }
    }
    r.expect("materialized");
    m.proj = r.next_tensor("proj");
    m.head = r.next_tensor("head");
    for (int k = 0; k < s.num_blocks; ++k) {
        r.expect("block");
        r.next_int("block index");
        if (s.kind == ModelKind::Residual) {
            MaterializedBlock mb;
            mb.a = r.next_tensor("a");
            mb.b = r.next_tensor("b");
            for (int j = 0; j < static_cast<int>(s.widths.size()); ++j)
                mb.c.push_back(r.next_tensor("c_" + std::to_string(j + 1)));
            m.res_mat.push_back(std::move(mb));
        } else {
            MaterializedFeedforward mb;
            for (int j = 0; j < static_cast<int>(s.widths.size()); ++j)
                mb.c.push_back(r.next_tensor("c_" + std::to_string(j + 1)));
            m.ff_mat.push_back(std::move(mb));
        }
    }
    r.expect("end");
    return saved;
}

ModelSpec protocol_spec(const Dataset& ds, ModelKind kind, double lipschitz) {
    const int w = width_heuristic(ds.num_features(), ds.num_classes);
    ModelSpec spec;
    spec.kind = kind;
    spec.lipschitz = lipschitz;
    spec.input_dim = ds.num_features();
    spec.num_classes = ds.num_classes;
    spec.state_dim = w;
    spec.widths = {w, w, w, w};
    spec.num_blocks = 1;
    spec.activation = "relu";
    return spec;
}

CvResult run_cv(const Dataset& ds, ModelKind kind, double lipschitz, const TrainConfig& tcfg,
                std::uint64_t seed) {
    if (ds.fold.empty()) throw InvalidParams("dataset has no fold assignment");
    const int k = static_cast<int>(ds.fold_stats.size());
    CvResult out;
    std::vector<double> clean;
    std::vector<std::vector<double>> certs(kDefaultRadii.size());

    for (int f = 0; f < k; ++f) {
        std::vector<int> train_rows, test_rows;
        for (int i = 0; i < ds.num_samples(); ++i)
            (ds.fold[i] == f ? test_rows : train_rows).push_back(i);
        // Stratified quarter of the training split held out for validation.
        const auto val_group = stratified_groups(train_rows, ds.labels, 4, seed + 17 * f + 1);
        std::vector<int> fit_rows, val_rows;
        for (int rix : train_rows) (val_group[rix] == 0 ? val_rows : fit_rows).push_back(rix);

        const FoldStats& st = ds.fold_stats[f];
        const Matrix x_fit = standardized_columns(ds.features, fit_rows, st);
        const Matrix x_val = standardized_columns(ds.features, val_rows, st);
        const Matrix x_test = standardized_columns(ds.features, test_rows, st);
        auto labels_of = [&](const std::vector<int>& rows) {
            std::vector<int> y(rows.size());
            for (size_t i = 0; i < rows.size(); ++i) y[i] = ds.labels[rows[i]];
            return y;
        };
        const auto y_fit = labels_of(fit_rows);
        const auto y_val = labels_of(val_rows);
        const auto y_test = labels_of(test_rows);

        const Model init = Model::random(protocol_spec(ds, kind, lipschitz), seed + 31 * f);
        TrainConfig cfg = tcfg;
        cfg.seed = seed + 13 * f + 7;
        const TrainResult tr = train_classifier(init, x_fit, y_fit, x_val, y_val, cfg);

        FoldResult fr;
        fr.report = evaluate(tr.model, x_test, y_test);
        fr.verified = verify_model(tr.model).certified;
        fr.epochs = tr.epochs_run;
        fr.best_val_acc = tr.best_val_acc;
        clean.push_back(fr.report.clean_accuracy);
        for (size_t rix = 0; rix < kDefaultRadii.size(); ++rix)
            certs[rix].push_back(fr.report.certified_accuracy[rix]);
        out.folds.push_back(std::move(fr));
    }

    auto mean_of = [](const std::vector<double>& v) {
        return std::accumulate(v.begin(), v.end(), 0.0) / std::max<size_t>(1, v.size());
    };
    out.clean_mean = mean_of(clean);
    out.clean_std = sample_std(clean, out.clean_mean);
    for (auto& c : certs) {
        const double m = mean_of(c);
        out.cert_mean.push_back(m);
        out.cert_std.push_back(sample_std(c, m));
    }
    return out;
}

} // namespace ldlt
