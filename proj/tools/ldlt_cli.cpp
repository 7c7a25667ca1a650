#include <cstdio>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <string>
#include <vector>

#include "CLI11.hpp"
#include "ldlt/pipeline.hpp"

namespace fs = std::filesystem;
using namespace ldlt;

namespace {

constexpr int kExitCertified = 0;
constexpr int kExitRefuted = 1;
constexpr int kExitUsage = 2;
constexpr int kExitRuntime = 3;

std::vector<double> parse_radii(const std::string& spec) {
    std::vector<double> out;
    std::stringstream ss(spec);
    std::string tok;
    while (std::getline(ss, tok, ',')) {
        const auto slash = tok.find('/');
        if (slash == std::string::npos) {
            out.push_back(std::stod(tok));
        } else {
            out.push_back(std::stod(tok.substr(0, slash)) / std::stod(tok.substr(slash + 1)));
        }
    }
    if (out.empty()) throw std::runtime_error("no radii given");
    return out;
}

void apply_config_file(TrainConfig& cfg, const std::string& path) {
    std::ifstream in(path);
    if (!in) throw std::runtime_error("cannot open config '" + path + "'");
    std::string key;
    while (in >> key) {
        if (key.empty() || key[0] == '#') {
            std::string rest;
            std::getline(in, rest);
            continue;
        }
        double v;
        if (!(in >> v)) throw std::runtime_error("config key '" + key + "' needs a value");
        if (key == "lr")
            cfg.lr = v;
        else if (key == "weight_decay")
            cfg.weight_decay = v;
        else if (key == "max_epochs")
            cfg.max_epochs = static_cast<int>(v);
        else if (key == "batch_size")
            cfg.batch_size = static_cast<int>(v);
        else if (key == "plateau_patience")
            cfg.plateau_patience = static_cast<int>(v);
        else if (key == "early_stop_patience")
            cfg.early_stop_patience = static_cast<int>(v);
        else
            throw std::runtime_error("unknown config key '" + key + "'");
    }
}

void require_file(const std::string& path) {
    if (!fs::exists(path)) {
        std::cerr << "error: file not found: " << path << "\n";
        std::exit(kExitUsage);
    }
}

void print_report(const CertificationReport& rep) {
    std::printf("clean accuracy      %.4f\n", rep.clean_accuracy);
    for (size_t i = 0; i < rep.radii.size(); ++i)
        std::printf("certified @ %.4f   %.4f\n", rep.radii[i], rep.certified_accuracy[i]);
    std::printf("lipschitz bound     %.6g\n", rep.lipschitz_bound);
}

int print_verification(const ModelVerification& v) {
    std::printf("verdict             %s\n", v.certified ? "Certified" : "Refuted");
    std::printf("min block eig       %.17g\n", v.min_block_eigenvalue);
    std::printf("projection norm     %.17g\n", v.proj_norm);
    std::printf("head norm           %.17g\n", v.head_norm);
    if (!v.certified && v.failing_block > 0)
        std::printf("failing block       %d\n", v.failing_block);
    return v.certified ? kExitCertified : kExitRefuted;
}

int cmd_train(const std::string& data, const std::string& kind_name, double lipschitz,
              std::uint64_t seed, const std::string& out, const std::string& config) {
    require_file(data);
    const ModelKind kind =
        kind_name == "feedforward" ? ModelKind::Feedforward : ModelKind::Residual;
    TrainConfig cfg;
    cfg.seed = seed;
    if (!config.empty()) {
        require_file(config);
        apply_config_file(cfg, config);
    }
    const Dataset ds = load_csv(data, seed);

    // Fold 0 is the held-out test split; a stratified quarter of the rest
    // drives the scheduler and the checkpoint.
    std::vector<int> train_rows, test_rows;
    for (int i = 0; i < ds.num_samples(); ++i)
        (ds.fold[i] == 0 ? test_rows : train_rows).push_back(i);
    std::vector<int> fit_rows, val_rows;
    {
        Dataset scratch = ds;
        assign_folds(scratch, 4, seed + 1);
        for (int r : train_rows) (scratch.fold[r] == 0 ? val_rows : fit_rows).push_back(r);
    }
    const FoldStats& st = ds.fold_stats[0];
    auto labels_of = [&](const std::vector<int>& rows) {
        std::vector<int> y(rows.size());
        for (size_t i = 0; i < rows.size(); ++i) y[i] = ds.labels[rows[i]];
        return y;
    };
    const Model init = Model::random(protocol_spec(ds, kind, lipschitz), seed);
    std::printf("dataset %s: %d samples, %d features, %d classes; width %d\n", ds.name.c_str(),
                ds.num_samples(), ds.num_features(), ds.num_classes,
                init.spec.state_dim);
    const TrainResult tr = train_classifier(
        init, standardized_columns(ds.features, fit_rows, st), labels_of(fit_rows),
        standardized_columns(ds.features, val_rows, st), labels_of(val_rows), cfg);

    SavedModel saved{tr.model, st.mean, st.sdev};
    save_model(saved, out);
    const std::string hist_path = out + ".history.csv";
    std::FILE* h = std::fopen(hist_path.c_str(), "w");
    if (h) {
        std::fprintf(h, "epoch,train_loss,val_acc,lr\n");
        for (int e = 0; e < tr.epochs_run; ++e)
            std::fprintf(h, "%d,%.17g,%.17g,%.17g\n", e + 1, tr.train_loss[e], tr.val_acc[e],
                         tr.lr[e]);
        std::fclose(h);
    }

    const CertificationReport rep = evaluate(
        tr.model, standardized_columns(ds.features, test_rows, st), labels_of(test_rows));
    std::printf("epochs run          %d (best val acc %.4f at epoch %d)\n", tr.epochs_run,
                tr.best_val_acc, tr.best_epoch);
    print_report(rep);
    std::printf("model saved to      %s\n", out.c_str());
    return print_verification(verify_model(tr.model));
}

int cmd_verify(const std::string& model_path, const std::string& dump_lmi) {
    require_file(model_path);
    const SavedModel saved = load_model(model_path);
    if (!dump_lmi.empty()) {
        for (int k = 0; k < saved.model.spec.num_blocks; ++k) {
            const Matrix m = model_block_lmi(saved.model, k);
            const std::string path =
                k == 0 ? dump_lmi : dump_lmi + ".block" + std::to_string(k);
            dump_matrix(m, path);
            std::printf("LMI block %d dumped to %s\n", k, path.c_str());
        }
    }
    return print_verification(verify_model(saved.model));
}

int cmd_certify(const std::string& model_path, const std::string& data,
                const std::string& radii_spec) {
    require_file(model_path);
    require_file(data);
    const SavedModel saved = load_model(model_path);
    const std::vector<double> radii = parse_radii(radii_spec);
    const ModelVerification v = verify_model(saved.model);
    if (!v.certified) {
        std::printf("model failed verification; certification is void\n");
        return print_verification(v);
    }
    const Dataset ds = load_csv(data);
    if (ds.num_features() != saved.model.spec.input_dim)
        throw std::runtime_error("dataset feature count does not match the model");
    FoldStats st;
    if (saved.mean.empty()) {
        st.mean.assign(ds.num_features(), 0.0);
        st.sdev.assign(ds.num_features(), 1.0);
    } else {
        st.mean = saved.mean;
        st.sdev = saved.sdev;
    }
    std::vector<int> all(ds.num_samples());
    std::iota(all.begin(), all.end(), 0);
    print_report(evaluate(saved.model, standardized_columns(ds.features, all, st), ds.labels,
                          radii));
    return kExitCertified;
}

int cmd_eval_all(const std::string& data_dir, const std::string& out, double lipschitz,
                 std::uint64_t seed) {
    if (!fs::is_directory(data_dir)) {
        std::cerr << "error: not a directory: " << data_dir << "\n";
        return kExitUsage;
    }
    std::vector<std::string> files;
    for (const auto& e : fs::directory_iterator(data_dir))
        if (e.path().extension() == ".csv") files.push_back(e.path().string());
    std::sort(files.begin(), files.end());
    if (files.empty()) {
        std::cerr << "error: no CSV files in " << data_dir << "\n";
        return kExitUsage;
    }
    std::FILE* rep = std::fopen((out + ".tmp").c_str(), "w");
    if (!rep) throw std::runtime_error("cannot open '" + out + "' for writing");
    std::fprintf(rep,
                 "dataset,algorithm,clean_mean,clean_std,cert36_mean,cert36_std,cert72_mean,"
                 "cert72_std,cert108_mean,cert108_std,cert255_mean,cert255_std,lipschitz\n");
    TrainConfig cfg;
    for (const auto& file : files) {
        const Dataset ds = load_csv(file, seed);
        for (ModelKind kind : {ModelKind::Residual, ModelKind::Feedforward}) {
            const char* alg = kind == ModelKind::Residual ? "ldlt-r" : "ldlt-l";
            std::printf("running %s / %s ...\n", ds.name.c_str(), alg);
            const CvResult cv = run_cv(ds, kind, lipschitz, cfg, seed);
            std::fprintf(rep, "%s,%s,%.6f,%.6f", ds.name.c_str(), alg, cv.clean_mean,
                         cv.clean_std);
            for (size_t i = 0; i < cv.cert_mean.size(); ++i)
                std::fprintf(rep, ",%.6f,%.6f", cv.cert_mean[i], cv.cert_std[i]);
            std::fprintf(rep, ",%.6g\n", lipschitz);
            std::fflush(rep);
        }
    }
    std::fclose(rep);
    fs::rename(out + ".tmp", out);
    std::printf("report written to %s\n", out.c_str());
    return kExitCertified;
}

} // namespace

int main(int argc, char** argv) {
    CLI::App app{"Certified-Lipschitz network trainer and verifier"};
    app.require_subcommand(1);

    std::string data, model_path, out, kind = "residual", config, dump_lmi;
    std::string radii = "36/255,72/255,108/255,255/255";
    double lipschitz = 2.0;
    std::uint64_t seed = kLibrarySeed;

    auto* train = app.add_subcommand("train", "Train a certified classifier on a CSV dataset");
    train->add_option("--data", data, "CSV file, label in the last column")->required();
    train->add_option("--kind", kind, "residual or feedforward")
        ->check(CLI::IsMember({"residual", "feedforward"}));
    train->add_option("--lipschitz", lipschitz, "Lipschitz budget");
    train->add_option("--seed", seed, "RNG seed");
    train->add_option("--out", out, "output model file")->required();
    train->add_option("--config", config, "training config overrides (key value lines)");

    auto* verify = app.add_subcommand("verify", "Check the Lipschitz certificate of a model file");
    verify->add_option("--model", model_path, "model file")->required();
    verify->add_option("--dump-lmi", dump_lmi, "write the assembled LMI as i,j,value CSV");

    auto* certify = app.add_subcommand("certify", "Certified accuracy of a model on a dataset");
    certify->add_option("--model", model_path, "model file")->required();
    certify->add_option("--data", data, "CSV file")->required();
    certify->add_option("--radii", radii, "comma-separated radii (fractions allowed)");

    auto* eval_all = app.add_subcommand("eval-all", "4-fold CV over every CSV in a directory");
    eval_all->add_option("--data-dir", data, "directory of CSV files")->required();
    eval_all->add_option("--out", out, "report CSV path")->required();
    eval_all->add_option("--lipschitz", lipschitz, "Lipschitz budget");
    eval_all->add_option("--seed", seed, "RNG seed");

    try {
        app.parse(argc, argv);
    } catch (const CLI::ParseError& e) {
        app.exit(e);
        return kExitUsage;
    }

    try {
        if (train->parsed()) return cmd_train(data, kind, lipschitz, seed, out, config);
        if (verify->parsed()) return cmd_verify(model_path, dump_lmi);
        if (certify->parsed()) return cmd_certify(model_path, data, radii);
        if (eval_all->parsed()) return cmd_eval_all(data, out, lipschitz, seed);
    } catch (const std::exception& e) {
        std::cerr << "error: " << e.what() << "\n";
        return kExitRuntime;
    }
    return kExitUsage;
}
