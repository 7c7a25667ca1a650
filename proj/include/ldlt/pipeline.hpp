#pragma once

#include <string>
#include <vector>

#include "ldlt/lmi.hpp"
#include "ldlt/network.hpp"
#include "ldlt/train.hpp"

namespace ldlt {

struct ParseError : std::runtime_error {
    explicit ParseError(const std::string& what) : std::runtime_error(what) {}
};
struct EmptyDataset : std::runtime_error {
    explicit EmptyDataset(const std::string& what) : std::runtime_error(what) {}
};
struct SingleClass : std::runtime_error {
    explicit SingleClass(const std::string& what) : std::runtime_error(what) {}
};
struct VersionMismatch : std::runtime_error {
    explicit VersionMismatch(const std::string& what) : std::runtime_error(what) {}
};
struct CorruptFile : std::runtime_error {
    explicit CorruptFile(const std::string& what) : std::runtime_error(what) {}
};

/// Certification radii from the evaluation protocol.
inline const std::vector<double> kDefaultRadii = {36.0 / 255.0, 72.0 / 255.0, 108.0 / 255.0,
                                                255.0 / 255.0};

/// Per-feature statistics of one fold's training split. Degenerate (constant)
/// features get sdev 1 instead of 0.
struct FoldStats {
    std::vector<double> mean;
    std::vector<double> sdev;
};

struct Dataset {
    std::string name;
    Matrix features; // rows = samples
    std::vector<int> labels;
    int num_classes = 0;
    std::vector<std::string> class_names; // label strings in id order
    std::vector<int> fold;                // 4-fold assignment per sample
    std::vector<FoldStats> fold_stats;    // train-split stats per fold

    int num_samples() const { return features.rows(); }
    int num_features() const { return features.cols(); }
};

/// Header row, numeric features, label in the last column (any string).
/// Assigns deterministic stratified 4-fold splits and their train statistics.
Dataset load_csv(const std::string& path, std::uint64_t seed = kLibrarySeed);

/// Stratified k-fold assignment + per-fold train standardization stats.
void assign_folds(Dataset& ds, int k, std::uint64_t seed);

/// Two Gaussian blobs at +/- separation/2 along every axis; labels 0/1.
Dataset synthetic_blobs(int samples, int features, double separation, std::uint64_t seed);

/// w = min(max(4N, 32), 512), then *1.25 when M > 10, then the nearest power
/// of two (ties up). N = feature count, M = class count.
int width_heuristic(int num_features, int num_classes);

/// Standardized feature columns for the given sample rows (features x rows).
Matrix standardized_columns(const Matrix& features, const std::vector<int>& rows,
                            const FoldStats& stats);

/// argmax(logits col) = label AND margin strictly above sqrt(2)*L*eps.
bool certified_correct(const Matrix& logits, int col, int label, double eps, double l_bound);

struct CertificationReport {
    double clean_accuracy = 0.0;
    std::vector<double> radii;
    std::vector<double> certified_accuracy;
    double lipschitz_bound = 0.0;
};

CertificationReport evaluate(const Model& model, const Matrix& x_cols,
                             const std::vector<int>& labels,
                             const std::vector<double>& radii = kDefaultRadii);

/// Independent certificate check of a materialized model: per-block LMI
/// certification plus the 1-Lipschitz projection/head norm checks. Runs on the
/// stored materialized weights, never on a re-derivation from raw parameters.
struct ModelVerification {
    bool certified = false;
    double min_block_eigenvalue = 0.0;
    int failing_block = 0; // 1-based model block, 0 when none
    double proj_norm = 0.0;
    double head_norm = 0.0;
    std::vector<Certificate> blocks;
};

ModelVerification verify_model(const Model& model);

/// Assembled (negated) LMI of one model block, for --dump-lmi.
Matrix model_block_lmi(const Model& model, int block, BlockPartition* partition = nullptr);

struct SavedModel {
    Model model;
    std::vector<double> mean; // input standardizer; empty = identity
    std::vector<double> sdev;
};

/// Versioned text container, hex-float tensors, atomic write-then-rename.
/// Round-trip reproduces bitwise-identical forward outputs.
void save_model(const SavedModel& saved, const std::string& path);
SavedModel load_model(const std::string& path);

struct FoldResult {
    CertificationReport report;
    bool verified = false;
    int epochs = 0;
    double best_val_acc = 0.0;
};

struct CvResult {
    std::vector<FoldResult> folds;
    double clean_mean = 0.0;
    double clean_std = 0.0;
    std::vector<double> cert_mean;
    std::vector<double> cert_std;
};

/// Four-fold cross-validation under the training protocol: per-fold width from
/// the heuristic, stratified quarter of the training split held out for
/// validation, certification metrics on the test fold.
CvResult run_cv(const Dataset& ds, ModelKind kind, double lipschitz, const TrainConfig& tcfg,
                std::uint64_t seed);

/// Builds the model spec the protocol uses for a dataset (4 layers, heuristic
/// width).
ModelSpec protocol_spec(const Dataset& ds, ModelKind kind, double lipschitz);

} // namespace ldlt
