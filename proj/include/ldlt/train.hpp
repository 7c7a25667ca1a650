#pragma once

#include <functional>

#include "ldlt/autodiff.hpp"
#include "ldlt/network.hpp"

namespace ldlt {

struct NonFiniteGradient : std::runtime_error {
    explicit NonFiniteGradient(const std::string& what) : std::runtime_error(what) {}
};

struct TrainConfig {
    int max_epochs = 100;
    int batch_size = 64;
    int full_batch_below = 256; // train full-batch when fewer rows than this
    double lr = 1e-3;
    double weight_decay = 1e-4; // decoupled, weights only
    double beta1 = 0.9;
    double beta2 = 0.999;
    double eps = 1e-8;
    int plateau_patience = 8;
    double plateau_factor = 0.5;
    int early_stop_patience = 30;
    std::uint64_t seed = kLibrarySeed;
};

struct TrainResult {
    Model model; // best-validation-accuracy checkpoint
    std::vector<double> train_loss; // per epoch
    std::vector<double> val_acc;
    std::vector<double> lr;
    double best_val_acc = 0.0;
    int best_epoch = -1;
    int epochs_run = 0;
};

/// Called after every epoch with the freshly rematerialized model.
using EpochCallback = std::function<void(int epoch, const Model& model, double train_loss,
                                         double val_acc)>;

/// w_c = N / (K * N_c); absent classes get weight 0.
std::vector<double> balanced_class_weights(const std::vector<int>& labels, int num_classes);

/// Batch mean of w_{y_i} * cross_entropy_i over raw logits (classes x batch).
double weighted_ce(const Matrix& logits, const std::vector<int>& labels,
                   const std::vector<double>& class_weights);

double eval_loss(const Model& model, const Matrix& x, const std::vector<int>& labels,
                 const std::vector<double>& class_weights);

double accuracy(const Model& model, const Matrix& x, const std::vector<int>& labels);

/// AdamW on the raw parameters; every step differentiates through the full
/// materialization, so each iterate is certifiable as-is. Throws
/// NonFiniteGradient when a gradient goes NaN/Inf.
TrainResult train_classifier(const Model& init, const Matrix& x_train,
                             const std::vector<int>& y_train, const Matrix& x_val,
                             const std::vector<int>& y_val, const TrainConfig& cfg,
                             const EpochCallback& cb = {});

// --- taped materialization (exposed for gradient tests) ---

struct TapedBlock {
    Tape::Id a = -1;
    Tape::Id b = -1;
    std::vector<Tape::Id> c;
};

Tape::Id taped_normalized_map(Tape& t, Tape::Id w, double gamma, double alpha);

TapedBlock taped_materialize_residual(Tape& t, const ResidualBlockParams& p, Tape::Id w_a,
                                      Tape::Id w_b, const std::vector<Tape::Id>& w);

std::vector<Tape::Id> taped_materialize_feedforward(Tape& t, const FeedforwardParams& p,
                                                    const std::vector<Tape::Id>& w);

struct GraphParam {
    Matrix* tensor;
    Tape::Id id;
    bool decay;
};

struct ModelGraph {
    Tape tape;
    std::vector<GraphParam> params;
    Tape::Id logits = -1;
    Tape::Id loss = -1;
};

/// Leaves for every raw tensor, taped materialization, forward pass, and the
/// weighted cross-entropy loss for one batch of column samples.
ModelGraph build_graph(Model& model, const Matrix& x, const std::vector<int>& labels,
                       const std::vector<double>& class_weights);

} // namespace ldlt
