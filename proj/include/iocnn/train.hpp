#pragma once

#include <cstdint>
#include <optional>
#include <string>
#include <vector>

#include "iocnn/constraints.hpp"
#include "iocnn/datasets.hpp"
#include "iocnn/network.hpp"

namespace iocnn {

// ---- losses ---------------------------------------------------------------

struct LossResult {
    double loss;
    Tensor d_logits;
};

// Mean softmax cross-entropy over the batch, log-sum-exp stabilized.
// d_logits = (softmax - one_hot) / n. Optional per-sample weights are
// expected to have mean 1.
LossResult cross_entropy(const Tensor& logits, const std::vector<int>& labels,
                         const std::vector<double>* sample_weights = nullptr);

// Cross-entropy against row-distribution targets (used for gating networks
// trained on responsibilities).
LossResult cross_entropy_soft(const Tensor& logits, const Tensor& targets);

// Binary cross-entropy on a single-logit head with labels in {0,1}.
LossResult binary_cross_entropy(const Tensor& logits, const std::vector<int>& labels,
                                const std::vector<double>* sample_weights = nullptr);

// Mean squared error against real targets [n x C].
LossResult mse_loss(const Tensor& logits, const Tensor& targets);

// Dispatches on the head: single-output -> binary cross-entropy, otherwise
// softmax cross-entropy.
LossResult classification_loss(const Model& model, const Tensor& logits,
                               const std::vector<int>& labels,
                               const std::vector<double>* sample_weights = nullptr);

// ---- optimizers -----------------------------------------------------------

void sgd_step(Model& model, const Gradients& grads, double lr);

struct AdamConfig {
    double beta1 = 0.9;
    double beta2 = 0.999;
    double eps = 1e-8;
};

struct AdamState {
    std::vector<LayerParams> m, v;
    std::uint64_t t = 0;
};

AdamState init_adam_state(const Model& model);
void adam_step(Model& model, const Gradients& grads, AdamState& state, double lr,
               const AdamConfig& cfg = {});

// ---- configuration and history ---------------------------------------------

enum class OptimizerKind { sgd, adam };

struct LrSchedule {
    enum class Kind { constant, step } kind = Kind::constant;
    double decay = 0.5;
    std::size_t every_n_epochs = 100;

    double at_epoch(double base_lr, std::size_t epoch) const;  // epoch is 0-based
};

struct TrainConfig {
    OptimizerKind optimizer = OptimizerKind::adam;
    double learning_rate = 1e-4;
    LrSchedule lr_schedule;
    std::size_t batch_size = 32;
    std::size_t max_epochs = 2000;
    double convergence_loss = 0.001;
    std::optional<std::size_t> patience;           // early stopping off when unset
    std::optional<ConstraintPolicy> constraint;    // unset trains unconstrained
    std::uint64_t seed = 0;

    void validate() const;
};

enum class StopReason { converged, max_epochs, early_stop };
const char* stop_reason_name(StopReason r);

struct EpochRecord {
    std::size_t epoch;          // 1-based
    double train_loss;          // mean batch loss during the epoch
    double train_acc;           // infer-mode, end of epoch
    double val_loss;
    double val_acc;
    double lr;
    double epoch_time;          // seconds; never serialized
    std::size_t constraint_violations;
};

struct TrainHistory {
    std::vector<EpochRecord> records;
    std::size_t best_epoch = 0;  // 1-based, by val_acc
    StopReason stop_reason = StopReason::max_epochs;
};

// ---- loops ------------------------------------------------------------------

struct OptimizerState {
    AdamState adam;
    bool adam_ready = false;
};

struct EpochStats {
    double mean_loss;
    std::size_t batches;
};

// One pass over the training data: shuffle (seeded by config.seed ^ epoch),
// then per batch forward / loss / backward / step / project. Projection runs
// after every optimizer update, per Algorithm 1.
EpochStats train_epoch(Model& model, const Dataset& train, const TrainConfig& config,
                       OptimizerState& opt, std::size_t epoch_index,
                       const std::vector<double>* sample_weights = nullptr);

struct EvalResult {
    double loss;
    double accuracy;
};
EvalResult evaluate(const Model& model, const Dataset& data);

struct FitResult {
    TrainHistory history;
    Model best;   // best-validation snapshot (== final model when val never improves)
};

// Full training loop with convergence / max-epoch / early-stopping exits.
// When early stopping triggers, the model is restored to the best snapshot.
FitResult fit(Model& model, const Dataset& train, const Dataset& val, const TrainConfig& config,
              const std::vector<double>* sample_weights = nullptr);

// Minimal loop for soft-target heads (gating networks): no early stopping,
// no constraint unless given.
void fit_soft(Model& model, const Tensor& inputs, const Tensor& targets, std::size_t epochs,
              const TrainConfig& config);

// Per-epoch CSV: epoch,train_loss,train_acc,val_loss,val_acc,lr,constraint_violations
void write_history_csv(const TrainHistory& history, const std::string& path);

}  // namespace iocnn
