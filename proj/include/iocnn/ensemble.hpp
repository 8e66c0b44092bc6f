#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "iocnn/train.hpp"

namespace iocnn {

enum class EnsembleMode { moe_em, boosted_gated, boosted_oracle };
const char* ensemble_mode_name(EnsembleMode m);

// Experts are IOC-constrained; the gate is an ordinary network whose softmax
// output is one weight per expert.
struct Ensemble {
    std::vector<Model> experts;
    Model gate;
    EnsembleMode mode = EnsembleMode::moe_em;

    std::size_t expert_count() const { return experts.size(); }
};

// Per-sample positive weights, normalized to mean 1.
struct SampleWeights {
    std::vector<double> values;

    void normalize_mean_one();
    void validate() const;
};

struct MoeConfig {
    std::size_t rounds = 5;
    std::size_t inner_epochs = 20;       // expert epochs per M-step
    std::size_t gate_epochs = 20;
    TrainConfig expert_train;            // must carry the IOC constraint
    TrainConfig gate_train;              // unconstrained
    std::uint64_t seed = 0;
};

struct MoeEvent {
    std::size_t round;
    std::size_t expert;
    std::string what;
};

// Alternates E (responsibilities from gate weight x expert likelihood of the
// true label) and M (responsibility-weighted expert training, then gate
// training on responsibilities as soft targets). An expert whose
// responsibility column collapses is reinitialized and the event logged.
Ensemble moe_em_fit(const std::vector<ModelSpec>& expert_specs, const ModelSpec& gate_spec,
                    const Dataset& data, const MoeConfig& cfg,
                    std::vector<MoeEvent>* events = nullptr);

struct BoostConfig {
    std::size_t n_experts = 3;
    TrainConfig expert_train;
    std::uint64_t seed = 0;
};

struct BoostResult {
    std::vector<Model> experts;
    SampleWeights final_weights;
    std::vector<std::string> events;
};

// Discrete-AdaBoost style reweighting: expert t trains on the current
// weights; misclassified samples are scaled by exp(beta) with
// beta = ln((1-err)/err), then weights renormalize to mean 1. An expert with
// weighted error >= 0.5 is kept and the weights reset to uniform.
BoostResult boost_fit(const ModelSpec& expert_spec, const Dataset& data,
                      const BoostConfig& cfg);

// Trains the gate to pick, per sample, the expert that classifies it
// correctly with highest confidence (falling back to highest true-class
// probability when every expert is wrong). Expert parameters are untouched.
Model gate_fit(const std::vector<Model>& frozen_experts, const ModelSpec& gate_spec,
               const Dataset& data, const TrainConfig& config);

struct EnsemblePrediction {
    int label;
    std::vector<double> gate_weights;  // one per expert, sums to 1
};

// Gate-weighted average of expert class probabilities, then argmax.
// boosted_oracle has no per-sample rule without labels and throws.
EnsemblePrediction ensemble_predict(const Ensemble& ensemble, const std::vector<double>& x);
std::vector<int> ensemble_predict_batch(const Ensemble& ensemble, const Tensor& inputs);
double ensemble_accuracy(const Ensemble& ensemble, const Dataset& data);

// Row-wise gate weights over a batch.
Tensor gate_weights(const Ensemble& ensemble, const Tensor& inputs);

// Fraction of samples at least one expert classifies correctly; an upper
// envelope for any gate.
double oracle_accuracy(const std::vector<Model>& experts, const Dataset& data);

double single_model_accuracy(const Model& model, const Dataset& data);

// Directory layout: expert_<k>.iocnn, gate.iocnn, manifest.json.
void save_ensemble(const Ensemble& ensemble, const std::string& dir);
Ensemble load_ensemble(const std::string& dir);

}  // namespace iocnn
