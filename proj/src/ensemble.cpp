#include "iocnn/ensemble.hpp"

#include <cmath>
#include <filesystem>
#include <fstream>

#include <nlohmann/json.hpp>

#include "iocnn/metrics.hpp"
#include "iocnn/rng.hpp"
#include "iocnn/serialize.hpp"

namespace iocnn {

namespace fs = std::filesystem;
using nlohmann::json;

const char* ensemble_mode_name(EnsembleMode m) {
    switch (m) {
        case EnsembleMode::moe_em: return "moe_em";
        case EnsembleMode::boosted_gated: return "boosted_gated";
        case EnsembleMode::boosted_oracle: return "boosted_oracle";
    }
    return "?";
}

void SampleWeights::normalize_mean_one() {
    double sum = 0.0;
    for (double v : values) sum += v;
    const double scale = static_cast<double>(values.size()) / sum;
    for (double& v : values) v *= scale;
}

void SampleWeights::validate() const {
    for (double v : values)
        if (!(v > 0.0) || !std::isfinite(v))
            throw std::invalid_argument("sample weights must be strictly positive and finite");
}

namespace {

// Probability each expert assigns to the true label.
std::vector<double> true_class_probabilities(const Model& expert, const Dataset& data) {
    Tensor logits = forward(expert, data.inputs);
    Tensor probs = class_probabilities(expert, logits);
    std::vector<double> out(data.size());
    for (std::size_t i = 0; i < data.size(); ++i) out[i] = probs(i, data.labels[i]);
    return out;
}

void check_gate_spec(const ModelSpec& gate_spec, std::size_t p) {
    if (gate_spec.num_outputs != p)
        throw std::invalid_argument("gate spec has " + std::to_string(gate_spec.num_outputs) +
                                    " outputs, expert count is " + std::to_string(p));
}

}  // namespace

Ensemble moe_em_fit(const std::vector<ModelSpec>& expert_specs, const ModelSpec& gate_spec,
                    const Dataset& data, const MoeConfig& cfg, std::vector<MoeEvent>* events) {
    const std::size_t p = expert_specs.size();
    if (p < 1) throw std::invalid_argument("moe_em_fit: need at least one expert");
    check_gate_spec(gate_spec, p);
    if (!cfg.expert_train.constraint)
        throw std::invalid_argument("moe_em_fit: expert_train must carry an IOC constraint");

    const std::size_t n = data.size();
    Ensemble ens;
    ens.mode = EnsembleMode::moe_em;
    for (std::size_t k = 0; k < p; ++k)
        ens.experts.push_back(build_model(expert_specs[k], derive_seed(cfg.seed, k)));
    ens.gate = build_model(gate_spec, derive_seed(cfg.seed, 1000));

    Tensor resp(n, p);
    std::uint64_t reinit_counter = 0;

    for (std::size_t round = 0; round < cfg.rounds; ++round) {
        // E-step: r_ik proportional to gate_k(x_i) * likelihood_k(x_i, y_i).
        Tensor gate_probs = apply_final_map(forward(ens.gate, data.inputs), FinalMap::softmax);
        std::vector<std::vector<double>> lik(p);
        for (std::size_t k = 0; k < p; ++k) lik[k] = true_class_probabilities(ens.experts[k], data);
        for (std::size_t i = 0; i < n; ++i) {
            double sum = 0.0;
            for (std::size_t k = 0; k < p; ++k) {
                resp(i, k) = gate_probs(i, k) * lik[k][i] + 1e-12;
                sum += resp(i, k);
            }
            for (std::size_t k = 0; k < p; ++k) resp(i, k) /= sum;
        }

        // A collapsed column means the expert lost every sample.
        for (std::size_t k = 0; k < p; ++k) {
            double col = 0.0;
            for (std::size_t i = 0; i < n; ++i) col += resp(i, k);
            if (col < 1e-8 * static_cast<double>(n)) {
                ens.experts[k] = build_model(
                    expert_specs[k], derive_seed(cfg.seed, 2000 + reinit_counter++));
                for (std::size_t i = 0; i < n; ++i) resp(i, k) = 1.0 / static_cast<double>(p);
                if (events) events->push_back({round, k, "reinitialized degenerate expert"});
            }
        }

        // M-step: responsibility-weighted expert updates.
        for (std::size_t k = 0; k < p; ++k) {
            SampleWeights w;
            w.values.resize(n);
            for (std::size_t i = 0; i < n; ++i) w.values[i] = resp(i, k) + 1e-12;
            w.normalize_mean_one();
            TrainConfig tc = cfg.expert_train;
            tc.max_epochs = cfg.inner_epochs;
            tc.convergence_loss = 0.0;  // run the full inner budget
            tc.patience.reset();
            tc.seed = derive_seed(cfg.seed, 3000 + round * p + k);
            OptimizerState opt;
            for (std::size_t e = 0; e < tc.max_epochs; ++e)
                train_epoch(ens.experts[k], data, tc, opt, e, &w.values);
        }

        // Gate trains on the responsibilities as soft targets.
        TrainConfig gc = cfg.gate_train;
        gc.constraint.reset();
        gc.seed = derive_seed(cfg.seed, 4000 + round);
        fit_soft(ens.gate, data.inputs, resp, cfg.gate_epochs, gc);
    }
    return ens;
}

BoostResult boost_fit(const ModelSpec& expert_spec, const Dataset& data,
                      const BoostConfig& cfg) {
    if (cfg.n_experts < 1) throw std::invalid_argument("boost_fit: need at least one expert");
    if (!cfg.expert_train.constraint)
        throw std::invalid_argument("boost_fit: expert_train must carry an IOC constraint");

    const std::size_t n = data.size();
    BoostResult out;
    out.final_weights.values.assign(n, 1.0);

    for (std::size_t t = 0; t < cfg.n_experts; ++t) {
        Model expert = build_model(expert_spec, derive_seed(cfg.seed, t));
        TrainConfig tc = cfg.expert_train;
        tc.seed = derive_seed(cfg.seed, 100 + t);
        OptimizerState opt;
        for (std::size_t e = 0; e < tc.max_epochs; ++e)
            train_epoch(expert, data, tc, opt, e, &out.final_weights.values);
        out.experts.push_back(expert);

        if (t + 1 == cfg.n_experts) break;  // weights after the last expert stay as used

        std::vector<int> pred = predict_labels(expert, data.inputs);
        double weighted_err = 0.0, weight_sum = 0.0;
        for (std::size_t i = 0; i < n; ++i) {
            weight_sum += out.final_weights.values[i];
            if (pred[i] != data.labels[i]) weighted_err += out.final_weights.values[i];
        }
        weighted_err /= weight_sum;

        if (weighted_err >= 0.5) {
            out.final_weights.values.assign(n, 1.0);
            out.events.push_back("expert " + std::to_string(t) +
                                 " weighted error >= 0.5; weights reset to uniform");
            continue;
        }
        const double err = std::max(weighted_err, 1e-10);
        const double beta = std::log((1.0 - err) / err);
        for (std::size_t i = 0; i < n; ++i)
            if (pred[i] != data.labels[i]) out.final_weights.values[i] *= std::exp(beta);
        out.final_weights.normalize_mean_one();
    }
    out.final_weights.validate();
    return out;
}

Model gate_fit(const std::vector<Model>& frozen_experts, const ModelSpec& gate_spec,
               const Dataset& data, const TrainConfig& config) {
    const std::size_t p = frozen_experts.size();
    check_gate_spec(gate_spec, p);
    const std::size_t n = data.size();

    // Target: the expert that is correct with highest confidence, falling
    // back to highest true-class probability when all are wrong.
    std::vector<std::vector<int>> preds(p);
    std::vector<std::vector<double>> true_prob(p);
    for (std::size_t k = 0; k < p; ++k) {
        preds[k] = predict_labels(frozen_experts[k], data.inputs);
        true_prob[k] = true_class_probabilities(frozen_experts[k], data);
    }
    Dataset gate_data = data;
    gate_data.num_classes = static_cast<int>(p);
    for (std::size_t i = 0; i < n; ++i) {
        int best = -1;
        double best_conf = -1.0;
        for (std::size_t k = 0; k < p; ++k) {
            if (preds[k][i] != data.labels[i]) continue;
            if (true_prob[k][i] > best_conf) {
                best_conf = true_prob[k][i];
                best = static_cast<int>(k);
            }
        }
        if (best < 0) {
            for (std::size_t k = 0; k < p; ++k)
                if (true_prob[k][i] > best_conf) {
                    best_conf = true_prob[k][i];
                    best = static_cast<int>(k);
                }
        }
        gate_data.labels[i] = best;
    }

    Model gate = build_model(gate_spec, derive_seed(config.seed, 5000));
    TrainConfig gc = config;
    gc.constraint.reset();
    gc.patience.reset();
    OptimizerState opt;
    for (std::size_t e = 0; e < gc.max_epochs; ++e) train_epoch(gate, gate_data, gc, opt, e);
    return gate;
}

Tensor gate_weights(const Ensemble& ensemble, const Tensor& inputs) {
    if (ensemble.expert_count() == 1) {
        Tensor w(inputs.rows(), 1, 1.0);
        return w;
    }
    return apply_final_map(forward(ensemble.gate, inputs), FinalMap::softmax);
}

std::vector<int> ensemble_predict_batch(const Ensemble& ensemble, const Tensor& inputs) {
    if (ensemble.mode == EnsembleMode::boosted_oracle)
        throw std::invalid_argument(
            "boosted_oracle has no per-sample prediction; use oracle_accuracy");
    const std::size_t p = ensemble.expert_count();
    const std::size_t n = inputs.rows();
    Tensor weights = gate_weights(ensemble, inputs);

    Tensor mix;
    for (std::size_t k = 0; k < p; ++k) {
        const Model& ex = ensemble.experts[k];
        Tensor probs = class_probabilities(ex, forward(ex, inputs));
        if (k == 0) mix = Tensor(n, probs.cols());
        for (std::size_t i = 0; i < n; ++i)
            for (std::size_t c = 0; c < probs.cols(); ++c)
                mix(i, c) += weights(i, k) * probs(i, c);
    }
    std::vector<int> out(n);
    for (std::size_t i = 0; i < n; ++i) out[i] = static_cast<int>(argmax_row(mix, i));
    return out;
}

EnsemblePrediction ensemble_predict(const Ensemble& ensemble, const std::vector<double>& x) {
    Tensor one(1, x.size());
    for (std::size_t j = 0; j < x.size(); ++j) one(0, j) = x[j];
    std::vector<int> lab = ensemble_predict_batch(ensemble, one);
    Tensor w = gate_weights(ensemble, one);
    EnsemblePrediction out;
    out.label = lab[0];
    out.gate_weights.assign(w.row_ptr(0), w.row_ptr(0) + w.cols());
    return out;
}

double ensemble_accuracy(const Ensemble& ensemble, const Dataset& data) {
    return accuracy(ensemble_predict_batch(ensemble, data.inputs), data.labels);
}

double oracle_accuracy(const std::vector<Model>& experts, const Dataset& data) {
    if (experts.empty()) throw std::invalid_argument("oracle_accuracy: need at least one expert");
    std::vector<bool> any_correct(data.size(), false);
    for (const Model& ex : experts) {
        std::vector<int> pred = predict_labels(ex, data.inputs);
        for (std::size_t i = 0; i < data.size(); ++i)
            if (pred[i] == data.labels[i]) any_correct[i] = true;
    }
    std::size_t hits = 0;
    for (bool b : any_correct)
        if (b) ++hits;
    return static_cast<double>(hits) / static_cast<double>(data.size());
}

double single_model_accuracy(const Model& model, const Dataset& data) {
    return accuracy(predict_labels(model, data.inputs), data.labels);
}

void save_ensemble(const Ensemble& ensemble, const std::string& dir) {
    fs::create_directories(dir);
    json manifest;
    manifest["mode"] = ensemble_mode_name(ensemble.mode);
    manifest["experts"] = ensemble.expert_count();
    json files = json::array();
    for (std::size_t k = 0; k < ensemble.expert_count(); ++k) {
        std::string name = "expert_" + std::to_string(k) + ".iocnn";
        save_model(ensemble.experts[k], dir + "/" + name);
        files.push_back(name);
    }
    manifest["expert_files"] = files;
    manifest["gate_file"] = "gate.iocnn";
    save_model(ensemble.gate, dir + "/gate.iocnn");
    std::ofstream out(dir + "/manifest.json", std::ios::binary);
    if (!out) throw std::runtime_error("cannot open for writing: " + dir + "/manifest.json");
    out << manifest.dump(2) << '\n';
}

Ensemble load_ensemble(const std::string& dir) {
    std::ifstream in(dir + "/manifest.json", std::ios::binary);
    if (!in) throw std::runtime_error("cannot open: " + dir + "/manifest.json");
    json manifest = json::parse(in);
    Ensemble ens;
    const std::string mode = manifest.at("mode").get<std::string>();
    if (mode == "moe_em") ens.mode = EnsembleMode::moe_em;
    else if (mode == "boosted_gated") ens.mode = EnsembleMode::boosted_gated;
    else if (mode == "boosted_oracle") ens.mode = EnsembleMode::boosted_oracle;
    else throw std::runtime_error("unknown ensemble mode: " + mode);
    for (const json& f : manifest.at("expert_files"))
        ens.experts.push_back(load_model(dir + "/" + f.get<std::string>()).model);
    ens.gate = load_model(dir + "/" + manifest.at("gate_file").get<std::string>()).model;
    if (ens.gate.spec.num_outputs != ens.expert_count())
        throw std::runtime_error("ensemble manifest inconsistent: gate outputs != expert count");
    return ens;
}

}  // namespace iocnn
