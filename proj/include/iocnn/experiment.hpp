#pragma once

#include <array>
#include <cstdint>
#include <optional>
#include <string>
#include <vector>

#include "iocnn/constraints.hpp"
#include "iocnn/datasets.hpp"
#include "iocnn/ensemble.hpp"
#include "iocnn/metrics.hpp"
#include "iocnn/train.hpp"
#include "iocnn/verifier.hpp"

namespace iocnn {

enum class ExperimentKind { compare, noise_sweep, moe, boost, verify, calibrate };
const char* experiment_kind_name(ExperimentKind k);

struct DatasetConfig {
    // Either a generator or an IDX file pair.
    std::string generator;            // "disk_ring" | "vshape" | empty
    std::size_t n = 0;
    std::string idx_images, idx_labels;
    std::size_t limit = 0;            // 0 = all samples
    std::optional<std::vector<int>> binarize_positive;  // regroup into 2 classes
};

struct ExperimentConfig {
    int schema_version = 1;
    std::uint64_t seed = 0;
    DatasetConfig dataset;
    bool whiten = false;
    double whiten_floor = 1e-5;
    std::array<double, 3> split_fractions{0.8, 0.1, 0.1};
    ModelSpec model;                  // base (unconstrained) architecture
    ConstraintPolicy constraint;
    TrainConfig train;                // seed field ignored; config seed rules
    std::optional<TrainConfig> ioc_train;  // overrides for the constrained variant

    ExperimentKind kind = ExperimentKind::compare;
    double ioc_widen_factor = 2.0;    // first weight layer widening for the IOC variant
    std::vector<double> noise_fractions{0.2, 0.4, 0.6, 0.8, 1.0};

    // moe / boost
    std::size_t experts = 5;
    std::size_t rounds = 5;
    std::size_t inner_epochs = 20;
    std::optional<ModelSpec> gate;    // default derived from the expert spec

    // verify / calibrate
    std::string model_file;           // verify an existing model instead of training
    std::size_t n_triples = 10000;
    double tolerance = 1e-9;
    std::optional<Box> box;           // default: data bounding box inflated 20%
    std::size_t n_bins = 10;
};

// Strict JSON parsing: unknown keys anywhere are an error.
ExperimentConfig parse_config(const std::string& json_text);
ExperimentConfig load_config(const std::string& path);

// The IOC variant of a base architecture: first weight layer widened and
// relu activations replaced by elu, per the training recipe.
ModelSpec derive_ioc_spec(const ModelSpec& base, double widen_factor);

Dataset build_dataset(const ExperimentConfig& config);

struct CompareResult {
    std::vector<RunReport> reports;
    ConvexityReport ioc_convexity;
};

// Trains unconstrained and IOC variants on identical data/seed, writes
// per-epoch CSVs, the report CSV, loss-curve SVG, model files, and the IOC
// convexity report into out_dir.
CompareResult run_compare(const ExperimentConfig& config, const std::string& out_dir);

// Per fraction: randomize train labels, train both variants, record peak
// (best-val) and convergence rows. Emits the Table-3 shaped CSV and
// accuracy-curve SVGs.
std::vector<RunReport> run_noise_sweep(const ExperimentConfig& config,
                                       const std::string& out_dir);

struct EnsembleRunResult {
    double single_expert_acc;   // k = 1 ensemble
    double gate_acc;            // full ensemble through the gate
    double oracle_acc;
    std::vector<double> acc_by_expert_count;  // k = 1..p
};

EnsembleRunResult run_moe(const ExperimentConfig& config, const std::string& out_dir);
EnsembleRunResult run_boost(const ExperimentConfig& config, const std::string& out_dir);

ConvexityReport run_verify(const ExperimentConfig& config, const std::string& out_dir);

struct CalibrateResult {
    double ece;
    double test_accuracy;
};
CalibrateResult run_calibrate(const ExperimentConfig& config, const std::string& out_dir);

// Dispatch on config.kind; returns a process exit code.
int run_experiment(const ExperimentConfig& config, const std::string& config_path,
                   const std::string& out_dir);

}  // namespace iocnn
