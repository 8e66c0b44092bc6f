#pragma once

#include <cmath>
#include <stdexcept>
#include <vector>

#include "iocnn/model.hpp"

namespace iocnn {

// Raised when a forward pass produces a non-finite activation.
struct NumericError : std::runtime_error {
    using std::runtime_error::runtime_error;
};

enum class Mode { train, infer };

// Activation record from a forward pass; everything backward() needs.
struct ForwardCache {
    bool train_mode = false;
    std::size_t n = 0;
    std::size_t input_cols = 0;
    Tensor input;
    std::vector<Tensor> outputs;                      // per layer, [n x flat]
    std::vector<std::vector<std::size_t>> pool_idx;   // maxpool argmax offsets
    std::vector<Tensor> bn_xhat;                      // train-mode batchnorm
    std::vector<std::vector<double>> bn_inv_std;
    std::vector<std::vector<double>> bn_mean;
};

// Per-parameter gradients, same layout as Model::params.
struct Gradients {
    std::vector<LayerParams> layers;
};

Gradients zero_gradients(const Model& model);

// Scalar activations and their derivatives w.r.t. the preactivation.
double activation_value(ActivationKind a, double x);
double activation_grad(ActivationKind a, double x);

// Numerically stable logistic; exactly 0.5 at x = 0.
double sigmoid(double x);

// Forward pass over a batch [n x flat(input_shape)], returning pre-final_map
// logits [n x num_outputs]. Train mode uses batch statistics in batchnorm
// layers and updates the running stats (hence the non-const overload).
// Throws NumericError naming the layer if an activation goes non-finite.
Tensor forward(Model& model, const Tensor& inputs, Mode mode, ForwardCache* cache = nullptr);

// Infer-mode forward; the model is not mutated.
Tensor forward(const Model& model, const Tensor& inputs, ForwardCache* cache = nullptr);

// Checks the Batch invariants against the model (input width, label range,
// one-hot rows summing to 1) and runs the forward pass on its inputs.
Tensor forward(Model& model, const Batch& batch, Mode mode, ForwardCache* cache = nullptr);

// Applies the configured final map row-wise. Softmax uses max-subtraction;
// the row-wise argmax of the result equals the argmax of the logits.
Tensor apply_final_map(const Tensor& logits, FinalMap map);

// Reverse-mode gradients for every parameter. The cache must come from a
// train-mode forward on this model; mismatches throw.
Gradients backward(const Model& model, const ForwardCache& cache, const Tensor& d_logits);

// Class decisions straight from logits: argmax (first maximum) for
// multi-output heads, sign test for a single-output sigmoid head.
std::vector<int> labels_from_logits(const Tensor& logits);
std::vector<int> predict_labels(const Model& model, const Tensor& inputs);

// Row-wise probabilities over num_classes(); a single-output sigmoid head
// expands to [1-p, p].
Tensor class_probabilities(const Model& model, const Tensor& logits);

std::size_t argmax_row(const Tensor& t, std::size_t row);

}  // namespace iocnn
