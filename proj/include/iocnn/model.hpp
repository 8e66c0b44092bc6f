#pragma once

#include <cstdint>
#include <optional>
#include <string>
#include <vector>

#include "iocnn/tensor.hpp"

namespace iocnn {

enum class LayerKind { dense, conv2d, maxpool, batchnorm, activation, skip_add };
enum class ActivationKind { relu, elu, leaky_relu, sigmoid, identity };
enum class FinalMap { none, softmax, sigmoid };

const char* kind_name(LayerKind k);
const char* activation_name(ActivationKind a);
const char* final_map_name(FinalMap f);

// skip_add source index meaning "the network input".
inline constexpr int kInputSource = -1;

struct LayerSpec {
    LayerKind kind = LayerKind::dense;
    std::size_t width = 0;      // dense
    std::size_t filters = 0;    // conv2d
    std::size_t kernel = 0;     // conv2d / maxpool
    std::size_t stride = 0;     // conv2d (default 1) / maxpool (default kernel)
    ActivationKind activation = ActivationKind::identity;
    int skip_source = kInputSource;  // skip_add: earlier layer index or kInputSource

    static LayerSpec dense(std::size_t width);
    static LayerSpec conv2d(std::size_t filters, std::size_t kernel, std::size_t stride = 1);
    static LayerSpec maxpool(std::size_t kernel, std::size_t stride = 0);
    static LayerSpec batchnorm();
    static LayerSpec act(ActivationKind a);
    static LayerSpec skip_add(int source);
};

struct ModelSpec {
    std::vector<LayerSpec> layers;
    Shape input_shape;
    std::size_t num_outputs = 0;
    FinalMap final_map = FinalMap::none;
};

// Validates the spec and returns per-layer output shapes.
// Throws std::invalid_argument naming the offending layer.
std::vector<Shape> layer_output_shapes(const ModelSpec& spec);

// Per-layer parameter tensors. Unused fields stay empty.
// Dense:  W [width x fan_in], b [1 x width].
// Conv:   W [filters x C*k*k], b [1 x filters].
// Batchnorm: gamma/beta/running_mean/running_var [1 x features].
struct LayerParams {
    Tensor W, b;
    Tensor gamma, beta, running_mean, running_var;
};

struct Model {
    ModelSpec spec;
    std::vector<LayerParams> params;     // parallel to spec.layers
    std::vector<Shape> out_shapes;       // parallel to spec.layers
    std::vector<int> weight_ordinal;     // 1-based ordinal of dense/conv layers, 0 otherwise

    std::size_t num_outputs() const { return spec.num_outputs; }
    // Effective class count: a single-output sigmoid head is a binary classifier.
    std::size_t num_classes() const { return spec.num_outputs == 1 ? 2 : spec.num_outputs; }
};

struct Batch {
    Tensor inputs;                   // [n x flat(input_shape)]
    std::vector<int> labels;         // class ids, in [0, num_classes)
    std::optional<Tensor> one_hot;   // [n x num_outputs], rows sum to 1

    std::size_t size() const { return inputs.rows(); }
};

// Initializes parameters deterministically from the seed.
// First dense/conv layer: He fan-in Gaussian. Later dense/conv layers:
// |Gaussian| so the fresh model already satisfies the sign constraints.
// Batchnorm: gamma 1, beta 0, running stats (0, 1).
Model build_model(const ModelSpec& spec, std::uint64_t init_seed);

// Flat view over a model's trainable tensors, in a fixed traversal order.
struct ParamRef {
    std::size_t layer;       // index into spec.layers
    const char* name;        // "W", "b", "gamma", "beta"
    Tensor* tensor;
};
std::vector<ParamRef> trainable_params(Model& model);

std::size_t parameter_count(const Model& model);

// True if every parameter tensor of both models is bit-identical.
bool params_equal(const Model& a, const Model& b);

}  // namespace iocnn
