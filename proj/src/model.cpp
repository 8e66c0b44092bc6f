#include "iocnn/model.hpp"

#include <cmath>
#include <stdexcept>

#include "iocnn/rng.hpp"

namespace iocnn {

const char* kind_name(LayerKind k) {
    switch (k) {
        case LayerKind::dense: return "dense";
        case LayerKind::conv2d: return "conv2d";
        case LayerKind::maxpool: return "maxpool";
        case LayerKind::batchnorm: return "batchnorm";
        case LayerKind::activation: return "activation";
        case LayerKind::skip_add: return "skip_add";
    }
    return "?";
}

const char* activation_name(ActivationKind a) {
    switch (a) {
        case ActivationKind::relu: return "relu";
        case ActivationKind::elu: return "elu";
        case ActivationKind::leaky_relu: return "leaky_relu";
        case ActivationKind::sigmoid: return "sigmoid";
        case ActivationKind::identity: return "identity";
    }
    return "?";
}

const char* final_map_name(FinalMap f) {
    switch (f) {
        case FinalMap::none: return "none";
        case FinalMap::softmax: return "softmax";
        case FinalMap::sigmoid: return "sigmoid";
    }
    return "?";
}

LayerSpec LayerSpec::dense(std::size_t width) {
    LayerSpec s;
    s.kind = LayerKind::dense;
    s.width = width;
    return s;
}

LayerSpec LayerSpec::conv2d(std::size_t filters, std::size_t kernel, std::size_t stride) {
    LayerSpec s;
    s.kind = LayerKind::conv2d;
    s.filters = filters;
    s.kernel = kernel;
    s.stride = stride;
    return s;
}

LayerSpec LayerSpec::maxpool(std::size_t kernel, std::size_t stride) {
    LayerSpec s;
    s.kind = LayerKind::maxpool;
    s.kernel = kernel;
    s.stride = stride == 0 ? kernel : stride;
    return s;
}

LayerSpec LayerSpec::batchnorm() {
    LayerSpec s;
    s.kind = LayerKind::batchnorm;
    return s;
}

LayerSpec LayerSpec::act(ActivationKind a) {
    LayerSpec s;
    s.kind = LayerKind::activation;
    s.activation = a;
    return s;
}

LayerSpec LayerSpec::skip_add(int source) {
    LayerSpec s;
    s.kind = LayerKind::skip_add;
    s.skip_source = source;
    return s;
}

namespace {

[[noreturn]] void spec_error(std::size_t layer, LayerKind kind, const std::string& msg) {
    throw std::invalid_argument("invalid model spec at layer " + std::to_string(layer) + " (" +
                                kind_name(kind) + "): " + msg);
}

std::size_t bn_feature_count(const Shape& in) {
    // Rank-1 input: per-feature stats. Rank-3 (C,H,W): per-channel stats.
    if (in.rank() == 1) return in.dims[0];
    if (in.rank() == 3) return in.dims[0];
    throw std::invalid_argument("batchnorm needs rank-1 or rank-3 input, got " + in.str());
}

}  // namespace

std::vector<Shape> layer_output_shapes(const ModelSpec& spec) {
    if (spec.layers.empty()) throw std::invalid_argument("invalid model spec: empty layer list");
    if (spec.input_shape.numel() == 0)
        throw std::invalid_argument("invalid model spec: empty input shape");
    if (spec.num_outputs == 0) throw std::invalid_argument("invalid model spec: num_outputs == 0");

    std::vector<Shape> out;
    out.reserve(spec.layers.size());
    Shape cur = spec.input_shape;
    for (std::size_t i = 0; i < spec.layers.size(); ++i) {
        const LayerSpec& l = spec.layers[i];
        switch (l.kind) {
            case LayerKind::dense: {
                if (l.width == 0) spec_error(i, l.kind, "width must be >= 1");
                cur = Shape{l.width};
                break;
            }
            case LayerKind::conv2d: {
                std::size_t stride = l.stride == 0 ? 1 : l.stride;
                if (l.filters == 0 || l.kernel == 0)
                    spec_error(i, l.kind, "filters and kernel must be >= 1");
                if (cur.rank() != 3)
                    spec_error(i, l.kind, "needs rank-3 input (C,H,W), got " + cur.str());
                std::size_t h = cur.dims[1], w = cur.dims[2];
                if (h < l.kernel || w < l.kernel)
                    spec_error(i, l.kind, "kernel " + std::to_string(l.kernel) +
                                              " exceeds input " + cur.str());
                cur = Shape{l.filters, (h - l.kernel) / stride + 1, (w - l.kernel) / stride + 1};
                break;
            }
            case LayerKind::maxpool: {
                std::size_t stride = l.stride == 0 ? l.kernel : l.stride;
                if (l.kernel == 0) spec_error(i, l.kind, "kernel must be >= 1");
                if (cur.rank() != 3)
                    spec_error(i, l.kind, "needs rank-3 input (C,H,W), got " + cur.str());
                std::size_t h = cur.dims[1], w = cur.dims[2];
                if (h < l.kernel || w < l.kernel)
                    spec_error(i, l.kind, "kernel " + std::to_string(l.kernel) +
                                              " exceeds input " + cur.str());
                cur = Shape{cur.dims[0], (h - l.kernel) / stride + 1, (w - l.kernel) / stride + 1};
                break;
            }
            case LayerKind::batchnorm: {
                bn_feature_count(cur);  // validates rank
                break;                  // shape preserved
            }
            case LayerKind::activation: {
                break;  // shape preserved
            }
            case LayerKind::skip_add: {
                if (l.skip_source < kInputSource || l.skip_source >= static_cast<int>(i))
                    spec_error(i, l.kind, "source must reference the input or an earlier layer");
                const Shape& src =
                    l.skip_source == kInputSource ? spec.input_shape : out[l.skip_source];
                if (src.numel() != cur.numel())
                    spec_error(i, l.kind, "source shape " + src.str() +
                                              " incompatible with input shape " + cur.str());
                break;  // shape preserved
            }
        }
        out.push_back(cur);
    }
    if (out.back().numel() != spec.num_outputs)
        throw std::invalid_argument("invalid model spec: final layer produces " +
                                    std::to_string(out.back().numel()) + " values, num_outputs is " +
                                    std::to_string(spec.num_outputs));
    return out;
}

Model build_model(const ModelSpec& spec, std::uint64_t init_seed) {
    Model m;
    m.spec = spec;
    m.out_shapes = layer_output_shapes(spec);
    m.params.resize(spec.layers.size());
    m.weight_ordinal.assign(spec.layers.size(), 0);

    Rng rng(init_seed);
    int ordinal = 0;
    Shape cur = spec.input_shape;
    for (std::size_t i = 0; i < spec.layers.size(); ++i) {
        const LayerSpec& l = spec.layers[i];
        LayerParams& p = m.params[i];
        if (l.kind == LayerKind::dense || l.kind == LayerKind::conv2d) {
            m.weight_ordinal[i] = ++ordinal;
            std::size_t fan_in, rows, cols;
            if (l.kind == LayerKind::dense) {
                fan_in = cur.numel();
                rows = l.width;
                cols = fan_in;
            } else {
                fan_in = cur.dims[0] * l.kernel * l.kernel;
                rows = l.filters;
                cols = fan_in;
            }
            p.W = Tensor(rows, cols);
            double scale = std::sqrt(2.0 / static_cast<double>(fan_in));
            // Layers past the first start non-negative so a fresh model is
            // already input-output convex.
            bool constrained_position = ordinal > 1;
            for (std::size_t k = 0; k < p.W.size(); ++k) {
                double v = rng.normal() * scale;
                p.W[k] = constrained_position ? std::fabs(v) : v;
            }
            p.b = Tensor(1, rows, 0.0);
        } else if (l.kind == LayerKind::batchnorm) {
            std::size_t f = bn_feature_count(cur);
            p.gamma = Tensor(1, f, 1.0);
            p.beta = Tensor(1, f, 0.0);
            p.running_mean = Tensor(1, f, 0.0);
            p.running_var = Tensor(1, f, 1.0);
        }
        cur = m.out_shapes[i];
    }
    return m;
}

std::vector<ParamRef> trainable_params(Model& model) {
    std::vector<ParamRef> refs;
    for (std::size_t i = 0; i < model.params.size(); ++i) {
        LayerParams& p = model.params[i];
        if (!p.W.empty()) {
            refs.push_back({i, "W", &p.W});
            refs.push_back({i, "b", &p.b});
        }
        if (!p.gamma.empty()) {
            refs.push_back({i, "gamma", &p.gamma});
            refs.push_back({i, "beta", &p.beta});
        }
    }
    return refs;
}

std::size_t parameter_count(const Model& model) {
    std::size_t n = 0;
    for (const LayerParams& p : model.params)
        n += p.W.size() + p.b.size() + p.gamma.size() + p.beta.size();
    return n;
}

bool params_equal(const Model& a, const Model& b) {
    if (a.params.size() != b.params.size()) return false;
    for (std::size_t i = 0; i < a.params.size(); ++i) {
        const LayerParams &pa = a.params[i], &pb = b.params[i];
        if (!(pa.W == pb.W && pa.b == pb.b && pa.gamma == pb.gamma && pa.beta == pb.beta &&
              pa.running_mean == pb.running_mean && pa.running_var == pb.running_var))
            return false;
    }
    return true;
}

}  // namespace iocnn
