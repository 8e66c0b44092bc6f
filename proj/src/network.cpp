#include "iocnn/network.hpp"

#include <cmath>
#include <string>

namespace iocnn {

namespace {

constexpr double kBnEps = 1e-5;        // variance floor
constexpr double kBnMomentum = 0.9;    // running = 0.9*running + 0.1*batch
constexpr double kLeakySlope = 0.01;

[[noreturn]] void numeric_fail(std::size_t layer, LayerKind kind) {
    throw NumericError("numeric failure: non-finite activation in layer " +
                       std::to_string(layer) + " (" + kind_name(kind) + ")");
}

void check_finite(const Tensor& t, std::size_t layer, LayerKind kind) {
    for (std::size_t i = 0; i < t.size(); ++i)
        if (!std::isfinite(t[i])) numeric_fail(layer, kind);
}

struct BnLayout {
    std::size_t features;   // stat groups
    std::size_t spatial;    // elements per (sample, feature)
};

BnLayout bn_layout(const Shape& in) {
    if (in.rank() == 3) return {in.dims[0], in.dims[1] * in.dims[2]};
    return {in.numel(), 1};
}

}  // namespace

double activation_value(ActivationKind a, double x) {
    switch (a) {
        case ActivationKind::relu: return x > 0.0 ? x : 0.0;
        case ActivationKind::elu: return x >= 0.0 ? x : std::expm1(x);
        case ActivationKind::leaky_relu: return x >= 0.0 ? x : kLeakySlope * x;
        case ActivationKind::sigmoid: return sigmoid(x);
        case ActivationKind::identity: return x;
    }
    return x;
}

double activation_grad(ActivationKind a, double x) {
    switch (a) {
        case ActivationKind::relu: return x > 0.0 ? 1.0 : 0.0;
        case ActivationKind::elu: return x >= 0.0 ? 1.0 : std::exp(x);
        case ActivationKind::leaky_relu: return x >= 0.0 ? 1.0 : kLeakySlope;
        case ActivationKind::sigmoid: {
            double s = sigmoid(x);
            return s * (1.0 - s);
        }
        case ActivationKind::identity: return 1.0;
    }
    return 1.0;
}

double sigmoid(double x) {
    if (x >= 0.0) return 1.0 / (1.0 + std::exp(-x));
    double e = std::exp(x);
    return e / (1.0 + e);
}

Gradients zero_gradients(const Model& model) {
    Gradients g;
    g.layers.resize(model.params.size());
    for (std::size_t i = 0; i < model.params.size(); ++i) {
        const LayerParams& p = model.params[i];
        LayerParams& q = g.layers[i];
        if (!p.W.empty()) {
            q.W = Tensor(p.W.rows(), p.W.cols());
            q.b = Tensor(p.b.rows(), p.b.cols());
        }
        if (!p.gamma.empty()) {
            q.gamma = Tensor(p.gamma.rows(), p.gamma.cols());
            q.beta = Tensor(p.beta.rows(), p.beta.cols());
        }
    }
    return g;
}

namespace {

// Shared forward walk. `mutable_model` is non-null only for train mode so
// batchnorm running statistics can be updated.
Tensor forward_impl(const Model& model, Model* mutable_model, const Tensor& inputs, Mode mode,
                    ForwardCache* cache) {
    const std::size_t flat_in = model.spec.input_shape.numel();
    if (inputs.cols() != flat_in)
        throw std::invalid_argument("forward: batch has " + std::to_string(inputs.cols()) +
                                    " columns, model input is " + model.spec.input_shape.str());
    const std::size_t n = inputs.rows();
    const bool train = mode == Mode::train;
    const std::size_t L = model.spec.layers.size();

    ForwardCache local;
    ForwardCache& c = cache ? *cache : local;
    c = ForwardCache{};
    c.train_mode = train;
    c.n = n;
    c.input_cols = flat_in;
    c.input = inputs;
    c.outputs.resize(L);
    c.pool_idx.resize(L);
    c.bn_xhat.resize(L);
    c.bn_inv_std.resize(L);
    c.bn_mean.resize(L);

    Shape cur_shape = model.spec.input_shape;
    const Tensor* cur = &inputs;

    for (std::size_t li = 0; li < L; ++li) {
        const LayerSpec& l = model.spec.layers[li];
        const LayerParams& p = model.params[li];
        const Shape& out_shape = model.out_shapes[li];
        Tensor out(n, out_shape.numel());

        switch (l.kind) {
            case LayerKind::dense: {
                const std::size_t d = cur->cols(), w = l.width;
                for (std::size_t i = 0; i < n; ++i) {
                    const double* x = cur->row_ptr(i);
                    double* y = out.row_ptr(i);
                    for (std::size_t j = 0; j < w; ++j) {
                        const double* wr = p.W.row_ptr(j);
                        double acc = p.b[j];
                        for (std::size_t k = 0; k < d; ++k) acc += wr[k] * x[k];
                        y[j] = acc;
                    }
                }
                break;
            }
            case LayerKind::conv2d: {
                const std::size_t stride = l.stride == 0 ? 1 : l.stride;
                const std::size_t C = cur_shape.dims[0], H = cur_shape.dims[1],
                                  W = cur_shape.dims[2];
                const std::size_t F = out_shape.dims[0], Ho = out_shape.dims[1],
                                  Wo = out_shape.dims[2];
                const std::size_t k = l.kernel;
                for (std::size_t i = 0; i < n; ++i) {
                    const double* x = cur->row_ptr(i);
                    double* y = out.row_ptr(i);
                    for (std::size_t f = 0; f < F; ++f) {
                        const double* wf = p.W.row_ptr(f);
                        for (std::size_t oh = 0; oh < Ho; ++oh)
                            for (std::size_t ow = 0; ow < Wo; ++ow) {
                                double acc = p.b[f];
                                for (std::size_t ci = 0; ci < C; ++ci)
                                    for (std::size_t kh = 0; kh < k; ++kh) {
                                        const double* xr =
                                            x + ci * H * W + (oh * stride + kh) * W + ow * stride;
                                        const double* wr = wf + ci * k * k + kh * k;
                                        for (std::size_t kw = 0; kw < k; ++kw)
                                            acc += wr[kw] * xr[kw];
                                    }
                                y[(f * Ho + oh) * Wo + ow] = acc;
                            }
                    }
                }
                break;
            }
            case LayerKind::maxpool: {
                const std::size_t stride = l.stride == 0 ? l.kernel : l.stride;
                const std::size_t C = cur_shape.dims[0], H = cur_shape.dims[1],
                                  W = cur_shape.dims[2];
                const std::size_t Ho = out_shape.dims[1], Wo = out_shape.dims[2];
                const std::size_t k = l.kernel;
                std::vector<std::size_t>& idx = c.pool_idx[li];
                idx.assign(n * out.cols(), 0);
                for (std::size_t i = 0; i < n; ++i) {
                    const double* x = cur->row_ptr(i);
                    double* y = out.row_ptr(i);
                    for (std::size_t ci = 0; ci < C; ++ci)
                        for (std::size_t oh = 0; oh < Ho; ++oh)
                            for (std::size_t ow = 0; ow < Wo; ++ow) {
                                std::size_t best = ci * H * W + oh * stride * W + ow * stride;
                                double m = x[best];
                                for (std::size_t kh = 0; kh < k; ++kh)
                                    for (std::size_t kw = 0; kw < k; ++kw) {
                                        std::size_t off = ci * H * W +
                                                          (oh * stride + kh) * W +
                                                          (ow * stride + kw);
                                        if (x[off] > m) {
                                            m = x[off];
                                            best = off;
                                        }
                                    }
                                std::size_t o = (ci * Ho + oh) * Wo + ow;
                                y[o] = m;
                                idx[i * out.cols() + o] = best;
                            }
                }
                break;
            }
            case LayerKind::batchnorm: {
                BnLayout lay = bn_layout(cur_shape);
                const std::size_t S = lay.spatial, Fd = lay.features;
                if (train) {
                    const double m_count = static_cast<double>(n * S);
                    std::vector<double> mean(Fd, 0.0), var(Fd, 0.0), inv_std(Fd, 0.0);
                    for (std::size_t f = 0; f < Fd; ++f) {
                        double s = 0.0;
                        for (std::size_t i = 0; i < n; ++i) {
                            const double* x = cur->row_ptr(i) + f * S;
                            for (std::size_t e = 0; e < S; ++e) s += x[e];
                        }
                        mean[f] = s / m_count;
                        double v = 0.0;
                        for (std::size_t i = 0; i < n; ++i) {
                            const double* x = cur->row_ptr(i) + f * S;
                            for (std::size_t e = 0; e < S; ++e) {
                                double d = x[e] - mean[f];
                                v += d * d;
                            }
                        }
                        var[f] = v / m_count;
                        inv_std[f] = 1.0 / std::sqrt(var[f] + kBnEps);
                    }
                    Tensor xhat(n, out.cols());
                    for (std::size_t i = 0; i < n; ++i) {
                        const double* x = cur->row_ptr(i);
                        double* xh = xhat.row_ptr(i);
                        double* y = out.row_ptr(i);
                        for (std::size_t f = 0; f < Fd; ++f)
                            for (std::size_t e = 0; e < S; ++e) {
                                std::size_t o = f * S + e;
                                xh[o] = (x[o] - mean[f]) * inv_std[f];
                                y[o] = p.gamma[f] * xh[o] + p.beta[f];
                            }
                    }
                    c.bn_xhat[li] = std::move(xhat);
                    c.bn_inv_std[li] = inv_std;
                    c.bn_mean[li] = mean;
                    if (mutable_model) {
                        LayerParams& mp = mutable_model->params[li];
                        for (std::size_t f = 0; f < Fd; ++f) {
                            mp.running_mean[f] =
                                kBnMomentum * mp.running_mean[f] + (1.0 - kBnMomentum) * mean[f];
                            mp.running_var[f] =
                                kBnMomentum * mp.running_var[f] + (1.0 - kBnMomentum) * var[f];
                        }
                    }
                } else {
                    for (std::size_t i = 0; i < n; ++i) {
                        const double* x = cur->row_ptr(i);
                        double* y = out.row_ptr(i);
                        for (std::size_t f = 0; f < Fd; ++f) {
                            double inv = 1.0 / std::sqrt(p.running_var[f] + kBnEps);
                            for (std::size_t e = 0; e < S; ++e) {
                                std::size_t o = f * S + e;
                                y[o] = p.gamma[f] * (x[o] - p.running_mean[f]) * inv + p.beta[f];
                            }
                        }
                    }
                }
                break;
            }
            case LayerKind::activation: {
                for (std::size_t i = 0; i < out.size(); ++i)
                    out[i] = activation_value(l.activation, (*cur)[i]);
                break;
            }
            case LayerKind::skip_add: {
                const Tensor& src =
                    l.skip_source == kInputSource ? inputs : c.outputs[l.skip_source];
                for (std::size_t i = 0; i < out.size(); ++i) out[i] = (*cur)[i] + src[i];
                break;
            }
        }

        check_finite(out, li, l.kind);
        c.outputs[li] = std::move(out);
        cur = &c.outputs[li];
        cur_shape = out_shape;
    }
    return c.outputs.back();
}

}  // namespace

Tensor forward(Model& model, const Tensor& inputs, Mode mode, ForwardCache* cache) {
    return forward_impl(model, mode == Mode::train ? &model : nullptr, inputs, mode, cache);
}

Tensor forward(const Model& model, const Tensor& inputs, ForwardCache* cache) {
    return forward_impl(model, nullptr, inputs, Mode::infer, cache);
}

Tensor forward(Model& model, const Batch& batch, Mode mode, ForwardCache* cache) {
    const int classes = static_cast<int>(model.num_classes());
    if (batch.labels.size() != batch.inputs.rows())
        throw std::invalid_argument("batch: label count does not match inputs");
    for (int y : batch.labels)
        if (y < 0 || y >= classes)
            throw std::invalid_argument("batch: label " + std::to_string(y) +
                                        " outside [0, " + std::to_string(classes) + ")");
    if (batch.one_hot) {
        if (batch.one_hot->rows() != batch.inputs.rows() ||
            batch.one_hot->cols() != model.spec.num_outputs)
            throw std::invalid_argument("batch: one_hot shape mismatch");
        for (std::size_t i = 0; i < batch.one_hot->rows(); ++i) {
            double sum = 0.0;
            for (std::size_t c = 0; c < batch.one_hot->cols(); ++c)
                sum += (*batch.one_hot)(i, c);
            if (std::fabs(sum - 1.0) > 1e-9)
                throw std::invalid_argument("batch: one_hot row does not sum to 1");
        }
    }
    return forward(model, batch.inputs, mode, cache);
}

Tensor apply_final_map(const Tensor& logits, FinalMap map) {
    Tensor out = logits;
    switch (map) {
        case FinalMap::none: break;
        case FinalMap::sigmoid:
            for (std::size_t i = 0; i < out.size(); ++i) out[i] = sigmoid(out[i]);
            break;
        case FinalMap::softmax:
            for (std::size_t r = 0; r < out.rows(); ++r) {
                double* y = out.row_ptr(r);
                double m = y[0];
                for (std::size_t c = 1; c < out.cols(); ++c) m = std::max(m, y[c]);
                double sum = 0.0;
                for (std::size_t c = 0; c < out.cols(); ++c) {
                    y[c] = std::exp(y[c] - m);
                    sum += y[c];
                }
                for (std::size_t c = 0; c < out.cols(); ++c) y[c] /= sum;
            }
            break;
    }
    return out;
}

Gradients backward(const Model& model, const ForwardCache& cache, const Tensor& d_logits) {
    const std::size_t L = model.spec.layers.size();
    if (cache.outputs.size() != L || cache.input_cols != model.spec.input_shape.numel())
        throw std::invalid_argument("backward: cache does not match model");
    for (std::size_t i = 0; i < L; ++i)
        if (cache.outputs[i].cols() != model.out_shapes[i].numel())
            throw std::invalid_argument("backward: cache does not match model");
    if (!d_logits.same_shape(cache.outputs.back()))
        throw std::invalid_argument("backward: d_logits shape mismatch");

    const std::size_t n = cache.n;
    Gradients g = zero_gradients(model);

    // d_node[0] is the gradient w.r.t. the network input, d_node[i+1] w.r.t.
    // the output of layer i. Skip connections accumulate into their source.
    std::vector<Tensor> d_node(L + 1);
    for (std::size_t i = 0; i < L; ++i)
        d_node[i + 1] = Tensor(n, cache.outputs[i].cols());
    d_node[0] = Tensor(n, cache.input_cols);
    d_node[L] = d_logits;

    Shape in_shape;
    for (std::size_t li_ = L; li_-- > 0;) {
        const std::size_t li = li_;
        const LayerSpec& l = model.spec.layers[li];
        const LayerParams& p = model.params[li];
        const Tensor& in = li == 0 ? cache.input : cache.outputs[li - 1];
        in_shape = li == 0 ? model.spec.input_shape : model.out_shapes[li - 1];
        const Tensor& dout = d_node[li + 1];
        Tensor& din = d_node[li];

        switch (l.kind) {
            case LayerKind::dense: {
                const std::size_t d = in.cols(), w = l.width;
                LayerParams& q = g.layers[li];
                for (std::size_t i = 0; i < n; ++i) {
                    const double* x = in.row_ptr(i);
                    const double* dy = dout.row_ptr(i);
                    double* dx = din.row_ptr(i);
                    for (std::size_t j = 0; j < w; ++j) {
                        const double dyj = dy[j];
                        if (dyj == 0.0) continue;
                        q.b[j] += dyj;
                        double* dwr = q.W.row_ptr(j);
                        const double* wr = p.W.row_ptr(j);
                        for (std::size_t k = 0; k < d; ++k) {
                            dwr[k] += dyj * x[k];
                            dx[k] += dyj * wr[k];
                        }
                    }
                }
                break;
            }
            case LayerKind::conv2d: {
                const std::size_t stride = l.stride == 0 ? 1 : l.stride;
                const std::size_t C = in_shape.dims[0], H = in_shape.dims[1],
                                  W = in_shape.dims[2];
                const Shape& osh = model.out_shapes[li];
                const std::size_t F = osh.dims[0], Ho = osh.dims[1], Wo = osh.dims[2];
                const std::size_t k = l.kernel;
                LayerParams& q = g.layers[li];
                for (std::size_t i = 0; i < n; ++i) {
                    const double* x = in.row_ptr(i);
                    const double* dy = dout.row_ptr(i);
                    double* dx = din.row_ptr(i);
                    for (std::size_t f = 0; f < F; ++f) {
                        const double* wf = p.W.row_ptr(f);
                        double* dwf = q.W.row_ptr(f);
                        for (std::size_t oh = 0; oh < Ho; ++oh)
                            for (std::size_t ow = 0; ow < Wo; ++ow) {
                                const double dyv = dy[(f * Ho + oh) * Wo + ow];
                                if (dyv == 0.0) continue;
                                q.b[f] += dyv;
                                for (std::size_t ci = 0; ci < C; ++ci)
                                    for (std::size_t kh = 0; kh < k; ++kh) {
                                        std::size_t xoff = ci * H * W +
                                                           (oh * stride + kh) * W + ow * stride;
                                        std::size_t woff = ci * k * k + kh * k;
                                        for (std::size_t kw = 0; kw < k; ++kw) {
                                            dwf[woff + kw] += dyv * x[xoff + kw];
                                            dx[xoff + kw] += dyv * wf[woff + kw];
                                        }
                                    }
                            }
                    }
                }
                break;
            }
            case LayerKind::maxpool: {
                const std::vector<std::size_t>& idx = cache.pool_idx[li];
                const std::size_t oc = dout.cols();
                for (std::size_t i = 0; i < n; ++i) {
                    const double* dy = dout.row_ptr(i);
                    double* dx = din.row_ptr(i);
                    for (std::size_t o = 0; o < oc; ++o) dx[idx[i * oc + o]] += dy[o];
                }
                break;
            }
            case LayerKind::batchnorm: {
                if (!cache.train_mode)
                    throw std::invalid_argument(
                        "backward: batchnorm requires a train-mode cache");
                BnLayout lay = bn_layout(in_shape);
                const std::size_t S = lay.spatial, Fd = lay.features;
                const double m_count = static_cast<double>(n * S);
                const Tensor& xhat = cache.bn_xhat[li];
                const std::vector<double>& inv_std = cache.bn_inv_std[li];
                LayerParams& q = g.layers[li];
                for (std::size_t f = 0; f < Fd; ++f) {
                    double dgamma = 0.0, dbeta = 0.0, dxhat_sum = 0.0, dxhat_dot = 0.0;
                    for (std::size_t i = 0; i < n; ++i) {
                        const double* dy = dout.row_ptr(i) + f * S;
                        const double* xh = xhat.row_ptr(i) + f * S;
                        for (std::size_t e = 0; e < S; ++e) {
                            dgamma += dy[e] * xh[e];
                            dbeta += dy[e];
                            double dxh = dy[e] * p.gamma[f];
                            dxhat_sum += dxh;
                            dxhat_dot += dxh * xh[e];
                        }
                    }
                    q.gamma[f] += dgamma;
                    q.beta[f] += dbeta;
                    for (std::size_t i = 0; i < n; ++i) {
                        const double* dy = dout.row_ptr(i) + f * S;
                        const double* xh = xhat.row_ptr(i) + f * S;
                        double* dx = din.row_ptr(i) + f * S;
                        for (std::size_t e = 0; e < S; ++e) {
                            double dxh = dy[e] * p.gamma[f];
                            dx[e] += inv_std[f] *
                                     (dxh - dxhat_sum / m_count - xh[e] * dxhat_dot / m_count);
                        }
                    }
                }
                break;
            }
            case LayerKind::activation: {
                for (std::size_t i = 0; i < din.size(); ++i)
                    din[i] += dout[i] * activation_grad(l.activation, in[i]);
                break;
            }
            case LayerKind::skip_add: {
                for (std::size_t i = 0; i < din.size(); ++i) din[i] += dout[i];
                Tensor& dsrc = d_node[l.skip_source + 1];
                for (std::size_t i = 0; i < dsrc.size(); ++i) dsrc[i] += dout[i];
                break;
            }
        }
    }
    return g;
}

std::size_t argmax_row(const Tensor& t, std::size_t row) {
    const double* p = t.row_ptr(row);
    std::size_t best = 0;
    for (std::size_t c = 1; c < t.cols(); ++c)
        if (p[c] > p[best]) best = c;
    return best;
}

std::vector<int> labels_from_logits(const Tensor& logits) {
    std::vector<int> out(logits.rows());
    if (logits.cols() == 1) {
        for (std::size_t i = 0; i < logits.rows(); ++i) out[i] = logits(i, 0) >= 0.0 ? 1 : 0;
    } else {
        for (std::size_t i = 0; i < logits.rows(); ++i)
            out[i] = static_cast<int>(argmax_row(logits, i));
    }
    return out;
}

std::vector<int> predict_labels(const Model& model, const Tensor& inputs) {
    return labels_from_logits(forward(model, inputs));
}

Tensor class_probabilities(const Model& model, const Tensor& logits) {
    if (model.spec.num_outputs == 1) {
        Tensor probs(logits.rows(), 2);
        for (std::size_t i = 0; i < logits.rows(); ++i) {
            double p = sigmoid(logits(i, 0));
            probs(i, 0) = 1.0 - p;
            probs(i, 1) = p;
        }
        return probs;
    }
    return apply_final_map(logits, model.spec.final_map == FinalMap::none
                                       ? FinalMap::softmax
                                       : model.spec.final_map);
}

}  // namespace iocnn
