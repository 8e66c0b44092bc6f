#pragma once

// Shared helpers for the unit and acceptance suites: small model builders,
// a random IOC model zoo, and a finite-difference gradient oracle that stays
// independent of the backward() implementation.

#include <cmath>
#include <cstdint>
#include <filesystem>
#include <string>
#include <vector>

#include "iocnn/datasets.hpp"
#include "iocnn/model.hpp"
#include "iocnn/network.hpp"
#include "iocnn/rng.hpp"
#include "iocnn/train.hpp"

namespace testsupport {

using namespace iocnn;

inline std::filesystem::path temp_dir(const std::string& tag) {
    auto dir = std::filesystem::temp_directory_path() / ("iocnn_" + tag);
    std::filesystem::create_directories(dir);
    return dir;
}

// Plain MLP: dense(h1) act dense(h2) act ... dense(out).
inline ModelSpec mlp_spec(std::size_t in_dim, const std::vector<std::size_t>& hidden,
                          std::size_t out, ActivationKind act = ActivationKind::elu,
                          FinalMap fm = FinalMap::softmax) {
    ModelSpec s;
    s.input_shape = Shape{in_dim};
    s.num_outputs = out;
    s.final_map = fm;
    for (std::size_t h : hidden) {
        s.layers.push_back(LayerSpec::dense(h));
        s.layers.push_back(LayerSpec::act(act));
    }
    s.layers.push_back(LayerSpec::dense(out));
    return s;
}

// A single-dense-layer model with explicit parameters.
inline Model tiny_affine(std::vector<std::vector<double>> w, std::vector<double> b,
                         FinalMap fm = FinalMap::none) {
    ModelSpec s;
    s.input_shape = Shape{w[0].size()};
    s.num_outputs = w.size();
    s.final_map = fm;
    s.layers.push_back(LayerSpec::dense(w.size()));
    Model m = build_model(s, 0);
    for (std::size_t r = 0; r < w.size(); ++r)
        for (std::size_t c = 0; c < w[r].size(); ++c) m.params[0].W(r, c) = w[r][c];
    for (std::size_t r = 0; r < b.size(); ++r) m.params[0].b[r] = b[r];
    return m;
}

// Random architectures satisfying the IOC construction: mixed
// dense/conv/maxpool/batchnorm/skip with ELU or LeakyReLU, non-negative
// weights beyond the first layer. Parameters, biases, and batchnorm running
// stats are randomized (stats kept valid, gamma kept non-negative).
inline Model random_ioc_model(std::uint64_t seed) {
    Rng rng(seed);
    ActivationKind act = rng.uniform() < 0.5 ? ActivationKind::elu : ActivationKind::leaky_relu;
    ModelSpec s;
    const int family = static_cast<int>(rng.uniform_int(4));
    if (family == 0) {  // plain MLP
        std::size_t d = 2 + rng.uniform_int(4);
        std::size_t h = 4 + rng.uniform_int(8);
        std::size_t out = 1 + rng.uniform_int(3);
        s = mlp_spec(d, {h, h}, out, act);
    } else if (family == 1) {  // MLP with batchnorm
        std::size_t d = 2 + rng.uniform_int(4);
        std::size_t h = 4 + rng.uniform_int(8);
        std::size_t out = 1 + rng.uniform_int(3);
        s.input_shape = Shape{d};
        s.num_outputs = out;
        s.layers.push_back(LayerSpec::dense(h));
        s.layers.push_back(LayerSpec::batchnorm());
        s.layers.push_back(LayerSpec::act(act));
        s.layers.push_back(LayerSpec::dense(h));
        s.layers.push_back(LayerSpec::batchnorm());
        s.layers.push_back(LayerSpec::act(act));
        s.layers.push_back(LayerSpec::dense(out));
    } else if (family == 2) {  // MLP with a skip connection
        std::size_t d = 2 + rng.uniform_int(4);
        std::size_t h = 4 + rng.uniform_int(8);
        std::size_t out = 1 + rng.uniform_int(3);
        s.input_shape = Shape{d};
        s.num_outputs = out;
        s.layers.push_back(LayerSpec::dense(h));       // 0
        s.layers.push_back(LayerSpec::act(act));       // 1
        s.layers.push_back(LayerSpec::dense(h));       // 2
        s.layers.push_back(LayerSpec::skip_add(0));    // 3
        s.layers.push_back(LayerSpec::act(act));       // 4
        s.layers.push_back(LayerSpec::dense(out));
    } else {  // small conv net with maxpool
        std::size_t out = 1 + rng.uniform_int(3);
        s.input_shape = Shape{1, 8, 8};
        s.num_outputs = out;
        s.layers.push_back(LayerSpec::conv2d(3, 3));
        s.layers.push_back(LayerSpec::act(act));
        s.layers.push_back(LayerSpec::conv2d(4, 3));
        s.layers.push_back(LayerSpec::act(act));
        s.layers.push_back(LayerSpec::maxpool(2));
        s.layers.push_back(LayerSpec::dense(out));
    }
    s.final_map = s.num_outputs == 1 ? FinalMap::sigmoid : FinalMap::softmax;

    Model m = build_model(s, rng.next_u64());
    for (std::size_t li = 0; li < m.params.size(); ++li) {
        LayerParams& p = m.params[li];
        for (std::size_t i = 0; i < p.b.size(); ++i) p.b[i] = 0.3 * rng.normal();
        if (!p.gamma.empty()) {
            for (std::size_t i = 0; i < p.gamma.size(); ++i) {
                p.gamma[i] = std::fabs(rng.normal()) + 0.1;
                p.beta[i] = 0.3 * rng.normal();
                p.running_mean[i] = rng.normal();
                p.running_var[i] = std::fabs(rng.normal()) + 0.5;
            }
        }
    }
    return m;
}

// Central finite differences of the training loss over every parameter;
// returns the worst relative error against backward().
inline double max_gradient_rel_error(Model& model, const Tensor& x, const std::vector<int>& y,
                                     double h = 1e-4) {
    auto loss_of = [&](const Model& snapshot) {
        Model copy = snapshot;  // train-mode forward mutates running stats
        ForwardCache cache;
        Tensor logits = forward(copy, x, Mode::train, &cache);
        return classification_loss(copy, logits, y).loss;
    };

    ForwardCache cache;
    Tensor logits = forward(model, x, Mode::train, &cache);
    LossResult l = classification_loss(model, logits, y);
    Gradients analytic = backward(model, cache, l.d_logits);

    double worst = 0.0;
    std::vector<ParamRef> refs = trainable_params(model);
    for (const ParamRef& ref : refs) {
        Tensor* grad = nullptr;
        LayerParams& gl = analytic.layers[ref.layer];
        if (std::string(ref.name) == "W") grad = &gl.W;
        else if (std::string(ref.name) == "b") grad = &gl.b;
        else if (std::string(ref.name) == "gamma") grad = &gl.gamma;
        else grad = &gl.beta;
        for (std::size_t i = 0; i < ref.tensor->size(); ++i) {
            const double orig = (*ref.tensor)[i];
            (*ref.tensor)[i] = orig + h;
            const double lp = loss_of(model);
            (*ref.tensor)[i] = orig - h;
            const double lm = loss_of(model);
            (*ref.tensor)[i] = orig;
            const double fd = (lp - lm) / (2.0 * h);
            const double g = (*grad)[i];
            const double denom = std::max({std::fabs(fd), std::fabs(g), 1e-6});
            worst = std::max(worst, std::fabs(fd - g) / denom);
        }
    }
    return worst;
}

// Deterministic image-like corpus for the desk-scale label-noise and
// generalization runs: per-class smooth blob prototypes plus per-sample
// pixel noise, written and read through the IDX pipeline.
inline Dataset synthetic_digits(std::size_t n, int num_classes, std::uint64_t seed,
                                double noise_level = 0.25, std::size_t side = 28) {
    Rng rng(seed);
    const std::size_t d = side * side;
    std::vector<std::vector<double>> prototypes(num_classes, std::vector<double>(d, 0.0));
    for (int c = 0; c < num_classes; ++c) {
        // Sum of a few random soft blobs, geometry proportional to the side.
        for (int blob = 0; blob < 4; ++blob) {
            double cx = rng.uniform(side * 0.2, side * 0.8);
            double cy = rng.uniform(side * 0.2, side * 0.8);
            double sx = rng.uniform(side * 0.07, side * 0.18);
            double sy = rng.uniform(side * 0.07, side * 0.18);
            double amp = rng.uniform(0.5, 1.0);
            for (std::size_t yy = 0; yy < side; ++yy)
                for (std::size_t xx = 0; xx < side; ++xx) {
                    double dx = (static_cast<double>(xx) - cx) / sx;
                    double dy = (static_cast<double>(yy) - cy) / sy;
                    prototypes[c][yy * side + xx] += amp * std::exp(-0.5 * (dx * dx + dy * dy));
                }
        }
    }
    Dataset data;
    data.inputs = Tensor(n, d);
    data.labels.resize(n);
    data.num_classes = num_classes;
    data.sample_shape = Shape{1, side, side};
    data.provenance = "synthetic_digits(n=" + std::to_string(n) +
                      ",classes=" + std::to_string(num_classes) +
                      ",seed=" + std::to_string(seed) + ")";
    for (std::size_t i = 0; i < n; ++i) {
        int c = static_cast<int>(i % static_cast<std::size_t>(num_classes));
        data.labels[i] = c;
        double* row = data.inputs.row_ptr(i);
        for (std::size_t j = 0; j < d; ++j) {
            double v = prototypes[c][j] + noise_level * rng.normal();
            row[j] = std::clamp(v, 0.0, 1.0);
        }
    }
    return data;
}

}  // namespace testsupport
