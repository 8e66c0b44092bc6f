#include "iocnn/train.hpp"

#include <chrono>
#include <cmath>
#include <fstream>

#include "iocnn/rng.hpp"
#include "iocnn/serialize.hpp"

namespace iocnn {

namespace {

double sample_weight(const std::vector<double>* w, std::size_t i) {
    return w ? (*w)[i] : 1.0;
}

double log_sum_exp_row(const double* z, std::size_t c) {
    double m = z[0];
    for (std::size_t j = 1; j < c; ++j) m = std::max(m, z[j]);
    double s = 0.0;
    for (std::size_t j = 0; j < c; ++j) s += std::exp(z[j] - m);
    return m + std::log(s);
}

double softplus(double x) { return std::max(x, 0.0) + std::log1p(std::exp(-std::fabs(x))); }

}  // namespace

LossResult cross_entropy(const Tensor& logits, const std::vector<int>& labels,
                         const std::vector<double>* sample_weights) {
    const std::size_t n = logits.rows(), c = logits.cols();
    if (labels.size() != n) throw std::invalid_argument("cross_entropy: label count mismatch");
    LossResult out{0.0, Tensor(n, c)};
    for (std::size_t i = 0; i < n; ++i) {
        const int y = labels[i];
        if (y < 0 || static_cast<std::size_t>(y) >= c)
            throw std::invalid_argument("cross_entropy: label " + std::to_string(y) +
                                        " out of range");
        const double* z = logits.row_ptr(i);
        const double w = sample_weight(sample_weights, i);
        const double lse = log_sum_exp_row(z, c);
        out.loss += w * (lse - z[y]);
        double* d = out.d_logits.row_ptr(i);
        for (std::size_t j = 0; j < c; ++j)
            d[j] = w * (std::exp(z[j] - lse) - (static_cast<int>(j) == y ? 1.0 : 0.0)) /
                   static_cast<double>(n);
    }
    out.loss /= static_cast<double>(n);
    return out;
}

LossResult cross_entropy_soft(const Tensor& logits, const Tensor& targets) {
    check_same_shape(logits, targets, "cross_entropy_soft");
    const std::size_t n = logits.rows(), c = logits.cols();
    LossResult out{0.0, Tensor(n, c)};
    for (std::size_t i = 0; i < n; ++i) {
        const double* z = logits.row_ptr(i);
        const double* t = targets.row_ptr(i);
        const double lse = log_sum_exp_row(z, c);
        double* d = out.d_logits.row_ptr(i);
        for (std::size_t j = 0; j < c; ++j) {
            out.loss += t[j] * (lse - z[j]);
            d[j] = (std::exp(z[j] - lse) - t[j]) / static_cast<double>(n);
        }
    }
    out.loss /= static_cast<double>(n);
    return out;
}

LossResult binary_cross_entropy(const Tensor& logits, const std::vector<int>& labels,
                                const std::vector<double>* sample_weights) {
    const std::size_t n = logits.rows();
    if (logits.cols() != 1)
        throw std::invalid_argument("binary_cross_entropy: needs a single-logit head");
    if (labels.size() != n)
        throw std::invalid_argument("binary_cross_entropy: label count mismatch");
    LossResult out{0.0, Tensor(n, 1)};
    for (std::size_t i = 0; i < n; ++i) {
        const int y = labels[i];
        if (y != 0 && y != 1)
            throw std::invalid_argument("binary_cross_entropy: labels must be 0/1");
        const double z = logits(i, 0);
        const double w = sample_weight(sample_weights, i);
        out.loss += w * (softplus(z) - static_cast<double>(y) * z);
        out.d_logits(i, 0) = w * (sigmoid(z) - static_cast<double>(y)) / static_cast<double>(n);
    }
    out.loss /= static_cast<double>(n);
    return out;
}

LossResult mse_loss(const Tensor& logits, const Tensor& targets) {
    check_same_shape(logits, targets, "mse_loss");
    const std::size_t n = logits.rows();
    LossResult out{0.0, Tensor(logits.rows(), logits.cols())};
    for (std::size_t i = 0; i < logits.size(); ++i) {
        const double d = logits[i] - targets[i];
        out.loss += d * d;
        out.d_logits[i] = 2.0 * d / static_cast<double>(n * logits.cols());
    }
    out.loss /= static_cast<double>(n * logits.cols());
    return out;
}

LossResult classification_loss(const Model& model, const Tensor& logits,
                               const std::vector<int>& labels,
                               const std::vector<double>* sample_weights) {
    if (model.spec.num_outputs == 1)
        return binary_cross_entropy(logits, labels, sample_weights);
    return cross_entropy(logits, labels, sample_weights);
}

// ---- optimizers -----------------------------------------------------------

namespace {

template <class Fn>
void zip_params(Model& model, const Gradients& grads, Fn&& fn) {
    for (std::size_t i = 0; i < model.params.size(); ++i) {
        LayerParams& p = model.params[i];
        const LayerParams& g = grads.layers[i];
        if (!p.W.empty()) {
            if (!p.W.same_shape(g.W) || !p.b.same_shape(g.b))
                throw std::invalid_argument("optimizer: gradient shape mismatch");
            fn(i, 0, p.W, g.W);
            fn(i, 1, p.b, g.b);
        }
        if (!p.gamma.empty()) {
            if (!p.gamma.same_shape(g.gamma) || !p.beta.same_shape(g.beta))
                throw std::invalid_argument("optimizer: gradient shape mismatch");
            fn(i, 2, p.gamma, g.gamma);
            fn(i, 3, p.beta, g.beta);
        }
    }
}

Tensor& adam_slot(LayerParams& s, int which) {
    switch (which) {
        case 0: return s.W;
        case 1: return s.b;
        case 2: return s.gamma;
        default: return s.beta;
    }
}

}  // namespace

void sgd_step(Model& model, const Gradients& grads, double lr) {
    zip_params(model, grads, [&](std::size_t, int, Tensor& p, const Tensor& g) {
        for (std::size_t k = 0; k < p.size(); ++k) p[k] -= lr * g[k];
    });
}

AdamState init_adam_state(const Model& model) {
    AdamState s;
    Gradients z = zero_gradients(model);
    s.m = z.layers;
    s.v = z.layers;
    s.t = 0;
    return s;
}

void adam_step(Model& model, const Gradients& grads, AdamState& state, double lr,
               const AdamConfig& cfg) {
    state.t += 1;
    const double bc1 = 1.0 - std::pow(cfg.beta1, static_cast<double>(state.t));
    const double bc2 = 1.0 - std::pow(cfg.beta2, static_cast<double>(state.t));
    zip_params(model, grads, [&](std::size_t layer, int which, Tensor& p, const Tensor& g) {
        Tensor& m = adam_slot(state.m[layer], which);
        Tensor& v = adam_slot(state.v[layer], which);
        for (std::size_t k = 0; k < p.size(); ++k) {
            m[k] = cfg.beta1 * m[k] + (1.0 - cfg.beta1) * g[k];
            v[k] = cfg.beta2 * v[k] + (1.0 - cfg.beta2) * g[k] * g[k];
            const double mhat = m[k] / bc1;
            const double vhat = v[k] / bc2;
            p[k] -= lr * mhat / (std::sqrt(vhat) + cfg.eps);
        }
    });
}

// ---- config / history -------------------------------------------------------

double LrSchedule::at_epoch(double base_lr, std::size_t epoch) const {
    if (kind == Kind::constant) return base_lr;
    return base_lr * std::pow(decay, static_cast<double>(epoch / every_n_epochs));
}

void TrainConfig::validate() const {
    if (learning_rate <= 0.0) throw std::invalid_argument("train config: learning_rate must be > 0");
    if (batch_size < 1) throw std::invalid_argument("train config: batch_size must be >= 1");
    if (convergence_loss < 0.0)
        throw std::invalid_argument("train config: convergence_loss must be >= 0");
    if (constraint) constraint->validate();
}

const char* stop_reason_name(StopReason r) {
    switch (r) {
        case StopReason::converged: return "converged";
        case StopReason::max_epochs: return "max_epochs";
        case StopReason::early_stop: return "early_stop";
    }
    return "?";
}

// ---- loops ------------------------------------------------------------------

EpochStats train_epoch(Model& model, const Dataset& train, const TrainConfig& config,
                       OptimizerState& opt, std::size_t epoch_index,
                       const std::vector<double>* sample_weights) {
    config.validate();
    if (train.size() == 0) throw std::invalid_argument("train_epoch: empty training data");

    ConstraintMask mask;
    if (config.constraint) mask = build_mask(model, *config.constraint);

    if (config.optimizer == OptimizerKind::adam && !opt.adam_ready) {
        opt.adam = init_adam_state(model);
        opt.adam_ready = true;
    }

    const double lr = config.lr_schedule.at_epoch(config.learning_rate, epoch_index);
    Rng shuffle_rng(config.seed ^ (epoch_index + 1));
    std::vector<std::size_t> order = shuffle_rng.permutation(train.size());

    double loss_sum = 0.0;
    std::size_t batches = 0;
    const std::size_t n = train.size();
    for (std::size_t start = 0; start < n; start += config.batch_size) {
        const std::size_t bs = std::min(config.batch_size, n - start);
        Tensor bx(bs, train.dim());
        std::vector<int> by(bs);
        std::vector<double> bw;
        if (sample_weights) bw.resize(bs);
        for (std::size_t i = 0; i < bs; ++i) {
            const std::size_t src = order[start + i];
            const double* from = train.inputs.row_ptr(src);
            std::copy(from, from + train.dim(), bx.row_ptr(i));
            by[i] = train.labels[src];
            if (sample_weights) bw[i] = (*sample_weights)[src];
        }
        ForwardCache cache;
        Tensor logits;
        try {
            logits = forward(model, bx, Mode::train, &cache);
        } catch (const NumericError& e) {
            throw NumericError(std::string(e.what()) + " (batch " + std::to_string(batches) +
                               " of epoch " + std::to_string(epoch_index + 1) + ")");
        }
        LossResult lr_res =
            classification_loss(model, logits, by, sample_weights ? &bw : nullptr);
        Gradients grads = backward(model, cache, lr_res.d_logits);
        if (config.optimizer == OptimizerKind::sgd)
            sgd_step(model, grads, lr);
        else
            adam_step(model, grads, opt.adam, lr);
        if (config.constraint) project(model, mask, *config.constraint);
        loss_sum += lr_res.loss;
        ++batches;
    }
    return {loss_sum / static_cast<double>(batches), batches};
}

EvalResult evaluate(const Model& model, const Dataset& data) {
    if (data.size() == 0) return {0.0, 0.0};
    Tensor logits = forward(model, data.inputs);
    LossResult l = classification_loss(model, logits, data.labels);
    std::vector<int> pred = labels_from_logits(logits);
    std::size_t correct = 0;
    for (std::size_t i = 0; i < pred.size(); ++i)
        if (pred[i] == data.labels[i]) ++correct;
    return {l.loss, static_cast<double>(correct) / static_cast<double>(pred.size())};
}

FitResult fit(Model& model, const Dataset& train, const Dataset& val, const TrainConfig& config,
              const std::vector<double>* sample_weights) {
    config.validate();
    using clock = std::chrono::steady_clock;

    FitResult result;
    result.best = model;
    double best_val_acc = -1.0;
    OptimizerState opt;
    ConstraintMask mask;
    if (config.constraint) mask = build_mask(model, *config.constraint);

    for (std::size_t epoch = 0; epoch < config.max_epochs; ++epoch) {
        auto t0 = clock::now();
        EpochStats stats = train_epoch(model, train, config, opt, epoch, sample_weights);
        EvalResult train_eval = evaluate(model, train);
        EvalResult val_eval = evaluate(model, val);
        double secs = std::chrono::duration<double>(clock::now() - t0).count();

        EpochRecord rec;
        rec.epoch = epoch + 1;
        rec.train_loss = stats.mean_loss;
        rec.train_acc = train_eval.accuracy;
        rec.val_loss = val_eval.loss;
        rec.val_acc = val_eval.accuracy;
        rec.lr = config.lr_schedule.at_epoch(config.learning_rate, epoch);
        rec.epoch_time = secs;
        rec.constraint_violations =
            config.constraint ? audit_nonnegativity(model, mask).size() : 0;
        result.history.records.push_back(rec);

        if (val_eval.accuracy > best_val_acc) {
            best_val_acc = val_eval.accuracy;
            result.best = model;
            result.history.best_epoch = epoch + 1;
        }

        if (stats.mean_loss < config.convergence_loss) {
            result.history.stop_reason = StopReason::converged;
            return result;
        }
        if (config.patience && epoch + 1 >= result.history.best_epoch + *config.patience) {
            result.history.stop_reason = StopReason::early_stop;
            model = result.best;
            return result;
        }
    }
    result.history.stop_reason = StopReason::max_epochs;
    return result;
}

void fit_soft(Model& model, const Tensor& inputs, const Tensor& targets, std::size_t epochs,
              const TrainConfig& config) {
    config.validate();
    OptimizerState opt;
    if (config.optimizer == OptimizerKind::adam) {
        opt.adam = init_adam_state(model);
        opt.adam_ready = true;
    }
    ConstraintMask mask;
    if (config.constraint) mask = build_mask(model, *config.constraint);

    const std::size_t n = inputs.rows();
    for (std::size_t epoch = 0; epoch < epochs; ++epoch) {
        const double lr = config.lr_schedule.at_epoch(config.learning_rate, epoch);
        Rng shuffle_rng(config.seed ^ (epoch + 1));
        std::vector<std::size_t> order = shuffle_rng.permutation(n);
        for (std::size_t start = 0; start < n; start += config.batch_size) {
            const std::size_t bs = std::min(config.batch_size, n - start);
            Tensor bx(bs, inputs.cols());
            Tensor bt(bs, targets.cols());
            for (std::size_t i = 0; i < bs; ++i) {
                const std::size_t src = order[start + i];
                std::copy(inputs.row_ptr(src), inputs.row_ptr(src) + inputs.cols(),
                          bx.row_ptr(i));
                std::copy(targets.row_ptr(src), targets.row_ptr(src) + targets.cols(),
                          bt.row_ptr(i));
            }
            ForwardCache cache;
            Tensor logits = forward(model, bx, Mode::train, &cache);
            LossResult l = cross_entropy_soft(logits, bt);
            Gradients grads = backward(model, cache, l.d_logits);
            if (config.optimizer == OptimizerKind::sgd)
                sgd_step(model, grads, lr);
            else
                adam_step(model, grads, opt.adam, lr);
            if (config.constraint) project(model, mask, *config.constraint);
        }
    }
}

void write_history_csv(const TrainHistory& history, const std::string& path) {
    std::ofstream out(path, std::ios::binary);
    if (!out) throw std::runtime_error("cannot open for writing: " + path);
    out << "epoch,train_loss,train_acc,val_loss,val_acc,lr,constraint_violations\n";
    for (const EpochRecord& r : history.records) {
        out << r.epoch << ',' << format_shortest(r.train_loss) << ','
            << format_shortest(r.train_acc) << ',' << format_shortest(r.val_loss) << ','
            << format_shortest(r.val_acc) << ',' << format_shortest(r.lr) << ','
            << r.constraint_violations << '\n';
    }
}

}  // namespace iocnn
