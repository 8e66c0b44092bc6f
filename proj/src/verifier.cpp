#include "iocnn/verifier.hpp"

#include <cmath>

#include <nlohmann/json.hpp>

#include "iocnn/rng.hpp"
#include "iocnn/serialize.hpp"
#include "iocnn/train.hpp"

namespace iocnn {

bool structural_audit(const Model& model, bool* weights_ok_out, bool* activations_ok_out) {
    ConstraintPolicy strict;
    strict.constrain_bn_gamma = true;
    ConstraintMask mask = build_mask(model, strict);
    bool weights_ok = audit_nonnegativity(model, mask).empty();

    bool activations_ok = true;
    for (const LayerSpec& l : model.spec.layers) {
        if (l.kind != LayerKind::activation) continue;
        switch (l.activation) {
            case ActivationKind::relu:
            case ActivationKind::elu:
            case ActivationKind::leaky_relu:
            case ActivationKind::identity:
                break;  // convex and non-decreasing
            case ActivationKind::sigmoid:
                activations_ok = false;
                break;
        }
    }
    if (weights_ok_out) *weights_ok_out = weights_ok;
    if (activations_ok_out) *activations_ok_out = activations_ok;
    return weights_ok && activations_ok;
}

ConvexityReport jensen_check(const Model& model, const Box& box, std::size_t n_triples,
                             double tolerance, std::uint64_t seed) {
    const std::size_t d = model.spec.input_shape.numel();
    if (box.lo.size() != d || box.hi.size() != d)
        throw std::invalid_argument("jensen_check: box dimension mismatch");

    ConvexityReport report;
    report.tolerance = tolerance;
    report.triples_tested = n_triples;
    report.structural_pass =
        structural_audit(model, &report.weights_nonnegative, &report.activations_convex);
    report.max_violation = -std::numeric_limits<double>::infinity();

    Rng rng(seed);
    const std::size_t chunk = 256;
    std::vector<double> lambdas(chunk);
    for (std::size_t done = 0; done < n_triples; done += chunk) {
        const std::size_t m = std::min(chunk, n_triples - done);
        Tensor x1(m, d), x2(m, d), xm(m, d);
        for (std::size_t i = 0; i < m; ++i) {
            double lam = 0.0;
            while (lam <= 0.0 || lam >= 1.0) lam = rng.uniform();
            lambdas[i] = lam;
            for (std::size_t j = 0; j < d; ++j) {
                double a = rng.uniform(box.lo[j], box.hi[j]);
                double b = rng.uniform(box.lo[j], box.hi[j]);
                x1(i, j) = a;
                x2(i, j) = b;
                xm(i, j) = lam * a + (1.0 - lam) * b;
            }
        }
        Tensor f1 = forward(model, x1);
        Tensor f2 = forward(model, x2);
        Tensor fm = forward(model, xm);
        for (std::size_t i = 0; i < m; ++i)
            for (std::size_t c = 0; c < f1.cols(); ++c) {
                double v = fm(i, c) - (lambdas[i] * f1(i, c) + (1.0 - lambdas[i]) * f2(i, c));
                if (v > report.max_violation) {
                    report.max_violation = v;
                    report.worst_lambda = lambdas[i];
                    report.worst_output_index = c;
                    report.worst_x1.assign(x1.row_ptr(i), x1.row_ptr(i) + d);
                    report.worst_x2.assign(x2.row_ptr(i), x2.row_ptr(i) + d);
                }
            }
    }
    return report;
}

std::string report_to_json(const ConvexityReport& r) {
    nlohmann::json j;
    j["structural_pass"] = r.structural_pass;
    j["weights_nonnegative"] = r.weights_nonnegative;
    j["activations_convex"] = r.activations_convex;
    j["triples_tested"] = r.triples_tested;
    j["max_violation"] = r.max_violation;
    j["tolerance"] = r.tolerance;
    j["jensen_pass"] = r.jensen_pass();
    j["pass"] = r.pass();
    j["worst_triple"] = {{"x1", r.worst_x1},
                         {"x2", r.worst_x2},
                         {"lambda", r.worst_lambda},
                         {"output_index", r.worst_output_index}};
    return j.dump(2);
}

double identity_fit_probe(ActivationKind activation, const IdentityProbeConfig& cfg) {
    ModelSpec spec;
    spec.input_shape = Shape{1};
    spec.num_outputs = 1;
    spec.final_map = FinalMap::none;
    spec.layers.push_back(LayerSpec::dense(cfg.hidden_width));
    spec.layers.push_back(LayerSpec::act(activation));
    spec.layers.push_back(LayerSpec::dense(1));
    if (cfg.skip_from_input) spec.layers.push_back(LayerSpec::skip_add(kInputSource));

    Model model = build_model(spec, cfg.seed);

    ConstraintPolicy policy;  // exponentiate, eps 5
    ConstraintMask mask = build_mask(model, policy);

    // Train grid and held-out midpoints over [-1, 1].
    const std::size_t n_train = 256, n_test = 255;
    Tensor xtr(n_train, 1), ytr(n_train, 1), xte(n_test, 1), yte(n_test, 1);
    for (std::size_t i = 0; i < n_train; ++i) {
        double x = -1.0 + 2.0 * static_cast<double>(i) / static_cast<double>(n_train - 1);
        xtr(i, 0) = x;
        ytr(i, 0) = x;
    }
    for (std::size_t i = 0; i < n_test; ++i) {
        double x = -1.0 + 2.0 * (static_cast<double>(i) + 0.5) / static_cast<double>(n_train - 1);
        xte(i, 0) = x;
        yte(i, 0) = x;
    }

    AdamState adam = init_adam_state(model);
    for (std::size_t epoch = 0; epoch < cfg.train_epochs; ++epoch) {
        ForwardCache cache;
        Tensor pred = forward(model, xtr, Mode::train, &cache);
        LossResult l = mse_loss(pred, ytr);
        Gradients g = backward(model, cache, l.d_logits);
        // Biases stay frozen at zero: the probe measures what the activation
        // class itself can express, and a trainable bias would let a single
        // relu unit shift into its linear branch over the whole interval.
        for (LayerParams& lg : g.layers) lg.b.fill(0.0);
        adam_step(model, g, adam, cfg.learning_rate);
        project(model, mask, policy);
    }

    Tensor pred = forward(model, xte);
    return mse_loss(pred, yte).loss;
}

double BoundaryGrid::x_at(std::size_t ix) const {
    return grid.nx == 1 ? grid.x_lo
                        : grid.x_lo + (grid.x_hi - grid.x_lo) * static_cast<double>(ix) /
                              static_cast<double>(grid.nx - 1);
}

double BoundaryGrid::y_at(std::size_t iy) const {
    return grid.ny == 1 ? grid.y_lo
                        : grid.y_lo + (grid.y_hi - grid.y_lo) * static_cast<double>(iy) /
                              static_cast<double>(grid.ny - 1);
}

BoundaryGrid boundary_extract(const Model& model, const GridSpec& grid) {
    if (model.spec.input_shape.numel() != 2)
        throw std::invalid_argument("boundary_extract: model input must be 2-D");
    if (grid.nx < 2 || grid.ny < 2)
        throw std::invalid_argument("boundary_extract: grid must be at least 2x2");

    BoundaryGrid out;
    out.grid = grid;
    out.num_outputs = model.spec.num_outputs;
    Tensor points(grid.nx * grid.ny, 2);
    for (std::size_t iy = 0; iy < grid.ny; ++iy)
        for (std::size_t ix = 0; ix < grid.nx; ++ix) {
            points(iy * grid.nx + ix, 0) = out.x_at(ix);
            points(iy * grid.nx + ix, 1) = out.y_at(iy);
        }
    out.logits = forward(model, points);
    out.labels = labels_from_logits(out.logits);
    return out;
}

namespace {

// Pairs whose index sum is even in both coordinates have an exact lattice
// midpoint.
template <class Fn>
bool scan_midpoints(const BoundaryGrid& g, Fn&& violates, MidpointCounterexample* ce) {
    const std::size_t nx = g.grid.nx, ny = g.grid.ny;
    for (std::size_t ay = 0; ay < ny; ++ay)
        for (std::size_t ax = 0; ax < nx; ++ax)
            for (std::size_t by = ay; by < ny; ++by)
                for (std::size_t bx = (by == ay ? ax : 0); bx < nx; ++bx) {
                    if (((ax + bx) | (ay + by)) & 1) continue;
                    if (violates(ax, ay, bx, by)) {
                        if (ce) *ce = {ax, ay, bx, by};
                        return false;
                    }
                }
    return true;
}

}  // namespace

bool sublevel_midpoint_convex(const BoundaryGrid& g, double level, double tol,
                              MidpointCounterexample* ce) {
    if (g.num_outputs != 1)
        throw std::invalid_argument("sublevel_midpoint_convex: needs a single-output grid");
    const std::size_t nx = g.grid.nx;
    auto f = [&](std::size_t ix, std::size_t iy) { return g.logits(iy * nx + ix, 0); };
    return scan_midpoints(
        g,
        [&](std::size_t ax, std::size_t ay, std::size_t bx, std::size_t by) {
            double fa = f(ax, ay), fb = f(bx, by);
            if (fa >= level || fb >= level) return false;
            double fmid = f((ax + bx) / 2, (ay + by) / 2);
            return fmid > std::max(fa, fb) + tol;
        },
        ce);
}

bool region_midpoint_closed(const BoundaryGrid& g, int cls, MidpointCounterexample* ce) {
    const std::size_t nx = g.grid.nx;
    auto lab = [&](std::size_t ix, std::size_t iy) { return g.labels[iy * nx + ix]; };
    return scan_midpoints(
        g,
        [&](std::size_t ax, std::size_t ay, std::size_t bx, std::size_t by) {
            if (lab(ax, ay) != cls || lab(bx, by) != cls) return false;
            return lab((ax + bx) / 2, (ay + by) / 2) != cls;
        },
        ce);
}

}  // namespace iocnn
