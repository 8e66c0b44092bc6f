#pragma once

#include <cstdint>
#include <optional>
#include <string>
#include <vector>

#include "iocnn/constraints.hpp"
#include "iocnn/datasets.hpp"
#include "iocnn/network.hpp"

namespace iocnn {

// Empirical convexity certificate. structural_pass is the constructive
// guarantee (sign audit + activation-class audit); the Jensen sampling is
// the independent check. Both are evaluated on infer-mode logits, never on
// final-map outputs (softmax would break convexity without moving the
// decision boundary).
struct ConvexityReport {
    bool structural_pass = false;
    bool weights_nonnegative = false;
    bool activations_convex = false;
    std::size_t triples_tested = 0;
    double max_violation = 0.0;
    std::vector<double> worst_x1, worst_x2;
    double worst_lambda = 0.0;
    std::size_t worst_output_index = 0;
    double tolerance = 1e-9;

    bool jensen_pass() const { return max_violation <= tolerance; }
    bool pass() const { return structural_pass && jensen_pass(); }
};

// Sign audit against a strict mask (gamma constrained) plus a check that
// every hidden activation is convex and non-decreasing.
bool structural_audit(const Model& model, bool* weights_ok = nullptr,
                      bool* activations_ok = nullptr);

// Samples x1, x2 uniform in the box and lambda uniform in (0,1), evaluates
// f(lambda x1 + (1-lambda) x2) - [lambda f(x1) + (1-lambda) f(x2)] per
// output coordinate, and reports the worst triple. Deterministic per seed.
ConvexityReport jensen_check(const Model& model, const Box& box, std::size_t n_triples,
                             double tolerance, std::uint64_t seed);

std::string report_to_json(const ConvexityReport& report);

// Trains a tiny two-layer net (constrained second layer) to regress y = x
// on [-1,1] and returns the held-out mse. Probes whether the activation
// class can express the identity map.
struct IdentityProbeConfig {
    std::size_t hidden_width = 32;
    std::size_t train_epochs = 4000;
    double learning_rate = 1e-2;
    bool skip_from_input = false;
    std::uint64_t seed = 13;
};
double identity_fit_probe(ActivationKind activation, const IdentityProbeConfig& cfg = {});

// Infer-mode evaluation of a 2-input model over a regular lattice.
struct GridSpec {
    double x_lo = -3.0, x_hi = 3.0;
    double y_lo = -3.0, y_hi = 3.0;
    std::size_t nx = 101, ny = 101;
};

struct BoundaryGrid {
    GridSpec grid;
    std::vector<int> labels;    // row-major [ny][nx], y outer
    Tensor logits;              // [ny*nx x num_outputs]
    std::size_t num_outputs = 0;

    double x_at(std::size_t ix) const;
    double y_at(std::size_t iy) const;
};

BoundaryGrid boundary_extract(const Model& model, const GridSpec& grid);

// Grid-level convexity oracles over the lattice. Midpoints are taken between
// grid points whose index sum is even, so the midpoint is itself a grid point.
struct MidpointCounterexample {
    std::size_t ax, ay, bx, by;
};

// Sublevel-set test on a single-output grid: for every pair of points with
// logit < level, the midpoint logit must be <= max of the two plus tol.
bool sublevel_midpoint_convex(const BoundaryGrid& g, double level, double tol,
                              MidpointCounterexample* ce = nullptr);

// Label-region closure: every grid midpoint of two class-c points is class-c.
bool region_midpoint_closed(const BoundaryGrid& g, int cls,
                            MidpointCounterexample* ce = nullptr);

}  // namespace iocnn
