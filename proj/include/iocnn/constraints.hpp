#pragma once

#include <string>
#include <vector>

#include "iocnn/model.hpp"

namespace iocnn {

// Post-update rewrite restoring non-negativity of constrained weights.
//   clip:         w < 0  ->  0
//   absolute:     w < 0  ->  |w|
//   exponentiate: w < 0  ->  e^(w - epsilon)
//   shift:        add |min(w)| to the whole tensor iff its minimum is negative
enum class ProjectionStrategy { clip, absolute, exponentiate, shift };

const char* strategy_name(ProjectionStrategy s);
ProjectionStrategy strategy_from_name(const std::string& name);

struct ConstraintPolicy {
    ProjectionStrategy strategy = ProjectionStrategy::exponentiate;
    double epsilon = 5.0;
    bool constrain_bn_gamma = true;   // strict mode; empirical mode leaves gamma free
    bool first_layer_exempt = true;   // always true; kept for configuration visibility

    void validate() const;
};

// One sign-constrained parameter tensor.
struct MaskEntry {
    std::size_t layer;   // index into spec.layers
    const char* name;    // "W" or "gamma"; biases are never constrained
};

struct ConstraintMask {
    std::vector<MaskEntry> entries;
    bool empty() const { return entries.empty(); }
};

// Weight/filter tensors of every dense/conv layer after the first, plus
// batchnorm gamma when the policy asks for it. The first weight-bearing
// layer is an affine map of the input and stays unconstrained.
ConstraintMask build_mask(const Model& model, const ConstraintPolicy& policy);

// Applies the strategy to every masked tensor. Clip/absolute/exponentiate
// leave non-negative entries untouched and are idempotent.
void project(Model& model, const ConstraintMask& mask, const ConstraintPolicy& policy);

// In-place projection of a single tensor; exposed for tests.
void project_tensor(Tensor& t, const ConstraintPolicy& policy);

struct ConstraintViolation {
    std::size_t layer;
    std::string param;
    std::size_t flat_index;
    double value;
};

// Every masked entry with a negative value. Empty means sign-valid.
std::vector<ConstraintViolation> audit_nonnegativity(const Model& model,
                                                     const ConstraintMask& mask);

}  // namespace iocnn
