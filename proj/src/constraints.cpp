#include "iocnn/constraints.hpp"

#include <cmath>
#include <stdexcept>

namespace iocnn {

const char* strategy_name(ProjectionStrategy s) {
    switch (s) {
        case ProjectionStrategy::clip: return "clip";
        case ProjectionStrategy::absolute: return "absolute";
        case ProjectionStrategy::exponentiate: return "exponentiate";
        case ProjectionStrategy::shift: return "shift";
    }
    return "?";
}

ProjectionStrategy strategy_from_name(const std::string& name) {
    if (name == "clip") return ProjectionStrategy::clip;
    if (name == "absolute") return ProjectionStrategy::absolute;
    if (name == "exponentiate") return ProjectionStrategy::exponentiate;
    if (name == "shift") return ProjectionStrategy::shift;
    throw std::invalid_argument("unknown projection strategy: " + name);
}

void ConstraintPolicy::validate() const {
    if (epsilon < 0.0) throw std::invalid_argument("constraint policy: epsilon must be >= 0");
    if (!first_layer_exempt)
        throw std::invalid_argument(
            "constraint policy: the first weight layer is always exempt");
}

ConstraintMask build_mask(const Model& model, const ConstraintPolicy& policy) {
    policy.validate();
    ConstraintMask mask;
    for (std::size_t i = 0; i < model.spec.layers.size(); ++i) {
        const LayerSpec& l = model.spec.layers[i];
        if (l.kind == LayerKind::dense || l.kind == LayerKind::conv2d) {
            if (model.weight_ordinal[i] > 1) mask.entries.push_back({i, "W"});
        } else if (l.kind == LayerKind::batchnorm && policy.constrain_bn_gamma) {
            mask.entries.push_back({i, "gamma"});
        }
    }
    return mask;
}

void project_tensor(Tensor& t, const ConstraintPolicy& policy) {
    switch (policy.strategy) {
        case ProjectionStrategy::clip:
            for (std::size_t i = 0; i < t.size(); ++i)
                if (t[i] < 0.0) t[i] = 0.0;
            break;
        case ProjectionStrategy::absolute:
            for (std::size_t i = 0; i < t.size(); ++i)
                if (t[i] < 0.0) t[i] = -t[i];
            break;
        case ProjectionStrategy::exponentiate:
            for (std::size_t i = 0; i < t.size(); ++i)
                if (t[i] < 0.0) t[i] = std::exp(t[i] - policy.epsilon);
            break;
        case ProjectionStrategy::shift: {
            double mn = 0.0;
            for (std::size_t i = 0; i < t.size(); ++i) mn = std::min(mn, t[i]);
            if (mn < 0.0)
                for (std::size_t i = 0; i < t.size(); ++i) t[i] += -mn;
            break;
        }
    }
}

namespace {

Tensor* masked_tensor(Model& model, const MaskEntry& e) {
    LayerParams& p = model.params[e.layer];
    if (e.name[0] == 'W') return &p.W;
    return &p.gamma;
}

const Tensor* masked_tensor(const Model& model, const MaskEntry& e) {
    const LayerParams& p = model.params[e.layer];
    if (e.name[0] == 'W') return &p.W;
    return &p.gamma;
}

}  // namespace

void project(Model& model, const ConstraintMask& mask, const ConstraintPolicy& policy) {
    for (const MaskEntry& e : mask.entries) project_tensor(*masked_tensor(model, e), policy);
}

std::vector<ConstraintViolation> audit_nonnegativity(const Model& model,
                                                     const ConstraintMask& mask) {
    std::vector<ConstraintViolation> out;
    for (const MaskEntry& e : mask.entries) {
        const Tensor& t = *masked_tensor(model, e);
        for (std::size_t i = 0; i < t.size(); ++i)
            if (t[i] < 0.0) out.push_back({e.layer, e.name, i, t[i]});
    }
    return out;
}

}  // namespace iocnn
