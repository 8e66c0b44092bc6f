#include <doctest.h>

#include <cmath>

#include "iocnn/ensemble.hpp"
#include "iocnn/verifier.hpp"
#include "support.hpp"

using namespace iocnn;
using testsupport::mlp_spec;
using testsupport::tiny_affine;

namespace {

Dataset blobs(std::size_t n, std::uint64_t seed) {
    Rng rng(seed);
    Dataset d;
    d.inputs = Tensor(n, 2);
    d.labels.resize(n);
    d.num_classes = 2;
    d.sample_shape = Shape{2};
    d.provenance = "blobs";
    for (std::size_t i = 0; i < n; ++i) {
        int c = static_cast<int>(i % 2);
        d.inputs(i, 0) = rng.normal() * 0.3 + (c == 0 ? -1.0 : 1.0);
        d.inputs(i, 1) = rng.normal() * 0.3;
        d.labels[i] = c;
    }
    return d;
}

TrainConfig quick_ioc_train(std::size_t epochs = 30) {
    TrainConfig t;
    t.learning_rate = 1e-2;
    t.batch_size = 32;
    t.max_epochs = epochs;
    t.convergence_loss = 0.0;
    t.constraint = ConstraintPolicy{};
    return t;
}

ModelSpec single_output_expert() {
    return mlp_spec(2, {8, 8}, 1, ActivationKind::elu, FinalMap::sigmoid);
}

ModelSpec gate_spec_for(std::size_t p) {
    ModelSpec g = mlp_spec(2, {16}, p, ActivationKind::elu, FinalMap::softmax);
    return g;
}

// A fixed linear two-class expert on the blobs geometry; sign decides.
Model perfect_blob_expert(bool inverted) {
    double s = inverted ? -4.0 : 4.0;
    return tiny_affine({{s, 0.0}}, {0.0}, FinalMap::sigmoid);
}

}  // namespace

TEST_SUITE("ensembles") {

TEST_CASE("sample weights validate and normalize") {
    SampleWeights w;
    w.values = {2.0, 1.0, 1.0};
    w.normalize_mean_one();
    CHECK(w.values[0] == doctest::Approx(1.5));
    w.validate();
    SampleWeights bad;
    bad.values = {1.0, 0.0};
    CHECK_THROWS_AS(bad.validate(), std::invalid_argument);
}

TEST_CASE("single-expert moe reduces to a plain fit with a constant gate") {
    Dataset d = blobs(128, 4);
    MoeConfig cfg;
    cfg.rounds = 2;
    cfg.inner_epochs = 10;
    cfg.gate_epochs = 5;
    cfg.expert_train = quick_ioc_train();
    cfg.gate_train = quick_ioc_train();
    cfg.gate_train.constraint.reset();
    cfg.seed = 3;
    Ensemble ens = moe_em_fit({single_output_expert()}, gate_spec_for(1), d, cfg);

    Tensor w = gate_weights(ens, d.inputs);
    for (std::size_t i = 0; i < w.size(); ++i) CHECK(w[i] == 1.0);

    double expert_acc = single_model_accuracy(ens.experts[0], d);
    CHECK(ensemble_accuracy(ens, d) == doctest::Approx(expert_acc));
    CHECK(expert_acc >= 0.9);  // blobs separate easily even through one convex head
}

TEST_CASE("moe keeps every expert structurally convex") {
    Dataset d = blobs(128, 9);
    MoeConfig cfg;
    cfg.rounds = 3;
    cfg.inner_epochs = 8;
    cfg.gate_epochs = 5;
    cfg.expert_train = quick_ioc_train();
    cfg.gate_train = quick_ioc_train();
    cfg.gate_train.constraint.reset();
    cfg.seed = 8;
    std::vector<ModelSpec> specs(3, single_output_expert());
    Ensemble ens = moe_em_fit(specs, gate_spec_for(3), d, cfg);

    Box box;
    box.lo = {-3.0, -3.0};
    box.hi = {3.0, 3.0};
    for (const Model& ex : ens.experts) {
        ConvexityReport r = jensen_check(ex, box, 2000, 1e-9, 5);
        CHECK(r.structural_pass);
        CHECK(r.max_violation <= 1e-9);
    }

    // gate rows are a probability vector everywhere
    Tensor w = gate_weights(ens, d.inputs);
    for (std::size_t i = 0; i < w.rows(); ++i) {
        double sum = 0.0;
        for (std::size_t k = 0; k < w.cols(); ++k) {
            CHECK(w(i, k) >= 0.0);
            sum += w(i, k);
        }
        CHECK(sum == doctest::Approx(1.0).epsilon(1e-12));
    }
}

TEST_CASE("moe rejects unconstrained expert configs and bad gate shapes") {
    Dataset d = blobs(32, 1);
    MoeConfig cfg;
    cfg.expert_train = quick_ioc_train();
    cfg.expert_train.constraint.reset();
    cfg.gate_train = quick_ioc_train();
    CHECK_THROWS_AS(moe_em_fit({single_output_expert()}, gate_spec_for(1), d, cfg),
                    std::invalid_argument);

    MoeConfig ok = cfg;
    ok.expert_train = quick_ioc_train();
    CHECK_THROWS_AS(
        moe_em_fit({single_output_expert(), single_output_expert()}, gate_spec_for(3), d, ok),
        std::invalid_argument);
}

TEST_CASE("boosting with one expert equals a plain fit with uniform weights") {
    Dataset d = blobs(96, 5);
    BoostConfig cfg;
    cfg.n_experts = 1;
    cfg.expert_train = quick_ioc_train(12);
    cfg.seed = 17;
    BoostResult r = boost_fit(single_output_expert(), d, cfg);
    REQUIRE(r.experts.size() == 1);
    for (double w : r.final_weights.values) CHECK(w == 1.0);

    // replicate by hand with the same derived seeds
    Model manual = build_model(single_output_expert(), derive_seed(17, 0));
    TrainConfig tc = cfg.expert_train;
    tc.seed = derive_seed(17, 100);
    OptimizerState opt;
    for (std::size_t e = 0; e < tc.max_epochs; ++e) train_epoch(manual, d, tc, opt, e);
    CHECK(params_equal(manual, r.experts[0]));
}

TEST_CASE("after round one, misclassified samples outweigh correct ones") {
    // undertrained expert on hard data guarantees mistakes
    Dataset d = gen_vshape(300, 6);
    BoostConfig cfg;
    cfg.n_experts = 2;
    cfg.expert_train = quick_ioc_train(4);
    cfg.seed = 2;
    BoostResult r = boost_fit(single_output_expert(), d, cfg);
    REQUIRE(r.experts.size() == 2);
    CHECK(r.events.empty());

    std::vector<int> pred = predict_labels(r.experts[0], d.inputs);
    double min_wrong = 1e300, max_right = -1e300;
    std::size_t wrong = 0;
    for (std::size_t i = 0; i < d.size(); ++i) {
        if (pred[i] != d.labels[i]) {
            ++wrong;
            min_wrong = std::min(min_wrong, r.final_weights.values[i]);
        } else {
            max_right = std::max(max_right, r.final_weights.values[i]);
        }
    }
    REQUIRE(wrong > 0);
    CHECK(min_wrong > max_right);
}

TEST_CASE("an expert with weighted error at least one half resets the weights") {
    // zero training epochs leave the expert at its random initialization,
    // which loses to chance on random labels for this seed
    Rng rng(12);
    Dataset d;
    d.inputs = Tensor(64, 2);
    d.labels.resize(64);
    d.num_classes = 2;
    d.sample_shape = Shape{2};
    for (std::size_t i = 0; i < d.inputs.size(); ++i) d.inputs[i] = rng.normal();
    for (std::size_t i = 0; i < 64; ++i) d.labels[i] = static_cast<int>(rng.uniform_int(2));
    BoostConfig cfg;
    cfg.n_experts = 2;
    cfg.expert_train = quick_ioc_train(0);
    cfg.seed = 0;
    BoostResult r = boost_fit(single_output_expert(), d, cfg);
    REQUIRE(r.events.size() == 1);
    CHECK(r.events[0].find("weights reset") != std::string::npos);
    for (double w : r.final_weights.values) CHECK(w == 1.0);
}

TEST_CASE("gate training leaves expert parameters bit-identical") {
    Dataset d = blobs(128, 7);
    std::vector<Model> experts = {perfect_blob_expert(false), perfect_blob_expert(true)};
    std::vector<Model> before = experts;
    TrainConfig cfg = quick_ioc_train(15);
    cfg.constraint.reset();
    cfg.seed = 5;
    Model gate = gate_fit(experts, gate_spec_for(2), d, cfg);
    CHECK(params_equal(experts[0], before[0]));
    CHECK(params_equal(experts[1], before[1]));
}

TEST_CASE("a dominant expert wins the gate almost everywhere") {
    Dataset d = blobs(256, 8);
    std::vector<Model> experts = {perfect_blob_expert(false), perfect_blob_expert(true)};
    TrainConfig cfg = quick_ioc_train(40);
    cfg.constraint.reset();
    cfg.seed = 6;
    Model gate = gate_fit(experts, gate_spec_for(2), d, cfg);
    Tensor probs = apply_final_map(forward(gate, d.inputs), FinalMap::softmax);
    std::size_t picks_a = 0;
    for (std::size_t i = 0; i < d.size(); ++i)
        if (argmax_row(probs, i) == 0) ++picks_a;
    CHECK(picks_a >= d.size() * 9 / 10);
}

TEST_CASE("gate shape mismatch is rejected") {
    Dataset d = blobs(32, 2);
    std::vector<Model> experts = {perfect_blob_expert(false), perfect_blob_expert(true)};
    TrainConfig cfg = quick_ioc_train(5);
    CHECK_THROWS_AS(gate_fit(experts, gate_spec_for(3), d, cfg), std::invalid_argument);
}

TEST_CASE("predict identities: one-hot gate and uniform gate") {
    Ensemble ens;
    ens.mode = EnsembleMode::boosted_gated;
    ens.experts = {perfect_blob_expert(false), perfect_blob_expert(true)};
    // gate logits so extreme the softmax is numerically one-hot on expert 1
    ens.gate = tiny_affine({{0.0, 0.0}, {0.0, 0.0}}, {-60.0, 60.0}, FinalMap::softmax);

    std::vector<double> x = {0.7, -0.2};
    EnsemblePrediction p = ensemble_predict(ens, x);
    Tensor one(1, 2);
    one(0, 0) = x[0];
    one(0, 1) = x[1];
    CHECK(p.label == predict_labels(ens.experts[1], one)[0]);
    CHECK(p.gate_weights[1] == doctest::Approx(1.0));

    // uniform gate: argmax of the averaged class probabilities
    ens.gate = tiny_affine({{0.0, 0.0}, {0.0, 0.0}}, {0.0, 0.0}, FinalMap::softmax);
    ens.experts[1] = tiny_affine({{-3.0, 0.0}}, {0.5}, FinalMap::sigmoid);
    EnsemblePrediction q = ensemble_predict(ens, x);
    double z0 = forward(ens.experts[0], one)(0, 0);
    double z1 = forward(ens.experts[1], one)(0, 0);
    double p1 = 0.5 * sigmoid(z0) + 0.5 * sigmoid(z1);  // 0.555, away from the tie
    CHECK(q.label == (p1 > 0.5 ? 1 : 0));
    CHECK(q.gate_weights[0] == doctest::Approx(0.5));
}

TEST_CASE("single-expert ensembles predict exactly like the expert") {
    Ensemble ens;
    ens.mode = EnsembleMode::moe_em;
    ens.experts = {perfect_blob_expert(false)};
    ens.gate = tiny_affine({{0.0, 0.0}}, {0.0}, FinalMap::softmax);
    Dataset d = blobs(64, 10);
    std::vector<int> via_ensemble = ensemble_predict_batch(ens, d.inputs);
    std::vector<int> via_expert = predict_labels(ens.experts[0], d.inputs);
    CHECK(via_ensemble == via_expert);
}

TEST_CASE("oracle accuracy dominates experts and the gated ensemble") {
    Dataset d = gen_vshape(400, 9);
    BoostConfig cfg;
    cfg.n_experts = 3;
    cfg.expert_train = quick_ioc_train(10);
    cfg.seed = 11;
    BoostResult boost = boost_fit(single_output_expert(), d, cfg);

    TrainConfig gate_cfg = quick_ioc_train(20);
    gate_cfg.constraint.reset();
    gate_cfg.seed = 12;
    Model gate = gate_fit(boost.experts, gate_spec_for(3), d, gate_cfg);
    Ensemble ens;
    ens.mode = EnsembleMode::boosted_gated;
    ens.experts = boost.experts;
    ens.gate = gate;

    double oracle = oracle_accuracy(ens.experts, d);
    for (const Model& ex : ens.experts) CHECK(oracle >= single_model_accuracy(ex, d));
    CHECK(oracle >= ensemble_accuracy(ens, d));

    // single expert oracle equals its own accuracy
    std::vector<Model> one = {ens.experts[0]};
    CHECK(oracle_accuracy(one, d) == single_model_accuracy(ens.experts[0], d));

    // one always-right expert pushes the oracle to 1
    std::vector<Model> with_perfect = {perfect_blob_expert(true)};
    Dataset easy = blobs(64, 13);
    with_perfect.push_back(perfect_blob_expert(false));
    CHECK(oracle_accuracy(with_perfect, easy) == 1.0);
}

TEST_CASE("oracle mode has no per-sample prediction") {
    Ensemble ens;
    ens.mode = EnsembleMode::boosted_oracle;
    ens.experts = {perfect_blob_expert(false)};
    ens.gate = tiny_affine({{0.0, 0.0}}, {0.0}, FinalMap::softmax);
    Dataset d = blobs(8, 1);
    CHECK_THROWS_AS(ensemble_predict_batch(ens, d.inputs), std::invalid_argument);
}

TEST_CASE("two-expert moe fractures the vshape a single convex boundary cannot fit") {
    // One convex decision boundary tops out well below the gated pair; the
    // gate splits the arms so each expert only needs a convex cut.
    Dataset d = gen_vshape(1200, 17);
    ModelSpec expert = mlp_spec(2, {12, 12}, 1, ActivationKind::elu, FinalMap::sigmoid);
    ModelSpec gate = mlp_spec(2, {16}, 2, ActivationKind::elu, FinalMap::softmax);
    MoeConfig cfg;
    cfg.rounds = 5;
    cfg.inner_epochs = 30;
    cfg.gate_epochs = 30;
    cfg.expert_train.learning_rate = 1e-2;
    cfg.expert_train.batch_size = 64;
    cfg.expert_train.constraint = ConstraintPolicy{};
    cfg.gate_train.learning_rate = 1e-2;
    cfg.gate_train.batch_size = 64;
    cfg.seed = 2;
    Ensemble ens = moe_em_fit({expert, expert}, gate, d, cfg);

    double ens_acc = ensemble_accuracy(ens, d);
    double best_single = std::max(single_model_accuracy(ens.experts[0], d),
                                  single_model_accuracy(ens.experts[1], d));
    CHECK(ens_acc >= best_single + 0.05);
    CHECK(ens_acc >= 0.9);
}

TEST_CASE("ensemble persistence round trip re-evaluates identically") {
    Dataset d = blobs(96, 14);
    MoeConfig cfg;
    cfg.rounds = 2;
    cfg.inner_epochs = 6;
    cfg.gate_epochs = 4;
    cfg.expert_train = quick_ioc_train();
    cfg.gate_train = quick_ioc_train();
    cfg.gate_train.constraint.reset();
    cfg.seed = 15;
    std::vector<ModelSpec> specs(2, single_output_expert());
    Ensemble ens = moe_em_fit(specs, gate_spec_for(2), d, cfg);

    auto dir = testsupport::temp_dir("ensembles") / "moe";
    save_ensemble(ens, dir.string());
    Ensemble back = load_ensemble(dir.string());
    CHECK(back.mode == ens.mode);
    REQUIRE(back.expert_count() == 2);
    CHECK(params_equal(back.experts[0], ens.experts[0]));
    CHECK(params_equal(back.experts[1], ens.experts[1]));
    CHECK(params_equal(back.gate, ens.gate));
    CHECK(ensemble_accuracy(back, d) == ensemble_accuracy(ens, d));
}

}  // TEST_SUITE
