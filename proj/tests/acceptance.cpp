// Acceptance suite: one pass/fail line per criterion, exit 0 iff all pass.
// Every tolerance and threshold is pinned in code; the configurations are
// desk-scale analogs sized so each criterion fits its runtime budget.

#include <chrono>
#include <cmath>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <functional>
#include <sstream>
#include <string>
#include <vector>

#include "iocnn/ensemble.hpp"
#include "iocnn/experiment.hpp"
#include "iocnn/metrics.hpp"
#include "iocnn/serialize.hpp"
#include "iocnn/svg.hpp"
#include "iocnn/train.hpp"
#include "iocnn/verifier.hpp"
#include "support.hpp"

using namespace iocnn;
namespace fs = std::filesystem;

namespace {

struct Check {
    bool ok = true;
    std::ostringstream detail;

    void require(bool cond, const std::string& what) {
        if (!cond) {
            ok = false;
            detail << (detail.str().empty() ? "" : "; ") << "FAILED: " << what;
        }
    }
    void note(const std::string& what) {
        detail << (detail.str().empty() ? "" : "; ") << what;
    }
};

std::string fmt(double v) {
    char buf[32];
    std::snprintf(buf, sizeof(buf), "%.4g", v);
    return buf;
}

fs::path work_dir() {
    fs::path dir = fs::temp_directory_path() / "iocnn_acceptance";
    fs::create_directories(dir);
    return dir;
}

Box cube(double lo, double hi, std::size_t d) {
    Box b;
    b.lo.assign(d, lo);
    b.hi.assign(d, hi);
    return b;
}

std::string slurp(const fs::path& p) {
    std::ifstream in(p, std::ios::binary);
    return std::string((std::istreambuf_iterator<char>(in)), std::istreambuf_iterator<char>());
}

ModelSpec bn_mlp(std::size_t in, std::size_t width, std::size_t depth, std::size_t outs,
                 ActivationKind act) {
    ModelSpec s;
    s.input_shape = Shape{in};
    s.num_outputs = outs;
    s.final_map = FinalMap::softmax;
    for (std::size_t i = 0; i < depth; ++i) {
        s.layers.push_back(LayerSpec::dense(width));
        s.layers.push_back(LayerSpec::batchnorm());
        s.layers.push_back(LayerSpec::act(act));
    }
    s.layers.push_back(LayerSpec::dense(outs));
    return s;
}

// ---- criteria ---------------------------------------------------------------

Check criterion1_convexity_by_construction() {
    Check c;
    double worst = -1.0;
    for (std::uint64_t seed = 0; seed < 20; ++seed) {
        Model m = testsupport::random_ioc_model(1000 + seed);
        const std::size_t d = m.spec.input_shape.numel();
        ConvexityReport r = jensen_check(m, cube(-3.0, 3.0, d), 10000, 1e-9, seed);
        worst = std::max(worst, r.max_violation);
        c.require(r.structural_pass, "structural audit on model " + std::to_string(seed));
        c.require(r.max_violation <= 1e-9,
                  "jensen on model " + std::to_string(seed) + " violation " +
                      fmt(r.max_violation));
    }
    c.note("20 models x 10^4 triples, worst violation " + fmt(worst));

    Model tampered = build_model(
        testsupport::mlp_spec(2, {8, 8}, 1, ActivationKind::elu, FinalMap::sigmoid), 2);
    tampered.params[2].W(0, 0) = -1.0;
    ConvexityReport r = jensen_check(tampered, cube(-3.0, 3.0, 2), 1000, 1e-9, 1);
    c.require(!r.structural_pass, "injected negative weight must fail the structural audit");
    return c;
}

Check criterion2_projection_semantics() {
    Check c;
    ConstraintPolicy expo;  // exponentiate, epsilon 5
    Tensor t(1, 1);
    t[0] = -0.3;
    project_tensor(t, expo);
    const double expected = std::exp(-5.3);
    const double ulp = std::nextafter(expected, 1.0) - expected;
    c.require(std::fabs(t[0] - expected) <= ulp,
              "exponentiate(-0.3) = " + fmt(t[0]) + " differs from e^-5.3 beyond one ulp");
    c.note("e^(w-eps) for w=-0.3: " + fmt(t[0]));

    for (ProjectionStrategy s : {ProjectionStrategy::clip, ProjectionStrategy::absolute,
                                 ProjectionStrategy::exponentiate, ProjectionStrategy::shift}) {
        ConstraintPolicy p;
        p.strategy = s;
        for (std::uint64_t seed : {11u, 12u, 13u}) {
            Model m = testsupport::random_ioc_model(seed);
            Rng rng(seed * 3 + 1);
            for (const ParamRef& ref : trainable_params(m))
                for (std::size_t i = 0; i < ref.tensor->size(); ++i)
                    (*ref.tensor)[i] += rng.normal();
            ConstraintMask mask = build_mask(m, p);
            project(m, mask, p);
            c.require(audit_nonnegativity(m, mask).empty(),
                      std::string("audit after ") + strategy_name(s));
            if (s != ProjectionStrategy::shift) {
                Model once = m;
                project(m, mask, p);
                c.require(params_equal(once, m),
                          std::string(strategy_name(s)) + " must be idempotent");
            }
        }
    }
    return c;
}

Check criterion3_gradient_correctness() {
    Check c;
    double worst = 0.0;
    for (std::uint64_t seed = 1; seed <= 5; ++seed) {
        Model mlp = build_model(testsupport::mlp_spec(5, {7, 6}, 3), seed);
        Rng rng(seed + 40);
        Tensor x(4, 5);
        for (std::size_t i = 0; i < x.size(); ++i) x[i] = rng.uniform(-2.0, 2.0);
        std::vector<int> y = {0, 2, 1, 2};
        double err = testsupport::max_gradient_rel_error(mlp, x, y);
        worst = std::max(worst, err);
        c.require(err < 1e-4, "mlp gradients at seed " + std::to_string(seed));

        ModelSpec conv;
        conv.input_shape = Shape{1, 8, 8};
        conv.num_outputs = 3;
        conv.final_map = FinalMap::softmax;
        conv.layers.push_back(LayerSpec::conv2d(3, 3));
        conv.layers.push_back(LayerSpec::act(ActivationKind::elu));
        conv.layers.push_back(LayerSpec::conv2d(4, 3));
        conv.layers.push_back(LayerSpec::act(ActivationKind::leaky_relu));
        conv.layers.push_back(LayerSpec::maxpool(2));
        conv.layers.push_back(LayerSpec::dense(3));
        Model cnet = build_model(conv, seed);
        Tensor cx(3, 64);
        for (std::size_t i = 0; i < cx.size(); ++i) cx[i] = rng.uniform(-1.0, 1.0);
        std::vector<int> cy = {0, 1, 2};
        double cerr = testsupport::max_gradient_rel_error(cnet, cx, cy);
        worst = std::max(worst, cerr);
        c.require(cerr < 1e-4, "conv gradients at seed " + std::to_string(seed));
    }
    c.note("worst relative error " + fmt(worst) + " (tolerance 1e-4, h=1e-4)");
    return c;
}

Check criterion4_argmax_invariance() {
    Check c;
    Rng rng(77);
    std::size_t softmax_matches = 0, sigmoid_matches = 0;
    const std::size_t n = 100000;
    for (std::size_t i = 0; i < n; ++i) {
        Tensor logits(1, 6);
        for (std::size_t j = 0; j < 6; ++j) logits[j] = rng.uniform(-8.0, 8.0);
        Tensor probs = apply_final_map(logits, FinalMap::softmax);
        if (argmax_row(logits, 0) == argmax_row(probs, 0)) ++softmax_matches;

        double z = rng.uniform(-8.0, 8.0);
        Tensor one(1, 1);
        one[0] = z;
        double p = apply_final_map(one, FinalMap::sigmoid)(0, 0);
        bool via_sigmoid = p >= 0.5;
        bool via_logit = z >= 0.0;  // sigma^-1(0.5) = 0
        if (via_sigmoid == via_logit) ++sigmoid_matches;
    }
    c.require(softmax_matches == n, "softmax argmax must match exactly on all rows");
    c.require(sigmoid_matches == n, "sigmoid threshold decisions must match the logit sign");
    c.note("10^5 rows, exact agreement for softmax argmax and sigmoid threshold");
    return c;
}

Check criterion5_identity_probe() {
    Check c;
    IdentityProbeConfig cfg;  // width 32, 4000 epochs, lr 1e-2
    double elu = identity_fit_probe(ActivationKind::elu, cfg);
    double relu = identity_fit_probe(ActivationKind::relu, cfg);
    c.require(elu <= 1e-3, "elu identity mse " + fmt(elu) + " must be <= 1e-3");
    c.require(relu >= 10.0 * elu, "relu mse " + fmt(relu) + " must be >= 10x elu " + fmt(elu));
    c.note("elu mse " + fmt(elu) + ", relu mse " + fmt(relu) + " (" + fmt(relu / elu) + "x)");
    return c;
}

Check criterion6_random_label_resistance() {
    Check c;
    // The n=1000 image subset flows through the real pipeline: IDX files,
    // config-driven whitening/splitting, and run_noise_sweep at fraction 1.
    // The unconstrained baseline trains with Adam (memorizes the noise); the
    // constrained run uses Algorithm-1 projected sgd.
    Dataset raw = testsupport::synthetic_digits(1250, 2, 5, 0.25, 7);
    fs::path dir = work_dir();
    std::string img = (dir / "c6-images-idx3-ubyte").string();
    std::string lab = (dir / "c6-labels-idx1-ubyte").string();
    save_idx(raw, img, lab);

    std::string cfg_json = R"({
      "schema_version": 1,
      "seed": 1,
      "dataset": {"idx_images": ")" + img + R"(", "idx_labels": ")" + lab + R"("},
      "whiten": true,
      "whiten_floor": 0.01,
      "split": [0.8, 0.1, 0.1],
      "model": {
        "input_shape": [49], "num_outputs": 2, "final_map": "softmax",
        "layers": [
          {"kind": "dense", "width": 16}, {"kind": "batchnorm"},
          {"kind": "activation", "activation": "relu"},
          {"kind": "dense", "width": 16}, {"kind": "batchnorm"},
          {"kind": "activation", "activation": "relu"},
          {"kind": "dense", "width": 16}, {"kind": "batchnorm"},
          {"kind": "activation", "activation": "relu"},
          {"kind": "dense", "width": 2}
        ]
      },
      "constraint": {"strategy": "exponentiate", "epsilon": 5.0, "constrain_bn_gamma": true},
      "train": {"optimizer": "adam", "learning_rate": 0.001, "batch_size": 100,
                "max_epochs": 1200, "convergence_loss": 0.001},
      "ioc_train": {"optimizer": "sgd", "learning_rate": 0.003, "batch_size": 100,
                    "max_epochs": 1200, "convergence_loss": 0.001},
      "experiment": {"kind": "noise_sweep", "ioc_widen_factor": 1, "fractions": [1.0]}
    })";
    ExperimentConfig config = parse_config(cfg_json);
    fs::path out = dir / "c6-sweep";
    fs::remove_all(out);
    std::vector<RunReport> reports = run_noise_sweep(config, out.string());

    double nn_train = -1.0, nn_gap = 0.0, ioc_train = -1.0, ioc_gap = 0.0;
    for (const RunReport& r : reports) {
        if (r.phase != "convergence") continue;
        if (r.variant == "unconstrained") {
            nn_train = r.train_acc;
            nn_gap = r.gen_gap;
        } else {
            ioc_train = r.train_acc;
            ioc_gap = r.gen_gap;
        }
    }
    c.require(nn_train >= 0.95, "unconstrained train acc " + fmt(nn_train) + " must be >= 0.95");
    c.require(ioc_train <= 0.65, "ioc train acc " + fmt(ioc_train) + " must be <= chance + 0.15");
    c.require(std::fabs(ioc_gap) <= 0.15,
              "ioc |gen gap| " + fmt(std::fabs(ioc_gap)) + " must be <= 0.15");
    c.require(ioc_gap < nn_gap, "ioc convergence gap must undercut the unconstrained gap");
    c.require(fs::exists(out / "noise_sweep.csv"), "sweep must emit its table csv");
    c.note("nn train " + fmt(nn_train) + " gap " + fmt(nn_gap) + "; ioc train " +
           fmt(ioc_train) + " gap " + fmt(ioc_gap));
    return c;
}

Check criterion7_generalization_direction() {
    Check c;
    for (std::uint64_t seed : {2u, 4u, 5u}) {
        Dataset all = gen_disk_ring(2000, 7);
        SplitResult parts = split(all, {0.8, 0.1, 0.1}, 3);
        TrainConfig cfg;
        cfg.learning_rate = 1e-2;
        cfg.batch_size = 64;
        cfg.max_epochs = 150;
        cfg.convergence_loss = 0.001;
        cfg.seed = derive_seed(seed, 0);
        Model nn = build_model(testsupport::mlp_spec(2, {24, 24}, 2, ActivationKind::relu),
                               derive_seed(seed, 10));
        fit(nn, parts.train, parts.val, cfg);
        double nn_gap = generalization_gap(evaluate(nn, parts.train).accuracy,
                                           evaluate(nn, parts.test).accuracy);
        TrainConfig icfg = cfg;
        icfg.constraint = ConstraintPolicy{};
        icfg.seed = derive_seed(seed, 1);
        Model ioc = build_model(testsupport::mlp_spec(2, {24, 24}, 2, ActivationKind::elu),
                                derive_seed(seed, 11));
        fit(ioc, parts.train, parts.val, icfg);
        double ioc_gap = generalization_gap(evaluate(ioc, parts.train).accuracy,
                                            evaluate(ioc, parts.test).accuracy);
        c.require(ioc_gap <= nn_gap, "disk_ring seed " + std::to_string(seed) + ": ioc gap " +
                                         fmt(ioc_gap) + " vs nn gap " + fmt(nn_gap));
    }

    for (std::uint64_t seed : {2u, 4u, 5u}) {
        Dataset all = testsupport::synthetic_digits(6250, 10, 42, 0.9, 14);
        WhiteningTransform t = whiten_fit(all, 1e-2);
        all = whiten_apply(t, all);
        SplitResult parts = split(all, {0.8, 0.1, 0.1}, 3);  // train n = 5000
        TrainConfig cfg;
        cfg.learning_rate = 1e-3;
        cfg.batch_size = 125;
        cfg.max_epochs = 40;
        cfg.convergence_loss = 0.001;
        cfg.seed = derive_seed(seed, 0);
        Model nn = build_model(bn_mlp(196, 64, 2, 10, ActivationKind::relu),
                               derive_seed(seed, 10));
        fit(nn, parts.train, parts.val, cfg);
        double nn_train = evaluate(nn, parts.train).accuracy;
        double nn_test = evaluate(nn, parts.test).accuracy;
        TrainConfig icfg = cfg;
        icfg.constraint = ConstraintPolicy{};
        icfg.seed = derive_seed(seed, 1);
        Model ioc = build_model(bn_mlp(196, 64, 2, 10, ActivationKind::elu),
                                derive_seed(seed, 11));
        fit(ioc, parts.train, parts.val, icfg);
        double ioc_train = evaluate(ioc, parts.train).accuracy;
        double ioc_test = evaluate(ioc, parts.test).accuracy;
        double nn_gap = nn_train - nn_test, ioc_gap = ioc_train - ioc_test;
        c.require(ioc_gap <= nn_gap, "digits seed " + std::to_string(seed) + ": ioc gap " +
                                         fmt(ioc_gap) + " vs nn gap " + fmt(nn_gap));
        if (seed == 2)
            c.note("digits seed 2: nn gap " + fmt(nn_gap) + ", ioc gap " + fmt(ioc_gap));
    }
    return c;
}

Check criterion8_boundary_geometry() {
    Check c;
    Dataset d = gen_disk_ring(2000, 7);
    SplitResult parts = split(d, {0.8, 0.1, 0.1}, 3);
    TrainConfig cfg;
    cfg.learning_rate = 1e-2;
    cfg.batch_size = 64;
    cfg.max_epochs = 200;
    cfg.convergence_loss = 0.001;
    cfg.constraint = ConstraintPolicy{};
    cfg.seed = derive_seed(1, 0);

    GridSpec grid;
    grid.x_lo = grid.y_lo = -3.0;
    grid.x_hi = grid.y_hi = 3.0;
    grid.nx = grid.ny = 101;

    Model single = build_model(
        testsupport::mlp_spec(2, {24, 24}, 1, ActivationKind::elu, FinalMap::sigmoid),
        derive_seed(1, 1));
    fit(single, parts.train, parts.val, cfg);
    BoundaryGrid g1 = boundary_extract(single, grid);
    c.require(sublevel_midpoint_convex(g1, 0.0, 1e-9),
              "single-output negative region must pass the grid midpoint test");

    Model both = build_model(
        testsupport::mlp_spec(2, {24, 24}, 2, ActivationKind::elu, FinalMap::softmax),
        derive_seed(1, 2));
    fit(both, parts.train, parts.val, cfg);
    double train_acc = evaluate(both, parts.train).accuracy;
    BoundaryGrid g2 = boundary_extract(both, grid);
    bool closed = region_midpoint_closed(g2, 1);
    c.require(train_acc >= 0.95, "two-output train acc " + fmt(train_acc) + " must be >= 0.95");
    c.require(!closed, "two-output class-1 region must fail the midpoint test (non-convex)");
    c.note("single-output sublevel convex; two-output acc " + fmt(train_acc) +
           " with non-convex positive region");
    return c;
}

Check criterion9_ensembles() {
    Check c;
    Dataset d = gen_vshape(1500, 17);
    ModelSpec expert =
        testsupport::mlp_spec(2, {16, 16}, 1, ActivationKind::elu, FinalMap::sigmoid);
    ModelSpec gate = testsupport::mlp_spec(2, {32}, 5, ActivationKind::elu, FinalMap::softmax);

    MoeConfig mc;
    mc.rounds = 6;
    mc.inner_epochs = 40;
    mc.gate_epochs = 40;
    mc.expert_train.learning_rate = 1e-2;
    mc.expert_train.batch_size = 64;
    mc.expert_train.constraint = ConstraintPolicy{};
    mc.gate_train.learning_rate = 1e-2;
    mc.gate_train.batch_size = 64;
    mc.seed = 1;

    std::vector<ModelSpec> specs(5, expert);
    Ensemble ens = moe_em_fit(specs, gate, d, mc);
    double gate_acc = ensemble_accuracy(ens, d);
    c.require(gate_acc >= 0.95, "5-expert moe train acc " + fmt(gate_acc) + " must be >= 0.95");

    Box box = cube(-2.4, 2.4, 2);
    for (std::size_t k = 0; k < ens.expert_count(); ++k) {
        ConvexityReport r = jensen_check(ens.experts[k], box, 3000, 1e-9, 5 + k);
        c.require(r.pass(), "expert " + std::to_string(k) + " must be jensen-convex");
    }

    // single expert = the p = 1 ensemble, as reported by the harness
    ModelSpec gate1 = testsupport::mlp_spec(2, {32}, 1, ActivationKind::elu, FinalMap::softmax);
    Ensemble one = moe_em_fit({expert}, gate1, d, mc);
    double single_acc = ensemble_accuracy(one, d);

    double oracle = oracle_accuracy(ens.experts, d);
    c.require(oracle >= gate_acc, "oracle must dominate the gated ensemble (definitional)");
    for (const Model& ex : ens.experts)
        c.require(oracle >= single_model_accuracy(ex, d),
                  "oracle must dominate every member expert (definitional)");
    c.require(gate_acc >= single_acc, "gated ensemble must beat the single expert here");
    c.note("single " + fmt(single_acc) + " <= gate " + fmt(gate_acc) + " <= oracle " +
           fmt(oracle));
    return c;
}

Check criterion10_calibration() {
    Check c;
    std::vector<double> conf;
    std::vector<bool> correct;
    for (int i = 0; i < 100; ++i) {
        conf.push_back(0.9);
        correct.push_back(true);
    }
    for (int i = 0; i < 100; ++i) {
        conf.push_back(0.6);
        correct.push_back(i % 2 == 0);
    }
    EceResult r = ece(conf, correct, 10);
    c.require(std::fabs(r.ece - 0.10) <= 1e-12,
              "two-bin fixture ece " + fmt(r.ece) + " must equal 0.10 within 1e-12");
    std::size_t total = 0;
    for (const ReliabilityBin& b : r.bins.bins) total += b.sample_count;
    c.require(total == conf.size(), "reliability bins must partition all samples");
    c.note("fixture ece " + fmt(r.ece) + ", " + std::to_string(total) + " samples binned");
    return c;
}

Check criterion11_determinism_persistence() {
    Check c;
    ExperimentConfig config = parse_config(R"({
      "schema_version": 1,
      "seed": 33,
      "dataset": {"generator": "disk_ring", "n": 240},
      "split": [0.7, 0.15, 0.15],
      "model": {
        "input_shape": [2], "num_outputs": 2, "final_map": "softmax",
        "layers": [
          {"kind": "dense", "width": 8},
          {"kind": "activation", "activation": "relu"},
          {"kind": "dense", "width": 2}
        ]
      },
      "constraint": {"strategy": "exponentiate", "epsilon": 5.0, "constrain_bn_gamma": true},
      "train": {"learning_rate": 0.01, "batch_size": 32, "max_epochs": 6,
                "convergence_loss": 0.0},
      "experiment": {"kind": "compare", "n_triples": 1000}
    })");
    fs::path d1 = work_dir() / "det1", d2 = work_dir() / "det2";
    fs::remove_all(d1);
    fs::remove_all(d2);
    run_compare(config, d1.string());
    run_compare(config, d2.string());
    for (const char* name : {"unconstrained_history.csv", "ioc_history.csv", "report.csv",
                             "loss_curves.svg", "ioc_convexity.json", "ioc_model.iocnn"}) {
        c.require(slurp(d1 / name) == slurp(d2 / name),
                  std::string(name) + " must be byte-identical across reruns");
    }

    Model m = testsupport::random_ioc_model(321);
    fs::path mp = work_dir() / "roundtrip.iocnn";
    save_model(m, mp.string());
    c.require(params_equal(m, load_model(mp.string()).model),
              "model round trip must be value-identical");
    c.note("compare rerun byte-identical; round trip value-identical");
    return c;
}

}  // namespace

int main() {
    struct Criterion {
        int id;
        const char* title;
        std::function<Check()> run;
    };
    std::vector<Criterion> criteria = {
        {1, "convexity by construction (20 random IOC models, 10^4 triples, 1e-9)",
         criterion1_convexity_by_construction},
        {2, "projection semantics (e^(w-5) exact, audits empty, idempotence)",
         criterion2_projection_semantics},
        {3, "gradient correctness vs central differences (rel err < 1e-4, 5 seeds)",
         criterion3_gradient_correctness},
        {4, "argmax invariance under softmax and sigmoid thresholds (10^5 rows, exact)",
         criterion4_argmax_invariance},
        {5, "identity-mapping probe (elu <= 1e-3 mse, relu >= 10x)",
         criterion5_identity_probe},
        {6, "random-label resistance (n=1000 image subset, 100% noise)",
         criterion6_random_label_resistance},
        {7, "generalization direction (disk_ring + digit subset, 3 seeds each)",
         criterion7_generalization_direction},
        {8, "boundary geometry (convex sublevel vs non-convex argmax region)",
         criterion8_boundary_geometry},
        {9, "ensembles (5-expert moe >= 0.95, convex experts, oracle ordering)",
         criterion9_ensembles},
        {10, "calibration plumbing (two-bin fixture ece = 0.10 +- 1e-12)",
         criterion10_calibration},
        {11, "determinism and persistence (byte-identical reruns, exact round trips)",
         criterion11_determinism_persistence},
    };

    int failures = 0;
    for (const Criterion& crit : criteria) {
        auto t0 = std::chrono::steady_clock::now();
        Check result;
        try {
            result = crit.run();
        } catch (const std::exception& e) {
            result.ok = false;
            result.detail << "exception: " << e.what();
        }
        double secs = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
        std::printf("%s criterion %2d (%6.1fs): %s%s%s\n", result.ok ? "PASS" : "FAIL", crit.id,
                    secs, crit.title, result.detail.str().empty() ? "" : " | ",
                    result.detail.str().c_str());
        std::fflush(stdout);
        if (!result.ok) ++failures;
    }
    if (failures) std::printf("%d criterion(s) failed\n", failures);
    else std::printf("all %zu criteria passed\n", criteria.size());
    return failures == 0 ? 0 : 1;
}
