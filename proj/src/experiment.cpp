#include "iocnn/experiment.hpp"

#include <filesystem>
#include <fstream>
#include <iostream>
#include <set>

#include <nlohmann/json.hpp>

#include "iocnn/rng.hpp"
#include "iocnn/serialize.hpp"
#include "iocnn/svg.hpp"

namespace iocnn {

namespace fs = std::filesystem;
using nlohmann::json;

const char* experiment_kind_name(ExperimentKind k) {
    switch (k) {
        case ExperimentKind::compare: return "compare";
        case ExperimentKind::noise_sweep: return "noise_sweep";
        case ExperimentKind::moe: return "moe";
        case ExperimentKind::boost: return "boost";
        case ExperimentKind::verify: return "verify";
        case ExperimentKind::calibrate: return "calibrate";
    }
    return "?";
}

// ---- strict config parsing --------------------------------------------------

namespace {

void reject_unknown_keys(const json& obj, const std::set<std::string>& allowed,
                         const std::string& where) {
    for (auto it = obj.begin(); it != obj.end(); ++it)
        if (!allowed.count(it.key()))
            throw std::invalid_argument("config: unknown key '" + it.key() + "' in " + where);
}

LrSchedule parse_schedule(const json& j) {
    reject_unknown_keys(j, {"kind", "decay", "every_n_epochs"}, "lr_schedule");
    LrSchedule s;
    const std::string kind = j.at("kind").get<std::string>();
    if (kind == "constant") {
        s.kind = LrSchedule::Kind::constant;
    } else if (kind == "step") {
        s.kind = LrSchedule::Kind::step;
        s.decay = j.at("decay").get<double>();
        s.every_n_epochs = j.at("every_n_epochs").get<std::size_t>();
        if (s.every_n_epochs == 0)
            throw std::invalid_argument("config: lr_schedule.every_n_epochs must be >= 1");
    } else {
        throw std::invalid_argument("config: unknown lr_schedule kind '" + kind + "'");
    }
    return s;
}

TrainConfig parse_train(const json& j) {
    reject_unknown_keys(j,
                        {"optimizer", "learning_rate", "lr_schedule", "batch_size", "max_epochs",
                         "convergence_loss", "early_stopping"},
                        "train");
    TrainConfig t;
    const std::string opt = j.value("optimizer", std::string("adam"));
    if (opt == "adam") t.optimizer = OptimizerKind::adam;
    else if (opt == "sgd") t.optimizer = OptimizerKind::sgd;
    else throw std::invalid_argument("config: unknown optimizer '" + opt + "'");
    t.learning_rate = j.value("learning_rate", 1e-4);
    if (j.contains("lr_schedule")) t.lr_schedule = parse_schedule(j.at("lr_schedule"));
    t.batch_size = j.value("batch_size", std::size_t{32});
    t.max_epochs = j.value("max_epochs", std::size_t{2000});
    t.convergence_loss = j.value("convergence_loss", 0.001);
    if (j.contains("early_stopping")) {
        const json& es = j.at("early_stopping");
        if (es.is_string() && es.get<std::string>() == "off") {
            t.patience.reset();
        } else {
            reject_unknown_keys(es, {"patience"}, "early_stopping");
            t.patience = es.at("patience").get<std::size_t>();
        }
    }
    t.validate();
    return t;
}

DatasetConfig parse_dataset(const json& j) {
    reject_unknown_keys(
        j, {"generator", "n", "idx_images", "idx_labels", "limit", "binarize_positive"},
        "dataset");
    DatasetConfig d;
    if (j.contains("generator")) {
        d.generator = j.at("generator").get<std::string>();
        d.n = j.at("n").get<std::size_t>();
    } else {
        d.idx_images = j.at("idx_images").get<std::string>();
        d.idx_labels = j.at("idx_labels").get<std::string>();
        d.limit = j.value("limit", std::size_t{0});
    }
    if (j.contains("binarize_positive"))
        d.binarize_positive = j.at("binarize_positive").get<std::vector<int>>();
    return d;
}

Box parse_box(const json& j) {
    reject_unknown_keys(j, {"lo", "hi"}, "box");
    Box b;
    b.lo = j.at("lo").get<std::vector<double>>();
    b.hi = j.at("hi").get<std::vector<double>>();
    if (b.lo.size() != b.hi.size())
        throw std::invalid_argument("config: box lo/hi dimension mismatch");
    return b;
}

void check_model_json_keys(const json& j) {
    reject_unknown_keys(j, {"input_shape", "num_outputs", "final_map", "layers"}, "model");
    static const std::set<std::string> layer_keys = {"kind",   "width",  "filters", "kernel",
                                                     "stride", "activation", "source"};
    for (const json& jl : j.at("layers")) reject_unknown_keys(jl, layer_keys, "model.layers");
}

}  // namespace

ExperimentConfig parse_config(const std::string& json_text) {
    json j = json::parse(json_text);
    reject_unknown_keys(j,
                        {"schema_version", "seed", "dataset", "whiten", "whiten_floor", "split",
                         "model", "constraint", "train", "ioc_train", "experiment"},
                        "config");
    ExperimentConfig c;
    c.schema_version = j.at("schema_version").get<int>();
    if (c.schema_version != 1)
        throw std::invalid_argument("config: unsupported schema_version " +
                                    std::to_string(c.schema_version));
    c.seed = j.at("seed").get<std::uint64_t>();
    c.dataset = parse_dataset(j.at("dataset"));
    c.whiten = j.value("whiten", false);
    c.whiten_floor = j.value("whiten_floor", 1e-5);
    if (j.contains("split")) {
        auto v = j.at("split").get<std::vector<double>>();
        if (v.size() != 3) throw std::invalid_argument("config: split needs three fractions");
        c.split_fractions = {v[0], v[1], v[2]};
    }
    if (j.contains("model")) {
        check_model_json_keys(j.at("model"));
        c.model = spec_from_json(j.at("model"));
    }
    if (j.contains("constraint")) {
        reject_unknown_keys(j.at("constraint"), {"strategy", "epsilon", "constrain_bn_gamma"},
                            "constraint");
        c.constraint = policy_from_json(j.at("constraint"));
    }
    if (j.contains("train")) c.train = parse_train(j.at("train"));
    if (j.contains("ioc_train")) c.ioc_train = parse_train(j.at("ioc_train"));

    const json& e = j.at("experiment");
    reject_unknown_keys(e,
                        {"kind", "ioc_widen_factor", "fractions", "experts", "rounds",
                         "inner_epochs", "gate", "model_file", "n_triples", "tolerance", "box",
                         "n_bins"},
                        "experiment");
    const std::string kind = e.at("kind").get<std::string>();
    if (kind == "compare") c.kind = ExperimentKind::compare;
    else if (kind == "noise_sweep") c.kind = ExperimentKind::noise_sweep;
    else if (kind == "moe") c.kind = ExperimentKind::moe;
    else if (kind == "boost") c.kind = ExperimentKind::boost;
    else if (kind == "verify") c.kind = ExperimentKind::verify;
    else if (kind == "calibrate") c.kind = ExperimentKind::calibrate;
    else throw std::invalid_argument("config: unknown experiment kind '" + kind + "'");
    c.ioc_widen_factor = e.value("ioc_widen_factor", 2.0);
    if (e.contains("fractions")) c.noise_fractions = e.at("fractions").get<std::vector<double>>();
    c.experts = e.value("experts", std::size_t{5});
    c.rounds = e.value("rounds", std::size_t{5});
    c.inner_epochs = e.value("inner_epochs", std::size_t{20});
    if (e.contains("gate")) {
        check_model_json_keys(e.at("gate"));
        c.gate = spec_from_json(e.at("gate"));
    }
    c.model_file = e.value("model_file", std::string());
    c.n_triples = e.value("n_triples", std::size_t{10000});
    c.tolerance = e.value("tolerance", 1e-9);
    if (e.contains("box")) c.box = parse_box(e.at("box"));
    c.n_bins = e.value("n_bins", std::size_t{10});
    return c;
}

ExperimentConfig load_config(const std::string& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw std::runtime_error("cannot open config: " + path);
    std::string text((std::istreambuf_iterator<char>(in)), std::istreambuf_iterator<char>());
    return parse_config(text);
}

// ---- dataset assembly --------------------------------------------------------

Dataset build_dataset(const ExperimentConfig& config) {
    Dataset d;
    const DatasetConfig& dc = config.dataset;
    if (!dc.generator.empty()) {
        if (dc.generator == "disk_ring") d = gen_disk_ring(dc.n, config.seed);
        else if (dc.generator == "vshape") d = gen_vshape(dc.n, config.seed);
        else throw std::invalid_argument("unknown dataset generator: " + dc.generator);
    } else {
        d = load_idx(dc.idx_images, dc.idx_labels);
        if (dc.limit > 0 && dc.limit < d.size()) {
            std::vector<std::size_t> idx(dc.limit);
            for (std::size_t i = 0; i < dc.limit; ++i) idx[i] = i;
            d = subset(d, idx);
        }
    }
    if (dc.binarize_positive) {
        std::set<int> pos(dc.binarize_positive->begin(), dc.binarize_positive->end());
        for (int& lab : d.labels) lab = pos.count(lab) ? 1 : 0;
        d.num_classes = 2;
        d.provenance += "|binarized";
    }
    if (config.whiten) {
        WhiteningTransform t = whiten_fit(d, config.whiten_floor);
        d = whiten_apply(t, d);
    }
    return d;
}

ModelSpec derive_ioc_spec(const ModelSpec& base, double widen_factor) {
    ModelSpec ioc = base;
    for (LayerSpec& l : ioc.layers) {
        if (l.kind == LayerKind::dense) {
            l.width = static_cast<std::size_t>(std::llround(l.width * widen_factor));
            break;
        }
        if (l.kind == LayerKind::conv2d) {
            l.filters = static_cast<std::size_t>(std::llround(l.filters * widen_factor));
            break;
        }
    }
    // Widening the first layer changes downstream fan-in only for layers that
    // flatten; dense layers take any input width, so shapes stay valid.
    for (LayerSpec& l : ioc.layers)
        if (l.kind == LayerKind::activation && l.activation == ActivationKind::relu)
            l.activation = ActivationKind::elu;
    return ioc;
}

// ---- experiment runners --------------------------------------------------------

namespace {

struct VariantOutcome {
    FitResult fit_result;
    Model final_model;
    RunReport peak, convergence;
};

RunReport make_report(const std::string& variant, const std::string& phase, double noise,
                      const Model& model, const Dataset& train, const Dataset& test) {
    RunReport r;
    r.variant = variant;
    r.phase = phase;
    r.noise_fraction = noise;
    r.train_acc = evaluate(model, train).accuracy;
    r.test_acc = evaluate(model, test).accuracy;
    r.gen_gap = generalization_gap(r.train_acc, r.test_acc);
    return r;
}

VariantOutcome train_variant(const std::string& name, const ModelSpec& spec,
                             const TrainConfig& base_cfg,
                             const std::optional<ConstraintPolicy>& policy,
                             const Dataset& train, const Dataset& val, const Dataset& test,
                             double noise, std::uint64_t seed) {
    TrainConfig cfg = base_cfg;
    cfg.constraint = policy;
    cfg.seed = derive_seed(seed, policy ? 1 : 0);
    Model model = build_model(spec, derive_seed(seed, policy ? 11 : 10));
    VariantOutcome out;
    out.fit_result = fit(model, train, val, cfg);
    out.final_model = model;
    out.peak = make_report(name, "peak", noise, out.fit_result.best, train, test);
    out.convergence = make_report(name, "convergence", noise, model, train, test);
    return out;
}

void copy_config(const std::string& config_path, const std::string& out_dir) {
    if (config_path.empty()) return;
    std::error_code ec;
    fs::copy_file(config_path, fs::path(out_dir) / "config.json",
                  fs::copy_options::overwrite_existing, ec);
}

std::vector<svg::Series> history_series(const std::string& prefix, const TrainHistory& h,
                                        bool loss) {
    svg::Series train_s{prefix + " train", {}}, val_s{prefix + " val", {}};
    for (const EpochRecord& r : h.records) {
        train_s.values.push_back(loss ? r.train_loss : r.train_acc);
        val_s.values.push_back(loss ? r.val_loss : r.val_acc);
    }
    return {train_s, val_s};
}

// Two histories in one chart; the shorter run holds its last value so the
// series lengths match.
std::vector<svg::Series> merged_series(const TrainHistory& a, const TrainHistory& b,
                                       const std::string& name_a, const std::string& name_b,
                                       bool loss) {
    std::vector<svg::Series> sa = history_series(name_a, a, loss);
    std::vector<svg::Series> sb = history_series(name_b, b, loss);
    std::vector<svg::Series> all;
    all.insert(all.end(), sa.begin(), sa.end());
    all.insert(all.end(), sb.begin(), sb.end());
    std::size_t n = 0;
    for (const svg::Series& s : all) n = std::max(n, s.values.size());
    for (svg::Series& s : all)
        while (s.values.size() < n) s.values.push_back(s.values.back());
    return all;
}

ModelSpec default_gate_spec(const Dataset& data, std::size_t p) {
    // One-hidden-layer MLP over the raw input.
    ModelSpec g;
    g.input_shape = Shape{data.dim()};
    g.num_outputs = p;
    g.final_map = FinalMap::softmax;
    std::size_t hidden = std::max<std::size_t>(16, 4 * p);
    g.layers.push_back(LayerSpec::dense(hidden));
    g.layers.push_back(LayerSpec::act(ActivationKind::elu));
    g.layers.push_back(LayerSpec::dense(p));
    return g;
}

void write_accuracy_by_count_csv(const std::vector<double>& accs, const std::string& path) {
    std::ofstream out(path, std::ios::binary);
    if (!out) throw std::runtime_error("cannot open for writing: " + path);
    out << "experts,ensemble_acc\n";
    for (std::size_t k = 0; k < accs.size(); ++k)
        out << (k + 1) << ',' << format_shortest(accs[k]) << '\n';
}

void write_ensemble_report_csv(const EnsembleRunResult& r, const std::string& path) {
    std::ofstream out(path, std::ios::binary);
    if (!out) throw std::runtime_error("cannot open for writing: " + path);
    out << "single_expert,gate,oracle\n";
    out << format_shortest(r.single_expert_acc) << ',' << format_shortest(r.gate_acc) << ','
        << format_shortest(r.oracle_acc) << '\n';
}

}  // namespace

CompareResult run_compare(const ExperimentConfig& config, const std::string& out_dir) {
    fs::create_directories(out_dir);
    Dataset data = build_dataset(config);
    SplitResult parts = split(data, config.split_fractions, derive_seed(config.seed, 42));

    VariantOutcome nn = train_variant("unconstrained", config.model, config.train, std::nullopt,
                                      parts.train, parts.val, parts.test, 0.0, config.seed);
    ModelSpec ioc_spec = derive_ioc_spec(config.model, config.ioc_widen_factor);
    VariantOutcome ioc =
        train_variant("ioc", ioc_spec, config.ioc_train ? *config.ioc_train : config.train,
                      config.constraint, parts.train, parts.val, parts.test, 0.0, config.seed);

    CompareResult result;
    result.reports = {nn.peak, nn.convergence, ioc.peak, ioc.convergence};

    write_history_csv(nn.fit_result.history, out_dir + "/unconstrained_history.csv");
    write_history_csv(ioc.fit_result.history, out_dir + "/ioc_history.csv");
    write_reports_csv(result.reports, out_dir + "/report.csv");
    svg::loss_curves(
        merged_series(nn.fit_result.history, ioc.fit_result.history, "nn", "ioc", true),
        out_dir + "/loss_curves.svg");
    save_model(nn.final_model, out_dir + "/unconstrained_model.iocnn");
    save_model(ioc.final_model, out_dir + "/ioc_model.iocnn", config.constraint);

    Box box = bounding_box(parts.train, 0.2);
    result.ioc_convexity =
        jensen_check(ioc.final_model, box, config.n_triples, config.tolerance,
                     derive_seed(config.seed, 77));
    std::ofstream rep(out_dir + "/ioc_convexity.json", std::ios::binary);
    rep << report_to_json(result.ioc_convexity) << '\n';
    return result;
}

std::vector<RunReport> run_noise_sweep(const ExperimentConfig& config,
                                       const std::string& out_dir) {
    fs::create_directories(out_dir);
    Dataset data = build_dataset(config);
    SplitResult parts = split(data, config.split_fractions, derive_seed(config.seed, 42));
    ModelSpec ioc_spec = derive_ioc_spec(config.model, config.ioc_widen_factor);

    std::vector<RunReport> reports;
    for (std::size_t fi = 0; fi < config.noise_fractions.size(); ++fi) {
        const double frac = config.noise_fractions[fi];
        const std::uint64_t frac_seed =
            config.seed ^ derive_seed(0x5eed, static_cast<std::uint64_t>(frac * 1e6) + fi);
        Dataset noisy_train = randomize_labels(parts.train, frac, frac_seed);
        // Validation labels follow the same corruption so "peak" matches the
        // early-stopping signal available during noisy training; the test
        // split keeps true labels.
        Dataset noisy_val = randomize_labels(parts.val, frac, derive_seed(frac_seed, 1));

        VariantOutcome nn =
            train_variant("unconstrained", config.model, config.train, std::nullopt, noisy_train,
                          noisy_val, parts.test, frac, frac_seed);
        VariantOutcome ioc = train_variant(
            "ioc", ioc_spec, config.ioc_train ? *config.ioc_train : config.train,
            config.constraint, noisy_train, noisy_val, parts.test, frac, frac_seed);

        reports.push_back(nn.peak);
        reports.push_back(nn.convergence);
        reports.push_back(ioc.peak);
        reports.push_back(ioc.convergence);

        std::string tag = "noise_" + format_shortest(frac);
        svg::accuracy_curves(
            merged_series(nn.fit_result.history, ioc.fit_result.history, "nn", "ioc", false),
            out_dir + "/" + tag + "_accuracy.svg");
        write_history_csv(nn.fit_result.history, out_dir + "/" + tag + "_unconstrained.csv");
        write_history_csv(ioc.fit_result.history, out_dir + "/" + tag + "_ioc.csv");
        save_model(nn.final_model, out_dir + "/" + tag + "_unconstrained.iocnn");
        save_model(ioc.final_model, out_dir + "/" + tag + "_ioc.iocnn", config.constraint);
    }
    write_reports_csv(reports, out_dir + "/noise_sweep.csv");
    return reports;
}

namespace {

MoeConfig make_moe_config(const ExperimentConfig& config) {
    MoeConfig mc;
    mc.rounds = config.rounds;
    mc.inner_epochs = config.inner_epochs;
    mc.gate_epochs = config.inner_epochs;
    mc.expert_train = config.ioc_train ? *config.ioc_train : config.train;
    mc.expert_train.constraint = config.constraint;
    mc.gate_train = config.train;
    mc.gate_train.constraint.reset();
    mc.seed = derive_seed(config.seed, 0xA11);
    return mc;
}

}  // namespace

EnsembleRunResult run_moe(const ExperimentConfig& config, const std::string& out_dir) {
    fs::create_directories(out_dir);
    Dataset data = build_dataset(config);
    SplitResult parts = split(data, config.split_fractions, derive_seed(config.seed, 42));

    EnsembleRunResult result;
    Ensemble full;
    for (std::size_t p = 1; p <= config.experts; ++p) {
        std::vector<ModelSpec> expert_specs(p, config.model);
        ModelSpec gate_spec = config.gate ? *config.gate : default_gate_spec(data, p);
        gate_spec.num_outputs = p;
        if (!gate_spec.layers.empty() && gate_spec.layers.back().kind == LayerKind::dense)
            gate_spec.layers.back().width = p;
        MoeConfig mc = make_moe_config(config);
        std::vector<MoeEvent> events;
        Ensemble ens = moe_em_fit(expert_specs, gate_spec, parts.train, mc, &events);
        result.acc_by_expert_count.push_back(ensemble_accuracy(ens, parts.test));
        if (p == config.experts) full = std::move(ens);
    }

    result.single_expert_acc = result.acc_by_expert_count.front();
    result.gate_acc = result.acc_by_expert_count.back();
    result.oracle_acc = oracle_accuracy(full.experts, parts.test);

    save_ensemble(full, out_dir + "/ensemble");
    write_accuracy_by_count_csv(result.acc_by_expert_count,
                                out_dir + "/accuracy_vs_experts.csv");
    write_ensemble_report_csv(result, out_dir + "/report.csv");

    if (data.dim() == 2) {
        Box box = bounding_box(data, 0.1);
        GridSpec grid{box.lo[0], box.hi[0], box.lo[1], box.hi[1], 161, 161};
        Tensor points(grid.nx * grid.ny, 2);
        BoundaryGrid bg;
        bg.grid = grid;
        for (std::size_t iy = 0; iy < grid.ny; ++iy)
            for (std::size_t ix = 0; ix < grid.nx; ++ix) {
                points(iy * grid.nx + ix, 0) = bg.x_at(ix);
                points(iy * grid.nx + ix, 1) = bg.y_at(iy);
            }
        Tensor w = gate_weights(full, points);
        std::vector<int> partition(points.rows());
        for (std::size_t i = 0; i < points.rows(); ++i)
            partition[i] = static_cast<int>(argmax_row(w, i));
        svg::label_grid(partition, grid.nx, grid.ny, grid.x_lo, grid.x_hi, grid.y_lo, grid.y_hi,
                        out_dir + "/gate_partition.svg");
        for (std::size_t k = 0; k < full.expert_count(); ++k) {
            BoundaryGrid eb = boundary_extract(full.experts[k], grid);
            svg::boundary_map(eb, out_dir + "/expert_" + std::to_string(k) + "_boundary.svg");
        }
    }
    return result;
}

EnsembleRunResult run_boost(const ExperimentConfig& config, const std::string& out_dir) {
    fs::create_directories(out_dir);
    Dataset data = build_dataset(config);
    SplitResult parts = split(data, config.split_fractions, derive_seed(config.seed, 42));

    BoostConfig bc;
    bc.n_experts = config.experts;
    bc.expert_train = config.ioc_train ? *config.ioc_train : config.train;
    bc.expert_train.constraint = config.constraint;
    bc.seed = derive_seed(config.seed, 0xB005);
    BoostResult boost = boost_fit(config.model, parts.train, bc);

    ModelSpec gate_spec =
        config.gate ? *config.gate : default_gate_spec(data, boost.experts.size());
    gate_spec.num_outputs = boost.experts.size();
    if (!gate_spec.layers.empty() && gate_spec.layers.back().kind == LayerKind::dense)
        gate_spec.layers.back().width = boost.experts.size();
    TrainConfig gate_cfg = config.train;
    gate_cfg.constraint.reset();
    gate_cfg.max_epochs = std::max<std::size_t>(config.inner_epochs, 1);
    gate_cfg.seed = derive_seed(config.seed, 0xB006);
    Model gate = gate_fit(boost.experts, gate_spec, parts.train, gate_cfg);

    Ensemble ens;
    ens.mode = EnsembleMode::boosted_gated;
    ens.experts = boost.experts;
    ens.gate = gate;

    EnsembleRunResult result;
    result.single_expert_acc = single_model_accuracy(ens.experts.front(), parts.test);
    result.gate_acc = ensemble_accuracy(ens, parts.test);
    result.oracle_acc = oracle_accuracy(ens.experts, parts.test);
    for (std::size_t k = 1; k <= ens.expert_count(); ++k) {
        Ensemble partial;
        partial.mode = EnsembleMode::boosted_gated;
        partial.experts.assign(ens.experts.begin(), ens.experts.begin() + k);
        if (k == 1) {
            partial.gate = ens.gate;  // unused; single expert bypasses the gate
        } else {
            TrainConfig pg = gate_cfg;
            pg.seed = derive_seed(config.seed, 0xC000 + k);
            ModelSpec pspec = default_gate_spec(data, k);
            partial.gate = gate_fit(partial.experts, pspec, parts.train, pg);
        }
        result.acc_by_expert_count.push_back(ensemble_accuracy(partial, parts.test));
    }

    save_ensemble(ens, out_dir + "/ensemble");
    write_accuracy_by_count_csv(result.acc_by_expert_count, out_dir + "/accuracy_vs_experts.csv");
    write_ensemble_report_csv(result, out_dir + "/report.csv");

    std::ofstream w(out_dir + "/boost_weights.csv", std::ios::binary);
    w << "sample,weight\n";
    for (std::size_t i = 0; i < boost.final_weights.values.size(); ++i)
        w << i << ',' << format_shortest(boost.final_weights.values[i]) << '\n';
    return result;
}

ConvexityReport run_verify(const ExperimentConfig& config, const std::string& out_dir) {
    fs::create_directories(out_dir);
    Model model;
    Box box;
    if (!config.model_file.empty()) {
        model = load_model(config.model_file).model;
        if (config.box) {
            box = *config.box;
        } else {
            Dataset data = build_dataset(config);
            box = bounding_box(data, 0.2);
        }
    } else {
        Dataset data = build_dataset(config);
        SplitResult parts = split(data, config.split_fractions, derive_seed(config.seed, 42));
        ModelSpec ioc_spec = derive_ioc_spec(config.model, config.ioc_widen_factor);
        TrainConfig cfg = config.ioc_train ? *config.ioc_train : config.train;
        cfg.constraint = config.constraint;
        cfg.seed = derive_seed(config.seed, 1);
        model = build_model(ioc_spec, derive_seed(config.seed, 11));
        fit(model, parts.train, parts.val, cfg);
        save_model(model, out_dir + "/ioc_model.iocnn", config.constraint);
        box = config.box ? *config.box : bounding_box(parts.train, 0.2);
    }
    ConvexityReport report = jensen_check(model, box, config.n_triples, config.tolerance,
                                          derive_seed(config.seed, 77));
    std::ofstream rep(out_dir + "/convexity_report.json", std::ios::binary);
    rep << report_to_json(report) << '\n';
    return report;
}

CalibrateResult run_calibrate(const ExperimentConfig& config, const std::string& out_dir) {
    fs::create_directories(out_dir);
    Dataset data = build_dataset(config);
    SplitResult parts = split(data, config.split_fractions, derive_seed(config.seed, 42));

    Model model;
    if (!config.model_file.empty()) {
        model = load_model(config.model_file).model;
    } else {
        ModelSpec ioc_spec = derive_ioc_spec(config.model, config.ioc_widen_factor);
        TrainConfig cfg = config.ioc_train ? *config.ioc_train : config.train;
        cfg.constraint = config.constraint;
        cfg.seed = derive_seed(config.seed, 1);
        model = build_model(ioc_spec, derive_seed(config.seed, 11));
        fit(model, parts.train, parts.val, cfg);
        save_model(model, out_dir + "/model.iocnn", config.constraint);
    }

    Tensor logits = forward(model, parts.test.inputs);
    Tensor probs = class_probabilities(model, logits);
    std::vector<int> pred = labels_from_logits(logits);
    std::vector<double> conf(parts.test.size());
    std::vector<bool> correct(parts.test.size());
    for (std::size_t i = 0; i < parts.test.size(); ++i) {
        conf[i] = probs(i, argmax_row(probs, i));
        correct[i] = pred[i] == parts.test.labels[i];
    }
    EceResult e = ece(conf, correct, config.n_bins);
    write_bins_csv(e.bins, out_dir + "/bins.csv");
    svg::reliability_diagram(e.bins, out_dir + "/reliability.svg");

    nlohmann::json j;
    j["ece"] = e.ece;
    j["n_bins"] = config.n_bins;
    j["test_accuracy"] = accuracy(pred, parts.test.labels);
    std::ofstream rep(out_dir + "/calibration.json", std::ios::binary);
    rep << j.dump(2) << '\n';
    return {e.ece, j["test_accuracy"].get<double>()};
}

int run_experiment(const ExperimentConfig& config, const std::string& config_path,
                   const std::string& out_dir) {
    fs::create_directories(out_dir);
    copy_config(config_path, out_dir);
    switch (config.kind) {
        case ExperimentKind::compare: {
            CompareResult r = run_compare(config, out_dir);
            for (const RunReport& rep : r.reports)
                std::cout << rep.variant << ' ' << rep.phase << ": train "
                          << format_shortest(rep.train_acc) << " test "
                          << format_shortest(rep.test_acc) << " gap "
                          << format_shortest(rep.gen_gap) << '\n';
            std::cout << "ioc convexity: " << (r.ioc_convexity.pass() ? "PASS" : "FAIL")
                      << " max_violation " << format_shortest(r.ioc_convexity.max_violation)
                      << '\n';
            return 0;
        }
        case ExperimentKind::noise_sweep: {
            std::vector<RunReport> reports = run_noise_sweep(config, out_dir);
            for (const RunReport& rep : reports)
                std::cout << "noise " << format_shortest(rep.noise_fraction) << ' ' << rep.variant
                          << ' ' << rep.phase << ": train " << format_shortest(rep.train_acc)
                          << " test " << format_shortest(rep.test_acc) << '\n';
            return 0;
        }
        case ExperimentKind::moe: {
            EnsembleRunResult r = run_moe(config, out_dir);
            std::cout << "single " << format_shortest(r.single_expert_acc) << " gate "
                      << format_shortest(r.gate_acc) << " oracle "
                      << format_shortest(r.oracle_acc) << '\n';
            return 0;
        }
        case ExperimentKind::boost: {
            EnsembleRunResult r = run_boost(config, out_dir);
            std::cout << "single " << format_shortest(r.single_expert_acc) << " gate "
                      << format_shortest(r.gate_acc) << " oracle "
                      << format_shortest(r.oracle_acc) << '\n';
            return 0;
        }
        case ExperimentKind::verify: {
            ConvexityReport r = run_verify(config, out_dir);
            std::cout << (r.pass() ? "PASS" : "FAIL") << " max_violation "
                      << format_shortest(r.max_violation) << " (tolerance "
                      << format_shortest(r.tolerance) << ")\n";
            std::cout << "worst triple: lambda " << format_shortest(r.worst_lambda)
                      << " output " << r.worst_output_index << '\n';
            return r.pass() ? 0 : 1;
        }
        case ExperimentKind::calibrate: {
            CalibrateResult r = run_calibrate(config, out_dir);
            std::cout << "ece " << format_shortest(r.ece) << " test_accuracy "
                      << format_shortest(r.test_accuracy) << '\n';
            return 0;
        }
    }
    return 2;
}

}  // namespace iocnn
