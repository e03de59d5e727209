#include "lremap/driver.hpp"

#include <CLI11.hpp>
#include <json.hpp>

#include <cmath>
#include <cstdio>
#include <fstream>
#include <limits>
#include <ostream>
#include <set>
#include <sstream>

#include "lremap/binary_io.hpp"
#include "lremap/classify.hpp"
#include "lremap/dataio.hpp"
#include "lremap/editsim.hpp"
#include "lremap/flow.hpp"
#include "lremap/kernels.hpp"
#include "lremap/metrics.hpp"
#include "lremap/oracle.hpp"
#include "lremap/parallel.hpp"
#include "lremap/training.hpp"

namespace lremap {

namespace fs = std::filesystem;
using json = nlohmann::ordered_json;

namespace {

const std::set<std::string>& known_keys() {
    static const std::set<std::string> keys = {
        "seed", "data_dir", "world", "probes", "model",
        // world
        "world_seed", "dim", "n_attributes", "n_samples", "train_fraction", "split_seed", "feature_mode", "alpha",
        "rescale", "warp_amplitudes", "warp_scale_amplitude", "fold_count", "id_width", "hardness_max",
        "hardness_attempts",
        // probes
        "probe_kind", "probe_epochs", "probe_batch", "probe_lr",
        // flow
        "flow_layers", "hidden_width", "hidden_layers", "leaky_slope", "translate_tanh", "init",
        // training
        "mode", "steps", "batch_size", "lr", "beta1", "beta2", "adam_eps", "lr_schedule", "lambda_d", "lambda_id",
        "perceptual_rescale", "noise_sigma", "pairing", "eval_every", "timeline_pairs", "timeline_triplets",
        // evaluation
        "eval_split", "n_pairs", "n_triplets", "dci_samples", "l1_alpha", "svm_epochs", "svm_lambda",
        // editing
        "edit_attribute", "edit_steps_wplus", "edit_steps_wstar", "edit_samples",
        // invert-check
        "invert_samples", "invert_tol", "invert_use_data"};
    return keys;
}

std::string fmt_double(double x) {
    char buf[40];
    std::snprintf(buf, sizeof buf, "%.17g", x);
    return buf;
}

// Typed access to the config that remembers every resolved value (defaults
// included) for the manifest.
class Settings {
public:
    Settings(Config cfg, fs::path base_dir) : cfg_(std::move(cfg)), base_(std::move(base_dir)) {
        for (const auto& [k, v] : cfg_.values())
            if (!known_keys().count(k)) throw ConfigError(cfg_.origin() + ": unknown key '" + k + "'");
    }

    std::string str(const std::string& key, const std::string& fallback) {
        const std::string v = cfg_.get_string(key, fallback);
        snapshot_[key] = v;
        return v;
    }

    std::size_t count(const std::string& key, std::int64_t fallback, std::int64_t min) {
        const std::int64_t v = cfg_.get_int(key, fallback);
        if (v < min) throw ConfigError("key '" + key + "' must be >= " + std::to_string(min) + ", got " + std::to_string(v));
        snapshot_[key] = std::to_string(v);
        return static_cast<std::size_t>(v);
    }

    std::uint64_t u64(const std::string& key, std::uint64_t fallback) {
        const std::uint64_t v = cfg_.get_u64(key, fallback);
        snapshot_[key] = std::to_string(v);
        return v;
    }

    double real(const std::string& key, double fallback, double min = -std::numeric_limits<double>::infinity()) {
        const double v = cfg_.get_double(key, fallback);
        if (v < min) throw ConfigError("key '" + key + "' must be >= " + fmt_double(min) + ", got " + fmt_double(v));
        snapshot_[key] = fmt_double(v);
        return v;
    }

    bool flag(const std::string& key, bool fallback) {
        const bool v = cfg_.get_bool(key, fallback);
        snapshot_[key] = v ? "true" : "false";
        return v;
    }

    std::vector<double> reals(const std::string& key, const std::vector<double>& fallback) {
        const auto v = cfg_.get_doubles(key, fallback);
        std::string s;
        for (std::size_t i = 0; i < v.size(); ++i) s += (i ? "," : "") + fmt_double(v[i]);
        snapshot_[key] = s;
        return v;
    }

    // Relative paths in a config file are taken from the file's directory.
    fs::path path(const std::string& key, const fs::path& fallback) {
        fs::path p = cfg_.has(key) ? fs::path(cfg_.get_string(key, "")) : fallback;
        if (cfg_.has(key) && p.is_relative()) p = base_ / p;
        p = fs::absolute(p).lexically_normal();
        snapshot_[key] = p.string();
        return p;
    }

    bool has(const std::string& key) const { return cfg_.has(key); }
    void record(const std::string& key, const std::string& value) { snapshot_[key] = value; }
    const std::map<std::string, std::string>& snapshot() const { return snapshot_; }

private:
    Config cfg_;
    fs::path base_;
    std::map<std::string, std::string> snapshot_;
};

class UsageError : public ConfigError {
public:
    using ConfigError::ConfigError;
};

struct Ctx {
    std::string command;
    Settings settings;
    std::uint64_t seed = 1;
    fs::path out;
    bool force = false;
    std::ostream& log;
    json inputs = json::object();
    json outputs = json::object();
    json extra = json::object();

    void input(const std::string& name, const fs::path& p) {
        if (!fs::exists(p)) throw std::runtime_error("missing input " + name + ": " + p.string());
        inputs[name] = {{"path", p.string()}, {"fnv1a64", file_digest(p)}};
    }

    void claim(const std::vector<std::string>& names) {
        for (const auto& n : names) {
            const fs::path p = out / n;
            if (fs::exists(p) && !force)
                throw UsageError(p.string() + " already exists; pass --force to overwrite");
        }
    }

    void output(const std::string& name) {
        const fs::path p = out / name;
        outputs[name] = {{"fnv1a64", file_digest(p)}};
    }

    void write_manifest(const std::string& status) {
        json m;
        m["command"] = command;
        m["software_version"] = kSoftwareVersion;
        m["status"] = status;
        m["seed"] = seed;
        m["kernel_isa"] = std::string(kernels::isa_name(kernels::active().isa));
        m["worker_count"] = worker_count();
        json cfg = json::object();
        for (const auto& [k, v] : settings.snapshot()) cfg[k] = v;
        m["config"] = cfg;
        m["inputs"] = inputs;
        m["outputs"] = outputs;
        for (auto it = extra.begin(); it != extra.end(); ++it) m[it.key()] = it.value();
        write_text(out / (command + ".manifest.json"), m.dump(2) + "\n");
    }

    static void write_text(const fs::path& p, const std::string& text) {
        std::ofstream f(p, std::ios::trunc);
        if (!f) throw FormatError(FormatErrorKind::io, "cannot write " + p.string());
        f << text;
        if (!f) throw FormatError(FormatErrorKind::io, "short write to " + p.string());
    }
};

// Turns validation failures of config-derived values into usage errors.
template <typename F>
auto config_checked(F&& f) {
    try {
        return f();
    } catch (const std::invalid_argument& e) {
        throw ConfigError(e.what());
    }
}

struct SplitData {
    Matrix codes;
    LabelMatrix labels;
};

SplitData load_split(Ctx& c, const fs::path& data_dir, const std::string& split) {
    const fs::path codes_path = data_dir / (split + ".latb");
    const fs::path labels_path = data_dir / (split + "_labels.csv");
    c.input(split + ".latb", codes_path);
    c.input(split + "_labels.csv", labels_path);
    LatentDataset ds = read_latents(codes_path);
    const LabelFile lf = read_labels(labels_path);
    SplitData out;
    out.labels = align_labels(lf, ds.ids);
    out.codes = std::move(ds.codes);
    return out;
}

ToyWorld load_world_input(Ctx& c, const fs::path& data_dir) {
    const fs::path p = c.settings.path("world", data_dir / "world.lrtw");
    c.input("world", p);
    return load_world(p);
}

FlowModel load_model_input(Ctx& c, const fs::path& data_dir) {
    const fs::path p = c.settings.path("model", data_dir / "model.lrfm");
    c.input("model", p);
    return load_flow(p);
}

void check_dims(const ToyWorld& world, std::size_t codes_dim, const FlowModel* model, std::size_t n_attr) {
    if (codes_dim != world.dim())
        throw std::runtime_error("dimension mismatch: data has d=" + std::to_string(codes_dim) + ", world d=" +
                                 std::to_string(world.dim()));
    if (model && model->dim != world.dim())
        throw std::runtime_error("dimension mismatch: model has d=" + std::to_string(model->dim) + ", world d=" +
                                 std::to_string(world.dim()));
    if (n_attr != world.n_attributes())
        throw std::runtime_error("attribute count mismatch: labels have K=" + std::to_string(n_attr) + ", world K=" +
                                 std::to_string(world.n_attributes()));
}

json report_json(const MetricsReport& r) {
    json j;
    j["min_acc"] = r.min_acc;
    j["max_acc"] = r.max_acc;
    j["avg_acc"] = r.avg_acc;
    j["per_attribute_acc"] = r.per_attribute_acc;
    j["dci_d"] = r.dci_d;
    j["dci_c"] = r.dci_c;
    j["dci_i"] = r.dci_i;
    j["mean_dev"] = r.mean_dev;
    j["mean_abs_dev"] = r.mean_abs_dev;
    j["std_dev"] = r.std_dev;
    j["two_afc"] = r.two_afc;
    j["n_samples"] = r.n_samples;
    j["n_pairs"] = r.n_pairs;
    j["n_triplets"] = r.n_triplets;
    return j;
}

SvmOptions svm_options(Settings& s) {
    SvmOptions o;
    o.epochs = s.count("svm_epochs", 20, 1);
    o.reg_lambda = s.real("svm_lambda", 1e-3);
    if (!(o.reg_lambda > 0.0)) throw ConfigError("svm_lambda must be > 0");
    return o;
}

FlowOptions flow_options(Settings& s) {
    FlowOptions o;
    o.hidden_width = s.count("hidden_width", 128, 1);
    o.hidden_layers = s.count("hidden_layers", 2, 0);
    o.leaky_slope = s.real("leaky_slope", 0.01, 0.0);
    o.translate_tanh = s.flag("translate_tanh", false);
    return o;
}

// ---------------------------------------------------------------------------

int cmd_gen_toy(Ctx& c) {
    Settings& s = c.settings;
    WorldConfig wc;
    wc.seed = s.u64("world_seed", c.seed);
    wc.dim = s.count("dim", 64, 2);
    wc.n_attributes = s.count("n_attributes", 8, 1);
    if (wc.n_attributes > wc.dim)
        throw ConfigError("n_attributes (" + std::to_string(wc.n_attributes) + ") must not exceed dim (" +
                          std::to_string(wc.dim) + ")");
    const std::string mode = s.str("feature_mode", "linear");
    if (mode == "linear") wc.feature_mode = FeatureMode::linear;
    else if (mode == "stress") wc.feature_mode = FeatureMode::stress;
    else throw ConfigError("feature_mode must be linear or stress, got '" + mode + "'");
    wc.alpha = s.real("alpha", 1.0);
    wc.rescale = s.real("rescale", 10.0);
    wc.warp_amplitudes = s.reals("warp_amplitudes", wc.warp_amplitudes);
    wc.warp_scale_amplitude = s.real("warp_scale_amplitude", 0.0);
    wc.fold_count = s.count("fold_count", 0, 0);
    wc.id_width = s.count("id_width", 32, 1);
    const std::size_t n = s.count("n_samples", 5000, 20);
    const double fraction = s.real("train_fraction", 0.8);
    const std::uint64_t split_seed = s.u64("split_seed", c.seed);
    HardnessCheck hc;
    hc.max_min_acc = s.real("hardness_max", 0.85);
    hc.max_attempts = s.count("hardness_attempts", 20, 1);
    const Split split = config_checked([&] { return split_indices(n, fraction, split_seed); });

    c.claim({"world.lrtw", "train.latb", "train_labels.csv", "eval.latb", "eval_labels.csv", "gen-toy.manifest.json"});
    const ToyData data = config_checked([&] { return generate_toy(wc, n, c.seed, hc); });

    save_world(c.out / "world.lrtw", data.world);
    c.output("world.lrtw");
    const LatentDataset all = make_dataset(data.codes);
    for (const auto& [name, idx] : {std::pair{std::string("train"), &split.train}, std::pair{std::string("eval"), &split.val}}) {
        LatentDataset part = make_dataset(subset(all, *idx).codes);
        LabelMatrix labels(0, data.labels.cols());
        for (auto i : *idx) labels.append(data.labels.row(i));
        write_latents(c.out / (name + ".latb"), part);
        write_labels(c.out / (name + "_labels.csv"), labels, part.ids);
        c.output(name + ".latb");
        c.output(name + "_labels.csv");
    }

    json base;
    base["min_acc"] = data.baseline.min_acc;
    base["max_acc"] = data.baseline.max_acc;
    base["avg_acc"] = data.baseline.avg_acc;
    base["per_attribute_acc"] = data.baseline.per_attribute;
    c.extra["world_seed_used"] = data.world.config.seed;
    c.extra["world_attempts"] = data.attempts;
    c.extra["baseline_wplus"] = base;
    c.extra["split"] = {{"n", n}, {"train_fraction", fraction}, {"split_seed", split_seed},
                        {"n_train", split.train.size()}, {"n_eval", split.val.size()}};
    c.write_manifest("ok");

    char buf[160];
    std::snprintf(buf, sizeof buf, "world seed %llu (attempt %zu): d=%zu K=%zu n=%zu train=%zu eval=%zu\n",
                  static_cast<unsigned long long>(data.world.config.seed), data.attempts, wc.dim, wc.n_attributes, n,
                  split.train.size(), split.val.size());
    c.log << buf;
    std::snprintf(buf, sizeof buf, "W+ baseline probe accuracy: min %.4f avg %.4f max %.4f\n", data.baseline.min_acc,
                  data.baseline.avg_acc, data.baseline.max_acc);
    c.log << buf;
    return 0;
}

int cmd_pretrain_probes(Ctx& c) {
    Settings& s = c.settings;
    const fs::path data_dir = s.path("data_dir", c.out);
    const std::string kind = s.str("probe_kind", "pretrained");
    PretrainOptions po;
    po.epochs = s.count("probe_epochs", 200, 1);
    po.batch_size = s.count("probe_batch", 256, 1);
    po.lr = s.real("probe_lr", 1e-2);
    if (kind != "pretrained" && kind != "random" && kind != "random_shared")
        throw ConfigError("probe_kind must be pretrained, random or random_shared, got '" + kind + "'");
    c.claim({"probes.lrpb", "pretrain-probes.manifest.json"});

    const SplitData train = load_split(c, data_dir, "train");
    Rng rng = Rng(c.seed).fork(0x9b0b);
    ProbeBank bank = kind == "pretrained"
                         ? pretrain_probes(train.codes, train.labels, rng, po)
                         : random_probes(train.labels.cols(), train.codes.cols(), rng, kind == "random_shared");
    save_probes(c.out / "probes.lrpb", bank);
    c.output("probes.lrpb");

    json acc = json::array();
    for (std::size_t k = 0; k < bank.size(); ++k) acc.push_back(probe_accuracy(bank[k], train.codes, train.labels.column(k)));
    c.extra["train_accuracy"] = acc;
    c.write_manifest("ok");
    c.log << "probes (" << kind << "), training accuracy:";
    for (const auto& a : acc) {
        char buf[16];
        std::snprintf(buf, sizeof buf, " %.4f", a.get<double>());
        c.log << buf;
    }
    c.log << '\n';
    return 0;
}

int cmd_train(Ctx& c) {
    Settings& s = c.settings;
    const fs::path data_dir = s.path("data_dir", c.out);
    const fs::path probes_path = s.path("probes", data_dir / "probes.lrpb");
    const std::size_t n_layers = s.count("flow_layers", 3, 1);
    const FlowOptions fo = flow_options(s);
    const std::string init = s.str("init", "identity");
    if (init != "identity" && init != "random") throw ConfigError("init must be identity or random, got '" + init + "'");

    TrainSchedule ts;
    ts.seed = c.seed;
    ts.steps = s.count("steps", 3000, 1);
    ts.batch_size = s.count("batch_size", 8, 2);
    ts.mode = config_checked([&] { return parse_mode(s.str("mode", "Wstar")); });
    ts.eval_every = s.count("eval_every", 500, 0);
    ts.weights.lambda_d = s.real("lambda_d", 10.0, 0.0);
    ts.weights.lambda_id = s.real("lambda_id", 1.0, 0.0);
    ts.weights.perceptual_rescale = s.real("perceptual_rescale", 1.0, 0.0);
    ts.adam.lr = s.real("lr", 1e-4);
    ts.adam.beta1 = s.real("beta1", 0.9);
    ts.adam.beta2 = s.real("beta2", 0.999);
    ts.adam.eps = s.real("adam_eps", 1e-8);
    const std::string sched = s.str("lr_schedule", "constant");
    if (sched == "constant") ts.lr_schedule = LrSchedule::constant;
    else if (sched == "cosine") ts.lr_schedule = LrSchedule::cosine;
    else throw ConfigError("lr_schedule must be constant or cosine, got '" + sched + "'");
    ts.noise_sigma = s.real("noise_sigma", 1.0, 0.0);
    ts.pairing = config_checked([&] { return parse_pairing(s.str("pairing", "consecutive")); });
    const std::size_t tl_pairs = s.count("timeline_pairs", 600, 2);
    const std::size_t tl_triplets = s.count("timeline_triplets", 2000, 1);
    config_checked([&] { validate(ts); return 0; });

    c.claim({"model.lrfm", "timeline.csv", "model.lastgood.lrfm", "train.manifest.json"});
    const ToyWorld world = load_world_input(c, data_dir);
    const SplitData train = load_split(c, data_dir, "train");
    c.input("probes", probes_path);
    const ProbeBank bank = load_probes(probes_path);
    check_dims(world, train.codes.cols(), nullptr, train.labels.cols());
    if (bank.dim() != world.dim() || bank.size() != world.n_attributes())
        throw std::runtime_error("probe bank is " + std::to_string(bank.size()) + " x " + std::to_string(bank.dim()) +
                                 ", world needs " + std::to_string(world.n_attributes()) + " x " +
                                 std::to_string(world.dim()));
    const fs::path eval_codes = data_dir / "eval.latb";
    const SplitData held = fs::exists(eval_codes) ? load_split(c, data_dir, "eval") : train;
    const ProbeSet probes = make_probe_set(held.codes, tl_pairs, tl_triplets, Rng(c.seed).fork(0x7e1).next_u64());

    const std::uint64_t init_seed = Rng(c.seed).fork(0xf10).next_u64();
    FlowModel model = config_checked([&] {
        return flow_init(world.dim(), n_layers, init_seed, init == "identity" ? InitMode::identity : InitMode::random, fo);
    });

    c.extra["loss_weights"] = {{"mode", std::string(mode_name(ts.mode))},
                               {"lambda_d", ts.weights.lambda_d},
                               {"lambda_id", ts.weights.lambda_id},
                               {"perceptual_rescale", ts.weights.perceptual_rescale}};
    c.log << "mode " << mode_name(ts.mode) << ", lambda_d " << fmt_double(ts.weights.lambda_d) << ", lambda_id "
          << fmt_double(ts.weights.lambda_id) << ", " << n_layers << " coupling layers, " << ts.steps << " steps\n";

    std::ofstream timeline(c.out / "timeline.csv", std::ios::trunc);
    if (!timeline) throw FormatError(FormatErrorKind::io, "cannot write timeline.csv");
    write_timeline_header(timeline);
    auto sink = [&](const TimelineRow& row) {
        write_timeline_row(timeline, row);
        timeline.flush();
        char buf[200];
        std::snprintf(buf, sizeof buf, "step %zu  total %.6g  L_a %.5g  L_d %.5g  L_ID %.5g  dev std %.5g  2afc %.4f\n",
                      row.step, row.total, row.l_a, row.l_d, row.l_id, row.dev_std, row.two_afc);
        c.log << buf;
    };

    TrainResult result;
    try {
        result = train_flow(std::move(model), train.codes, train.labels, bank, world, ts, probes, sink);
    } catch (const TrainingDiverged& e) {
        timeline.close();
        save_flow(c.out / "model.lastgood.lrfm", e.last_good);
        c.output("model.lastgood.lrfm");
        c.output("timeline.csv");
        c.extra["diverged_at_step"] = e.step;
        c.write_manifest("diverged");
        throw std::runtime_error(std::string(e.what()) + "; last good parameters in " +
                                 (c.out / "model.lastgood.lrfm").string());
    }
    timeline.close();
    save_flow(c.out / "model.lrfm", result.model);
    c.output("model.lrfm");
    c.output("timeline.csv");
    c.write_manifest("ok");
    return 0;
}

int cmd_eval(Ctx& c) {
    Settings& s = c.settings;
    const fs::path data_dir = s.path("data_dir", c.out);
    const std::string split = s.str("eval_split", "eval");
    if (split != "eval" && split != "train") throw ConfigError("eval_split must be eval or train");
    EvalOptions eo;
    eo.n_pairs = s.count("n_pairs", 600, 2);
    eo.n_triplets = s.count("n_triplets", 2000, 1);
    eo.dci_samples = s.count("dci_samples", 2000, 10);
    eo.l1_alpha = s.real("l1_alpha", 0.02, 0.0);
    eo.svm = svm_options(s);
    eo.seed = c.seed;
    c.claim({"metrics.json", "eval.manifest.json"});

    const ToyWorld world = load_world_input(c, data_dir);
    const FlowModel model = load_model_input(c, data_dir);
    const SplitData data = load_split(c, data_dir, split);
    check_dims(world, data.codes.cols(), &model, data.labels.cols());

    const FlowMap map(model);
    json report;
    report["Wplus"] = report_json(evaluate_space(data.codes, data.labels, nullptr, world, eo));
    report["Wstar"] = report_json(evaluate_space(data.codes, data.labels, &map, world, eo));
    const std::string text = report.dump(2) + "\n";
    Ctx::write_text(c.out / "metrics.json", text);
    c.output("metrics.json");
    c.write_manifest("ok");
    c.log << text;
    return 0;
}

int cmd_edit(Ctx& c) {
    Settings& s = c.settings;
    const fs::path data_dir = s.path("data_dir", c.out);
    const std::size_t attribute = s.count("edit_attribute", 0, 0);
    const auto steps_wplus = s.reals("edit_steps_wplus", {6.0});
    const auto steps_wstar = s.reals("edit_steps_wstar", {10.0, 11.0, 12.0, 13.0, 14.0, 15.0});
    const std::size_t n_samples = s.count("edit_samples", 500, 1);
    const SvmOptions svm = svm_options(s);
    c.claim({"edit.csv", "edit_summary.json", "edit.manifest.json"});

    const ToyWorld world = load_world_input(c, data_dir);
    const FlowModel model = load_model_input(c, data_dir);
    if (attribute >= world.n_attributes())
        throw ConfigError("unknown attribute index " + std::to_string(attribute) + " (world has " +
                          std::to_string(world.n_attributes()) + ")");
    const SplitData train = load_split(c, data_dir, "train");
    const SplitData held = load_split(c, data_dir, "eval");
    check_dims(world, train.codes.cols(), &model, train.labels.cols());
    if (held.codes.rows() < n_samples)
        throw ConfigError("edit_samples=" + std::to_string(n_samples) + " but the eval split has " +
                          std::to_string(held.codes.rows()) + " codes");

    std::vector<Vector> samples(n_samples);
    for (std::size_t i = 0; i < n_samples; ++i) samples[i].assign(held.codes.row(i).begin(), held.codes.row(i).end());
    const FlowMap map(model);
    const auto column = train.labels.column(attribute);
    const Rng root = Rng(c.seed).fork(0xed17);
    Rng r_plus = root.fork(0), r_star = root.fork(1);
    const Vector dir_plus = edit_direction(train.codes, column, nullptr, r_plus, svm);
    const Vector dir_star = edit_direction(train.codes, column, &map, r_star, svm);

    std::ofstream csv(c.out / "edit.csv", std::ios::trunc);
    if (!csv) throw FormatError(FormatErrorKind::io, "cannot write edit.csv");
    write_edit_csv_header(csv);
    json summary = json::array();
    auto run = [&](EditSpace space, const std::vector<double>& steps, const Vector& dir) {
        for (double step : steps) {
            const EditConfig ec{attribute, step, space, dir};
            const EditReport rep = evaluate_edit(samples, ec, &map, world);
            write_edit_rows(csv, rep, ec);
            summary.push_back({{"space", std::string(space_name(space))},
                               {"attribute", attribute},
                               {"step", step},
                               {"target_flip_rate", rep.target_flip_rate},
                               {"offtarget_flip_rate", rep.offtarget_flip_rate},
                               {"identity_drift", rep.identity_drift},
                               {"n_samples", rep.n_samples}});
            char buf[200];
            std::snprintf(buf, sizeof buf, "%-6s step %-6g target flips %.3f  off-target %.3f  identity drift %.5g\n",
                          std::string(space_name(space)).c_str(), step, rep.target_flip_rate, rep.offtarget_flip_rate,
                          rep.identity_drift);
            c.log << buf;
        }
    };
    run(EditSpace::wplus, steps_wplus, dir_plus);
    run(EditSpace::wstar, steps_wstar, dir_star);
    csv.close();
    if (!csv) throw FormatError(FormatErrorKind::io, "short write to edit.csv");
    Ctx::write_text(c.out / "edit_summary.json", summary.dump(2) + "\n");
    c.output("edit.csv");
    c.output("edit_summary.json");
    c.write_manifest("ok");
    return 0;
}

int cmd_export_pairs(Ctx& c) {
    Settings& s = c.settings;
    const fs::path data_dir = s.path("data_dir", c.out);
    const std::size_t n_pairs = s.count("n_pairs", 600, 1);
    const fs::path model_path = s.path("model", data_dir / "model.lrfm");
    const bool with_model = s.has("model") || fs::exists(model_path);
    c.claim({"pairs.csv", "export-pairs.manifest.json"});

    const ToyWorld world = load_world_input(c, data_dir);
    const SplitData held = load_split(c, data_dir, "eval");
    std::optional<FlowModel> model;
    if (with_model) {
        c.input("model", model_path);
        model = load_flow(model_path);
    }
    check_dims(world, held.codes.cols(), model ? &*model : nullptr, held.labels.cols());
    if (held.codes.rows() < 2) throw std::runtime_error("export-pairs needs at least 2 codes");
    const ProbeSet ps = make_probe_set(held.codes, n_pairs, 0, c.seed);

    std::ofstream csv(c.out / "pairs.csv", std::ios::trunc);
    if (!csv) throw FormatError(FormatErrorKind::io, "cannot write pairs.csv");
    write_pairs_csv(csv, ps.pairs, nullptr, world, "wplus", true);
    if (model) {
        const FlowMap map(*model);
        write_pairs_csv(csv, ps.pairs, &map, world, "wstar", false);
    }
    csv.close();
    if (!csv) throw FormatError(FormatErrorKind::io, "short write to pairs.csv");
    c.output("pairs.csv");
    c.write_manifest("ok");
    c.log << "wrote " << ps.pairs.size() * (model ? 2 : 1) << " rows to " << (c.out / "pairs.csv").string() << '\n';
    return 0;
}

int cmd_invert_check(Ctx& c) {
    Settings& s = c.settings;
    const fs::path data_dir = s.path("data_dir", c.out);
    const std::size_t n_random = s.count("invert_samples", 1000, 0);
    const double tol = s.real("invert_tol", 1e-8, 0.0);
    const bool use_data = s.flag("invert_use_data", true);
    c.claim({"invert.json", "invert-check.manifest.json"});

    FlowModel model;
    if (s.has("model") && s.str("model", "") == "random") {
        const std::size_t dim = s.count("dim", 64, 2);
        const std::size_t layers = s.count("flow_layers", 13, 1);
        const FlowOptions fo = flow_options(s);
        model = config_checked([&] { return flow_init(dim, layers, Rng(c.seed).fork(0xf10).next_u64(), InitMode::random, fo); });
    } else {
        model = load_model_input(c, data_dir);
    }

    std::vector<Vector> codes;
    Rng rng = Rng(c.seed).fork(0x1c);
    for (std::size_t i = 0; i < n_random; ++i) {
        Vector w(model.dim);
        for (double& x : w) x = rng.normal();
        codes.push_back(std::move(w));
    }
    const fs::path eval_path = data_dir / "eval.latb";
    if (use_data && fs::exists(eval_path)) {
        c.input("eval.latb", eval_path);
        const LatentDataset ds = read_latents(eval_path);
        if (ds.dim() != model.dim)
            throw std::runtime_error("dimension mismatch: data has d=" + std::to_string(ds.dim()) + ", model d=" +
                                     std::to_string(model.dim));
        for (std::size_t i = 0; i < ds.size(); ++i) codes.emplace_back(ds.codes.row(i).begin(), ds.codes.row(i).end());
    }
    if (codes.empty()) throw ConfigError("invert-check has no codes to test");

    std::vector<double> err(codes.size());
    parallel_for(codes.size(), [&](std::size_t i) {
        const Vector back = flow_inverse(model, flow_forward(model, codes[i]));
        double m = 0.0;
        for (std::size_t j = 0; j < back.size(); ++j) m = std::max(m, std::abs(back[j] - codes[i][j]));
        err[i] = m;
    });
    double worst = 0.0;
    for (double e : err) worst = std::max(worst, e);
    const bool pass = worst < tol;
    json r = {{"max_abs_error", worst}, {"n_codes", codes.size()}, {"tolerance", tol}, {"pass", pass},
              {"n_layers", model.layers.size()}, {"dim", model.dim}};
    Ctx::write_text(c.out / "invert.json", r.dump(2) + "\n");
    c.output("invert.json");
    c.write_manifest(pass ? "ok" : "failed");
    c.log << r.dump(2) << '\n';
    if (!pass) {
        c.log << "round-trip error " << fmt_double(worst) << " exceeds tolerance " << fmt_double(tol) << '\n';
        return 1;
    }
    return 0;
}

struct Command {
    const char* name;
    const char* help;
    int (*run)(Ctx&);
};

constexpr Command kCommands[] = {
    {"gen-toy", "Generate a toy world and its W+ datasets", cmd_gen_toy},
    {"pretrain-probes", "Fit the frozen attribute probe bank in W+", cmd_pretrain_probes},
    {"train", "Train the flow T", cmd_train},
    {"eval", "Metric report for W+ and W*", cmd_eval},
    {"edit", "Hyperplane-normal edits in W+ and W*", cmd_edit},
    {"export-pairs", "Export latent vs perceptual distance pairs", cmd_export_pairs},
    {"invert-check", "Check T^-1(T(w)) == w", cmd_invert_check},
};

// A plain key=value file, or a manifest written by an earlier run of the same command.
std::pair<Config, fs::path> load_config(const std::string& path, const std::string& command,
                                        std::optional<std::uint64_t>& manifest_seed) {
    const fs::path p = fs::absolute(path);
    std::ifstream f(p);
    if (!f) throw ConfigError("cannot read config " + p.string());
    std::stringstream ss;
    ss << f.rdbuf();
    const std::string text = ss.str();
    const auto first = text.find_first_not_of(" \t\r\n");
    if (first == std::string::npos || text[first] != '{') return {Config::parse(text, p.string()), p.parent_path()};

    json m;
    try {
        m = json::parse(text);
    } catch (const json::exception& e) {
        throw ConfigError(p.string() + ": invalid manifest JSON: " + e.what());
    }
    if (!m.contains("command") || !m.contains("config") || !m["config"].is_object())
        throw ConfigError(p.string() + ": not a run manifest");
    if (m["command"] != command)
        throw ConfigError(p.string() + ": manifest is for '" + m["command"].get<std::string>() + "', not '" + command + "'");
    std::map<std::string, std::string> values;
    for (auto it = m["config"].begin(); it != m["config"].end(); ++it) {
        if (!it.value().is_string()) throw ConfigError(p.string() + ": config values must be strings");
        values[it.key()] = it.value().get<std::string>();
    }
    if (m.contains("seed")) manifest_seed = m["seed"].get<std::uint64_t>();
    return {Config::parse(serialize_config(values), p.string()), p.parent_path()};
}

}  // namespace

int run_cli(const std::vector<std::string>& args, std::ostream& out, std::ostream& err) {
    CLI::App app{"Learned invertible remapping of latent codes on a synthetic toy world", "latent-remap"};
    app.require_subcommand(1, 1);
    std::string config_path;
    std::uint64_t seed = 1;
    std::string out_dir = ".";
    bool force = false;
    auto* seed_opt = app.add_option("--seed", seed, "Root seed")->check(CLI::NonNegativeNumber);
    app.add_option("--config", config_path, "key=value config file or run manifest");
    app.add_option("--out", out_dir, "Output directory");
    app.add_flag("--force", force, "Overwrite existing outputs");
    std::vector<std::pair<CLI::App*, const Command*>> subs;
    for (const auto& cmd : kCommands) subs.emplace_back(app.add_subcommand(cmd.name, cmd.help)->fallthrough(), &cmd);

    std::vector<std::string> storage{"latent-remap"};
    storage.insert(storage.end(), args.begin(), args.end());
    std::vector<char*> argv;
    for (auto& a : storage) argv.push_back(a.data());
    try {
        app.parse(static_cast<int>(argv.size()), argv.data());
    } catch (const CLI::ParseError& e) {
        const int rc = app.exit(e, out, err);
        return rc == 0 ? 0 : 2;
    }

    const Command* cmd = nullptr;
    for (auto& [sub, c] : subs)
        if (sub->parsed()) cmd = c;

    try {
        Config cfg;
        fs::path base = fs::current_path();
        std::optional<std::uint64_t> manifest_seed;
        if (!config_path.empty()) std::tie(cfg, base) = load_config(config_path, cmd->name, manifest_seed);
        Settings settings(std::move(cfg), base);
        std::uint64_t resolved = settings.u64("seed", manifest_seed.value_or(1));
        if (seed_opt->count() > 0) resolved = seed;
        settings.record("seed", std::to_string(resolved));
        const fs::path out_path = fs::absolute(out_dir).lexically_normal();
        fs::create_directories(out_path);
        Ctx ctx{cmd->name, std::move(settings), resolved, out_path, force, out};
        return cmd->run(ctx);
    } catch (const ConfigError& e) {
        err << "latent-remap " << cmd->name << ": " << e.what() << '\n';
        return 2;
    } catch (const std::exception& e) {
        err << "latent-remap " << cmd->name << ": " << e.what() << '\n';
        return 1;
    }
}

}  // namespace lremap
