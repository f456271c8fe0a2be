#include "xbarnet/harness.hpp"

#include <fmt/format.h>

#include <chrono>
#include <cstdlib>
#include <exception>
#include <set>
#include <sstream>

#include "xbarnet/io.hpp"

namespace xbarnet {

namespace fs = std::filesystem;
using nlohmann::json;

std::string_view kind_name(ExperimentKind kind) {
    switch (kind) {
        case ExperimentKind::Baseline: return "baseline";
        case ExperimentKind::Rsa: return "rsa";
        case ExperimentKind::RvwCompare: return "rvw-compare";
        case ExperimentKind::SmallWorld: return "smallworld";
        case ExperimentKind::Cgap: return "cgap";
    }
    return "unknown";
}

ExperimentKind parse_kind(std::string_view name) {
    for (auto k : {ExperimentKind::Baseline, ExperimentKind::Rsa, ExperimentKind::RvwCompare,
                   ExperimentKind::SmallWorld, ExperimentKind::Cgap}) {
        if (kind_name(k) == name) return k;
    }
    throw ConfigError(fmt::format("unknown experiment kind '{}'", name));
}

SmallWorldSchedule SmallWorldSpec::schedule() const {
    return SmallWorldSchedule::geometric(initial_density, final_density, rounds, initial_epochs, finetune_epochs);
}

void ExperimentConfig::validate() const {
    try {
        training.validate();
        device.validate();
        rvw.validate();
        rsa.validate();
        smallworld.config.validate();
        smallworld.optimizer.validate();
        cgap.validate();
    } catch (const std::invalid_argument& e) {
        throw ConfigError(e.what());
    }
    if (timing.t_read <= 0.0 || timing.t_write <= 0.0) {
        throw ConfigError("timing: t_read and t_write must be positive");
    }
    for (double f : rsa_fractions) {
        if (!(f > 0.0 && f <= 1.0)) throw ConfigError(fmt::format("rsa sweep fraction {} outside (0, 1]", f));
    }
    if (dataset.name != "mnist" && dataset.name != "cifar10") {
        throw ConfigError(fmt::format("unknown dataset '{}'", dataset.name));
    }
    if (architecture.kind == "mlp") {
        if (architecture.widths.size() < 2) throw ConfigError("mlp needs at least two widths");
        for (auto w : architecture.widths) {
            if (w == 0) throw ConfigError("mlp widths must be positive");
        }
    } else if (architecture.kind != "lenet5") {
        throw ConfigError(fmt::format("unknown architecture '{}'", architecture.kind));
    }
    if (output_dir.empty()) throw ConfigError("output_dir is empty");
}

// ---------------------------------------------------------------------------
// Config JSON
// ---------------------------------------------------------------------------

namespace {

/// Reads fields of one JSON object and rejects keys nobody asked for.
class Fields {
public:
    Fields(const json& j, std::string path) : j_(j), path_(std::move(path)) {
        if (!j_.is_object()) throw ConfigError(fmt::format("{} must be an object", where()));
    }

    template <typename T>
    void read(const char* key, T& out) {
        used_.insert(key);
        if (!j_.contains(key)) return;
        try {
            out = j_.at(key).get<T>();
        } catch (const json::exception& e) {
            throw ConfigError(fmt::format("{}: {}", where(key), e.what()));
        }
    }

    const json* sub(const char* key) {
        used_.insert(key);
        return j_.contains(key) ? &j_.at(key) : nullptr;
    }

    std::string where(const char* key = nullptr) const {
        if (key == nullptr) return path_.empty() ? "config" : path_;
        return path_.empty() ? key : path_ + "." + key;
    }

    void finish() const {
        for (const auto& [key, _] : j_.items()) {
            if (!used_.count(key)) throw ConfigError(fmt::format("unknown field '{}'", where(key.c_str())));
        }
    }

private:
    const json& j_;
    std::string path_;
    std::set<std::string> used_;
};

json sgd_json(const SgdConfig& c) {
    return {{"learning_rate", c.learning_rate}, {"momentum", c.momentum}, {"batch_size", c.batch_size},
            {"epochs", c.epochs}};
}

void read_sgd(const json* j, const std::string& path, SgdConfig& c) {
    if (j == nullptr) return;
    Fields f(*j, path);
    f.read("learning_rate", c.learning_rate);
    f.read("momentum", c.momentum);
    f.read("batch_size", c.batch_size);
    f.read("epochs", c.epochs);
    f.finish();
}

}  // namespace

json config_to_json(const ExperimentConfig& c) {
    json j;
    j["schema_version"] = ExperimentConfig::kSchemaVersion;
    j["kind"] = std::string(kind_name(c.kind));
    j["master_seed"] = c.master_seed;
    j["output_dir"] = c.output_dir;
    j["checkpoint"] = c.checkpoint;
    j["dataset"] = {{"name", c.dataset.name},
                    {"dir", c.dataset.dir},
                    {"validation_size", c.dataset.validation_size},
                    {"subset", c.dataset.subset},
                    {"classes", c.dataset.classes}};
    j["architecture"] = {{"kind", c.architecture.kind}, {"widths", c.architecture.widths}};
    j["training"] = sgd_json(c.training);
    j["device"] = {{"num_levels", c.device.num_levels}, {"g_on", c.device.g_on},
                   {"g_off", c.device.g_off},           {"sigma_write", c.device.sigma_write},
                   {"sf1_rate", c.device.sf1_rate},     {"sf0_rate", c.device.sf0_rate}};
    j["rvw"] = {{"tolerance", c.rvw.tolerance}, {"max_pulses_per_cell", c.rvw.max_pulses_per_cell}};
    j["timing"] = {{"t_read", c.timing.t_read}, {"t_write", c.timing.t_write}};
    j["rsa"] = {{"fraction", c.rsa.fraction},
                {"init_sigma", c.rsa.init_sigma},
                {"optimizer", sgd_json(c.rsa.optimizer)},
                {"sweep", c.rsa_fractions}};
    const auto& sw = c.smallworld;
    j["smallworld"] = {{"theta", sw.config.theta},
                       {"p", sw.config.p},
                       {"window", sw.config.window},
                       {"initial_density", sw.initial_density},
                       {"final_density", sw.final_density},
                       {"rounds", sw.rounds},
                       {"initial_epochs", sw.initial_epochs},
                       {"finetune_epochs", sw.finetune_epochs},
                       {"optimizer", sgd_json(sw.optimizer)}};
    const auto& g = c.cgap;
    j["cgap"] = {{"seed_fraction", g.seed_fraction},
                 {"growth_period", g.growth_period},
                 {"growth_rate", g.growth_rate},
                 {"noise", g.noise},
                 {"peak_patience", g.peak_patience},
                 {"peak_eps", g.peak_eps},
                 {"max_growth_events", g.max_growth_events},
                 {"width_cap", g.width_cap},
                 {"prune_rate", g.prune_rate},
                 {"accuracy_budget", g.accuracy_budget},
                 {"finetune_epochs", g.finetune_epochs},
                 {"max_prune_steps", g.max_prune_steps},
                 {"peak_epochs", g.peak_epochs},
                 {"saliency_batch", g.saliency_batch},
                 {"refine_learning_rate", g.refine_learning_rate},
                 {"optimizer", sgd_json(g.optimizer)}};
    return j;
}

ExperimentConfig config_from_json(const json& j) {
    ExperimentConfig c;
    Fields top(j, "");
    int version = -1;
    if (!j.is_object() || !j.contains("schema_version")) throw ConfigError("config has no schema_version");
    top.read("schema_version", version);
    if (version != ExperimentConfig::kSchemaVersion) {
        throw ConfigError(fmt::format("unsupported schema_version {} (expected {})", version,
                                      ExperimentConfig::kSchemaVersion));
    }
    std::string kind = std::string(kind_name(c.kind));
    top.read("kind", kind);
    c.kind = parse_kind(kind);
    top.read("master_seed", c.master_seed);
    top.read("output_dir", c.output_dir);
    top.read("checkpoint", c.checkpoint);

    if (const json* d = top.sub("dataset")) {
        Fields f(*d, "dataset");
        f.read("name", c.dataset.name);
        f.read("dir", c.dataset.dir);
        f.read("validation_size", c.dataset.validation_size);
        f.read("subset", c.dataset.subset);
        f.read("classes", c.dataset.classes);
        f.finish();
    }
    if (const json* a = top.sub("architecture")) {
        Fields f(*a, "architecture");
        f.read("kind", c.architecture.kind);
        f.read("widths", c.architecture.widths);
        f.finish();
    }
    read_sgd(top.sub("training"), "training", c.training);
    if (const json* d = top.sub("device")) {
        Fields f(*d, "device");
        f.read("num_levels", c.device.num_levels);
        f.read("g_on", c.device.g_on);
        f.read("g_off", c.device.g_off);
        f.read("sigma_write", c.device.sigma_write);
        f.read("sf1_rate", c.device.sf1_rate);
        f.read("sf0_rate", c.device.sf0_rate);
        f.finish();
    }
    if (const json* r = top.sub("rvw")) {
        Fields f(*r, "rvw");
        f.read("tolerance", c.rvw.tolerance);
        f.read("max_pulses_per_cell", c.rvw.max_pulses_per_cell);
        f.finish();
    }
    if (const json* t = top.sub("timing")) {
        Fields f(*t, "timing");
        f.read("t_read", c.timing.t_read);
        f.read("t_write", c.timing.t_write);
        f.finish();
    }
    if (const json* r = top.sub("rsa")) {
        Fields f(*r, "rsa");
        f.read("fraction", c.rsa.fraction);
        f.read("init_sigma", c.rsa.init_sigma);
        f.read("sweep", c.rsa_fractions);
        read_sgd(f.sub("optimizer"), "rsa.optimizer", c.rsa.optimizer);
        f.finish();
    }
    if (const json* s = top.sub("smallworld")) {
        auto& sw = c.smallworld;
        Fields f(*s, "smallworld");
        f.read("theta", sw.config.theta);
        f.read("p", sw.config.p);
        f.read("window", sw.config.window);
        f.read("initial_density", sw.initial_density);
        f.read("final_density", sw.final_density);
        f.read("rounds", sw.rounds);
        f.read("initial_epochs", sw.initial_epochs);
        f.read("finetune_epochs", sw.finetune_epochs);
        read_sgd(f.sub("optimizer"), "smallworld.optimizer", sw.optimizer);
        f.finish();
    }
    if (const json* s = top.sub("cgap")) {
        auto& g = c.cgap;
        Fields f(*s, "cgap");
        f.read("seed_fraction", g.seed_fraction);
        f.read("growth_period", g.growth_period);
        f.read("growth_rate", g.growth_rate);
        f.read("noise", g.noise);
        f.read("peak_patience", g.peak_patience);
        f.read("peak_eps", g.peak_eps);
        f.read("max_growth_events", g.max_growth_events);
        f.read("width_cap", g.width_cap);
        f.read("prune_rate", g.prune_rate);
        f.read("accuracy_budget", g.accuracy_budget);
        f.read("finetune_epochs", g.finetune_epochs);
        f.read("max_prune_steps", g.max_prune_steps);
        f.read("peak_epochs", g.peak_epochs);
        f.read("saliency_batch", g.saliency_batch);
        f.read("refine_learning_rate", g.refine_learning_rate);
        read_sgd(f.sub("optimizer"), "cgap.optimizer", g.optimizer);
        f.finish();
    }
    top.finish();
    c.validate();
    return c;
}

ExperimentConfig load_config(const fs::path& path) {
    json j;
    try {
        j = json::parse(read_file(path));
    } catch (const json::parse_error& e) {
        throw ConfigError(fmt::format("{}: {}", path.string(), e.what()));
    }
    return config_from_json(j);
}

// ---------------------------------------------------------------------------
// RunRecord
// ---------------------------------------------------------------------------

json RunRecord::to_json() const {
    json rows = json::array();
    for (const auto& m : metrics_) {
        json values = json::object();
        for (const auto& [k, v] : m.values) values[k] = v;
        rows.push_back({{"series", m.series}, {"step", m.step}, {"values", std::move(values)}});
    }
    return {{"config", config},
            {"metrics", std::move(rows)},
            {"summary", summary},
            {"series", series},
            {"artifacts", artifacts},
            {"wall_clock_seconds", wall_clock_seconds},
            {"status", status},
            {"error", error}};
}

RunRecord RunRecord::from_json(const json& j) {
    RunRecord r;
    try {
        r.config = j.at("config");
        r.summary = j.value("summary", json::object());
        r.series = j.value("series", json::object());
        r.artifacts = j.value("artifacts", std::map<std::string, std::string>{});
        r.wall_clock_seconds = j.value("wall_clock_seconds", 0.0);
        r.status = j.value("status", std::string("ok"));
        r.error = j.value("error", std::string());
        for (const auto& row : j.value("metrics", json::array())) {
            MetricRow m;
            m.series = row.at("series").get<std::string>();
            m.step = row.at("step").get<std::size_t>();
            for (const auto& [k, v] : row.at("values").items()) m.values.emplace_back(k, v.get<double>());
            r.append(std::move(m));
        }
    } catch (const json::exception& e) {
        throw std::invalid_argument(fmt::format("malformed run record: {}", e.what()));
    }
    return r;
}

RunRecord load_run_record(const fs::path& path) {
    try {
        return RunRecord::from_json(json::parse(read_file(path)));
    } catch (const json::parse_error& e) {
        throw std::invalid_argument(fmt::format("{}: {}", path.string(), e.what()));
    }
}

// ---------------------------------------------------------------------------
// Data and models
// ---------------------------------------------------------------------------

DatasetSplit load_dataset(const DatasetSpec& spec) {
    if (spec.dir.empty()) throw ConfigError("dataset.dir is not set");
    DatasetSplit split;
    if (spec.name == "mnist") {
        split = load_mnist(spec.dir);
        if (spec.subset > 0) {
            split.train = split.train.head(std::min(spec.subset, split.train.size()));
            split.test = split.test.head(std::min(spec.subset, split.test.size()));
        }
    } else if (spec.name == "cifar10") {
        std::optional<std::size_t> subset;
        if (spec.subset > 0) subset = spec.subset;
        split = load_cifar10(spec.dir, subset);
    } else {
        throw ConfigError(fmt::format("unknown dataset '{}'", spec.name));
    }
    if (!spec.classes.empty()) {
        split.train = filter_classes(split.train, spec.classes);
        split.test = filter_classes(split.test, spec.classes);
    }
    return split;
}

Network build_architecture(const ArchitectureSpec& spec, RngStream& rng) {
    if (spec.kind == "mlp") return make_mlp(spec.widths, rng);
    if (spec.kind == "lenet5") return make_lenet5(rng);
    throw ConfigError(fmt::format("unknown architecture '{}'", spec.kind));
}

Network train_baseline(const ExperimentConfig& cfg, const Dataset& train, const Dataset& test, RunRecord* record) {
    RngStream init(cfg.master_seed, "init");
    RngStream shuffle(cfg.master_seed, "shuffle");
    Network net = build_architecture(cfg.architecture, init);
    for (std::size_t e = 1; e <= cfg.training.epochs; ++e) {
        const auto stats = train_epoch(net, train, cfg.training, shuffle);
        if (record != nullptr) {
            record->append({"baseline",
                            e,
                            {{"train_loss", stats.loss},
                             {"train_accuracy", stats.accuracy},
                             {"test_accuracy", evaluate(net, test)}}});
        }
    }
    return net;
}

// ---------------------------------------------------------------------------
// Runner
// ---------------------------------------------------------------------------

namespace {

struct Context {
    const ExperimentConfig& cfg;
    Dataset train;  // training split minus the validation tail
    Dataset val;
    const Dataset& test;
    fs::path dir;
    RunRecord& record;

    void artifact(const std::string& name, std::string_view bytes) {
        record.artifacts[name] = hex64(write_file_atomic(dir / name, bytes));
    }
    void checkpoint(const std::string& name, const Network& net) { artifact(name, checkpoint_to_string(net)); }
};

std::string dataset_label(const DatasetSpec& d) {
    std::string label = d.name;
    if (!d.classes.empty()) {
        label += "[";
        for (std::size_t i = 0; i < d.classes.size(); ++i) {
            label += (i ? "," : "") + std::to_string(d.classes[i]);
        }
        label += "]";
    }
    return label;
}

json histogram_json(const WeightHistogram& h) {
    return {{"lo", h.lo}, {"hi", h.hi}, {"pre", h.pre}, {"post", h.post}};
}

json points_json(const AdaptationTrace& t) {
    json pts = json::array();
    for (const auto& p : t.points) {
        pts.push_back({{"epoch", p.epoch}, {"accuracy", p.accuracy}, {"modeled_seconds", p.modeled_seconds}});
    }
    return pts;
}

Network dense_model(Context& ctx) {
    if (!ctx.cfg.checkpoint.empty()) {
        ctx.record.summary["baseline_checkpoint"] = ctx.cfg.checkpoint;
        return load_checkpoint(ctx.cfg.checkpoint);
    }
    Network net = train_baseline(ctx.cfg, ctx.train, ctx.test, &ctx.record);
    ctx.checkpoint("baseline.ckpt.json", net);
    return net;
}

void run_baseline(Context& ctx) {
    Network net = dense_model(ctx);
    ctx.record.summary["test_accuracy"] = evaluate(net, ctx.test);
    ctx.record.summary["val_accuracy"] = ctx.val.empty() ? 0.0 : evaluate(net, ctx.val);
    ctx.record.summary["parameters"] = net.weight_count();
}

void run_rsa(Context& ctx) {
    const auto& cfg = ctx.cfg;
    Network trained = dense_model(ctx);
    RngStream faults(cfg.master_seed, "faults");
    RngStream writes(cfg.master_seed, "write");
    const CrossbarModel programmed = program_network(trained, cfg.device, faults, writes);

    const double ideal = evaluate(trained, ctx.test);
    const double faulted = evaluate(programmed.network, ctx.test);
    ctx.record.summary["ideal_accuracy"] = ideal;
    ctx.record.summary["faulted_accuracy"] = faulted;
    ctx.record.series["histogram"] = histogram_json(programmed.histogram);

    std::vector<double> fractions = cfg.rsa_fractions;
    if (fractions.empty()) fractions.push_back(cfg.rsa.fraction);

    std::ostringstream csv;
    csv << "fraction,epoch,accuracy,modeled_seconds\n";
    json sweep = json::array();
    for (double f : fractions) {
        RsaConfig rc = cfg.rsa;
        rc.fraction = f;
        RngStream select(cfg.master_seed, "rsa-select");
        RngStream init = RngStream(cfg.master_seed, "init").child("rsa");
        RngStream shuffle(cfg.master_seed, "shuffle");
        RsaModel model = attach_rsa(programmed, rc, select, init);
        std::size_t cells = 0;
        for (const auto& l : model.layers) cells += l.selection().size();
        const AdaptationTrace trace = adapt(model, ctx.train, ctx.test, rc, cfg.timing, shuffle);
        for (const auto& p : trace.points) {
            ctx.record.append({fmt::format("rsa-f{}", f), p.epoch,
                               {{"accuracy", p.accuracy}, {"modeled_seconds", p.modeled_seconds}}});
            csv << fmt::format("{:.17g},{},{:.17g},{:.17g}\n", f, p.epoch, p.accuracy, p.modeled_seconds);
        }
        sweep.push_back({{"fraction", f},
                         {"cells", cells},
                         {"write_pulses", trace.write_pulses},
                         {"reads", trace.reads},
                         {"final_accuracy", trace.final_accuracy()},
                         {"points", points_json(trace)}});
    }
    ctx.record.series["rsa_sweep"] = sweep;
    ctx.record.summary["rsa_accuracy"] = sweep.back()["final_accuracy"];
    ctx.artifact("rsa_sweep.csv", csv.str());

    std::ostringstream hist;
    write_histogram_csv(hist, programmed.histogram);
    ctx.artifact("histogram.csv", hist.str());
}

void run_compare(Context& ctx) {
    const auto& cfg = ctx.cfg;
    Network trained = dense_model(ctx);
    CompareScenario sc{cfg.device, cfg.rvw, cfg.rsa, cfg.timing, cfg.master_seed};
    const CompareResult r = compare_rsa_vs_rvw(trained, ctx.train, ctx.test, sc);

    auto& s = ctx.record.summary;
    s["ideal_accuracy"] = r.ideal_accuracy;
    s["faulted_accuracy"] = r.faulted_accuracy;
    s["rsa_accuracy"] = r.rsa_accuracy;
    s["rvw_accuracy"] = r.rvw_accuracy;
    s["rsa_seconds"] = r.rsa_seconds;
    s["rvw_seconds"] = r.rvw_seconds;
    s["speedup"] = r.speedup;
    s["rsa_write_pulses"] = r.rsa_write_pulses;
    s["rsa_cells"] = r.rsa_cells;
    s["recovered_fraction"] = r.recovered_fraction();
    s["rvw_pulses"] = r.rvw_report.pulses_total;
    s["rvw_cells_failed"] = r.rvw_report.cells_failed;

    for (const auto& p : r.rsa_trace.points) {
        ctx.record.append({"rsa", p.epoch, {{"accuracy", p.accuracy}, {"modeled_seconds", p.modeled_seconds}}});
    }
    ctx.record.series["histogram"] = histogram_json(r.histogram);
    ctx.record.series["adaptation"] = points_json(r.rsa_trace);
    ctx.record.series["rvw"] = {{"faulted_accuracy", r.faulted_accuracy},
                                {"accuracy", r.rvw_accuracy},
                                {"modeled_seconds", r.rvw_seconds}};

    std::ostringstream a, pulses, rvw, hist, cost;
    write_adaptation_csv(a, r.rsa_trace);
    r.rvw_report.write_pulse_histogram(pulses);
    write_rvw_summary_csv(rvw, r.rvw_report);
    write_histogram_csv(hist, r.histogram);
    const auto rsa_cost = cost_of(r.rsa_write_pulses, r.rsa_trace.reads, cfg.timing);
    const auto rvw_cost = cost_of(r.rvw_report.pulses_total, r.rvw_report.reads_total, cfg.timing);
    cost << "arm,write_seconds,read_seconds,total\n";
    cost << fmt::format("rsa,{:.17g},{:.17g},{:.17g}\n", rsa_cost.write_seconds, rsa_cost.read_seconds,
                        rsa_cost.total);
    cost << fmt::format("rvw,{:.17g},{:.17g},{:.17g}\n", rvw_cost.write_seconds, rvw_cost.read_seconds,
                        rvw_cost.total);
    ctx.artifact("adaptation.csv", a.str());
    ctx.artifact("rvw_pulses.csv", pulses.str());
    ctx.artifact("rvw_summary.csv", rvw.str());
    ctx.artifact("histogram.csv", hist.str());
    ctx.artifact("cost.csv", cost.str());
}

void run_smallworld(Context& ctx) {
    const auto& cfg = ctx.cfg;
    Network dense = dense_model(ctx);
    const double base = evaluate(dense, ctx.test);

    RngStream init(cfg.master_seed, "init");
    Network net = build_architecture(cfg.architecture, init);
    const auto res = smallworld_pipeline(std::move(net), ctx.train, ctx.val, cfg.smallworld.config,
                                         cfg.smallworld.schedule(), cfg.smallworld.optimizer, cfg.master_seed);
    const double acc = evaluate(res.network, ctx.test);

    auto& s = ctx.record.summary;
    s["baseline_accuracy"] = base;
    s["accuracy"] = acc;
    s["accuracy_drop"] = base - acc;
    s["parameters"] = res.parameters;
    s["dense_parameters"] = res.dense_parameters;
    s["reduction"] = res.reduction();

    json rows = json::array();
    for (const auto& m : res.trace) {
        ctx.record.append({fmt::format("smallworld-layer{}", m.layer), m.round,
                           {{"theta", m.theta}, {"density", m.density}, {"L", m.L}, {"C", m.C},
                            {"val_accuracy", m.accuracy}}});
        rows.push_back({{"round", m.round}, {"layer", m.layer}, {"theta", m.theta}, {"density", m.density},
                        {"L", m.L}, {"C", m.C}, {"accuracy", m.accuracy}});
    }
    ctx.record.series["smallworld"] = rows;

    std::ostringstream csv;
    write_metrics_csv(csv, res.trace);
    ctx.artifact("smallworld_metrics.csv", csv.str());
    ctx.checkpoint("smallworld.ckpt.json", res.network);
}

void run_cgap_kind(Context& ctx) {
    const auto& cfg = ctx.cfg;
    Network dense = dense_model(ctx);
    const double base = evaluate(dense, ctx.test);

    RngStream init(cfg.master_seed, "init");
    const Network shape = build_architecture(cfg.architecture, init);
    const auto res = run_cgap(shape, ctx.train, ctx.val, cfg.cgap, cfg.master_seed);
    const double acc = evaluate(res.network, ctx.test);

    auto& s = ctx.record.summary;
    s["baseline_accuracy"] = base;
    s["baseline_parameters"] = dense.dense_weight_count();
    s["accuracy"] = acc;
    s["accuracy_delta"] = acc - base;
    s["seed_parameters"] = res.seed_parameters;
    s["peak_parameters"] = res.peak_parameters;
    s["final_parameters"] = res.final_parameters;
    s["seed_widths"] = res.seed_widths;
    s["peak_widths"] = res.peak_widths;
    s["final_widths"] = res.final_widths;
    s["peak_val_accuracy"] = res.peak_val_accuracy;
    s["final_val_accuracy"] = res.final_val_accuracy;
    s["growth_events"] = res.growth.size();

    json rows = json::array();
    for (const auto& t : res.trace) {
        ctx.record.append({"cgap-" + t.phase, t.epoch,
                           {{"parameters", static_cast<double>(t.parameters)},
                            {"train_accuracy", t.train_accuracy},
                            {"val_accuracy", t.val_accuracy}}});
        rows.push_back({{"phase", t.phase}, {"epoch", t.epoch}, {"widths", t.widths},
                        {"parameters", t.parameters}, {"val_accuracy", t.val_accuracy}});
    }
    ctx.record.series["cgap"] = {{"dataset", dataset_label(cfg.dataset)}, {"trace", rows}};

    std::ostringstream csv, growth;
    write_cgap_trace_csv(csv, res.trace);
    growth << "epoch,layer,parent,child,params_before,params_after\n";
    for (const auto& g : res.growth) {
        growth << fmt::format("{},{},{},{},{},{}\n", g.epoch, g.layer, g.parent, g.child, g.params_before,
                              g.params_after);
    }
    ctx.artifact("cgap_trace.csv", csv.str());
    ctx.artifact("cgap_growth.csv", growth.str());
    ctx.checkpoint("cgap.ckpt.json", res.network);
}

void write_metrics(Context& ctx) {
    std::ostringstream out;
    out << "series,step,metric,value\n";
    for (const auto& m : ctx.record.metrics()) {
        for (const auto& [k, v] : m.values) {
            out << fmt::format("{},{},{},{:.17g}\n", m.series, m.step, k, v);
        }
    }
    ctx.artifact("metrics.csv", out.str());
}

}  // namespace

RunRecord run_experiment(const ExperimentConfig& cfg) {
    cfg.validate();
    return run_experiment(cfg, load_dataset(cfg.dataset));
}

RunRecord run_experiment(const ExperimentConfig& cfg, const DatasetSplit& data) {
    cfg.validate();
    const auto start = std::chrono::steady_clock::now();
    RunRecord record;
    record.config = config_to_json(cfg);
    if (cfg.dataset.name == "cifar10") record.summary["qualitative"] = true;

    const fs::path dir = cfg.output_dir;
    fs::create_directories(dir);
    auto finish = [&] {
        record.wall_clock_seconds =
            std::chrono::duration<double>(std::chrono::steady_clock::now() - start).count();
        write_file_atomic(dir / "record.json", record.to_json().dump(2) + "\n");
    };

    try {
        Dataset train = data.train;
        Dataset val;
        if (cfg.dataset.validation_size > 0) {
            std::tie(train, val) = split_validation(data.train, cfg.dataset.validation_size);
        }
        Context ctx{cfg, std::move(train), std::move(val), data.test, dir, record};
        switch (cfg.kind) {
            case ExperimentKind::Baseline: run_baseline(ctx); break;
            case ExperimentKind::Rsa: run_rsa(ctx); break;
            case ExperimentKind::RvwCompare: run_compare(ctx); break;
            case ExperimentKind::SmallWorld: run_smallworld(ctx); break;
            case ExperimentKind::Cgap: run_cgap_kind(ctx); break;
        }
        write_metrics(ctx);
        record.status = "ok";
    } catch (const std::exception& e) {
        record.status = "error";
        record.error = e.what();
        finish();
        throw;
    }
    finish();
    return record;
}

// ---------------------------------------------------------------------------
// Plot export
// ---------------------------------------------------------------------------

namespace {

const json& need(const RunRecord& r, std::size_t i, const char* series) {
    if (!r.series.contains(series)) {
        throw std::invalid_argument(fmt::format("record {} has no '{}' series", i, series));
    }
    return r.series.at(series);
}

}  // namespace

void export_plot_data(std::span<const RunRecord> records, std::string_view figure, std::ostream& out) {
    if (records.empty()) throw std::invalid_argument("no records to export");
    if (figure == "fig2") {
        out << "bin_center,count_pre,count_post\n";
        for (std::size_t i = 0; i < records.size(); ++i) {
            const json& h = need(records[i], i, "histogram");
            WeightHistogram hist;
            hist.lo = h.at("lo").get<double>();
            hist.hi = h.at("hi").get<double>();
            hist.pre = h.at("pre").get<std::vector<std::size_t>>();
            hist.post = h.at("post").get<std::vector<std::size_t>>();
            for (std::size_t b = 0; b < hist.pre.size(); ++b) {
                out << fmt::format("{:.17g},{},{}\n", hist.bin_center(b), hist.pre[b], hist.post[b]);
            }
        }
    } else if (figure == "fig4") {
        out << "arm,modeled_time,accuracy\n";
        for (std::size_t i = 0; i < records.size(); ++i) {
            const auto& r = records[i];
            if (r.series.contains("adaptation")) {
                for (const auto& p : r.series.at("adaptation")) {
                    out << fmt::format("rsa,{:.17g},{:.17g}\n", p.at("modeled_seconds").get<double>(),
                                       p.at("accuracy").get<double>());
                }
                const json& v = need(r, i, "rvw");
                out << fmt::format("rvw,0,{:.17g}\n", v.at("faulted_accuracy").get<double>());
                out << fmt::format("rvw,{:.17g},{:.17g}\n", v.at("modeled_seconds").get<double>(),
                                   v.at("accuracy").get<double>());
            } else {
                for (const auto& s : need(r, i, "rsa_sweep")) {
                    const auto arm = fmt::format("rsa-f{}", s.at("fraction").get<double>());
                    for (const auto& p : s.at("points")) {
                        out << fmt::format("{},{:.17g},{:.17g}\n", arm, p.at("modeled_seconds").get<double>(),
                                           p.at("accuracy").get<double>());
                    }
                }
            }
        }
    } else if (figure == "fig7") {
        out << "theta,layer,L,C\n";
        for (std::size_t i = 0; i < records.size(); ++i) {
            for (const auto& row : need(records[i], i, "smallworld")) {
                out << fmt::format("{:.17g},{},{:.17g},{:.17g}\n", row.at("theta").get<double>(),
                                   row.at("layer").get<std::size_t>(), row.at("L").get<double>(),
                                   row.at("C").get<double>());
            }
        }
    } else if (figure == "fig9") {
        out << "dataset,phase,epoch,layer,width,parameters,val_accuracy\n";
        for (std::size_t i = 0; i < records.size(); ++i) {
            const json& c = need(records[i], i, "cgap");
            const auto name = c.at("dataset").get<std::string>();
            for (const auto& row : c.at("trace")) {
                const auto widths = row.at("widths").get<std::vector<std::size_t>>();
                for (std::size_t k = 0; k < widths.size(); ++k) {
                    out << fmt::format("{},{},{},{},{},{},{:.17g}\n", name, row.at("phase").get<std::string>(),
                                       row.at("epoch").get<std::size_t>(), k, widths[k],
                                       row.at("parameters").get<std::size_t>(),
                                       row.at("val_accuracy").get<double>());
                }
            }
        }
    } else {
        throw std::invalid_argument(fmt::format("unknown figure '{}' (expected fig2, fig4, fig7 or fig9)", figure));
    }
}

}  // namespace xbarnet
