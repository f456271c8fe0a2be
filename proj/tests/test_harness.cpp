#include <gtest/gtest.h>

#include <algorithm>
#include <filesystem>
#include <fstream>
#include <sstream>

#include "xbarnet/harness.hpp"
#include "xbarnet/io.hpp"

using namespace xbarnet;
using nlohmann::json;
namespace fs = std::filesystem;

namespace {

struct TempDir {
    fs::path path;
    explicit TempDir(const std::string& name) : path(fs::temp_directory_path() / ("xbarnet_h_" + name)) {
        fs::remove_all(path);
        fs::create_directories(path);
    }
    ~TempDir() { fs::remove_all(path); }
};

Dataset toy(std::size_t n, RngStream& rng) {
    Dataset d;
    d.sample_shape = {6};
    d.num_classes = 3;
    for (std::size_t i = 0; i < n; ++i) {
        std::uint8_t first = 0;
        for (int k = 0; k < 6; ++k) {
            const auto b = static_cast<std::uint8_t>(rng.index(256));
            if (k == 0) first = b;
            d.pixels.push_back(b);
        }
        d.labels.push_back(first < 85 ? 0 : first < 170 ? 1 : 2);
    }
    return d;
}

DatasetSplit toy_split() {
    RngStream rng(1, "toy");
    DatasetSplit s;
    s.train = toy(600, rng);
    s.test = toy(200, rng);
    return s;
}

ExperimentConfig toy_config(ExperimentKind kind, const fs::path& out) {
    ExperimentConfig c;
    c.kind = kind;
    c.output_dir = out.string();
    c.dataset.validation_size = 100;
    c.architecture.widths = {6, 16, 8, 3};
    c.training = SgdConfig{0.05, 0.9, 16, 3};
    c.rsa.fraction = 0.25;
    c.rsa.optimizer.epochs = 2;
    c.smallworld.initial_density = {0.6, 0.8, 1.0};
    c.smallworld.final_density = {0.2, 0.4, 0.8};
    c.smallworld.rounds = 2;
    c.smallworld.initial_epochs = 2;
    c.smallworld.finetune_epochs = 1;
    c.smallworld.optimizer = SgdConfig{0.05, 0.9, 16, 1};
    c.cgap.seed_fraction = 0.2;
    c.cgap.max_growth_events = 3;
    c.cgap.peak_epochs = 1;
    c.cgap.max_prune_steps = 2;
    c.cgap.finetune_epochs = 1;
    c.cgap.optimizer = SgdConfig{0.05, 0.9, 16, 1};
    return c;
}

}  // namespace

TEST(Config, JsonRoundTrip) {
    ExperimentConfig c = toy_config(ExperimentKind::Cgap, "somewhere");
    c.master_seed = 0xFFFFFFFFFFFFFFFFULL;
    c.rsa_fractions = {0.01, 0.05};
    c.dataset.classes = {0, 1};
    const json j = config_to_json(c);
    EXPECT_EQ(j.at("schema_version"), ExperimentConfig::kSchemaVersion);
    const ExperimentConfig back = config_from_json(j);
    EXPECT_EQ(config_to_json(back), j);
    EXPECT_EQ(back.master_seed, c.master_seed);
}

TEST(Config, MissingFieldsTakeDefaults) {
    const auto c = config_from_json(json{{"schema_version", 1}, {"kind", "smallworld"}});
    EXPECT_EQ(c.kind, ExperimentKind::SmallWorld);
    EXPECT_EQ(c.device.num_levels, 32);
    EXPECT_EQ(c.smallworld.config.p, 0.0001);
}

TEST(Config, RejectsUnknownFieldsAndVersions) {
    EXPECT_THROW(config_from_json(json{{"kind", "baseline"}}), ConfigError);
    EXPECT_THROW(config_from_json(json{{"schema_version", 2}}), ConfigError);
    EXPECT_THROW(config_from_json(json{{"schema_version", 1}, {"typo", 1}}), ConfigError);
    EXPECT_THROW(config_from_json(json{{"schema_version", 1}, {"device", {{"sigma", 0.1}}}}), ConfigError);
    EXPECT_THROW(config_from_json(json{{"schema_version", 1}, {"kind", "nope"}}), ConfigError);
    EXPECT_THROW(config_from_json(json{{"schema_version", 1}, {"training", {{"learning_rate", -1}}}}), ConfigError);
    EXPECT_THROW(config_from_json(json{{"schema_version", 1}, {"device", {{"num_levels", "x"}}}}), ConfigError);
}

TEST(Checkpoint, RoundTripIsExact) {
    RngStream rng(2, "init");
    std::vector<Layer> layers{make_conv2d(1, 2, 3), ReLU{}, MaxPool{2}, make_dense(2 * 2 * 2, 3),
                              SoftmaxCrossEntropy{}};
    Network net({1, 6, 6}, std::move(layers));
    init_he_uniform(net, rng);
    Mask m = Mask::ones({8, 3});
    m.set(1, 2, false);
    net.params(3).set_sparsity(m);
    net.params(3).weight[0] = 1.0 / 3.0;
    const Network back = checkpoint_from_string(checkpoint_to_string(net));
    ASSERT_EQ(back.size(), net.size());
    for (auto li : net.weight_layers()) {
        EXPECT_EQ(back.params(li).weight, net.params(li).weight);
        EXPECT_EQ(back.params(li).bias, net.params(li).bias);
        EXPECT_EQ(back.params(li).sparsity, net.params(li).sparsity);
        EXPECT_EQ(back.params(li).trainable, net.params(li).trainable);
    }
    EXPECT_EQ(back.input_shape(), net.input_shape());
}

TEST(Checkpoint, RejectsCorruptionAndUnknownVersion) {
    RngStream rng(3, "init");
    std::vector<std::size_t> widths{3, 2};
    const std::string text = checkpoint_to_string(make_mlp(widths, rng));
    json j = json::parse(text);
    j["layers"][0]["params"]["bias"][0] = 0.5;
    EXPECT_THROW(checkpoint_from_string(j.dump()), CheckpointError);
    json v = json::parse(text);
    v["version"] = 99;
    EXPECT_THROW(checkpoint_from_string(v.dump()), CheckpointError);
    EXPECT_THROW(checkpoint_from_string("{not json"), CheckpointError);
    EXPECT_THROW(checkpoint_from_string("{}"), CheckpointError);
}

TEST(Io, AtomicWriteLeavesNoTempFiles) {
    TempDir dir("atomic");
    const auto path = dir.path / "sub" / "a.txt";
    const auto sum = write_file_atomic(path, "hello");
    EXPECT_EQ(read_file(path), "hello");
    EXPECT_EQ(sum, fnv1a64("hello"));
    write_file_atomic(path, "world");
    EXPECT_EQ(read_file(path), "world");
    std::size_t files = 0;
    for ([[maybe_unused]] const auto& e : fs::directory_iterator(path.parent_path())) ++files;
    EXPECT_EQ(files, 1u);
}

TEST(Io, Fnv1aKnownValues) {
    EXPECT_EQ(fnv1a64(""), 0xcbf29ce484222325ULL);
    EXPECT_EQ(fnv1a64("a"), 0xaf63dc4c8601ec8cULL);
}

TEST(Run, BaselineIsDeterministic) {
    TempDir a("det_a"), b("det_b");
    const auto data = toy_split();
    const auto ra = run_experiment(toy_config(ExperimentKind::Baseline, a.path), data);
    const auto rb = run_experiment(toy_config(ExperimentKind::Baseline, b.path), data);
    EXPECT_EQ(ra.status, "ok");
    EXPECT_EQ(read_file(a.path / "metrics.csv"), read_file(b.path / "metrics.csv"));
    EXPECT_EQ(ra.artifacts.at("metrics.csv"), rb.artifacts.at("metrics.csv"));
    EXPECT_EQ(ra.artifacts.at("baseline.ckpt.json"), rb.artifacts.at("baseline.ckpt.json"));
    ASSERT_EQ(ra.metrics().size(), 3u);
    const RunRecord loaded = load_run_record(a.path / "record.json");
    EXPECT_EQ(loaded.summary, ra.summary);
    EXPECT_EQ(loaded.metrics().size(), 3u);
}

TEST(Run, CompareRecordHasSpeedupAndExports) {
    TempDir dir("compare");
    const auto rec = run_experiment(toy_config(ExperimentKind::RvwCompare, dir.path), toy_split());
    EXPECT_EQ(rec.summary.at("rsa_write_pulses").get<std::uint64_t>(), 0u);
    EXPECT_GT(rec.summary.at("speedup").get<double>(), 1.0);
    std::vector<RunRecord> recs{rec};
    std::ostringstream fig4, fig2;
    export_plot_data(recs, "fig4", fig4);
    export_plot_data(recs, "fig2", fig2);
    EXPECT_EQ(fig4.str().rfind("arm,modeled_time,accuracy\n", 0), 0u);
    EXPECT_EQ(fig2.str().rfind("bin_center,count_pre,count_post\n", 0), 0u);
    EXPECT_NE(fig4.str().find("\nrvw,"), std::string::npos);
    try {
        std::ostringstream out;
        export_plot_data(recs, "fig7", out);
        FAIL();
    } catch (const std::invalid_argument& e) {
        EXPECT_NE(std::string(e.what()).find("smallworld"), std::string::npos);
    }
}

TEST(Run, RsaSweepExport) {
    TempDir dir("rsa");
    auto cfg = toy_config(ExperimentKind::Rsa, dir.path);
    cfg.rsa_fractions = {0.125, 0.25};
    const auto rec = run_experiment(cfg, toy_split());
    ASSERT_EQ(rec.series.at("rsa_sweep").size(), 2u);
    std::vector<RunRecord> recs{rec};
    std::ostringstream out;
    export_plot_data(recs, "fig4", out);
    EXPECT_NE(out.str().find("rsa-f0.125,"), std::string::npos);
}

TEST(Run, SmallWorldAndCgapExports) {
    TempDir a("sw"), b("cg");
    const auto data = toy_split();
    const auto sw = run_experiment(toy_config(ExperimentKind::SmallWorld, a.path), data);
    const auto cg = run_experiment(toy_config(ExperimentKind::Cgap, b.path), data);
    std::vector<RunRecord> s{sw}, c{cg};
    std::ostringstream fig7, fig9;
    export_plot_data(s, "fig7", fig7);
    export_plot_data(c, "fig9", fig9);
    EXPECT_EQ(fig7.str().rfind("theta,layer,L,C\n", 0), 0u);
    EXPECT_EQ(fig9.str().rfind("dataset,phase,epoch,layer,width,parameters,val_accuracy\n", 0), 0u);
    // 3 rounds x 3 weight layers
    const std::string rows = fig7.str();
    EXPECT_EQ(std::count(rows.begin(), rows.end(), '\n'), 1 + 9);
    EXPECT_TRUE(fs::exists(a.path / "smallworld_metrics.csv"));
    EXPECT_TRUE(fs::exists(b.path / "cgap_trace.csv"));
    EXPECT_LE(cg.summary.at("final_parameters").get<std::size_t>(),
              cg.summary.at("peak_parameters").get<std::size_t>());
}

TEST(Run, FailureIsRecorded) {
    TempDir dir("fail");
    auto cfg = toy_config(ExperimentKind::Baseline, dir.path);
    cfg.checkpoint = (dir.path / "missing.json").string();
    EXPECT_THROW(run_experiment(cfg, toy_split()), std::exception);
    const RunRecord r = load_run_record(dir.path / "record.json");
    EXPECT_EQ(r.status, "error");
    EXPECT_FALSE(r.error.empty());
}

TEST(Run, MissingDatasetDirIsConfigError) {
    ExperimentConfig cfg;
    EXPECT_THROW(load_dataset(cfg.dataset), ConfigError);
}
