#pragma once

#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <iosfwd>
#include <map>
#include <span>
#include <string>
#include <string_view>
#include <vector>

#include "json.hpp"
#include "xbarnet/cgap.hpp"
#include "xbarnet/crossbar.hpp"
#include "xbarnet/data.hpp"
#include "xbarnet/device.hpp"
#include "xbarnet/nn.hpp"
#include "xbarnet/rsa.hpp"
#include "xbarnet/smallworld.hpp"

namespace xbarnet {

/// Invalid or unparseable experiment configuration.
class ConfigError : public std::invalid_argument {
public:
    using std::invalid_argument::invalid_argument;
};

enum class ExperimentKind { Baseline, Rsa, RvwCompare, SmallWorld, Cgap };

std::string_view kind_name(ExperimentKind kind);
ExperimentKind parse_kind(std::string_view name);

struct DatasetSpec {
    std::string name = "mnist";  // "mnist" or "cifar10"
    std::string dir;
    std::size_t validation_size = 5000;  // tail of the training split
    std::size_t subset = 0;              // keep the first n records of each split; 0 keeps all
    std::vector<int> classes;            // empty keeps every class
};

struct ArchitectureSpec {
    std::string kind = "mlp";  // "mlp" or "lenet5"
    std::vector<std::size_t> widths{784, 300, 100, 10};
};

/// Pipeline settings plus a geometric density schedule.
struct SmallWorldSpec {
    SmallWorldConfig config;
    std::vector<double> initial_density{0.3, 0.6, 1.0};
    std::vector<double> final_density{0.035, 0.1, 0.7};
    std::size_t rounds = 4;
    std::size_t initial_epochs = 10;
    std::size_t finetune_epochs = 3;
    SgdConfig optimizer;

    SmallWorldSchedule schedule() const;
};

struct ExperimentConfig {
    static constexpr int kSchemaVersion = 1;

    ExperimentKind kind = ExperimentKind::Baseline;
    DatasetSpec dataset;
    ArchitectureSpec architecture;
    SgdConfig training{0.05, 0.9, 64, 15};  // dense baseline
    std::string checkpoint;  // trained dense network; skips baseline training when set
    DeviceConfig device;
    RvwConfig rvw;
    TimingModel timing;
    RsaConfig rsa;
    std::vector<double> rsa_fractions;  // "rsa" kind sweep; empty means rsa.fraction only
    SmallWorldSpec smallworld;
    CgapConfig cgap;
    std::uint64_t master_seed = 1;
    std::string output_dir = "run";

    void validate() const;
};

nlohmann::json config_to_json(const ExperimentConfig& cfg);
/// Missing fields take their defaults. Unknown fields, a missing or
/// unsupported schema_version, and invalid values raise ConfigError.
ExperimentConfig config_from_json(const nlohmann::json& j);
ExperimentConfig load_config(const std::filesystem::path& path);

/// One row of a per-epoch metric series.
struct MetricRow {
    std::string series;
    std::size_t step = 0;
    std::vector<std::pair<std::string, double>> values;
};

/// Everything a run produced. Rows are only ever appended.
class RunRecord {
public:
    nlohmann::json config;
    nlohmann::json summary = nlohmann::json::object();
    nlohmann::json series = nlohmann::json::object();  // plot series keyed by name
    std::map<std::string, std::string> artifacts;       // file name -> FNV-1a hex
    double wall_clock_seconds = 0.0;
    std::string status = "running";  // "running", "ok" or "error"
    std::string error;

    void append(MetricRow row) { metrics_.push_back(std::move(row)); }
    const std::vector<MetricRow>& metrics() const noexcept { return metrics_; }

    nlohmann::json to_json() const;
    static RunRecord from_json(const nlohmann::json& j);

private:
    std::vector<MetricRow> metrics_;
};

RunRecord load_run_record(const std::filesystem::path& path);

/// Loads the dataset named by the spec, applying class filtering and the
/// subset limit.
DatasetSplit load_dataset(const DatasetSpec& spec);

/// Untrained network for the architecture, initialised from `rng`.
Network build_architecture(const ArchitectureSpec& spec, RngStream& rng);

/// Dense baseline trained on `train`, reporting accuracy on `test` after
/// every epoch into `record` (series "baseline") when given.
Network train_baseline(const ExperimentConfig& cfg, const Dataset& train, const Dataset& test,
                       RunRecord* record = nullptr);

/// Runs the configured pipeline and writes record.json, metric CSVs and
/// checkpoints into cfg.output_dir, each atomically. A failing pipeline is
/// recorded with status "error" before the exception propagates.
RunRecord run_experiment(const ExperimentConfig& cfg);

/// Same, with datasets supplied by the caller (skips loading).
RunRecord run_experiment(const ExperimentConfig& cfg, const DatasetSplit& data);

/// Tidy CSV for a figure:
///   fig2  bin_center,count_pre,count_post
///   fig4  arm,modeled_time,accuracy
///   fig7  theta,layer,L,C
///   fig9  dataset,phase,epoch,layer,width,parameters,val_accuracy
/// Throws std::invalid_argument naming the missing series.
void export_plot_data(std::span<const RunRecord> records, std::string_view figure, std::ostream& out);

}  // namespace xbarnet
