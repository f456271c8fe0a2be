// xbarnet command-line driver.

#include <fmt/format.h>

#include <cstdlib>
#include <fstream>
#include <iostream>
#include <sstream>

#include "CLI11.hpp"
#include "json.hpp"
#include "xbarnet/harness.hpp"
#include "xbarnet/io.hpp"

using nlohmann::json;
using namespace xbarnet;
namespace fs = std::filesystem;

namespace {

struct Common {
    std::string config;
    std::uint64_t seed = 0;
    bool seed_set = false;
    std::string out;
    std::string dataset_dir;
};

void add_common(CLI::App* sub, Common& c) {
    sub->add_option("--config", c.config, "Experiment config JSON")->check(CLI::ExistingFile);
    sub->add_option_function<std::uint64_t>(
        "--seed", [&c](const std::uint64_t& s) { c.seed = s, c.seed_set = true; }, "Master seed");
    sub->add_option("--out", c.out, "Output directory");
    sub->add_option("--dataset-dir", c.dataset_dir, "Dataset directory (default $XBARNET_MNIST_DIR)");
}

ExperimentConfig resolve(const Common& c, ExperimentKind kind) {
    ExperimentConfig cfg = c.config.empty() ? ExperimentConfig{} : load_config(c.config);
    cfg.kind = kind;
    if (c.seed_set) cfg.master_seed = c.seed;
    if (!c.out.empty()) cfg.output_dir = c.out;
    if (!c.dataset_dir.empty()) {
        cfg.dataset.dir = c.dataset_dir;
    } else if (cfg.dataset.dir.empty()) {
        if (const char* env = std::getenv("XBARNET_MNIST_DIR")) cfg.dataset.dir = env;
    }
    cfg.validate();
    return cfg;
}

void print(const json& j) { std::cout << j.dump(2) << '\n'; }

json record_summary(const RunRecord& r) {
    return {{"status", r.status}, {"output_dir", r.config.value("output_dir", "")}, {"summary", r.summary}};
}

void save_csv(const fs::path& path, const std::string& body) { write_file_atomic(path, body); }

/// Programs a checkpoint once onto faulty crossbars and writes the read-back
/// network, fault maps and the weight histogram.
json cmd_program(const ExperimentConfig& cfg, const std::string& checkpoint) {
    const Network trained = load_checkpoint(checkpoint);
    RngStream faults(cfg.master_seed, "faults");
    RngStream writes(cfg.master_seed, "write");
    const CrossbarModel model = program_network(trained, cfg.device, faults, writes);
    const fs::path dir = cfg.output_dir;
    save_checkpoint(dir / "programmed.ckpt.json", model.network);
    std::ostringstream hist;
    write_histogram_csv(hist, model.histogram);
    save_csv(dir / "histogram.csv", hist.str());
    json layers = json::array();
    for (std::size_t m = 0; m < model.arrays.size(); ++m) {
        const auto& a = model.arrays[m];
        std::ostringstream fm;
        a.faults().write_csv(fm);
        save_csv(dir / fmt::format("faults_layer{}.csv", m), fm.str());
        layers.push_back({{"rows", a.rows()},
                          {"cols", a.cols()},
                          {"sf1", a.faults().count(FaultCode::SF1)},
                          {"sf0", a.faults().count(FaultCode::SF0)},
                          {"write_pulses", a.write_pulse_count()}});
    }
    json out = {{"layers", layers}, {"write_pulses", model.write_pulses()}};
    if (!cfg.dataset.dir.empty()) {
        const auto data = load_dataset(cfg.dataset);
        out["ideal_accuracy"] = evaluate(trained, data.test);
        out["programmed_accuracy"] = evaluate(model.network, data.test);
    }
    return out;
}

json cmd_inject(const ExperimentConfig& cfg, const std::string& checkpoint, std::size_t rows, std::size_t cols) {
    RngStream faults(cfg.master_seed, "faults");
    std::vector<std::pair<std::size_t, std::size_t>> shapes;
    if (!checkpoint.empty()) {
        const Network net = load_checkpoint(checkpoint);
        for (auto li : net.weight_layers()) shapes.emplace_back(net.params(li).fan_in(), net.params(li).fan_out());
    } else {
        if (rows == 0 || cols == 0) throw std::invalid_argument("give --checkpoint or both --rows and --cols");
        shapes.emplace_back(rows, cols);
    }
    json layers = json::array();
    for (std::size_t m = 0; m < shapes.size(); ++m) {
        const FaultMap fm = inject_faults(shapes[m].first, shapes[m].second, cfg.device, faults);
        std::ostringstream csv;
        fm.write_csv(csv);
        save_csv(fs::path(cfg.output_dir) / fmt::format("faults_layer{}.csv", m), csv.str());
        const double n = static_cast<double>(fm.size());
        layers.push_back({{"rows", fm.rows()},
                          {"cols", fm.cols()},
                          {"sf1", fm.count(FaultCode::SF1)},
                          {"sf0", fm.count(FaultCode::SF0)},
                          {"sf1_rate", fm.count(FaultCode::SF1) / n},
                          {"sf0_rate", fm.count(FaultCode::SF0) / n}});
    }
    return {{"layers", layers}};
}

/// Programs once, then reprograms every array with read-verify-write.
json cmd_rvw(const ExperimentConfig& cfg, const std::string& checkpoint) {
    const Network trained = load_checkpoint(checkpoint);
    RngStream faults(cfg.master_seed, "faults");
    RngStream writes(cfg.master_seed, "write");
    CrossbarModel model = program_network(trained, cfg.device, faults, writes);
    const auto w0 = model.write_pulses();
    const auto r0 = model.reads();
    RngStream rvw_writes = writes.child("rvw");
    RvwReport report;
    for (std::size_t m = 0; m < model.arrays.size(); ++m) {
        report.merge(model.arrays[m].program_rvw(trained.params(model.mapped_layers[m]).weight, cfg.rvw, rvw_writes));
    }
    model.sync_weights();
    const CostReport cost = cost_of(model.write_pulses() - w0, model.reads() - r0, cfg.timing);
    const fs::path dir = cfg.output_dir;
    std::ostringstream pulses, summary, costs;
    report.write_pulse_histogram(pulses);
    write_rvw_summary_csv(summary, report);
    write_cost_csv(costs, cost);
    save_csv(dir / "rvw_pulses.csv", pulses.str());
    save_csv(dir / "rvw_summary.csv", summary.str());
    save_csv(dir / "cost.csv", costs.str());
    save_checkpoint(dir / "rvw.ckpt.json", model.network);
    json out = {{"pulses_total", report.pulses_total},
                {"reads_total", report.reads_total},
                {"cells_converged", report.cells_converged},
                {"cells_failed", report.cells_failed},
                {"modeled_seconds", cost.total}};
    if (!cfg.dataset.dir.empty()) {
        out["rvw_accuracy"] = evaluate(model.network, load_dataset(cfg.dataset).test);
    }
    return out;
}

json cmd_eval(const ExperimentConfig& cfg, const std::string& checkpoint) {
    const Network net = load_checkpoint(checkpoint);
    const auto data = load_dataset(cfg.dataset);
    return {{"test_accuracy", evaluate(net, data.test)},
            {"parameters", net.weight_count()},
            {"dense_parameters", net.dense_weight_count()}};
}

json cmd_export(const std::vector<std::string>& paths, const std::string& figure, const std::string& out) {
    std::vector<RunRecord> records;
    for (const auto& p : paths) records.push_back(load_run_record(p));
    std::ostringstream csv;
    export_plot_data(records, figure, csv);
    if (out.empty()) {
        std::cout << csv.str();
        return nullptr;
    }
    const auto sum = write_file_atomic(out, csv.str());
    return {{"figure", figure}, {"path", out}, {"checksum", hex64(sum)}};
}

int fail(const std::string& type, const std::string& message, int code) {
    std::cerr << json{{"error", type}, {"message", message}}.dump() << '\n';
    return code;
}

}  // namespace

int main(int argc, char** argv) {
    CLI::App app{"Crossbar-aware neural network experiments"};
    app.require_subcommand(1);
    Common common;

    std::string checkpoint;
    std::size_t epochs = 0;
    std::size_t rows = 0, cols = 0;
    std::vector<double> fractions;
    std::vector<std::string> records;
    std::string figure, out_file;

    auto* train = app.add_subcommand("train", "Train the dense baseline");
    add_common(train, common);
    train->add_option("--epochs", epochs, "Override training epochs");

    auto* program = app.add_subcommand("program", "Program a checkpoint once onto faulty crossbars");
    add_common(program, common);
    program->add_option("--checkpoint", checkpoint)->required();

    auto* inject = app.add_subcommand("inject-faults", "Sample stuck-at fault maps");
    add_common(inject, common);
    inject->add_option("--checkpoint", checkpoint, "Use the weight shapes of this network");
    inject->add_option("--rows", rows);
    inject->add_option("--cols", cols);

    auto* rvw = app.add_subcommand("rvw", "Reprogram with read-verify-write and report its cost");
    add_common(rvw, common);
    rvw->add_option("--checkpoint", checkpoint)->required();

    auto* adapt = app.add_subcommand("adapt-rsa", "Adapt sparse overlays on a faulty crossbar model");
    add_common(adapt, common);
    adapt->add_option("--checkpoint", checkpoint, "Trained dense network");
    adapt->add_option("--fraction", fractions, "Overlay fractions to sweep");

    auto* compare = app.add_subcommand("compare", "Overlay adaptation versus read-verify-write");
    add_common(compare, common);
    compare->add_option("--checkpoint", checkpoint, "Trained dense network");

    auto* sw = app.add_subcommand("smallworld", "Small-world pruning pipeline");
    add_common(sw, common);
    sw->add_option("--checkpoint", checkpoint, "Trained dense reference");

    auto* cgap = app.add_subcommand("cgap", "Grow from a seed, then prune");
    add_common(cgap, common);
    cgap->add_option("--checkpoint", checkpoint, "Trained dense reference");

    auto* eval = app.add_subcommand("eval", "Test accuracy of a checkpoint");
    add_common(eval, common);
    eval->add_option("--checkpoint", checkpoint)->required();

    auto* exp = app.add_subcommand("export-plot", "Figure data from run records");
    exp->add_option("--record", records, "record.json files")->required()->check(CLI::ExistingFile);
    exp->add_option("--figure", figure)->required()->check(CLI::IsMember({"fig2", "fig4", "fig7", "fig9"}));
    exp->add_option("--out", out_file, "CSV path (stdout when omitted)");

    try {
        app.parse(argc, argv);
    } catch (const CLI::CallForHelp& e) {
        return app.exit(e);
    } catch (const CLI::CallForAllHelp& e) {
        return app.exit(e);
    } catch (const CLI::ParseError& e) {
        return fail("usage", e.what(), 2);
    }

    try {
        auto run_kind = [&](ExperimentKind kind) {
            ExperimentConfig cfg = resolve(common, kind);
            if (!checkpoint.empty()) cfg.checkpoint = checkpoint;
            if (epochs > 0) cfg.training.epochs = epochs;
            if (!fractions.empty()) cfg.rsa_fractions = fractions;
            print(record_summary(run_experiment(cfg)));
        };
        auto direct = [&](ExperimentKind kind) { return resolve(common, kind); };

        if (*train) {
            run_kind(ExperimentKind::Baseline);
        } else if (*adapt) {
            run_kind(ExperimentKind::Rsa);
        } else if (*compare) {
            run_kind(ExperimentKind::RvwCompare);
        } else if (*sw) {
            run_kind(ExperimentKind::SmallWorld);
        } else if (*cgap) {
            run_kind(ExperimentKind::Cgap);
        } else if (*program) {
            print(cmd_program(direct(ExperimentKind::Rsa), checkpoint));
        } else if (*inject) {
            print(cmd_inject(direct(ExperimentKind::Rsa), checkpoint, rows, cols));
        } else if (*rvw) {
            print(cmd_rvw(direct(ExperimentKind::RvwCompare), checkpoint));
        } else if (*eval) {
            print(cmd_eval(direct(ExperimentKind::Baseline), checkpoint));
        } else if (*exp) {
            auto res = cmd_export(records, figure, out_file);
            if (!res.is_null()) print(res);
        }
    } catch (const ConfigError& e) {
        return fail("config", e.what(), 3);
    } catch (const CheckpointError& e) {
        return fail("checkpoint", e.what(), 4);
    } catch (const FormatError& e) {
        return fail("format", e.what(), 5);
    } catch (const std::exception& e) {
        return fail("runtime", e.what(), 1);
    }
    return 0;
}
