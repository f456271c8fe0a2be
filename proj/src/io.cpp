#include "xbarnet/io.hpp"

#include <fmt/format.h>
#include <unistd.h>

#include <cerrno>
#include <cstdio>
#include <cstring>
#include <fstream>
#include <ostream>
#include <sstream>

#include "json.hpp"

namespace xbarnet {

namespace fs = std::filesystem;
using nlohmann::json;

std::uint64_t fnv1a64(std::string_view bytes) noexcept {
    std::uint64_t h = 0xcbf29ce484222325ULL;
    for (unsigned char c : bytes) {
        h ^= c;
        h *= 0x100000001b3ULL;
    }
    return h;
}

std::string hex64(std::uint64_t value) { return fmt::format("{:016x}", value); }

std::uint64_t write_file_atomic(const fs::path& path, std::string_view bytes) {
    if (path.has_parent_path()) {
        fs::create_directories(path.parent_path());
    }
    fs::path tmp = path;
    tmp += fmt::format(".tmp{}", static_cast<long>(::getpid()));
    std::FILE* f = std::fopen(tmp.c_str(), "wb");
    if (f == nullptr) {
        throw std::runtime_error(fmt::format("cannot open {} for writing: {}", tmp.string(), std::strerror(errno)));
    }
    bool ok = std::fwrite(bytes.data(), 1, bytes.size(), f) == bytes.size();
    ok = std::fflush(f) == 0 && ok;
    ok = ::fsync(::fileno(f)) == 0 && ok;
    ok = std::fclose(f) == 0 && ok;
    if (!ok) {
        std::error_code ec;
        fs::remove(tmp, ec);
        throw std::runtime_error(fmt::format("failed writing {}", tmp.string()));
    }
    fs::rename(tmp, path);
    return fnv1a64(bytes);
}

std::string read_file(const fs::path& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) {
        throw std::runtime_error(fmt::format("cannot open {}", path.string()));
    }
    std::ostringstream ss;
    ss << in.rdbuf();
    return ss.str();
}

namespace {

std::string mask_bits(const Mask& m) {
    std::string s(m.size(), '0');
    for (std::size_t i = 0; i < m.size(); ++i) {
        if (m[i]) s[i] = '1';
    }
    return s;
}

Mask parse_mask(const std::string& s, const Shape& shape, const char* what) {
    if (s.size() != shape_size(shape)) {
        throw CheckpointError(fmt::format("{} mask has {} bits, expected {}", what, s.size(), shape_size(shape)));
    }
    Mask m(shape, false);
    for (std::size_t i = 0; i < s.size(); ++i) {
        if (s[i] != '0' && s[i] != '1') {
            throw CheckpointError(fmt::format("{} mask has invalid character at {}", what, i));
        }
        m.set(i, s[i] == '1');
    }
    return m;
}

json params_json(const ParamBlock& p) {
    return {{"weight", p.weight.values()},
            {"bias", p.bias.values()},
            {"sparsity", mask_bits(p.sparsity)},
            {"trainable", mask_bits(p.trainable)},
            {"bias_trainable", p.bias_trainable}};
}

ParamBlock parse_params(const json& j, std::size_t fan_in, std::size_t fan_out) {
    ParamBlock p(fan_in, fan_out);
    auto w = j.at("weight").get<std::vector<double>>();
    auto b = j.at("bias").get<std::vector<double>>();
    if (w.size() != fan_in * fan_out || b.size() != fan_out) {
        throw CheckpointError(fmt::format("parameter sizes ({}, {}) do not match layer [{}, {}]", w.size(), b.size(),
                                          fan_in, fan_out));
    }
    p.weight = Tensor({fan_in, fan_out}, std::move(w));
    p.bias = Tensor({fan_out}, std::move(b));
    p.set_trainable(parse_mask(j.at("trainable").get<std::string>(), p.weight.shape(), "trainable"));
    p.set_sparsity(parse_mask(j.at("sparsity").get<std::string>(), p.weight.shape(), "sparsity"));
    p.bias_trainable = j.at("bias_trainable").get<bool>();
    return p;
}

json layer_json(const Layer& layer) {
    return std::visit(
        [](const auto& l) -> json {
            using T = std::decay_t<decltype(l)>;
            if constexpr (std::is_same_v<T, Dense>) {
                json j = {{"type", "dense"}, {"in", l.params.fan_in()}, {"out", l.params.fan_out()}};
                j["params"] = params_json(l.params);
                return j;
            } else if constexpr (std::is_same_v<T, Conv2d>) {
                json j = {{"type", "conv2d"},
                          {"in_channels", l.in_channels},
                          {"out_channels", l.out_channels},
                          {"kernel", l.kernel},
                          {"stride", l.stride}};
                j["params"] = params_json(l.params);
                return j;
            } else if constexpr (std::is_same_v<T, MaxPool>) {
                return {{"type", "maxpool"}, {"kernel", l.kernel}};
            } else if constexpr (std::is_same_v<T, ReLU>) {
                return {{"type", "relu"}};
            } else {
                return {{"type", "softmax_cross_entropy"}};
            }
        },
        layer);
}

Layer parse_layer(const json& j) {
    const auto type = j.at("type").get<std::string>();
    if (type == "dense") {
        auto in = j.at("in").get<std::size_t>();
        auto out = j.at("out").get<std::size_t>();
        return Dense{parse_params(j.at("params"), in, out)};
    }
    if (type == "conv2d") {
        Conv2d c;
        c.in_channels = j.at("in_channels").get<std::size_t>();
        c.out_channels = j.at("out_channels").get<std::size_t>();
        c.kernel = j.at("kernel").get<std::size_t>();
        c.stride = j.at("stride").get<std::size_t>();
        c.params = parse_params(j.at("params"), c.in_channels * c.kernel * c.kernel, c.out_channels);
        return c;
    }
    if (type == "maxpool") return MaxPool{j.at("kernel").get<std::size_t>()};
    if (type == "relu") return ReLU{};
    if (type == "softmax_cross_entropy") return SoftmaxCrossEntropy{};
    throw CheckpointError(fmt::format("unknown layer type '{}'", type));
}

}  // namespace

std::string checkpoint_to_string(const Network& net) {
    json j;
    j["format"] = "xbarnet-checkpoint";
    j["version"] = kCheckpointVersion;
    j["input_shape"] = net.input_shape();
    j["rng_label"] = net.rng_label();
    json layers = json::array();
    for (const auto& l : net.layers()) {
        layers.push_back(layer_json(l));
    }
    j["layers"] = std::move(layers);
    j["checksum"] = hex64(fnv1a64(j.dump()));
    return j.dump() + "\n";
}

Network checkpoint_from_string(std::string_view text) {
    json j;
    try {
        j = json::parse(text);
    } catch (const json::parse_error& e) {
        throw CheckpointError(fmt::format("checkpoint is not valid JSON: {}", e.what()));
    }
    try {
        if (j.value("format", "") != "xbarnet-checkpoint") {
            throw CheckpointError("not an xbarnet checkpoint");
        }
        const int version = j.at("version").get<int>();
        if (version != kCheckpointVersion) {
            throw CheckpointError(fmt::format("unsupported checkpoint version {} (expected {})", version,
                                              kCheckpointVersion));
        }
        const auto stored = j.at("checksum").get<std::string>();
        j.erase("checksum");
        const auto actual = hex64(fnv1a64(j.dump()));
        if (stored != actual) {
            throw CheckpointError(fmt::format("checkpoint checksum mismatch: stored {}, computed {}", stored, actual));
        }
        std::vector<Layer> layers;
        for (const auto& lj : j.at("layers")) {
            layers.push_back(parse_layer(lj));
        }
        return Network(j.at("input_shape").get<Shape>(), std::move(layers), j.at("rng_label").get<std::string>());
    } catch (const json::exception& e) {
        throw CheckpointError(fmt::format("malformed checkpoint: {}", e.what()));
    }
}

std::uint64_t save_checkpoint(const fs::path& path, const Network& net) {
    return write_file_atomic(path, checkpoint_to_string(net));
}

Network load_checkpoint(const fs::path& path) { return checkpoint_from_string(read_file(path)); }

void write_histogram_csv(std::ostream& out, const WeightHistogram& hist) {
    out << "bin_center,count_pre,count_post\n";
    for (std::size_t b = 0; b < hist.pre.size(); ++b) {
        out << fmt::format("{:.17g},{},{}\n", hist.bin_center(b), hist.pre[b], hist.post[b]);
    }
}

void write_cost_csv(std::ostream& out, const CostReport& cost) {
    out << "write_seconds,read_seconds,total\n";
    out << fmt::format("{:.17g},{:.17g},{:.17g}\n", cost.write_seconds, cost.read_seconds, cost.total);
}

void write_adaptation_csv(std::ostream& out, const AdaptationTrace& trace) {
    out << "epoch,accuracy,modeled_seconds\n";
    for (const auto& p : trace.points) {
        out << fmt::format("{},{:.17g},{:.17g}\n", p.epoch, p.accuracy, p.modeled_seconds);
    }
}

void write_rvw_summary_csv(std::ostream& out, const RvwReport& report) {
    out << "pulses_total,reads_total,cells_converged,cells_failed\n";
    out << fmt::format("{},{},{},{}\n", report.pulses_total, report.reads_total, report.cells_converged,
                       report.cells_failed);
}

}  // namespace xbarnet
