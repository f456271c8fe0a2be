#pragma once

#include <algorithm>
#include <cstdint>
#include <random>
#include <span>
#include <string>
#include <string_view>

namespace xbarnet {

/// Deterministic random stream named by (master seed, label).
///
/// Every source of randomness in the library draws from its own labelled
/// stream ("init", "faults", "write", "rsa-select", "sw-mask",
/// "sw-shortcut", "cgap-noise", "shuffle"), so reseeding or reordering one
/// consumer never perturbs another. The seed for a stream is a stable hash
/// of the pair; the same pair always yields the same sequence on a given
/// platform.
class RngStream {
public:
    RngStream(std::uint64_t master_seed, std::string_view label);

    static std::uint64_t derive_seed(std::uint64_t master_seed, std::string_view label) noexcept;

    std::uint64_t master_seed() const noexcept { return master_seed_; }
    const std::string& label() const noexcept { return label_; }

    /// Independent stream whose label is "<label>/<suffix>".
    RngStream child(std::string_view suffix) const;

    double uniform() { return unit_(engine_); }
    double uniform(double lo, double hi) { return lo + (hi - lo) * unit_(engine_); }
    double normal() { return normal_(engine_); }
    double normal(double mean, double stddev) { return mean + stddev * normal_(engine_); }
    bool bernoulli(double p) { return p > 0.0 && (p >= 1.0 || unit_(engine_) < p); }
    /// Uniform integer in [0, n).
    std::size_t index(std::size_t n);

    template <typename T>
    void shuffle(std::span<T> values) {
        for (std::size_t i = values.size(); i > 1; --i) {
            std::swap(values[i - 1], values[index(i)]);
        }
    }

    std::mt19937_64& engine() noexcept { return engine_; }

private:
    std::uint64_t master_seed_;
    std::string label_;
    std::mt19937_64 engine_;
    std::uniform_real_distribution<double> unit_{0.0, 1.0};
    std::normal_distribution<double> normal_{0.0, 1.0};
};

}  // namespace xbarnet
