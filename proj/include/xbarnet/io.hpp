#pragma once

#include <cstdint>
#include <filesystem>
#include <iosfwd>
#include <stdexcept>
#include <string>
#include <string_view>

#include "xbarnet/crossbar.hpp"
#include "xbarnet/device.hpp"
#include "xbarnet/nn.hpp"
#include "xbarnet/rsa.hpp"

namespace xbarnet {

/// 64-bit FNV-1a.
std::uint64_t fnv1a64(std::string_view bytes) noexcept;
std::string hex64(std::uint64_t value);

/// Writes `bytes` to a sibling temp file, flushes it and renames it over
/// `path`, so readers see either the old file or the complete new one.
/// Returns the FNV-1a checksum of the bytes.
std::uint64_t write_file_atomic(const std::filesystem::path& path, std::string_view bytes);
std::string read_file(const std::filesystem::path& path);

/// Checkpoint file that cannot be used: wrong format, unknown version,
/// checksum mismatch or inconsistent shapes.
class CheckpointError : public std::runtime_error {
public:
    using std::runtime_error::runtime_error;
};

inline constexpr int kCheckpointVersion = 1;

/// JSON checkpoint of a network: layer list, weights, biases and both masks.
/// Optimizer momentum is not stored. Doubles round-trip exactly.
std::string checkpoint_to_string(const Network& net);
Network checkpoint_from_string(std::string_view text);
std::uint64_t save_checkpoint(const std::filesystem::path& path, const Network& net);
Network load_checkpoint(const std::filesystem::path& path);

// CSV writers. Doubles are printed with 17 significant digits.
void write_histogram_csv(std::ostream& out, const WeightHistogram& hist);      // bin_center,count_pre,count_post
void write_cost_csv(std::ostream& out, const CostReport& cost);                // write_seconds,read_seconds,total
void write_adaptation_csv(std::ostream& out, const AdaptationTrace& trace);    // epoch,accuracy,modeled_seconds
void write_rvw_summary_csv(std::ostream& out, const RvwReport& report);        // pulses_total,reads_total,...

}  // namespace xbarnet
