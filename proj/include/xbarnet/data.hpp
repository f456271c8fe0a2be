#pragma once

#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <optional>
#include <span>
#include <stdexcept>
#include <string>
#include <vector>

#include "xbarnet/rng.hpp"
#include "xbarnet/tensor.hpp"

namespace xbarnet {

/// Malformed or inconsistent input file. The message names the file and,
/// where meaningful, the byte offset.
class FormatError : public std::runtime_error {
public:
    using std::runtime_error::runtime_error;
};

/// Labelled image set stored as raw bytes; pixels are scaled to [0, 1] when
/// a batch is materialised.
struct Dataset {
    Shape sample_shape;  // e.g. {1, 28, 28}
    std::vector<std::uint8_t> pixels;
    std::vector<int> labels;
    std::size_t num_classes = 10;
    std::string name;

    std::size_t size() const noexcept { return labels.size(); }
    std::size_t sample_size() const noexcept { return shape_size(sample_shape); }
    bool empty() const noexcept { return labels.empty(); }

    /// Batch tensor of shape {indices.size(), sample_shape...}.
    Tensor batch(std::span<const std::size_t> indices) const;
    std::vector<int> batch_labels(std::span<const std::size_t> indices) const;
    /// Contiguous range [begin, end).
    Tensor batch_range(std::size_t begin, std::size_t end) const;

    Dataset take(std::span<const std::size_t> indices) const;
    Dataset head(std::size_t n) const;
};

struct DatasetSplit {
    Dataset train;
    Dataset test;
};

/// Reads train-images-idx3-ubyte, train-labels-idx1-ubyte and the t10k pair.
DatasetSplit load_mnist(const std::filesystem::path& dir);

/// Reads one IDX image/label pair (exposed for tests).
Dataset load_idx_pair(const std::filesystem::path& images, const std::filesystem::path& labels);

/// Reads data_batch_1..5.bin and test_batch.bin. When `subset` is set only
/// the first `subset` records of each split are kept.
DatasetSplit load_cifar10(const std::filesystem::path& dir, std::optional<std::size_t> subset = std::nullopt);

/// Parses one CIFAR-10 binary batch file.
Dataset load_cifar10_batch(const std::filesystem::path& file, std::optional<std::size_t> limit = std::nullopt);

/// Splits off the last `validation_size` samples.
std::pair<Dataset, Dataset> split_validation(const Dataset& data, std::size_t validation_size);

/// Keeps only samples whose label is in `classes`; labels are unchanged.
Dataset filter_classes(const Dataset& data, std::span<const int> classes);

/// Replaces each label, with probability `rate`, by a different uniformly
/// drawn class.
Dataset with_label_noise(const Dataset& data, double rate, RngStream& rng);

}  // namespace xbarnet
