#include "xbarnet/data.hpp"

#include <algorithm>
#include <fstream>
#include <iterator>

#include <fmt/format.h>

namespace xbarnet {

namespace {

constexpr std::uint32_t kIdxImageMagic = 0x00000803;
constexpr std::uint32_t kIdxLabelMagic = 0x00000801;
constexpr std::size_t kCifarRecord = 3073;

std::vector<std::uint8_t> read_file(const std::filesystem::path& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) {
        throw FormatError(fmt::format("{}: cannot open file", path.string()));
    }
    return {std::istreambuf_iterator<char>(in), std::istreambuf_iterator<char>()};
}

std::uint32_t read_be32(const std::vector<std::uint8_t>& bytes, std::size_t offset, const std::filesystem::path& path) {
    if (offset + 4 > bytes.size()) {
        throw FormatError(fmt::format("{}: truncated header at offset {}", path.string(), offset));
    }
    return (std::uint32_t{bytes[offset]} << 24) | (std::uint32_t{bytes[offset + 1]} << 16) |
           (std::uint32_t{bytes[offset + 2]} << 8) | std::uint32_t{bytes[offset + 3]};
}

}  // namespace

Tensor Dataset::batch(std::span<const std::size_t> indices) const {
    const std::size_t n = sample_size();
    Shape shape{indices.size()};
    shape.insert(shape.end(), sample_shape.begin(), sample_shape.end());
    Tensor out(std::move(shape));
    double* dst = out.raw();
    for (std::size_t idx : indices) {
        const std::uint8_t* src = pixels.data() + idx * n;
        for (std::size_t k = 0; k < n; ++k) {
            *dst++ = static_cast<double>(src[k]) / 255.0;
        }
    }
    return out;
}

std::vector<int> Dataset::batch_labels(std::span<const std::size_t> indices) const {
    std::vector<int> out;
    out.reserve(indices.size());
    for (std::size_t idx : indices) {
        out.push_back(labels[idx]);
    }
    return out;
}

Tensor Dataset::batch_range(std::size_t begin, std::size_t end) const {
    std::vector<std::size_t> idx(end - begin);
    for (std::size_t i = 0; i < idx.size(); ++i) {
        idx[i] = begin + i;
    }
    return batch(idx);
}

Dataset Dataset::take(std::span<const std::size_t> indices) const {
    Dataset out;
    out.sample_shape = sample_shape;
    out.num_classes = num_classes;
    out.name = name;
    const std::size_t n = sample_size();
    out.pixels.reserve(indices.size() * n);
    out.labels.reserve(indices.size());
    for (std::size_t idx : indices) {
        out.pixels.insert(out.pixels.end(), pixels.begin() + static_cast<std::ptrdiff_t>(idx * n),
                          pixels.begin() + static_cast<std::ptrdiff_t>((idx + 1) * n));
        out.labels.push_back(labels[idx]);
    }
    return out;
}

Dataset Dataset::head(std::size_t n) const {
    n = std::min(n, size());
    std::vector<std::size_t> idx(n);
    for (std::size_t i = 0; i < n; ++i) {
        idx[i] = i;
    }
    return take(idx);
}

Dataset load_idx_pair(const std::filesystem::path& images, const std::filesystem::path& labels) {
    const auto img = read_file(images);
    const auto lab = read_file(labels);

    const std::uint32_t img_magic = read_be32(img, 0, images);
    if (img_magic != kIdxImageMagic) {
        throw FormatError(fmt::format("{}: bad magic 0x{:08x} at offset 0 (expected 0x{:08x})", images.string(), img_magic,
                                      kIdxImageMagic));
    }
    const std::uint32_t lab_magic = read_be32(lab, 0, labels);
    if (lab_magic != kIdxLabelMagic) {
        throw FormatError(fmt::format("{}: bad magic 0x{:08x} at offset 0 (expected 0x{:08x})", labels.string(), lab_magic,
                                      kIdxLabelMagic));
    }

    const std::size_t count = read_be32(img, 4, images);
    const std::size_t rows = read_be32(img, 8, images);
    const std::size_t cols = read_be32(img, 12, images);
    const std::size_t label_count = read_be32(lab, 4, labels);
    if (count != label_count) {
        throw FormatError(fmt::format("{}: {} images but {} has {} labels", images.string(), count, labels.string(), label_count));
    }

    const std::size_t img_bytes = 16 + count * rows * cols;
    if (img.size() < img_bytes) {
        throw FormatError(fmt::format("{}: truncated at offset {} (expected {} bytes)", images.string(), img.size(), img_bytes));
    }
    if (lab.size() < 8 + count) {
        throw FormatError(fmt::format("{}: truncated at offset {} (expected {} bytes)", labels.string(), lab.size(), 8 + count));
    }

    Dataset out;
    out.sample_shape = {1, rows, cols};
    out.pixels.assign(img.begin() + 16, img.begin() + static_cast<std::ptrdiff_t>(img_bytes));
    out.labels.reserve(count);
    for (std::size_t i = 0; i < count; ++i) {
        const int label = lab[8 + i];
        if (label > 9) {
            throw FormatError(fmt::format("{}: label {} out of range at offset {}", labels.string(), label, 8 + i));
        }
        out.labels.push_back(label);
    }
    out.num_classes = 10;
    return out;
}

DatasetSplit load_mnist(const std::filesystem::path& dir) {
    DatasetSplit split{load_idx_pair(dir / "train-images-idx3-ubyte", dir / "train-labels-idx1-ubyte"),
                       load_idx_pair(dir / "t10k-images-idx3-ubyte", dir / "t10k-labels-idx1-ubyte")};
    split.train.name = "mnist-train";
    split.test.name = "mnist-test";
    return split;
}

Dataset load_cifar10_batch(const std::filesystem::path& file, std::optional<std::size_t> limit) {
    const auto bytes = read_file(file);
    if (bytes.empty() || bytes.size() % kCifarRecord != 0) {
        throw FormatError(fmt::format("{}: size {} is not a multiple of the {}-byte record length", file.string(),
                                      bytes.size(), kCifarRecord));
    }
    std::size_t records = bytes.size() / kCifarRecord;
    if (limit) {
        records = std::min(records, *limit);
    }
    Dataset out;
    out.sample_shape = {3, 32, 32};
    out.num_classes = 10;
    out.pixels.reserve(records * (kCifarRecord - 1));
    out.labels.reserve(records);
    for (std::size_t r = 0; r < records; ++r) {
        const std::size_t offset = r * kCifarRecord;
        const int label = bytes[offset];
        if (label > 9) {
            throw FormatError(fmt::format("{}: label {} out of range at offset {}", file.string(), label, offset));
        }
        out.labels.push_back(label);
        out.pixels.insert(out.pixels.end(), bytes.begin() + static_cast<std::ptrdiff_t>(offset + 1),
                          bytes.begin() + static_cast<std::ptrdiff_t>(offset + kCifarRecord));
    }
    return out;
}

DatasetSplit load_cifar10(const std::filesystem::path& dir, std::optional<std::size_t> subset) {
    DatasetSplit split;
    split.train.sample_shape = {3, 32, 32};
    for (int b = 1; b <= 5; ++b) {
        if (subset && split.train.size() >= *subset) {
            break;
        }
        std::optional<std::size_t> remaining;
        if (subset) {
            remaining = *subset - split.train.size();
        }
        Dataset part = load_cifar10_batch(dir / fmt::format("data_batch_{}.bin", b), remaining);
        split.train.pixels.insert(split.train.pixels.end(), part.pixels.begin(), part.pixels.end());
        split.train.labels.insert(split.train.labels.end(), part.labels.begin(), part.labels.end());
    }
    split.test = load_cifar10_batch(dir / "test_batch.bin", subset);
    split.train.name = "cifar10-train";
    split.test.name = "cifar10-test";
    return split;
}

std::pair<Dataset, Dataset> split_validation(const Dataset& data, std::size_t validation_size) {
    validation_size = std::min(validation_size, data.size());
    const std::size_t cut = data.size() - validation_size;
    std::vector<std::size_t> head(cut);
    std::vector<std::size_t> tail(validation_size);
    for (std::size_t i = 0; i < cut; ++i) {
        head[i] = i;
    }
    for (std::size_t i = 0; i < validation_size; ++i) {
        tail[i] = cut + i;
    }
    return {data.take(head), data.take(tail)};
}

Dataset filter_classes(const Dataset& data, std::span<const int> classes) {
    std::vector<std::size_t> keep;
    for (std::size_t i = 0; i < data.size(); ++i) {
        if (std::find(classes.begin(), classes.end(), data.labels[i]) != classes.end()) {
            keep.push_back(i);
        }
    }
    return data.take(keep);
}

Dataset with_label_noise(const Dataset& data, double rate, RngStream& rng) {
    Dataset out = data;
    const auto k = data.num_classes;
    for (auto& label : out.labels) {
        if (rng.bernoulli(rate) && k > 1) {
            const auto shift = 1 + rng.index(k - 1);
            label = static_cast<int>((static_cast<std::size_t>(label) + shift) % k);
        }
    }
    return out;
}

}  // namespace xbarnet
