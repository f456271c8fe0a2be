#pragma once

#include <cstddef>
#include <cstdint>
#include <new>
#include <span>
#include <stdexcept>
#include <string>
#include <vector>

namespace xbarnet {

/// Raised when tensor or layer dimensions disagree.
class DimensionError : public std::invalid_argument {
public:
    using std::invalid_argument::invalid_argument;
};

using Shape = std::vector<std::size_t>;

/// Cache-line aligned allocator. Vectorised reductions peel a number of
/// leading elements that depends on the buffer address; a fixed alignment
/// keeps their summation order, and so the results, identical across runs.
template <typename T>
struct AlignedAllocator {
    using value_type = T;
    static constexpr std::align_val_t alignment{64};

    AlignedAllocator() noexcept = default;
    template <typename U>
    AlignedAllocator(const AlignedAllocator<U>&) noexcept {}

    T* allocate(std::size_t n) { return static_cast<T*>(::operator new(n * sizeof(T), alignment)); }
    void deallocate(T* p, std::size_t) noexcept { ::operator delete(p, alignment); }

    template <typename U>
    bool operator==(const AlignedAllocator<U>&) const noexcept { return true; }
};

using Storage = std::vector<double, AlignedAllocator<double>>;

std::size_t shape_size(const Shape& shape);
std::string shape_string(const Shape& shape);

/// Dense row-major array of doubles.
///
/// The product of the shape always equals the number of stored values. A
/// rank-0 (default constructed) tensor holds nothing.
class Tensor {
public:
    Tensor() = default;
    explicit Tensor(Shape shape, double fill = 0.0);
    Tensor(Shape shape, std::vector<double> values);

    const Shape& shape() const noexcept { return shape_; }
    std::size_t rank() const noexcept { return shape_.size(); }
    std::size_t dim(std::size_t axis) const;
    std::size_t size() const noexcept { return data_.size(); }
    bool empty() const noexcept { return data_.empty(); }

    std::span<double> data() noexcept { return data_; }
    std::span<const double> data() const noexcept { return data_; }
    double* raw() noexcept { return data_.data(); }
    const double* raw() const noexcept { return data_.data(); }
    Storage& values() noexcept { return data_; }
    const Storage& values() const noexcept { return data_; }
    std::vector<double> to_vector() const { return {data_.begin(), data_.end()}; }

    double& operator[](std::size_t i) noexcept { return data_[i]; }
    double operator[](std::size_t i) const noexcept { return data_[i]; }

    /// Element access for rank-2 tensors.
    double& at(std::size_t row, std::size_t col);
    double at(std::size_t row, std::size_t col) const;

    /// Changes the shape in place; the element count must not change.
    void reshape(Shape shape);
    Tensor reshaped(Shape shape) const;

    void fill(double value);
    bool all_finite() const noexcept;

    friend bool operator==(const Tensor& a, const Tensor& b) = default;

private:
    Shape shape_;
    Storage data_;
};

/// Binary mask with the same shape as the weight tensor it guards.
class Mask {
public:
    Mask() = default;
    explicit Mask(Shape shape, bool value = true);

    static Mask ones(Shape shape) { return Mask(std::move(shape), true); }
    static Mask zeros(Shape shape) { return Mask(std::move(shape), false); }

    const Shape& shape() const noexcept { return shape_; }
    std::size_t size() const noexcept { return bits_.size(); }

    bool operator[](std::size_t i) const noexcept { return bits_[i] != 0; }
    void set(std::size_t i, bool value) noexcept { bits_[i] = value ? 1 : 0; }
    bool at(std::size_t row, std::size_t col) const;
    void set(std::size_t row, std::size_t col, bool value);

    std::size_t count() const noexcept;
    bool all() const noexcept { return count() == size(); }
    bool none() const noexcept { return count() == 0; }
    double density() const noexcept;

    std::span<const std::uint8_t> bits() const noexcept { return bits_; }
    std::vector<std::uint8_t>& bits_mut() noexcept { return bits_; }

    friend bool operator==(const Mask& a, const Mask& b) = default;

private:
    Shape shape_;
    std::vector<std::uint8_t> bits_;
};

}  // namespace xbarnet
