#pragma once

#include <cstddef>
#include <initializer_list>
#include <new>
#include <span>
#include <string>
#include <vector>

namespace tamms {

using Shape = std::vector<std::size_t>;

// Storage starts on a 64-byte boundary. Eigen's vectorised kernels peel
// differently depending on the base address, so unaligned buffers would make
// the same product round differently from run to run.
template <typename T>
struct AlignedAllocator {
    using value_type = T;
    static constexpr std::align_val_t kAlign{64};
    AlignedAllocator() = default;
    template <typename U>
    AlignedAllocator(const AlignedAllocator<U>&) {}
    T* allocate(std::size_t n) { return static_cast<T*>(::operator new(n * sizeof(T), kAlign)); }
    void deallocate(T* p, std::size_t) { ::operator delete(p, kAlign); }
    friend bool operator==(const AlignedAllocator&, const AlignedAllocator&) { return true; }
};

using Storage = std::vector<double, AlignedAllocator<double>>;

std::size_t shape_numel(const Shape& shape);
std::string shape_to_string(const Shape& shape);

// Dense row-major array of doubles. Value type: copies are deep.
class Tensor {
public:
    Tensor() = default;
    explicit Tensor(Shape shape, double fill = 0.0);
    Tensor(Shape shape, std::vector<double> data);

    static Tensor scalar(double value);
    static Tensor vector(std::vector<double> values);

    const Shape& shape() const { return shape_; }
    std::size_t rank() const { return shape_.size(); }
    std::size_t dim(std::size_t axis) const;
    std::size_t numel() const { return data_.size(); }
    bool empty() const { return data_.empty(); }

    std::span<double> data() { return data_; }
    std::span<const double> data() const { return data_; }

    double& operator[](std::size_t i) { return data_[i]; }
    double operator[](std::size_t i) const { return data_[i]; }

    // Multi-index access, bounds-checked.
    double& at(std::initializer_list<std::size_t> index);
    double at(std::initializer_list<std::size_t> index) const;

    // Value of a single-element tensor.
    double item() const;

    Tensor reshaped(Shape shape) const;
    void fill(double value);
    bool all_finite() const;

    Tensor& operator+=(const Tensor& other);

    friend bool operator==(const Tensor& a, const Tensor& b) = default;

private:
    std::size_t flat_index(std::initializer_list<std::size_t> index) const;

    Shape shape_;
    Storage data_;
};

// Throws DimensionError naming `what` when shapes differ.
void require_same_shape(const Tensor& a, const Tensor& b, const char* what);

}  // namespace tamms
