#pragma once

#include <cstdint>
#include <memory>
#include <string>
#include <vector>

#include "rvseg/errors.hpp"
#include "rvseg/rng.hpp"

namespace rvseg {

// Extents of a dense row-major tensor. Rank >= 1, every extent >= 1.
using Shape = std::vector<std::int64_t>;

std::int64_t shape_numel(const Shape& shape);
std::string shape_str(const Shape& shape);
bool shape_eq(const Shape& a, const Shape& b);

// Runtime tag for serialized scalar types.
enum class Dtype : std::uint8_t { F32 = 0, F64 = 1 };

template <typename T>
constexpr Dtype dtype_of();
template <>
constexpr Dtype dtype_of<float>() { return Dtype::F32; }
template <>
constexpr Dtype dtype_of<double>() { return Dtype::F64; }

const char* dtype_name(Dtype dt);

// Observes every fresh buffer allocation made on the current thread.
// Used by the workspace-footprint checks; a null observer means "off".
struct AllocObserver {
    virtual ~AllocObserver() = default;
    virtual void on_alloc(int rank, std::int64_t numel) = 0;
};

// Installs an observer for the current thread, restoring the previous one
// when the scope ends.
class AllocScope {
public:
    explicit AllocScope(AllocObserver* obs);
    ~AllocScope();
    AllocScope(const AllocScope&) = delete;
    AllocScope& operator=(const AllocScope&) = delete;

private:
    AllocObserver* prev_;
};

namespace detail {
void notify_alloc(int rank, std::int64_t numel);
}

// Dense row-major tensor over float or double.
//
// Value semantics with a shared immutable buffer: copies are O(1) and never
// alias mutable state. All mutation happens by building a new buffer through
// one of the factory functions; reshape-style ops may share the buffer.
template <typename T>
class Tensor {
public:
    using value_type = T;

    Tensor() = default;  // undefined tensor; defined() is false

    // Takes ownership of `data`; data.size() must equal the shape's volume.
    static Tensor from_data(Shape shape, std::vector<T> data);
    // Shares an existing buffer without copying (used by reshape).
    static Tensor wrap(Shape shape, std::shared_ptr<const std::vector<T>> data);
    static Tensor zeros(const Shape& shape);
    static Tensor ones(const Shape& shape);
    static Tensor full(const Shape& shape, T value);
    static Tensor scalar(T value);  // shape [1]
    // Standard normal entries drawn in row-major order.
    static Tensor randn(const Shape& shape, Rng& rng, T stddev = T(1));

    bool defined() const { return static_cast<bool>(data_); }
    const Shape& shape() const { return shape_; }
    int rank() const { return static_cast<int>(shape_.size()); }
    std::int64_t numel() const;
    std::int64_t extent(int axis) const;

    const T* data() const { return data_->data(); }
    const std::vector<T>& vec() const { return *data_; }
    std::shared_ptr<const std::vector<T>> buffer() const { return data_; }

    // Value of the single entry of a one-element tensor.
    T item() const;

    // Bounds-checked element access, e.g. t.at(c, y, x).
    template <typename... Ix>
    T at(Ix... ix) const {
        static_assert((std::is_convertible_v<Ix, std::int64_t> && ...));
        const std::int64_t idx[] = {static_cast<std::int64_t>(ix)...};
        return (*data_)[offset_of(idx, sizeof...(Ix))];
    }

    // Tape bookkeeping: which autodiff node (if any) produced this value.
    int node() const { return node_; }
    std::uint64_t tape_gen() const { return tape_gen_; }
    void set_node(int id, std::uint64_t gen) { node_ = id; tape_gen_ = gen; }

private:
    std::int64_t offset_of(const std::int64_t* idx, std::size_t n) const;

    Shape shape_;
    std::shared_ptr<const std::vector<T>> data_;
    int node_ = -1;
    std::uint64_t tape_gen_ = 0;
};

// Binary mask with tensor extents; `true` marks a valid/foreground entry.
struct Mask {
    Shape shape;
    std::vector<std::uint8_t> v;

    static Mask zeros(Shape shape);
    static Mask ones(Shape shape);
    static Mask from_data(Shape shape, std::vector<std::uint8_t> data);

    std::int64_t numel() const { return static_cast<std::int64_t>(v.size()); }
    bool at(std::int64_t i) const { return v[static_cast<std::size_t>(i)] != 0; }
    std::int64_t count() const;
};

extern template class Tensor<float>;
extern template class Tensor<double>;

}  // namespace rvseg
