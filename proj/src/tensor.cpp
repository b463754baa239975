#include "rvseg/tensor.hpp"

#include <numeric>
#include <sstream>

namespace rvseg {

std::int64_t shape_numel(const Shape& shape) {
    std::int64_t n = 1;
    for (std::int64_t e : shape) n *= e;
    return n;
}

std::string shape_str(const Shape& shape) {
    std::ostringstream os;
    os << '[';
    for (std::size_t i = 0; i < shape.size(); ++i) {
        if (i) os << ',';
        os << shape[i];
    }
    os << ']';
    return os.str();
}

bool shape_eq(const Shape& a, const Shape& b) { return a == b; }

const char* dtype_name(Dtype dt) { return dt == Dtype::F32 ? "f32" : "f64"; }

namespace {
thread_local AllocObserver* g_alloc_observer = nullptr;

void check_shape(const Shape& shape) {
    if (shape.empty()) throw ShapeError("tensor shape must have rank >= 1");
    for (std::int64_t e : shape) {
        if (e < 1) throw ShapeError("tensor extent must be >= 1, got shape " + shape_str(shape));
    }
}
}  // namespace

AllocScope::AllocScope(AllocObserver* obs) : prev_(g_alloc_observer) {
    g_alloc_observer = obs;
}

AllocScope::~AllocScope() { g_alloc_observer = prev_; }

namespace detail {
void notify_alloc(int rank, std::int64_t numel) {
    if (g_alloc_observer) g_alloc_observer->on_alloc(rank, numel);
}
}  // namespace detail

template <typename T>
Tensor<T> Tensor<T>::from_data(Shape shape, std::vector<T> data) {
    check_shape(shape);
    const std::int64_t n = shape_numel(shape);
    if (n != static_cast<std::int64_t>(data.size())) {
        throw ShapeError("data size " + std::to_string(data.size()) +
                         " does not match shape " + shape_str(shape));
    }
    detail::notify_alloc(static_cast<int>(shape.size()), n);
    Tensor t;
    t.shape_ = std::move(shape);
    t.data_ = std::make_shared<const std::vector<T>>(std::move(data));
    return t;
}

template <typename T>
Tensor<T> Tensor<T>::wrap(Shape shape, std::shared_ptr<const std::vector<T>> data) {
    check_shape(shape);
    if (!data) throw ShapeError("wrap: null buffer");
    if (shape_numel(shape) != static_cast<std::int64_t>(data->size())) {
        throw ShapeError("wrap: buffer size " + std::to_string(data->size()) +
                         " does not match shape " + shape_str(shape));
    }
    Tensor t;
    t.shape_ = std::move(shape);
    t.data_ = std::move(data);
    return t;
}

template <typename T>
Tensor<T> Tensor<T>::zeros(const Shape& shape) {
    return full(shape, T(0));
}

template <typename T>
Tensor<T> Tensor<T>::ones(const Shape& shape) {
    return full(shape, T(1));
}

template <typename T>
Tensor<T> Tensor<T>::full(const Shape& shape, T value) {
    check_shape(shape);
    return from_data(shape, std::vector<T>(static_cast<std::size_t>(shape_numel(shape)), value));
}

template <typename T>
Tensor<T> Tensor<T>::scalar(T value) {
    return from_data({1}, {value});
}

template <typename T>
Tensor<T> Tensor<T>::randn(const Shape& shape, Rng& rng, T stddev) {
    check_shape(shape);
    std::vector<T> data(static_cast<std::size_t>(shape_numel(shape)));
    for (T& x : data) x = static_cast<T>(rng.normal()) * stddev;
    return from_data(shape, std::move(data));
}

template <typename T>
std::int64_t Tensor<T>::numel() const {
    if (!defined()) return 0;
    return static_cast<std::int64_t>(data_->size());
}

template <typename T>
std::int64_t Tensor<T>::extent(int axis) const {
    if (axis < 0 || axis >= rank()) {
        throw ShapeError("axis " + std::to_string(axis) + " out of range for shape " +
                         shape_str(shape_));
    }
    return shape_[static_cast<std::size_t>(axis)];
}

template <typename T>
T Tensor<T>::item() const {
    if (!defined() || numel() != 1) {
        throw ShapeError("item() requires a one-element tensor, got shape " +
                         (defined() ? shape_str(shape_) : std::string("<undefined>")));
    }
    return (*data_)[0];
}

template <typename T>
std::int64_t Tensor<T>::offset_of(const std::int64_t* idx, std::size_t n) const {
    if (!defined()) throw ShapeError("indexing an undefined tensor");
    if (n != shape_.size()) {
        throw ShapeError("expected " + std::to_string(shape_.size()) + " indices, got " +
                         std::to_string(n));
    }
    std::int64_t off = 0;
    for (std::size_t i = 0; i < n; ++i) {
        if (idx[i] < 0 || idx[i] >= shape_[i]) {
            throw ShapeError("index " + std::to_string(idx[i]) + " out of range for axis " +
                             std::to_string(i) + " of shape " + shape_str(shape_));
        }
        off = off * shape_[i] + idx[i];
    }
    return off;
}

Mask Mask::zeros(Shape shape) {
    return from_data(std::move(shape), {});
}

Mask Mask::ones(Shape shape) {
    check_shape(shape);
    std::vector<std::uint8_t> v(static_cast<std::size_t>(shape_numel(shape)), 1);
    return Mask{std::move(shape), std::move(v)};
}

Mask Mask::from_data(Shape shape, std::vector<std::uint8_t> data) {
    check_shape(shape);
    const std::int64_t n = shape_numel(shape);
    if (data.empty()) data.assign(static_cast<std::size_t>(n), 0);
    if (n != static_cast<std::int64_t>(data.size())) {
        throw ShapeError("mask data size does not match shape " + shape_str(shape));
    }
    return Mask{std::move(shape), std::move(data)};
}

std::int64_t Mask::count() const {
    std::int64_t c = 0;
    for (std::uint8_t b : v) c += (b != 0);
    return c;
}

template class Tensor<float>;
template class Tensor<double>;

}  // namespace rvseg
