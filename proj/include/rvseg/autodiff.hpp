#pragma once

#include <cstdint>
#include <functional>
#include <optional>
#include <string>
#include <vector>

#include "rvseg/rng.hpp"
#include "rvseg/tensor.hpp"

namespace rvseg {

template <typename T>
class Tape;

// Gradients produced by one backward pass. Lookup is by the node id stamped
// on a tensor when it was watched or produced; tensors the tape never saw
// get a zero gradient of their own shape.
template <typename T>
class GradStore {
public:
    Tensor<T> grad(const Tensor<T>& t) const;
    bool has(const Tensor<T>& t) const;

private:
    friend class Tape<T>;
    std::uint64_t gen_ = 0;
    std::vector<Tensor<T>> grads_;  // indexed by node id; undefined => zero
};

// Append-only record of differentiable operations (a Wengert list).
//
// Leaves enter via watch(); every op executed while a TapeScope is active
// appends one node holding a closure that maps the upstream gradient to
// gradients for each input. backward() replays the list in reverse.
template <typename T>
class Tape {
public:
    // Maps d(loss)/d(output) to d(loss)/d(input) for every input, in order.
    using BackwardFn = std::function<std::vector<Tensor<T>>(const Tensor<T>& upstream)>;

    Tape();
    Tape(const Tape&) = delete;
    Tape& operator=(const Tape&) = delete;

    // Registers a leaf; its gradient will be accumulated and retrievable.
    int watch(Tensor<T>& t);

    // Appends an interior node. `input_ids` may contain -1 for untracked
    // inputs whose gradient slot is then discarded.
    int record(const Shape& out_shape, std::vector<int> input_ids, BackwardFn fn);

    // Distinguishes this tape's node ids from those of earlier tapes.
    std::uint64_t generation() const { return gen_; }
    std::size_t size() const { return nodes_.size(); }

    // Reverse sweep from `loss` (a one-element tensor recorded on this tape).
    // No operations are recorded while the sweep runs.
    GradStore<T> backward(const Tensor<T>& loss) const;

    // Node id of `t` on this tape, or -1 if untracked or from another tape.
    int id_of(const Tensor<T>& t) const;

private:
    struct Node {
        Shape shape;
        std::vector<int> inputs;
        BackwardFn fn;  // empty for leaves
    };

    std::uint64_t gen_;
    std::vector<Node> nodes_;
};

// Makes `tape` the active recording target for the current thread.
template <typename T>
class TapeScope {
public:
    explicit TapeScope(Tape<T>& tape);
    ~TapeScope();
    TapeScope(const TapeScope&) = delete;
    TapeScope& operator=(const TapeScope&) = delete;

private:
    Tape<T>* prev_;
};

// Suspends recording for the current thread (used inside backward closures).
template <typename T>
class NoRecordScope {
public:
    NoRecordScope();
    ~NoRecordScope();
    NoRecordScope(const NoRecordScope&) = delete;
    NoRecordScope& operator=(const NoRecordScope&) = delete;

private:
    Tape<T>* prev_;
};

// Recording hooks used by the op implementations.
namespace detail {
template <typename T>
Tape<T>* active_tape();
template <typename T>
void set_active_tape(Tape<T>* tape);
// Id of `t` on the active tape, or -1.
template <typename T>
int active_id(const Tensor<T>& t);
// Records `out` if any input is tracked on the active tape.
template <typename T>
void maybe_record(Tensor<T>& out, const std::vector<const Tensor<T>*>& inputs,
                  typename Tape<T>::BackwardFn fn);
}  // namespace detail

// Result of comparing one parameter's analytic gradient against central
// differences, at the worst coordinate checked.
struct GradCheckEntry {
    std::string name;
    std::int64_t coords_checked = 0;
    std::vector<std::int64_t> worst_coord;
    double analytic = 0.0;
    double numeric = 0.0;
    double max_rel_err = 0.0;
};

struct GradReport {
    std::vector<GradCheckEntry> entries;
    double max_rel_err = 0.0;
    std::string json() const;
};

// Scalar-valued function of several tensors; must return a one-element tensor.
using ScalarFn = std::function<Tensor<double>(const std::vector<Tensor<double>>&)>;

// Central-difference check of d(f)/d(params) at step h. At most
// `max_coords_per_param` coordinates per tensor are probed (all of them when
// the tensor is small enough); coordinates are chosen by `rng`. Non-finite
// values from `f` raise EvalError.
GradReport finite_diff_check(const ScalarFn& f, std::vector<Tensor<double>> params,
                             const std::vector<std::string>& names, double h, Rng& rng,
                             std::int64_t max_coords_per_param = 16);

// Relative error with an absolute floor: gradients below the floor are
// compared absolutely against tol * floor. The floor sits above the
// central-difference resolution (~eps/(2h) of the loss scale), so agreement
// below it carries no signal, while a dropped or sign-flipped term at any
// magnitude still clears it by orders of magnitude.
double grad_rel_err(double analytic, double numeric);

extern template class Tape<float>;
extern template class Tape<double>;
extern template class GradStore<float>;
extern template class GradStore<double>;
extern template class TapeScope<float>;
extern template class TapeScope<double>;
extern template class NoRecordScope<float>;
extern template class NoRecordScope<double>;

}  // namespace rvseg
