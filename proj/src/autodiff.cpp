#include "rvseg/autodiff.hpp"

#include <algorithm>
#include <atomic>
#include <cmath>
#include <set>
#include <sstream>

#include "rvseg/errors.hpp"

namespace rvseg {

namespace {
template <typename T>
thread_local Tape<T>* g_active_tape = nullptr;

std::atomic<std::uint64_t> g_next_gen{1};

// Same-shape accumulation used during the reverse sweep.
template <typename T>
Tensor<T> add_same(const Tensor<T>& a, const Tensor<T>& b) {
    std::vector<T> out(a.vec());
    const T* p = b.data();
    for (std::size_t i = 0; i < out.size(); ++i) out[i] += p[i];
    return Tensor<T>::from_data(a.shape(), std::move(out));
}
}  // namespace

namespace detail {

template <typename T>
Tape<T>* active_tape() {
    return g_active_tape<T>;
}

template <typename T>
void set_active_tape(Tape<T>* tape) {
    g_active_tape<T> = tape;
}

template <typename T>
int active_id(const Tensor<T>& t) {
    Tape<T>* tape = g_active_tape<T>;
    if (!tape) return -1;
    return tape->id_of(t);
}

template <typename T>
void maybe_record(Tensor<T>& out, const std::vector<const Tensor<T>*>& inputs,
                  typename Tape<T>::BackwardFn fn) {
    Tape<T>* tape = g_active_tape<T>;
    if (!tape) return;
    std::vector<int> ids(inputs.size(), -1);
    bool any = false;
    for (std::size_t i = 0; i < inputs.size(); ++i) {
        ids[i] = tape->id_of(*inputs[i]);
        any = any || ids[i] >= 0;
    }
    if (!any) return;
    const int id = tape->record(out.shape(), std::move(ids), std::move(fn));
    out.set_node(id, tape->generation());
}

template Tape<float>* active_tape<float>();
template Tape<double>* active_tape<double>();
template void set_active_tape<float>(Tape<float>*);
template void set_active_tape<double>(Tape<double>*);
template int active_id<float>(const Tensor<float>&);
template int active_id<double>(const Tensor<double>&);
template void maybe_record<float>(Tensor<float>&, const std::vector<const Tensor<float>*>&,
                                  typename Tape<float>::BackwardFn);
template void maybe_record<double>(Tensor<double>&, const std::vector<const Tensor<double>*>&,
                                   typename Tape<double>::BackwardFn);

}  // namespace detail

template <typename T>
Tape<T>::Tape() : gen_(g_next_gen.fetch_add(1)) {}

template <typename T>
int Tape<T>::watch(Tensor<T>& t) {
    if (!t.defined()) throw ContractError("watch: undefined tensor");
    if (t.node() >= 0 && t.tape_gen() == gen_) return t.node();  // already a leaf here
    Node node;
    node.shape = t.shape();
    const int id = static_cast<int>(nodes_.size());
    nodes_.push_back(std::move(node));
    t.set_node(id, gen_);
    return id;
}

template <typename T>
int Tape<T>::record(const Shape& out_shape, std::vector<int> input_ids, BackwardFn fn) {
    Node node;
    node.shape = out_shape;
    node.inputs = std::move(input_ids);
    node.fn = std::move(fn);
    for (int id : node.inputs) {
        if (id >= static_cast<int>(nodes_.size())) {
            throw ContractError("record: input node id out of range");
        }
    }
    nodes_.push_back(std::move(node));
    return static_cast<int>(nodes_.size()) - 1;
}

template <typename T>
int Tape<T>::id_of(const Tensor<T>& t) const {
    if (t.node() < 0 || t.tape_gen() != gen_) return -1;
    if (t.node() >= static_cast<int>(nodes_.size())) return -1;
    return t.node();
}

template <typename T>
GradStore<T> Tape<T>::backward(const Tensor<T>& loss) const {
    const int root = id_of(loss);
    if (root < 0) {
        throw ContractError("backward: loss tensor is not recorded on this tape");
    }
    if (loss.numel() != 1) {
        throw ContractError("backward: loss must be a one-element tensor, got shape " +
                            shape_str(loss.shape()));
    }

    NoRecordScope<T> quiet;  // closures must not append to any tape

    std::vector<Tensor<T>> grads(nodes_.size());
    grads[static_cast<std::size_t>(root)] = Tensor<T>::ones(loss.shape());

    for (int i = root; i >= 0; --i) {
        const Node& node = nodes_[static_cast<std::size_t>(i)];
        Tensor<T>& g = grads[static_cast<std::size_t>(i)];
        if (!g.defined() || !node.fn) continue;  // unreached node or leaf
        std::vector<Tensor<T>> input_grads = node.fn(g);
        if (input_grads.size() != node.inputs.size()) {
            throw ContractError("backward: op produced " + std::to_string(input_grads.size()) +
                                " gradients for " + std::to_string(node.inputs.size()) +
                                " inputs");
        }
        for (std::size_t k = 0; k < node.inputs.size(); ++k) {
            const int id = node.inputs[k];
            if (id < 0 || !input_grads[k].defined()) continue;
            const Node& in_node = nodes_[static_cast<std::size_t>(id)];
            if (!shape_eq(input_grads[k].shape(), in_node.shape)) {
                throw ContractError("backward: gradient shape " +
                                    shape_str(input_grads[k].shape()) +
                                    " does not match input shape " + shape_str(in_node.shape));
            }
            Tensor<T>& slot = grads[static_cast<std::size_t>(id)];
            slot = slot.defined() ? add_same(slot, input_grads[k]) : input_grads[k];
        }
        if (i != root) g = Tensor<T>();  // free intermediate gradient early
    }

    GradStore<T> store;
    store.gen_ = gen_;
    store.grads_ = std::move(grads);
    return store;
}

template <typename T>
Tensor<T> GradStore<T>::grad(const Tensor<T>& t) const {
    if (!t.defined()) throw ContractError("grad: undefined tensor");
    const int id = t.node();
    if (id >= 0 && t.tape_gen() == gen_ && id < static_cast<int>(grads_.size()) &&
        grads_[static_cast<std::size_t>(id)].defined()) {
        return grads_[static_cast<std::size_t>(id)];
    }
    return Tensor<T>::zeros(t.shape());
}

template <typename T>
bool GradStore<T>::has(const Tensor<T>& t) const {
    const int id = t.node();
    return id >= 0 && t.tape_gen() == gen_ && id < static_cast<int>(grads_.size()) &&
           grads_[static_cast<std::size_t>(id)].defined();
}

template <typename T>
TapeScope<T>::TapeScope(Tape<T>& tape) : prev_(detail::active_tape<T>()) {
    detail::set_active_tape<T>(&tape);
}

template <typename T>
TapeScope<T>::~TapeScope() {
    detail::set_active_tape<T>(prev_);
}

template <typename T>
NoRecordScope<T>::NoRecordScope() : prev_(detail::active_tape<T>()) {
    detail::set_active_tape<T>(nullptr);
}

template <typename T>
NoRecordScope<T>::~NoRecordScope() {
    detail::set_active_tape<T>(prev_);
}

double grad_rel_err(double analytic, double numeric) {
    const double denom = std::max({std::abs(analytic), std::abs(numeric), 1e-5});
    return std::abs(analytic - numeric) / denom;
}

namespace {
double eval_scalar(const ScalarFn& f, const std::vector<Tensor<double>>& params,
                   const char* what) {
    Tensor<double> out = f(params);
    if (!out.defined() || out.numel() != 1) {
        throw EvalError(std::string("gradient check: ") + what +
                        " evaluation did not produce a one-element tensor");
    }
    const double v = out.item();
    if (!std::isfinite(v)) {
        throw EvalError(std::string("gradient check: non-finite value from ") + what +
                        " evaluation");
    }
    return v;
}

std::vector<std::int64_t> unflatten(std::int64_t flat, const Shape& shape) {
    std::vector<std::int64_t> coord(shape.size());
    for (std::size_t i = shape.size(); i-- > 0;) {
        coord[i] = flat % shape[i];
        flat /= shape[i];
    }
    return coord;
}
}  // namespace

GradReport finite_diff_check(const ScalarFn& f, std::vector<Tensor<double>> params,
                             const std::vector<std::string>& names, double h, Rng& rng,
                             std::int64_t max_coords_per_param) {
    if (params.size() != names.size()) {
        throw ContractError("finite_diff_check: params/names size mismatch");
    }
    if (!(h > 0)) throw ContractError("finite_diff_check: step must be positive");

    // Analytic pass.
    Tape<double> tape;
    for (Tensor<double>& p : params) tape.watch(p);
    GradStore<double> store;
    {
        TapeScope<double> scope(tape);
        Tensor<double> loss = f(params);
        if (!loss.defined() || loss.numel() != 1) {
            throw EvalError("gradient check: function did not produce a one-element tensor");
        }
        if (!std::isfinite(loss.item())) {
            throw EvalError("gradient check: non-finite loss in analytic pass");
        }
        store = tape.backward(loss);
    }

    GradReport report;
    for (std::size_t pi = 0; pi < params.size(); ++pi) {
        const Tensor<double>& p = params[pi];
        const Tensor<double> g = store.grad(p);

        std::vector<std::int64_t> coords;
        const std::int64_t n = p.numel();
        if (n <= max_coords_per_param) {
            coords.resize(static_cast<std::size_t>(n));
            for (std::int64_t i = 0; i < n; ++i) coords[static_cast<std::size_t>(i)] = i;
        } else {
            std::set<std::int64_t> picked;
            while (static_cast<std::int64_t>(picked.size()) < max_coords_per_param) {
                picked.insert(static_cast<std::int64_t>(rng.below(static_cast<std::uint64_t>(n))));
            }
            coords.assign(picked.begin(), picked.end());
        }

        GradCheckEntry entry;
        entry.name = names[pi];
        entry.coords_checked = static_cast<std::int64_t>(coords.size());
        entry.max_rel_err = -1.0;

        for (std::int64_t c : coords) {
            auto probe = [&](double delta) {
                std::vector<double> bumped(p.vec());
                bumped[static_cast<std::size_t>(c)] += delta;
                std::vector<Tensor<double>> args = params;
                args[pi] = Tensor<double>::from_data(p.shape(), std::move(bumped));
                return eval_scalar(f, args, "finite-difference");
            };
            const double numeric = (probe(h) - probe(-h)) / (2.0 * h);
            const double analytic = g.vec()[static_cast<std::size_t>(c)];
            const double rel = grad_rel_err(analytic, numeric);
            if (rel > entry.max_rel_err) {
                entry.max_rel_err = rel;
                entry.worst_coord = unflatten(c, p.shape());
                entry.analytic = analytic;
                entry.numeric = numeric;
            }
        }
        if (entry.max_rel_err < 0) entry.max_rel_err = 0.0;
        report.max_rel_err = std::max(report.max_rel_err, entry.max_rel_err);
        report.entries.push_back(std::move(entry));
    }
    return report;
}

std::string GradReport::json() const {
    std::ostringstream os;
    os << "{\"max_rel_err\":" << max_rel_err << ",\"params\":[";
    for (std::size_t i = 0; i < entries.size(); ++i) {
        const GradCheckEntry& e = entries[i];
        if (i) os << ',';
        os << "{\"name\":\"" << e.name << "\",\"coords_checked\":" << e.coords_checked
           << ",\"max_rel_err\":" << e.max_rel_err << ",\"analytic\":" << e.analytic
           << ",\"numeric\":" << e.numeric << ",\"worst_coord\":[";
        for (std::size_t k = 0; k < e.worst_coord.size(); ++k) {
            if (k) os << ',';
            os << e.worst_coord[k];
        }
        os << "]}";
    }
    os << "]}";
    return os.str();
}

template class Tape<float>;
template class Tape<double>;
template class GradStore<float>;
template class GradStore<double>;
template class TapeScope<float>;
template class TapeScope<double>;
template class NoRecordScope<float>;
template class NoRecordScope<double>;

}  // namespace rvseg
