#include "ordistill/tensor.hpp"

#include <atomic>
#include <cmath>
#include <sstream>

namespace ordistill {

const char* to_string(ErrorKind kind) noexcept {
    switch (kind) {
        case ErrorKind::Shape: return "shape error";
        case ErrorKind::Numeric: return "numeric error";
        case ErrorKind::Index: return "index error";
        case ErrorKind::Contract: return "contract error";
        case ErrorKind::Config: return "config error";
        case ErrorKind::Io: return "I/O error";
        case ErrorKind::Format: return "format error";
        case ErrorKind::Corrupt: return "corrupt artifact";
    }
    return "error";
}

std::size_t shape_numel(const Shape& shape) {
    std::size_t n = 1;
    for (std::size_t e : shape) n *= e;
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

namespace {

void validate_shape(const Shape& shape) {
    for (std::size_t e : shape) {
        if (e == 0) fail(ErrorKind::Shape, "tensor extents must be positive, got " + shape_str(shape));
    }
}

std::uint64_t next_tape_id() {
    static std::atomic<std::uint64_t> counter{0};
    return ++counter;
}

}  // namespace

template <typename T>
Tensor<T>::Tensor() : storage_(std::make_shared<TensorStorage<T>>()) {
    storage_->data.assign(1, T(0));
}

template <typename T>
Tensor<T>::Tensor(Shape shape, T fill) : storage_(std::make_shared<TensorStorage<T>>()) {
    validate_shape(shape);
    storage_->data.assign(shape_numel(shape), fill);
    storage_->shape = std::move(shape);
}

template <typename T>
Tensor<T>::Tensor(Shape shape, std::vector<T> values)
    : storage_(std::make_shared<TensorStorage<T>>()) {
    validate_shape(shape);
    if (values.size() != shape_numel(shape)) {
        fail(ErrorKind::Shape, "value count " + std::to_string(values.size()) +
                                   " does not match shape " + shape_str(shape));
    }
    storage_->shape = std::move(shape);
    storage_->data = std::move(values);
}

template <typename T>
std::size_t Tensor<T>::extent(std::size_t axis) const {
    if (axis >= rank()) {
        fail(ErrorKind::Shape, "axis " + std::to_string(axis) + " out of range for shape " +
                                   shape_str(shape()));
    }
    return storage_->shape[axis];
}

template <typename T>
T Tensor<T>::item() const {
    if (numel() != 1) fail(ErrorKind::Shape, "item() on non-scalar shape " + shape_str(shape()));
    return storage_->data[0];
}

template <typename T>
Tensor<T>& Tensor<T>::set_requires_grad(bool on) {
    storage_->requires_grad = on;
    return *this;
}

template <typename T>
Tensor<T> Tensor<T>::detach() const {
    return Tensor(storage_->shape, storage_->data);
}

template <typename T>
Tensor<T> Tensor<T>::clone() const {
    Tensor out(storage_->shape, storage_->data);
    out.storage_->requires_grad = storage_->requires_grad;
    out.storage_->grad = storage_->grad;
    return out;
}

template <typename T>
void Tensor<T>::check_finite(const char* where) const {
    for (T v : storage_->data) {
        if (!std::isfinite(v)) {
            fail(ErrorKind::Numeric, std::string("non-finite value produced by ") + where);
        }
    }
}

namespace detail {

template <typename T>
std::vector<T>& grad_buffer(TensorStorage<T>& target) {
    if (target.grad.empty()) target.grad.assign(target.data.size(), T(0));
    return target.grad;
}

template <typename T>
void accumulate_grad(TensorStorage<T>& target, std::span<const T> delta) {
    auto& g = grad_buffer(target);
    for (std::size_t i = 0; i < g.size(); ++i) g[i] += delta[i];
}

template <typename T>
Tape<T>*& active_slot() noexcept {
    thread_local Tape<T>* slot = nullptr;
    return slot;
}

}  // namespace detail

template <typename T>
Tape<T>::Tape() : id_(next_tape_id()) {}

template <typename T>
Tape<T>::~Tape() {
    if (detail::active_slot<T>() == this) detail::active_slot<T>() = nullptr;
}

template <typename T>
std::vector<std::string> Tape<T>::op_names() const {
    std::vector<std::string> names;
    names.reserve(entries_.size());
    for (const auto& e : entries_) names.emplace_back(e.op);
    return names;
}

template <typename T>
void Tape<T>::record(const char* op, const std::shared_ptr<TensorStorage<T>>& output,
                     BackwardFn fn) {
    output->requires_grad = true;
    output->tape_id = id_;
    output->tape_generation = generation_;
    entries_.push_back(Entry{op, output, std::move(fn)});
}

template <typename T>
void Tape<T>::clear() {
    entries_.clear();
    entries_.shrink_to_fit();
    ++generation_;
}

template <typename T>
void Tape<T>::backward(const Tensor<T>& loss) {
    if (loss.numel() != 1) {
        fail(ErrorKind::Contract, "backward() needs a scalar loss, got shape " + shape_str(loss.shape()));
    }
    const auto& root = loss.storage();
    if (root->tape_id != id_ || root->tape_generation != generation_) {
        fail(ErrorKind::Contract, "loss was not produced under this tape (detached or cleared)");
    }
    detail::grad_buffer(*root)[0] += T(1);
    for (auto it = entries_.rbegin(); it != entries_.rend(); ++it) {
        if (it->output->grad.empty()) continue;  // not on a path to the loss
        it->fn(std::span<const T>(it->output->grad));
    }
    for (const auto& e : entries_) {
        for (T v : e.output->grad) {
            if (!std::isfinite(v)) {
                fail(ErrorKind::Numeric, std::string("non-finite gradient flowing out of ") + e.op);
            }
        }
    }
}

template <typename T>
Tape<T>* active_tape() noexcept {
    return detail::active_slot<T>();
}

template <typename T>
TapeScope<T>::TapeScope(Tape<T>& tape) : previous_(detail::active_slot<T>()) {
    detail::active_slot<T>() = &tape;
}

template <typename T>
TapeScope<T>::~TapeScope() {
    detail::active_slot<T>() = previous_;
}

template <typename T>
NoGradScope<T>::NoGradScope() : previous_(detail::active_slot<T>()) {
    detail::active_slot<T>() = nullptr;
}

template <typename T>
NoGradScope<T>::~NoGradScope() {
    detail::active_slot<T>() = previous_;
}

#define ORDISTILL_INSTANTIATE(T)                                                  \
    template class Tensor<T>;                                                     \
    template class Tape<T>;                                                       \
    template class TapeScope<T>;                                                  \
    template class NoGradScope<T>;                                                \
    template Tape<T>* active_tape<T>() noexcept;                                  \
    template void detail::accumulate_grad<T>(TensorStorage<T>&, std::span<const T>); \
    template std::vector<T>& detail::grad_buffer<T>(TensorStorage<T>&);

ORDISTILL_INSTANTIATE(float)
ORDISTILL_INSTANTIATE(double)
#undef ORDISTILL_INSTANTIATE

}  // namespace ordistill
