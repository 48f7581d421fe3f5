#pragma once

#include <cstddef>
#include <cstdint>
#include <functional>
#include <memory>
#include <span>
#include <string>
#include <vector>

#include "ordistill/error.hpp"

namespace ordistill {

using Shape = std::vector<std::size_t>;

std::size_t shape_numel(const Shape& shape);
std::string shape_str(const Shape& shape);

template <typename T>
struct TensorStorage {
    Shape shape;
    std::vector<T> data;
    std::vector<T> grad;  // empty until a gradient is accumulated
    bool requires_grad = false;
    // Tape that produced this value; 0 for leaves and untracked results.
    std::uint64_t tape_id = 0;
    std::uint64_t tape_generation = 0;
};

/// Dense row-major tensor handle.
///
/// Copies share storage (the autodiff graph refers to values by identity);
/// use clone() for an independent deep copy. Scalars are rank-0 tensors.
template <typename T>
class Tensor {
public:
    using value_type = T;

    Tensor();
    explicit Tensor(Shape shape, T fill = T(0));
    Tensor(Shape shape, std::vector<T> values);

    static Tensor scalar(T value) { return Tensor(Shape{}, std::vector<T>{value}); }
    static Tensor zeros(Shape shape) { return Tensor(std::move(shape), T(0)); }
    static Tensor ones(Shape shape) { return Tensor(std::move(shape), T(1)); }

    const Shape& shape() const { return storage_->shape; }
    std::size_t rank() const { return storage_->shape.size(); }
    std::size_t extent(std::size_t axis) const;
    std::size_t numel() const { return storage_->data.size(); }

    std::span<const T> values() const { return storage_->data; }
    std::span<T> mutable_values() { return storage_->data; }
    T item() const;

    bool requires_grad() const { return storage_->requires_grad; }
    Tensor& set_requires_grad(bool on);
    bool has_grad() const { return !storage_->grad.empty(); }
    /// Accumulated gradient; empty span when no gradient has flowed here.
    std::span<const T> grad() const { return storage_->grad; }
    std::span<T> mutable_grad() { return storage_->grad; }
    void zero_grad() { storage_->grad.clear(); }

    /// Copy of the values with no gradient history.
    Tensor detach() const;
    Tensor clone() const;

    /// Throws ErrorKind::Numeric naming `where` if any element is NaN/Inf.
    void check_finite(const char* where) const;

    const std::shared_ptr<TensorStorage<T>>& storage() const { return storage_; }
    bool same_storage(const Tensor& other) const { return storage_ == other.storage_; }

private:
    std::shared_ptr<TensorStorage<T>> storage_;
};

/// Ordered record of differentiable operations executed while the tape is
/// active on the current thread.
template <typename T>
class Tape {
public:
    using BackwardFn = std::function<void(std::span<const T> grad_out)>;

    Tape();
    Tape(const Tape&) = delete;
    Tape& operator=(const Tape&) = delete;
    ~Tape();

    std::uint64_t id() const { return id_; }
    std::uint64_t generation() const { return generation_; }
    std::size_t size() const { return entries_.size(); }
    std::vector<std::string> op_names() const;

    void record(const char* op, const std::shared_ptr<TensorStorage<T>>& output,
                BackwardFn fn);

    /// Drops every entry and the activations the entries captured. Tensors
    /// produced before the clear can no longer be differentiated.
    void clear();

    /// Seeds d(loss)/d(loss) = 1 and replays entries in reverse order.
    void backward(const Tensor<T>& loss);

private:
    struct Entry {
        const char* op;
        std::shared_ptr<TensorStorage<T>> output;
        BackwardFn fn;
    };
    std::uint64_t id_;
    std::uint64_t generation_ = 1;
    std::vector<Entry> entries_;
};

/// Tape receiving records on this thread, or nullptr.
template <typename T>
Tape<T>* active_tape() noexcept;

/// Binds a tape to the current thread for the lifetime of the scope.
template <typename T>
class TapeScope {
public:
    explicit TapeScope(Tape<T>& tape);
    TapeScope(const TapeScope&) = delete;
    TapeScope& operator=(const TapeScope&) = delete;
    ~TapeScope();

private:
    Tape<T>* previous_;
};

/// Disables recording on this thread for the lifetime of the scope.
template <typename T>
class NoGradScope {
public:
    NoGradScope();
    NoGradScope(const NoGradScope&) = delete;
    NoGradScope& operator=(const NoGradScope&) = delete;
    ~NoGradScope();

private:
    Tape<T>* previous_;
};

template <typename T>
void backward(const Tensor<T>& loss, Tape<T>& tape) {
    tape.backward(loss);
}

namespace detail {

template <typename T>
void accumulate_grad(TensorStorage<T>& target, std::span<const T> delta);

template <typename T>
std::vector<T>& grad_buffer(TensorStorage<T>& target);

}  // namespace detail

}  // namespace ordistill
