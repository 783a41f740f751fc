#pragma once

// Dense 64-bit tensors and the reverse-mode gradient tape.

#include <cstddef>
#include <functional>
#include <memory>
#include <new>
#include <span>
#include <stdexcept>
#include <string>
#include <vector>

namespace cvcs {

class Error : public std::runtime_error {
public:
    using std::runtime_error::runtime_error;
};

using Shape = std::vector<std::size_t>;

/// 64-byte aligned storage. Eigen picks its vectorized reduction order from
/// the buffer address, so a fixed alignment keeps results bit-identical across
/// runs.
template <class T>
struct AlignedAllocator {
    using value_type = T;
    static constexpr std::align_val_t kAlignment{64};

    AlignedAllocator() = default;
    template <class U>
    AlignedAllocator(const AlignedAllocator<U>&) noexcept {}

    T* allocate(std::size_t n) {
        return static_cast<T*>(::operator new(n * sizeof(T), kAlignment));
    }
    void deallocate(T* p, std::size_t) noexcept { ::operator delete(p, kAlignment); }

    template <class U>
    bool operator==(const AlignedAllocator<U>&) const noexcept {
        return true;
    }
};

using Buffer = std::vector<double, AlignedAllocator<double>>;

std::size_t shape_size(const Shape& shape);
std::string shape_string(const Shape& shape);

/// Shared handle to an n-dimensional row-major array of doubles.
///
/// Copies alias the same storage. Values change only through ops (which
/// create new tensors) or through `mutable_data()`, which optimizers and
/// initializers use on parameter tensors.
class Tensor {
public:
    Tensor() = default;
    explicit Tensor(Shape shape, double fill = 0.0);
    Tensor(Shape shape, std::vector<double> values);

    static Tensor scalar(double value);

    bool defined() const { return static_cast<bool>(impl_); }
    const Shape& shape() const;
    std::size_t ndim() const { return shape().size(); }
    std::size_t dim(std::size_t axis) const;
    std::size_t size() const;

    std::span<const double> data() const;
    std::span<double> mutable_data();
    double item() const;

    bool requires_grad() const;
    Tensor& set_requires_grad(bool on = true);

    bool has_grad() const;
    std::span<const double> grad() const;
    /// Grad buffer, allocated (zero-filled) on first access.
    std::span<double> mutable_grad();
    void zero_grad();

    /// Deep copy of the values, detached from any graph.
    Tensor clone() const;
    bool same_storage(const Tensor& other) const { return impl_ == other.impl_; }

    friend bool operator==(const Tensor& a, const Tensor& b);

private:
    struct Impl {
        Shape shape;
        Buffer data;
        Buffer grad;
        bool requires_grad = false;
    };
    std::shared_ptr<Impl> impl_;

    Impl& impl() const;
};

/// Ordered record of executed differentiable ops.
///
/// Constructing a Tape makes it the active recorder for the current thread
/// until it is destroyed; ops executed while no tape is active are not
/// recorded. `backward` replays the recorded closures in exact reverse order.
class Tape {
public:
    Tape();
    ~Tape();
    Tape(const Tape&) = delete;
    Tape& operator=(const Tape&) = delete;

    static Tape* active();

    void record(std::function<void()> backward);
    std::size_t size() const { return entries_.size(); }

    /// Seeds d(loss)/d(loss) = 1 and propagates. `loss` must hold one value.
    void backward(const Tensor& loss);

private:
    std::vector<std::function<void()>> entries_;
    Tape* previous_ = nullptr;
};

/// True when an op over these inputs must be recorded on the active tape.
bool needs_grad(std::initializer_list<const Tensor*> inputs);

/// Runs `backward` on the active tape; throws when none is active.
void backward(const Tensor& loss);

/// Throws cvcs::Error naming `what` when any value is NaN or infinite.
void ensure_finite(const Tensor& t, const char* what);

}  // namespace cvcs
