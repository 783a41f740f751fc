#include "cvcs/tensor.hpp"

#include <algorithm>
#include <cmath>
#include <sstream>

namespace cvcs {

std::size_t shape_size(const Shape& shape) {
    std::size_t n = 1;
    for (auto d : shape) n *= d;
    return n;
}

std::string shape_string(const Shape& shape) {
    std::ostringstream os;
    os << '[';
    for (std::size_t i = 0; i < shape.size(); ++i) {
        if (i) os << ',';
        os << shape[i];
    }
    os << ']';
    return os.str();
}

Tensor::Tensor(Shape shape, double fill) : impl_(std::make_shared<Impl>()) {
    impl_->data.assign(shape_size(shape), fill);
    impl_->shape = std::move(shape);
}

Tensor::Tensor(Shape shape, std::vector<double> values) : impl_(std::make_shared<Impl>()) {
    if (shape_size(shape) != values.size()) {
        throw Error("tensor: shape " + shape_string(shape) + " does not match " +
                    std::to_string(values.size()) + " values");
    }
    impl_->shape = std::move(shape);
    impl_->data.assign(values.begin(), values.end());
}

Tensor Tensor::scalar(double value) { return Tensor(Shape{1}, std::vector<double>{value}); }

Tensor::Impl& Tensor::impl() const {
    if (!impl_) throw Error("tensor: use of undefined tensor");
    return *impl_;
}

const Shape& Tensor::shape() const { return impl().shape; }

std::size_t Tensor::dim(std::size_t axis) const {
    const auto& s = shape();
    if (axis >= s.size()) throw Error("tensor: axis out of range for " + shape_string(s));
    return s[axis];
}

std::size_t Tensor::size() const { return impl().data.size(); }

std::span<const double> Tensor::data() const { return impl().data; }
std::span<double> Tensor::mutable_data() { return impl().data; }

double Tensor::item() const {
    if (size() != 1) throw Error("tensor: item() on tensor of shape " + shape_string(shape()));
    return impl().data[0];
}

bool Tensor::requires_grad() const { return impl_ && impl_->requires_grad; }

Tensor& Tensor::set_requires_grad(bool on) {
    impl().requires_grad = on;
    return *this;
}

bool Tensor::has_grad() const { return impl_ && !impl_->grad.empty(); }

std::span<const double> Tensor::grad() const { return impl().grad; }

std::span<double> Tensor::mutable_grad() {
    auto& im = impl();
    if (im.grad.empty()) im.grad.assign(im.data.size(), 0.0);
    return im.grad;
}

void Tensor::zero_grad() {
    auto& im = impl();
    std::fill(im.grad.begin(), im.grad.end(), 0.0);
}

Tensor Tensor::clone() const {
    Tensor out(shape());
    std::copy(impl().data.begin(), impl().data.end(), out.impl_->data.begin());
    return out;
}

bool operator==(const Tensor& a, const Tensor& b) {
    if (a.defined() != b.defined()) return false;
    if (!a.defined()) return true;
    return a.shape() == b.shape() && std::equal(a.data().begin(), a.data().end(), b.data().begin());
}

namespace {
thread_local Tape* g_active_tape = nullptr;
}

Tape::Tape() : previous_(g_active_tape) { g_active_tape = this; }

Tape::~Tape() { g_active_tape = previous_; }

Tape* Tape::active() { return g_active_tape; }

void Tape::record(std::function<void()> backward) { entries_.push_back(std::move(backward)); }

void Tape::backward(const Tensor& loss) {
    if (loss.size() != 1) {
        throw Error("backward: loss must be a single value, got " + shape_string(loss.shape()));
    }
    if (!loss.requires_grad()) throw Error("backward: loss is not connected to any parameter");
    Tensor seed = loss;
    seed.mutable_grad()[0] = 1.0;
    for (auto it = entries_.rbegin(); it != entries_.rend(); ++it) (*it)();
}

bool needs_grad(std::initializer_list<const Tensor*> inputs) {
    if (!Tape::active()) return false;
    return std::any_of(inputs.begin(), inputs.end(),
                       [](const Tensor* t) { return t && t->requires_grad(); });
}

void backward(const Tensor& loss) {
    Tape* tape = Tape::active();
    if (!tape) throw Error("backward: no active tape");
    tape->backward(loss);
}

void ensure_finite(const Tensor& t, const char* what) {
    for (double v : t.data()) {
        if (!std::isfinite(v)) throw Error(std::string(what) + ": non-finite value");
    }
}

}  // namespace cvcs
