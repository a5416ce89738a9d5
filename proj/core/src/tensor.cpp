#include "msct/tensor.hpp"

#include <atomic>
#include <cmath>
#include <sstream>
#include <stdexcept>

namespace msct {

namespace {
#ifdef NDEBUG
std::atomic<bool> g_debug_checks{false};
#else
std::atomic<bool> g_debug_checks{true};
#endif
}  // namespace

bool debug_checks_enabled() { return g_debug_checks.load(std::memory_order_relaxed); }
void set_debug_checks(bool on) { g_debug_checks.store(on, std::memory_order_relaxed); }

std::int64_t numel_of(const Shape& shape) {
  std::int64_t n = 1;
  for (auto d : shape) n *= d;
  return n;
}

std::string shape_to_string(const Shape& shape) {
  std::ostringstream os;
  os << "[";
  for (size_t i = 0; i < shape.size(); ++i) {
    if (i) os << ", ";
    os << shape[i];
  }
  os << "]";
  return os.str();
}

std::vector<std::int64_t> row_major_strides(const Shape& shape) {
  std::vector<std::int64_t> strides(shape.size(), 1);
  for (int i = static_cast<int>(shape.size()) - 2; i >= 0; --i) {
    strides[i] = strides[i + 1] * shape[i + 1];
  }
  return strides;
}

Tensor::Tensor(Shape shape, std::vector<double> values) : shape_(std::move(shape)) {
  for (auto d : shape_) {
    if (d <= 0) throw std::invalid_argument("Tensor: dimension sizes must be positive, got " + shape_to_string(shape_));
  }
  if (numel_of(shape_) != static_cast<std::int64_t>(values.size())) {
    throw std::invalid_argument("Tensor: shape " + shape_to_string(shape_) + " needs " +
                                std::to_string(numel_of(shape_)) + " values, got " +
                                std::to_string(values.size()));
  }
  data_ = std::make_shared<std::vector<double>>(std::move(values));
}

Tensor Tensor::zeros(Shape shape) { return full(std::move(shape), 0.0); }
Tensor Tensor::ones(Shape shape) { return full(std::move(shape), 1.0); }

Tensor Tensor::full(Shape shape, double fill) {
  auto n = numel_of(shape);
  return Tensor(std::move(shape), std::vector<double>(static_cast<size_t>(n), fill));
}

Tensor Tensor::scalar(double v) { return Tensor(Shape{}, std::vector<double>{v}); }

Tensor Tensor::randn(Shape shape, std::mt19937_64& rng, double stddev, double mean) {
  std::normal_distribution<double> dist(mean, stddev);
  std::vector<double> values(static_cast<size_t>(numel_of(shape)));
  for (auto& v : values) v = dist(rng);
  return Tensor(std::move(shape), std::move(values));
}

std::int64_t Tensor::size(int axis) const {
  if (axis < 0) axis += ndim();
  if (axis < 0 || axis >= ndim()) throw std::invalid_argument("Tensor::size: axis out of range");
  return shape_[static_cast<size_t>(axis)];
}

std::int64_t Tensor::numel() const { return data_ ? static_cast<std::int64_t>(data_->size()) : 0; }

std::span<const double> Tensor::data() const& {
  if (!data_) throw std::logic_error("Tensor: access to undefined tensor");
  return {data_->data(), data_->size()};
}

std::vector<double>& Tensor::mutable_values() {
  if (!data_) throw std::logic_error("Tensor: access to undefined tensor");
  return *data_;
}

double Tensor::scalar_value() const {
  if (numel() != 1) throw std::invalid_argument("Tensor: scalar_value on shape " + shape_to_string(shape_));
  return (*data_)[0];
}

double Tensor::at(std::initializer_list<std::int64_t> idx) const {
  if (static_cast<int>(idx.size()) != ndim()) {
    throw std::invalid_argument("Tensor::at: expected " + std::to_string(ndim()) + " indices");
  }
  auto strides = row_major_strides(shape_);
  std::int64_t flat = 0;
  size_t i = 0;
  for (auto v : idx) {
    if (v < 0 || v >= shape_[i]) throw std::out_of_range("Tensor::at: index out of range");
    flat += v * strides[i++];
  }
  return (*data_)[static_cast<size_t>(flat)];
}

Tensor& Tensor::set_requires_grad(bool on) {
  requires_grad_ = on;
  if (on) {
    if (!node_) node_ = std::make_shared<NodeRef>();
    if (!grad_slot_) grad_slot_ = std::make_shared<GradSlot>();
  }
  return *this;
}

bool Tensor::has_grad() const { return grad_slot_ && grad_slot_->has_value; }

Tensor Tensor::grad() const {
  if (!has_grad()) throw std::logic_error("Tensor::grad: no gradient recorded");
  return Tensor(shape_, grad_slot_->value);
}

void Tensor::zero_grad() {
  if (grad_slot_) {
    grad_slot_->value.clear();
    grad_slot_->has_value = false;
  }
}

void Tensor::accumulate_grad(std::span<const double> g) {
  if (!grad_slot_) throw std::logic_error("Tensor::accumulate_grad: tensor has no grad slot");
  if (!grad_slot_->has_value) {
    grad_slot_->value.assign(g.begin(), g.end());
    grad_slot_->has_value = true;
  } else {
    if (grad_slot_->value.size() != g.size()) throw std::logic_error("Tensor::accumulate_grad: size mismatch");
    for (size_t i = 0; i < g.size(); ++i) grad_slot_->value[i] += g[i];
  }
}

Tensor Tensor::clone() const {
  if (!data_) return Tensor();
  return Tensor(shape_, *data_);
}

void Tensor::attach_node(std::uint64_t tape_epoch, std::int32_t node_id) {
  node_ = std::make_shared<NodeRef>(NodeRef{tape_epoch, node_id});
}

bool all_finite(std::span<const double> xs) {
  for (double x : xs) {
    if (!std::isfinite(x)) return false;
  }
  return true;
}

void debug_check_finite(const Tensor& t, const char* where) {
  if (!debug_checks_enabled()) return;
  if (!all_finite(t.data())) {
    throw std::invalid_argument(std::string(where) + ": non-finite value in tensor of shape " +
                                shape_to_string(t.shape()));
  }
}

}  // namespace msct
