#pragma once

#include <cstdint>
#include <memory>
#include <random>
#include <span>
#include <string>
#include <vector>

namespace msct {

/// Dimension sizes of a dense row-major tensor. Rank 0 means scalar.
using Shape = std::vector<std::int64_t>;

std::int64_t numel_of(const Shape& shape);
std::string shape_to_string(const Shape& shape);
std::vector<std::int64_t> row_major_strides(const Shape& shape);

/// Runtime toggle for the finite-value checks run after forward ops.
/// Defaults to on in debug builds, off when NDEBUG is defined.
bool debug_checks_enabled();
void set_debug_checks(bool on);

/// Identifies the tape node a tensor value was produced by (or registered
/// as a leaf on). Epochs distinguish tapes; stale refs are ignored.
struct NodeRef {
  std::uint64_t tape_epoch = 0;
  std::int32_t node_id = -1;
};

/// Gradient storage shared by all handles of one leaf tensor.
struct GradSlot {
  std::vector<double> value;
  bool has_value = false;
};

/// Dense n-dimensional array of 64-bit reals with shared storage.
///
/// Copies are cheap handles onto the same buffer. Values are treated as
/// immutable while a tape is recording; leaves (parameters) may be updated
/// in place between passes via mutable_values(), which is what the
/// optimizer and finite-difference probes do.
class Tensor {
 public:
  Tensor() = default;
  Tensor(Shape shape, std::vector<double> values);

  static Tensor zeros(Shape shape);
  static Tensor ones(Shape shape);
  static Tensor full(Shape shape, double fill);
  static Tensor scalar(double v);
  static Tensor randn(Shape shape, std::mt19937_64& rng, double stddev = 1.0,
                      double mean = 0.0);

  bool defined() const { return data_ != nullptr; }
  const Shape& shape() const { return shape_; }
  int ndim() const { return static_cast<int>(shape_.size()); }
  std::int64_t size(int axis) const;
  std::int64_t numel() const;

  std::span<const double> data() const&;
  // A span into a temporary would dangle; bind the tensor first.
  std::span<const double> data() const&& = delete;
  /// Direct write access to the shared buffer. Only valid between tapes.
  std::vector<double>& mutable_values();
  double scalar_value() const;
  double at(std::initializer_list<std::int64_t> idx) const;

  Tensor& set_requires_grad(bool on = true);
  bool requires_grad() const { return requires_grad_; }
  bool has_grad() const;
  Tensor grad() const;
  void zero_grad();
  void accumulate_grad(std::span<const double> g);

  /// Deep copy sharing nothing with this handle; never requires grad.
  Tensor clone() const;

  // Autograd wiring. Used by GradTape and op implementations.
  const std::shared_ptr<NodeRef>& node_ref() const { return node_; }
  const std::shared_ptr<GradSlot>& grad_slot() const { return grad_slot_; }
  void attach_node(std::uint64_t tape_epoch, std::int32_t node_id);

 private:
  Shape shape_;
  std::shared_ptr<std::vector<double>> data_;
  bool requires_grad_ = false;
  std::shared_ptr<NodeRef> node_;
  std::shared_ptr<GradSlot> grad_slot_;
};

/// Throws std::invalid_argument if the tensor holds NaN or Inf and debug
/// checks are enabled. `where` names the offending op in the message.
void debug_check_finite(const Tensor& t, const char* where);
bool all_finite(std::span<const double> xs);

}  // namespace msct
