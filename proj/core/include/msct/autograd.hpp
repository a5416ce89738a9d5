#pragma once

#include <functional>
#include <initializer_list>
#include <vector>

#include "msct/tensor.hpp"

namespace msct {

/// Vector-Jacobian product of one recorded op: given the upstream gradient
/// of the op output, returns one gradient per input (undefined Tensor for
/// inputs that need no gradient).
using VjpFn = std::function<std::vector<Tensor>(const Tensor& upstream)>;

/// Reverse-mode tape. One tape per forward pass; backward() may be called
/// once, after which the tape is spent. Nodes are appended in execution
/// order, which is already a topological order.
class GradTape {
 public:
  GradTape();
  GradTape(const GradTape&) = delete;
  GradTape& operator=(const GradTape&) = delete;

  std::uint64_t epoch() const { return epoch_; }
  std::size_t node_count() const { return nodes_.size(); }

  /// True if gradient flows through `t` on this tape (leaf or op output).
  bool needs_grad(const Tensor& t) const;

  /// Node id for `t`, registering it as a leaf when it requires grad and
  /// has not been seen by this tape yet. -1 if no gradient path.
  std::int32_t node_for(const Tensor& t);

  std::int32_t record(Shape out_shape, std::vector<std::int32_t> parents, VjpFn vjp);

  /// Seeds the scalar `loss` with gradient 1, sweeps nodes in reverse
  /// append order, and writes accumulated gradients into every leaf's grad
  /// slot (additively, so separate backward passes sum).
  void backward(const Tensor& loss);

 private:
  struct Node {
    std::vector<std::int32_t> parents;
    VjpFn vjp;  // empty for leaves
    Shape shape;
    std::shared_ptr<GradSlot> slot;  // leaves only
  };
  std::vector<Node> nodes_;
  std::uint64_t epoch_;
  bool spent_ = false;
};

/// Tape currently recording on this thread, or nullptr.
GradTape* active_tape();

/// RAII activation of a tape for the current thread.
class TapeScope {
 public:
  explicit TapeScope(GradTape& tape);
  ~TapeScope();
  TapeScope(const TapeScope&) = delete;
  TapeScope& operator=(const TapeScope&) = delete;

 private:
  GradTape* previous_;
};

/// Attaches `out` to the active tape as the result of an op over `inputs`.
/// `build_vjp` is only invoked when recording actually happens. This is the
/// extension point for fused ops defined outside the core op set.
Tensor record_op(Tensor out, std::initializer_list<const Tensor*> inputs,
                 const std::function<VjpFn()>& build_vjp);

/// Convenience wrapper: backward on the active-tape-free path is invalid,
/// so callers hold the tape; this checks scalar-ness and delegates.
void backward(GradTape& tape, const Tensor& loss);

}  // namespace msct
