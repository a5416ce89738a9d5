#include "msct/autograd.hpp"

#include <atomic>
#include <optional>
#include <stdexcept>

namespace msct {

namespace {
std::atomic<std::uint64_t> g_next_epoch{1};
thread_local GradTape* t_active_tape = nullptr;
}  // namespace

GradTape::GradTape() : epoch_(g_next_epoch.fetch_add(1)) {}

bool GradTape::needs_grad(const Tensor& t) const {
  const auto& ref = t.node_ref();
  if (ref && ref->tape_epoch == epoch_ && ref->node_id >= 0) return true;
  return t.requires_grad();
}

std::int32_t GradTape::node_for(const Tensor& t) {
  const auto& ref = t.node_ref();
  if (ref && ref->tape_epoch == epoch_ && ref->node_id >= 0) return ref->node_id;
  if (!t.requires_grad()) return -1;
  if (spent_) throw std::logic_error("GradTape: tape already consumed by backward");
  // First time this leaf is touched on this tape.
  auto id = static_cast<std::int32_t>(nodes_.size());
  nodes_.push_back(Node{{}, {}, t.shape(), t.grad_slot()});
  ref->tape_epoch = epoch_;
  ref->node_id = id;
  return id;
}

std::int32_t GradTape::record(Shape out_shape, std::vector<std::int32_t> parents, VjpFn vjp) {
  if (spent_) throw std::logic_error("GradTape: tape already consumed by backward");
  auto id = static_cast<std::int32_t>(nodes_.size());
  nodes_.push_back(Node{std::move(parents), std::move(vjp), std::move(out_shape), nullptr});
  return id;
}

void GradTape::backward(const Tensor& loss) {
  if (spent_) throw std::logic_error("GradTape: backward called twice on one tape");
  spent_ = true;
  // Ops invoked from vjp closures must not record onto any tape.
  struct NoRecordGuard {
    GradTape* prev;
    NoRecordGuard() : prev(t_active_tape) { t_active_tape = nullptr; }
    ~NoRecordGuard() { t_active_tape = prev; }
  } no_record;
  if (loss.numel() != 1) {
    throw std::invalid_argument("backward: loss must be a scalar, got shape " +
                                shape_to_string(loss.shape()));
  }
  const auto& ref = loss.node_ref();
  if (!ref || ref->tape_epoch != epoch_ || ref->node_id < 0) {
    throw std::invalid_argument("backward: loss is not a value recorded on this tape");
  }
  const auto root = static_cast<size_t>(ref->node_id);

  std::vector<std::optional<std::vector<double>>> grads(nodes_.size());
  grads[root] = std::vector<double>{1.0};

  for (size_t i = nodes_.size(); i-- > 0;) {
    if (!grads[i].has_value()) continue;
    Node& node = nodes_[i];
    if (!node.vjp) continue;  // leaf
    Tensor upstream(node.shape, std::move(*grads[i]));
    auto input_grads = node.vjp(upstream);
    if (input_grads.size() != node.parents.size()) {
      throw std::logic_error("backward: vjp returned wrong number of gradients");
    }
    for (size_t p = 0; p < node.parents.size(); ++p) {
      auto pid = node.parents[p];
      if (pid < 0) continue;
      const Tensor& g = input_grads[p];
      if (!g.defined()) continue;
      auto& slot = grads[static_cast<size_t>(pid)];
      auto gd = g.data();
      if (!slot.has_value()) {
        slot = std::vector<double>(gd.begin(), gd.end());
      } else {
        if (slot->size() != gd.size()) throw std::logic_error("backward: gradient size mismatch");
        for (size_t k = 0; k < gd.size(); ++k) (*slot)[k] += gd[k];
      }
    }
    grads[i].reset();  // upstream buffer already moved out
  }

  // Export into leaf grad slots.
  for (size_t i = 0; i < nodes_.size(); ++i) {
    if (!nodes_[i].slot || !grads[i].has_value()) continue;
    auto& slot = *nodes_[i].slot;
    auto& g = *grads[i];
    if (!slot.has_value) {
      slot.value = std::move(g);
      slot.has_value = true;
    } else {
      if (slot.value.size() != g.size()) throw std::logic_error("backward: leaf gradient size mismatch");
      for (size_t k = 0; k < g.size(); ++k) slot.value[k] += g[k];
    }
  }
}

GradTape* active_tape() { return t_active_tape; }

TapeScope::TapeScope(GradTape& tape) : previous_(t_active_tape) { t_active_tape = &tape; }
TapeScope::~TapeScope() { t_active_tape = previous_; }

Tensor record_op(Tensor out, std::initializer_list<const Tensor*> inputs,
                 const std::function<VjpFn()>& build_vjp) {
  GradTape* tape = active_tape();
  if (!tape) return out;
  bool any = false;
  for (const Tensor* t : inputs) any = any || tape->needs_grad(*t);
  if (!any) return out;
  std::vector<std::int32_t> parents;
  parents.reserve(inputs.size());
  for (const Tensor* t : inputs) parents.push_back(tape->node_for(*t));
  auto id = tape->record(out.shape(), std::move(parents), build_vjp());
  out.attach_node(tape->epoch(), id);
  return out;
}

void backward(GradTape& tape, const Tensor& loss) { tape.backward(loss); }

}  // namespace msct
