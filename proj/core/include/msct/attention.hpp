#pragma once

#include <random>
#include <string>
#include <vector>

#include "msct/grad_check.hpp"
#include "msct/tensor.hpp"

namespace msct {

/// Shared hyperparameters of one attention slot.
struct AttentionConfig {
  int C = 16;                       // model width
  int h = 4;                        // head count
  std::vector<int> scales{1, 3, 5, 7};  // MSSA kernel sizes, odd

  int head_dim() const { return C / h; }
  double softmax_scale() const;

  /// Checks h | C; with_conv additionally demands 4 | h and four odd scales.
  void validate(bool with_conv) const;
};

/// Projections of one attention slot. w_q_cross/b_q_cross are defined only
/// for differential cross slots; conv_kernels (one [h/4, k, k] bank per
/// scale) only for multi-scale self slots.
struct AttentionWeights {
  Tensor w_q, b_q;
  Tensor w_k, b_k;
  Tensor w_v, b_v;
  Tensor w_o, b_o;
  Tensor w_q_cross, b_q_cross;
  std::vector<Tensor> conv_kernels;
};

/// Gaussian(0, init_stddev) projections, zero biases. Conv kernel banks are
/// delta-initialized (center tap 1) so a fresh multi-scale slot starts out
/// exactly equal to plain self-attention.
AttentionWeights make_attention_weights(const AttentionConfig& cfg, std::mt19937_64& rng,
                                        bool with_cross, bool with_conv,
                                        double init_stddev = 0.02);

/// Appends this slot's tensors to `out` in a fixed canonical order with
/// names "<prefix>.w_q", "<prefix>.conv_kernels.2", ...
void append_attention_params(const AttentionWeights& w, const std::string& prefix,
                             std::vector<NamedParam>& out);

/// [B, S, C] -> [B, h, S, C/h] and back.
Tensor split_heads(const Tensor& x, int h);
Tensor merge_heads(const Tensor& x);

/// Standard multi-head attention over x (queries, keys and values all
/// projected from x).
Tensor mha_self(const Tensor& x, const AttentionWeights& w, const AttentionConfig& cfg);

/// As mha_self but queries come from x_q while keys/values come from x_kv.
/// mha_cross(x, x, w) reproduces mha_self(x, w) bit for bit.
Tensor mha_cross(const Tensor& x_q, const Tensor& x_kv, const AttentionWeights& w,
                 const AttentionConfig& cfg);

/// Multi-scale self-attention: K is reshaped per head, split into four
/// contiguous head groups, each group depthwise-convolved over its (S,
/// head_dim) plane at one scale, then attention proceeds as usual.
Tensor mssa(const Tensor& x, const AttentionWeights& w, const AttentionConfig& cfg);

struct DcaResult {
  Tensor output;     // [B, S, C]
  Tensor diff_attn;  // [B, h, S, S], rows sum to 0
};

/// Differential cross-modal attention for one branch: queries from the
/// branch's own state and (through w_q_cross) from the other branch, both
/// attending to the branch's own keys; the two softmaxed attention maps are
/// subtracted before the value product. The opposite branch reuses this op
/// with arguments swapped and its own weights.
DcaResult dca_full(const Tensor& x_own, const Tensor& x_other, const AttentionWeights& w,
                   const AttentionConfig& cfg);
Tensor dca(const Tensor& x_own, const Tensor& x_other, const AttentionWeights& w,
           const AttentionConfig& cfg);

}  // namespace msct
