#include "msct/attention.hpp"

#include <cmath>
#include <stdexcept>

#include "msct/ops.hpp"

namespace msct {

double AttentionConfig::softmax_scale() const {
  return 1.0 / std::sqrt(static_cast<double>(head_dim()));
}

void AttentionConfig::validate(bool with_conv) const {
  if (C <= 0 || h <= 0 || C % h != 0) {
    throw std::invalid_argument("attention: h must divide C, got C=" + std::to_string(C) +
                                " h=" + std::to_string(h));
  }
  if (!with_conv) return;
  if (h % 4 != 0) {
    throw std::invalid_argument("attention: multi-scale self-attention needs h divisible by 4, got h=" +
                                std::to_string(h));
  }
  if (scales.size() != 4) {
    throw std::invalid_argument("attention: expected 4 kernel scales, got " +
                                std::to_string(scales.size()));
  }
  for (int k : scales) {
    if (k <= 0 || k % 2 == 0) {
      throw std::invalid_argument("attention: kernel scales must be odd and positive, got " +
                                  std::to_string(k));
    }
  }
}

AttentionWeights make_attention_weights(const AttentionConfig& cfg, std::mt19937_64& rng,
                                        bool with_cross, bool with_conv, double init_stddev) {
  cfg.validate(with_conv);
  const std::int64_t C = cfg.C;
  AttentionWeights w;
  auto proj = [&] { return Tensor::randn({C, C}, rng, init_stddev).set_requires_grad(); };
  auto bias = [&] { return Tensor::zeros({C}).set_requires_grad(); };
  w.w_q = proj();
  w.b_q = bias();
  if (with_cross) {
    w.w_q_cross = proj();
    w.b_q_cross = bias();
  }
  w.w_k = proj();
  w.b_k = bias();
  w.w_v = proj();
  w.b_v = bias();
  w.w_o = proj();
  w.b_o = bias();
  if (with_conv) {
    const std::int64_t group = cfg.h / 4;
    for (int k : cfg.scales) {
      auto bank = Tensor::zeros({group, k, k});
      for (std::int64_t g = 0; g < group; ++g) {
        bank.mutable_values()[g * k * k + (k / 2) * k + k / 2] = 1.0;
      }
      w.conv_kernels.push_back(bank.set_requires_grad());
    }
  }
  return w;
}

void append_attention_params(const AttentionWeights& w, const std::string& prefix,
                             std::vector<NamedParam>& out) {
  auto put = [&](const char* name, const Tensor& t) {
    if (t.defined()) out.push_back({prefix + "." + name, t});
  };
  put("w_q", w.w_q);
  put("b_q", w.b_q);
  put("w_q_cross", w.w_q_cross);
  put("b_q_cross", w.b_q_cross);
  put("w_k", w.w_k);
  put("b_k", w.b_k);
  put("w_v", w.w_v);
  put("b_v", w.b_v);
  put("w_o", w.w_o);
  put("b_o", w.b_o);
  for (size_t i = 0; i < w.conv_kernels.size(); ++i) {
    out.push_back({prefix + ".conv_kernels." + std::to_string(i), w.conv_kernels[i]});
  }
}

Tensor split_heads(const Tensor& x, int h) {
  if (x.ndim() != 3) {
    throw std::invalid_argument("split_heads: expected [B, S, C], got " +
                                shape_to_string(x.shape()));
  }
  const auto B = x.size(0), S = x.size(1), C = x.size(2);
  if (C % h != 0) {
    throw std::invalid_argument("split_heads: h=" + std::to_string(h) + " must divide C=" +
                                std::to_string(C));
  }
  auto r = reshape(x, {B, S, h, C / h});
  return permute(r, {0, 2, 1, 3});
}

Tensor merge_heads(const Tensor& x) {
  if (x.ndim() != 4) {
    throw std::invalid_argument("merge_heads: expected [B, h, S, head_dim], got " +
                                shape_to_string(x.shape()));
  }
  const auto B = x.size(0), h = x.size(1), S = x.size(2), d = x.size(3);
  auto p = permute(x, {0, 2, 1, 3});
  return reshape(p, {B, S, h * d});
}

namespace {

void check_width(const Tensor& x, const AttentionConfig& cfg, const char* op) {
  if (x.ndim() != 3 || x.size(2) != cfg.C) {
    throw std::invalid_argument(std::string(op) + ": expected [B, S, " + std::to_string(cfg.C) +
                                "], got " + shape_to_string(x.shape()));
  }
  if (x.size(1) < 1) {
    throw std::invalid_argument(std::string(op) + ": sequence must be non-empty");
  }
}

/// softmax(Q Kt / sqrt(head_dim)) V over [B, h, S, head_dim] inputs.
Tensor head_attention(const Tensor& Q, const Tensor& K, const Tensor& V, double scale) {
  auto logits = matmul(Q, transpose_last2(K));
  auto probs = softmax_rows(logits, scale);
  return matmul(probs, V);
}

/// Shared body of mha_self / mha_cross so the two are literally the same
/// computation when x_q == x_kv.
Tensor mha_impl(const Tensor& x_q, const Tensor& x_kv, const AttentionWeights& w,
                const AttentionConfig& cfg) {
  auto Q = split_heads(affine(x_q, w.w_q, w.b_q), cfg.h);
  auto K = split_heads(affine(x_kv, w.w_k, w.b_k), cfg.h);
  auto V = split_heads(affine(x_kv, w.w_v, w.b_v), cfg.h);
  auto ctx = head_attention(Q, K, V, cfg.softmax_scale());
  return affine(merge_heads(ctx), w.w_o, w.b_o);
}

}  // namespace

Tensor mha_self(const Tensor& x, const AttentionWeights& w, const AttentionConfig& cfg) {
  cfg.validate(false);
  check_width(x, cfg, "mha_self");
  return mha_impl(x, x, w, cfg);
}

Tensor mha_cross(const Tensor& x_q, const Tensor& x_kv, const AttentionWeights& w,
                 const AttentionConfig& cfg) {
  cfg.validate(false);
  check_width(x_q, cfg, "mha_cross");
  check_width(x_kv, cfg, "mha_cross");
  if (x_q.size(0) != x_kv.size(0)) {
    throw std::invalid_argument("mha_cross: batch sizes differ, " + shape_to_string(x_q.shape()) +
                                " vs " + shape_to_string(x_kv.shape()));
  }
  return mha_impl(x_q, x_kv, w, cfg);
}

Tensor mssa(const Tensor& x, const AttentionWeights& w, const AttentionConfig& cfg) {
  cfg.validate(true);
  check_width(x, cfg, "mssa");
  if (w.conv_kernels.size() != 4) {
    throw std::invalid_argument("mssa: weights carry " + std::to_string(w.conv_kernels.size()) +
                                " kernel banks, expected 4");
  }
  auto Q = split_heads(affine(x, w.w_q, w.b_q), cfg.h);
  auto K = split_heads(affine(x, w.w_k, w.b_k), cfg.h);
  auto V = split_heads(affine(x, w.w_v, w.b_v), cfg.h);

  // Contiguous groups of h/4 heads, convolved in ascending scale order over
  // their (S, head_dim) planes, then re-assembled along the head axis.
  const std::int64_t group = cfg.h / 4;
  std::vector<std::int64_t> sizes(4, group);
  auto groups = split(K, 1, sizes);
  std::vector<Tensor> mixed;
  mixed.reserve(4);
  for (int i = 0; i < 4; ++i) {
    mixed.push_back(depthwise_conv2d(groups[i], w.conv_kernels[i]));
  }
  auto K_mixed = concat(mixed, 1);

  auto ctx = head_attention(Q, K_mixed, V, cfg.softmax_scale());
  return affine(merge_heads(ctx), w.w_o, w.b_o);
}

DcaResult dca_full(const Tensor& x_own, const Tensor& x_other, const AttentionWeights& w,
                   const AttentionConfig& cfg) {
  cfg.validate(false);
  check_width(x_own, cfg, "dca");
  check_width(x_other, cfg, "dca");
  if (!w.w_q_cross.defined()) {
    throw std::invalid_argument("dca: weights carry no cross-query projection");
  }
  auto Q = split_heads(affine(x_own, w.w_q, w.b_q), cfg.h);
  auto Qc = split_heads(affine(x_other, w.w_q_cross, w.b_q_cross), cfg.h);
  auto K = split_heads(affine(x_own, w.w_k, w.b_k), cfg.h);
  auto V = split_heads(affine(x_own, w.w_v, w.b_v), cfg.h);

  auto Kt = transpose_last2(K);
  const double sc = cfg.softmax_scale();
  auto P_own = softmax_rows(matmul(Q, Kt), sc);
  auto P_cross = softmax_rows(matmul(Qc, Kt), sc);
  auto diff = sub(P_own, P_cross);

  auto ctx = matmul(diff, V);
  DcaResult out;
  out.output = affine(merge_heads(ctx), w.w_o, w.b_o);
  out.diff_attn = diff;
  return out;
}

Tensor dca(const Tensor& x_own, const Tensor& x_other, const AttentionWeights& w,
           const AttentionConfig& cfg) {
  return dca_full(x_own, x_other, w, cfg).output;
}

}  // namespace msct
