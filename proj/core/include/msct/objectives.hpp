#pragma once

#include <vector>

#include "msct/tensor.hpp"

namespace msct {

/// Per-sample binary labels; 1 = real, 0 = fake. y_m is the multimodal
/// label, 1 only when both modalities are real.
struct LabelTriple {
  int y_a = 0;
  int y_v = 0;
  int y_m = 0;
};

/// Term weights of the combined objective. The alignment term's label is
/// the multimodal label by default; align_label_both_real switches it to
/// the conjunction y_a AND y_v instead (identical on the four standard
/// categories, kept overridable because the two readings differ in
/// principle).
struct LossWeights {
  double ce_a = 1.0;
  double ce_v = 1.0;
  double ce_av = 1.0;
  double c = 1.0;
  bool align_label_both_real = false;

  void validate() const;
};

/// Mean over the batch of -log softmax(logits)[y]. logits must be [B, 2],
/// labels in {0, 1}.
Tensor cross_entropy(const Tensor& logits, const std::vector<int>& labels);

/// Cosine alignment loss over encoder outputs Z_a, Z_v of shape
/// [B, T+1, C]. Row 0 (the CLS slot) is excluded; the remaining T rows are
/// flattened to one vector per sample, d = cosine(x_a, x_v), and the
/// per-sample loss is y*(1-d) + (1-y)*max(0, d), averaged over the batch.
/// A zero-norm embedding is an error naming the sample index.
Tensor alignment_loss(const Tensor& Z_a, const Tensor& Z_v, const std::vector<int>& y_av);

/// Weighted sum of the three cross-entropy terms and the alignment term.
/// Terms with zero weight are skipped entirely (not evaluated), so an
/// all-zero weighting yields a constant 0 with no gradient path.
Tensor total_loss(const Tensor& logits_a, const Tensor& logits_v, const Tensor& logits_m,
                  const Tensor& Z_a, const Tensor& Z_v, const std::vector<LabelTriple>& labels,
                  const LossWeights& w);

}  // namespace msct
