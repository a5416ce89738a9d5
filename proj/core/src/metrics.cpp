#include "msct/metrics.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>
#include <stdexcept>

namespace msct {

std::vector<int> predict_labels(const Tensor& logits) {
  if (logits.ndim() != 2 || logits.size(1) != 2) {
    throw std::invalid_argument("predict_labels: expected [B, 2] logits, got " +
                                shape_to_string(logits.shape()));
  }
  auto d = logits.data();
  std::vector<int> out(static_cast<size_t>(logits.size(0)));
  for (size_t i = 0; i < out.size(); ++i) {
    // Ties go to label 0, deterministically.
    out[i] = d[i * 2 + 1] > d[i * 2] ? 1 : 0;
  }
  return out;
}

std::vector<double> real_probability(const Tensor& logits) {
  if (logits.ndim() != 2 || logits.size(1) != 2) {
    throw std::invalid_argument("real_probability: expected [B, 2] logits, got " +
                                shape_to_string(logits.shape()));
  }
  auto d = logits.data();
  std::vector<double> out(static_cast<size_t>(logits.size(0)));
  for (size_t i = 0; i < out.size(); ++i) {
    const double m = std::max(d[i * 2], d[i * 2 + 1]);
    const double e0 = std::exp(d[i * 2] - m), e1 = std::exp(d[i * 2 + 1] - m);
    out[i] = e1 / (e0 + e1);
  }
  return out;
}

double accuracy(const std::vector<int>& predicted, const std::vector<int>& truth) {
  if (predicted.empty() || predicted.size() != truth.size()) {
    throw std::invalid_argument("accuracy: need equal-length non-empty label sequences");
  }
  std::int64_t hits = 0;
  for (size_t i = 0; i < predicted.size(); ++i) hits += predicted[i] == truth[i] ? 1 : 0;
  return static_cast<double>(hits) / static_cast<double>(predicted.size());
}

double auc(const std::vector<double>& scores, const std::vector<int>& labels) {
  if (scores.size() != labels.size() || scores.empty()) {
    throw std::invalid_argument("auc: need equal-length non-empty scores and labels");
  }
  std::int64_t n_real = 0, n_fake = 0;
  for (int y : labels) {
    if (y == 1) ++n_real;
    else if (y == 0) ++n_fake;
    else throw std::invalid_argument("auc: labels must be 0 or 1");
  }
  if (n_real == 0 || n_fake == 0) {
    throw std::invalid_argument("auc: both classes must be present");
  }

  // Midrank Mann-Whitney: sum the average ranks of the real class; for tied
  // scores the shared midrank spreads each tie group evenly, which equals
  // counting half a pair per cross-class tie.
  std::vector<size_t> order(scores.size());
  std::iota(order.begin(), order.end(), 0);
  std::sort(order.begin(), order.end(),
            [&](size_t a, size_t b) { return scores[a] < scores[b]; });

  double rank_sum_real = 0.0;
  size_t i = 0;
  while (i < order.size()) {
    size_t j = i;
    while (j < order.size() && scores[order[j]] == scores[order[i]]) ++j;
    // 1-based ranks i+1..j share the midrank.
    const double midrank = (static_cast<double>(i + 1) + static_cast<double>(j)) / 2.0;
    for (size_t k = i; k < j; ++k) {
      if (labels[order[k]] == 1) rank_sum_real += midrank;
    }
    i = j;
  }
  const double u = rank_sum_real - static_cast<double>(n_real) * (n_real + 1) / 2.0;
  return u / (static_cast<double>(n_real) * static_cast<double>(n_fake));
}

ConfusionByCategory confusion_by_category(const std::vector<std::string>& categories,
                                          const std::vector<int>& predicted) {
  if (categories.size() != predicted.size()) {
    throw std::invalid_argument("confusion_by_category: length mismatch");
  }
  ConfusionByCategory out;
  for (size_t i = 0; i < categories.size(); ++i) {
    auto& row = out[categories[i]];
    if (predicted[i] == 1) ++row.pred_real;
    else ++row.pred_fake;
  }
  return out;
}

}  // namespace msct
