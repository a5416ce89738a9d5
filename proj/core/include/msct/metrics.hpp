#pragma once

#include <cstdint>
#include <map>
#include <string>
#include <vector>

#include "msct/tensor.hpp"

namespace msct {

/// Argmax predictions from [B, 2] logits; exact ties resolve to label 0.
std::vector<int> predict_labels(const Tensor& logits);

/// Softmax probability of class 1 ("real") per row of [B, 2] logits.
std::vector<double> real_probability(const Tensor& logits);

/// Fraction of exact matches. Throws on empty or mismatched inputs.
double accuracy(const std::vector<int>& predicted, const std::vector<int>& truth);

/// Exact ROC AUC: the probability a real (label 1) score outranks a fake
/// (label 0) score, ties counting one half. Computed by midranks, which is
/// identical to brute-force pair counting. Throws unless both classes are
/// present.
double auc(const std::vector<double>& scores, const std::vector<int>& labels);

/// Predicted-label counts per sample category.
struct ConfusionRow {
  std::int64_t pred_fake = 0;
  std::int64_t pred_real = 0;
};
using ConfusionByCategory = std::map<std::string, ConfusionRow>;

ConfusionByCategory confusion_by_category(const std::vector<std::string>& categories,
                                          const std::vector<int>& predicted);

}  // namespace msct
