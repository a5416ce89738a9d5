#include "msct/objectives.hpp"

#include <algorithm>
#include <cmath>
#include <stdexcept>
#include <string>

#include "msct/autograd.hpp"
#include "msct/ops.hpp"

namespace msct {

void LossWeights::validate() const {
  if (ce_a < 0 || ce_v < 0 || ce_av < 0 || c < 0) {
    throw std::invalid_argument("loss weights must be nonnegative");
  }
}

Tensor cross_entropy(const Tensor& logits, const std::vector<int>& labels) {
  if (logits.ndim() != 2 || logits.size(1) != 2) {
    throw std::invalid_argument("cross_entropy: expected [B, 2] logits, got " +
                                shape_to_string(logits.shape()));
  }
  const std::int64_t B = logits.size(0);
  if (static_cast<std::int64_t>(labels.size()) != B) {
    throw std::invalid_argument("cross_entropy: " + std::to_string(labels.size()) +
                                " labels for batch of " + std::to_string(B));
  }
  for (size_t i = 0; i < labels.size(); ++i) {
    if (labels[i] != 0 && labels[i] != 1) {
      throw std::invalid_argument("cross_entropy: label out of range at sample " +
                                  std::to_string(i));
    }
  }
  debug_check_finite(logits, "cross_entropy");

  auto ld = logits.data();
  // Probabilities are saved for the backward pass: d logits = (p - onehot)/B.
  auto probs = std::make_shared<std::vector<double>>(ld.size());
  double loss = 0.0;
  for (std::int64_t i = 0; i < B; ++i) {
    const double l0 = ld[i * 2], l1 = ld[i * 2 + 1];
    const double m = std::max(l0, l1);
    const double e0 = std::exp(l0 - m), e1 = std::exp(l1 - m);
    const double z = e0 + e1;
    (*probs)[i * 2] = e0 / z;
    (*probs)[i * 2 + 1] = e1 / z;
    const double ly = labels[i] == 0 ? l0 : l1;
    loss += -(ly - m - std::log(z));
  }
  loss /= static_cast<double>(B);

  Tensor out = Tensor::scalar(loss);
  return record_op(std::move(out), {&logits}, [&] {
    auto y = labels;
    auto shape = logits.shape();
    return VjpFn([probs, y, shape, B](const Tensor& g) {
      const double up = g.scalar_value() / static_cast<double>(B);
      std::vector<double> d(probs->size());
      for (std::int64_t i = 0; i < B; ++i) {
        d[i * 2] = up * ((*probs)[i * 2] - (y[i] == 0 ? 1.0 : 0.0));
        d[i * 2 + 1] = up * ((*probs)[i * 2 + 1] - (y[i] == 1 ? 1.0 : 0.0));
      }
      return std::vector<Tensor>{Tensor(shape, std::move(d))};
    });
  });
}

Tensor alignment_loss(const Tensor& Z_a, const Tensor& Z_v, const std::vector<int>& y_av) {
  if (Z_a.ndim() != 3 || Z_v.ndim() != 3 || Z_a.shape() != Z_v.shape()) {
    throw std::invalid_argument("alignment_loss: encoder outputs must share [B, T+1, C], got " +
                                shape_to_string(Z_a.shape()) + " and " +
                                shape_to_string(Z_v.shape()));
  }
  const std::int64_t B = Z_a.size(0);
  const std::int64_t rows = Z_a.size(1);  // T+1, row 0 is CLS
  const std::int64_t C = Z_a.size(2);
  if (rows < 2) {
    throw std::invalid_argument("alignment_loss: need at least one frame row besides CLS");
  }
  if (static_cast<std::int64_t>(y_av.size()) != B) {
    throw std::invalid_argument("alignment_loss: " + std::to_string(y_av.size()) +
                                " labels for batch of " + std::to_string(B));
  }
  debug_check_finite(Z_a, "alignment_loss");
  debug_check_finite(Z_v, "alignment_loss");

  const std::int64_t n = (rows - 1) * C;  // flattened frame-embedding length
  auto ad = Z_a.data();
  auto vd = Z_v.data();

  struct Saved {
    std::vector<double> d, na, nv;  // cosine and norms per sample
  };
  auto saved = std::make_shared<Saved>();
  saved->d.resize(B);
  saved->na.resize(B);
  saved->nv.resize(B);

  double loss = 0.0;
  for (std::int64_t i = 0; i < B; ++i) {
    const double* a = ad.data() + i * rows * C + C;  // skip CLS row
    const double* v = vd.data() + i * rows * C + C;
    double dot = 0.0, na2 = 0.0, nv2 = 0.0;
    for (std::int64_t j = 0; j < n; ++j) {
      dot += a[j] * v[j];
      na2 += a[j] * a[j];
      nv2 += v[j] * v[j];
    }
    if (na2 == 0.0 || nv2 == 0.0) {
      throw std::invalid_argument("alignment_loss: zero-norm embedding for sample " +
                                  std::to_string(i));
    }
    const double na = std::sqrt(na2), nv = std::sqrt(nv2);
    const double d = dot / (na * nv);
    saved->d[i] = d;
    saved->na[i] = na;
    saved->nv[i] = nv;
    loss += y_av[i] == 1 ? (1.0 - d) : std::max(0.0, d);
  }
  loss /= static_cast<double>(B);

  Tensor out = Tensor::scalar(loss);
  return record_op(std::move(out), {&Z_a, &Z_v}, [&] {
    Tensor za = Z_a, zv = Z_v;
    auto y = y_av;
    return VjpFn([saved, za, zv, y, B, rows, C, n](const Tensor& g) {
      const double up = g.scalar_value() / static_cast<double>(B);
      auto ad = za.data();
      auto vd = zv.data();
      std::vector<double> da(ad.size(), 0.0), dv(vd.size(), 0.0);
      for (std::int64_t i = 0; i < B; ++i) {
        // dL/dd: -1 for real pairs, the hinge indicator for fake pairs.
        double dLdd;
        if (y[i] == 1) {
          dLdd = -1.0;
        } else {
          dLdd = saved->d[i] > 0.0 ? 1.0 : 0.0;
        }
        if (dLdd == 0.0) continue;
        const double coef = up * dLdd;
        const double* a = ad.data() + i * rows * C + C;
        const double* v = vd.data() + i * rows * C + C;
        double* ga = da.data() + i * rows * C + C;
        double* gv = dv.data() + i * rows * C + C;
        const double inv = 1.0 / (saved->na[i] * saved->nv[i]);
        const double d = saved->d[i];
        // grad_a cos(a, v) = v/(|a||v|) - d * a/|a|^2, symmetrically for v.
        const double sa = d / (saved->na[i] * saved->na[i]);
        const double sv = d / (saved->nv[i] * saved->nv[i]);
        for (std::int64_t j = 0; j < n; ++j) {
          ga[j] = coef * (v[j] * inv - sa * a[j]);
          gv[j] = coef * (a[j] * inv - sv * v[j]);
        }
      }
      return std::vector<Tensor>{Tensor(za.shape(), std::move(da)),
                                 Tensor(zv.shape(), std::move(dv))};
    });
  });
}

Tensor total_loss(const Tensor& logits_a, const Tensor& logits_v, const Tensor& logits_m,
                  const Tensor& Z_a, const Tensor& Z_v, const std::vector<LabelTriple>& labels,
                  const LossWeights& w) {
  w.validate();
  std::vector<int> ya(labels.size()), yv(labels.size()), ym(labels.size()), yc(labels.size());
  for (size_t i = 0; i < labels.size(); ++i) {
    ya[i] = labels[i].y_a;
    yv[i] = labels[i].y_v;
    ym[i] = labels[i].y_m;
    yc[i] = w.align_label_both_real ? (labels[i].y_a & labels[i].y_v) : labels[i].y_m;
  }

  Tensor total;
  auto accumulate = [&](Tensor term, double weight) {
    if (weight != 1.0) term = scale(term, weight);
    total = total.defined() ? add(total, term) : term;
  };
  if (w.ce_a > 0) accumulate(cross_entropy(logits_a, ya), w.ce_a);
  if (w.ce_v > 0) accumulate(cross_entropy(logits_v, yv), w.ce_v);
  if (w.ce_av > 0) accumulate(cross_entropy(logits_m, ym), w.ce_av);
  if (w.c > 0) accumulate(alignment_loss(Z_a, Z_v, yc), w.c);
  if (!total.defined()) total = Tensor::scalar(0.0);  // all weights zero
  return total;
}

}  // namespace msct
