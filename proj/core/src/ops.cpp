#include "msct/ops.hpp"

#include <algorithm>
#include <cmath>
#include <numbers>
#include <stdexcept>

namespace msct {

namespace {

// Strides for reading `shape` (right-aligned) while iterating `out_shape`;
// broadcast dimensions get stride 0.
std::vector<std::int64_t> bcast_strides(const Shape& shape, const Shape& out_shape) {
  auto strides = row_major_strides(shape);
  std::vector<std::int64_t> eff(out_shape.size(), 0);
  const int off = static_cast<int>(out_shape.size()) - static_cast<int>(shape.size());
  for (int d = 0; d < static_cast<int>(shape.size()); ++d) {
    eff[static_cast<size_t>(off + d)] = (shape[d] == 1) ? 0 : strides[d];
  }
  return eff;
}

// Odometer walk over out_shape tracking two read offsets.
template <class Fn>
void for_each_2(const Shape& out_shape, const std::vector<std::int64_t>& sa,
                const std::vector<std::int64_t>& sb, Fn&& fn) {
  const int rank = static_cast<int>(out_shape.size());
  const std::int64_t total = numel_of(out_shape);
  if (rank == 0) {
    fn(std::int64_t{0}, std::int64_t{0}, std::int64_t{0});
    return;
  }
  std::vector<std::int64_t> idx(static_cast<size_t>(rank), 0);
  std::int64_t oa = 0, ob = 0;
  for (std::int64_t flat = 0; flat < total; ++flat) {
    fn(flat, oa, ob);
    for (int d = rank - 1; d >= 0; --d) {
      ++idx[d];
      oa += sa[d];
      ob += sb[d];
      if (idx[d] < out_shape[d]) break;
      oa -= sa[d] * out_shape[d];
      ob -= sb[d] * out_shape[d];
      idx[d] = 0;
    }
  }
}

template <class F>
Tensor ew_binary(const Tensor& a, const Tensor& b, F&& f, const char* name) {
  Shape os = broadcast_shapes(a.shape(), b.shape());
  std::vector<double> out(static_cast<size_t>(numel_of(os)));
  auto sa = bcast_strides(a.shape(), os);
  auto sb = bcast_strides(b.shape(), os);
  auto ad = a.data();
  auto bd = b.data();
  for_each_2(os, sa, sb, [&](std::int64_t i, std::int64_t oa, std::int64_t ob) {
    out[static_cast<size_t>(i)] = f(ad[static_cast<size_t>(oa)], bd[static_cast<size_t>(ob)]);
  });
  Tensor t(std::move(os), std::move(out));
  debug_check_finite(t, name);
  return t;
}

template <class F>
Tensor ew_unary(const Tensor& a, F&& f, const char* name) {
  auto ad = a.data();
  std::vector<double> out(ad.size());
  for (size_t i = 0; i < ad.size(); ++i) out[i] = f(ad[i]);
  Tensor t(a.shape(), std::move(out));
  debug_check_finite(t, name);
  return t;
}

int normalize_axis(int axis, int rank, const char* name) {
  if (axis < 0) axis += rank;
  if (axis < 0 || axis >= rank) throw std::invalid_argument(std::string(name) + ": axis out of range");
  return axis;
}

double gauss_cdf(double x) { return 0.5 * (1.0 + std::erf(x / std::numbers::sqrt2)); }
double gauss_pdf(double x) {
  return std::exp(-0.5 * x * x) / std::sqrt(2.0 * std::numbers::pi);
}

}  // namespace

Shape broadcast_shapes(const Shape& a, const Shape& b) {
  Shape out(std::max(a.size(), b.size()));
  for (size_t i = 0; i < out.size(); ++i) {
    std::int64_t da = i < out.size() - a.size() ? 1 : a[i - (out.size() - a.size())];
    std::int64_t db = i < out.size() - b.size() ? 1 : b[i - (out.size() - b.size())];
    if (da != db && da != 1 && db != 1) {
      throw std::invalid_argument("broadcast: incompatible shapes " + shape_to_string(a) +
                                  " and " + shape_to_string(b));
    }
    out[i] = std::max(da, db);
  }
  return out;
}

Tensor reduce_to_shape(const Tensor& g, const Shape& target) {
  if (g.shape() == target) return g;
  std::vector<double> acc(static_cast<size_t>(numel_of(target)), 0.0);
  auto st = bcast_strides(target, g.shape());
  auto gd = g.data();
  for_each_2(g.shape(), st, st, [&](std::int64_t i, std::int64_t ot, std::int64_t) {
    acc[static_cast<size_t>(ot)] += gd[static_cast<size_t>(i)];
  });
  return Tensor(target, std::move(acc));
}

Tensor add(const Tensor& a, const Tensor& b) {
  Tensor out = ew_binary(a, b, [](double x, double y) { return x + y; }, "add");
  return record_op(std::move(out), {&a, &b}, [&] {
    Shape sa = a.shape(), sb = b.shape();
    return VjpFn([sa, sb](const Tensor& g) {
      return std::vector<Tensor>{reduce_to_shape(g, sa), reduce_to_shape(g, sb)};
    });
  });
}

Tensor sub(const Tensor& a, const Tensor& b) {
  Tensor out = ew_binary(a, b, [](double x, double y) { return x - y; }, "sub");
  return record_op(std::move(out), {&a, &b}, [&] {
    Shape sa = a.shape(), sb = b.shape();
    return VjpFn([sa, sb](const Tensor& g) {
      return std::vector<Tensor>{reduce_to_shape(g, sa), reduce_to_shape(neg(g), sb)};
    });
  });
}

Tensor mul(const Tensor& a, const Tensor& b) {
  Tensor out = ew_binary(a, b, [](double x, double y) { return x * y; }, "mul");
  return record_op(std::move(out), {&a, &b}, [&] {
    Tensor ca = a, cb = b;
    return VjpFn([ca, cb](const Tensor& g) {
      return std::vector<Tensor>{reduce_to_shape(mul(g, cb), ca.shape()),
                                 reduce_to_shape(mul(g, ca), cb.shape())};
    });
  });
}

Tensor neg(const Tensor& a) {
  Tensor out = ew_unary(a, [](double x) { return -x; }, "neg");
  return record_op(std::move(out), {&a}, [&] {
    return VjpFn([](const Tensor& g) { return std::vector<Tensor>{neg(g)}; });
  });
}

Tensor scale(const Tensor& a, double factor) {
  Tensor out = ew_unary(a, [factor](double x) { return factor * x; }, "scale");
  return record_op(std::move(out), {&a}, [&] {
    return VjpFn([factor](const Tensor& g) { return std::vector<Tensor>{scale(g, factor)}; });
  });
}

Tensor add_scalar(const Tensor& a, double offset) {
  Tensor out = ew_unary(a, [offset](double x) { return x + offset; }, "add_scalar");
  return record_op(std::move(out), {&a}, [&] {
    return VjpFn([](const Tensor& g) { return std::vector<Tensor>{g}; });
  });
}

Tensor gelu(const Tensor& a) {
  Tensor out = ew_unary(a, [](double x) { return x * gauss_cdf(x); }, "gelu");
  return record_op(std::move(out), {&a}, [&] {
    Tensor ca = a;
    return VjpFn([ca](const Tensor& g) {
      auto xd = ca.data();
      auto gd = g.data();
      std::vector<double> dx(xd.size());
      for (size_t i = 0; i < xd.size(); ++i) {
        dx[i] = gd[i] * (gauss_cdf(xd[i]) + xd[i] * gauss_pdf(xd[i]));
      }
      return std::vector<Tensor>{Tensor(ca.shape(), std::move(dx))};
    });
  });
}

Tensor reshape(const Tensor& a, Shape new_shape) {
  if (numel_of(new_shape) != a.numel()) {
    throw std::invalid_argument("reshape: cannot view " + shape_to_string(a.shape()) + " as " +
                                shape_to_string(new_shape));
  }
  auto ad = a.data();
  Tensor out(new_shape, std::vector<double>(ad.begin(), ad.end()));
  return record_op(std::move(out), {&a}, [&] {
    Shape old = a.shape();
    return VjpFn([old](const Tensor& g) { return std::vector<Tensor>{reshape(g, old)}; });
  });
}

Tensor permute(const Tensor& a, const std::vector<int>& axes) {
  const int rank = a.ndim();
  if (static_cast<int>(axes.size()) != rank) throw std::invalid_argument("permute: wrong arity");
  std::vector<bool> seen(static_cast<size_t>(rank), false);
  for (int ax : axes) {
    if (ax < 0 || ax >= rank || seen[static_cast<size_t>(ax)]) {
      throw std::invalid_argument("permute: axes must form a permutation");
    }
    seen[static_cast<size_t>(ax)] = true;
  }
  Shape os(static_cast<size_t>(rank));
  for (int d = 0; d < rank; ++d) os[static_cast<size_t>(d)] = a.shape()[static_cast<size_t>(axes[static_cast<size_t>(d)])];
  auto in_strides = row_major_strides(a.shape());
  std::vector<std::int64_t> read_strides(static_cast<size_t>(rank));
  for (int d = 0; d < rank; ++d) read_strides[static_cast<size_t>(d)] = in_strides[static_cast<size_t>(axes[static_cast<size_t>(d)])];
  auto ad = a.data();
  std::vector<double> out(ad.size());
  for_each_2(os, read_strides, read_strides, [&](std::int64_t i, std::int64_t oa, std::int64_t) {
    out[static_cast<size_t>(i)] = ad[static_cast<size_t>(oa)];
  });
  Tensor t(std::move(os), std::move(out));
  return record_op(std::move(t), {&a}, [&] {
    std::vector<int> inverse(axes.size());
    for (int d = 0; d < rank; ++d) inverse[static_cast<size_t>(axes[static_cast<size_t>(d)])] = d;
    return VjpFn([inverse](const Tensor& g) { return std::vector<Tensor>{permute(g, inverse)}; });
  });
}

Tensor transpose_last2(const Tensor& a) {
  if (a.ndim() < 2) throw std::invalid_argument("transpose_last2: rank must be >= 2");
  std::vector<int> axes(static_cast<size_t>(a.ndim()));
  for (int d = 0; d < a.ndim(); ++d) axes[static_cast<size_t>(d)] = d;
  std::swap(axes[axes.size() - 1], axes[axes.size() - 2]);
  return permute(a, axes);
}

Tensor expand(const Tensor& a, const Shape& target) {
  if (broadcast_shapes(a.shape(), target) != target) {
    throw std::invalid_argument("expand: " + shape_to_string(a.shape()) +
                                " does not broadcast to " + shape_to_string(target));
  }
  if (a.shape() == target) return record_op(a.clone(), {&a}, [&] {
        return VjpFn([](const Tensor& g) { return std::vector<Tensor>{g}; });
      });
  auto sa = bcast_strides(a.shape(), target);
  auto ad = a.data();
  std::vector<double> out(static_cast<size_t>(numel_of(target)));
  for_each_2(target, sa, sa, [&](std::int64_t i, std::int64_t oa, std::int64_t) {
    out[static_cast<size_t>(i)] = ad[static_cast<size_t>(oa)];
  });
  Tensor t(target, std::move(out));
  return record_op(std::move(t), {&a}, [&] {
    Shape sa2 = a.shape();
    return VjpFn([sa2](const Tensor& g) { return std::vector<Tensor>{reduce_to_shape(g, sa2)}; });
  });
}

Tensor narrow(const Tensor& a, int axis, std::int64_t start, std::int64_t length) {
  const int ax = normalize_axis(axis, a.ndim(), "narrow");
  const auto dim = a.shape()[static_cast<size_t>(ax)];
  if (start < 0 || length <= 0 || start + length > dim) {
    throw std::invalid_argument("narrow: range [" + std::to_string(start) + ", " +
                                std::to_string(start + length) + ") out of bounds for axis size " +
                                std::to_string(dim));
  }
  Shape os = a.shape();
  os[static_cast<size_t>(ax)] = length;
  std::int64_t outer = 1, inner = 1;
  for (int d = 0; d < ax; ++d) outer *= a.shape()[static_cast<size_t>(d)];
  for (int d = ax + 1; d < a.ndim(); ++d) inner *= a.shape()[static_cast<size_t>(d)];
  auto ad = a.data();
  std::vector<double> out(static_cast<size_t>(outer * length * inner));
  for (std::int64_t o = 0; o < outer; ++o) {
    const double* src = ad.data() + (o * dim + start) * inner;
    std::copy(src, src + length * inner, out.data() + o * length * inner);
  }
  Tensor t(std::move(os), std::move(out));
  return record_op(std::move(t), {&a}, [&] {
    Shape full = a.shape();
    return VjpFn([full, ax, start, length, outer, inner, dim](const Tensor& g) {
      std::vector<double> dx(static_cast<size_t>(numel_of(full)), 0.0);
      auto gd = g.data();
      for (std::int64_t o = 0; o < outer; ++o) {
        const double* src = gd.data() + o * length * inner;
        std::copy(src, src + length * inner, dx.data() + (o * dim + start) * inner);
      }
      return std::vector<Tensor>{Tensor(full, std::move(dx))};
    });
  });
}

Tensor concat(std::span<const Tensor> parts, int axis) {
  if (parts.empty()) throw std::invalid_argument("concat: no inputs");
  const int rank = parts[0].ndim();
  const int ax = normalize_axis(axis, rank, "concat");
  std::int64_t axis_total = 0;
  for (const Tensor& p : parts) {
    if (p.ndim() != rank) throw std::invalid_argument("concat: rank mismatch");
    for (int d = 0; d < rank; ++d) {
      if (d != ax && p.shape()[static_cast<size_t>(d)] != parts[0].shape()[static_cast<size_t>(d)]) {
        throw std::invalid_argument("concat: shape mismatch at axis " + std::to_string(d));
      }
    }
    axis_total += p.shape()[static_cast<size_t>(ax)];
  }
  Shape os = parts[0].shape();
  os[static_cast<size_t>(ax)] = axis_total;
  std::int64_t outer = 1, inner = 1;
  for (int d = 0; d < ax; ++d) outer *= os[static_cast<size_t>(d)];
  for (int d = ax + 1; d < rank; ++d) inner *= os[static_cast<size_t>(d)];
  std::vector<double> out(static_cast<size_t>(numel_of(os)));
  std::int64_t woff = 0;
  for (const Tensor& p : parts) {
    const auto len = p.shape()[static_cast<size_t>(ax)];
    auto pd = p.data();
    for (std::int64_t o = 0; o < outer; ++o) {
      const double* src = pd.data() + o * len * inner;
      std::copy(src, src + len * inner, out.data() + (o * axis_total + woff) * inner);
    }
    woff += len;
  }
  Tensor t(std::move(os), std::move(out));

  GradTape* tape = active_tape();
  if (!tape) return t;
  bool any = false;
  for (const Tensor& p : parts) any = any || tape->needs_grad(p);
  if (!any) return t;
  std::vector<std::int32_t> parent_ids;
  std::vector<std::int64_t> lengths;
  for (const Tensor& p : parts) {
    parent_ids.push_back(tape->node_for(p));
    lengths.push_back(p.shape()[static_cast<size_t>(ax)]);
  }
  auto id = tape->record(t.shape(), std::move(parent_ids),
                         [lengths, ax](const Tensor& g) {
                           std::vector<Tensor> grads;
                           std::int64_t off = 0;
                           for (auto len : lengths) {
                             grads.push_back(narrow(g, ax, off, len));
                             off += len;
                           }
                           return grads;
                         });
  t.attach_node(tape->epoch(), id);
  return t;
}

std::vector<Tensor> split(const Tensor& a, int axis, std::span<const std::int64_t> sizes) {
  const int ax = normalize_axis(axis, a.ndim(), "split");
  std::int64_t total = 0;
  for (auto s : sizes) total += s;
  if (total != a.shape()[static_cast<size_t>(ax)]) {
    throw std::invalid_argument("split: sizes sum to " + std::to_string(total) +
                                ", axis has " + std::to_string(a.shape()[static_cast<size_t>(ax)]));
  }
  std::vector<Tensor> out;
  std::int64_t off = 0;
  for (auto s : sizes) {
    out.push_back(narrow(a, ax, off, s));
    off += s;
  }
  return out;
}

Tensor sum_all(const Tensor& a) {
  double s = 0.0;
  for (double v : a.data()) s += v;
  Tensor out = Tensor::scalar(s);
  debug_check_finite(out, "sum_all");
  return record_op(std::move(out), {&a}, [&] {
    Shape sa = a.shape();
    return VjpFn([sa](const Tensor& g) {
      return std::vector<Tensor>{Tensor::full(sa, g.scalar_value())};
    });
  });
}

namespace {

Tensor reduce_axis(const Tensor& a, int axis, bool keepdims, bool mean, const char* name) {
  const int ax = normalize_axis(axis, a.ndim(), name);
  const double n = static_cast<double>(a.shape()[static_cast<size_t>(ax)]);
  Shape kept = a.shape();
  kept[static_cast<size_t>(ax)] = 1;
  std::vector<double> acc(static_cast<size_t>(numel_of(kept)), 0.0);
  auto st = bcast_strides(kept, a.shape());
  auto ad = a.data();
  for_each_2(a.shape(), st, st, [&](std::int64_t i, std::int64_t ot, std::int64_t) {
    acc[static_cast<size_t>(ot)] += ad[static_cast<size_t>(i)];
  });
  if (mean) {
    for (auto& v : acc) v /= n;
  }
  Shape os = kept;
  if (!keepdims) os.erase(os.begin() + ax);
  Tensor t(os, std::move(acc));
  debug_check_finite(t, name);
  return record_op(std::move(t), {&a}, [&] {
    Shape full = a.shape();
    return VjpFn([full, kept, mean, n](const Tensor& g) {
      Tensor gk = reshape(g, kept);
      Tensor up = expand(gk, full);
      if (mean) up = scale(up, 1.0 / n);
      return std::vector<Tensor>{up};
    });
  });
}

}  // namespace

Tensor sum_axis(const Tensor& a, int axis, bool keepdims) {
  return reduce_axis(a, axis, keepdims, false, "sum_axis");
}

Tensor mean_axis(const Tensor& a, int axis, bool keepdims) {
  return reduce_axis(a, axis, keepdims, true, "mean_axis");
}

Tensor matmul(const Tensor& a, const Tensor& b) {
  if (a.ndim() < 2 || b.ndim() < 2) {
    throw std::invalid_argument("matmul: operands must have rank >= 2, got " +
                                shape_to_string(a.shape()) + " and " + shape_to_string(b.shape()));
  }
  const auto M = a.shape()[a.shape().size() - 2];
  const auto K = a.shape()[a.shape().size() - 1];
  const auto Kb = b.shape()[b.shape().size() - 2];
  const auto N = b.shape()[b.shape().size() - 1];
  if (K != Kb) {
    throw std::invalid_argument("matmul: inner dimensions differ, " + shape_to_string(a.shape()) +
                                " x " + shape_to_string(b.shape()));
  }
  Shape lead_a(a.shape().begin(), a.shape().end() - 2);
  Shape lead_b(b.shape().begin(), b.shape().end() - 2);
  Shape lead;
  try {
    lead = broadcast_shapes(lead_a, lead_b);
  } catch (const std::invalid_argument&) {
    throw std::invalid_argument("matmul: leading dimensions do not broadcast, " +
                                shape_to_string(a.shape()) + " x " + shape_to_string(b.shape()));
  }
  Shape os = lead;
  os.push_back(M);
  os.push_back(N);

  auto sa = bcast_strides(lead_a, lead);
  auto sb = bcast_strides(lead_b, lead);
  auto ad = a.data();
  auto bd = b.data();
  std::vector<double> out(static_cast<size_t>(numel_of(os)), 0.0);
  const std::int64_t mat_a = M * K, mat_b = K * N, mat_o = M * N;
  for_each_2(lead, sa, sb, [&](std::int64_t batch, std::int64_t oa, std::int64_t ob) {
    const double* A = ad.data() + oa * mat_a;
    const double* B = bd.data() + ob * mat_b;
    double* C = out.data() + batch * mat_o;
    for (std::int64_t m = 0; m < M; ++m) {
      const double* Arow = A + m * K;
      double* Crow = C + m * N;
      for (std::int64_t k = 0; k < K; ++k) {
        const double av = Arow[k];
        const double* Brow = B + k * N;
        for (std::int64_t n = 0; n < N; ++n) Crow[n] += av * Brow[n];
      }
    }
  });
  Tensor t(std::move(os), std::move(out));
  debug_check_finite(t, "matmul");
  return record_op(std::move(t), {&a, &b}, [&] {
    Tensor ca = a, cb = b;
    return VjpFn([ca, cb](const Tensor& g) {
      Tensor da = reduce_to_shape(matmul(g, transpose_last2(cb)), ca.shape());
      Tensor db = reduce_to_shape(matmul(transpose_last2(ca), g), cb.shape());
      return std::vector<Tensor>{da, db};
    });
  });
}

Tensor softmax_rows(const Tensor& a, double scale_factor) {
  if (scale_factor <= 0.0) throw std::invalid_argument("softmax_rows: scale must be positive");
  if (a.ndim() < 1) throw std::invalid_argument("softmax_rows: rank must be >= 1");
  if (debug_checks_enabled() && !all_finite(a.data())) {
    throw std::invalid_argument("softmax_rows: non-finite input");
  }
  const auto L = a.shape().back();
  auto ad = a.data();
  std::vector<double> out(ad.size());
  for (size_t row = 0; row < ad.size(); row += static_cast<size_t>(L)) {
    double m = -std::numeric_limits<double>::infinity();
    for (std::int64_t j = 0; j < L; ++j) m = std::max(m, scale_factor * ad[row + j]);
    double z = 0.0;
    for (std::int64_t j = 0; j < L; ++j) {
      out[row + j] = std::exp(scale_factor * ad[row + j] - m);
      z += out[row + j];
    }
    for (std::int64_t j = 0; j < L; ++j) out[row + j] /= z;
  }
  Tensor t(a.shape(), std::move(out));
  Tensor saved = t;  // handle copy for the vjp; shares storage
  return record_op(std::move(t), {&a}, [saved, scale_factor] {
    return VjpFn([saved, scale_factor](const Tensor& g) {
      const auto L = saved.shape().back();
      auto sd = saved.data();
      auto gd = g.data();
      std::vector<double> dx(sd.size());
      for (size_t row = 0; row < sd.size(); row += static_cast<size_t>(L)) {
        double dot = 0.0;
        for (std::int64_t j = 0; j < L; ++j) dot += gd[row + j] * sd[row + j];
        for (std::int64_t j = 0; j < L; ++j) {
          dx[row + j] = scale_factor * sd[row + j] * (gd[row + j] - dot);
        }
      }
      return std::vector<Tensor>{Tensor(saved.shape(), std::move(dx))};
    });
  });
}

Tensor layer_norm(const Tensor& x, const Tensor& gamma, const Tensor& beta, double eps) {
  if (x.ndim() < 1) throw std::invalid_argument("layer_norm: rank must be >= 1");
  const auto D = x.shape().back();
  if (gamma.shape() != Shape{D} || beta.shape() != Shape{D}) {
    throw std::invalid_argument("layer_norm: gamma/beta must have shape [" + std::to_string(D) + "]");
  }
  auto xd = x.data();
  auto gd = gamma.data();
  auto bd = beta.data();
  const size_t rows = xd.size() / static_cast<size_t>(D);
  std::vector<double> out(xd.size());
  std::vector<double> xhat(xd.size());
  std::vector<double> inv_std(rows);
  for (size_t r = 0; r < rows; ++r) {
    const double* row = xd.data() + r * static_cast<size_t>(D);
    double mu = 0.0;
    for (std::int64_t j = 0; j < D; ++j) mu += row[j];
    mu /= static_cast<double>(D);
    double var = 0.0;
    for (std::int64_t j = 0; j < D; ++j) var += (row[j] - mu) * (row[j] - mu);
    var /= static_cast<double>(D);
    const double inv = 1.0 / std::sqrt(var + eps);
    inv_std[r] = inv;
    for (std::int64_t j = 0; j < D; ++j) {
      const size_t i = r * static_cast<size_t>(D) + static_cast<size_t>(j);
      xhat[i] = (row[j] - mu) * inv;
      out[i] = xhat[i] * gd[j] + bd[j];
    }
  }
  Tensor t(x.shape(), std::move(out));
  debug_check_finite(t, "layer_norm");
  return record_op(std::move(t), {&x, &gamma, &beta}, [&] {
    Tensor cgamma = gamma;
    Shape xs = x.shape();
    auto xhat_buf = std::make_shared<std::vector<double>>(std::move(xhat));
    auto inv_buf = std::make_shared<std::vector<double>>(std::move(inv_std));
    return VjpFn([cgamma, xs, xhat_buf, inv_buf, D](const Tensor& g) {
      auto gd2 = g.data();
      auto gmd = cgamma.data();
      const auto& xh = *xhat_buf;
      const auto& inv = *inv_buf;
      const size_t rows = gd2.size() / static_cast<size_t>(D);
      std::vector<double> dx(gd2.size());
      std::vector<double> dgamma(static_cast<size_t>(D), 0.0);
      std::vector<double> dbeta(static_cast<size_t>(D), 0.0);
      for (size_t r = 0; r < rows; ++r) {
        const size_t base = r * static_cast<size_t>(D);
        double sum_gg = 0.0, sum_ggx = 0.0;
        for (std::int64_t j = 0; j < D; ++j) {
          const double gg = gd2[base + j] * gmd[j];
          sum_gg += gg;
          sum_ggx += gg * xh[base + j];
          dgamma[static_cast<size_t>(j)] += gd2[base + j] * xh[base + j];
          dbeta[static_cast<size_t>(j)] += gd2[base + j];
        }
        const double mean_gg = sum_gg / static_cast<double>(D);
        const double mean_ggx = sum_ggx / static_cast<double>(D);
        for (std::int64_t j = 0; j < D; ++j) {
          const double gg = gd2[base + j] * gmd[j];
          dx[base + j] = inv[r] * (gg - mean_gg - xh[base + j] * mean_ggx);
        }
      }
      return std::vector<Tensor>{Tensor(xs, std::move(dx)), Tensor(Shape{D}, std::move(dgamma)),
                                 Tensor(Shape{D}, std::move(dbeta))};
    });
  });
}

Tensor depthwise_conv2d(const Tensor& x, const Tensor& kernels) {
  if (x.ndim() != 4) throw std::invalid_argument("depthwise_conv2d: input must be [B, G, T, D]");
  if (kernels.ndim() != 3) throw std::invalid_argument("depthwise_conv2d: kernels must be [G, k, k]");
  const auto B = x.shape()[0], G = x.shape()[1], T = x.shape()[2], D = x.shape()[3];
  const auto k = kernels.shape()[1];
  if (kernels.shape()[0] != G || kernels.shape()[2] != k) {
    throw std::invalid_argument("depthwise_conv2d: kernel shape " + shape_to_string(kernels.shape()) +
                                " does not match " + std::to_string(G) + " channels");
  }
  if (k % 2 == 0) throw std::invalid_argument("depthwise_conv2d: kernel size must be odd, got " + std::to_string(k));
  const auto pad = (k - 1) / 2;
  auto xd = x.data();
  auto kd = kernels.data();
  std::vector<double> out(xd.size(), 0.0);
  const std::int64_t plane = T * D;
  for (std::int64_t b = 0; b < B; ++b) {
    for (std::int64_t g = 0; g < G; ++g) {
      const double* xp = xd.data() + (b * G + g) * plane;
      const double* kp = kd.data() + g * k * k;
      double* op = out.data() + (b * G + g) * plane;
      for (std::int64_t t = 0; t < T; ++t) {
        for (std::int64_t d = 0; d < D; ++d) {
          double acc = 0.0;
          for (std::int64_t i = 0; i < k; ++i) {
            const std::int64_t tt = t + i - pad;
            if (tt < 0 || tt >= T) continue;
            for (std::int64_t j = 0; j < k; ++j) {
              const std::int64_t dd = d + j - pad;
              if (dd < 0 || dd >= D) continue;
              acc += xp[tt * D + dd] * kp[i * k + j];
            }
          }
          op[t * D + d] = acc;
        }
      }
    }
  }
  Tensor t(x.shape(), std::move(out));
  debug_check_finite(t, "depthwise_conv2d");
  return record_op(std::move(t), {&x, &kernels}, [&] {
    Tensor cx = x, ck = kernels;
    return VjpFn([cx, ck, B, G, T, D, k, pad](const Tensor& gr) {
      auto xd2 = cx.data();
      auto kd2 = ck.data();
      auto gd2 = gr.data();
      std::vector<double> dx(xd2.size(), 0.0);
      std::vector<double> dk(kd2.size(), 0.0);
      const std::int64_t plane = T * D;
      for (std::int64_t b = 0; b < B; ++b) {
        for (std::int64_t g = 0; g < G; ++g) {
          const double* xp = xd2.data() + (b * G + g) * plane;
          const double* kp = kd2.data() + g * k * k;
          const double* gp = gd2.data() + (b * G + g) * plane;
          double* dxp = dx.data() + (b * G + g) * plane;
          double* dkp = dk.data() + g * k * k;
          for (std::int64_t t2 = 0; t2 < T; ++t2) {
            for (std::int64_t d2 = 0; d2 < D; ++d2) {
              const double go = gp[t2 * D + d2];
              for (std::int64_t i = 0; i < k; ++i) {
                const std::int64_t tt = t2 + i - pad;
                if (tt < 0 || tt >= T) continue;
                for (std::int64_t j = 0; j < k; ++j) {
                  const std::int64_t dd = d2 + j - pad;
                  if (dd < 0 || dd >= D) continue;
                  dxp[tt * D + dd] += go * kp[i * k + j];
                  dkp[i * k + j] += go * xp[tt * D + dd];
                }
              }
            }
          }
        }
      }
      return std::vector<Tensor>{Tensor(cx.shape(), std::move(dx)), Tensor(ck.shape(), std::move(dk))};
    });
  });
}

Tensor affine(const Tensor& x, const Tensor& w, const Tensor& b) {
  return add(matmul(x, w), b);
}

}  // namespace msct
