// Least-squares inversion of the synthetic generator's affine embedding,
// used as an oracle: recovers latent paths from feature streams without any
// knowledge of the generator's internals beyond its public embedding maps.
#pragma once

#include <cmath>
#include <stdexcept>
#include <vector>

#include "msct/tensor.hpp"

namespace oracles {

/// Solves the square system A x = b (n x n, row-major) by Gaussian
/// elimination with partial pivoting.
inline std::vector<double> solve_linear(std::vector<double> A, std::vector<double> b, int n) {
  for (int col = 0; col < n; ++col) {
    int pivot = col;
    for (int r = col + 1; r < n; ++r)
      if (std::abs(A[r * n + col]) > std::abs(A[pivot * n + col])) pivot = r;
    if (std::abs(A[pivot * n + col]) < 1e-12) throw std::runtime_error("singular system");
    if (pivot != col) {
      for (int c = 0; c < n; ++c) std::swap(A[col * n + c], A[pivot * n + c]);
      std::swap(b[col], b[pivot]);
    }
    for (int r = col + 1; r < n; ++r) {
      const double f = A[r * n + col] / A[col * n + col];
      for (int c = col; c < n; ++c) A[r * n + c] -= f * A[col * n + c];
      b[r] -= f * b[col];
    }
  }
  std::vector<double> x(n);
  for (int r = n - 1; r >= 0; --r) {
    double acc = b[r];
    for (int c = r + 1; c < n; ++c) acc -= A[r * n + c] * x[c];
    x[r] = acc / A[r * n + r];
  }
  return x;
}

/// Given features X [T, C] = L E + offset (+ noise) and the embedding
/// E [d, C], recovers L via least squares: L = (X - offset) E^T (E E^T)^-1.
inline msct::Tensor recover_latent(const msct::Tensor& features, const msct::Tensor& embed,
                                   const msct::Tensor& offset) {
  const int T = static_cast<int>(features.size(0));
  const int C = static_cast<int>(features.size(1));
  const int d = static_cast<int>(embed.size(0));
  auto xd = features.data();
  auto ed = embed.data();
  auto od = offset.data();

  // Gram matrix G = E E^T (d x d).
  std::vector<double> G(static_cast<size_t>(d) * d, 0.0);
  for (int i = 0; i < d; ++i)
    for (int j = 0; j < d; ++j)
      for (int c = 0; c < C; ++c) G[i * d + j] += ed[i * C + c] * ed[j * C + c];

  std::vector<double> out(static_cast<size_t>(T) * d);
  for (int t = 0; t < T; ++t) {
    // rhs_i = sum_c (X[t,c] - offset[c]) * E[i,c]
    std::vector<double> rhs(d, 0.0);
    for (int i = 0; i < d; ++i)
      for (int c = 0; c < C; ++c) rhs[i] += (xd[t * C + c] - od[c]) * ed[i * C + c];
    auto row = solve_linear(G, rhs, d);
    for (int i = 0; i < d; ++i) out[t * d + i] = row[i];
  }
  return msct::Tensor({T, d}, std::move(out));
}

/// Pearson correlation between two equally shaped tensors, flattened.
inline double pearson(const msct::Tensor& a, const msct::Tensor& b) {
  auto ad = a.data();
  auto bd = b.data();
  if (ad.size() != bd.size() || ad.empty()) throw std::invalid_argument("pearson: shape mismatch");
  const double n = static_cast<double>(ad.size());
  double ma = 0, mb = 0;
  for (size_t i = 0; i < ad.size(); ++i) {
    ma += ad[i];
    mb += bd[i];
  }
  ma /= n;
  mb /= n;
  double cov = 0, va = 0, vb = 0;
  for (size_t i = 0; i < ad.size(); ++i) {
    cov += (ad[i] - ma) * (bd[i] - mb);
    va += (ad[i] - ma) * (ad[i] - ma);
    vb += (bd[i] - mb) * (bd[i] - mb);
  }
  if (va == 0 || vb == 0) throw std::invalid_argument("pearson: zero variance");
  return cov / std::sqrt(va * vb);
}

}  // namespace oracles
