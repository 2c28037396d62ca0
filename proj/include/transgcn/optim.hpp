#pragma once

#include <cmath>
#include <cstdint>
#include <vector>

#include "transgcn/error.hpp"
#include "transgcn/matrix.hpp"

namespace transgcn {

struct AdamHyper {
  double lr = 0.001;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double eps = 1e-8;
};

/// One bias-corrected Adam update of `param` at step t >= 1.
inline void adam_step(Matrix& param, const Matrix& grad, Matrix& m, Matrix& v, const AdamHyper& h, std::uint64_t t) {
  if (!param.same_shape(grad) || !param.same_shape(m) || !param.same_shape(v)) {
    throw ShapeError("adam_step: parameter, gradient and moments must share a shape");
  }
  if (t < 1) throw StateError("adam_step: step counter starts at 1");
  const double c1 = 1.0 - std::pow(h.beta1, static_cast<double>(t));
  const double c2 = 1.0 - std::pow(h.beta2, static_cast<double>(t));
  auto& p = param.data();
  const auto& g = grad.data();
  auto& md = m.data();
  auto& vd = v.data();
  for (std::size_t i = 0; i < p.size(); ++i) {
    md[i] = h.beta1 * md[i] + (1.0 - h.beta1) * g[i];
    vd[i] = h.beta2 * vd[i] + (1.0 - h.beta2) * g[i] * g[i];
    const double m_hat = md[i] / c1;
    const double v_hat = vd[i] / c2;
    p[i] -= h.lr * m_hat / (std::sqrt(v_hat) + h.eps);
  }
}

/// First and second moments for a list of parameters plus the step counter.
struct AdamState {
  std::vector<Matrix> m;
  std::vector<Matrix> v;
  std::uint64_t step = 0;

  static AdamState zeros_like(const std::vector<const Matrix*>& params) {
    AdamState s;
    for (const Matrix* p : params) {
      s.m.emplace_back(p->rows(), p->cols());
      s.v.emplace_back(p->rows(), p->cols());
    }
    return s;
  }

  friend bool operator==(const AdamState&, const AdamState&) = default;
};

/// Scales all gradients so their joint L2 norm is at most max_norm. Returns
/// the norm before clipping.
inline double clip_global_norm(std::vector<Matrix>& grads, double max_norm) {
  double sq = 0.0;
  for (const auto& g : grads)
    for (double x : g.data()) sq += x * x;
  const double norm = std::sqrt(sq);
  if (max_norm > 0.0 && norm > max_norm) {
    const double s = max_norm / norm;
    for (auto& g : grads)
      for (double& x : g.data()) x *= s;
  }
  return norm;
}

}  // namespace transgcn
