#pragma once

#include "rgmdt/types.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <vector>

namespace rgmdt {

struct SvmConfig
{
  Real C = 10.0;
  bool balanced = false;    // per-class box C n / (2 n_class), so a small class is not traded away
  Real tol = 1e-9;          // stop when the maximal KKT violation falls below this
  long max_iters = 10000000; // working-set iterations
};

// Oblique split: left iff w.x - p < 0, right otherwise. Left is the -1 class.
template <typename Scalar> struct Hyperplane
{
  VectorX<Scalar> w;
  Scalar p = 0;
  Scalar margin = 0;     // 1 / |w|
  Scalar hinge_loss = 0; // mean max(0, 1 - y (w.x - p)) over the training points
  Index trained_on = 0;
  long iterations = 0;
  bool converged = true;
  VectorX<Scalar> alpha; // dual variables, one per training point

  template <typename X> Scalar eval(Eigen::MatrixBase<X> const& x) const { return w.dot(x) - p; }
  template <typename X> bool goes_left(Eigen::MatrixBase<X> const& x) const { return eval(x) < Scalar(0); }
  bool degenerate() const { return !(w.norm() >= Scalar(1e-12)); }
};

// Soft-margin linear SVM solved in the dual by SMO with second-order working-set selection.
// Rows of X are points; y holds +1 / -1.
template <typename Derived>
Hyperplane<typename Derived::Scalar> train_svm(Eigen::MatrixBase<Derived> const& X, std::vector<int> const& y,
                                               SvmConfig const& cfg = {})
{
  using S = typename Derived::Scalar;
  Index const n = X.rows();
  if (n == 0)
    throw InvalidArgument("train_svm: no training points");
  if (static_cast<Index>(y.size()) != n)
    throw InvalidArgument("train_svm: one label per point required");
  if (!(cfg.C > 0.0) || !(cfg.tol > 0.0))
    throw InvalidArgument("train_svm: C and tol must be positive");
  bool pos = false, neg = false;
  for (int v : y) {
    if (v != 1 && v != -1)
      throw InvalidArgument("train_svm: labels must be +1 or -1");
    (v > 0 ? pos : neg) = true;
  }
  if (!pos || !neg)
    throw InvalidArgument("train_svm: both classes must be present");

  MatrixX<S> const K = X * X.transpose();
  Index n_pos = 0;
  for (int v : y)
    n_pos += v > 0;
  S const c_pos = static_cast<S>(cfg.balanced ? cfg.C * static_cast<Real>(n) / (2.0 * static_cast<Real>(n_pos)) : cfg.C);
  S const c_neg =
      static_cast<S>(cfg.balanced ? cfg.C * static_cast<Real>(n) / (2.0 * static_cast<Real>(n - n_pos)) : cfg.C);
  auto cap = [&](Index t) { return y[t] > 0 ? c_pos : c_neg; };
  S const tau = S(1e-12);
  VectorX<S> alpha = VectorX<S>::Zero(n);
  VectorX<S> G = VectorX<S>::Constant(n, S(-1)); // gradient of 1/2 a'Qa - e'a
  auto Q = [&](Index i, Index j) { return static_cast<S>(y[i] * y[j]) * K(i, j); };
  auto upper = [&](Index t) { return alpha[t] >= cap(t); };
  auto lower = [&](Index t) { return alpha[t] <= S(0); };

  Hyperplane<S> h;
  long it = 0;
  for (; it < cfg.max_iters; ++it) {
    S gmax = -std::numeric_limits<S>::infinity();
    Index i = -1;
    for (Index t = 0; t < n; ++t) {
      S const v = -static_cast<S>(y[t]) * G[t];
      bool const up = y[t] > 0 ? !upper(t) : !lower(t);
      if (up && v > gmax) {
        gmax = v;
        i = t;
      }
    }
    S gmax2 = -std::numeric_limits<S>::infinity();
    Index j = -1;
    S best = std::numeric_limits<S>::infinity();
    for (Index t = 0; t < n; ++t) {
      bool const low = y[t] > 0 ? !lower(t) : !upper(t);
      if (!low)
        continue;
      S const v = static_cast<S>(y[t]) * G[t];
      gmax2 = std::max(gmax2, v);
      if (i < 0)
        continue;
      S const b = gmax + v;
      if (b > S(0)) {
        S a = K(i, i) + K(t, t) - S(2) * K(i, t);
        if (a <= S(0))
          a = tau;
        S const obj = -(b * b) / a;
        if (obj < best) {
          best = obj;
          j = t;
        }
      }
    }
    if (i < 0 || j < 0 || gmax + gmax2 < static_cast<S>(cfg.tol))
      break;

    S const ai = alpha[i], aj = alpha[j];
    if (y[i] != y[j]) {
      S quad = K(i, i) + K(j, j) + S(2) * Q(i, j);
      if (quad <= S(0))
        quad = tau;
      S const delta = (-G[i] - G[j]) / quad;
      S const diff = alpha[i] - alpha[j];
      alpha[i] += delta;
      alpha[j] += delta;
      if (diff > S(0)) {
        if (alpha[j] < S(0)) {
          alpha[j] = 0;
          alpha[i] = diff;
        }
      } else if (alpha[i] < S(0)) {
        alpha[i] = 0;
        alpha[j] = -diff;
      }
      S const ci = cap(i), cj = cap(j);
      if (diff > ci - cj) {
        if (alpha[i] > ci) {
          alpha[i] = ci;
          alpha[j] = ci - diff;
        }
      } else if (alpha[j] > cj) {
        alpha[j] = cj;
        alpha[i] = cj + diff;
      }
    } else {
      S quad = K(i, i) + K(j, j) - S(2) * Q(i, j);
      if (quad <= S(0))
        quad = tau;
      S const delta = (G[i] - G[j]) / quad;
      S const sum = alpha[i] + alpha[j];
      S const ci = cap(i), cj = cap(j);
      alpha[i] -= delta;
      alpha[j] += delta;
      if (sum > ci) {
        if (alpha[i] > ci) {
          alpha[i] = ci;
          alpha[j] = sum - ci;
        }
      } else if (alpha[j] < S(0)) {
        alpha[j] = 0;
        alpha[i] = sum;
      }
      if (sum > cj) {
        if (alpha[j] > cj) {
          alpha[j] = cj;
          alpha[i] = sum - cj;
        }
      } else if (alpha[i] < S(0)) {
        alpha[i] = 0;
        alpha[j] = sum;
      }
    }
    S const di = alpha[i] - ai, dj = alpha[j] - aj;
    for (Index t = 0; t < n; ++t)
      G[t] += Q(i, t) * di + Q(j, t) * dj;
  }
  h.iterations = it;
  h.converged = it < cfg.max_iters;

  // Offset from the free support vectors, or the midpoint of the feasible interval.
  S ub = std::numeric_limits<S>::infinity(), lb = -std::numeric_limits<S>::infinity(), sum_free = 0;
  Index n_free = 0;
  for (Index t = 0; t < n; ++t) {
    S const yg = static_cast<S>(y[t]) * G[t];
    if (upper(t)) {
      if (y[t] < 0)
        ub = std::min(ub, yg);
      else
        lb = std::max(lb, yg);
    } else if (lower(t)) {
      if (y[t] > 0)
        ub = std::min(ub, yg);
      else
        lb = std::max(lb, yg);
    } else {
      ++n_free;
      sum_free += yg;
    }
  }
  h.p = n_free > 0 ? sum_free / static_cast<S>(n_free) : (ub + lb) / S(2);
  h.w = VectorX<S>::Zero(X.cols());
  for (Index t = 0; t < n; ++t)
    if (alpha[t] != S(0))
      h.w += alpha[t] * static_cast<S>(y[t]) * X.row(t).transpose();
  h.alpha = alpha;
  h.trained_on = n;
  S const nw = h.w.norm();
  h.margin = nw > S(0) ? S(1) / nw : std::numeric_limits<S>::infinity();
  S loss = 0;
  for (Index t = 0; t < n; ++t)
    loss += std::max(S(0), S(1) - static_cast<S>(y[t]) * h.eval(X.row(t).transpose()));
  h.hinge_loss = loss / static_cast<S>(n);
  return h;
}

} // namespace rgmdt
