#pragma once

#include "rgmdt/types.hpp"

#include <algorithm>
#include <string>
#include <string_view>

namespace rgmdt {

enum class Metric
{
  Cosine,
  Euclidean,
  Manhattan
};

std::string_view metric_name(Metric m);
Metric parse_metric(std::string_view name);

// 1 - a.b / (|a| |b|), clamped to [0, 2]. Callers must reject zero-norm inputs first.
template <typename A, typename B>
typename A::Scalar cosine_distance(Eigen::MatrixBase<A> const& a, Eigen::MatrixBase<B> const& b)
{
  using S = typename A::Scalar;
  S const na = a.norm(), nb = b.norm();
  if (!(na > S(0)) || !(nb > S(0)))
    throw InvalidArgument("cosine distance is undefined for a zero-norm vector");
  if (a.size() == b.size() && (a.array() == b.array()).all())
    return S(0);
  S const c = a.dot(b) / (na * nb);
  return std::clamp(S(1) - c, S(0), S(2));
}

template <typename A, typename B>
typename A::Scalar euclidean_distance(Eigen::MatrixBase<A> const& a, Eigen::MatrixBase<B> const& b)
{
  return (a - b).norm();
}

template <typename A, typename B>
typename A::Scalar manhattan_distance(Eigen::MatrixBase<A> const& a, Eigen::MatrixBase<B> const& b)
{
  return (a - b).template lpNorm<1>();
}

template <typename A, typename B>
typename A::Scalar distance(Metric m, Eigen::MatrixBase<A> const& a, Eigen::MatrixBase<B> const& b)
{
  switch (m) {
  case Metric::Euclidean: return euclidean_distance(a, b);
  case Metric::Manhattan: return manhattan_distance(a, b);
  default: return cosine_distance(a, b);
  }
}

} // namespace rgmdt
