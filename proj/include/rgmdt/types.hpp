#pragma once

#include <Eigen/Core>

#include <cstdint>
#include <stdexcept>
#include <string>

namespace rgmdt {

using Real = double;
using Index = Eigen::Index;

template <typename Scalar> using VectorX = Eigen::Matrix<Scalar, Eigen::Dynamic, 1>;
template <typename Scalar> using MatrixX = Eigen::Matrix<Scalar, Eigen::Dynamic, Eigen::Dynamic>;

using Vector = VectorX<Real>;
using Matrix = MatrixX<Real>;

// Base of all toolkit errors. The CLI maps InvalidArgument to exit code 2.
struct Error : std::runtime_error
{
  using std::runtime_error::runtime_error;
};

// Precondition or schema violation in caller-supplied data.
struct InvalidArgument : Error
{
  using Error::Error;
};

// Joint observation space larger than the configured enumeration cap.
struct CapExceeded : InvalidArgument
{
  using InvalidArgument::InvalidArgument;
};

inline constexpr char kVersion[] = "0.3.0";

} // namespace rgmdt
