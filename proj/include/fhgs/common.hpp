#pragma once

#include <Eigen/Core>

#include <stdexcept>
#include <string>

namespace fhgs {

template <typename Real>
using Vec2 = Eigen::Matrix<Real, 2, 1>;
template <typename Real>
using Vec3 = Eigen::Matrix<Real, 3, 1>;
template <typename Real>
using Vec4 = Eigen::Matrix<Real, 4, 1>;
template <typename Real>
using Mat3 = Eigen::Matrix<Real, 3, 3>;
template <typename Real>
using Mat4 = Eigen::Matrix<Real, 4, 4>;

/// A parameter that cannot be decoded (non-finite quaternion, bad config value).
class InvalidParameter : public std::invalid_argument {
 public:
  using std::invalid_argument::invalid_argument;
};

/// Malformed or inconsistent input file. The message names the offending file.
class LoadError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

/// Caller supplied arguments the operation cannot honor (maps to exit code 2).
class UsageError : public std::invalid_argument {
 public:
  using std::invalid_argument::invalid_argument;
};

/// A loss or gradient went non-finite during optimization.
class NumericalError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

}  // namespace fhgs
