#pragma once

#include <Eigen/Core>
#include <Eigen/Geometry>

#include <algorithm>
#include <cmath>

namespace dualuv {

template <class T> using Vec2T = Eigen::Matrix<T, 2, 1>;
template <class T> using Vec3T = Eigen::Matrix<T, 3, 1>;
template <class T> using Mat3T = Eigen::Matrix<T, 3, 3>;

/// Rodrigues' formula. Below 1e-8 rad the series expansion keeps the
/// derivative at zero rotation exact (no sqrt of zero on the dual path).
template <class T>
Mat3T<T> axis_angle_to_matrix(const Vec3T<T>& w) {
  using std::cos;
  using std::sin;
  using std::sqrt;
  const T theta2 = w.squaredNorm();
  T a;  // sin(theta) / theta
  T b;  // (1 - cos(theta)) / theta^2
  if (theta2 < 1e-16) {
    a = T(1.0) - theta2 / 6.0;
    b = T(0.5) - theta2 / 24.0;
  } else {
    const T theta = sqrt(theta2);
    a = sin(theta) / theta;
    b = (T(1.0) - cos(theta)) / theta2;
  }
  Mat3T<T> k;
  k << T(0.0), -w(2), w(1),
       w(2), T(0.0), -w(0),
       -w(1), w(0), T(0.0);
  Mat3T<T> r = Mat3T<T>::Identity();
  r += a * k + b * (k * k);
  return r;
}

inline Eigen::Vector3d matrix_to_axis_angle(const Eigen::Matrix3d& r) {
  const Eigen::AngleAxisd aa(r);
  return aa.axis() * aa.angle();
}

/// Angle of R_a^T R_b in radians.
inline double geodesic_angle(const Eigen::Matrix3d& a, const Eigen::Matrix3d& b) {
  const double c = std::clamp(((a.transpose() * b).trace() - 1.0) * 0.5, -1.0, 1.0);
  return std::acos(c);
}

}  // namespace dualuv
