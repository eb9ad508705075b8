#include "desplat/geometry.hpp"

#include <cmath>

namespace desplat {

namespace {

constexpr double kSmallAngle = 1e-8;
constexpr double kPi = 3.14159265358979323846;

// Trig coefficients of the SE(3) exponential:
//   R = I + a K + b K^2,  J_l = I + b K + c K^2  with K = skew(omega).
struct ExpCoeffs {
  double a, b, c;
};

ExpCoeffs exp_coeffs(double theta) {
  if (theta < kSmallAngle) {
    double t2 = theta * theta;
    return {1.0 - t2 / 6.0, 0.5 - t2 / 24.0, 1.0 / 6.0 - t2 / 120.0};
  }
  double s = std::sin(theta), c = std::cos(theta);
  double t2 = theta * theta;
  return {s / theta, (1.0 - c) / t2, (theta - s) / (t2 * theta)};
}

// d(coeff)/d(theta) divided by theta, which is what the chain rule through
// theta = ||omega|| actually needs (d theta/d omega = omega/theta).
struct ExpCoeffDerivs {
  double alpha, beta, gamma;
};

ExpCoeffDerivs exp_coeff_derivs(double theta) {
  if (theta < kSmallAngle) {
    double t2 = theta * theta;
    return {-1.0 / 3.0 + t2 / 30.0, -1.0 / 12.0 + t2 / 180.0, -1.0 / 60.0 + t2 / 1260.0};
  }
  double s = std::sin(theta), c = std::cos(theta);
  double t3 = theta * theta * theta;
  double t4 = t3 * theta;
  double t5 = t4 * theta;
  return {(theta * c - s) / t3, (theta * s - 2.0 * (1.0 - c)) / t4,
          (theta * (1.0 - c) - 3.0 * (theta - s)) / t5};
}

double vee_dot(const Mat3& g, int i, int j, int k, int l) {
  return g(i, j) - g(k, l);
}

// <G, d(skew(omega))/d omega> contracted over the matrix indices.
Vec3 skew_contraction(const Mat3& g) {
  return Vec3(vee_dot(g, 2, 1, 1, 2), vee_dot(g, 0, 2, 2, 0), vee_dot(g, 1, 0, 0, 1));
}

// <G, d(K^2)/d omega> using K^2 = omega omega^T - theta^2 I.
Vec3 skew_sq_contraction(const Mat3& g, const Vec3& omega) {
  return (g + g.transpose()) * omega - 2.0 * g.trace() * omega;
}

}  // namespace

Mat3 skew(const Vec3& w) {
  Mat3 k;
  k << 0, -w.z(), w.y(), w.z(), 0, -w.x(), -w.y(), w.x(), 0;
  return k;
}

Pose screw_exp(const ScrewAxis& axis) {
  double theta = axis.omega.norm();
  ExpCoeffs cf = exp_coeffs(theta);
  Mat3 k = skew(axis.omega);
  Mat3 k2 = k * k;
  Pose out;
  out.rotation = Mat3::Identity() + cf.a * k + cf.b * k2;
  Mat3 jl = Mat3::Identity() + cf.b * k + cf.c * k2;
  out.translation = jl * axis.v;
  return out;
}

ScrewAxisGrad screw_exp_backward(const ScrewAxis& axis, const Mat3& d_rotation,
                                 const Vec3& d_translation) {
  double theta = axis.omega.norm();
  ExpCoeffs cf = exp_coeffs(theta);
  ExpCoeffDerivs cd = exp_coeff_derivs(theta);
  Mat3 k = skew(axis.omega);
  Mat3 k2 = k * k;

  // The left Jacobian enters through t = J_l v, so its adjoint in matrix form
  // is the outer product d_translation v^T.
  Mat3 jl = Mat3::Identity() + cf.b * k + cf.c * k2;
  Mat3 g_j = d_translation * axis.v.transpose();

  ScrewAxisGrad out;
  out.d_v = jl.transpose() * d_translation;

  // Structural part: K and K^2 are linear resp. quadratic in omega.
  Mat3 g_k = cf.a * d_rotation + cf.b * g_j;
  Mat3 g_k2 = cf.b * d_rotation + cf.c * g_j;
  out.d_omega = skew_contraction(g_k) + skew_sq_contraction(g_k2, axis.omega);

  // Coefficient part: a, b, c all depend on theta = ||omega||.
  double s = cd.alpha * (d_rotation.cwiseProduct(k)).sum() +
             cd.beta * ((d_rotation.cwiseProduct(k2)).sum() + (g_j.cwiseProduct(k)).sum()) +
             cd.gamma * (g_j.cwiseProduct(k2)).sum();
  out.d_omega += s * axis.omega;
  return out;
}

Pose compose(const Pose& a, const Pose& b) {
  Pose out;
  out.rotation = a.rotation * b.rotation;
  out.translation = a.rotation * b.translation + a.translation;
  return out;
}

Pose pose_inverse(const Pose& a) {
  Pose out;
  out.rotation = a.rotation.transpose();
  out.translation = -(a.rotation.transpose() * a.translation);
  return out;
}

Vec3 world_to_camera(const Pose& pose, const Vec3& x) {
  return pose.rotation.transpose() * (x - pose.translation);
}

std::optional<Projection> project(const Pose& pose, const Intrinsics& intr, const Vec3& x,
                                  double near_plane) {
  Vec3 p = world_to_camera(pose, x);
  if (p.z() <= near_plane) return std::nullopt;
  Projection out;
  out.pixel = Vec2(intr.fx * p.x() / p.z() + intr.cx, intr.fy * p.y() / p.z() + intr.cy);
  out.depth = p.z();
  return out;
}

Pose look_at(const Vec3& eye, const Vec3& target, const Vec3& up) {
  Vec3 z = (target - eye).normalized();
  Vec3 x = z.cross(up).normalized();
  Vec3 y = z.cross(x);
  Pose out;
  out.rotation.col(0) = x;
  out.rotation.col(1) = y;
  out.rotation.col(2) = z;
  out.translation = eye;
  return out;
}

Vec3 rotation_log(const Mat3& r) {
  double c = std::min(1.0, std::max(-1.0, (r.trace() - 1.0) / 2.0));
  double theta = std::acos(c);
  Vec3 w(r(2, 1) - r(1, 2), r(0, 2) - r(2, 0), r(1, 0) - r(0, 1));  // 2 sin(theta) * axis

  if (theta < kSmallAngle) return 0.5 * w;
  if (theta < kPi - 1e-4) return (0.5 * theta / std::sin(theta)) * w;

  // Near pi the skew part vanishes; recover the axis from the symmetric
  // part instead. R + I = 2 axis axis^T + O(pi - theta).
  Mat3 s = 0.5 * (r + Mat3::Identity());
  int k = 0;
  if (s(1, 1) > s(k, k)) k = 1;
  if (s(2, 2) > s(k, k)) k = 2;
  Vec3 axis = s.col(k) / std::sqrt(s(k, k));
  axis.normalize();
  // Fix the sign with whatever remains of the skew part.
  if (w.dot(axis) < 0.0) axis = -axis;
  return theta * axis;
}

Pose pose_interp(const Pose& a, const Pose& b, double f) {
  Vec3 rel = rotation_log(a.rotation.transpose() * b.rotation);
  ScrewAxis step{f * rel, Vec3::Zero()};
  Pose out;
  out.rotation = a.rotation * screw_exp(step).rotation;
  out.translation = (1.0 - f) * a.translation + f * b.translation;
  return out;
}

}  // namespace desplat
