#pragma once

#include <optional>

#include "desplat/types.hpp"

namespace desplat {

// Camera-to-world rigid transform: a point p_cam in the camera frame sits at
// rotation*p_cam + translation in the world. Projection therefore applies the
// inverse transform first.
struct Pose {
  Mat3 rotation = Mat3::Identity();
  Vec3 translation = Vec3::Zero();
};

struct Intrinsics {
  double fx = 0.0;
  double fy = 0.0;
  double cx = 0.0;
  double cy = 0.0;
  int width = 0;
  int height = 0;
};

// (omega; v) in R^6. omega is the rotational part in radians, v the
// translational part in world units.
struct ScrewAxis {
  Vec3 omega = Vec3::Zero();
  Vec3 v = Vec3::Zero();
};

struct ScrewAxisGrad {
  Vec3 d_omega = Vec3::Zero();
  Vec3 d_v = Vec3::Zero();
};

// Pixel position plus camera-space depth of a projected world point.
struct Projection {
  Vec2 pixel = Vec2::Zero();
  double depth = 0.0;
};

Mat3 skew(const Vec3& w);

// SE(3) exponential. Rotation by Rodrigues on omega, translation by the
// left Jacobian applied to v. Below ||omega|| = 1e-8 the trig coefficients
// switch to their second-order Taylor series so the omega -> 0 limit is
// smooth (no 0/0).
Pose screw_exp(const ScrewAxis& axis);

// Reverse-mode companion of screw_exp: given dL/d(rotation) and
// dL/d(translation) of the returned pose, accumulate dL/d(omega), dL/d(v).
ScrewAxisGrad screw_exp_backward(const ScrewAxis& axis, const Mat3& d_rotation,
                                 const Vec3& d_translation);

// Homogeneous matrix product a*b.
Pose compose(const Pose& a, const Pose& b);

Pose pose_inverse(const Pose& a);

// World point expressed in the camera frame: rotation^T * (x - translation).
Vec3 world_to_camera(const Pose& pose, const Vec3& x);

// Pinhole projection. Returns nullopt (BehindCamera) when the camera-space
// depth is at or below the near plane.
std::optional<Projection> project(const Pose& pose, const Intrinsics& intr, const Vec3& x,
                                  double near_plane = 1e-4);

// Camera placed at eye looking toward target, with image y pointing away
// from up so PNGs come out right side up.
Pose look_at(const Vec3& eye, const Vec3& target, const Vec3& up = Vec3(0, 1, 0));

// Axis-angle vector of a rotation matrix, the inverse of the rotation part
// of screw_exp. Valid for any rotation, including angles near pi.
Vec3 rotation_log(const Mat3& r);

// Geodesic rotation blend plus linear translation blend; f in [0, 1] runs
// from a to b.
Pose pose_interp(const Pose& a, const Pose& b, double f);

}  // namespace desplat
