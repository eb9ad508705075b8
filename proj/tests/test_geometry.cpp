#include <doctest.h>

#include <cmath>
#include <numbers>

#include "desplat/geometry.hpp"
#include "desplat/rng.hpp"

using namespace desplat;

namespace {

ScrewAxis random_axis(Rng& rng, double scale) {
  ScrewAxis a;
  for (int i = 0; i < 3; ++i) {
    a.omega(i) = rng.uniform(-scale, scale);
    a.v(i) = rng.uniform(-scale, scale);
  }
  return a;
}

Pose random_pose(Rng& rng) {
  Pose p = screw_exp(random_axis(rng, 1.5));
  for (int i = 0; i < 3; ++i) p.translation(i) += rng.uniform(-2.0, 2.0);
  return p;
}

double pose_diff(const Pose& a, const Pose& b) {
  return (a.rotation - b.rotation).cwiseAbs().maxCoeff() +
         (a.translation - b.translation).cwiseAbs().maxCoeff();
}

}  // namespace

TEST_CASE("screw_exp zero axis is identity") {
  Pose p = screw_exp(ScrewAxis{});
  CHECK(pose_diff(p, Pose{}) == doctest::Approx(0.0).epsilon(1e-15));
}

TEST_CASE("screw_exp pure translation") {
  ScrewAxis a;
  a.v = Vec3(1, 2, 3);
  Pose p = screw_exp(a);
  CHECK((p.rotation - Mat3::Identity()).cwiseAbs().maxCoeff() < 1e-15);
  CHECK((p.translation - Vec3(1, 2, 3)).cwiseAbs().maxCoeff() < 1e-15);
}

TEST_CASE("screw_exp quarter turn about z matches hand-evaluated Rodrigues") {
  ScrewAxis a;
  a.omega = Vec3(0, 0, std::numbers::pi / 2);
  Pose p = screw_exp(a);
  Mat3 expected;
  expected << 0, -1, 0, 1, 0, 0, 0, 0, 1;
  CHECK((p.rotation - expected).cwiseAbs().maxCoeff() < 1e-9);
  CHECK(p.translation.norm() < 1e-12);
}

TEST_CASE("screw_exp always yields a proper rotation") {
  Rng rng(11);
  for (int trial = 0; trial < 50; ++trial) {
    Pose p = screw_exp(random_axis(rng, 2.5));
    CHECK((p.rotation.transpose() * p.rotation - Mat3::Identity()).cwiseAbs().maxCoeff() < 1e-6);
    CHECK(p.rotation.determinant() == doctest::Approx(1.0).epsilon(1e-6));
  }
}

TEST_CASE("screw_exp is continuous across the small-angle branch") {
  ScrewAxis tiny, zero;
  tiny.omega = Vec3(0, 0, 1e-9);
  tiny.v = Vec3(0.3, -0.2, 0.5);
  zero.v = tiny.v;
  CHECK(pose_diff(screw_exp(tiny), screw_exp(zero)) < 1e-7);
}

TEST_CASE("compose identities and inverses") {
  Rng rng(12);
  Pose p = random_pose(rng);
  CHECK(pose_diff(compose(p, Pose{}), p) < 1e-12);
  CHECK(pose_diff(compose(Pose{}, p), p) < 1e-12);
  CHECK(pose_diff(compose(p, pose_inverse(p)), Pose{}) < 1e-9);
  CHECK(pose_diff(compose(pose_inverse(p), p), Pose{}) < 1e-9);
}

TEST_CASE("compose is associative") {
  Rng rng(13);
  for (int trial = 0; trial < 20; ++trial) {
    Pose a = random_pose(rng), b = random_pose(rng), c = random_pose(rng);
    CHECK(pose_diff(compose(compose(a, b), c), compose(a, compose(b, c))) < 1e-9);
  }
}

TEST_CASE("project pinhole examples") {
  Intrinsics intr{100, 100, 50, 50, 101, 101};

  auto r1 = project(Pose{}, intr, Vec3(0, 0, 1));
  REQUIRE(r1.has_value());
  CHECK(r1->pixel.x() == doctest::Approx(50.0));
  CHECK(r1->pixel.y() == doctest::Approx(50.0));
  CHECK(r1->depth == doctest::Approx(1.0));

  auto r2 = project(Pose{}, intr, Vec3(0.5, 0, 1));
  REQUIRE(r2.has_value());
  CHECK(r2->pixel.x() == doctest::Approx(100.0));
  CHECK(r2->pixel.y() == doctest::Approx(50.0));

  Pose back;
  back.translation = Vec3(0, 0, -1);
  auto r3 = project(back, intr, Vec3(0, 0, 1));
  REQUIRE(r3.has_value());
  CHECK(r3->depth == doctest::Approx(2.0));
  CHECK(r3->pixel.x() == doctest::Approx(50.0));
  CHECK(r3->pixel.y() == doctest::Approx(50.0));

  CHECK(!project(Pose{}, intr, Vec3(0, 0, -1)).has_value());
  CHECK(!project(Pose{}, intr, Vec3(0, 0, 0)).has_value());
}

TEST_CASE("project is scale consistent along rays") {
  Intrinsics intr{80, 90, 32, 31, 64, 64};
  Rng rng(14);
  for (int trial = 0; trial < 20; ++trial) {
    Vec3 x(rng.uniform(-1, 1), rng.uniform(-1, 1), rng.uniform(0.5, 3.0));
    double lam = rng.uniform(0.5, 4.0);
    auto a = project(Pose{}, intr, x);
    auto b = project(Pose{}, intr, lam * x);
    REQUIRE(a.has_value());
    REQUIRE(b.has_value());
    CHECK((a->pixel - b->pixel).norm() < 1e-9);
  }
}

TEST_CASE("pose_inverse examples") {
  CHECK(pose_diff(pose_inverse(Pose{}), Pose{}) < 1e-15);
  Pose t;
  t.translation = Vec3(1, -2, 3);
  CHECK((pose_inverse(t).translation + Vec3(1, -2, 3)).norm() < 1e-15);
}

TEST_CASE("screw_exp_backward matches central differences") {
  Rng rng(15);
  for (double scale : {1.5, 1e-2, 1e-6}) {
    ScrewAxis axis = random_axis(rng, scale);
    // Random linear functional of the output pose.
    Mat3 g_r;
    Vec3 g_t;
    for (int i = 0; i < 3; ++i) {
      g_t(i) = rng.normal();
      for (int j = 0; j < 3; ++j) g_r(i, j) = rng.normal();
    }
    auto loss = [&](const ScrewAxis& a) {
      Pose p = screw_exp(a);
      return g_r.cwiseProduct(p.rotation).sum() + g_t.dot(p.translation);
    };
    ScrewAxisGrad grad = screw_exp_backward(axis, g_r, g_t);

    const double h = 1e-6;
    for (int i = 0; i < 6; ++i) {
      ScrewAxis hi = axis, lo = axis;
      double* hp = i < 3 ? &hi.omega(i) : &hi.v(i - 3);
      double* lp = i < 3 ? &lo.omega(i) : &lo.v(i - 3);
      *hp += h;
      *lp -= h;
      double numeric = (loss(hi) - loss(lo)) / (2 * h);
      double analytic = i < 3 ? grad.d_omega(i) : grad.d_v(i - 3);
      double denom = std::max({std::abs(numeric), std::abs(analytic), 1e-6});
      CHECK(std::abs(numeric - analytic) / denom < 1e-6);
    }
  }
}

TEST_CASE("look_at faces the target") {
  Pose p = look_at(Vec3(0, 0, -5), Vec3(0, 0, 0));
  CHECK((p.rotation.transpose() * p.rotation - Mat3::Identity()).cwiseAbs().maxCoeff() < 1e-12);
  CHECK(p.rotation.determinant() == doctest::Approx(1.0));
  Vec3 cam = world_to_camera(p, Vec3(0, 0, 0));
  CHECK(cam.x() == doctest::Approx(0.0));
  CHECK(cam.y() == doctest::Approx(0.0));
  CHECK(cam.z() == doctest::Approx(5.0));
  // A point above the target lands at negative camera y (upper image half).
  CHECK(world_to_camera(p, Vec3(0, 1, 0)).y() < 0.0);
}

TEST_CASE("rotation_log inverts the rotation exponential") {
  Rng rng(64);
  for (int trial = 0; trial < 40; ++trial) {
    Vec3 w(rng.normal(), rng.normal(), rng.normal());
    double theta = rng.uniform(1e-6, 3.1);
    w = w.normalized() * theta;
    Mat3 r = screw_exp(ScrewAxis{w, Vec3::Zero()}).rotation;
    CHECK((rotation_log(r) - w).norm() < 1e-8 * std::max(1.0, theta));
  }
  CHECK(rotation_log(Mat3::Identity()).norm() == 0.0);

  // Half-turn rotations exercise the near-pi branch.
  for (Vec3 axis : {Vec3(1, 0, 0), Vec3(0, 1, 0), Vec3(0.6, -0.48, 0.64)}) {
    axis.normalize();
    Mat3 r = screw_exp(ScrewAxis{axis * (3.14159265358979323846 - 1e-7), Vec3::Zero()}).rotation;
    Vec3 back = rotation_log(r);
    CHECK(std::abs(back.norm() - (3.14159265358979323846 - 1e-7)) < 1e-5);
    CHECK(std::abs(std::abs(back.normalized().dot(axis)) - 1.0) < 1e-6);
  }
}

TEST_CASE("pose_interp hits its endpoints and stays on the geodesic") {
  Pose a = look_at(Vec3(0, 0, -5), Vec3(0, 0, 0));
  Pose b = look_at(Vec3(0.4, 0.3, -4.8), Vec3(0.1, 0, 0));

  Pose p0 = pose_interp(a, b, 0.0);
  CHECK((p0.rotation - a.rotation).norm() < 1e-12);
  CHECK((p0.translation - a.translation).norm() < 1e-12);
  Pose p1 = pose_interp(a, b, 1.0);
  CHECK((p1.rotation - b.rotation).norm() < 1e-10);
  CHECK((p1.translation - b.translation).norm() < 1e-12);

  // The midpoint rotation is equidistant from both ends.
  Pose mid = pose_interp(a, b, 0.5);
  double da = rotation_log(a.rotation.transpose() * mid.rotation).norm();
  double db = rotation_log(mid.rotation.transpose() * b.rotation).norm();
  CHECK(da == doctest::Approx(db).epsilon(1e-9));
  CHECK((mid.rotation.transpose() * mid.rotation - Mat3::Identity()).norm() < 1e-12);
}
