#include "desplat/lcee.hpp"

#include <cmath>

namespace desplat {

namespace {

std::optional<Vec2> project_on_image(const Pose& pose, const Intrinsics& intr, const Vec3& mu) {
  auto proj = project(pose, intr, mu);
  if (!proj) return std::nullopt;
  const Vec2& px = proj->pixel;
  if (px.x() < 0.0 || px.x() > intr.width - 1.0 || px.y() < 0.0 || px.y() > intr.height - 1.0) {
    return std::nullopt;
  }
  return px;
}

}  // namespace

std::optional<double> displacement(const Pose& p1, const Pose& p2, const Intrinsics& intr,
                                   const Vec3& mu) {
  auto a = project_on_image(p1, intr, mu);
  if (!a) return std::nullopt;
  auto b = project_on_image(p2, intr, mu);
  if (!b) return std::nullopt;
  return (*a - *b).norm();
}

ExposureEstimate estimate_exposure(const LatentTrajectory& traj, const Pose& prev,
                                   const Pose& next, const std::vector<Vec3>& static_means,
                                   const Intrinsics& intr, double epsilon, double span_factor) {
  if (traj.poses.empty()) throw std::invalid_argument("latent trajectory is empty");
  const Pose& lat_first = traj.poses.front();
  const Pose& lat_last = traj.poses.back();

  double ratio_sum = 0.0;
  int n_usable = 0;
  for (const Vec3& mu : static_means) {
    auto d_lat = displacement(lat_first, lat_last, intr, mu);
    if (!d_lat) continue;
    auto d_nbr = displacement(prev, next, intr, mu);
    if (!d_nbr) continue;
    ratio_sum += (*d_lat + epsilon) / (*d_nbr + epsilon);
    ++n_usable;
  }
  if (n_usable == 0) throw NoUsableStatics();

  ExposureEstimate est;
  est.t_hat = span_factor * ratio_sum / n_usable;
  est.frame_index = traj.frame_index;
  est.epsilon = epsilon;
  est.n_usable = n_usable;
  return est;
}

LatentTimestamps latent_timestamps(double t, double t_hat, int n_latent) {
  if (n_latent < 1) throw std::invalid_argument("n_latent must be positive");
  LatentTimestamps out;
  out.taus.resize(n_latent);
  const int mid = (n_latent + 1) / 2;  // ceil(n/2), 1-based
  for (int k = 1; k <= n_latent; ++k) {
    out.taus[k - 1] = t + t_hat * static_cast<double>(k - mid) / n_latent;
  }
  return out;
}

}  // namespace desplat
