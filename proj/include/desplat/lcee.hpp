#pragma once

#include <optional>
#include <stdexcept>
#include <vector>

#include "desplat/blce.hpp"
#include "desplat/geometry.hpp"

namespace desplat {

struct ExposureEstimate {
  double t_hat = 0.0;  // latent exposure in inter-frame intervals
  int frame_index = 0;
  double epsilon = 0.0;
  int n_usable = 0;
};

struct LatentTimestamps {
  std::vector<double> taus;
};

struct NoUsableStatics : std::runtime_error {
  NoUsableStatics() : std::runtime_error("no static gaussian projects validly in all poses") {}
};

// ||W(p1, mu) - W(p2, mu)||, the screen-space travel of a world point
// between two cameras. nullopt when the point is behind either camera or
// lands outside the image in either view.
std::optional<double> displacement(const Pose& p1, const Pose& p2, const Intrinsics& intr,
                                   const Vec3& mu);

// Average displacement ratio of the latent trajectory span against the
// neighbor-pose span. span_factor converts the neighbor interval into
// per-frame units: 2 when prev/next are t-1 and t+1, 1 for the one-sided
// spans used at the sequence ends. Statics that fail to project in any of
// the four poses are left out of the average.
ExposureEstimate estimate_exposure(const LatentTrajectory& traj, const Pose& prev,
                                   const Pose& next, const std::vector<Vec3>& static_means,
                                   const Intrinsics& intr, double epsilon = 1e-6,
                                   double span_factor = 2.0);

// tau_k = t + t_hat * (k - ceil(N_l/2)) / N_l for k = 1..N_l. The middle
// timestamp is exactly t.
LatentTimestamps latent_timestamps(double t, double t_hat, int n_latent);

}  // namespace desplat
