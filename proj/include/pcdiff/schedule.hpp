#pragma once

#include <cmath>
#include <stdexcept>

#include <Eigen/Core>

#include "pcdiff/geometry.hpp"

namespace pcdiff {

/// Reverse-process variance choice: sigma_t^2 = beta_t, or the posterior
/// variance beta~_t = (1 - abar_{t-1}) / (1 - abar_t) * beta_t.
enum class ReverseVariance { kBeta, kBetaTilde };

/// Per-step noise schedule tables. t is 1-based in the public API; tables are
/// stored 0-based (index t-1).
template <class Scalar>
struct NoiseScheduleT {
  Eigen::Vector<Scalar, Eigen::Dynamic> betas;
  Eigen::Vector<Scalar, Eigen::Dynamic> alphas;      // 1 - beta
  Eigen::Vector<Scalar, Eigen::Dynamic> alpha_bars;  // running product of alphas
  Eigen::Vector<Scalar, Eigen::Dynamic> sigma_sq;    // reverse-step variance

  int steps() const { return static_cast<int>(betas.size()); }

  Scalar beta(int t) const { return betas(check(t) - 1); }
  Scalar alpha(int t) const { return alphas(check(t) - 1); }
  Scalar alpha_bar(int t) const { return alpha_bars(check(t) - 1); }
  Scalar sigma(int t) const { return std::sqrt(sigma_sq(check(t) - 1)); }

  int check(int t) const {
    if (t < 1 || t > steps())
      throw std::out_of_range("schedule: timestep " + std::to_string(t) +
                              " outside [1, " + std::to_string(steps()) + "]");
    return t;
  }
};

using NoiseSchedule = NoiseScheduleT<double>;

/// N x 3 standard-normal draw paired with a cloud of the same size.
using NoiseSample = Eigen::Matrix<double, Eigen::Dynamic, 3>;

/// Linear beta schedule with a quadratic warmup ramp. The first
/// ceil(warmup_fraction * T) steps ramp quadratically from beta_start up to
/// the linear envelope; the remainder follows the linear envelope, reaching
/// beta_end exactly at t = T. warmup_fraction = 0 gives the plain linear
/// schedule.
template <class Scalar>
NoiseScheduleT<Scalar> build_schedule(int steps, Scalar beta_start, Scalar beta_end,
                                      Scalar warmup_fraction,
                                      ReverseVariance variance = ReverseVariance::kBeta) {
  if (steps < 1) throw std::invalid_argument("build_schedule: T must be >= 1");
  if (!(beta_start > Scalar(0)) || !(beta_start <= beta_end) || !(beta_end < Scalar(1)))
    throw std::invalid_argument(
        "build_schedule: need 0 < beta_start <= beta_end < 1");
  if (!(warmup_fraction >= Scalar(0)) || !(warmup_fraction < Scalar(1)))
    throw std::invalid_argument("build_schedule: warmup_fraction outside [0, 1)");

  NoiseScheduleT<Scalar> sched;
  sched.betas.resize(steps);
  const auto linear = [&](int t) -> Scalar {
    if (steps == 1) return beta_end;
    return beta_start + (beta_end - beta_start) * Scalar(t - 1) / Scalar(steps - 1);
  };
  const int warmup_steps = static_cast<int>(
      std::ceil(static_cast<double>(warmup_fraction) * steps));
  for (int t = 1; t <= steps; ++t) {
    if (t <= warmup_steps && warmup_steps >= 2) {
      const Scalar s = Scalar(t - 1) / Scalar(warmup_steps - 1);
      sched.betas(t - 1) = beta_start + (linear(warmup_steps) - beta_start) * s * s;
    } else {
      sched.betas(t - 1) = linear(t);
    }
  }

  sched.alphas = Scalar(1) - sched.betas.array();
  sched.alpha_bars.resize(steps);
  Scalar running = Scalar(1);
  for (int t = 0; t < steps; ++t) {
    running *= sched.alphas(t);
    sched.alpha_bars(t) = running;
  }

  sched.sigma_sq.resize(steps);
  for (int t = 0; t < steps; ++t) {
    if (variance == ReverseVariance::kBeta) {
      sched.sigma_sq(t) = sched.betas(t);
    } else {
      const Scalar abar_prev = t == 0 ? Scalar(1) : sched.alpha_bars(t - 1);
      sched.sigma_sq(t) =
          (Scalar(1) - abar_prev) / (Scalar(1) - sched.alpha_bars(t)) * sched.betas(t);
    }
  }
  return sched;
}

/// q(x_t | x_0): sqrt(abar_t) x0 + sqrt(1 - abar_t) eps, elementwise over all
/// 3N coordinates.
template <class Scalar, class DerivedX, class DerivedE>
Eigen::Matrix<Scalar, Eigen::Dynamic, 3> forward_diffuse(
    const Eigen::MatrixBase<DerivedX>& x0, int t, const Eigen::MatrixBase<DerivedE>& eps,
    const NoiseScheduleT<Scalar>& sched) {
  if (eps.rows() != x0.rows() || eps.cols() != x0.cols())
    throw std::invalid_argument("forward_diffuse: noise shape mismatch");
  const Scalar abar = sched.alpha_bar(t);
  return std::sqrt(abar) * x0 + std::sqrt(Scalar(1) - abar) * eps;
}

template <class Scalar>
PointCloudT<Scalar> forward_diffuse(const PointCloudT<Scalar>& x0, int t,
                                    const Eigen::Matrix<Scalar, Eigen::Dynamic, 3>& eps,
                                    const NoiseScheduleT<Scalar>& sched) {
  PointCloudT<Scalar> out;
  out.positions = forward_diffuse(x0.positions, t, eps, sched);
  return out;
}

/// One ancestral reverse step: mu = (x_t - beta_t / sqrt(1 - abar_t) * eps_hat)
/// / sqrt(alpha_t), then mu + sigma_t z. z is forced to zero at t = 1 so the
/// final sample is the predicted mean.
template <class Scalar, class DerivedX, class DerivedE, class DerivedZ>
Eigen::Matrix<Scalar, Eigen::Dynamic, 3> reverse_step(
    const Eigen::MatrixBase<DerivedX>& x_t, const Eigen::MatrixBase<DerivedE>& eps_hat,
    int t, const Eigen::MatrixBase<DerivedZ>& z, const NoiseScheduleT<Scalar>& sched) {
  if (eps_hat.rows() != x_t.rows() || eps_hat.cols() != x_t.cols())
    throw std::invalid_argument("reverse_step: eps_hat shape mismatch");
  const Scalar abar = sched.alpha_bar(t);
  const Scalar beta = sched.beta(t);
  const Scalar alpha = sched.alpha(t);
  Eigen::Matrix<Scalar, Eigen::Dynamic, 3> mean =
      (x_t - (beta / std::sqrt(Scalar(1) - abar)) * eps_hat) / std::sqrt(alpha);
  if (t > 1) {
    if (z.rows() != x_t.rows() || z.cols() != x_t.cols())
      throw std::invalid_argument("reverse_step: z shape mismatch");
    mean += sched.sigma(t) * z;
  }
  return mean;
}

template <class Scalar>
PointCloudT<Scalar> reverse_step(const PointCloudT<Scalar>& x_t,
                                 const Eigen::Matrix<Scalar, Eigen::Dynamic, 3>& eps_hat,
                                 int t, const Eigen::Matrix<Scalar, Eigen::Dynamic, 3>& z,
                                 const NoiseScheduleT<Scalar>& sched) {
  PointCloudT<Scalar> out;
  out.positions = reverse_step(x_t.positions, eps_hat, t, z, sched);
  return out;
}

}  // namespace pcdiff
