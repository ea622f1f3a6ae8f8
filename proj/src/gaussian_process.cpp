#include "knnssd/gaussian_process.hpp"

#include <cmath>

#include "knnssd/types.hpp"

namespace knnssd {

double se_kernel(std::span<const double> a, std::span<const double> b,
                 const GPHyperparameters& hyper) {
  double sq = 0.0;
  for (std::size_t i = 0; i < a.size(); ++i) {
    const double d = a[i] - b[i];
    sq += d * d;
  }
  return hyper.signal_variance * std::exp(-0.5 * sq / (hyper.lengthscale * hyper.lengthscale));
}

GPState gp_fit(GPState state) {
  const std::size_t n = state.points.size();
  if (n == 0) throw ValidationError("gp_fit needs at least one observation");
  if (state.values.size() != n) throw ValidationError("gp_fit: points/values size mismatch");
  if (!(state.hyper.lengthscale > 0.0) || !(state.hyper.signal_variance > 0.0) ||
      state.hyper.noise_variance < 0.0) {
    throw ValidationError("gp_fit: invalid hyperparameters");
  }
  for (double v : state.values) {
    if (!std::isfinite(v)) throw ValidationError("gp_fit: non-finite observation");
  }

  Eigen::MatrixXd k(n, n);
  for (std::size_t i = 0; i < n; ++i) {
    for (std::size_t j = 0; j <= i; ++j) {
      const double v = se_kernel(state.points[i], state.points[j], state.hyper);
      k(static_cast<Eigen::Index>(i), static_cast<Eigen::Index>(j)) = v;
      k(static_cast<Eigen::Index>(j), static_cast<Eigen::Index>(i)) = v;
    }
  }
  Eigen::VectorXd centered(n);
  for (std::size_t i = 0; i < n; ++i) {
    centered(static_cast<Eigen::Index>(i)) = state.values[i] - state.hyper.prior_mean;
  }

  double jitter = 1e-10 * state.hyper.signal_variance;
  for (int attempt = 0; attempt < 12; ++attempt, jitter *= 10.0) {
    Eigen::MatrixXd kn = k;
    kn.diagonal().array() += state.hyper.noise_variance + jitter;
    Eigen::LLT<Eigen::MatrixXd> llt(kn);
    if (llt.info() == Eigen::Success) {
      state.chol_lower = llt.matrixL();
      state.weights = llt.solve(centered);
      state.jitter = jitter;
      state.fitted = true;
      return state;
    }
  }
  throw ValidationError("gp_fit: kernel matrix is not positive definite");
}

Posterior gp_posterior(const GPState& state, std::span<const double> x) {
  Posterior p{state.hyper.prior_mean, state.hyper.signal_variance};
  if (state.points.empty()) return p;
  if (!state.fitted) throw ValidationError("gp_posterior: state is not fitted");
  const auto n = static_cast<Eigen::Index>(state.points.size());
  Eigen::VectorXd ks(n);
  for (Eigen::Index i = 0; i < n; ++i) {
    ks(i) = se_kernel(state.points[static_cast<std::size_t>(i)], x, state.hyper);
  }
  p.mean += ks.dot(state.weights);
  const Eigen::VectorXd v = state.chol_lower.triangularView<Eigen::Lower>().solve(ks);
  p.variance = std::max(0.0, state.hyper.signal_variance - v.squaredNorm());
  return p;
}

double expected_improvement(const Posterior& p, double best) {
  const double sigma = std::sqrt(p.variance);
  const double gain = best - p.mean;
  if (sigma <= 1e-12) return std::max(gain, 0.0);
  const double z = gain / sigma;
  const double cdf = 0.5 * std::erfc(-z / std::sqrt(2.0));
  const double pdf = std::exp(-0.5 * z * z) / std::sqrt(2.0 * M_PI);
  return std::max(0.0, gain * cdf + sigma * pdf);
}

double confidence_bound_score(const Posterior& p, double kappa) {
  return -(p.mean - kappa * std::sqrt(p.variance));
}

}  // namespace knnssd
