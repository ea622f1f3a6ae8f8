#pragma once

#include <span>
#include <vector>

#include <Eigen/Dense>

namespace knnssd {

struct GPHyperparameters {
  double lengthscale = 1.0;
  double signal_variance = 1.0;
  double noise_variance = 0.0;
  double prior_mean = 0.0;
};

// Observations plus the factorization gp_fit stores for prediction.
struct GPState {
  std::vector<std::vector<double>> points;
  std::vector<double> values;
  GPHyperparameters hyper;

  bool fitted = false;
  double jitter = 0.0;
  Eigen::MatrixXd chol_lower;
  Eigen::VectorXd weights;  // (K + (noise + jitter) I)^-1 (y - prior_mean)
};

struct Posterior {
  double mean = 0.0;
  double variance = 0.0;
};

// Squared-exponential kernel over Euclidean distance.
double se_kernel(std::span<const double> a, std::span<const double> b,
                 const GPHyperparameters& hyper);

// Factorizes the kernel matrix, adding the smallest jitter (starting at
// 1e-10 times the signal variance) that makes it positive definite.
GPState gp_fit(GPState state);

// Works on unfitted states with zero observations (prior).
Posterior gp_posterior(const GPState& state, std::span<const double> x);

// Closed-form EI for minimization.
double expected_improvement(const Posterior& p, double best);
// Lower confidence bound, negated so that larger is better.
double confidence_bound_score(const Posterior& p, double kappa);

}  // namespace knnssd
