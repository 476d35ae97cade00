#pragma once

#include "kalnat/belief.hpp"
#include "kalnat/obsmodel.hpp"
#include "kalnat/robust.hpp"

namespace kalnat::kalman {

// One optimizer step's record: the unit of metrics logging.
struct StepReport {
  double residual_norm = 0.0;
  double d_m = 0.0;
  double lambda = 1.0;
  double loss = 0.0;
  double r_trace = 0.0;
  double step_norm = 0.0;
  double ood_fraction = 0.0;

  bool finite() const;
};

// The full optimizer state: parameter belief, observation-noise state, process
// noise, and the regulation configuration. Single-writer: step() takes the
// current state and returns the successor, leaving the input untouched on
// failure.
struct KalmanOptimizer {
  belief::GaussianBelief belief;
  robust::NoiseState noise;
  belief::ProcessNoise process;
  robust::RobustConfig robust;
};

// Prediction: mean unchanged, covariance inflated by q (per entry for the
// diagonal backend). The step counter advances in update(), not here.
belief::GaussianBelief predict(const belief::GaussianBelief& b,
                               const belief::ProcessNoise& process);

// Kalman gain K = Sigma H^T (H Sigma H^T + R)^{-1}, n x m, computed through an
// m x m SPD solve — never an n x n inversion.
Matrix gain(const belief::GaussianBelief& prior, const Matrix& h,
            const Matrix& r);

// Measurement update: mean += lam * K * residual; covariance loses K H Sigma
// (scaled by lam only under LambdaScope::TextIVD), then is symmetrized and
// diagonal-floored. step increments by one.
belief::GaussianBelief update(const belief::GaussianBelief& prior,
                              const Matrix& h, const Vector& residual,
                              const Matrix& r, double lam,
                              robust::LambdaScope scope);

struct StepResult {
  KalmanOptimizer opt;
  StepReport report;
};

// One full pass of the algorithm: predict -> evaluate model and Jacobian at
// the predicted mean -> Mahalanobis distance and regulation term against the
// previous R -> noise EMA -> gain/update. Errors from any stage propagate and
// leave the caller's optimizer unchanged.
StepResult step(const KalmanOptimizer& opt, const obs::TwoTowerModel& model,
                const obs::Minibatch& batch);

// Diagonal-backend specialization: identical contract to step() with the
// covariance held as n variances; per-step cost O(m^2 n + m^3), memory
// O(n + m^2). Throws InvalidArgument when the belief is not Diagonal.
StepResult diag_step(const KalmanOptimizer& opt,
                     const obs::TwoTowerModel& model,
                     const obs::Minibatch& batch);

}  // namespace kalnat::kalman
