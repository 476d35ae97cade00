#pragma once

#include <string>

#include "kalnat/harness/config.hpp"
#include "kalnat/kalman.hpp"

namespace kalnat::harness {

// Text checkpoint, byte-stable across save -> load -> save:
//   line 1: KALNAT-CKPT v1
//   line 2: backend=<Full|Diagonal> n=<int> m=<int> step=<int>
//   line 3: mean (n floats, %.17g, space-separated)
//   line 4: covariance (n*n floats for Full, n for Diagonal)
//   line 5: R (m*m floats)
void save_checkpoint(const kalman::KalmanOptimizer& opt,
                     const std::string& path);

// Rebuilds the optimizer state; beta/epsilon/method/alpha/q/scope come from
// the config, which must agree with the checkpoint on backend, n and m.
kalman::KalmanOptimizer load_checkpoint(const std::string& path,
                                        const ExperimentConfig& cfg);

}  // namespace kalnat::harness
