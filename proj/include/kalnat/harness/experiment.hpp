#pragma once

#include <optional>
#include <string>
#include <utility>

#include "kalnat/harness/dataset.hpp"
#include "kalnat/kalman.hpp"

namespace kalnat::harness {

// Exact CSV header of the per-step metrics file.
inline constexpr const char* kMetricsHeader =
    "step,loss,residual_norm,d_M,lambda,r_trace,step_norm,ood_flag";

struct RunOptions {
  std::optional<std::string> out_dir;          // write metrics.csv + summary.txt
  std::optional<std::string> resume_path;      // checkpoint to continue from
  std::optional<std::string> checkpoint_path;  // save final state here
};

struct RunResult {
  std::vector<kalman::StepReport> reports;  // one per executed step
  std::vector<std::pair<std::uint64_t, double>> accuracy_trace;
  double final_accuracy = 0.0;
  std::uint64_t steps = 0;  // global step count at exit
  bool diverged = false;
  double wall_ms = 0.0;

  // First step with traced accuracy >= threshold, or nullopt.
  std::optional<std::uint64_t> steps_to(double threshold) const;
};

// One full training run: stream epoch batches (corrupting a seeded subset at
// ood_fraction rate), run the configured optimizer, log StepReports, and
// evaluate retrieval accuracy. Divergence (non-finite loss or ||mean|| > 1e6)
// is recorded in the result, not thrown.
RunResult run_experiment(const ExperimentConfig& cfg,
                         const RunOptions& options = {});

// theta - lr * d clip_loss / d theta.
Vector sgd_baseline_step(const Vector& theta, const obs::TwoTowerModel& model,
                         const obs::Minibatch& batch, double lr, double tau);

// Fraction of held-out image embeddings whose nearest text embedding (cosine)
// carries the same class label. Embeddings are computed in chunks of
// batch_eval_size rows.
double retrieval_accuracy(const obs::TwoTowerModel& model, const Vector& theta,
                          const SyntheticDataset& testset,
                          std::size_t batch_eval_size);

// %.17g, the formatting used for every float written to metrics/summary/
// checkpoint files.
std::string fmt17(double v);

}  // namespace kalnat::harness
