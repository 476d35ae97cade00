#include "kalnat/harness/experiment.hpp"

#include <chrono>
#include <cmath>
#include <cstdio>
#include <filesystem>
#include <fstream>

#include "kalnat/harness/checkpoint.hpp"
#include "kalnat/kernels.hpp"

namespace kalnat::harness {

namespace {

constexpr double kDivergenceNorm = 1e6;
constexpr std::size_t kDefaultEvalChunk = 64;

std::uint64_t derive_seed(std::uint64_t seed, Stream purpose,
                          std::uint64_t index) {
  return substream(seed, purpose, index)();
}

void write_report_row(std::ofstream& out, std::uint64_t step,
                      const kalman::StepReport& r) {
  out << step << ',' << fmt17(r.loss) << ',' << fmt17(r.residual_norm) << ','
      << fmt17(r.d_m) << ',' << fmt17(r.lambda) << ',' << fmt17(r.r_trace)
      << ',' << fmt17(r.step_norm) << ',' << fmt17(r.ood_fraction) << '\n';
}

Matrix normalized_rows(const Matrix& m) {
  Matrix out = m;
  for (std::size_t i = 0; i < out.rows(); ++i) {
    const double n =
        std::sqrt(kernels::dot(out.row(i), out.row(i), out.cols()));
    if (!(n > 0.0) || !std::isfinite(n))
      throw DegenerateInput(i, "zero-norm embedding in accuracy evaluation");
    kernels::scale(1.0 / n, out.row(i), out.cols());
  }
  return out;
}

Matrix embed_chunked(const obs::TwoTowerModel& model, const Matrix& feats,
                     const Vector& theta, std::size_t chunk, bool image_side) {
  Matrix out(feats.rows(), model.d_embed());
  for (std::size_t at = 0; at < feats.rows(); at += chunk) {
    const std::size_t take = std::min(chunk, feats.rows() - at);
    Matrix part(take, feats.cols());
    for (std::size_t i = 0; i < take; ++i)
      std::copy_n(feats.row(at + i), feats.cols(), part.row(i));
    const Matrix emb = image_side ? obs::embed_images(model, part, theta)
                                  : obs::embed_texts(model, part, theta);
    for (std::size_t i = 0; i < take; ++i)
      std::copy_n(emb.row(i), emb.cols(), out.row(at + i));
  }
  return out;
}

}  // namespace

std::string fmt17(double v) {
  char buf[40];
  std::snprintf(buf, sizeof(buf), "%.17g", v);
  return buf;
}

std::optional<std::uint64_t> RunResult::steps_to(double threshold) const {
  for (const auto& [step, acc] : accuracy_trace)
    if (acc >= threshold) return step;
  return std::nullopt;
}

Vector sgd_baseline_step(const Vector& theta, const obs::TwoTowerModel& model,
                         const obs::Minibatch& batch, double lr, double tau) {
  if (!(lr >= 0.0))
    throw InvalidArgument("sgd_baseline_step: lr must be >= 0");
  const Vector grad = obs::clip_loss_gradient(model, batch, theta, tau);
  Vector out = theta;
  kernels::axpy(-lr, grad.data(), out.data(), out.size());
  return out;
}

double retrieval_accuracy(const obs::TwoTowerModel& model, const Vector& theta,
                          const SyntheticDataset& testset,
                          std::size_t batch_eval_size) {
  if (testset.test_size() == 0)
    throw InvalidArgument("retrieval_accuracy: empty test set");
  if (batch_eval_size < 1)
    throw InvalidArgument("retrieval_accuracy: batch_eval_size must be >= 1");
  const Matrix img = normalized_rows(
      embed_chunked(model, testset.test_image, theta, batch_eval_size, true));
  const Matrix txt = normalized_rows(
      embed_chunked(model, testset.test_text, theta, batch_eval_size, false));
  std::size_t correct = 0;
  for (std::size_t i = 0; i < img.rows(); ++i) {
    std::size_t best = 0;
    double best_score = -2.0;
    for (std::size_t j = 0; j < txt.rows(); ++j) {
      const double s = kernels::dot(img.row(i), txt.row(j), img.cols());
      if (s > best_score) {
        best_score = s;
        best = j;
      }
    }
    if (testset.test_labels[i] == testset.test_labels[best]) ++correct;
  }
  return static_cast<double>(correct) / static_cast<double>(img.rows());
}

RunResult run_experiment(const ExperimentConfig& cfg,
                         const RunOptions& options) {
  validate(cfg);
  const auto t0 = std::chrono::steady_clock::now();

  const SyntheticDataset dataset = gen_synthetic_pairs(cfg);
  const obs::TwoTowerModel model = make_model(cfg, dataset);
  const std::size_t n = model.param_count();
  const Vector theta0 = obs::init_theta(
      model, cfg.adapter_init, derive_seed(cfg.seed, Stream::Theta, 0));

  const bool use_kalman = cfg.optimizer == OptimizerKind::Kalman;
  kalman::KalmanOptimizer opt;
  Vector theta;  // baseline parameters
  std::uint64_t start_step = 0;

  if (use_kalman) {
    if (options.resume_path) {
      opt = load_checkpoint(*options.resume_path, cfg);
      start_step = opt.belief.step;
    } else {
      opt.belief = belief::init_belief(n, cfg.sigma0, cfg.backend);
      opt.belief.mean = theta0;
      opt.noise = robust::NoiseState::init(cfg.batch_size, cfg.beta,
                                           cfg.epsilon, cfg.rhat_method);
      opt.process.q = cfg.q;
      opt.robust.alpha = cfg.alpha;
      opt.robust.lambda_scope = cfg.lambda_scope;
    }
  } else {
    if (options.resume_path)
      throw ConfigError("optimizer",
                        "resume is only supported for the kalman optimizer");
    theta = theta0;
  }

  std::ofstream metrics;
  std::string metrics_path;
  if (options.out_dir) {
    std::filesystem::create_directories(*options.out_dir);
    metrics_path = *options.out_dir + "/metrics.csv";
    metrics.open(metrics_path, std::ios::binary);
    if (!metrics) throw Error("cannot write '" + metrics_path + "'");
    metrics << kMetricsHeader << '\n';
  }

  RunResult res;
  res.steps = start_step;
  const std::uint64_t total = cfg.total_steps();
  const std::uint64_t spe = cfg.steps_per_epoch();

  std::uint64_t cached_epoch = ~0ULL;
  std::vector<std::vector<std::size_t>> batches;

  auto current_params = [&]() -> const Vector& {
    return use_kalman ? opt.belief.mean : theta;
  };

  for (std::uint64_t t = start_step + 1; t <= total; ++t) {
    const std::uint64_t epoch = (t - 1) / spe;
    if (epoch != cached_epoch) {
      batches = epoch_batches(dataset.train_size(), cfg.batch_size, cfg.seed,
                              epoch);
      cached_epoch = epoch;
    }
    obs::Minibatch batch = make_batch(dataset, batches[(t - 1) % spe]);

    std::uniform_real_distribution<double> unif(0.0, 1.0);
    std::mt19937_64 ood_rng = substream(cfg.seed, Stream::OodDecision, t);
    if (unif(ood_rng) < cfg.ood_fraction) {
      batch = corrupt_batch(batch, cfg.ood_severity, cfg.ood_mode,
                            derive_seed(cfg.seed, Stream::Corruption, t));
    }

    kalman::StepReport rep;
    try {
      if (use_kalman) {
        kalman::StepResult out = kalman::step(opt, model, batch);
        opt = std::move(out.opt);
        rep = out.report;
      } else {
        const Matrix s = obs::similarity(model, batch, theta);
        Vector yhat(batch.size());
        for (std::size_t i = 0; i < batch.size(); ++i) yhat[i] = s(i, i);
        const Vector r = obs::target_output(batch.size()) - yhat;
        const Vector next =
            sgd_baseline_step(theta, model, batch, cfg.lr, cfg.tau);
        rep.residual_norm = norm2(r);
        rep.loss = obs::clip_loss(s, cfg.tau);
        rep.step_norm = norm2(next - theta);
        rep.d_m = 0.0;
        rep.lambda = 1.0;
        rep.r_trace = 0.0;
        rep.ood_fraction = batch.ood_fraction();
        theta = next;
      }
    } catch (const Error&) {
      res.diverged = true;
      break;
    }

    if (!rep.finite()) {
      res.diverged = true;
      break;
    }
    res.reports.push_back(rep);
    res.steps = t;
    if (metrics.is_open()) write_report_row(metrics, t, rep);

    if (norm2(current_params()) > kDivergenceNorm) {
      res.diverged = true;
      break;
    }
    if (cfg.eval_every > 0 && t % cfg.eval_every == 0) {
      res.accuracy_trace.emplace_back(
          t, retrieval_accuracy(model, current_params(), dataset,
                                kDefaultEvalChunk));
    }
  }

  if (!res.diverged) {
    res.final_accuracy =
        retrieval_accuracy(model, current_params(), dataset, kDefaultEvalChunk);
  }
  res.wall_ms = std::chrono::duration<double, std::milli>(
                    std::chrono::steady_clock::now() - t0)
                    .count();

  if (metrics.is_open()) {
    metrics.flush();
    if (!metrics) throw Error("cannot write '" + metrics_path + "'");
  }
  if (options.checkpoint_path) {
    if (!use_kalman)
      throw ConfigError("optimizer",
                        "checkpoints are only supported for the kalman optimizer");
    save_checkpoint(opt, *options.checkpoint_path);
  }
  if (options.out_dir) {
    const std::string summary_path = *options.out_dir + "/summary.txt";
    std::ofstream summary(summary_path, std::ios::binary);
    if (!summary) throw Error("cannot write '" + summary_path + "'");
    summary << "# retrieval accuracy = fraction of held-out images whose "
               "nearest text embedding (cosine) shares the class label\n";
    summary << format_config(cfg);
    summary << "final_accuracy = " << fmt17(res.final_accuracy) << '\n';
    summary << "steps = " << res.steps << '\n';
    summary << "diverged = " << (res.diverged ? "true" : "false") << '\n';
    summary << "wall_ms = " << fmt17(res.wall_ms) << '\n';
    if (!summary) throw Error("cannot write '" + summary_path + "'");
  }
  return res;
}

}  // namespace kalnat::harness
