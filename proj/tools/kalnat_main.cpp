// Experiment CLI: run / sweep / verify / bench.
#include <algorithm>
#include <chrono>
#include <cmath>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <map>
#include <optional>
#include <string>
#include <vector>

#include <CLI11.hpp>

#include "kalnat/harness/checkpoint.hpp"
#include "kalnat/harness/experiment.hpp"
#include "kalnat/kernels.hpp"
#include "kalnat/ngd.hpp"

namespace {

using kalnat::harness::ExperimentConfig;

struct ConfigCli {
  std::optional<std::string> config_path;
  std::map<std::string, std::string> overrides;

  void attach(CLI::App* app) {
    app->add_option("--config", config_path, "config file (key = value lines)");
    for (const auto& field : kalnat::harness::config_fields()) {
      const std::string name = field.name;
      app->add_option_function<std::string>(
          "--" + name,
          [this, name](const std::string& v) { overrides[name] = v; },
          field.doc);
    }
  }

  ExperimentConfig resolve() const {
    ExperimentConfig cfg;
    if (config_path) cfg = kalnat::harness::parse_config_file(*config_path);
    for (const auto& [key, value] : overrides)
      kalnat::harness::set_config_field(cfg, key, value);
    kalnat::harness::validate(cfg);
    return cfg;
  }
};

double median(std::vector<double> v) {
  std::sort(v.begin(), v.end());
  const std::size_t n = v.size();
  return n % 2 == 1 ? v[n / 2] : 0.5 * (v[n / 2 - 1] + v[n / 2]);
}

int cmd_run(const ConfigCli& cli, const std::optional<std::string>& out_dir,
            const std::optional<std::string>& resume,
            const std::optional<std::string>& save_ckpt, bool quiet,
            bool trace) {
  const ExperimentConfig cfg = cli.resolve();
  kalnat::harness::RunOptions options;
  options.out_dir = out_dir;
  options.resume_path = resume;
  options.checkpoint_path = save_ckpt;
  const kalnat::harness::RunResult res =
      kalnat::harness::run_experiment(cfg, options);
  if (trace) {
    for (const auto& [step, acc] : res.accuracy_trace)
      std::printf("trace step=%llu acc=%.4f\n",
                  static_cast<unsigned long long>(step), acc);
  }
  if (!quiet) {
    std::printf("steps=%llu final_accuracy=%.4f diverged=%s wall_ms=%.1f\n",
                static_cast<unsigned long long>(res.steps), res.final_accuracy,
                res.diverged ? "true" : "false", res.wall_ms);
  }
  return res.diverged ? 2 : 0;
}

struct SweepCell {
  std::string key;
  double value;
};

int cmd_sweep(const ConfigCli& cli, const std::string& out_dir,
              const std::vector<double>& alphas,
              const std::vector<double>& betas,
              const std::vector<double>& ood_fractions,
              const std::vector<std::uint64_t>& shots_list,
              std::uint64_t seeds) {
  const ExperimentConfig base = cli.resolve();
  std::filesystem::create_directories(out_dir);
  std::ofstream table(out_dir + "/sweep.csv", std::ios::binary);
  if (!table) {
    std::cerr << "cannot write '" << out_dir << "/sweep.csv'\n";
    return 1;
  }
  table << "alpha,beta,ood_fraction,shots,seed,final_accuracy,steps,diverged,"
           "wall_ms\n";

  auto one_axis = [](std::vector<double> v, double fallback) {
    if (v.empty()) v.push_back(fallback);
    return v;
  };
  const std::vector<double> a_axis = one_axis(alphas, base.alpha);
  const std::vector<double> b_axis = one_axis(betas, base.beta);
  const std::vector<double> o_axis = one_axis(ood_fractions, base.ood_fraction);
  std::vector<std::uint64_t> s_axis = shots_list;
  if (s_axis.empty()) s_axis.push_back(base.shots);

  // medians keyed by (alpha, ood) and by beta for the two pivot grids
  std::map<std::pair<double, double>, std::vector<double>> alpha_ood_acc;
  std::map<double, std::vector<double>> beta_acc;

  for (double a : a_axis) {
    for (double b : b_axis) {
      for (double o : o_axis) {
        for (std::uint64_t sh : s_axis) {
          for (std::uint64_t s = 0; s < seeds; ++s) {
            ExperimentConfig cfg = base;
            cfg.alpha = a;
            cfg.beta = b;
            cfg.ood_fraction = o;
            cfg.shots = sh;
            cfg.seed = base.seed + s;
            kalnat::harness::validate(cfg);
            const kalnat::harness::RunResult res =
                kalnat::harness::run_experiment(cfg, {});
            const double acc = res.diverged ? 0.0 : res.final_accuracy;
            table << kalnat::harness::fmt17(a) << ','
                  << kalnat::harness::fmt17(b) << ','
                  << kalnat::harness::fmt17(o) << ',' << sh << ',' << cfg.seed
                  << ',' << kalnat::harness::fmt17(acc) << ',' << res.steps
                  << ',' << (res.diverged ? "true" : "false") << ','
                  << kalnat::harness::fmt17(res.wall_ms) << '\n';
            alpha_ood_acc[{a, o}].push_back(acc);
            beta_acc[b].push_back(acc);
            std::printf(
                "alpha=%g beta=%g ood=%g shots=%llu seed=%llu acc=%.4f%s\n", a,
                b, o, static_cast<unsigned long long>(sh),
                static_cast<unsigned long long>(cfg.seed), acc,
                res.diverged ? " (diverged)" : "");
          }
        }
      }
    }
  }

  if (a_axis.size() > 1 || o_axis.size() > 1) {
    std::ofstream grid(out_dir + "/grid_alpha_ood.csv", std::ios::binary);
    grid << "alpha";
    for (double o : o_axis) grid << ",ood_" << o;
    grid << '\n';
    std::printf("\nmedian accuracy, alpha rows x ood_fraction columns:\n");
    for (double a : a_axis) {
      grid << kalnat::harness::fmt17(a);
      std::printf("  alpha=%-5g", a);
      for (double o : o_axis) {
        const double med = median(alpha_ood_acc[{a, o}]);
        grid << ',' << kalnat::harness::fmt17(med);
        std::printf(" %7.4f", med);
      }
      grid << '\n';
      std::printf("\n");
    }
  }
  if (b_axis.size() > 1) {
    std::ofstream grid(out_dir + "/grid_beta.csv", std::ios::binary);
    grid << "beta,median_accuracy\n";
    std::printf("\nmedian accuracy per beta:\n");
    for (double b : b_axis) {
      const double med = median(beta_acc[b]);
      grid << kalnat::harness::fmt17(b) << ','
           << kalnat::harness::fmt17(med) << '\n';
      std::printf("  beta=%-5g %7.4f\n", b, med);
    }
  }
  return 0;
}

int cmd_verify(std::size_t trials, std::uint64_t seed,
               std::uint64_t fisher_samples, std::size_t fisher_instances) {
  const kalnat::ngd::VerifySummary s = kalnat::ngd::run_verification(
      trials, seed, fisher_samples, fisher_instances);
  std::printf("trials                      %zu\n", s.trials);
  std::printf("max mean deviation          %.3e (tol 1e-8)\n", s.max_mean_dev);
  std::printf("max covariance deviation    %.3e (tol 1e-8)\n", s.max_cov_dev);
  std::printf("max precision-vs-Fisher dev %.3e (tol 1e-7)\n",
              s.max_fisher_dev);
  std::printf("max MC Fisher error (%llu)  %.3e (tol 5e-2)\n",
              static_cast<unsigned long long>(fisher_samples),
              s.max_mc_rel_err_1e5);
  std::printf("elapsed                     %.2f s\n", s.elapsed_s);
  const bool ok = s.max_mean_dev <= 1e-8 && s.max_cov_dev <= 1e-8 &&
                  s.max_fisher_dev <= 1e-7 && s.max_mc_rel_err_1e5 <= 5e-2;
  std::printf("verification %s\n", ok ? "PASS" : "FAIL");
  return ok ? 0 : 1;
}

struct BenchPoint {
  std::size_t n = 0;
  double ms_per_step = 0.0;
};

BenchPoint bench_backend(std::size_t n, kalnat::belief::CovBackend backend,
                         std::size_t batch_size, std::size_t steps,
                         std::uint64_t seed) {
  using namespace kalnat;
  harness::BenchSetup setup = harness::make_bench_setup(n, batch_size, seed);
  kalman::KalmanOptimizer opt;
  opt.belief = belief::init_belief(n, 1.0, backend);
  opt.belief.mean = setup.theta;
  opt.noise = robust::NoiseState::init(batch_size, 0.98, 1e-3,
                                       robust::RhatMethod::FirstOrder);
  opt.robust.alpha = 0.1;

  double best = 1e300;
  for (int rep = 0; rep < 3; ++rep) {
    kalman::KalmanOptimizer state = opt;
    const auto t0 = std::chrono::steady_clock::now();
    for (std::size_t t = 0; t < steps; ++t) {
      kalman::StepResult out = kalman::step(state, setup.model, setup.batch);
      state = std::move(out.opt);
    }
    const double ms = std::chrono::duration<double, std::milli>(
                          std::chrono::steady_clock::now() - t0)
                          .count() /
                      static_cast<double>(steps);
    best = std::min(best, ms);
  }
  return BenchPoint{n, best};
}

double loglog_slope(const std::vector<BenchPoint>& pts) {
  const std::size_t k = pts.size();
  double sx = 0, sy = 0, sxx = 0, sxy = 0;
  for (const BenchPoint& p : pts) {
    const double x = std::log(static_cast<double>(p.n));
    const double y = std::log(p.ms_per_step);
    sx += x;
    sy += y;
    sxx += x * x;
    sxy += x * y;
  }
  return (static_cast<double>(k) * sxy - sx * sy) /
         (static_cast<double>(k) * sxx - sx * sx);
}

int cmd_bench(const std::string& backend, std::vector<std::size_t> diag_sizes,
              std::vector<std::size_t> full_sizes, std::size_t steps,
              std::size_t batch_size, std::uint64_t seed) {
  if (diag_sizes.empty()) diag_sizes = {100, 1000, 10000};
  if (full_sizes.empty()) full_sizes = {100, 600, 2000};
  std::printf("kernel backend: %s\n",
              kalnat::kernels::backend_name(kalnat::kernels::active_backend()));
  auto run_axis = [&](const char* name, kalnat::belief::CovBackend b,
                      const std::vector<std::size_t>& sizes) {
    std::vector<BenchPoint> pts;
    for (std::size_t n : sizes) {
      const std::size_t reps =
          std::max<std::size_t>(steps, std::min<std::size_t>(200, 200000 / n));
      const BenchPoint p = bench_backend(n, b, batch_size, reps, seed);
      std::printf("%-9s n=%-7zu %10.4f ms/step\n", name, p.n, p.ms_per_step);
      pts.push_back(p);
    }
    std::printf("%-9s log-log slope %.3f\n", name, loglog_slope(pts));
  };
  if (backend == "both" || backend == "diagonal")
    run_axis("diagonal", kalnat::belief::CovBackend::Diagonal, diag_sizes);
  if (backend == "both" || backend == "full")
    run_axis("full", kalnat::belief::CovBackend::Full, full_sizes);
  return 0;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Kalman-filter optimizer experiments"};
  app.require_subcommand(1);

  // run
  auto* run = app.add_subcommand("run", "single experiment run");
  ConfigCli run_cfg;
  run_cfg.attach(run);
  std::optional<std::string> out_dir, resume, save_ckpt;
  bool quiet = false, trace = false;
  run->add_option("--out", out_dir, "output directory (metrics.csv, summary.txt)");
  run->add_option("--resume", resume, "checkpoint to continue from");
  run->add_option("--save-checkpoint", save_ckpt, "write final state here");
  run->add_flag("--quiet", quiet, "suppress the result line");
  run->add_flag("--trace", trace, "print the traced accuracy values");

  // sweep
  auto* sweep = app.add_subcommand("sweep", "cross-product grid of runs");
  ConfigCli sweep_cfg;
  sweep_cfg.attach(sweep);
  std::string sweep_out = "sweep_out";
  std::vector<double> alphas, betas, oods;
  std::vector<std::uint64_t> shots_list;
  std::uint64_t seeds = 5;
  sweep->add_option("--out", sweep_out, "output directory");
  sweep->add_option("--alphas", alphas, "alpha grid")->delimiter(',');
  sweep->add_option("--betas", betas, "beta grid")->delimiter(',');
  sweep->add_option("--ood-fractions", oods, "ood_fraction grid")
      ->delimiter(',');
  sweep->add_option("--shots-list", shots_list, "shots grid")->delimiter(',');
  sweep->add_option("--seeds", seeds, "seeds per cell (base_seed + 0..k-1)");

  // verify
  auto* verify = app.add_subcommand(
      "verify", "numerical identity checks for the update reformulation");
  std::size_t trials = 200;
  std::uint64_t vseed = 7, fisher_samples = 100000;
  std::size_t fisher_instances = 20;
  verify->add_option("--trials", trials, "random instances");
  verify->add_option("--seed", vseed, "RNG seed");
  verify->add_option("--fisher-samples", fisher_samples,
                     "Monte-Carlo sample count");
  verify->add_option("--fisher-instances", fisher_instances,
                     "instances that also run the Monte-Carlo check");

  // bench
  auto* bench =
      app.add_subcommand("bench", "per-step wall time across parameter counts");
  std::string bench_backend_opt = "both";
  std::vector<std::size_t> diag_sizes, full_sizes;
  std::size_t bench_steps = 20, bench_batch = 10;
  std::uint64_t bench_seed = 1;
  bench->add_option("--backend", bench_backend_opt, "full|diagonal|both");
  bench->add_option("--diag-sizes", diag_sizes, "diagonal n grid")
      ->delimiter(',');
  bench->add_option("--full-sizes", full_sizes, "full n grid")->delimiter(',');
  bench->add_option("--steps", bench_steps, "min steps per timing");
  bench->add_option("--batch-size", bench_batch, "observation dimension m");
  bench->add_option("--seed", bench_seed, "RNG seed");

  CLI11_PARSE(app, argc, argv);

  try {
    if (run->parsed())
      return cmd_run(run_cfg, out_dir, resume, save_ckpt, quiet, trace);
    if (sweep->parsed())
      return cmd_sweep(sweep_cfg, sweep_out, alphas, betas, oods, shots_list,
                       seeds);
    if (verify->parsed())
      return cmd_verify(trials, vseed, fisher_samples, fisher_instances);
    if (bench->parsed())
      return cmd_bench(bench_backend_opt, diag_sizes, full_sizes, bench_steps,
                       bench_batch, bench_seed);
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << '\n';
    return 1;
  }
  return 0;
}
