#include "kalnat/harness/checkpoint.hpp"

#include <cinttypes>
#include <cstdio>
#include <fstream>
#include <sstream>

#include "kalnat/harness/experiment.hpp"

namespace kalnat::harness {

namespace {

constexpr const char* kMagic = "KALNAT-CKPT v1";

void write_floats(std::ostream& out, const double* data, std::size_t n) {
  for (std::size_t i = 0; i < n; ++i) {
    if (i) out << ' ';
    out << fmt17(data[i]);
  }
  out << '\n';
}

void read_floats(std::istream& in, const char* field, double* data,
                 std::size_t n) {
  std::string line;
  if (!std::getline(in, line))
    throw CheckpointError(field, std::string("checkpoint truncated before ") +
                                     field);
  std::istringstream row(line);
  for (std::size_t i = 0; i < n; ++i) {
    if (!(row >> data[i]))
      throw CheckpointError(field, std::string("checkpoint field '") + field +
                                       "' has fewer values than expected");
  }
  double extra;
  if (row >> extra)
    throw CheckpointError(field, std::string("checkpoint field '") + field +
                                     "' has trailing values");
}

}  // namespace

void save_checkpoint(const kalman::KalmanOptimizer& opt,
                     const std::string& path) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw CheckpointError("cannot open checkpoint file '" + path + "'");
  const bool full = opt.belief.backend == belief::CovBackend::Full;
  out << kMagic << '\n';
  out << "backend=" << (full ? "Full" : "Diagonal") << " n=" << opt.belief.dim()
      << " m=" << opt.noise.obs_dim() << " step=" << opt.belief.step << '\n';
  write_floats(out, opt.belief.mean.data(), opt.belief.mean.size());
  if (full)
    write_floats(out, opt.belief.cov.data(), opt.belief.cov.size());
  else
    write_floats(out, opt.belief.cov_diag.data(), opt.belief.cov_diag.size());
  write_floats(out, opt.noise.r.data(), opt.noise.r.size());
  if (!out) throw CheckpointError("write failed for checkpoint '" + path + "'");
}

kalman::KalmanOptimizer load_checkpoint(const std::string& path,
                                        const ExperimentConfig& cfg) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw CheckpointError("cannot open checkpoint file '" + path + "'");

  std::string line;
  if (!std::getline(in, line) || line != kMagic)
    throw CheckpointError("magic", "checkpoint magic mismatch (expected '" +
                                       std::string(kMagic) + "')");

  if (!std::getline(in, line))
    throw CheckpointError("header", "checkpoint truncated before header");
  char backend_buf[16] = {0};
  std::uint64_t n = 0, m = 0, step = 0;
  if (std::sscanf(line.c_str(),
                  "backend=%15s n=%" SCNu64 " m=%" SCNu64 " step=%" SCNu64,
                  backend_buf, &n, &m, &step) != 4)
    throw CheckpointError("header", "cannot parse checkpoint header '" + line +
                                        "'");
  const std::string backend_str(backend_buf);
  belief::CovBackend backend;
  if (backend_str == "Full")
    backend = belief::CovBackend::Full;
  else if (backend_str == "Diagonal")
    backend = belief::CovBackend::Diagonal;
  else
    throw CheckpointError("backend",
                          "unknown checkpoint backend '" + backend_str + "'");

  if (backend != cfg.backend)
    throw CheckpointError(
        "backend", "checkpoint backend " + backend_str +
                       " does not match the configured backend");
  if (n != cfg.param_count())
    throw CheckpointError("n", "checkpoint n=" + std::to_string(n) +
                                   " does not match the configured model (" +
                                   std::to_string(cfg.param_count()) + ")");
  if (m != cfg.batch_size)
    throw CheckpointError("m", "checkpoint m=" + std::to_string(m) +
                                   " does not match batch_size");

  kalman::KalmanOptimizer opt;
  opt.belief.backend = backend;
  opt.belief.step = step;
  opt.belief.mean.resize(n);
  read_floats(in, "mean", opt.belief.mean.data(), n);
  if (backend == belief::CovBackend::Full) {
    opt.belief.cov = Matrix(n, n);
    read_floats(in, "cov", opt.belief.cov.data(), opt.belief.cov.size());
  } else {
    opt.belief.cov_diag.resize(n);
    read_floats(in, "cov", opt.belief.cov_diag.data(), n);
  }
  opt.noise = robust::NoiseState::init(m, cfg.beta, cfg.epsilon,
                                       cfg.rhat_method);
  read_floats(in, "R", opt.noise.r.data(), opt.noise.r.size());
  opt.process.q = cfg.q;
  opt.robust.alpha = cfg.alpha;
  opt.robust.lambda_scope = cfg.lambda_scope;

  try {
    opt.belief.validate();
  } catch (const Error& e) {
    throw CheckpointError("cov", std::string("checkpoint state invalid: ") +
                                     e.what());
  }
  if (!all_finite(opt.noise.r))
    throw CheckpointError("R", "checkpoint R contains non-finite values");
  return opt;
}

}  // namespace kalnat::harness
