#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "kalnat/belief.hpp"
#include "kalnat/robust.hpp"

namespace kalnat::harness {

enum class OodMode { FeatureNoise, ClusterShift, LabelShuffle };
enum class OptimizerKind { Kalman, Sgd };

// Every tunable of an experiment in one place. Parsed from `key = value`
// config files and/or CLI flags of the same names; each field is
// range-validated with a per-field message.
struct ExperimentConfig {
  std::uint64_t seed = 1;

  // task
  std::uint64_t classes = 8;
  std::uint64_t shots = 16;  // per-class training pairs, one of {1,2,4,8,16}
  std::uint64_t d_in = 32;
  std::uint64_t d_embed = 16;
  std::uint64_t rank = 2;
  std::uint64_t test_per_class = 25;

  // synthetic feature geometry
  double common_scale = 30.0;     // shared offset direction magnitude
  double class_scale = 1.0;       // class centroid spread per coordinate
  double cross_modal_corr = 0.95; // image/text centroid correlation
  double noise_scale = 0.25;      // within-class sample noise
  double misalign_scale = 1.0;    // rank-`rank` frozen text-tower misalignment
  double adapter_init = 0.1;      // A-factor init scale (B starts at zero)

  // optimization
  std::uint64_t batch_size = 10;
  std::uint64_t epochs = 5;
  std::uint64_t max_steps = 0;  // 0 = run all epochs
  double q = 1e-4;
  double sigma0 = 1.0;
  double alpha = 0.1;
  double beta = 0.98;
  double epsilon = 1e-3;
  robust::RhatMethod rhat_method = robust::RhatMethod::FirstOrder;
  robust::LambdaScope lambda_scope = robust::LambdaScope::Alg1;
  belief::CovBackend backend = belief::CovBackend::Full;
  OptimizerKind optimizer = OptimizerKind::Kalman;
  double lr = 1e-3;   // first-order baseline step size
  double tau = 0.1;   // evaluation-loss temperature

  // OOD injection
  double ood_fraction = 0.0;  // one of {0,.01,.05,.10,.25,.50}
  double ood_severity = 3.0;
  OodMode ood_mode = OodMode::FeatureNoise;

  // metrics
  std::uint64_t eval_every = 0;  // 0 = evaluate accuracy only at the end

  std::size_t param_count() const noexcept {
    return 2 * rank * (d_in + d_embed);
  }
  std::uint64_t steps_per_epoch() const noexcept {
    return (classes * shots) / batch_size;
  }
  std::uint64_t total_steps() const noexcept {
    const std::uint64_t full = steps_per_epoch() * epochs;
    return max_steps == 0 ? full : std::min(full, max_steps);
  }
};

// Field registry so the file parser, CLI flags, and the summary echo stay in
// sync. Values are strings in the external representation.
struct ConfigField {
  std::string name;
  std::string doc;
};

const std::vector<ConfigField>& config_fields();

// Set one field from its string form; throws ConfigError naming the field.
void set_config_field(ExperimentConfig& cfg, const std::string& key,
                      const std::string& value);
std::string get_config_field(const ExperimentConfig& cfg,
                             const std::string& key);

// Cross-field validation (ranges, set memberships, batch feasibility).
void validate(const ExperimentConfig& cfg);

// `key = value` lines, '#' comments, unknown keys are errors. The result is
// validated before returning.
ExperimentConfig parse_config_file(const std::string& path);
ExperimentConfig parse_config_text(const std::string& text);

// Deterministic echo of every field, one `key = value` per line.
std::string format_config(const ExperimentConfig& cfg);

}  // namespace kalnat::harness
