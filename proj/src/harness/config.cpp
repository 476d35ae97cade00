#include "kalnat/harness/config.hpp"

#include <cctype>
#include <charconv>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <functional>
#include <map>
#include <sstream>

namespace kalnat::harness {

namespace {

std::string fmt_double(double v) {
  char buf[40];
  std::snprintf(buf, sizeof(buf), "%.17g", v);
  return buf;
}

double parse_double(const std::string& key, const std::string& value) {
  try {
    std::size_t pos = 0;
    const double v = std::stod(value, &pos);
    if (pos != value.size()) throw std::invalid_argument("trailing characters");
    return v;
  } catch (const std::exception&) {
    throw ConfigError(key, key + ": cannot parse '" + value + "' as a number");
  }
}

std::uint64_t parse_uint(const std::string& key, const std::string& value) {
  std::uint64_t v = 0;
  const auto [p, ec] =
      std::from_chars(value.data(), value.data() + value.size(), v);
  if (ec != std::errc() || p != value.data() + value.size())
    throw ConfigError(key,
                      key + ": cannot parse '" + value + "' as an integer");
  return v;
}

struct FieldOps {
  std::string doc;
  std::function<void(ExperimentConfig&, const std::string&)> set;
  std::function<std::string(const ExperimentConfig&)> get;
};

using FieldMap = std::vector<std::pair<std::string, FieldOps>>;

const FieldMap& field_map() {
  static const FieldMap fields = [] {
    FieldMap f;
    auto add_u64 = [&f](const char* name, std::uint64_t ExperimentConfig::*mem,
                        const char* doc) {
      f.push_back({name,
                   {doc,
                    [name, mem](ExperimentConfig& c, const std::string& v) {
                      c.*mem = parse_uint(name, v);
                    },
                    [mem](const ExperimentConfig& c) {
                      return std::to_string(c.*mem);
                    }}});
    };
    auto add_dbl = [&f](const char* name, double ExperimentConfig::*mem,
                        const char* doc) {
      f.push_back({name,
                   {doc,
                    [name, mem](ExperimentConfig& c, const std::string& v) {
                      c.*mem = parse_double(name, v);
                    },
                    [mem](const ExperimentConfig& c) {
                      return fmt_double(c.*mem);
                    }}});
    };

    add_u64("seed", &ExperimentConfig::seed, "RNG seed for the whole run");
    add_u64("classes", &ExperimentConfig::classes, "number of classes C");
    add_u64("shots", &ExperimentConfig::shots,
            "training pairs per class, one of {1,2,4,8,16}");
    add_u64("d_in", &ExperimentConfig::d_in, "backbone feature dimension");
    add_u64("d_embed", &ExperimentConfig::d_embed, "embedding dimension");
    add_u64("rank", &ExperimentConfig::rank, "adapter rank r");
    add_u64("test_per_class", &ExperimentConfig::test_per_class,
            "held-out pairs per class");
    add_dbl("common_scale", &ExperimentConfig::common_scale,
            "shared feature offset magnitude");
    add_dbl("class_scale", &ExperimentConfig::class_scale,
            "class centroid spread");
    add_dbl("cross_modal_corr", &ExperimentConfig::cross_modal_corr,
            "image/text centroid correlation in [0,1]");
    add_dbl("noise_scale", &ExperimentConfig::noise_scale,
            "within-class feature noise");
    add_dbl("misalign_scale", &ExperimentConfig::misalign_scale,
            "frozen text-tower misalignment magnitude");
    add_dbl("adapter_init", &ExperimentConfig::adapter_init,
            "adapter A-factor init scale");
    add_u64("batch_size", &ExperimentConfig::batch_size, "minibatch size m");
    add_u64("epochs", &ExperimentConfig::epochs, "training epochs");
    add_u64("max_steps", &ExperimentConfig::max_steps,
            "hard step cap, 0 = all epochs");
    add_dbl("q", &ExperimentConfig::q, "process noise Q = q*I, q >= 0");
    add_dbl("sigma0", &ExperimentConfig::sigma0, "initial belief variance");
    add_dbl("alpha", &ExperimentConfig::alpha, "regulation scaling factor");
    add_dbl("beta", &ExperimentConfig::beta, "EMA forgetting factor in (0,1)");
    add_dbl("epsilon", &ExperimentConfig::epsilon, "noise covariance floor");

    f.push_back({"rhat_method",
                 {"noise estimate: zeroth or first",
                  [](ExperimentConfig& c, const std::string& v) {
                    if (v == "zeroth")
                      c.rhat_method = robust::RhatMethod::ZerothOrder;
                    else if (v == "first")
                      c.rhat_method = robust::RhatMethod::FirstOrder;
                    else
                      throw ConfigError("rhat_method",
                                        "rhat_method: expected zeroth|first, "
                                        "got '" + v + "'");
                  },
                  [](const ExperimentConfig& c) {
                    return c.rhat_method == robust::RhatMethod::ZerothOrder
                               ? "zeroth"
                               : "first";
                  }}});
    f.push_back({"lambda_scope",
                 {"regulation scope: alg1 or text_ivd",
                  [](ExperimentConfig& c, const std::string& v) {
                    if (v == "alg1")
                      c.lambda_scope = robust::LambdaScope::Alg1;
                    else if (v == "text_ivd")
                      c.lambda_scope = robust::LambdaScope::TextIVD;
                    else
                      throw ConfigError("lambda_scope",
                                        "lambda_scope: expected alg1|text_ivd, "
                                        "got '" + v + "'");
                  },
                  [](const ExperimentConfig& c) {
                    return c.lambda_scope == robust::LambdaScope::Alg1
                               ? "alg1"
                               : "text_ivd";
                  }}});
    f.push_back({"backend",
                 {"covariance backend: full or diagonal",
                  [](ExperimentConfig& c, const std::string& v) {
                    if (v == "full")
                      c.backend = belief::CovBackend::Full;
                    else if (v == "diagonal")
                      c.backend = belief::CovBackend::Diagonal;
                    else
                      throw ConfigError("backend",
                                        "backend: expected full|diagonal, got '" +
                                            v + "'");
                  },
                  [](const ExperimentConfig& c) {
                    return c.backend == belief::CovBackend::Full ? "full"
                                                                 : "diagonal";
                  }}});
    f.push_back({"optimizer",
                 {"optimizer: kalman or sgd",
                  [](ExperimentConfig& c, const std::string& v) {
                    if (v == "kalman")
                      c.optimizer = OptimizerKind::Kalman;
                    else if (v == "sgd")
                      c.optimizer = OptimizerKind::Sgd;
                    else
                      throw ConfigError("optimizer",
                                        "optimizer: expected kalman|sgd, got '" +
                                            v + "'");
                  },
                  [](const ExperimentConfig& c) {
                    return c.optimizer == OptimizerKind::Kalman ? "kalman"
                                                                : "sgd";
                  }}});
    add_dbl("lr", &ExperimentConfig::lr, "baseline learning rate");
    add_dbl("tau", &ExperimentConfig::tau, "evaluation loss temperature");
    add_dbl("ood_fraction", &ExperimentConfig::ood_fraction,
            "corrupted batch rate, one of {0,.01,.05,.10,.25,.50}");
    add_dbl("ood_severity", &ExperimentConfig::ood_severity,
            "corruption severity >= 0");
    f.push_back({"ood_mode",
                 {"corruption: feature_noise, cluster_shift or label_shuffle",
                  [](ExperimentConfig& c, const std::string& v) {
                    if (v == "feature_noise")
                      c.ood_mode = OodMode::FeatureNoise;
                    else if (v == "cluster_shift")
                      c.ood_mode = OodMode::ClusterShift;
                    else if (v == "label_shuffle")
                      c.ood_mode = OodMode::LabelShuffle;
                    else
                      throw ConfigError(
                          "ood_mode",
                          "ood_mode: expected feature_noise|cluster_shift|"
                          "label_shuffle, got '" + v + "'");
                  },
                  [](const ExperimentConfig& c) {
                    switch (c.ood_mode) {
                      case OodMode::FeatureNoise: return "feature_noise";
                      case OodMode::ClusterShift: return "cluster_shift";
                      default: return "label_shuffle";
                    }
                  }}});
    add_u64("eval_every", &ExperimentConfig::eval_every,
            "accuracy evaluation period in steps, 0 = final only");
    return f;
  }();
  return fields;
}

const FieldOps* find_field(const std::string& key) {
  for (const auto& [name, ops] : field_map())
    if (name == key) return &ops;
  return nullptr;
}

void check_set_membership(const char* name, double value,
                          std::initializer_list<double> allowed) {
  for (double a : allowed)
    if (value == a) return;
  throw ConfigError(name, std::string(name) + " = " + fmt_double(value) +
                              " is not one of the allowed grid values");
}

std::string strip(const std::string& s) {
  std::size_t b = 0, e = s.size();
  while (b < e && std::isspace(static_cast<unsigned char>(s[b]))) ++b;
  while (e > b && std::isspace(static_cast<unsigned char>(s[e - 1]))) --e;
  return s.substr(b, e - b);
}

}  // namespace

const std::vector<ConfigField>& config_fields() {
  static const std::vector<ConfigField> fields = [] {
    std::vector<ConfigField> out;
    for (const auto& [name, ops] : field_map())
      out.push_back(ConfigField{name, ops.doc});
    return out;
  }();
  return fields;
}

void set_config_field(ExperimentConfig& cfg, const std::string& key,
                      const std::string& value) {
  const FieldOps* ops = find_field(key);
  if (ops == nullptr) throw ConfigError(key, "unknown config key '" + key + "'");
  ops->set(cfg, value);
}

std::string get_config_field(const ExperimentConfig& cfg,
                             const std::string& key) {
  const FieldOps* ops = find_field(key);
  if (ops == nullptr) throw ConfigError(key, "unknown config key '" + key + "'");
  return ops->get(cfg);
}

void validate(const ExperimentConfig& cfg) {
  auto need = [](bool ok, const char* field, const std::string& msg) {
    if (!ok) throw ConfigError(field, msg);
  };
  need(cfg.classes >= 1, "classes", "classes must be >= 1");
  need(cfg.shots == 1 || cfg.shots == 2 || cfg.shots == 4 || cfg.shots == 8 ||
           cfg.shots == 16,
       "shots", "shots must be one of {1,2,4,8,16}");
  need(cfg.d_in >= 1, "d_in", "d_in must be >= 1");
  need(cfg.d_embed >= 1, "d_embed", "d_embed must be >= 1");
  need(cfg.d_embed <= cfg.d_in, "d_embed", "d_embed must be <= d_in");
  need(cfg.rank >= 1, "rank", "rank must be >= 1");
  need(cfg.test_per_class >= 1, "test_per_class", "test_per_class must be >= 1");
  need(cfg.common_scale >= 0.0, "common_scale", "common_scale must be >= 0");
  need(cfg.class_scale > 0.0, "class_scale", "class_scale must be > 0");
  need(cfg.cross_modal_corr >= 0.0 && cfg.cross_modal_corr <= 1.0,
       "cross_modal_corr", "cross_modal_corr must lie in [0,1]");
  need(cfg.noise_scale >= 0.0, "noise_scale", "noise_scale must be >= 0");
  need(cfg.misalign_scale >= 0.0, "misalign_scale",
       "misalign_scale must be >= 0");
  need(cfg.adapter_init > 0.0, "adapter_init", "adapter_init must be > 0");
  need(cfg.batch_size >= 1, "batch_size", "batch_size must be >= 1");
  need(cfg.epochs >= 1, "epochs", "epochs must be >= 1");
  need(cfg.q >= 0.0, "q", "q must be >= 0");
  need(cfg.sigma0 > 0.0, "sigma0", "sigma0 must be > 0");
  need(cfg.alpha >= 0.0, "alpha", "alpha must be >= 0");
  need(cfg.beta > 0.0 && cfg.beta < 1.0, "beta", "beta must lie in (0,1)");
  need(cfg.epsilon > 0.0, "epsilon", "epsilon must be > 0");
  need(cfg.lr >= 0.0, "lr", "lr must be >= 0");
  need(cfg.tau > 0.0, "tau", "tau must be > 0");
  check_set_membership("ood_fraction", cfg.ood_fraction,
                       {0.0, 0.01, 0.05, 0.10, 0.25, 0.50});
  need(cfg.ood_severity >= 0.0, "ood_severity", "ood_severity must be >= 0");
  need(cfg.classes * cfg.shots >= cfg.batch_size, "batch_size",
       "not enough samples for one batch (classes*shots < batch_size)");
}

ExperimentConfig parse_config_text(const std::string& text) {
  ExperimentConfig cfg;
  std::istringstream in(text);
  std::string line;
  std::size_t lineno = 0;
  while (std::getline(in, line)) {
    ++lineno;
    if (const auto hash = line.find('#'); hash != std::string::npos)
      line.erase(hash);
    line = strip(line);
    if (line.empty()) continue;
    const auto eq = line.find('=');
    if (eq == std::string::npos)
      throw ConfigError("config line " + std::to_string(lineno) +
                        ": expected 'key = value', got '" + line + "'");
    const std::string key = strip(line.substr(0, eq));
    const std::string value = strip(line.substr(eq + 1));
    set_config_field(cfg, key, value);
  }
  validate(cfg);
  return cfg;
}

ExperimentConfig parse_config_file(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw ConfigError("cannot open config file '" + path + "'");
  std::ostringstream text;
  text << in.rdbuf();
  return parse_config_text(text.str());
}

std::string format_config(const ExperimentConfig& cfg) {
  std::ostringstream out;
  for (const auto& [name, ops] : field_map())
    out << name << " = " << ops.get(cfg) << "\n";
  return out.str();
}

}  // namespace kalnat::harness
