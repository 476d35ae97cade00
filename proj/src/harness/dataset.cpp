#include "kalnat/harness/dataset.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>

#include "kalnat/kernels.hpp"

namespace kalnat::harness {

namespace {

std::uint64_t mix(std::uint64_t z) {
  z = (z ^ (z >> 30)) * 0xBF58476D1CE4E5B9ULL;
  z = (z ^ (z >> 27)) * 0x94D049BB133111EBULL;
  return z ^ (z >> 31);
}

void fill_gaussian(std::mt19937_64& rng, double scale, double* out,
                   std::size_t n) {
  std::normal_distribution<double> gauss(0.0, 1.0);
  for (std::size_t i = 0; i < n; ++i) out[i] = scale * gauss(rng);
}

// Feature scale of the batch: root-mean-square of the image-feature entries.
double pooled_feature_std(const Matrix& feats) {
  double acc = 0.0;
  for (std::size_t i = 0; i < feats.size(); ++i)
    acc += feats.data()[i] * feats.data()[i];
  return std::sqrt(acc / static_cast<double>(feats.size()));
}

}  // namespace

std::mt19937_64 substream(std::uint64_t seed, Stream purpose,
                          std::uint64_t index) {
  const std::uint64_t z =
      mix(seed + 0x9E3779B97F4A7C15ULL *
                     (static_cast<std::uint64_t>(purpose) * 0x100000001B3ULL +
                      index + 1));
  return std::mt19937_64(z);
}

SyntheticDataset gen_synthetic_pairs(const ExperimentConfig& cfg) {
  validate(cfg);
  SyntheticDataset d;
  d.classes = cfg.classes;
  d.shots = cfg.shots;
  d.d_in = cfg.d_in;

  const std::size_t din = cfg.d_in;
  std::mt19937_64 rng = substream(cfg.seed, Stream::Centroids);

  // shared offset direction
  Vector g(din);
  fill_gaussian(rng, 1.0, g.data(), din);
  const double gn = norm2(g);
  for (double& x : g) x = cfg.common_scale * x / gn;
  d.shared_offset = g;

  const double rho = cfg.cross_modal_corr;
  d.image_centroids = Matrix(cfg.classes, din);
  d.text_centroids = Matrix(cfg.classes, din);
  Vector z(din), w(din);
  for (std::size_t c = 0; c < cfg.classes; ++c) {
    fill_gaussian(rng, cfg.class_scale, z.data(), din);
    fill_gaussian(rng, cfg.class_scale, w.data(), din);
    for (std::size_t i = 0; i < din; ++i) {
      d.image_centroids(c, i) = g[i] + z[i];
      d.text_centroids(c, i) =
          g[i] + rho * z[i] + std::sqrt(1.0 - rho * rho) * w[i];
    }
  }

  auto draw_split = [&](Stream stream, std::size_t per_class, Matrix& img,
                        Matrix& txt, std::vector<int>& labels) {
    img = Matrix(cfg.classes * per_class, din);
    txt = Matrix(cfg.classes * per_class, din);
    labels.resize(cfg.classes * per_class);
    std::mt19937_64 srng = substream(cfg.seed, stream);
    std::size_t row = 0;
    Vector eta(din);
    for (std::size_t c = 0; c < cfg.classes; ++c) {
      for (std::size_t s = 0; s < per_class; ++s, ++row) {
        fill_gaussian(srng, cfg.noise_scale, eta.data(), din);
        for (std::size_t i = 0; i < din; ++i)
          img(row, i) = d.image_centroids(c, i) + eta[i];
        fill_gaussian(srng, cfg.noise_scale, eta.data(), din);
        for (std::size_t i = 0; i < din; ++i)
          txt(row, i) = d.text_centroids(c, i) + eta[i];
        labels[row] = static_cast<int>(c);
      }
    }
  };
  draw_split(Stream::TrainSamples, cfg.shots, d.train_image, d.train_text,
             d.train_labels);
  draw_split(Stream::TestSamples, cfg.test_per_class, d.test_image,
             d.test_text, d.test_labels);
  return d;
}

obs::TwoTowerModel make_model(const ExperimentConfig& cfg,
                              const SyntheticDataset& data) {
  const std::size_t din = cfg.d_in, dem = cfg.d_embed;
  std::mt19937_64 rng = substream(cfg.seed, Stream::Model);
  std::normal_distribution<double> gauss(0.0, 1.0);

  // shared frozen projection with orthonormal columns
  Matrix w0(din, dem);
  for (std::size_t c = 0; c < dem; ++c) {
    Vector col(din);
    double nrm = 0.0;
    do {
      for (std::size_t i = 0; i < din; ++i) col[i] = gauss(rng);
      for (std::size_t p = 0; p < c; ++p) {
        double proj = 0.0;
        for (std::size_t i = 0; i < din; ++i) proj += w0(i, p) * col[i];
        for (std::size_t i = 0; i < din; ++i) col[i] -= proj * w0(i, p);
      }
      nrm = norm2(col);
    } while (nrm < 1e-8);
    for (std::size_t i = 0; i < din; ++i) w0(i, c) = col[i] / nrm;
  }

  // Text-tower misalignment: row space drawn from the centered class-centroid
  // span (the shared offset cancels), so the zero-shot ranking is scrambled;
  // output directions random unit vectors.
  Vector centroid_mean(din, 0.0);
  for (std::size_t c = 0; c < cfg.classes; ++c)
    for (std::size_t i = 0; i < din; ++i)
      centroid_mean[i] += data.image_centroids(c, i);
  for (double& x : centroid_mean) x /= static_cast<double>(cfg.classes);

  Matrix delta(din, dem);
  Vector p(din), qdir(dem);
  for (std::size_t l = 0; l < cfg.rank; ++l) {
    p.assign(din, 0.0);
    for (std::size_t c = 0; c < cfg.classes; ++c) {
      const double coef = gauss(rng);
      for (std::size_t i = 0; i < din; ++i)
        p[i] += coef * (data.image_centroids(c, i) - centroid_mean[i]);
    }
    // keep the misalignment out of the shared direction: a component along
    // the offset shifts every embedding identically, which depresses all
    // cosines without disturbing the ranking
    const double offset_norm_sq = dot(data.shared_offset, data.shared_offset);
    if (offset_norm_sq > 0.0) {
      const double proj = dot(p, data.shared_offset) / offset_norm_sq;
      kernels::axpy(-proj, data.shared_offset.data(), p.data(), din);
    }
    const double pn = norm2(p);
    if (pn > 1e-12)
      for (double& x : p) x /= pn;
    for (std::size_t j = 0; j < dem; ++j) qdir[j] = gauss(rng);
    const double qn = norm2(qdir);
    for (double& x : qdir) x /= qn;
    for (std::size_t i = 0; i < din; ++i)
      kernels::axpy(cfg.misalign_scale * p[i], qdir.data(), delta.row(i), dem);
  }

  obs::TwoTowerModel model;
  model.frozen_image_proj = w0;
  model.frozen_text_proj = w0 + delta;
  model.rank = cfg.rank;
  model.temperature = cfg.tau;
  model.validate();
  return model;
}

obs::Minibatch make_batch(const SyntheticDataset& data,
                          const std::vector<std::size_t>& rows) {
  obs::Minibatch b;
  b.image_feats = Matrix(rows.size(), data.d_in);
  b.text_feats = Matrix(rows.size(), data.d_in);
  b.labels.resize(rows.size());
  b.provenance.assign(rows.size(), obs::Provenance::ID);
  for (std::size_t i = 0; i < rows.size(); ++i) {
    const std::size_t r = rows[i];
    std::copy_n(data.train_image.row(r), data.d_in, b.image_feats.row(i));
    std::copy_n(data.train_text.row(r), data.d_in, b.text_feats.row(i));
    b.labels[i] = data.train_labels[r];
  }
  b.validate();
  return b;
}

obs::Minibatch corrupt_batch(const obs::Minibatch& batch, double severity,
                             OodMode mode, std::uint64_t seed) {
  if (!(severity >= 0.0))
    throw InvalidArgument("corrupt_batch: severity must be >= 0");
  obs::Minibatch out = batch;
  std::mt19937_64 rng(mix(seed));
  std::normal_distribution<double> gauss(0.0, 1.0);
  const std::size_t m = batch.size(), d = batch.feat_dim();
  const double sigma = pooled_feature_std(batch.image_feats);

  switch (mode) {
    case OodMode::FeatureNoise: {
      for (std::size_t i = 0; i < m; ++i)
        for (std::size_t c = 0; c < d; ++c)
          out.image_feats(i, c) += severity * sigma * gauss(rng);
      break;
    }
    case OodMode::ClusterShift: {
      // one fixed direction scaled to a typical total feature deviation
      Vector dir(d);
      for (double& x : dir) x = gauss(rng);
      const double nrm = norm2(dir);
      const double mag = severity * sigma * std::sqrt(static_cast<double>(d));
      for (std::size_t i = 0; i < m; ++i)
        for (std::size_t c = 0; c < d; ++c)
          out.image_feats(i, c) += mag * dir[c] / nrm;
      break;
    }
    case OodMode::LabelShuffle: {
      std::vector<std::size_t> perm(m);
      std::iota(perm.begin(), perm.end(), 0);
      if (m >= 2) {
        do {
          std::shuffle(perm.begin(), perm.end(), rng);
        } while (std::is_sorted(perm.begin(), perm.end()));
      }
      Matrix shuffled(m, d);
      for (std::size_t i = 0; i < m; ++i)
        std::copy_n(batch.text_feats.row(perm[i]), d, shuffled.row(i));
      out.text_feats = std::move(shuffled);
      break;
    }
  }
  out.provenance.assign(m, obs::Provenance::OOD);
  return out;
}

std::vector<std::vector<std::size_t>> epoch_batches(std::size_t train_size,
                                                    std::size_t batch_size,
                                                    std::uint64_t seed,
                                                    std::uint64_t epoch) {
  std::vector<std::size_t> order(train_size);
  std::iota(order.begin(), order.end(), 0);
  std::mt19937_64 rng = substream(seed, Stream::Shuffle, epoch);
  std::shuffle(order.begin(), order.end(), rng);
  std::vector<std::vector<std::size_t>> batches;
  for (std::size_t at = 0; at + batch_size <= train_size; at += batch_size) {
    batches.emplace_back(order.begin() + static_cast<std::ptrdiff_t>(at),
                         order.begin() + static_cast<std::ptrdiff_t>(at + batch_size));
  }
  return batches;
}

BenchSetup make_bench_setup(std::size_t n, std::size_t batch_size,
                            std::uint64_t seed) {
  // n = 2*r*(d_in + d_embed) with r=2, d_embed=16 -> d_in = n/4 - 16
  if (n % 4 != 0 || n / 4 <= 16)
    throw InvalidArgument("make_bench_setup: n must be 4*(d_in+16) with d_in>=1");
  const std::size_t din = n / 4 - 16;
  const std::size_t dem = 16;

  std::mt19937_64 rng = substream(seed, Stream::Bench);
  std::normal_distribution<double> gauss(0.0, 1.0);

  BenchSetup setup;
  setup.model.frozen_image_proj = Matrix(din, dem);
  setup.model.frozen_text_proj = Matrix(din, dem);
  const double proj_scale = 1.0 / std::sqrt(static_cast<double>(din));
  for (std::size_t i = 0; i < setup.model.frozen_image_proj.size(); ++i)
    setup.model.frozen_image_proj.data()[i] = proj_scale * gauss(rng);
  for (std::size_t i = 0; i < setup.model.frozen_text_proj.size(); ++i)
    setup.model.frozen_text_proj.data()[i] = proj_scale * gauss(rng);
  setup.model.rank = 2;
  setup.model.temperature = 0.1;

  setup.batch.image_feats = Matrix(batch_size, din);
  setup.batch.text_feats = Matrix(batch_size, din);
  for (std::size_t i = 0; i < setup.batch.image_feats.size(); ++i)
    setup.batch.image_feats.data()[i] = gauss(rng);
  for (std::size_t i = 0; i < setup.batch.text_feats.size(); ++i)
    setup.batch.text_feats.data()[i] = gauss(rng);
  setup.batch.labels.assign(batch_size, 0);
  setup.batch.provenance.assign(batch_size, obs::Provenance::ID);

  setup.theta = obs::init_theta(setup.model, 0.01, seed + 1);
  return setup;
}

}  // namespace kalnat::harness
