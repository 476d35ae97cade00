#include "kalnat/obsmodel.hpp"

#include <algorithm>
#include <cmath>
#include <random>
#include <string>

#include "kalnat/kernels.hpp"

namespace kalnat::obs {

namespace {

constexpr double kNormFloor = 1e-150;

Matrix theta_block(const Vector& theta, std::size_t offset, std::size_t rows,
                   std::size_t cols) {
  Matrix out(rows, cols);
  std::copy(theta.begin() + static_cast<std::ptrdiff_t>(offset),
            theta.begin() + static_cast<std::ptrdiff_t>(offset + rows * cols),
            out.data());
  return out;
}

void check_theta(const TwoTowerModel& model, const Vector& theta) {
  if (theta.size() != model.param_count()) {
    throw InvalidArgument("theta length " + std::to_string(theta.size()) +
                          " does not match model parameter count " +
                          std::to_string(model.param_count()));
  }
}

// feats * (frozen + A*B) without forming the effective projection.
Matrix embed(const Matrix& feats, const Matrix& frozen, const Matrix& a,
             const Matrix& b) {
  Matrix emb = matmul(feats, frozen);
  const Matrix fa = matmul(feats, a);  // m x r
  for (std::size_t i = 0; i < emb.rows(); ++i) {
    for (std::size_t l = 0; l < a.cols(); ++l) {
      kernels::axpy(fa(i, l), b.row(l), emb.row(i), b.cols());
    }
  }
  return emb;
}

double row_norm_checked(const Matrix& m, std::size_t i, const char* side) {
  const double n = std::sqrt(kernels::dot(m.row(i), m.row(i), m.cols()));
  if (!(n > kNormFloor) || !std::isfinite(n)) {
    throw DegenerateInput(i, std::string("zero-norm ") + side +
                                 " embedding at row " + std::to_string(i));
  }
  return n;
}

double logsumexp(const double* x, std::size_t n) {
  double m = x[0];
  for (std::size_t i = 1; i < n; ++i) m = std::max(m, x[i]);
  double s = 0.0;
  for (std::size_t i = 0; i < n; ++i) s += std::exp(x[i] - m);
  return m + std::log(s);
}

struct TowerCache {
  Matrix a, b;       // adapter factors
  Matrix emb;        // m x d_embed
  Matrix feats_a;    // m x r, feats * A
  Vector norms;      // per-row embedding norms
};

TowerCache make_tower(const Matrix& feats, const Matrix& frozen,
                      const Vector& theta, std::size_t a_off,
                      std::size_t b_off, const ThetaLayout& lay,
                      const char* side) {
  TowerCache t;
  t.a = theta_block(theta, a_off, lay.d_in, lay.rank);
  t.b = theta_block(theta, b_off, lay.rank, lay.d_embed);
  t.emb = matmul(feats, frozen);
  t.feats_a = matmul(feats, t.a);
  for (std::size_t i = 0; i < t.emb.rows(); ++i)
    for (std::size_t l = 0; l < lay.rank; ++l)
      kernels::axpy(t.feats_a(i, l), t.b.row(l), t.emb.row(i), lay.d_embed);
  t.norms.resize(t.emb.rows());
  for (std::size_t i = 0; i < t.emb.rows(); ++i)
    t.norms[i] = row_norm_checked(t.emb, i, side);
  return t;
}

}  // namespace

double Minibatch::ood_fraction() const {
  if (provenance.empty()) return 0.0;
  std::size_t k = 0;
  for (Provenance p : provenance)
    if (p == Provenance::OOD) ++k;
  return static_cast<double>(k) / static_cast<double>(provenance.size());
}

void Minibatch::validate() const {
  const std::size_t m = image_feats.rows();
  if (m < 1) throw InvalidArgument("minibatch: empty");
  if (text_feats.rows() != m || text_feats.cols() != image_feats.cols())
    throw InvalidArgument("minibatch: image/text feature shapes differ");
  if (labels.size() != m || provenance.size() != m)
    throw InvalidArgument("minibatch: label/provenance length mismatch");
  for (std::size_t i = 0; i < m; ++i) {
    if (kernels::dot(image_feats.row(i), image_feats.row(i),
                     image_feats.cols()) == 0.0 ||
        kernels::dot(text_feats.row(i), text_feats.row(i),
                     text_feats.cols()) == 0.0) {
      throw InvalidArgument("minibatch: zero feature row at index " +
                            std::to_string(i));
    }
  }
}

void TwoTowerModel::validate() const {
  if (rank < 1) throw InvalidArgument("model: rank must be >= 1");
  if (frozen_text_proj.rows() != frozen_image_proj.rows() ||
      frozen_text_proj.cols() != frozen_image_proj.cols())
    throw InvalidArgument("model: frozen projection shapes differ");
  if (!(temperature > 0.0))
    throw InvalidArgument("model: temperature must be > 0");
}

ThetaLayout layout_of(const TwoTowerModel& model) {
  return ThetaLayout{model.d_in(), model.d_embed(), model.rank};
}

Vector init_theta(const TwoTowerModel& model, double a_scale,
                  std::uint64_t seed) {
  const ThetaLayout lay = layout_of(model);
  Vector theta(lay.total(), 0.0);
  std::mt19937_64 rng(seed);
  std::normal_distribution<double> gauss(0.0, a_scale);
  for (std::size_t i = 0; i < lay.a_size(); ++i)
    theta[lay.image_a() + i] = gauss(rng);
  for (std::size_t i = 0; i < lay.a_size(); ++i)
    theta[lay.text_a() + i] = gauss(rng);
  return theta;
}

Matrix cosine_similarity_matrix(const Matrix& img_emb, const Matrix& txt_emb) {
  if (img_emb.cols() != txt_emb.cols())
    throw InvalidArgument("cosine_similarity_matrix: embedding dims differ");
  Vector ni(img_emb.rows()), nt(txt_emb.rows());
  for (std::size_t i = 0; i < img_emb.rows(); ++i)
    ni[i] = row_norm_checked(img_emb, i, "image");
  for (std::size_t j = 0; j < txt_emb.rows(); ++j)
    nt[j] = row_norm_checked(txt_emb, j, "text");
  Matrix s(img_emb.rows(), txt_emb.rows());
  for (std::size_t i = 0; i < img_emb.rows(); ++i) {
    for (std::size_t j = 0; j < txt_emb.rows(); ++j) {
      const double c =
          kernels::dot(img_emb.row(i), txt_emb.row(j), img_emb.cols()) /
          (ni[i] * nt[j]);
      s(i, j) = std::clamp(c, -1.0, 1.0);
    }
  }
  return s;
}

Matrix embed_images(const TwoTowerModel& model, const Matrix& feats,
                    const Vector& theta) {
  check_theta(model, theta);
  const ThetaLayout lay = layout_of(model);
  return embed(feats, model.frozen_image_proj,
               theta_block(theta, lay.image_a(), lay.d_in, lay.rank),
               theta_block(theta, lay.image_b(), lay.rank, lay.d_embed));
}

Matrix embed_texts(const TwoTowerModel& model, const Matrix& feats,
                   const Vector& theta) {
  check_theta(model, theta);
  const ThetaLayout lay = layout_of(model);
  return embed(feats, model.frozen_text_proj,
               theta_block(theta, lay.text_a(), lay.d_in, lay.rank),
               theta_block(theta, lay.text_b(), lay.rank, lay.d_embed));
}

Matrix similarity(const TwoTowerModel& model, const Minibatch& batch,
                  const Vector& theta) {
  return cosine_similarity_matrix(
      embed_images(model, batch.image_feats, theta),
      embed_texts(model, batch.text_feats, theta));
}

Vector model_output(const TwoTowerModel& model, const Minibatch& batch,
                    const Vector& theta) {
  const Matrix u = embed_images(model, batch.image_feats, theta);
  const Matrix v = embed_texts(model, batch.text_feats, theta);
  Vector out(u.rows());
  for (std::size_t i = 0; i < u.rows(); ++i) {
    const double nu = row_norm_checked(u, i, "image");
    const double nv = row_norm_checked(v, i, "text");
    out[i] = std::clamp(
        kernels::dot(u.row(i), v.row(i), u.cols()) / (nu * nv), -1.0, 1.0);
  }
  return out;
}

Vector target_output(std::size_t m) {
  if (m < 1) throw InvalidArgument("target_output: m must be >= 1");
  return Vector(m, 1.0);
}

Matrix jacobian(const TwoTowerModel& model, const Minibatch& batch,
                const Vector& theta) {
  check_theta(model, theta);
  batch.validate();
  const ThetaLayout lay = layout_of(model);
  const TowerCache img = make_tower(batch.image_feats, model.frozen_image_proj,
                                    theta, lay.image_a(), lay.image_b(), lay,
                                    "image");
  const TowerCache txt = make_tower(batch.text_feats, model.frozen_text_proj,
                                    theta, lay.text_a(), lay.text_b(), lay,
                                    "text");
  const std::size_t m = batch.size();
  Matrix h(m, lay.total());

  Vector g(lay.d_embed), gv(lay.d_embed);
  for (std::size_t j = 0; j < m; ++j) {
    const double* u = img.emb.row(j);
    const double* v = txt.emb.row(j);
    const double nu = img.norms[j], nv = txt.norms[j];
    const double c = kernels::dot(u, v, lay.d_embed) / (nu * nv);

    // dc/du and dc/dv
    for (std::size_t d = 0; d < lay.d_embed; ++d) {
      g[d] = v[d] / (nu * nv) - c * u[d] / (nu * nu);
      gv[d] = u[d] / (nu * nv) - c * v[d] / (nv * nv);
    }

    double* row = h.row(j);
    const double* x = batch.image_feats.row(j);
    const double* t = batch.text_feats.row(j);

    // image A block: grad(p,q) = x_p * (B g)_q
    Vector bg(lay.rank);
    for (std::size_t q = 0; q < lay.rank; ++q)
      bg[q] = kernels::dot(img.b.row(q), g.data(), lay.d_embed);
    for (std::size_t p = 0; p < lay.d_in; ++p)
      for (std::size_t q = 0; q < lay.rank; ++q)
        row[lay.image_a() + p * lay.rank + q] = x[p] * bg[q];

    // image B block: grad(q,d) = (x A)_q * g_d
    for (std::size_t q = 0; q < lay.rank; ++q)
      for (std::size_t d = 0; d < lay.d_embed; ++d)
        row[lay.image_b() + q * lay.d_embed + d] = img.feats_a(j, q) * g[d];

    // text A block
    for (std::size_t q = 0; q < lay.rank; ++q)
      bg[q] = kernels::dot(txt.b.row(q), gv.data(), lay.d_embed);
    for (std::size_t p = 0; p < lay.d_in; ++p)
      for (std::size_t q = 0; q < lay.rank; ++q)
        row[lay.text_a() + p * lay.rank + q] = t[p] * bg[q];

    // text B block
    for (std::size_t q = 0; q < lay.rank; ++q)
      for (std::size_t d = 0; d < lay.d_embed; ++d)
        row[lay.text_b() + q * lay.d_embed + d] = txt.feats_a(j, q) * gv[d];
  }
  return h;
}

Matrix jacobian_fd(const TwoTowerModel& model, const Minibatch& batch,
                   const Vector& theta, double h) {
  if (!(h > 0.0)) throw InvalidArgument("jacobian_fd: h must be > 0");
  check_theta(model, theta);
  const std::size_t n = theta.size();
  const std::size_t m = batch.size();
  Matrix out(m, n);
  Vector probe = theta;
  for (std::size_t j = 0; j < n; ++j) {
    probe[j] = theta[j] + h;
    const Vector up = model_output(model, batch, probe);
    probe[j] = theta[j] - h;
    const Vector dn = model_output(model, batch, probe);
    probe[j] = theta[j];
    for (std::size_t i = 0; i < m; ++i) out(i, j) = (up[i] - dn[i]) / (2.0 * h);
  }
  return out;
}

double clip_loss(const Matrix& s, double tau) {
  if (s.rows() != s.cols()) throw InvalidArgument("clip_loss: matrix not square");
  if (!(tau > 0.0)) throw InvalidArgument("clip_loss: tau must be > 0");
  if (!all_finite(s)) throw InvalidArgument("clip_loss: non-finite similarity");
  const std::size_t m = s.rows();
  const Matrix st = transpose(s);
  Vector scaled(m);
  double acc = 0.0;
  for (std::size_t i = 0; i < m; ++i) {
    for (std::size_t j = 0; j < m; ++j) scaled[j] = s(i, j) / tau;
    acc += s(i, i) / tau - logsumexp(scaled.data(), m);
    for (std::size_t j = 0; j < m; ++j) scaled[j] = st(i, j) / tau;
    acc += s(i, i) / tau - logsumexp(scaled.data(), m);
  }
  return -acc / static_cast<double>(m);
}

Vector clip_loss_gradient(const TwoTowerModel& model, const Minibatch& batch,
                          const Vector& theta, double tau) {
  if (!(tau > 0.0))
    throw InvalidArgument("clip_loss_gradient: tau must be > 0");
  check_theta(model, theta);
  batch.validate();
  const ThetaLayout lay = layout_of(model);
  const TowerCache img = make_tower(batch.image_feats, model.frozen_image_proj,
                                    theta, lay.image_a(), lay.image_b(), lay,
                                    "image");
  const TowerCache txt = make_tower(batch.text_feats, model.frozen_text_proj,
                                    theta, lay.text_a(), lay.text_b(), lay,
                                    "text");
  const std::size_t m = batch.size();
  const std::size_t de = lay.d_embed;

  Matrix s(m, m);
  for (std::size_t i = 0; i < m; ++i)
    for (std::size_t j = 0; j < m; ++j)
      s(i, j) = kernels::dot(img.emb.row(i), txt.emb.row(j), de) /
                (img.norms[i] * txt.norms[j]);

  // w(a,b) = dL/dS_ab = -(1/(m tau)) * (2*[a==b] - p_row_a(b) - p_col_b(a))
  Matrix w(m, m);
  Vector tmp(m);
  for (std::size_t a = 0; a < m; ++a) {
    for (std::size_t b = 0; b < m; ++b) tmp[b] = s(a, b) / tau;
    const double lse = logsumexp(tmp.data(), m);
    for (std::size_t b = 0; b < m; ++b) w(a, b) = -std::exp(tmp[b] - lse);
    w(a, a) += 2.0;
  }
  for (std::size_t b = 0; b < m; ++b) {
    for (std::size_t a = 0; a < m; ++a) tmp[a] = s(a, b) / tau;
    const double lse = logsumexp(tmp.data(), m);
    for (std::size_t a = 0; a < m; ++a) w(a, b) -= std::exp(tmp[a] - lse);
  }
  const double coef = -1.0 / (static_cast<double>(m) * tau);
  kernels::scale(coef, w.data(), w.size());

  // Backpropagate through the cosine rows into the embeddings.
  Matrix gu(m, de), gv(m, de);
  for (std::size_t a = 0; a < m; ++a) {
    const double* u = img.emb.row(a);
    for (std::size_t b = 0; b < m; ++b) {
      const double* v = txt.emb.row(b);
      const double nu = img.norms[a], nv = txt.norms[b];
      const double cab = s(a, b);
      const double wab = w(a, b);
      for (std::size_t d = 0; d < de; ++d) {
        gu(a, d) += wab * (v[d] / (nu * nv) - cab * u[d] / (nu * nu));
        gv(b, d) += wab * (u[d] / (nu * nv) - cab * v[d] / (nv * nv));
      }
    }
  }

  // Map embedding gradients onto the adapter blocks.
  Vector grad(lay.total(), 0.0);
  Vector bg(lay.rank);
  for (std::size_t a = 0; a < m; ++a) {
    const double* x = batch.image_feats.row(a);
    for (std::size_t q = 0; q < lay.rank; ++q)
      bg[q] = kernels::dot(img.b.row(q), gu.row(a), de);
    for (std::size_t p = 0; p < lay.d_in; ++p)
      for (std::size_t q = 0; q < lay.rank; ++q)
        grad[lay.image_a() + p * lay.rank + q] += x[p] * bg[q];
    for (std::size_t q = 0; q < lay.rank; ++q)
      kernels::axpy(img.feats_a(a, q), gu.row(a),
                    grad.data() + lay.image_b() + q * de, de);
  }
  for (std::size_t b = 0; b < m; ++b) {
    const double* t = batch.text_feats.row(b);
    for (std::size_t q = 0; q < lay.rank; ++q)
      bg[q] = kernels::dot(txt.b.row(q), gv.row(b), de);
    for (std::size_t p = 0; p < lay.d_in; ++p)
      for (std::size_t q = 0; q < lay.rank; ++q)
        grad[lay.text_a() + p * lay.rank + q] += t[p] * bg[q];
    for (std::size_t q = 0; q < lay.rank; ++q)
      kernels::axpy(txt.feats_a(b, q), gv.row(b),
                    grad.data() + lay.text_b() + q * de, de);
  }
  return grad;
}

}  // namespace kalnat::obs
