#pragma once

#include <cstdint>
#include <vector>

#include "kalnat/linalg.hpp"

namespace kalnat::obs {

enum class Provenance { ID, OOD };

// A batch of m paired feature rows (pre-extracted backbone features for the
// image and text sides) with class labels and a per-row provenance flag.
struct Minibatch {
  Matrix image_feats;  // m x d_in
  Matrix text_feats;   // m x d_in
  std::vector<int> labels;
  std::vector<Provenance> provenance;

  std::size_t size() const noexcept { return image_feats.rows(); }
  std::size_t feat_dim() const noexcept { return image_feats.cols(); }
  double ood_fraction() const;
  void validate() const;
};

// Two-tower contrastive model: frozen linear projections plus one trainable
// low-rank adapter pair (A: d_in x r, B: r x d_embed) per tower. The effective
// projection is frozen + A*B; the trainable parameter vector theta flattens
// [A_img, B_img, A_txt, B_txt] row-major, n = 2*r*(d_in + d_embed).
struct TwoTowerModel {
  Matrix frozen_image_proj;  // d_in x d_embed
  Matrix frozen_text_proj;   // d_in x d_embed
  std::size_t rank = 2;
  double temperature = 0.1;  // evaluation-loss temperature only

  std::size_t d_in() const noexcept { return frozen_image_proj.rows(); }
  std::size_t d_embed() const noexcept { return frozen_image_proj.cols(); }
  std::size_t param_count() const noexcept {
    return 2 * rank * (d_in() + d_embed());
  }
  void validate() const;
};

// Offsets of the four adapter blocks inside theta.
struct ThetaLayout {
  std::size_t d_in = 0, d_embed = 0, rank = 0;

  std::size_t a_size() const noexcept { return d_in * rank; }
  std::size_t b_size() const noexcept { return rank * d_embed; }
  std::size_t image_a() const noexcept { return 0; }
  std::size_t image_b() const noexcept { return a_size(); }
  std::size_t text_a() const noexcept { return a_size() + b_size(); }
  std::size_t text_b() const noexcept { return 2 * a_size() + b_size(); }
  std::size_t total() const noexcept { return 2 * (a_size() + b_size()); }
};

ThetaLayout layout_of(const TwoTowerModel& model);

// A factors ~ N(0, a_scale^2), B factors zero, so the initial adapter product
// vanishes and the model starts exactly at the frozen projections.
Vector init_theta(const TwoTowerModel& model, double a_scale,
                  std::uint64_t seed);

// Entry (i,j) = <I_i, T_j> / (||I_i|| ||T_j||), clamped to [-1, 1].
// Throws DegenerateInput naming the first zero-norm row.
Matrix cosine_similarity_matrix(const Matrix& img_emb, const Matrix& txt_emb);

Matrix embed_images(const TwoTowerModel& model, const Matrix& feats,
                    const Vector& theta);
Matrix embed_texts(const TwoTowerModel& model, const Matrix& feats,
                   const Vector& theta);

// Full m x m cosine-similarity matrix of the batch under theta.
Matrix similarity(const TwoTowerModel& model, const Minibatch& batch,
                  const Vector& theta);

// Observation map h: the diagonal of the similarity matrix, length m.
Vector model_output(const TwoTowerModel& model, const Minibatch& batch,
                    const Vector& theta);

// Observation target: a vector of m ones.
Vector target_output(std::size_t m);

// Analytic Jacobian of model_output w.r.t. theta, m x n. Row i depends only
// on pair i of the batch.
Matrix jacobian(const TwoTowerModel& model, const Minibatch& batch,
                const Vector& theta);

// Central finite-difference Jacobian, (h(theta+he_j) - h(theta-he_j)) / 2h.
Matrix jacobian_fd(const TwoTowerModel& model, const Minibatch& batch,
                   const Vector& theta, double h);

// Symmetric InfoNCE over S/tau; nonnegative, log-sum-exp stabilized.
double clip_loss(const Matrix& s, double tau);

// d clip_loss / d theta through the full similarity matrix (both softmax
// directions). Used by the first-order baseline.
Vector clip_loss_gradient(const TwoTowerModel& model, const Minibatch& batch,
                          const Vector& theta, double tau);

}  // namespace kalnat::obs
