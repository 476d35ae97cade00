#pragma once

#include <cstdint>
#include <random>

#include "kalnat/harness/config.hpp"
#include "kalnat/obsmodel.hpp"

namespace kalnat::harness {

// Named substreams so every stochastic choice in a run is a pure function of
// (seed, purpose, index); this is what makes resume-from-checkpoint exact.
enum class Stream : std::uint64_t {
  Centroids = 1,
  TrainSamples,
  TestSamples,
  Model,
  Theta,
  Shuffle,
  OodDecision,
  Corruption,
  Bench,
};

std::mt19937_64 substream(std::uint64_t seed, Stream purpose,
                          std::uint64_t index = 0);

// Class-conditional Gaussian feature pairs: per class a correlated
// (image, text) centroid around a shared offset direction, then isotropic
// within-class noise. Regenerating with the same config is bit-identical.
struct SyntheticDataset {
  Matrix train_image, train_text;  // (classes*shots) x d_in
  std::vector<int> train_labels;
  Matrix test_image, test_text;  // (classes*test_per_class) x d_in
  std::vector<int> test_labels;
  Matrix image_centroids, text_centroids;  // classes x d_in (offset included)
  Vector shared_offset;                    // the common direction, d_in
  std::uint64_t classes = 0, shots = 0, d_in = 0;

  std::size_t train_size() const noexcept { return train_labels.size(); }
  std::size_t test_size() const noexcept { return test_labels.size(); }
};

SyntheticDataset gen_synthetic_pairs(const ExperimentConfig& cfg);

// Frozen towers: a shared random projection with orthonormal columns; the
// text side additionally carries a rank-`rank` misalignment built from the
// class-centroid span, which the adapter can cancel exactly.
obs::TwoTowerModel make_model(const ExperimentConfig& cfg,
                              const SyntheticDataset& data);

// Assemble a minibatch from training rows (provenance ID).
obs::Minibatch make_batch(const SyntheticDataset& data,
                          const std::vector<std::size_t>& rows);

// Apply one corruption mode; all provenance flags become OOD.
obs::Minibatch corrupt_batch(const obs::Minibatch& batch, double severity,
                             OodMode mode, std::uint64_t seed);

// Shuffled row indices for one epoch, chunked into full batches (the trailing
// partial batch is dropped). Pure in (seed, epoch).
std::vector<std::vector<std::size_t>> epoch_batches(std::size_t train_size,
                                                    std::size_t batch_size,
                                                    std::uint64_t seed,
                                                    std::uint64_t epoch);

// Model + batch generator sized to hit an exact parameter count n; used by the
// bench subcommand and the scaling tests. Requires n divisible by 4 after
// subtracting the embed contribution; see bench_dims.
struct BenchSetup {
  obs::TwoTowerModel model;
  obs::Minibatch batch;
  Vector theta;
};

BenchSetup make_bench_setup(std::size_t n, std::size_t batch_size,
                            std::uint64_t seed);

}  // namespace kalnat::harness
