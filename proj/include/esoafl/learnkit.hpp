#pragma once

// Desk-scale learners and synthetic data for the federated simulator.

#include <cstddef>
#include <cstdint>
#include <span>
#include <vector>

#include "esoafl/rng.hpp"

namespace esoafl::learnkit {

using Vector = std::vector<double>;
using GradientVector = std::vector<double>;

/// Row-major samples. Classification sets carry `labels`, regression sets `targets`.
struct Dataset {
  std::size_t n_features = 0;
  int num_classes = 0;  // 0 for regression
  std::vector<double> features;
  std::vector<int> labels;
  std::vector<double> targets;

  [[nodiscard]] std::size_t size() const noexcept {
    return n_features == 0 ? 0 : features.size() / n_features;
  }
  [[nodiscard]] std::span<const double> row(std::size_t i) const noexcept {
    return {features.data() + i * n_features, n_features};
  }
  [[nodiscard]] bool is_classification() const noexcept { return num_classes > 0; }
};

struct SyntheticSpec {
  int num_classes = 2;
  std::size_t n_features = 10;
  std::size_t n_samples = 1000;
  double separation = 3.0;
  std::uint64_t seed = 0;
};

/// Mixture of unit-variance Gaussians; class means are pairwise `separation` apart
/// when num_classes <= n_features. Labels cycle 0,1,..,C-1 so classes are balanced.
Dataset generate_synthetic(const SyntheticSpec& spec);

/// y = <w*, x> + bias* + noise, for the linear-regression learner.
Dataset generate_regression(std::size_t n_features, std::size_t n_samples, double noise_std,
                            std::uint64_t seed);

/// Splits off the trailing `n_test` rows. Rows are exchangeable, so this is a random split.
std::pair<Dataset, Dataset> split_tail(const Dataset& ds, std::size_t n_test);

struct ClientShard {
  int client_id = 0;
  std::vector<std::size_t> indices;
  std::size_t batch_size = 1;
};

/// Equal-size shards. A ceil(level * m) share of client k's m samples comes from label
/// k mod C; the rest is drawn uniformly from what is left. Remainder samples are dropped.
std::vector<ClientShard> partition_non_iid(const Dataset& ds, int num_clients, double level,
                                           std::uint64_t seed, std::size_t batch_size = 32);

enum class ModelKind { linear, logistic, mlp };

struct Architecture {
  ModelKind kind = ModelKind::logistic;
  std::size_t n_inputs = 0;
  std::size_t n_outputs = 1;  // classes for logistic/mlp, 1 for linear
  std::size_t hidden = 0;     // mlp only

  [[nodiscard]] std::size_t dimension() const noexcept;
};

Architecture architecture_for(const Dataset& ds, ModelKind kind, std::size_t hidden = 16);

struct ModelParams {
  Architecture arch;
  Vector values;

  [[nodiscard]] std::size_t dimension() const noexcept { return values.size(); }
};

/// Zero weights for convex learners; small seeded weights for the MLP (tanh needs symmetry breaking).
ModelParams init_params(const Architecture& arch, std::uint64_t seed);

struct Batch {
  const Dataset& data;
  std::span<const std::size_t> indices;
};

/// Mean per-sample loss: softmax cross-entropy for classifiers, 0.5*(y - y_hat)^2 for regression.
double loss(const ModelParams& params, const Batch& batch);

/// Analytic gradient of `loss` on the batch.
GradientVector gradient(const ModelParams& params, const Batch& batch);

/// Loss and gradient in one pass.
double loss_and_gradient(const ModelParams& params, const Batch& batch, GradientVector& grad);

ModelParams sgd_step(const ModelParams& params, std::span<const double> grad, double lr);

/// Fraction of correctly classified rows (classification only).
double accuracy(const ModelParams& params, const Dataset& ds);

std::vector<std::size_t> all_indices(const Dataset& ds);

/// Draws mini-batches without replacement; a fresh permutation starts when the shard is exhausted.
class BatchSampler {
 public:
  BatchSampler(std::span<const std::size_t> shard, std::size_t batch_size, rng::Stream stream);

  std::span<const std::size_t> next();

 private:
  std::vector<std::size_t> order_;
  std::vector<std::size_t> batch_;
  std::size_t batch_size_;
  std::size_t cursor_;
  rng::Stream stream_;
};

}  // namespace esoafl::learnkit
