#include "esoafl/learnkit.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>
#include <string>

#include "esoafl/errors.hpp"

namespace esoafl::learnkit {

namespace {

// Numerically stable log-softmax; returns log(sum exp(z)) and leaves z untouched.
double log_sum_exp(std::span<const double> z) {
  const double m = *std::max_element(z.begin(), z.end());
  double s = 0.0;
  for (double v : z) s += std::exp(v - m);
  return m + std::log(s);
}

void check_batch(const ModelParams& params, const Batch& batch) {
  if (batch.indices.empty()) throw ShapeError("empty batch");
  if (params.arch.n_inputs != batch.data.n_features)
    throw ShapeError("model expects " + std::to_string(params.arch.n_inputs) + " features, data has " +
                     std::to_string(batch.data.n_features));
  if (params.values.size() != params.arch.dimension())
    throw ShapeError("parameter vector does not match architecture");
  const bool classifier = params.arch.kind != ModelKind::linear;
  if (classifier != batch.data.is_classification())
    throw ShapeError("model/dataset task mismatch (classification vs regression)");
  if (classifier && static_cast<std::size_t>(batch.data.num_classes) != params.arch.n_outputs)
    throw ShapeError("class count mismatch");
}

// Per-learner kernels. Each adds the per-sample gradient into `grad` (when non-null)
// and returns the per-sample loss.

double linear_sample(const ModelParams& p, std::span<const double> x, double y, double* grad) {
  const std::size_t f = p.arch.n_inputs;
  double pred = p.values[f];
  for (std::size_t j = 0; j < f; ++j) pred += p.values[j] * x[j];
  const double r = pred - y;
  if (grad != nullptr) {
    for (std::size_t j = 0; j < f; ++j) grad[j] += r * x[j];
    grad[f] += r;
  }
  return 0.5 * r * r;
}

double softmax_sample(const ModelParams& p, std::span<const double> x, int label, double* grad,
                      std::vector<double>& logits) {
  const std::size_t f = p.arch.n_inputs;
  const std::size_t c = p.arch.n_outputs;
  const double* w = p.values.data();
  const double* b = w + c * f;
  for (std::size_t k = 0; k < c; ++k) {
    double z = b[k];
    for (std::size_t j = 0; j < f; ++j) z += w[k * f + j] * x[j];
    logits[k] = z;
  }
  const double lse = log_sum_exp(logits);
  const double sample_loss = lse - logits[static_cast<std::size_t>(label)];
  if (grad != nullptr) {
    double* gb = grad + c * f;
    for (std::size_t k = 0; k < c; ++k) {
      const double delta = std::exp(logits[k] - lse) - (static_cast<int>(k) == label ? 1.0 : 0.0);
      for (std::size_t j = 0; j < f; ++j) grad[k * f + j] += delta * x[j];
      gb[k] += delta;
    }
  }
  return sample_loss;
}

double mlp_sample(const ModelParams& p, std::span<const double> x, int label, double* grad,
                  std::vector<double>& hidden, std::vector<double>& logits) {
  const std::size_t f = p.arch.n_inputs;
  const std::size_t h = p.arch.hidden;
  const std::size_t c = p.arch.n_outputs;
  const double* w1 = p.values.data();
  const double* b1 = w1 + h * f;
  const double* w2 = b1 + h;
  const double* b2 = w2 + c * h;

  for (std::size_t i = 0; i < h; ++i) {
    double z = b1[i];
    for (std::size_t j = 0; j < f; ++j) z += w1[i * f + j] * x[j];
    hidden[i] = std::tanh(z);
  }
  for (std::size_t k = 0; k < c; ++k) {
    double z = b2[k];
    for (std::size_t i = 0; i < h; ++i) z += w2[k * h + i] * hidden[i];
    logits[k] = z;
  }
  const double lse = log_sum_exp(logits);
  const double sample_loss = lse - logits[static_cast<std::size_t>(label)];
  if (grad != nullptr) {
    double* gw1 = grad;
    double* gb1 = gw1 + h * f;
    double* gw2 = gb1 + h;
    double* gb2 = gw2 + c * h;
    for (std::size_t k = 0; k < c; ++k) {
      const double delta = std::exp(logits[k] - lse) - (static_cast<int>(k) == label ? 1.0 : 0.0);
      logits[k] = delta;  // reuse as output error
      for (std::size_t i = 0; i < h; ++i) gw2[k * h + i] += delta * hidden[i];
      gb2[k] += delta;
    }
    for (std::size_t i = 0; i < h; ++i) {
      double back = 0.0;
      for (std::size_t k = 0; k < c; ++k) back += w2[k * h + i] * logits[k];
      back *= 1.0 - hidden[i] * hidden[i];
      for (std::size_t j = 0; j < f; ++j) gw1[i * f + j] += back * x[j];
      gb1[i] += back;
    }
  }
  return sample_loss;
}

double accumulate(const ModelParams& params, const Batch& batch, double* grad) {
  check_batch(params, batch);
  std::vector<double> logits(params.arch.n_outputs);
  std::vector<double> hidden(params.arch.hidden);
  double total = 0.0;
  for (std::size_t idx : batch.indices) {
    const auto x = batch.data.row(idx);
    switch (params.arch.kind) {
      case ModelKind::linear:
        total += linear_sample(params, x, batch.data.targets[idx], grad);
        break;
      case ModelKind::logistic:
        total += softmax_sample(params, x, batch.data.labels[idx], grad, logits);
        break;
      case ModelKind::mlp:
        total += mlp_sample(params, x, batch.data.labels[idx], grad, hidden, logits);
        break;
    }
  }
  const double inv = 1.0 / static_cast<double>(batch.indices.size());
  if (grad != nullptr) {
    for (std::size_t j = 0; j < params.values.size(); ++j) grad[j] *= inv;
  }
  return total * inv;
}

}  // namespace

std::size_t Architecture::dimension() const noexcept {
  switch (kind) {
    case ModelKind::linear:
      return n_inputs + 1;
    case ModelKind::logistic:
      return n_outputs * (n_inputs + 1);
    case ModelKind::mlp:
      return hidden * (n_inputs + 1) + n_outputs * (hidden + 1);
  }
  return 0;
}

Dataset generate_synthetic(const SyntheticSpec& spec) {
  if (spec.n_samples == 0 || spec.n_features == 0) throw InvalidSpecError("synthetic data needs samples and features");
  if (spec.num_classes < 1) throw InvalidSpecError("class count must be positive");
  if (spec.n_samples < static_cast<std::size_t>(spec.num_classes))
    throw InvalidSpecError("fewer samples than classes");
  if (!(spec.separation >= 0.0)) throw InvalidSpecError("separation must be non-negative");

  const auto c = static_cast<std::size_t>(spec.num_classes);
  const std::size_t f = spec.n_features;
  const rng::Key root(spec.seed);
  rng::Stream mean_stream = root.child("synthetic-means").stream();
  rng::Stream noise_stream = root.child("synthetic-noise").stream();

  // Random directions, Gram-Schmidt orthonormalised while they fit in R^f.
  std::vector<double> dirs(c * f);
  for (std::size_t k = 0; k < c; ++k) {
    double* v = dirs.data() + k * f;
    for (std::size_t j = 0; j < f; ++j) v[j] = mean_stream.normal();
    if (k < f) {
      for (std::size_t i = 0; i < k; ++i) {
        const double* u = dirs.data() + i * f;
        double dot = 0.0;
        for (std::size_t j = 0; j < f; ++j) dot += u[j] * v[j];
        for (std::size_t j = 0; j < f; ++j) v[j] -= dot * u[j];
      }
    }
    double norm = 0.0;
    for (std::size_t j = 0; j < f; ++j) norm += v[j] * v[j];
    norm = std::sqrt(norm);
    for (std::size_t j = 0; j < f; ++j) v[j] /= norm;
  }
  const double radius = spec.separation / std::numbers::sqrt2;

  Dataset ds;
  ds.n_features = f;
  ds.num_classes = spec.num_classes;
  ds.features.resize(spec.n_samples * f);
  ds.labels.resize(spec.n_samples);
  for (std::size_t i = 0; i < spec.n_samples; ++i) {
    const std::size_t label = i % c;
    ds.labels[i] = static_cast<int>(label);
    const double* mean = dirs.data() + label * f;
    for (std::size_t j = 0; j < f; ++j) ds.features[i * f + j] = radius * mean[j] + noise_stream.normal();
  }
  return ds;
}

Dataset generate_regression(std::size_t n_features, std::size_t n_samples, double noise_std, std::uint64_t seed) {
  if (n_samples == 0 || n_features == 0) throw InvalidSpecError("regression data needs samples and features");
  const rng::Key root(seed);
  rng::Stream truth = root.child("regression-truth").stream();
  rng::Stream noise = root.child("regression-noise").stream();
  std::vector<double> w(n_features + 1);
  for (double& v : w) v = truth.normal();

  Dataset ds;
  ds.n_features = n_features;
  ds.features.resize(n_samples * n_features);
  ds.targets.resize(n_samples);
  for (std::size_t i = 0; i < n_samples; ++i) {
    double y = w[n_features];
    for (std::size_t j = 0; j < n_features; ++j) {
      const double x = noise.normal();
      ds.features[i * n_features + j] = x;
      y += w[j] * x;
    }
    ds.targets[i] = y + noise_std * noise.normal();
  }
  return ds;
}

std::pair<Dataset, Dataset> split_tail(const Dataset& ds, std::size_t n_test) {
  const std::size_t n = ds.size();
  if (n_test >= n) throw InvalidSpecError("test split larger than dataset");
  const std::size_t n_train = n - n_test;
  const std::size_t f = ds.n_features;
  auto part = [&](std::size_t begin, std::size_t end) {
    Dataset out;
    out.n_features = f;
    out.num_classes = ds.num_classes;
    out.features.assign(ds.features.begin() + static_cast<std::ptrdiff_t>(begin * f),
                        ds.features.begin() + static_cast<std::ptrdiff_t>(end * f));
    if (!ds.labels.empty())
      out.labels.assign(ds.labels.begin() + static_cast<std::ptrdiff_t>(begin),
                        ds.labels.begin() + static_cast<std::ptrdiff_t>(end));
    if (!ds.targets.empty())
      out.targets.assign(ds.targets.begin() + static_cast<std::ptrdiff_t>(begin),
                         ds.targets.begin() + static_cast<std::ptrdiff_t>(end));
    return out;
  };
  return {part(0, n_train), part(n_train, n)};
}

std::vector<ClientShard> partition_non_iid(const Dataset& ds, int num_clients, double level, std::uint64_t seed,
                                           std::size_t batch_size) {
  if (!(level >= 0.0 && level <= 1.0)) throw InvalidSpecError("non-IID level must lie in [0, 1]");
  if (num_clients < 1) throw InvalidSpecError("need at least one client");
  if (batch_size == 0) throw InvalidSpecError("batch size must be positive");
  const std::size_t n = ds.size();
  const auto k_clients = static_cast<std::size_t>(num_clients);
  if (n < k_clients) throw InvalidSpecError("fewer samples than clients");

  const std::size_t per_client = n / k_clients;
  rng::Stream stream = rng::Key(seed).child("partition").stream();

  std::vector<ClientShard> shards(k_clients);
  for (std::size_t k = 0; k < k_clients; ++k) {
    shards[k].client_id = static_cast<int>(k);
    shards[k].batch_size = batch_size;
    shards[k].indices.reserve(per_client);
  }

  std::vector<bool> taken(n, false);
  if (ds.is_classification() && level > 0.0) {
    const auto c = static_cast<std::size_t>(ds.num_classes);
    std::vector<std::vector<std::size_t>> pools(c);
    for (std::size_t i = 0; i < n; ++i) pools[static_cast<std::size_t>(ds.labels[i])].push_back(i);
    for (auto& pool : pools) rng::shuffle(pool.begin(), pool.end(), stream);

    const auto dominant = std::min(per_client, static_cast<std::size_t>(std::ceil(level * static_cast<double>(per_client) - 1e-9)));
    for (std::size_t k = 0; k < k_clients; ++k) {
      auto& pool = pools[k % c];
      const std::size_t take = std::min(dominant, pool.size());
      for (std::size_t t = 0; t < take; ++t) {
        const std::size_t idx = pool.back();
        pool.pop_back();
        shards[k].indices.push_back(idx);
        taken[idx] = true;
      }
    }
  }

  std::vector<std::size_t> rest;
  rest.reserve(n);
  for (std::size_t i = 0; i < n; ++i)
    if (!taken[i]) rest.push_back(i);
  rng::shuffle(rest.begin(), rest.end(), stream);
  std::size_t cursor = 0;
  for (auto& shard : shards) {
    while (shard.indices.size() < per_client) shard.indices.push_back(rest[cursor++]);
  }
  return shards;
}

Architecture architecture_for(const Dataset& ds, ModelKind kind, std::size_t hidden) {
  Architecture arch;
  arch.kind = kind;
  arch.n_inputs = ds.n_features;
  if (kind == ModelKind::linear) {
    if (ds.is_classification()) throw ShapeError("linear regression needs real targets");
    arch.n_outputs = 1;
  } else {
    if (!ds.is_classification()) throw ShapeError("classifier needs class labels");
    arch.n_outputs = static_cast<std::size_t>(ds.num_classes);
  }
  if (kind == ModelKind::mlp) {
    if (hidden == 0) throw InvalidSpecError("mlp needs a hidden layer");
    arch.hidden = hidden;
  }
  return arch;
}

ModelParams init_params(const Architecture& arch, std::uint64_t seed) {
  ModelParams p{arch, Vector(arch.dimension(), 0.0)};
  if (arch.kind == ModelKind::mlp) {
    rng::Stream s = rng::Key(seed).child("mlp-init").stream();
    const std::size_t f = arch.n_inputs;
    const std::size_t h = arch.hidden;
    const double s1 = 1.0 / std::sqrt(static_cast<double>(f));
    const double s2 = 1.0 / std::sqrt(static_cast<double>(h));
    for (std::size_t i = 0; i < h * f; ++i) p.values[i] = s1 * s.normal();
    double* w2 = p.values.data() + h * (f + 1);
    for (std::size_t i = 0; i < arch.n_outputs * h; ++i) w2[i] = s2 * s.normal();
  }
  return p;
}

double loss(const ModelParams& params, const Batch& batch) { return accumulate(params, batch, nullptr); }

GradientVector gradient(const ModelParams& params, const Batch& batch) {
  GradientVector g(params.values.size(), 0.0);
  accumulate(params, batch, g.data());
  return g;
}

double loss_and_gradient(const ModelParams& params, const Batch& batch, GradientVector& grad) {
  grad.assign(params.values.size(), 0.0);
  return accumulate(params, batch, grad.data());
}

ModelParams sgd_step(const ModelParams& params, std::span<const double> grad, double lr) {
  if (grad.size() != params.values.size()) throw ShapeError("gradient dimension mismatch");
  ModelParams out = params;
  for (std::size_t j = 0; j < grad.size(); ++j) out.values[j] -= lr * grad[j];
  return out;
}

double accuracy(const ModelParams& params, const Dataset& ds) {
  if (!ds.is_classification()) throw ShapeError("accuracy needs class labels");
  const auto idx = all_indices(ds);
  std::vector<double> logits(params.arch.n_outputs);
  std::vector<double> hidden(params.arch.hidden);
  std::size_t correct = 0;
  const std::size_t f = params.arch.n_inputs;
  for (std::size_t i : idx) {
    const auto x = ds.row(i);
    const double* w = params.values.data();
    if (params.arch.kind == ModelKind::logistic) {
      const double* b = w + params.arch.n_outputs * f;
      for (std::size_t k = 0; k < params.arch.n_outputs; ++k) {
        double z = b[k];
        for (std::size_t j = 0; j < f; ++j) z += w[k * f + j] * x[j];
        logits[k] = z;
      }
    } else {
      const std::size_t h = params.arch.hidden;
      const double* b1 = w + h * f;
      const double* w2 = b1 + h;
      const double* b2 = w2 + params.arch.n_outputs * h;
      for (std::size_t a = 0; a < h; ++a) {
        double z = b1[a];
        for (std::size_t j = 0; j < f; ++j) z += w[a * f + j] * x[j];
        hidden[a] = std::tanh(z);
      }
      for (std::size_t k = 0; k < params.arch.n_outputs; ++k) {
        double z = b2[k];
        for (std::size_t a = 0; a < h; ++a) z += w2[k * h + a] * hidden[a];
        logits[k] = z;
      }
    }
    const auto best = static_cast<int>(std::max_element(logits.begin(), logits.end()) - logits.begin());
    if (best == ds.labels[i]) ++correct;
  }
  return static_cast<double>(correct) / static_cast<double>(idx.size());
}

std::vector<std::size_t> all_indices(const Dataset& ds) {
  std::vector<std::size_t> idx(ds.size());
  std::iota(idx.begin(), idx.end(), std::size_t{0});
  return idx;
}

BatchSampler::BatchSampler(std::span<const std::size_t> shard, std::size_t batch_size, rng::Stream stream)
    : order_(shard.begin(), shard.end()),
      batch_size_(std::min(batch_size, shard.size())),
      cursor_(shard.size()),
      stream_(stream) {
  if (order_.empty()) throw InvalidSpecError("empty shard");
  batch_.reserve(batch_size_);
}

std::span<const std::size_t> BatchSampler::next() {
  batch_.clear();
  while (batch_.size() < batch_size_) {
    if (cursor_ == order_.size()) {
      rng::shuffle(order_.begin(), order_.end(), stream_);
      cursor_ = 0;
    }
    batch_.push_back(order_[cursor_++]);
  }
  return batch_;
}

}  // namespace esoafl::learnkit
