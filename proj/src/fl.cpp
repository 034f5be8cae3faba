#include "esoafl/fl.hpp"

#include <algorithm>
#include <cmath>
#include <tuple>

#include "esoafl/errors.hpp"
#include "esoafl/quantizer.hpp"

namespace esoafl::fl {

namespace {

using learnkit::GradientVector;
using learnkit::ModelParams;

std::vector<GradientVector> quantized_common(const std::vector<GradientVector>& updates, int bits,
                                             const rng::Key& key, std::vector<quantizer::QuantizedUpdate>* payloads) {
  quantizer::QuantScale scale;
  try {
    scale = quantizer::fit_common_scale(updates, bits);
  } catch (const DegenerateScaleError&) {
    // Reserved zero payload: nothing to quantize.
    if (payloads != nullptr) {
      payloads->clear();
      for (const auto& u : updates)
        payloads->push_back({std::vector<std::uint16_t>(u.size(), static_cast<std::uint16_t>(0)), {0.0, bits}});
    }
    return updates;
  }
  std::vector<GradientVector> out;
  out.reserve(updates.size());
  if (payloads != nullptr) payloads->clear();
  for (std::size_t k = 0; k < updates.size(); ++k) {
    auto q = quantizer::quantize(updates[k], scale, key.child(k).stream());
    out.push_back(quantizer::dequantize(q));
    if (payloads != nullptr) payloads->push_back(std::move(q));
  }
  return out;
}

// Squared grid step of the common scale, or zero when every update vanishes.
double symbol_unit_sq(const std::vector<GradientVector>& updates, int bits) {
  try {
    const double step = quantizer::fit_common_scale(updates, bits).step();
    return step * step;
  } catch (const DegenerateScaleError&) {
    return 0.0;
  }
}

std::vector<GradientVector> quantized_per_client(const std::vector<GradientVector>& updates, int bits,
                                                 const rng::Key& key) {
  std::vector<GradientVector> out;
  out.reserve(updates.size());
  for (std::size_t k = 0; k < updates.size(); ++k) {
    double c = 0.0;
    for (double v : updates[k]) c = std::max(c, std::abs(v));
    if (c == 0.0) {
      out.push_back(updates[k]);
      continue;
    }
    const quantizer::QuantScale scale{c, bits};
    out.push_back(quantizer::dequantize(quantizer::quantize(updates[k], scale, key.child(k).stream())));
  }
  return out;
}

}  // namespace

std::string to_string(Scheme s) {
  switch (s) {
    case Scheme::esoafl:
      return "esoafl";
    case Scheme::fedavg:
      return "fedavg";
    case Scheme::fedpaq:
      return "fedpaq";
  }
  return "?";
}

Scheme scheme_from_string(const std::string& s) {
  if (s == "esoafl") return Scheme::esoafl;
  if (s == "fedavg") return Scheme::fedavg;
  if (s == "fedpaq") return Scheme::fedpaq;
  throw ConfigError("unknown scheme '" + s + "'");
}

Environment default_environment() {
  Environment env;
  env.channel = channel::config_from_targets(1.0, 0.2, 0.77, 15.0);
  const auto profile = energy::builtin_profile("small-learner");
  env.comm = profile.comm;
  env.comp = profile.comp;
  return env;
}

Federation build_federation(const TaskSpec& task, int clients, std::uint64_t seed) {
  auto spec = task.data;
  spec.n_samples = task.data.n_samples + task.n_test;
  auto [train, test] = learnkit::split_tail(learnkit::generate_synthetic(spec), task.n_test);
  Federation fed;
  fed.arch = learnkit::architecture_for(train, task.model, task.hidden);
  fed.shards = learnkit::partition_non_iid(train, clients, task.non_iid, seed, task.batch_size);
  for (const auto& s : fed.shards) fed.union_indices.insert(fed.union_indices.end(), s.indices.begin(), s.indices.end());
  std::sort(fed.union_indices.begin(), fed.union_indices.end());
  fed.train = std::move(train);
  fed.test = std::move(test);
  return fed;
}

void validate(const FlConfig& cfg, const Environment& env) {
  if (cfg.clients < 1) throw DomainError("K must be at least 1");
  if (cfg.local_iterations < 1) throw DomainError("H must be at least 1");
  if (cfg.max_rounds < 1) throw DomainError("R_max must be at least 1");
  if (!(cfg.lr > 0.0)) throw DomainError("eta must be positive");
  if (!(cfg.server_scale > 0.0)) throw DomainError("theta must be positive");
  if (!(cfg.lr_decay > 0.0 && cfg.lr_decay <= 1.0)) throw DomainError("learning-rate decay must lie in (0, 1]");
  if (cfg.bits < 1 || cfg.bits > 16) throw DomainError("bits must lie in [1, 16]");
  channel::validate(env.channel);
  if (cfg.scheme == Scheme::esoafl) {
    channel::make_policy(env.channel, cfg.probability);  // throws above p_b^max
    if (cfg.full_precision && env.channel.mode == channel::Mode::symbol)
      throw DomainError("the symbol path needs quantized payloads");
  }
}

GradientVector local_accumulate(const Federation& fed, const learnkit::ClientShard& shard, const ModelParams& global,
                                int local_iterations, double lr, rng::Stream batch_stream) {
  if (local_iterations < 1) throw DomainError("H must be at least 1");
  learnkit::BatchSampler sampler(shard.indices, shard.batch_size, batch_stream);
  ModelParams local = global;
  GradientVector acc(global.values.size(), 0.0);
  GradientVector g;
  for (int h = 0; h < local_iterations; ++h) {
    const auto batch = sampler.next();
    learnkit::loss_and_gradient(local, {fed.train, batch}, g);
    for (std::size_t j = 0; j < g.size(); ++j) {
      if (!std::isfinite(g[j])) throw DivergedError("client " + std::to_string(shard.client_id) + " diverged");
      acc[j] += lr * g[j];
      local.values[j] -= lr * g[j];
    }
  }
  return acc;
}

ModelParams global_update(const ModelParams& w, std::span<const double> aggregate, double theta) {
  return learnkit::sgd_step(w, aggregate, theta);
}

double payload_units(std::size_t dimension, double bits_per_value, const LinkParams& link) {
  if (dimension == 0) return 0.0;
  const double symbols = std::ceil(static_cast<double>(dimension) * bits_per_value / link.bits_per_symbol);
  return symbols / static_cast<double>((dimension + 1) / 2);
}

double round_comm_units(const FlConfig& cfg, std::size_t dimension, const LinkParams& link) {
  switch (cfg.scheme) {
    case Scheme::esoafl:
      return 1.0;
    case Scheme::fedavg:
      return cfg.clients * payload_units(dimension, link.value_bits, link);
    case Scheme::fedpaq:
      return cfg.clients * payload_units(dimension, cfg.bits, link);
  }
  return 0.0;
}

double round_energy(const FlConfig& cfg, std::size_t dimension, const Environment& env) {
  energy::CommParams comm = env.comm;
  comm.dimension = dimension;
  comm.rho = env.channel.tx_scale;
  comm.rate = env.channel.rate;
  const double comp = cfg.local_iterations * energy::comp_energy(env.comp);
  double upload = 0.0;
  switch (cfg.scheme) {
    case Scheme::esoafl:
      if (env.channel.mode == channel::Mode::ideal) {
        // Unfaded unit-mean channel: inversion power rho * lambda.
        upload = comm.rho * comm.rate * energy::comm_time(dimension, comm.parallel_symbols, comm.symbol_time);
      } else {
        upload = energy::comm_energy(cfg.probability, comm);
      }
      break;
    case Scheme::fedavg:
      upload = energy::orthogonal_upload_energy(dimension, env.link.value_bits, env.link.bits_per_symbol,
                                                env.link.tx_power, comm);
      break;
    case Scheme::fedpaq:
      upload = energy::orthogonal_upload_energy(dimension, cfg.bits, env.link.bits_per_symbol, env.link.tx_power, comm);
      break;
  }
  return cfg.clients * (upload + comp);
}

TrainingState initial_state(const Federation& fed, const FlConfig& cfg) {
  TrainingState s;
  s.global = learnkit::init_params(fed.arch, cfg.seed);
  s.lr = cfg.lr;
  return s;
}

RoundRecord evaluate(const TrainingState& state, const Federation& fed) {
  RoundRecord rec;
  rec.round = state.round;
  GradientVector g;
  rec.loss = learnkit::loss_and_gradient(state.global, {fed.train, fed.union_indices}, g);
  double sq = 0.0;
  for (double v : g) sq += v * v;
  rec.grad_norm_sq = sq;
  rec.accuracy = fed.test.is_classification() && fed.test.size() > 0 ? learnkit::accuracy(state.global, fed.test) : 0.0;
  rec.comm_units = 0.0;
  rec.energy_j = state.energy_j;
  return rec;
}

RoundRecord run_round(TrainingState& state, const Federation& fed, const FlConfig& cfg, const Environment& env,
                      std::vector<modem::Sample>* constellation) {
  if (static_cast<int>(fed.shards.size()) != cfg.clients) throw ShapeError("federation has a different client count");
  const rng::Key root(cfg.seed);
  const auto k_count = static_cast<std::size_t>(cfg.clients);
  const auto r = static_cast<std::uint64_t>(state.round);

  std::vector<GradientVector> updates(k_count);
  const auto n = static_cast<std::ptrdiff_t>(k_count);
  std::exception_ptr failure;
#pragma omp parallel for schedule(static)
  for (std::ptrdiff_t ki = 0; ki < n; ++ki) {
    const auto k = static_cast<std::size_t>(ki);
    try {
      updates[k] = local_accumulate(fed, fed.shards[k], state.global, cfg.local_iterations, state.lr,
                                    root.child("batch").child(k).child(r).stream());
    } catch (...) {
#pragma omp critical(esoafl_round_failure)
      if (!failure) failure = std::current_exception();
    }
  }
  if (failure) std::rethrow_exception(failure);

  const rng::Key quant_key = root.child("quant").child(r);
  const rng::Key air_key = root.child("air").child(r);
  GradientVector aggregate;
  switch (cfg.scheme) {
    case Scheme::fedavg:
      aggregate = channel::exact_mean(updates);
      break;
    case Scheme::fedpaq:
      aggregate = channel::exact_mean(quantized_per_client(updates, cfg.bits, quant_key));
      break;
    case Scheme::esoafl: {
      const bool symbol = env.channel.mode == channel::Mode::symbol;
      std::vector<quantizer::QuantizedUpdate> payloads;
      const auto sent =
          cfg.full_precision ? updates : quantized_common(updates, cfg.bits, quant_key, symbol ? &payloads : nullptr);
      const auto policy = channel::make_policy(env.channel, cfg.probability);
      if (symbol && payloads.front().scale.half_range > 0.0) {
        auto res = modem::modem_aggregate(payloads, env.channel, policy, air_key, constellation != nullptr);
        aggregate = std::move(res.average);
        if (constellation != nullptr) *constellation = std::move(res.received);
      } else {
        // The SNR is quoted per transmitted symbol, and a symbol spans one grid step of the
        // shared scale, so noise is expressed in those units here as it is on the symbol path.
        auto link = env.channel;
        link.noise_var *= symbol_unit_sq(updates, cfg.bits);
        aggregate = channel::air_aggregate(sent, link, policy, air_key);
      }
      break;
    }
  }

  state.global = global_update(state.global, aggregate, cfg.server_scale);
  for (double v : state.global.values)
    if (!std::isfinite(v)) throw DivergedError("global model diverged in round " + std::to_string(state.round + 1));
  state.round += 1;
  state.lr *= cfg.lr_decay;
  const double units = round_comm_units(cfg, fed.arch.dimension(), env.link);
  state.comm_units += units;
  state.energy_j += round_energy(cfg, fed.arch.dimension(), env);
  RoundRecord rec = evaluate(state, fed);
  rec.comm_units = units;
  return rec;
}

TrainingTrace run_training(const Federation& fed, const FlConfig& cfg, const Environment& env,
                           const ConstellationSink& sink) {
  validate(cfg, env);
  TrainingState state = initial_state(fed, cfg);
  TrainingTrace trace;
  trace.rounds.push_back(evaluate(state, fed));

  double grad_sum = trace.rounds.back().grad_norm_sq;
  auto reached = [&](const RoundRecord& rec) {
    if (cfg.stop_rule == StopRule::loss) return rec.loss <= cfg.target_loss;
    return grad_sum / static_cast<double>(rec.round + 1) <= cfg.target_loss;
  };
  if (reached(trace.rounds.back())) {
    trace.converged = true;
    trace.rounds_to_target = 0;
  }
  while (!trace.converged && state.round < cfg.max_rounds) {
    std::vector<modem::Sample> received;
    const bool capture = sink && env.channel.mode == channel::Mode::symbol && cfg.scheme == Scheme::esoafl;
    const RoundRecord rec = run_round(state, fed, cfg, env, capture ? &received : nullptr);
    if (capture) sink(rec.round, received);
    trace.rounds.push_back(rec);
    grad_sum += rec.grad_norm_sq;
    if (reached(rec)) {
      trace.converged = true;
      trace.rounds_to_target = rec.round;
    }
  }
  trace.final_params = state.global;
  return trace;
}

std::vector<convergence::RoundSample> round_sweep(const Federation& fed, const FlConfig& base, const Environment& env,
                                                  const SweepSpec& sweep) {
  struct Cell {
    int h;
    double p;
    std::uint64_t seed;
  };
  std::vector<Cell> cells;
  for (int h : sweep.local_iterations)
    for (double p : sweep.probabilities)
      for (auto s : sweep.seeds) cells.push_back({h, p, s});
  std::sort(cells.begin(), cells.end(), [](const Cell& a, const Cell& b) {
    return std::tie(a.h, a.p, a.seed) < std::tie(b.h, b.p, b.seed);
  });

  std::vector<convergence::RoundSample> out(cells.size());
  const auto n = static_cast<std::ptrdiff_t>(cells.size());
  std::exception_ptr failure;
#pragma omp parallel for schedule(dynamic)
  for (std::ptrdiff_t i = 0; i < n; ++i) {
    const auto& c = cells[static_cast<std::size_t>(i)];
    FlConfig cfg = base;
    cfg.local_iterations = c.h;
    cfg.probability = c.p;
    cfg.seed = c.seed;
    try {
      const auto trace = run_training(fed, cfg, env);
      const double rounds = trace.converged ? trace.rounds_to_target : base.max_rounds + 1;
      out[static_cast<std::size_t>(i)] = {c.h, c.p, rounds, c.seed, base.target_loss};
    } catch (...) {
#pragma omp critical(esoafl_sweep_failure)
      if (!failure) failure = std::current_exception();
    }
  }
  if (failure) std::rethrow_exception(failure);
  return out;
}

}  // namespace esoafl::fl
