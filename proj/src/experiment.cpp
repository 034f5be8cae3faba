#include "esoafl/experiment.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <iomanip>
#include <ostream>
#include <set>
#include <sstream>

#include <nlohmann/json.hpp>

#include "esoafl/errors.hpp"
#include "esoafl/modem.hpp"
#include "esoafl/quantizer.hpp"

namespace esoafl::experiment {

using nlohmann::json;

namespace {

// Reads one JSON object, remembering which keys were consumed so leftovers can be
// reported as unknown fields.
class Section {
 public:
  Section(const json& j, std::string path) : j_(j), path_(std::move(path)) {
    if (!j_.is_object()) throw ConfigError(path_.empty() ? "config must be a JSON object" : path_ + " must be an object");
  }

  template <class T>
  void read(const std::string& key, T& out) {
    used_.insert(key);
    if (!j_.contains(key)) return;
    try {
      out = j_.at(key).get<T>();
    } catch (const json::exception&) {
      throw ConfigError(field(key) + " has the wrong type");
    }
  }

  template <class T>
  void read_optional(const std::string& key, std::optional<T>& out) {
    used_.insert(key);
    if (!j_.contains(key) || j_.at(key).is_null()) return;
    T v{};
    read(key, v);
    out = v;
  }

  [[nodiscard]] bool has(const std::string& key) const { return j_.contains(key); }

  Section sub(const std::string& key) {
    used_.insert(key);
    static const json empty = json::object();
    return Section(j_.contains(key) ? j_.at(key) : empty, field(key));
  }

  const json& raw(const std::string& key) {
    used_.insert(key);
    return j_.at(key);
  }

  [[nodiscard]] const std::string& path() const { return path_; }
  [[nodiscard]] std::string field(const std::string& key) const { return path_.empty() ? key : path_ + "." + key; }

  void finish() const {
    for (auto it = j_.begin(); it != j_.end(); ++it)
      if (!used_.count(it.key())) throw ConfigError("unknown config field '" + field(it.key()) + "'");
  }

 private:
  const json& j_;
  std::string path_;
  std::set<std::string> used_;
};

void require(bool ok, const std::string& field, const std::string& why) {
  if (!ok) throw ConfigError("config field '" + field + "' " + why);
}

std::string hex64(std::uint64_t v) {
  std::ostringstream os;
  os << std::hex << std::setw(16) << std::setfill('0') << v;
  return os.str();
}

std::uint64_t fnv1a(const std::string& s) {
  std::uint64_t h = 0xcbf29ce484222325ULL;
  for (unsigned char c : s) {
    h ^= c;
    h *= 0x100000001b3ULL;
  }
  return h;
}

channel::Mode mode_from_string(const std::string& s) {
  if (s == "ideal") return channel::Mode::ideal;
  if (s == "statistical") return channel::Mode::statistical;
  if (s == "symbol") return channel::Mode::symbol;
  throw ConfigError("config field 'channel.mode' must be ideal, statistical or symbol");
}

std::string to_string(channel::Mode m) {
  switch (m) {
    case channel::Mode::ideal:
      return "ideal";
    case channel::Mode::statistical:
      return "statistical";
    case channel::Mode::symbol:
      return "symbol";
  }
  return "?";
}

learnkit::ModelKind model_from_string(const std::string& s) {
  if (s == "logistic") return learnkit::ModelKind::logistic;
  if (s == "mlp") return learnkit::ModelKind::mlp;
  throw ConfigError("config field 'data.model' must be logistic or mlp");
}

convergence::FitWeighting weighting_from_string(const std::string& s) {
  if (s == "relative") return convergence::FitWeighting::relative;
  if (s == "absolute") return convergence::FitWeighting::absolute;
  throw ConfigError("config field 'fit.weighting' must be relative or absolute");
}

std::string to_string(convergence::FitWeighting w) {
  return w == convergence::FitWeighting::absolute ? "absolute" : "relative";
}

std::string to_string(learnkit::ModelKind m) { return m == learnkit::ModelKind::mlp ? "mlp" : "logistic"; }

json comm_to_json(const energy::CommParams& c) {
  return {{"rho", c.rho},
          {"rate", c.rate},
          {"symbol_time", c.symbol_time},
          {"bandwidth", c.bandwidth},
          {"parallel_symbols", c.parallel_symbols},
          {"dimension", c.dimension}};
}

json comp_to_json(const energy::CompParams& c) {
  return {{"static_power", c.static_power}, {"mem_coeff", c.mem_coeff}, {"core_coeff", c.core_coeff},
          {"mem_time", c.mem_time},         {"core_time", c.core_time}, {"f_core", c.f_core},
          {"v_core", c.v_core},             {"f_mem", c.f_mem},         {"static_time", c.static_time}};
}

energy::EnergyProfile read_profile(Section s, const std::string& name, energy::EnergyProfile base) {
  base.name = name;
  {
    Section c = s.sub("comm");
    c.read("rho", base.comm.rho);
    c.read("rate", base.comm.rate);
    c.read("symbol_time", base.comm.symbol_time);
    c.read("bandwidth", base.comm.bandwidth);
    c.read("parallel_symbols", base.comm.parallel_symbols);
    c.read("dimension", base.comm.dimension);
    c.finish();
    require(base.comm.rho > 0 && base.comm.rate > 0 && base.comm.symbol_time > 0 && base.comm.bandwidth > 0 &&
                base.comm.parallel_symbols > 0,
            c.path(), "must hold positive values");
  }
  {
    Section c = s.sub("comp");
    c.read("static_power", base.comp.static_power);
    c.read("mem_coeff", base.comp.mem_coeff);
    c.read("core_coeff", base.comp.core_coeff);
    c.read("mem_time", base.comp.mem_time);
    c.read("core_time", base.comp.core_time);
    c.read("f_core", base.comp.f_core);
    c.read("v_core", base.comp.v_core);
    c.read("f_mem", base.comp.f_mem);
    c.read("static_time", base.comp.static_time);
    c.finish();
    require(base.comp.f_core > 0 && base.comp.f_mem > 0 && energy::comp_energy(base.comp) > 0, c.path(),
            "must give positive power and time");
  }
  s.finish();
  return base;
}

void validate_all(ExperimentConfig& cfg) {
  require(!cfg.tasks.empty(), "task", "must name at least one task");
  require(cfg.threads >= 0, "threads", "must be non-negative");
  const auto& f = cfg.fl;
  require(f.clients >= 1, "fl.clients", "must be at least 1");
  require(f.local_iterations >= 1, "fl.local_iterations", "must be at least 1");
  require(f.max_rounds >= 1, "fl.max_rounds", "must be at least 1");
  require(f.lr > 0, "fl.lr", "must be positive");
  require(f.server_scale > 0, "fl.server_scale", "must be positive");
  require(f.lr_decay > 0 && f.lr_decay <= 1, "fl.lr_decay", "must lie in (0, 1]");
  require(f.bits >= 1 && f.bits <= 16, "fl.bits", "must lie in [1, 16]");
  require(f.target_loss >= 0, "fl.target_loss", "must be non-negative");
  require(f.probability > 0 && f.probability <= 1, "fl.probability", "must lie in (0, 1]");

  const auto& c = cfg.channel;
  require(c.rate > 0, "channel.rate", "must be positive");
  require(c.power_budget > 0, "channel.power_budget", "must be positive");
  require(c.max_probability > 0 && c.max_probability < 1, "channel.max_probability", "must lie in (0, 1)");
  if (f.scheme == fl::Scheme::esoafl && c.mode != channel::Mode::ideal)
    require(f.probability <= c.max_probability * (1 + 1e-12), "fl.probability",
            "exceeds channel.max_probability = " + std::to_string(c.max_probability));
  if (f.scheme == fl::Scheme::esoafl && c.mode == channel::Mode::symbol)
    require(!f.full_precision, "fl.full_precision", "cannot be combined with channel.mode = symbol");

  const auto& d = cfg.data;
  require(d.data.num_classes >= 2, "data.classes", "must be at least 2");
  require(d.data.n_features >= 1, "data.features", "must be at least 1");
  require(d.data.n_samples >= static_cast<std::size_t>(f.clients), "data.samples", "must be at least fl.clients");
  require(d.data.separation >= 0, "data.separation", "must be non-negative");
  require(d.non_iid >= 0 && d.non_iid <= 1, "data.non_iid", "must lie in [0, 1]");
  require(d.batch_size >= 1, "data.batch_size", "must be at least 1");
  require(d.hidden >= 1, "data.hidden", "must be at least 1");

  require(cfg.profiles.count(cfg.profile) == 1, "energy.profile", "names an unknown profile '" + cfg.profile + "'");

  for (int h : cfg.sweep.local_iterations) require(h >= 1, "sweep.local_iterations", "entries must be >= 1");
  for (double p : cfg.sweep.probabilities)
    require(p > 0 && p <= c.max_probability * (1 + 1e-12), "sweep.probabilities",
            "entries must lie in (0, channel.max_probability]");
  require(!cfg.sweep.local_iterations.empty() && !cfg.sweep.probabilities.empty() && !cfg.sweep.seeds.empty(), "sweep",
          "needs at least one H, p_b and seed");

  if (cfg.fit.q) require(*cfg.fit.q >= 0, "fit.q", "must be non-negative");
  require(cfg.fit.q_trials >= 10000, "fit.q_trials", "must be at least 10000");

  const auto& j = cfg.jcp;
  require(j.options.step0 > 0 && j.options.step0 <= 1, "jcp.step0", "must lie in (0, 1]");
  require(j.options.decay > 0, "jcp.decay", "must be positive");
  require(j.options.stop > 0, "jcp.stop", "must be positive");
  require(j.options.max_iterations >= 1, "jcp.max_iterations", "must be at least 1");
  require(j.p_min > 0 && j.p_min < c.max_probability, "jcp.p_min", "must lie in (0, channel.max_probability)");
  require(j.h_min >= 1 && j.h_max >= j.h_min, "jcp.h_max", "must satisfy 1 <= h_min <= h_max");
  require(j.grid_step > 0, "jcp.grid_step", "must be positive");
  if (j.constants)
    require(j.constants->a0 >= 0 && j.constants->b0 >= 0 && j.constants->c0 >= 0 && j.constants->q >= 0,
            "jcp.constants", "must be non-negative");
  require(cfg.phy.trials >= 100, "phy.trials", "must be at least 100");
}

void write_json(const std::filesystem::path& path, const json& j) {
  std::ofstream out(path);
  if (!out) throw Error("cannot write " + path.string());
  out << j.dump(2) << '\n';
}

json read_json(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw ConfigError("cannot read " + path.string());
  return json::parse(in);
}

std::string header_line(const ExperimentConfig& cfg) {
  return "# config_hash=" + cfg.hash + ",seed=" + std::to_string(cfg.seed);
}

}  // namespace

std::string to_string(Task t) {
  switch (t) {
    case Task::train:
      return "train";
    case Task::sweep:
      return "sweep";
    case Task::fit:
      return "fit";
    case Task::jcp:
      return "jcp";
    case Task::phy_check:
      return "phy-check";
  }
  return "?";
}

Task task_from_string(const std::string& s) {
  for (Task t : {Task::train, Task::sweep, Task::fit, Task::jcp, Task::phy_check})
    if (to_string(t) == s) return t;
  throw ConfigError("config field 'task' has unknown task '" + s + "'");
}

std::string effective_json(const ExperimentConfig& cfg) {
  json tasks = json::array();
  for (Task t : cfg.tasks) tasks.push_back(to_string(t));
  json profiles = json::object();
  for (const auto& [name, p] : cfg.profiles) profiles[name] = {{"comm", comm_to_json(p.comm)}, {"comp", comp_to_json(p.comp)}};
  json jcp_constants = nullptr;
  if (cfg.jcp.constants)
    jcp_constants = {{"a0", cfg.jcp.constants->a0},
                     {"b0", cfg.jcp.constants->b0},
                     {"c0", cfg.jcp.constants->c0},
                     {"q", cfg.jcp.constants->q}};
  const json j = {
      {"task", tasks},
      {"seed", cfg.seed},
      {"threads", cfg.threads},
      {"fl",
       {{"clients", cfg.fl.clients},
        {"local_iterations", cfg.fl.local_iterations},
        {"max_rounds", cfg.fl.max_rounds},
        {"lr", cfg.fl.lr},
        {"server_scale", cfg.fl.server_scale},
        {"lr_decay", cfg.fl.lr_decay},
        {"bits", cfg.fl.bits},
        {"full_precision", cfg.fl.full_precision},
        {"probability", cfg.fl.probability},
        {"scheme", fl::to_string(cfg.fl.scheme)},
        {"target_loss", cfg.fl.target_loss},
        {"stop_rule", cfg.fl.stop_rule == fl::StopRule::loss ? "loss" : "grad_norm"}}},
      {"data",
       {{"model", to_string(cfg.data.model)},
        {"hidden", cfg.data.hidden},
        {"classes", cfg.data.data.num_classes},
        {"features", cfg.data.data.n_features},
        {"samples", cfg.data.data.n_samples},
        {"separation", cfg.data.data.separation},
        {"data_seed", cfg.data.data.seed},
        {"test_samples", cfg.data.n_test},
        {"non_iid", cfg.data.non_iid},
        {"batch_size", cfg.data.batch_size}}},
      {"channel",
       {{"rate", cfg.channel.rate},
        {"power_budget", cfg.channel.power_budget},
        {"max_probability", cfg.channel.max_probability},
        {"snr_db", cfg.channel.snr_db},
        {"mode", to_string(cfg.channel.mode)}}},
      {"energy",
       {{"profile", cfg.profile},
        {"profiles", profiles},
        {"link",
         {{"bits_per_symbol", cfg.link.bits_per_symbol},
          {"value_bits", cfg.link.value_bits},
          {"tx_power", cfg.link.tx_power}}}}},
      {"sweep",
       {{"local_iterations", cfg.sweep.local_iterations},
        {"probabilities", cfg.sweep.probabilities},
        {"seeds", cfg.sweep.seeds}}},
      {"fit", {{"q", cfg.fit.q ? json(*cfg.fit.q) : json(nullptr)}, {"q_trials", cfg.fit.q_trials},
               {"weighting", to_string(cfg.fit.weighting)}}},
      {"jcp",
       {{"constants", jcp_constants},
        {"step0", cfg.jcp.options.step0},
        {"decay", cfg.jcp.options.decay},
        {"stop", cfg.jcp.options.stop},
        {"max_iterations", cfg.jcp.options.max_iterations},
        {"p_min", cfg.jcp.p_min},
        {"h_min", cfg.jcp.h_min},
        {"h_max", cfg.jcp.h_max},
        {"grid_step", cfg.jcp.grid_step}}},
      {"phy", {{"trials", cfg.phy.trials}}},
      {"dump_constellation", cfg.dump_constellation},
  };
  return j.dump();
}

void finalize(ExperimentConfig& cfg) {
  validate_all(cfg);
  // The output directory is where results go, not what they are; it stays out of the hash.
  cfg.hash = hex64(fnv1a(effective_json(cfg)));
}

ExperimentConfig parse_config(const std::string& text) {
  ExperimentConfig cfg;
  for (auto& p : energy::builtin_profiles()) cfg.profiles[p.name] = p;

  const bool blank = std::all_of(text.begin(), text.end(), [](unsigned char c) { return std::isspace(c); });
  json root = json::object();
  if (!blank) {
    try {
      root = json::parse(text);
    } catch (const json::parse_error& e) {
      throw ConfigError(std::string("config is not valid JSON: ") + e.what());
    }
  }
  Section top(root, "");

  if (top.has("task")) {
    const json& t = top.raw("task");
    cfg.tasks.clear();
    if (t.is_string()) {
      std::stringstream ss(t.get<std::string>());
      std::string item;
      while (std::getline(ss, item, ',')) cfg.tasks.push_back(task_from_string(item));
    } else if (t.is_array()) {
      for (const auto& item : t) {
        if (!item.is_string()) throw ConfigError("config field 'task' entries must be strings");
        cfg.tasks.push_back(task_from_string(item.get<std::string>()));
      }
    } else {
      throw ConfigError("config field 'task' must be a string or a list of strings");
    }
  }
  top.read("seed", cfg.seed);
  std::string output = cfg.output.string();
  top.read("output", output);
  cfg.output = output;
  top.read("threads", cfg.threads);
  top.read("dump_constellation", cfg.dump_constellation);

  {
    Section s = top.sub("fl");
    s.read("clients", cfg.fl.clients);
    s.read("local_iterations", cfg.fl.local_iterations);
    s.read("max_rounds", cfg.fl.max_rounds);
    s.read("lr", cfg.fl.lr);
    s.read("server_scale", cfg.fl.server_scale);
    s.read("lr_decay", cfg.fl.lr_decay);
    s.read("bits", cfg.fl.bits);
    s.read("full_precision", cfg.fl.full_precision);
    s.read("probability", cfg.fl.probability);
    s.read("target_loss", cfg.fl.target_loss);
    std::string scheme = fl::to_string(cfg.fl.scheme);
    s.read("scheme", scheme);
    try {
      cfg.fl.scheme = fl::scheme_from_string(scheme);
    } catch (const ConfigError&) {
      throw ConfigError("config field 'fl.scheme' must be esoafl, fedavg or fedpaq");
    }
    std::string stop = "loss";
    s.read("stop_rule", stop);
    if (stop == "loss") cfg.fl.stop_rule = fl::StopRule::loss;
    else if (stop == "grad_norm") cfg.fl.stop_rule = fl::StopRule::grad_norm;
    else throw ConfigError("config field 'fl.stop_rule' must be loss or grad_norm");
    s.finish();
  }
  {
    Section s = top.sub("data");
    std::string model = to_string(cfg.data.model);
    s.read("model", model);
    cfg.data.model = model_from_string(model);
    s.read("hidden", cfg.data.hidden);
    s.read("classes", cfg.data.data.num_classes);
    s.read("features", cfg.data.data.n_features);
    s.read("samples", cfg.data.data.n_samples);
    s.read("separation", cfg.data.data.separation);
    s.read("data_seed", cfg.data.data.seed);
    s.read("test_samples", cfg.data.n_test);
    s.read("non_iid", cfg.data.non_iid);
    s.read("batch_size", cfg.data.batch_size);
    s.finish();
  }
  {
    Section s = top.sub("channel");
    s.read("rate", cfg.channel.rate);
    s.read("power_budget", cfg.channel.power_budget);
    s.read("max_probability", cfg.channel.max_probability);
    s.read("snr_db", cfg.channel.snr_db);
    std::string mode = to_string(cfg.channel.mode);
    s.read("mode", mode);
    cfg.channel.mode = mode_from_string(mode);
    s.finish();
  }
  {
    Section s = top.sub("energy");
    s.read("profile", cfg.profile);
    if (s.has("profiles")) {
      Section table = s.sub("profiles");
      const json& raw = s.raw("profiles");
      for (auto it = raw.begin(); it != raw.end(); ++it) {
        const auto base = cfg.profiles.count(it.key()) ? cfg.profiles.at(it.key()) : energy::builtin_profile("small-learner");
        cfg.profiles[it.key()] = read_profile(table.sub(it.key()), it.key(), base);
      }
      table.finish();
    }
    Section link = s.sub("link");
    link.read("bits_per_symbol", cfg.link.bits_per_symbol);
    link.read("value_bits", cfg.link.value_bits);
    link.read("tx_power", cfg.link.tx_power);
    link.finish();
    require(cfg.link.bits_per_symbol > 0 && cfg.link.value_bits > 0 && cfg.link.tx_power > 0, "energy.link",
            "must hold positive values");
    s.finish();
  }
  {
    Section s = top.sub("sweep");
    s.read("local_iterations", cfg.sweep.local_iterations);
    s.read("probabilities", cfg.sweep.probabilities);
    s.read("seeds", cfg.sweep.seeds);
    s.finish();
  }
  {
    Section s = top.sub("fit");
    s.read_optional("q", cfg.fit.q);
    s.read("q_trials", cfg.fit.q_trials);
    std::string weighting = to_string(cfg.fit.weighting);
    s.read("weighting", weighting);
    cfg.fit.weighting = weighting_from_string(weighting);
    s.finish();
  }
  {
    Section s = top.sub("jcp");
    if (s.has("constants") && !s.raw("constants").is_null()) {
      Section c = s.sub("constants");
      convergence::RoundModelConstants k;
      c.read("a0", k.a0);
      c.read("b0", k.b0);
      c.read("c0", k.c0);
      c.read("q", k.q);
      c.finish();
      cfg.jcp.constants = k;
    } else if (s.has("constants")) {
      s.raw("constants");
    }
    s.read("step0", cfg.jcp.options.step0);
    s.read("decay", cfg.jcp.options.decay);
    s.read("stop", cfg.jcp.options.stop);
    s.read("max_iterations", cfg.jcp.options.max_iterations);
    s.read("p_min", cfg.jcp.p_min);
    s.read("h_min", cfg.jcp.h_min);
    s.read("h_max", cfg.jcp.h_max);
    s.read("grid_step", cfg.jcp.grid_step);
    s.finish();
  }
  {
    Section s = top.sub("phy");
    s.read("trials", cfg.phy.trials);
    s.finish();
  }
  top.finish();
  finalize(cfg);
  return cfg;
}

ExperimentConfig load_config(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw ConfigError("cannot open config file " + path.string());
  std::stringstream ss;
  ss << in.rdbuf();
  return parse_config(ss.str());
}

fl::Environment make_environment(const ExperimentConfig& cfg) {
  fl::Environment env;
  env.channel = channel::config_from_targets(cfg.channel.rate, cfg.channel.power_budget, cfg.channel.max_probability,
                                             cfg.channel.snr_db, cfg.channel.mode);
  const auto& prof = cfg.profiles.at(cfg.profile);
  env.comm = prof.comm;
  env.comp = prof.comp;
  env.link = cfg.link;
  return env;
}

jcp::JcpProblem make_jcp_problem(const ExperimentConfig& cfg, const convergence::RoundModelConstants& c) {
  const auto env = make_environment(cfg);
  const auto& prof = cfg.profiles.at(cfg.profile);
  jcp::JcpProblem p;
  p.a0 = c.a0;
  p.b0 = c.b0;
  p.c0 = c.c0;
  p.q = c.q;
  p.rho = env.channel.tx_scale;
  p.rate = env.channel.rate;
  // Airtime and compute energy of the profile's reference learner.
  p.comm_time = energy::comm_time(prof.comm.dimension, prof.comm.parallel_symbols, prof.comm.symbol_time);
  p.comp_energy = energy::comp_energy(prof.comp);
  p.p_min = cfg.jcp.p_min;
  p.p_max = channel::max_probability(env.channel);
  p.h_min = cfg.jcp.h_min;
  p.h_max = cfg.jcp.h_max;
  return p;
}

double estimate_q(const ExperimentConfig& cfg) {
  if (cfg.fit.q) return *cfg.fit.q;
  learnkit::Architecture arch{cfg.data.model, cfg.data.data.n_features,
                              static_cast<std::size_t>(cfg.data.data.num_classes), cfg.data.hidden};
  quantizer::QEstimateSpec spec;
  spec.bits = cfg.fl.bits;
  spec.regime = quantizer::ScaleRegime::common;
  spec.dimension = arch.dimension();
  spec.clients = cfg.fl.clients;
  spec.trials = cfg.fit.q_trials;
  return quantizer::estimate_q(spec, rng::Key(cfg.seed).child("q-estimate")).q;
}

void write_samples_csv(const std::filesystem::path& path, const std::vector<convergence::RoundSample>& samples,
                       const std::string& header) {
  std::ofstream out(path);
  if (!out) throw Error("cannot write " + path.string());
  out << header << "\nH,p_b,R_observed,seed,eps\n";
  out << std::setprecision(17);
  for (const auto& s : samples)
    out << s.local_iterations << ',' << s.probability << ',' << s.rounds << ',' << s.seed << ',' << s.target_loss
        << '\n';
}

std::vector<convergence::RoundSample> read_samples_csv(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw ConfigError("cannot read sweep samples from " + path.string());
  std::vector<convergence::RoundSample> out;
  std::string line;
  bool header_seen = false;
  while (std::getline(in, line)) {
    if (line.empty() || line[0] == '#') continue;
    if (!header_seen) {
      header_seen = true;
      if (line != "H,p_b,R_observed,seed,eps") throw ConfigError("unexpected sample CSV header in " + path.string());
      continue;
    }
    std::stringstream ss(line);
    convergence::RoundSample s;
    char c1, c2, c3, c4;
    if (!(ss >> s.local_iterations >> c1 >> s.probability >> c2 >> s.rounds >> c3 >> s.seed >> c4 >> s.target_loss))
      throw ConfigError("malformed sample row '" + line + "' in " + path.string());
    out.push_back(s);
  }
  return out;
}

namespace {

struct PipelineState {
  std::optional<std::vector<convergence::RoundSample>> samples;
  std::optional<convergence::RoundModelConstants> constants;
};

bool run_train(const ExperimentConfig& cfg, std::ostream& log) {
  const auto env = make_environment(cfg);
  fl::FlConfig flc = cfg.fl;
  flc.seed = cfg.seed;
  const auto fed = fl::build_federation(cfg.data, flc.clients, cfg.seed);

  std::ofstream constellation;
  fl::ConstellationSink sink;
  if (cfg.dump_constellation) {
    if (cfg.channel.mode != channel::Mode::symbol || flc.scheme != fl::Scheme::esoafl) {
      log << "train: constellation dump needs channel.mode = symbol and scheme = esoafl; skipped\n";
    } else {
      constellation.open(cfg.output / "constellation.csv");
      constellation << header_line(cfg) << "\nround,coord,i,q\n" << std::setprecision(12);
      sink = [&](int round, const std::vector<modem::Sample>& rx) {
        for (std::size_t s = 0; s < rx.size(); ++s)
          constellation << round << ',' << s << ',' << rx[s].i << ',' << rx[s].q << '\n';
      };
    }
  }

  const auto trace = fl::run_training(fed, flc, env, sink);

  std::ofstream csv(cfg.output / "trace.csv");
  csv << header_line(cfg) << "\nround,loss,accuracy,comm_units,energy_j\n" << std::setprecision(12);
  double total_units = 0.0;
  for (const auto& r : trace.rounds) {
    csv << r.round << ',' << r.loss << ',' << r.accuracy << ',' << r.comm_units << ',' << r.energy_j << '\n';
    total_units += r.comm_units;
  }
  const auto& last = trace.rounds.back();
  write_json(cfg.output / "summary.json", {{"config_hash", cfg.hash},
                                           {"seed", cfg.seed},
                                           {"scheme", fl::to_string(flc.scheme)},
                                           {"rounds", last.round},
                                           {"converged", trace.converged},
                                           {"rounds_to_target", trace.rounds_to_target},
                                           {"final_loss", last.loss},
                                           {"final_accuracy", last.accuracy},
                                           {"total_energy_j", last.energy_j},
                                           {"total_comm_units", total_units},
                                           {"model_dimension", fed.arch.dimension()}});
  log << "train: " << fl::to_string(flc.scheme) << ' ' << (trace.converged ? "reached" : "did not reach")
      << " loss " << flc.target_loss << " after " << last.round << " rounds (loss " << last.loss << ", accuracy "
      << last.accuracy << ")\n";
  return trace.converged;
}

bool run_sweep(const ExperimentConfig& cfg, PipelineState& st, std::ostream& log) {
  const auto env = make_environment(cfg);
  fl::FlConfig base = cfg.fl;
  base.scheme = fl::Scheme::esoafl;
  const auto fed = fl::build_federation(cfg.data, base.clients, cfg.seed);
  const auto samples = fl::round_sweep(fed, base, env, {cfg.sweep.local_iterations, cfg.sweep.probabilities, cfg.sweep.seeds});
  write_samples_csv(cfg.output / "sweep.csv", samples, header_line(cfg));
  const auto missed = std::count_if(samples.begin(), samples.end(),
                                    [&](const convergence::RoundSample& s) { return s.rounds > base.max_rounds; });
  log << "sweep: " << samples.size() << " cells, " << missed << " did not reach the target\n";
  st.samples = samples;
  return missed == 0;
}

bool run_fit(const ExperimentConfig& cfg, PipelineState& st, std::ostream& log) {
  if (!st.samples) st.samples = read_samples_csv(cfg.output / "sweep.csv");
  const double q = estimate_q(cfg);
  const auto fit = convergence::fit_constants(*st.samples, q, cfg.fit.weighting);
  st.constants = fit.constants;

  json cells = json::array();
  double worst = 0.0;
  std::map<std::pair<int, double>, std::pair<double, int>> means;
  for (const auto& s : *st.samples) {
    auto& m = means[{s.local_iterations, s.probability}];
    m.first += s.rounds;
    m.second += 1;
  }
  for (const auto& [key, m] : means) {
    const double observed = m.first / m.second;
    const double predicted = convergence::rounds_model(key.first, key.second, fit.constants);
    worst = std::max(worst, std::abs(predicted - observed) / observed);
    cells.push_back({{"H", key.first}, {"p_b", key.second}, {"mean_observed", observed}, {"predicted", predicted}});
  }
  write_json(cfg.output / "fit.json", {{"config_hash", cfg.hash},
                                       {"seed", cfg.seed},
                                       {"a0", fit.constants.a0},
                                       {"b0", fit.constants.b0},
                                       {"c0", fit.constants.c0},
                                       {"q", q},
                                       {"weighting", to_string(cfg.fit.weighting)},
                                       {"residual_norm", fit.residual_norm},
                                       {"iterations", fit.iterations},
                                       {"residual_trace", fit.residual_trace},
                                       {"max_relative_cell_error", worst},
                                       {"cells", cells}});
  log << "fit: A0=" << fit.constants.a0 << " B0=" << fit.constants.b0 << " C0=" << fit.constants.c0 << " q=" << q
      << " (worst cell error " << worst * 100 << "%)\n";
  return true;
}

bool run_jcp(const ExperimentConfig& cfg, PipelineState& st, std::ostream& log) {
  convergence::RoundModelConstants c;
  std::string source;
  if (cfg.jcp.constants) {
    c = *cfg.jcp.constants;
    source = "config";
  } else if (st.constants) {
    c = *st.constants;
    source = "fit";
  } else {
    const json f = read_json(cfg.output / "fit.json");
    c = {f.at("a0").get<double>(), f.at("b0").get<double>(), f.at("c0").get<double>(), f.at("q").get<double>()};
    source = "fit.json";
  }
  const auto prob = make_jcp_problem(cfg, c);
  const auto sol = jcp::solve_jcp(prob, cfg.jcp.options);
  const auto grid = jcp::grid_search(prob, cfg.jcp.grid_step);
  const double at_max = jcp::objective({prob.p_max, static_cast<double>(sol.h)}, prob);
  const double gap = (sol.objective - grid.objective) / grid.objective;
  write_json(cfg.output / "jcp.json", {{"config_hash", cfg.hash},
                                       {"seed", cfg.seed},
                                       {"constants_source", source},
                                       {"a0", c.a0},
                                       {"b0", c.b0},
                                       {"c0", c.c0},
                                       {"q", c.q},
                                       {"p_b", sol.p},
                                       {"H", sol.h},
                                       {"H_relaxed", sol.h_relaxed},
                                       {"objective", sol.objective},
                                       {"iterations", sol.iterations},
                                       {"converged", sol.converged},
                                       {"grid", {{"p_b", grid.p}, {"H", grid.h}, {"objective", grid.objective}}},
                                       {"relative_gap_to_grid", gap},
                                       {"p_b_max", prob.p_max},
                                       {"objective_at_p_b_max", at_max},
                                       {"optimized_over_max_ratio", sol.objective / at_max}});
  log << "jcp: p_b*=" << sol.p << " H*=" << sol.h << " energy " << sol.objective << " J (grid " << grid.objective
      << " J at p_b=" << grid.p << ", H=" << grid.h << "); ratio to p_b^max " << sol.objective / at_max << '\n';
  return sol.converged;
}

bool run_phy_check(const ExperimentConfig& cfg, std::ostream& log) {
  const auto env = make_environment(cfg);
  const std::size_t trials = cfg.phy.trials;
  const rng::Key root = rng::Key(cfg.seed).child("phy-check");
  json report = {{"config_hash", cfg.hash}, {"seed", cfg.seed}, {"trials", trials}};
  bool ok = true;

  // Over-the-air mean and variance at the configured operating point.
  {
    const int k = cfg.fl.clients;
    const std::size_t d = 4;
    auto s = root.child("inputs").stream();
    std::vector<std::vector<double>> in(static_cast<std::size_t>(k), std::vector<double>(d));
    for (auto& x : in)
      for (double& v : x) v = s.normal();
    auto ch = env.channel;
    ch.mode = channel::Mode::statistical;
    const double p = std::min(cfg.fl.probability, channel::max_probability(ch));
    const auto pol = channel::make_policy(ch, p);
    const auto mean = channel::exact_mean(in);
    const auto var = channel::air_variance(in, p, ch);
    std::vector<double> m(d, 0.0), m2(d, 0.0);
    for (std::size_t t = 0; t < trials; ++t) {
      const auto out = channel::air_aggregate(in, ch, pol, root.child("air").child(t));
      for (std::size_t j = 0; j < d; ++j) {
        m[j] += out[j];
        m2[j] += out[j] * out[j];
      }
    }
    double worst_z = 0.0, worst_var = 0.0;
    const auto n = static_cast<double>(trials);
    for (std::size_t j = 0; j < d; ++j) {
      const double mu = m[j] / n;
      const double v = m2[j] / n - mu * mu;
      worst_z = std::max(worst_z, std::abs(mu - mean[j]) / std::sqrt(var[j] / n));
      worst_var = std::max(worst_var, std::abs(v / var[j] - 1.0));
    }
    // Variance tolerance follows the sampling error of a variance estimate.
    const double var_tol = std::max(0.05, 5.0 * std::sqrt(2.0 / n) * 3.0);
    const bool pass = worst_z <= 4.0 && worst_var <= var_tol;
    ok = ok && pass;
    report["air_aggregate"] = {{"p_b", p},
                               {"max_mean_z", worst_z},
                               {"max_relative_variance_error", worst_var},
                               {"variance_tolerance", var_tol},
                               {"pass", pass}};
  }

  // Noise-free symbol path must be exact to one ADC quantum for every small input.
  {
    std::size_t cases = 0, bad = 0;
    const double rho = env.channel.tx_scale;
    for (int k = 1; k <= 3; ++k)
      for (int b = 1; b <= 3; ++b) {
        const quantizer::QuantScale scale{1.0, b};
        const auto adc = modem::make_adc(k, b, rho, 0.0);
        const double quantum = adc.step() / std::sqrt(rho) * scale.step() / k;
        const std::uint32_t levels = 1u << b;
        std::uint64_t combos = 1;
        for (int i = 0; i < k; ++i) combos *= levels;
        auto noise = rng::Key(0).stream();
        for (std::uint64_t c = 0; c < combos; ++c) {
          std::vector<modem::IqSymbol> syms;
          double truth = 0.0;
          std::uint64_t rest = c;
          for (int i = 0; i < k; ++i) {
            const auto idx = static_cast<std::uint32_t>(rest % levels);
            rest /= levels;
            auto sym = modem::map_to_symbol(idx, idx, b);
            sym.i *= std::sqrt(rho);
            sym.q *= std::sqrt(rho);
            syms.push_back(sym);
            truth += scale.value(idx) / k;
          }
          const auto out = modem::decode_aggregate(modem::adc_sample(modem::superpose(syms, 0.0, noise), adc), adc,
                                                   {k, 1.0, rho, scale});
          ++cases;
          if (std::abs(out.i - truth) > quantum || out.saturated) ++bad;
        }
      }
    ok = ok && bad == 0;
    report["modem_noise_free"] = {{"cases", cases}, {"failures", bad}, {"pass", bad == 0}};
  }

  // Average transmit power of the inversion policy against the budget.
  {
    auto s = root.child("power").stream();
    const double p = channel::max_probability(env.channel);
    const auto pol = channel::make_policy(env.channel, p);
    double sum = 0.0;
    const std::size_t n = std::max<std::size_t>(trials * 10, 100000);
    for (std::size_t i = 0; i < n; ++i)
      sum += std::norm(channel::tx_factor(channel::draw_coefficient(env.channel.rate, s), pol.threshold,
                                          env.channel.tx_scale));
    const double sampled = sum / static_cast<double>(n);
    const double closed = energy::comm_power(p, env.channel.tx_scale, env.channel.rate, true);
    const bool pass = sampled <= env.channel.power_budget;
    ok = ok && pass;
    report["policy_power"] = {{"p_b", p},
                              {"sampled_mean_power_w", sampled},
                              {"closed_form_power_w", closed},
                              {"sampled_over_closed_form", sampled / closed},
                              {"power_budget_w", env.channel.power_budget},
                              {"pass", pass}};
  }

  report["pass"] = ok;
  write_json(cfg.output / "phy_check.json", report);
  log << "phy-check: " << (ok ? "all invariants hold" : "invariant violated, see phy_check.json") << '\n';
  return ok;
}

}  // namespace

RunReport run(const ExperimentConfig& cfg, std::ostream& log) {
  std::filesystem::create_directories(cfg.output);
  PipelineState st;
  RunReport report;
  for (Task t : cfg.tasks) {
    bool ok = false;
    switch (t) {
      case Task::train:
        ok = run_train(cfg, log);
        break;
      case Task::sweep:
        ok = run_sweep(cfg, st, log);
        break;
      case Task::fit:
        ok = run_fit(cfg, st, log);
        break;
      case Task::jcp:
        ok = run_jcp(cfg, st, log);
        break;
      case Task::phy_check:
        ok = run_phy_check(cfg, log);
        break;
    }
    if (!ok) report.notes.push_back(to_string(t) + " did not converge");
    report.ok = report.ok && ok;
  }
  return report;
}

}  // namespace esoafl::experiment
