#ifndef MIMIC_SIG_EXPERIMENT_HPP_
#define MIMIC_SIG_EXPERIMENT_HPP_

// Experiment specs (JSON), presets, and the per-seed run layout:
//   <output_dir>/<name>/<seed>/{config.json, metrics.csv, checkpoints/, report.json}
//   <output_dir>/<name>/{aggregate.csv, aggregate.json}

#include <chrono>
#include <cstdint>
#include <filesystem>
#include <ostream>
#include <set>
#include <string>
#include <vector>

#include <json.hpp>

#include "mimic_sig/core.hpp"
#include "mimic_sig/evolution.hpp"
#include "mimic_sig/gridworld.hpp"
#include "mimic_sig/marl.hpp"
#include "mimic_sig/metrics.hpp"
#include "mimic_sig/nnet.hpp"
#include "mimic_sig/signal_game.hpp"
#include "mimic_sig/team.hpp"

namespace mimic_sig::experiment {

using nlohmann::json;

enum class Mode { kTheory, kEvolve, kTrainRl, kEval, kPlot };
// kAny skips the alphabet check (signal-free or hand-written alphabets).
enum class Overlap { kAny, kFull, kPartial, kNone };

inline const char* to_string(Mode m) {
  switch (m) {
    case Mode::kTheory: return "theory";
    case Mode::kEvolve: return "evolve";
    case Mode::kTrainRl: return "train-rl";
    case Mode::kEval: return "eval";
    case Mode::kPlot: return "plot";
  }
  return "?";
}

inline const char* to_string(Overlap o) {
  switch (o) {
    case Overlap::kAny: return "any";
    case Overlap::kFull: return "full";
    case Overlap::kPartial: return "partial";
    case Overlap::kNone: return "none";
  }
  return "?";
}

inline Mode parse_mode(const std::string& s, const std::string& path = "$.mode") {
  for (Mode m : {Mode::kTheory, Mode::kEvolve, Mode::kTrainRl, Mode::kEval, Mode::kPlot}) {
    if (s == to_string(m)) return m;
  }
  throw ConfigError("unknown mode '" + s + "' (theory|evolve|train-rl|eval|plot)", path);
}

inline Overlap parse_overlap(const std::string& s, const std::string& path = "$.overlap") {
  for (Overlap o : {Overlap::kAny, Overlap::kFull, Overlap::kPartial, Overlap::kNone}) {
    if (s == to_string(o)) return o;
  }
  throw ConfigError("unknown overlap '" + s + "' (full|partial|none|any)", path);
}

struct TheorySettings {
  game::GameConfig game = game::GameConfig::make(3, 6, 3, 0.5);
  int resolution = 10;  // simplex grid when exhaustive enumeration is too large
};

struct ReportSettings {
  int final_window = 10;
  double align_threshold = 0.0;
  int align_sustain = 1;
  int baseline_genomes = 64;     // evolve: random-genome baseline size
  int baseline_iterations = 20;  // train-rl: random-policy baseline windows
  int eval_episodes = 100;
};

struct ExperimentSpec {
  std::string name = "run";
  std::string preset;  // informational; empty when built from scratch
  Mode mode = Mode::kEvolve;
  Overlap overlap = Overlap::kAny;
  grid::GridConfig env;
  evo::EvoConfig evo;  // env and seed come from the spec
  marl::RlConfig rl;   // env and seed come from the spec
  TheorySettings theory;
  ReportSettings report;
  std::vector<std::uint64_t> seeds{0};
  std::string output_dir = "runs";
  std::string checkpoint;  // eval input

  evo::EvoConfig evo_for(std::uint64_t seed) const {
    evo::EvoConfig c = evo;
    c.env = env;
    c.seed = seed;
    return c;
  }

  marl::RlConfig rl_for(std::uint64_t seed) const {
    marl::RlConfig c = rl;
    c.env = env;
    c.seed = seed;
    return c;
  }

  void validate() const;
};

// ---- overlap ----

inline std::size_t intersection_size(const std::vector<int>& a, const std::vector<int>& b) {
  const std::set<int> sb(b.begin(), b.end());
  std::size_t n = 0;
  for (int s : std::set<int>(a.begin(), a.end())) n += sb.count(s);
  return n;
}

inline void check_overlap(Overlap o, const grid::GridConfig& env) {
  const auto& A = env.agent_signals;
  const auto& R = env.resource_signals;
  const std::size_t both = intersection_size(A, R);
  switch (o) {
    case Overlap::kAny:
      return;
    case Overlap::kFull:
      if (std::set<int>(A.begin(), A.end()) != std::set<int>(R.begin(), R.end())) {
        throw ConfigError("overlap 'full' needs agent_signals == resource_signals", "$.overlap");
      }
      return;
    case Overlap::kPartial:
      if (both != 1) {
        throw ConfigError("overlap 'partial' needs exactly one shared symbol, found " + std::to_string(both),
                          "$.overlap");
      }
      return;
    case Overlap::kNone:
      if (both != 0) {
        throw ConfigError("overlap 'none' needs disjoint alphabets, found " + std::to_string(both) + " shared",
                          "$.overlap");
      }
      return;
  }
}

inline void ExperimentSpec::validate() const {
  if (name.empty() || name.find_first_not_of("abcdefghijklmnopqrstuvwxyzABCDEFGHIJKLMNOPQRSTUVWXYZ0123456789_.-") !=
                          std::string::npos || name == "." || name == "..") {
    throw ConfigError("name must be non-empty and use only [A-Za-z0-9_.-]", "$.name");
  }
  if (seeds.empty()) throw ConfigError("at least one seed is required", "$.seeds");
  if (std::set<std::uint64_t>(seeds.begin(), seeds.end()).size() != seeds.size()) {
    throw ConfigError("seeds must be distinct", "$.seeds");
  }
  if (output_dir.empty()) throw ConfigError("output_dir must be non-empty", "$.output_dir");
  env.validate();
  check_overlap(overlap, env);
  evo_for(0).validate();
  rl_for(0).validate();
  theory.game.validate();
  if (theory.resolution < 1) throw ConfigError("resolution must be >= 1", "$.theory.resolution");
  if (report.final_window < 1) throw ConfigError("final_window must be >= 1", "$.report.final_window");
  if (report.align_sustain < 1) throw ConfigError("align_sustain must be >= 1", "$.report.align_sustain");
  if (report.baseline_genomes < 1) throw ConfigError("baseline_genomes must be >= 1", "$.report.baseline_genomes");
  if (report.baseline_iterations < 1) {
    throw ConfigError("baseline_iterations must be >= 1", "$.report.baseline_iterations");
  }
  if (report.eval_episodes < 1) throw ConfigError("eval_episodes must be >= 1", "$.report.eval_episodes");
  if (mode == Mode::kEval && checkpoint.empty()) throw ConfigError("eval needs a checkpoint path", "$.checkpoint");
}

// ---- JSON reading ----

namespace detail {

// Reads the keys of one JSON object, remembering which were consumed so
// the rest can be rejected as unknown.
class ObjectReader {
 public:
  ObjectReader(const json& j, std::string path) : j_(j), path_(std::move(path)) {
    if (!j_.is_object()) throw ConfigError("expected an object", path_);
  }

  bool has(const std::string& key) const { return j_.contains(key); }
  std::string path(const std::string& key) const { return path_ + "." + key; }

  const json* take(const std::string& key) {
    seen_.insert(key);
    auto it = j_.find(key);
    return it == j_.end() ? nullptr : &*it;
  }

  void read(const std::string& key, int& out) {
    if (const json* v = take(key)) {
      if (!v->is_number_integer()) throw ConfigError("expected an integer", path(key));
      const auto x = v->get<std::int64_t>();
      if (x < std::numeric_limits<int>::min() || x > std::numeric_limits<int>::max()) {
        throw ConfigError("integer out of range", path(key));
      }
      out = static_cast<int>(x);
    }
  }
  void read(const std::string& key, std::int64_t& out) {
    if (const json* v = take(key)) {
      if (!v->is_number_integer()) throw ConfigError("expected an integer", path(key));
      out = v->get<std::int64_t>();
    }
  }
  void read(const std::string& key, double& out) {
    if (const json* v = take(key)) {
      if (!v->is_number()) throw ConfigError("expected a number", path(key));
      out = v->get<double>();
    }
  }
  void read(const std::string& key, bool& out) {
    if (const json* v = take(key)) {
      if (!v->is_boolean()) throw ConfigError("expected true or false", path(key));
      out = v->get<bool>();
    }
  }
  void read(const std::string& key, std::string& out) {
    if (const json* v = take(key)) {
      if (!v->is_string()) throw ConfigError("expected a string", path(key));
      out = v->get<std::string>();
    }
  }
  void read(const std::string& key, std::vector<int>& out) {
    if (const json* v = take(key)) {
      if (!v->is_array()) throw ConfigError("expected an array of integers", path(key));
      std::vector<int> tmp;
      for (std::size_t i = 0; i < v->size(); ++i) {
        if (!(*v)[i].is_number_integer()) {
          throw ConfigError("expected an integer", path(key) + "[" + std::to_string(i) + "]");
        }
        tmp.push_back((*v)[i].get<int>());
      }
      out = std::move(tmp);
    }
  }

  void finish() const {
    for (auto it = j_.begin(); it != j_.end(); ++it) {
      if (!seen_.count(it.key())) throw ConfigError("unknown key", path(it.key()));
    }
  }

 private:
  const json& j_;
  std::string path_;
  std::set<std::string> seen_;
};

inline std::uint64_t read_seed(const json& v, const std::string& path) {
  if (!v.is_number_integer() || (v.is_number_integer() && !v.is_number_unsigned() && v.get<std::int64_t>() < 0)) {
    throw ConfigError("seed must be a non-negative integer", path);
  }
  return v.get<std::uint64_t>();
}

inline void read_env(const json& j, grid::GridConfig& e) {
  ObjectReader r(j, "$.env");
  r.read("width", e.width);
  r.read("height", e.height);
  r.read("episode_len", e.episode_len);
  r.read("reward_collect", e.reward_collect);
  r.read("step_penalty", e.step_penalty);
  r.read("alphabet_size", e.alphabet_size);
  r.read("agent_signals", e.agent_signals);
  r.read("resource_signals", e.resource_signals);
  r.read("p_res", e.p_res);
  r.read("v_res", e.v_res);
  r.read("v_agent", e.v_agent);
  r.read("n_resources", e.n_resources);
  r.read("observe_own_position", e.observe_own_position);
  r.finish();
}

inline void read_evo(const json& j, evo::EvoConfig& c) {
  ObjectReader r(j, "$.evo");
  r.read("population_size", c.population_size);
  r.read("elite_count", c.elite_count);
  r.read("truncation_k", c.truncation_k);
  r.read("mutation_sigma", c.mutation_sigma);
  r.read("generations", c.generations);
  r.read("episodes_per_eval", c.episodes_per_eval);
  r.read("hidden_dim", c.hidden_dim);
  r.read("n_feedforward", c.n_feedforward);
  r.read("recurrent", c.recurrent);
  r.read("separate_networks", c.separate_networks);
  r.read("fixed_eval_seeds", c.fixed_eval_seeds);
  r.read("greedy_eval", c.greedy_eval);
  r.read("checkpoint_every", c.checkpoint_every);
  r.finish();
}

inline void read_rl(const json& j, marl::RlConfig& c) {
  ObjectReader r(j, "$.rl");
  r.read("hidden_dim", c.hidden_dim);
  r.read("critic_hidden_dim", c.critic_hidden_dim);
  r.read("n_feedforward", c.n_feedforward);
  r.read("recurrent", c.recurrent);
  r.read("independent_actors", c.independent_actors);
  r.read("n_envs", c.n_envs);
  r.read("rollout_len", c.rollout_len);
  r.read("total_env_steps", c.total_env_steps);
  r.read("lr_start", c.lr_start);
  r.read("gamma", c.gamma);
  r.read("gae_lambda", c.gae_lambda);
  r.read("clip_eps", c.clip_eps);
  r.read("value_coef", c.value_coef);
  r.read("entropy_coef", c.entropy_coef);
  r.read("epochs_per_update", c.epochs_per_update);
  r.read("minibatches", c.minibatches);
  r.read("max_grad_norm", c.max_grad_norm);
  r.read("adam_eps", c.adam_eps);
  r.read("checkpoint_every", c.checkpoint_every);
  r.finish();
}

inline void read_theory(const json& j, TheorySettings& t) {
  ObjectReader r(j, "$.theory");
  auto& g = t.game;
  const int old_latent = g.n_latent, old_signals = g.n_signals;
  r.read("n_latent", g.n_latent);
  r.read("n_speaker_actions", g.n_speaker_actions);
  r.read("n_signals", g.n_signals);
  r.read("u", g.u);
  r.read("p_external", g.p_external);
  r.read("resolution", t.resolution);
  g.n_listener_actions = g.n_latent;
  if (const json* code = r.take("external_code")) {
    if (!code->is_array()) throw ConfigError("expected an array of rows", r.path("external_code"));
    game::Table tab(code->size(), code->empty() ? 0 : (*code)[0].size());
    for (std::size_t i = 0; i < code->size(); ++i) {
      const auto& row = (*code)[i];
      const std::string rp = r.path("external_code") + "[" + std::to_string(i) + "]";
      if (!row.is_array() || row.size() != tab.cols) throw ConfigError("rows must be equal-length arrays", rp);
      for (std::size_t k = 0; k < row.size(); ++k) {
        if (!row[k].is_number()) throw ConfigError("expected a number", rp + "[" + std::to_string(k) + "]");
        tab(i, k) = row[k].get<double>();
      }
    }
    g.external_code = std::move(tab);
  } else if (g.n_latent != old_latent || g.n_signals != old_signals) {
    g.external_code = game::GameConfig::default_code(g.n_latent, g.n_signals);
  }
  r.finish();
}

inline void read_report(const json& j, ReportSettings& s) {
  ObjectReader r(j, "$.report");
  r.read("final_window", s.final_window);
  r.read("align_threshold", s.align_threshold);
  r.read("align_sustain", s.align_sustain);
  r.read("baseline_genomes", s.baseline_genomes);
  r.read("baseline_iterations", s.baseline_iterations);
  r.read("eval_episodes", s.eval_episodes);
  r.finish();
}

}  // namespace detail

inline ExperimentSpec preset(const std::string& name);

// Fields present in `doc` override the preset named by "preset" (or the
// built-in defaults). Unknown keys are errors; the result is validated.
inline ExperimentSpec load_spec(const json& doc) {
  detail::ObjectReader r(doc, "$");
  ExperimentSpec s;
  if (const json* p = r.take("preset")) {
    if (!p->is_string()) throw ConfigError("expected a string", "$.preset");
    s = preset(p->get<std::string>());
  }
  r.read("name", s.name);
  {
    std::string m;
    r.read("mode", m);
    if (r.has("mode")) s.mode = parse_mode(m);
  }
  {
    std::string o;
    r.read("overlap", o);
    if (r.has("overlap")) s.overlap = parse_overlap(o);
  }
  if (const json* v = r.take("env")) detail::read_env(*v, s.env);
  if (const json* v = r.take("evo")) detail::read_evo(*v, s.evo);
  if (const json* v = r.take("rl")) detail::read_rl(*v, s.rl);
  if (const json* v = r.take("theory")) detail::read_theory(*v, s.theory);
  if (const json* v = r.take("report")) detail::read_report(*v, s.report);
  if (const json* v = r.take("seeds")) {
    if (!v->is_array()) throw ConfigError("expected an array of seeds", "$.seeds");
    s.seeds.clear();
    for (std::size_t i = 0; i < v->size(); ++i) s.seeds.push_back(detail::read_seed((*v)[i], "$.seeds[" + std::to_string(i) + "]"));
  }
  r.read("output_dir", s.output_dir);
  r.read("checkpoint", s.checkpoint);
  r.finish();
  s.validate();
  return s;
}

inline ExperimentSpec load_spec_text(const std::string& text) {
  json doc;
  try {
    doc = json::parse(text);
  } catch (const json::parse_error& e) {
    throw ConfigError(std::string("malformed JSON: ") + e.what(), "$");
  }
  return load_spec(doc);
}

inline ExperimentSpec load_spec_file(const std::filesystem::path& p) {
  if (!std::filesystem::exists(p)) throw ConfigError("config file not found: " + p.string(), "$");
  return load_spec_text(metrics::read_text(p));
}

// ---- JSON writing (fully resolved) ----

inline json to_json(const grid::GridConfig& e) {
  return {{"width", e.width},
          {"height", e.height},
          {"episode_len", e.episode_len},
          {"reward_collect", e.reward_collect},
          {"step_penalty", e.step_penalty},
          {"alphabet_size", e.alphabet_size},
          {"agent_signals", e.agent_signals},
          {"resource_signals", e.resource_signals},
          {"p_res", e.p_res},
          {"v_res", e.v_res},
          {"v_agent", e.v_agent},
          {"n_resources", e.n_resources},
          {"observe_own_position", e.observe_own_position}};
}

inline json to_json(const evo::EvoConfig& c) {
  return {{"population_size", c.population_size},
          {"elite_count", c.elite_count},
          {"truncation_k", c.resolved_truncation_k()},
          {"mutation_sigma", c.mutation_sigma},
          {"generations", c.generations},
          {"episodes_per_eval", c.episodes_per_eval},
          {"hidden_dim", c.hidden_dim},
          {"n_feedforward", c.n_feedforward},
          {"recurrent", c.recurrent},
          {"separate_networks", c.separate_networks},
          {"fixed_eval_seeds", c.fixed_eval_seeds},
          {"greedy_eval", c.greedy_eval},
          {"checkpoint_every", c.checkpoint_every}};
}

inline json to_json(const marl::RlConfig& c) {
  return {{"hidden_dim", c.hidden_dim},
          {"critic_hidden_dim", c.critic_arch().hidden_dim},
          {"n_feedforward", c.n_feedforward},
          {"recurrent", c.recurrent},
          {"independent_actors", c.independent_actors},
          {"n_envs", c.n_envs},
          {"rollout_len", c.rollout_len},
          {"total_env_steps", c.total_env_steps},
          {"lr_start", c.lr_start},
          {"gamma", c.gamma},
          {"gae_lambda", c.gae_lambda},
          {"clip_eps", c.clip_eps},
          {"value_coef", c.value_coef},
          {"entropy_coef", c.entropy_coef},
          {"epochs_per_update", c.epochs_per_update},
          {"minibatches", c.minibatches},
          {"max_grad_norm", c.max_grad_norm},
          {"adam_eps", c.adam_eps},
          {"checkpoint_every", c.checkpoint_every}};
}

inline json to_json(const TheorySettings& t) {
  json code = json::array();
  for (std::size_t i = 0; i < t.game.external_code.rows; ++i) {
    json row = json::array();
    for (std::size_t k = 0; k < t.game.external_code.cols; ++k) row.push_back(t.game.external_code(i, k));
    code.push_back(row);
  }
  return {{"n_latent", t.game.n_latent},
          {"n_speaker_actions", t.game.n_speaker_actions},
          {"n_signals", t.game.n_signals},
          {"u", t.game.u},
          {"p_external", t.game.p_external},
          {"external_code", code},
          {"resolution", t.resolution}};
}

inline json to_json(const ReportSettings& s) {
  return {{"final_window", s.final_window},
          {"align_threshold", s.align_threshold},
          {"align_sustain", s.align_sustain},
          {"baseline_genomes", s.baseline_genomes},
          {"baseline_iterations", s.baseline_iterations},
          {"eval_episodes", s.eval_episodes}};
}

inline json to_json(const ExperimentSpec& s) {
  json j = {{"name", s.name},
            {"mode", to_string(s.mode)},
            {"overlap", to_string(s.overlap)},
            {"env", to_json(s.env)},
            {"evo", to_json(s.evo)},
            {"rl", to_json(s.rl)},
            {"theory", to_json(s.theory)},
            {"report", to_json(s.report)},
            {"seeds", s.seeds},
            {"output_dir", s.output_dir},
            {"checkpoint", s.checkpoint}};
  if (!s.preset.empty()) j["preset"] = s.preset;
  return j;
}

// ---- presets ----

inline std::vector<int> symbol_range(int first, int count) {
  std::vector<int> v(static_cast<std::size_t>(count));
  for (int i = 0; i < count; ++i) v[static_cast<std::size_t>(i)] = first + i;
  return v;
}

// RL alphabets: |Sigma_res| = 5 with resource symbols {0..4}; the agent
// symbols are shifted to share 5, 1 or 0 of them.
inline void rl_alphabets(grid::GridConfig& e, Overlap o) {
  e.resource_signals = symbol_range(0, 5);
  switch (o) {
    case Overlap::kPartial:
      e.agent_signals = symbol_range(4, 5);
      e.alphabet_size = 9;
      break;
    case Overlap::kNone:
      e.agent_signals = symbol_range(5, 5);
      e.alphabet_size = 10;
      break;
    default:
      e.agent_signals = symbol_range(0, 5);
      e.alphabet_size = 5;
      break;
  }
}

inline const std::vector<std::string>& preset_names() {
  static const std::vector<std::string> names = {
      "theory",        "ga-smoke",         "evo-paper",        "evo-paper-none",
      "rl-smoke-full", "rl-smoke-partial", "rl-smoke-none",    "rl-paper-full",
      "rl-paper-partial", "rl-paper-none"};
  return names;
}

inline ExperimentSpec preset(const std::string& name) {
  ExperimentSpec s;
  s.name = name;
  s.preset = name;
  if (name == "theory") {
    s.mode = Mode::kTheory;
    return s;
  }
  if (name == "ga-smoke") {
    s.mode = Mode::kEvolve;
    s.env.width = s.env.height = 3;
    s.env.alphabet_size = 0;
    s.env.p_res = 0.0;
    s.evo.population_size = 64;
    s.evo.generations = 50;
    s.evo.hidden_dim = 32;
    s.seeds = {1, 2, 3};
    return s;
  }
  if (name == "evo-paper" || name == "evo-paper-none") {
    // |Sigma_A| = 5, |Sigma_res| = 1; with overlap the resource symbol is one
    // of the agent symbols, otherwise it is a sixth symbol.
    s.mode = Mode::kEvolve;
    s.env.width = s.env.height = 5;
    s.env.agent_signals = symbol_range(0, 5);
    const bool none = name == "evo-paper-none";
    s.env.resource_signals = {none ? 5 : 0};
    s.env.alphabet_size = none ? 6 : 5;
    s.overlap = none ? Overlap::kNone : Overlap::kPartial;
    s.evo.population_size = 256;
    s.evo.generations = 500;
    s.evo.hidden_dim = 128;
    s.evo.checkpoint_every = 50;
    s.seeds = {0, 1, 2, 3, 4, 5, 6, 7, 8, 9};
    return s;
  }
  const std::string smoke = "rl-smoke-", paper = "rl-paper-";
  const bool is_smoke = name.rfind(smoke, 0) == 0, is_paper = name.rfind(paper, 0) == 0;
  if (is_smoke || is_paper) {
    const std::string mode = name.substr(is_smoke ? smoke.size() : paper.size());
    if (mode != "full" && mode != "partial" && mode != "none") throw ConfigError("unknown preset '" + name + "'", "$.preset");
    s.mode = Mode::kTrainRl;
    s.overlap = parse_overlap(mode);
    rl_alphabets(s.env, s.overlap);
    if (is_smoke) {
      s.env.width = s.env.height = 5;
      s.rl.hidden_dim = 32;
      s.rl.n_envs = 16;
      s.rl.rollout_len = 50;
      s.rl.n_feedforward = 1;
      s.rl.total_env_steps = 200000;
      s.rl.lr_start = 6e-3;
      s.seeds = {1, 2, 3, 4, 5};
    } else {
      s.env.width = s.env.height = 10;
      s.rl.hidden_dim = 128;
      s.rl.n_envs = 128;
      s.rl.rollout_len = 128;
      s.rl.total_env_steps = 5000000;
      s.rl.lr_start = 2e-3;
      s.rl.checkpoint_every = 50;
      s.seeds = {0, 1, 2, 3, 4, 5, 6, 7, 8, 9};
    }
    return s;
  }
  throw ConfigError("unknown preset '" + name + "'", "$.preset");
}

// ---- running ----

struct SeedOutcome {
  std::uint64_t seed = 0;
  bool ok = false;
  std::string error;
  json report;
};

struct RunOutcome {
  std::filesystem::path dir;  // <output_dir>/<name>
  std::vector<SeedOutcome> seeds;
  json aggregate;  // null when not produced

  int exit_code() const {
    for (const auto& s : seeds) {
      if (s.ok) return 0;
    }
    return 1;
  }
};

inline std::filesystem::path run_dir(const ExperimentSpec& s) { return std::filesystem::path(s.output_dir) / s.name; }
inline std::filesystem::path seed_dir(const ExperimentSpec& s, std::uint64_t seed) {
  return run_dir(s) / std::to_string(seed);
}

inline void write_json(const std::filesystem::path& p, const json& j) { metrics::write_text(p, j.dump(2) + "\n"); }

namespace detail {

inline double seconds_since(std::chrono::steady_clock::time_point t0) {
  return std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
}

inline json theorem_json(const game::TheoremReport& r) {
  return {{"mode", r.mode},
          {"strategies_checked", r.strategies_checked},
          {"counterexamples", r.counterexamples},
          {"informative_silence_exceptions", r.informative_silence_exceptions},
          {"rival_utility", r.rival_utility},
          {"stochastic_external_code", r.stochastic_external_code},
          {"note", r.note}};
}

inline json run_theory(const ExperimentSpec& s, std::uint64_t seed) {
  const auto t0 = std::chrono::steady_clock::now();
  const auto& g = s.theory.game;
  const auto t1 = game::verify_theorem_1(g, s.theory.resolution, seed);
  const auto t2 = game::verify_theorem_2(g, s.theory.resolution, seed);
  return {{"alpha", game::alpha(g)},
          {"theorem_1", theorem_json(t1)},
          {"theorem_2", theorem_json(t2)},
          {"counterexamples", t1.counterexamples + t2.counterexamples},
          {"runtime_seconds", seconds_since(t0)}};
}

inline nnet::Checkpoint make_checkpoint(const nnet::NetArch& arch, int copies, std::uint64_t seed,
                                        std::int64_t iteration, std::vector<float> params, json extra) {
  nnet::Checkpoint c;
  c.arch = arch;
  c.copies = copies;
  c.seed = seed;
  c.iteration = iteration;
  c.params = std::move(params);
  c.extra = std::move(extra);
  return c;
}

inline json run_evolve(const ExperimentSpec& s, std::uint64_t seed, const std::filesystem::path& dir,
                       std::ostream* log) {
  const auto t0 = std::chrono::steady_clock::now();
  const evo::EvoConfig c = s.evo_for(seed);
  const TeamPolicy team = c.team();
  const json extra = {{"algorithm", "truncation_ga"}, {"greedy_eval", c.greedy_eval}, {"role", "team_policy"}};
  const auto base = evo::random_genome_baseline(c, s.report.baseline_genomes);
  auto res = evo::run_ga(c, [&](const evo::GenerationInfo& g) {
    const bool periodic = c.checkpoint_every > 0 && (g.generation + 1) % c.checkpoint_every == 0;
    if (periodic && !g.last) {
      nnet::save_checkpoint(dir / "checkpoints" / ("best_gen" + std::to_string(g.generation) + ".bin"),
                            make_checkpoint(team.arch, team.copies, seed, g.generation, *g.best, extra));
    }
    if (log && (g.generation % 10 == 0 || g.last)) {
      *log << "[" << s.name << "/" << seed << "] generation " << g.generation << " best " << g.best_fitness << "\n";
    }
  });
  nnet::save_checkpoint(dir / "checkpoints" / "final.bin",
                        make_checkpoint(team.arch, team.copies, seed, c.generations - 1, res.best_genome, extra));
  res.history.metadata["seed"] = seed;
  res.history.metadata["build"] = kBuildId;
  metrics::write_history_csv(dir / "metrics.csv", res.history);
  const double threshold = base.mean + 2.0 * base.std;
  const auto& last = res.history.records.back();
  return {{"final_best_fitness", last.mean_reward},
          {"final_window_mean", metrics::final_mean(res.history, static_cast<std::size_t>(s.report.final_window))},
          {"final_mimicry_frequency", last.mimicry_frequency},
          {"baseline", {{"kind", "random_genomes"}, {"n", s.report.baseline_genomes}, {"mean", base.mean}, {"std", base.std}}},
          {"threshold", threshold},
          {"beats_baseline", last.mean_reward > threshold},
          {"history", res.history.metadata},
          {"runtime_seconds", seconds_since(t0)}};
}

inline json run_train_rl(const ExperimentSpec& s, std::uint64_t seed, const std::filesystem::path& dir,
                         std::ostream* log) {
  const auto t0 = std::chrono::steady_clock::now();
  const marl::RlConfig c = s.rl_for(seed);
  const TeamPolicy team = c.team();
  const auto carch = c.critic_arch();
  const json actor_extra = {{"algorithm", "mappo"}, {"greedy_eval", false}, {"role", "actor"}};
  const json critic_extra = {{"algorithm", "mappo"}, {"role", "critic"}};
  const auto base = metrics::moments(marl::random_policy_rewards(c, s.report.baseline_iterations));
  auto save = [&](const marl::Learner& l, std::int64_t it, const std::string& tag) {
    nnet::save_checkpoint(dir / "checkpoints" / ("actor_" + tag + ".bin"),
                          make_checkpoint(team.arch, team.copies, seed, it, l.actor, actor_extra));
    nnet::save_checkpoint(dir / "checkpoints" / ("critic_" + tag + ".bin"),
                          make_checkpoint(carch, 1, seed, it, l.critic, critic_extra));
  };
  auto res = marl::train(c, [&](const marl::IterationInfo& i) {
    const bool periodic = c.checkpoint_every > 0 && (i.iteration + 1) % c.checkpoint_every == 0;
    if (periodic && !i.last) save(*i.learner, i.iteration, "it" + std::to_string(i.iteration));
    if (log && (i.iteration % 25 == 0 || i.last)) {
      *log << "[" << s.name << "/" << seed << "] iteration " << i.iteration << " entropy " << i.update.entropy << "\n";
    }
  });
  save(res.learner, static_cast<std::int64_t>(res.history.size()) - 1, "final");
  res.history.metadata["seed"] = seed;
  res.history.metadata["build"] = kBuildId;
  metrics::write_history_csv(dir / "metrics.csv", res.history);
  const double final_mean = metrics::final_mean(res.history, static_cast<std::size_t>(s.report.final_window));
  const double threshold = base.mean + 2.0 * base.std;
  json report = {{"final_window_mean", final_mean},
                 {"final_mimicry_frequency", res.history.records.back().mimicry_frequency},
                 {"baseline",
                  {{"kind", "uniform_random_policy"}, {"iterations", s.report.baseline_iterations}, {"mean", base.mean},
                   {"std", base.std}}},
                 {"threshold", threshold},
                 {"beats_baseline", final_mean > threshold},
                 {"history", res.history.metadata},
                 {"runtime_seconds", seconds_since(t0)}};
  if (res.history.metadata.contains("aborted")) throw Error("training aborted: " + res.history.metadata["aborted"].get<std::string>());
  return report;
}

inline json run_eval(const ExperimentSpec& s, std::uint64_t seed) {
  const auto ck = nnet::load_checkpoint(s.checkpoint);
  if (ck.arch.n_actions == 0) throw Error("checkpoint holds a critic, not a policy");
  if (ck.arch.input_dim != s.env.obs_dim() || ck.arch.n_actions != s.env.n_actions()) {
    throw ConfigError("checkpoint network does not match the environment's observation/action sizes", "$.env");
  }
  const TeamPolicy team{ck.arch, ck.copies};
  const bool greedy = ck.extra.value("greedy_eval", true);
  const auto st = run_policy_episodes(team, ck.params, s.env, s.report.eval_episodes,
                                      stream_seed(seed, Stream::kEval, 0), greedy);
  const auto m = metrics::moments(st.returns);
  return {{"checkpoint", s.checkpoint},
          {"episodes", s.report.eval_episodes},
          {"greedy", greedy},
          {"mean_return", m.mean},
          {"std_return", m.std},
          {"mimicry_frequency", st.tally.frequency()},
          {"emits", st.tally.emits}};
}

}  // namespace detail

// Aggregates whatever per-seed metrics.csv files exist under the run
// directory; reads them back from disk so the result depends on nothing else.
inline json aggregate_dir(const ExperimentSpec& s) {
  std::vector<metrics::RunHistory> runs;
  std::vector<std::uint64_t> used;
  for (auto seed : s.seeds) {
    const auto p = seed_dir(s, seed) / "metrics.csv";
    if (!std::filesystem::exists(p)) continue;
    runs.push_back(metrics::read_history_csv(p));
    used.push_back(seed);
  }
  if (runs.empty()) return nullptr;
  const auto agg = metrics::aggregate_runs(runs, static_cast<std::size_t>(s.report.final_window));
  metrics::write_text(run_dir(s) / "aggregate.csv", metrics::aggregate_to_csv(agg));
  const auto al = metrics::align_curves(runs, s.report.align_threshold, static_cast<std::size_t>(s.report.align_sustain));
  json kept = json::array(), excluded = json::array();
  for (std::size_t i = 0; i < al.kept.size(); ++i) kept.push_back({{"seed", used[al.kept[i]]}, {"shift", al.shift[i]}});
  for (auto k : al.excluded) excluded.push_back(used[k]);
  json j = {{"seeds", used},
            {"n_runs", agg.n_runs},
            {"final_window", agg.final_window},
            {"final_per_run", agg.final_per_run},
            {"final_mean", agg.final.mean},
            {"final_std_pop", agg.final.std},
            {"final_stderr", agg.final.sem},
            {"interpolated", agg.interpolated},
            {"alignment", {{"threshold", s.report.align_threshold}, {"kept", kept}, {"excluded", excluded}}}};
  write_json(run_dir(s) / "aggregate.json", j);
  return j;
}

// Reward curves of every seed plus the mean mimicry frequency, and the same
// curves aligned at their first threshold crossing.
inline std::vector<std::filesystem::path> plot_dir(const ExperimentSpec& s) {
  std::vector<metrics::RunHistory> runs;
  std::vector<std::uint64_t> used;
  for (auto seed : s.seeds) {
    const auto p = seed_dir(s, seed) / "metrics.csv";
    if (!std::filesystem::exists(p)) continue;
    runs.push_back(metrics::read_history_csv(p));
    used.push_back(seed);
  }
  if (runs.empty()) throw Error("no metrics.csv found under " + run_dir(s).string());
  const auto& aux = runs.front().aux_columns;
  const bool ga = std::find(aux.begin(), aux.end(), "population_mean") != aux.end();
  const std::string xl = ga ? "generation" : "iteration";
  auto curves = [&](const std::vector<metrics::RunHistory>& hs, const std::vector<std::uint64_t>& ids) {
    std::vector<metrics::Series> out;
    for (std::size_t k = 0; k < hs.size(); ++k) {
      metrics::Series r{"seed " + std::to_string(ids[k]), {}, {}, false};
      metrics::Series f{"mimicry " + std::to_string(ids[k]), {}, {}, true};
      for (const auto& rec : hs[k].records) {
        r.x.push_back(static_cast<double>(rec.iteration));
        r.y.push_back(rec.mean_reward);
        f.x.push_back(static_cast<double>(rec.iteration));
        f.y.push_back(rec.mimicry_frequency);
      }
      out.push_back(std::move(r));
      out.push_back(std::move(f));
    }
    return out;
  };
  std::vector<std::filesystem::path> written;
  const auto p1 = run_dir(s) / "reward.svg";
  metrics::write_text(p1, metrics::line_plot_svg(curves(runs, used), s.name + ": reward", xl, "mean reward",
                                                 "mimicry frequency"));
  written.push_back(p1);
  const auto al = metrics::align_curves(runs, s.report.align_threshold, static_cast<std::size_t>(s.report.align_sustain));
  if (!al.aligned.empty()) {
    std::vector<std::uint64_t> ids;
    for (auto k : al.kept) ids.push_back(used[k]);
    const auto p2 = run_dir(s) / "aligned.svg";
    metrics::write_text(p2, metrics::line_plot_svg(curves(al.aligned, ids), s.name + ": aligned at first crossing",
                                                   xl + " (shifted)", "mean reward", "mimicry frequency"));
    written.push_back(p2);
  }
  return written;
}

// Runs every seed in order. A failing seed is recorded in its report.json
// and does not stop the others.
inline RunOutcome run(const ExperimentSpec& s, std::ostream* log = nullptr) {
  s.validate();
  RunOutcome out;
  out.dir = run_dir(s);
  if (s.mode == Mode::kPlot) {
    SeedOutcome so;
    so.ok = true;
    json files = json::array();
    for (const auto& p : plot_dir(s)) files.push_back(p.string());
    so.report = {{"status", "ok"}, {"mode", "plot"}, {"files", files}};
    out.seeds.push_back(so);
    return out;
  }
  for (auto seed : s.seeds) {
    const auto dir = seed_dir(s, seed);
    SeedOutcome so;
    so.seed = seed;
    try {
      std::filesystem::create_directories(dir / "checkpoints");
      ExperimentSpec snap = s;
      snap.seeds = {seed};
      write_json(dir / "config.json", to_json(snap));
      json body;
      switch (s.mode) {
        case Mode::kTheory: body = detail::run_theory(s, seed); break;
        case Mode::kEvolve: body = detail::run_evolve(s, seed, dir, log); break;
        case Mode::kTrainRl: body = detail::run_train_rl(s, seed, dir, log); break;
        case Mode::kEval: body = detail::run_eval(s, seed); break;
        case Mode::kPlot: break;
      }
      so.report = {{"status", "ok"}, {"mode", to_string(s.mode)}, {"seed", seed}, {"build", kBuildId}};
      so.report.update(body);
      so.ok = true;
    } catch (const std::exception& e) {
      so.error = e.what();
      so.report = {{"status", "failed"}, {"mode", to_string(s.mode)}, {"seed", seed}, {"build", kBuildId}, {"error", e.what()}};
      if (log) *log << "[" << s.name << "/" << seed << "] failed: " << e.what() << "\n";
    }
    try {
      write_json(dir / "report.json", so.report);
    } catch (const std::exception& e) {
      if (log) *log << "[" << s.name << "/" << seed << "] cannot write report: " << e.what() << "\n";
    }
    out.seeds.push_back(std::move(so));
  }
  if (s.mode == Mode::kEvolve || s.mode == Mode::kTrainRl) out.aggregate = aggregate_dir(s);
  return out;
}

}  // namespace mimic_sig::experiment

#endif  // MIMIC_SIG_EXPERIMENT_HPP_
