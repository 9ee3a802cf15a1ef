#ifndef MIMIC_SIG_GRIDWORLD_HPP_
#define MIMIC_SIG_GRIDWORLD_HPP_

// Two-agent cooperative resource collection with anonymous, volume-limited
// spatial signals.
//
// Coordinates: x grows rightward, y grows upward, so "above" means larger y.
// Actions per agent: 0 Stay, 1 Up, 2 Down, 3 Left, 4 Right, then one Emit per
// entry of agent_signals (action 5 + i emits agent_signals[i]).

#include <array>
#include <cstdint>
#include <random>
#include <string>
#include <vector>

#include <json.hpp>

#include "mimic_sig/core.hpp"

namespace mimic_sig::grid {

inline constexpr int kNumAgents = 2;
inline constexpr int kNumMoves = 5;

enum Move : int { kStay = 0, kUp = 1, kDown = 2, kLeft = 3, kRight = 4 };
enum Sensor : int { kAbove = 0, kBelow = 1, kRightOf = 2, kLeftOf = 3 };

struct Pos {
  int x = 0;
  int y = 0;
  bool operator==(const Pos&) const = default;
};

struct GridConfig {
  int width = 5;
  int height = 5;
  int episode_len = 50;
  double reward_collect = 10.0;
  double step_penalty = -0.1;
  int alphabet_size = 1;
  std::vector<int> agent_signals;
  std::vector<int> resource_signals;
  double p_res = 0.5;
  int v_res = 3;
  int v_agent = 3;
  int n_resources = 1;
  // Appends normalized own (x, y) to each observation.
  bool observe_own_position = false;

  int n_actions() const { return kNumMoves + static_cast<int>(agent_signals.size()); }

  int obs_dim() const {
    return 1 + 4 * alphabet_size + kNumAgents + (observe_own_position ? 2 : 0);
  }

  int global_state_dim() const {
    return 2 * kNumAgents + 2 * n_resources + (kNumAgents + n_resources) * (alphabet_size + 1) + 1;
  }

  bool is_emit(int action) const { return action >= kNumMoves && action < n_actions(); }

  int emit_symbol(int action) const { return agent_signals.at(action - kNumMoves); }

  // Agent symbols that also appear in the resource alphabet.
  std::vector<int> overlap_symbols() const {
    std::vector<int> out;
    for (int s : agent_signals) {
      for (int r : resource_signals) {
        if (s == r) {
          out.push_back(s);
          break;
        }
      }
    }
    return out;
  }

  void validate() const {
    if (width < 2) throw ConfigError("width must be >= 2", "$.env.width");
    if (height < 2) throw ConfigError("height must be >= 2", "$.env.height");
    if (episode_len < 1) throw ConfigError("episode_len must be >= 1", "$.env.episode_len");
    if (alphabet_size < 0) throw ConfigError("alphabet_size must be >= 0", "$.env.alphabet_size");
    auto check_set = [&](const std::vector<int>& set, const char* path) {
      std::vector<bool> seen(alphabet_size, false);
      for (int s : set) {
        if (s < 0 || s >= alphabet_size) {
          throw ConfigError("symbol " + std::to_string(s) + " outside the alphabet", path);
        }
        if (seen[s]) throw ConfigError("duplicate symbol " + std::to_string(s), path);
        seen[s] = true;
      }
    };
    check_set(agent_signals, "$.env.agent_signals");
    check_set(resource_signals, "$.env.resource_signals");
    if (!(p_res >= 0.0 && p_res <= 1.0)) throw ConfigError("p_res must lie in [0, 1]", "$.env.p_res");
    if (v_res < 1) throw ConfigError("v_res must be >= 1", "$.env.v_res");
    if (v_agent < 1) throw ConfigError("v_agent must be >= 1", "$.env.v_agent");
    if (n_resources < 1) throw ConfigError("n_resources must be >= 1", "$.env.n_resources");
  }
};

struct Signal {
  Pos source;
  int symbol = 0;
  int volume = 1;
  bool operator==(const Signal&) const = default;
};

using SensorBits = std::array<std::vector<std::uint8_t>, 4>;

struct Observation {
  bool on_resource = false;
  SensorBits sensors;  // above, below, right, left
  int agent_id = 0;
  Pos own_position;    // encoded only with observe_own_position
};

struct GridState {
  std::array<Pos, kNumAgents> agents;
  std::vector<Pos> resources;
  // Signals emitted on the previous step; these are what the sensors read.
  std::vector<Signal> active_signals;
  // Bookkeeping for the centralized critic: symbol emitted on the previous
  // step by each agent / resource, -1 for none.
  std::array<int, kNumAgents> agent_emits{-1, -1};
  std::vector<int> resource_emits;
  int t = 0;
  std::mt19937_64 rng;
};

// Direction bits for an agent at `agent` given the active signals. A signal
// is heard only when its Manhattan distance is strictly below its volume.
inline SensorBits sensor_read(Pos agent, const std::vector<Signal>& signals, int alphabet_size) {
  SensorBits bits;
  for (auto& v : bits) v.assign(static_cast<std::size_t>(alphabet_size), 0);
  for (const auto& s : signals) {
    const int d = std::abs(agent.x - s.source.x) + std::abs(agent.y - s.source.y);
    if (d >= s.volume) continue;
    if (s.symbol < 0 || s.symbol >= alphabet_size) continue;
    const auto m = static_cast<std::size_t>(s.symbol);
    if (s.source.y > agent.y) bits[kAbove][m] = 1;
    if (s.source.y < agent.y) bits[kBelow][m] = 1;
    if (s.source.x > agent.x) bits[kRightOf][m] = 1;
    if (s.source.x < agent.x) bits[kLeftOf][m] = 1;
  }
  return bits;
}

inline bool on_any_resource(const GridState& s, Pos p) {
  for (const auto& r : s.resources) {
    if (r == p) return true;
  }
  return false;
}

inline Observation observe(const GridState& s, int agent, const GridConfig& c) {
  if (agent < 0 || agent >= kNumAgents) throw ShapeError("agent index out of range");
  Observation o;
  o.agent_id = agent;
  o.own_position = s.agents[agent];
  o.on_resource = on_any_resource(s, s.agents[agent]);
  o.sensors = sensor_read(s.agents[agent], s.active_signals, c.alphabet_size);
  return o;
}

// [on_resource | above | below | right | left | agent one-hot | own x, y]
inline void encode_observation(const Observation& o, const GridConfig& c, float* out) {
  std::size_t k = 0;
  out[k++] = o.on_resource ? 1.0f : 0.0f;
  for (const auto& sensor : o.sensors) {
    for (auto bit : sensor) out[k++] = static_cast<float>(bit);
  }
  for (int a = 0; a < kNumAgents; ++a) out[k++] = a == o.agent_id ? 1.0f : 0.0f;
  if (c.observe_own_position) {
    out[k++] = static_cast<float>(o.own_position.x) / static_cast<float>(c.width - 1);
    out[k++] = static_cast<float>(o.own_position.y) / static_cast<float>(c.height - 1);
  }
}

inline std::vector<float> encode_observation(const GridState& s, int agent, const GridConfig& c) {
  std::vector<float> out(static_cast<std::size_t>(c.obs_dim()));
  encode_observation(observe(s, agent, c), c, out.data());
  return out;
}

// Critic input layout:
//   agent positions (x, y normalized) for both agents,
//   resource positions (x, y normalized),
//   per agent then per resource: one-hot over alphabet_size + 1 of the symbol
//   emitted on the previous step (last slot = none),
//   t / episode_len.
inline void global_state(const GridState& s, const GridConfig& c, float* out) {
  std::size_t k = 0;
  const float wx = static_cast<float>(c.width - 1);
  const float wy = static_cast<float>(c.height - 1);
  for (const auto& p : s.agents) {
    out[k++] = static_cast<float>(p.x) / wx;
    out[k++] = static_cast<float>(p.y) / wy;
  }
  for (const auto& p : s.resources) {
    out[k++] = static_cast<float>(p.x) / wx;
    out[k++] = static_cast<float>(p.y) / wy;
  }
  auto one_hot = [&](int symbol) {
    for (int m = 0; m <= c.alphabet_size; ++m) {
      const bool hit = symbol < 0 ? m == c.alphabet_size : m == symbol;
      out[k++] = hit ? 1.0f : 0.0f;
    }
  };
  for (int e : s.agent_emits) one_hot(e);
  for (int i = 0; i < c.n_resources; ++i) {
    one_hot(i < static_cast<int>(s.resource_emits.size()) ? s.resource_emits[i] : -1);
  }
  out[k++] = static_cast<float>(s.t) / static_cast<float>(c.episode_len);
}

inline std::vector<float> global_state(const GridState& s, const GridConfig& c) {
  std::vector<float> out(static_cast<std::size_t>(c.global_state_dim()));
  global_state(s, c, out.data());
  return out;
}

struct ResetResult {
  GridState state;
  std::array<Observation, kNumAgents> obs;
};

struct StepResult {
  std::array<Observation, kNumAgents> obs;
  double reward = 0.0;
  bool done = false;
  bool collected = false;
};

namespace detail {

inline int uniform_index(std::mt19937_64& rng, int n) {
  return std::uniform_int_distribution<int>(0, n - 1)(rng);
}

// Uniform tile not in `taken`.
inline Pos free_tile(std::mt19937_64& rng, const GridConfig& c, const std::vector<Pos>& taken) {
  std::vector<Pos> free;
  free.reserve(static_cast<std::size_t>(c.width * c.height));
  for (int y = 0; y < c.height; ++y) {
    for (int x = 0; x < c.width; ++x) {
      Pos p{x, y};
      bool used = false;
      for (const auto& q : taken) used = used || q == p;
      if (!used) free.push_back(p);
    }
  }
  if (free.empty()) throw PlacementError("no free tile left for placement");
  return free[static_cast<std::size_t>(uniform_index(rng, static_cast<int>(free.size())))];
}

}  // namespace detail

inline ResetResult reset(const GridConfig& c, std::uint64_t seed) {
  const long tiles = static_cast<long>(c.width) * c.height;
  if (tiles < kNumAgents + c.n_resources) {
    throw PlacementError("grid has " + std::to_string(tiles) + " tiles but needs " +
                         std::to_string(kNumAgents + c.n_resources) + " distinct ones");
  }
  c.validate();
  ResetResult r;
  GridState& s = r.state;
  s.rng.seed(seed);
  std::vector<Pos> taken;
  for (auto& a : s.agents) {
    a = detail::free_tile(s.rng, c, taken);
    taken.push_back(a);
  }
  for (int i = 0; i < c.n_resources; ++i) {
    s.resources.push_back(detail::free_tile(s.rng, c, taken));
    taken.push_back(s.resources.back());
  }
  s.resource_emits.assign(static_cast<std::size_t>(c.n_resources), -1);
  for (int a = 0; a < kNumAgents; ++a) r.obs[a] = observe(s, a, c);
  return r;
}

// Advances one step in place. Order: moves/emits, collection and respawn,
// resource emissions, then observations from the signals queued this step.
inline StepResult step(GridState& s, const std::array<int, kNumAgents>& actions, const GridConfig& c) {
  if (s.t >= c.episode_len) throw Error("step called on a finished episode");
  for (int a : actions) {
    if (a < 0 || a >= c.n_actions()) {
      throw ShapeError("action " + std::to_string(a) + " out of range [0, " +
                       std::to_string(c.n_actions()) + ")");
    }
  }
  std::vector<Signal> queued;
  for (int i = 0; i < kNumAgents; ++i) {
    Pos& p = s.agents[i];
    s.agent_emits[i] = -1;
    switch (actions[i]) {
      case kStay: break;
      case kUp: p.y = std::min(p.y + 1, c.height - 1); break;
      case kDown: p.y = std::max(p.y - 1, 0); break;
      case kLeft: p.x = std::max(p.x - 1, 0); break;
      case kRight: p.x = std::min(p.x + 1, c.width - 1); break;
      default: {
        const int symbol = c.emit_symbol(actions[i]);
        queued.push_back({p, symbol, c.v_agent});
        s.agent_emits[i] = symbol;
      }
    }
  }

  StepResult out;
  if (s.agents[0] == s.agents[1]) {
    for (auto& r : s.resources) {
      if (r == s.agents[0]) {
        std::vector<Pos> taken(s.agents.begin(), s.agents.end());
        for (const auto& q : s.resources) {
          if (!(q == r)) taken.push_back(q);
        }
        r = detail::free_tile(s.rng, c, taken);
        out.collected = true;
        break;
      }
    }
  }
  out.reward = out.collected ? c.reward_collect : c.step_penalty;

  std::uniform_real_distribution<double> unit(0.0, 1.0);
  for (std::size_t i = 0; i < s.resources.size(); ++i) {
    s.resource_emits[i] = -1;
    if (c.resource_signals.empty() || c.p_res <= 0.0) continue;
    if (unit(s.rng) < c.p_res) {
      const int symbol = c.resource_signals[static_cast<std::size_t>(
          detail::uniform_index(s.rng, static_cast<int>(c.resource_signals.size())))];
      queued.push_back({s.resources[i], symbol, c.v_res});
      s.resource_emits[i] = symbol;
    }
  }

  s.active_signals = std::move(queued);
  ++s.t;
  out.done = s.t == c.episode_len;
  for (int a = 0; a < kNumAgents; ++a) out.obs[a] = observe(s, a, c);
  return out;
}

// One trajectory line: positions after the step, the joint action, signals
// emitted during the step and the team reward. `t` is the step index.
inline nlohmann::json trajectory_record(int t, const GridState& after,
                                        const std::array<int, kNumAgents>& actions, double reward) {
  using nlohmann::json;
  json agents = json::array(), resources = json::array(), signals = json::array();
  for (const auto& p : after.agents) agents.push_back({p.x, p.y});
  for (const auto& p : after.resources) resources.push_back({p.x, p.y});
  for (const auto& sig : after.active_signals) {
    signals.push_back({{"source", {sig.source.x, sig.source.y}},
                       {"symbol", sig.symbol},
                       {"volume", sig.volume}});
  }
  return {{"t", t},
          {"positions", {{"agents", agents}, {"resources", resources}}},
          {"actions", {actions[0], actions[1]}},
          {"signals", signals},
          {"reward", reward}};
}

}  // namespace mimic_sig::grid

#endif  // MIMIC_SIG_GRIDWORLD_HPP_
