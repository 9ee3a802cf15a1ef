#ifndef MIMIC_SIG_TEAM_HPP_
#define MIMIC_SIG_TEAM_HPP_

// The two agents' actor: either one shared network (agent id is part of the
// observation) or `copies` = 2 independent networks stored back to back.

#include <array>
#include <cstdint>
#include <random>
#include <span>
#include <vector>

#include <json.hpp>

#include "mimic_sig/gridworld.hpp"
#include "mimic_sig/metrics.hpp"
#include "mimic_sig/nnet.hpp"

namespace mimic_sig {

inline nnet::NetArch actor_arch(const grid::GridConfig& env, int hidden_dim, int n_feedforward = 3,
                                bool recurrent = true) {
  nnet::NetArch a;
  a.input_dim = env.obs_dim();
  a.hidden_dim = hidden_dim;
  a.n_feedforward = n_feedforward;
  a.recurrent = recurrent;
  a.n_actions = env.n_actions();
  a.with_value_head = false;
  return a;
}

struct TeamPolicy {
  nnet::NetArch arch;
  int copies = 1;

  std::size_t params_per_copy() const { return nnet::param_count(arch); }
  std::size_t genome_size() const { return params_per_copy() * static_cast<std::size_t>(copies); }

  std::span<const float> copy_params(std::span<const float> all, int agent) const {
    if (all.size() != genome_size()) throw ShapeError("team parameter vector has the wrong length");
    const std::size_t k = copies == 1 ? 0 : static_cast<std::size_t>(agent);
    return all.subspan(k * params_per_copy(), params_per_copy());
  }

  std::vector<float> init(std::uint64_t seed) const {
    std::vector<float> out;
    out.reserve(genome_size());
    for (int c = 0; c < copies; ++c) {
      const auto p = nnet::init_params(arch, stream_seed(seed, Stream::kInit, static_cast<std::uint64_t>(c)));
      out.insert(out.end(), p.begin(), p.end());
    }
    return out;
  }

  // Rows alternate agent 0, agent 1 (row r belongs to agent r % 2).
  nnet::ForwardOut<float> forward(std::span<const float> params, const nnet::Matrix<float>& obs,
                                  const nnet::Matrix<float>& hidden) const {
    if (copies == 1) return nnet::policy_forward<float>(arch, params, obs, hidden);
    if (obs.rows % grid::kNumAgents != 0) throw ShapeError("separate networks need rows in agent pairs");
    nnet::ForwardOut<float> out;
    const std::size_t h = static_cast<std::size_t>(arch.hidden_dim);
    const std::size_t na = static_cast<std::size_t>(arch.n_actions);
    out.logits = nnet::Matrix<float>(obs.rows, na);
    if (arch.recurrent) out.hidden = nnet::Matrix<float>(obs.rows, h);
    const std::size_t half = obs.rows / grid::kNumAgents;
    for (int agent = 0; agent < grid::kNumAgents; ++agent) {
      nnet::Matrix<float> o(half, obs.cols), hs;
      if (arch.recurrent) hs = nnet::Matrix<float>(half, h);
      for (std::size_t i = 0; i < half; ++i) {
        const std::size_t r = i * grid::kNumAgents + static_cast<std::size_t>(agent);
        std::copy(obs.row(r), obs.row(r) + obs.cols, o.row(i));
        if (arch.recurrent) std::copy(hidden.row(r), hidden.row(r) + h, hs.row(i));
      }
      auto part = nnet::policy_forward<float>(arch, copy_params(params, agent), o, hs);
      for (std::size_t i = 0; i < half; ++i) {
        const std::size_t r = i * grid::kNumAgents + static_cast<std::size_t>(agent);
        std::copy(part.logits.row(i), part.logits.row(i) + na, out.logits.row(r));
        if (arch.recurrent) std::copy(part.hidden.row(i), part.hidden.row(i) + h, out.hidden.row(r));
      }
    }
    return out;
  }
};

struct EpisodeStats {
  double mean_return = 0.0;
  std::vector<double> returns;
  metrics::EmitTally tally;
  std::int64_t steps = 0;
};

// act(state, obs, rng) -> joint action. Episode e uses environment seed
// stream_seed(eval_seed, kEnv, e) and action stream stream_seed(eval_seed, kActions, e).
template <class Act>
EpisodeStats run_episodes(const grid::GridConfig& env, int episodes, std::uint64_t eval_seed, Act&& act,
                          nlohmann::json* trajectory = nullptr) {
  if (episodes < 1) throw ConfigError("episodes must be >= 1", "$.evo.episodes_per_eval");
  EpisodeStats out;
  const auto overlap = env.overlap_symbols();
  for (int e = 0; e < episodes; ++e) {
    auto rr = grid::reset(env, stream_seed(eval_seed, Stream::kEnv, static_cast<std::uint64_t>(e)));
    std::mt19937_64 rng(stream_seed(eval_seed, Stream::kActions, static_cast<std::uint64_t>(e)));
    grid::GridState& s = rr.state;
    auto obs = rr.obs;
    double ret = 0.0;
    bool done = false;
    nlohmann::json ep = nlohmann::json::array();
    while (!done) {
      const std::array<int, grid::kNumAgents> a = act(s, obs, rng, e);
      for (int x : a) out.tally.add(x, env, overlap);
      auto st = grid::step(s, a, env);
      ret += st.reward;
      done = st.done;
      obs = st.obs;
      ++out.steps;
      if (trajectory) ep.push_back(grid::trajectory_record(s.t, s, a, st.reward));
    }
    if (trajectory) trajectory->push_back(std::move(ep));
    out.returns.push_back(ret);
  }
  double sum = 0.0;
  for (double r : out.returns) sum += r;
  out.mean_return = sum / static_cast<double>(episodes);
  return out;
}

// Network actor for evaluation: argmax when greedy, else softmax sampling.
// Hidden state resets at every episode start.
inline EpisodeStats run_policy_episodes(const TeamPolicy& team, std::span<const float> params,
                                        const grid::GridConfig& env, int episodes, std::uint64_t eval_seed,
                                        bool greedy, nlohmann::json* trajectory = nullptr) {
  const std::size_t h = static_cast<std::size_t>(team.arch.hidden_dim);
  const std::size_t d = static_cast<std::size_t>(env.obs_dim());
  if (static_cast<std::size_t>(team.arch.input_dim) != d) throw ShapeError("actor input_dim does not match obs_dim");
  nnet::Matrix<float> hidden;
  int current_episode = -1;
  auto act = [&](const grid::GridState& s, const std::array<grid::Observation, grid::kNumAgents>& obs,
                 std::mt19937_64& rng, int episode) {
    (void)s;
    if (episode != current_episode) {
      current_episode = episode;
      hidden = team.arch.recurrent ? nnet::Matrix<float>(grid::kNumAgents, h) : nnet::Matrix<float>();
    }
    nnet::Matrix<float> o(grid::kNumAgents, d);
    for (int a = 0; a < grid::kNumAgents; ++a) grid::encode_observation(obs[a], env, o.row(static_cast<std::size_t>(a)));
    auto out = team.forward(params, o, hidden);
    if (team.arch.recurrent) hidden = std::move(out.hidden);
    std::array<int, grid::kNumAgents> acts{};
    const std::size_t na = out.logits.cols;
    for (int a = 0; a < grid::kNumAgents; ++a) {
      const float* l = out.logits.row(static_cast<std::size_t>(a));
      acts[a] = greedy ? nnet::argmax(l, na) : nnet::sample_action(l, na, rng);
    }
    return acts;
  };
  return run_episodes(env, episodes, eval_seed, act, trajectory);
}

}  // namespace mimic_sig

#endif  // MIMIC_SIG_TEAM_HPP_
