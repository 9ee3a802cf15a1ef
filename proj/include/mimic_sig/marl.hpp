#ifndef MIMIC_SIG_MARL_HPP_
#define MIMIC_SIG_MARL_HPP_

// Recurrent MAPPO: shared (or per-agent) actors on local observations, a
// recurrent critic on the global state, GAE, clipped surrogate updates.

#include <algorithm>
#include <array>
#include <cmath>
#include <cstdint>
#include <functional>
#include <memory>
#include <numeric>
#include <random>
#include <span>
#include <string>
#include <vector>

#include "mimic_sig/core.hpp"
#include "mimic_sig/gridworld.hpp"
#include "mimic_sig/metrics.hpp"
#include "mimic_sig/nnet.hpp"
#include "mimic_sig/team.hpp"

namespace mimic_sig::marl {

using nnet::Matrix;
using nnet::Var;

struct RlConfig {
  grid::GridConfig env;
  int hidden_dim = 128;
  int critic_hidden_dim = 0;  // 0 -> hidden_dim
  int n_feedforward = 3;
  bool recurrent = true;
  bool independent_actors = false;
  int n_envs = 128;
  int rollout_len = 128;
  std::int64_t total_env_steps = 5000000;
  double lr_start = 2e-3;
  double gamma = 0.99;
  double gae_lambda = 0.95;
  double clip_eps = 0.2;
  double value_coef = 0.5;
  double entropy_coef = 0.01;
  int epochs_per_update = 4;
  int minibatches = 4;
  double max_grad_norm = 0.5;
  double adam_eps = 1e-5;
  int checkpoint_every = 0;  // iterations; 0 -> final only
  std::uint64_t seed = 0;

  TeamPolicy team() const {
    return TeamPolicy{actor_arch(env, hidden_dim, n_feedforward, recurrent), independent_actors ? 2 : 1};
  }

  nnet::NetArch critic_arch() const {
    nnet::NetArch a;
    a.input_dim = env.global_state_dim();
    a.hidden_dim = critic_hidden_dim > 0 ? critic_hidden_dim : hidden_dim;
    a.n_feedforward = n_feedforward;
    a.recurrent = recurrent;
    a.n_actions = 0;
    a.with_value_head = true;
    return a;
  }

  std::int64_t steps_per_iteration() const { return static_cast<std::int64_t>(n_envs) * rollout_len; }
  std::int64_t n_iterations() const { return total_env_steps / steps_per_iteration(); }

  // Linear annealing to zero over the run.
  double lr_at(std::int64_t iteration) const {
    return lr_start * (1.0 - static_cast<double>(iteration) / static_cast<double>(n_iterations()));
  }

  void validate() const {
    env.validate();
    if (n_envs < 1) throw ConfigError("n_envs must be >= 1", "$.rl.n_envs");
    if (rollout_len < 1) throw ConfigError("rollout_len must be >= 1", "$.rl.rollout_len");
    if (total_env_steps < steps_per_iteration()) {
      throw ConfigError("total_env_steps must cover at least one n_envs x rollout_len iteration", "$.rl.total_env_steps");
    }
    if (!(lr_start > 0.0)) throw ConfigError("lr_start must be > 0", "$.rl.lr_start");
    if (!(gamma > 0.0 && gamma <= 1.0)) throw ConfigError("gamma must lie in (0, 1]", "$.rl.gamma");
    if (!(gae_lambda >= 0.0 && gae_lambda <= 1.0)) throw ConfigError("gae_lambda must lie in [0, 1]", "$.rl.gae_lambda");
    if (!(clip_eps > 0.0)) throw ConfigError("clip_eps must be > 0", "$.rl.clip_eps");
    if (value_coef < 0.0) throw ConfigError("value_coef must be >= 0", "$.rl.value_coef");
    if (entropy_coef < 0.0) throw ConfigError("entropy_coef must be >= 0", "$.rl.entropy_coef");
    if (epochs_per_update < 1) throw ConfigError("epochs_per_update must be >= 1", "$.rl.epochs_per_update");
    if (minibatches < 1 || minibatches > n_envs) {
      throw ConfigError("minibatches must lie in [1, n_envs]", "$.rl.minibatches");
    }
    if (!(max_grad_norm > 0.0)) throw ConfigError("max_grad_norm must be > 0", "$.rl.max_grad_norm");
    if (checkpoint_every < 0) throw ConfigError("checkpoint_every must be >= 0", "$.rl.checkpoint_every");
    team().arch.validate();
    critic_arch().validate();
  }
};

// ---- GAE ----

struct Gae {
  std::vector<double> advantages;
  std::vector<double> returns;
};

// values has one more entry than rewards: the bootstrap for the state after
// the last step. dones[t] means the episode ended with step t.
inline Gae compute_gae(const std::vector<double>& rewards, const std::vector<double>& values,
                       const std::vector<bool>& dones, double gamma, double lambda) {
  const std::size_t n = rewards.size();
  if (values.size() != n + 1 || dones.size() != n) throw ShapeError("compute_gae: misaligned inputs");
  Gae g;
  g.advantages.assign(n, 0.0);
  g.returns.assign(n, 0.0);
  double next = 0.0;
  for (std::size_t i = n; i-- > 0;) {
    const double keep = dones[i] ? 0.0 : 1.0;
    const double delta = rewards[i] + gamma * values[i + 1] * keep - values[i];
    next = delta + gamma * lambda * keep * next;
    g.advantages[i] = next;
    g.returns[i] = next + values[i];
  }
  return g;
}

// ---- optimizer ----

struct Adam {
  double beta1 = 0.9;
  double beta2 = 0.999;
  double eps = 1e-5;
  std::vector<double> m, v;
  std::int64_t t = 0;

  void step(std::vector<float>& params, const std::vector<double>& grad, double lr) {
    if (grad.size() != params.size()) throw ShapeError("Adam: gradient length mismatch");
    if (m.empty()) {
      m.assign(params.size(), 0.0);
      v.assign(params.size(), 0.0);
    }
    ++t;
    const double c1 = 1.0 - std::pow(beta1, static_cast<double>(t));
    const double c2 = 1.0 - std::pow(beta2, static_cast<double>(t));
    for (std::size_t i = 0; i < params.size(); ++i) {
      m[i] = beta1 * m[i] + (1.0 - beta1) * grad[i];
      v[i] = beta2 * v[i] + (1.0 - beta2) * grad[i] * grad[i];
      const double upd = lr * (m[i] / c1) / (std::sqrt(v[i] / c2) + eps);
      params[i] = static_cast<float>(static_cast<double>(params[i]) - upd);
    }
  }
};

// Scales all gradients together so their joint L2 norm is at most max_norm.
// Returns the norm before clipping.
inline double clip_global_norm(std::vector<std::vector<double>*> grads, double max_norm) {
  double ss = 0.0;
  for (auto* g : grads) {
    for (double v : *g) ss += v * v;
  }
  const double norm = std::sqrt(ss);
  if (norm > max_norm && norm > 0.0) {
    const double s = max_norm / norm;
    for (auto* g : grads) {
      for (double& v : *g) v *= s;
    }
  }
  return norm;
}

// ---- clipped surrogate ----

template <class T>
struct Surrogate {
  Var value;  // mean over samples of min(r A, clip(r) A), 1x1
  double clip_fraction = 0.0;
  double mean_ratio = 0.0;
};

// logp: N x 1 log-probabilities under the current params; old and adv are
// constants of the same shape.
template <class T>
Surrogate<T> clipped_surrogate(nnet::Tape<T>& tape, Var logp, const Matrix<T>& old_logp, const Matrix<T>& adv,
                               double clip_eps) {
  const auto& lp = tape.value(logp);
  if (!lp.same_shape(old_logp) || !lp.same_shape(adv) || lp.cols != 1) throw ShapeError("surrogate: shape mismatch");
  Var ratio = tape.exp(tape.sub(logp, tape.leaf(old_logp)));
  Var unclipped = tape.mul_const(ratio, adv);
  const T lo = static_cast<T>(1.0 - clip_eps), hi = static_cast<T>(1.0 + clip_eps);
  Var clipped = tape.mul_const(tape.clamp(ratio, lo, hi), adv);
  Var m = tape.minimum(unclipped, clipped);
  Surrogate<T> s;
  const auto& rv = tape.value(ratio);
  const auto& mv = tape.value(m);
  const auto& cv = tape.value(clipped);
  std::size_t n_clipped = 0;
  double rsum = 0.0;
  for (std::size_t i = 0; i < rv.size(); ++i) {
    if (std::abs(static_cast<double>(rv.data[i]) - 1.0) > clip_eps) ++n_clipped;
    rsum += static_cast<double>(rv.data[i]);
    if (!(mv.data[i] <= cv.data[i]) && std::isfinite(static_cast<double>(mv.data[i]))) {
      throw Error("surrogate term exceeds its clipped bound");
    }
  }
  s.clip_fraction = rv.size() ? static_cast<double>(n_clipped) / static_cast<double>(rv.size()) : 0.0;
  s.mean_ratio = rv.size() ? rsum / static_cast<double>(rv.size()) : 0.0;
  s.value = tape.mean(m);
  return s;
}

// ---- environments ----

class VecEnv {
 public:
  VecEnv(const grid::GridConfig& cfg, int n, std::uint64_t seed) : cfg_(cfg), seed_(seed) {
    cfg_.validate();
    states_.resize(static_cast<std::size_t>(n));
    obs_.resize(static_cast<std::size_t>(n));
    episode_.assign(static_cast<std::size_t>(n), 0);
    running_.assign(static_cast<std::size_t>(n), 0.0);
    for (int i = 0; i < n; ++i) reset_env(static_cast<std::size_t>(i));
  }

  std::size_t size() const { return states_.size(); }
  const grid::GridConfig& config() const { return cfg_; }
  const grid::GridState& state(std::size_t i) const { return states_[i]; }
  const std::array<grid::Observation, grid::kNumAgents>& obs(std::size_t i) const { return obs_[i]; }

  struct Outcome {
    double reward = 0.0;
    bool done = false;
    double episode_return = 0.0;  // valid when done
  };

  // Steps env i; on episode end the env is reset and the finished return reported.
  Outcome step(std::size_t i, const std::array<int, grid::kNumAgents>& a) {
    auto st = grid::step(states_[i], a, cfg_);
    running_[i] += st.reward;
    Outcome o{st.reward, st.done, 0.0};
    if (st.done) {
      o.episode_return = running_[i];
      reset_env(i);
    } else {
      obs_[i] = st.obs;
    }
    return o;
  }

 private:
  void reset_env(std::size_t i) {
    const std::uint64_t s = stream_seed(stream_seed(seed_, Stream::kEnv, i), episode_[i]++, 0);
    auto rr = grid::reset(cfg_, s);
    states_[i] = std::move(rr.state);
    obs_[i] = rr.obs;
    running_[i] = 0.0;
  }

  grid::GridConfig cfg_;
  std::uint64_t seed_;
  std::vector<grid::GridState> states_;
  std::vector<std::array<grid::Observation, grid::kNumAgents>> obs_;
  std::vector<std::uint64_t> episode_;
  std::vector<double> running_;
};

// ---- rollouts ----

// Layouts: per-agent arrays are [t][env][agent], per-env arrays [t][env].
struct RolloutBatch {
  int T = 0;
  int E = 0;
  std::size_t obs_dim = 0;
  std::size_t state_dim = 0;
  std::vector<float> obs;
  std::vector<float> global_state;
  std::vector<int> actions;
  std::vector<float> logp;
  std::vector<float> values;
  std::vector<float> rewards;
  std::vector<std::uint8_t> dones;   // episode ended with this step
  std::vector<std::uint8_t> starts;  // hidden state zeroed before this step
  Matrix<float> actor_h0;            // (E*2) x H at the window start, before masking
  Matrix<float> critic_h0;           // E x Hc
  std::vector<float> bootstrap;      // V(state after the last step), per env
  std::vector<float> advantages;     // [t][env], shared by both agents
  std::vector<float> returns;        // [t][env]
  std::vector<double> episode_returns;
  metrics::EmitTally tally;

  std::size_t ai(int t, int e, int a) const {
    return (static_cast<std::size_t>(t) * static_cast<std::size_t>(E) + static_cast<std::size_t>(e)) * 2 +
           static_cast<std::size_t>(a);
  }
  std::size_t ei(int t, int e) const {
    return static_cast<std::size_t>(t) * static_cast<std::size_t>(E) + static_cast<std::size_t>(e);
  }
};

// Recurrent state carried between rollout windows.
struct Carry {
  Matrix<float> actor_h;   // (E*2) x H
  Matrix<float> critic_h;  // E x Hc
  std::vector<std::uint8_t> fresh;  // env starts a new episode at the next step

  static Carry zeros(const RlConfig& c) {
    Carry k;
    const auto n = static_cast<std::size_t>(c.n_envs);
    if (c.recurrent) {
      k.actor_h = Matrix<float>(n * 2, static_cast<std::size_t>(c.team().arch.hidden_dim));
      k.critic_h = Matrix<float>(n, static_cast<std::size_t>(c.critic_arch().hidden_dim));
    }
    k.fresh.assign(n, 1);
    return k;
  }
};

namespace detail {

inline void zero_rows(Matrix<float>& m, std::size_t first, std::size_t count) {
  if (m.empty()) return;
  std::fill(m.row(first), m.row(first) + count * m.cols, 0.0f);
}

}  // namespace detail

// Runs rollout_len steps in every env. Actions are sampled from the actor;
// both agents receive the team reward. `random_actions` replaces the actor
// with a uniform policy and skips both networks (baseline measurement).
inline RolloutBatch collect_rollouts(const RlConfig& c, std::span<const float> actor, std::span<const float> critic,
                                     VecEnv& envs, Carry& carry, int rollout_len, std::mt19937_64& rng,
                                     bool random_actions = false) {
  const TeamPolicy team = c.team();
  const nnet::NetArch carch = c.critic_arch();
  const grid::GridConfig& env = envs.config();
  RolloutBatch b;
  b.T = rollout_len;
  b.E = static_cast<int>(envs.size());
  b.obs_dim = static_cast<std::size_t>(env.obs_dim());
  b.state_dim = static_cast<std::size_t>(env.global_state_dim());
  const std::size_t E = envs.size();
  const std::size_t T = static_cast<std::size_t>(rollout_len);
  b.obs.resize(T * E * 2 * b.obs_dim);
  b.global_state.resize(T * E * b.state_dim);
  b.actions.resize(T * E * 2);
  b.logp.resize(T * E * 2);
  b.values.resize(T * E);
  b.rewards.resize(T * E);
  b.dones.resize(T * E);
  b.starts.resize(T * E);
  b.actor_h0 = carry.actor_h;
  b.critic_h0 = carry.critic_h;
  const auto overlap = env.overlap_symbols();
  const std::size_t na = static_cast<std::size_t>(env.n_actions());

  Matrix<float> o(E * 2, b.obs_dim), g(E, b.state_dim);
  for (int t = 0; t < rollout_len; ++t) {
    for (std::size_t e = 0; e < E; ++e) {
      const bool fresh = carry.fresh[e] != 0;
      b.starts[b.ei(t, static_cast<int>(e))] = fresh ? 1 : 0;
      if (fresh && c.recurrent) {
        detail::zero_rows(carry.actor_h, e * 2, 2);
        detail::zero_rows(carry.critic_h, e, 1);
      }
      for (int a = 0; a < grid::kNumAgents; ++a) grid::encode_observation(envs.obs(e)[a], env, o.row(e * 2 + a));
      grid::global_state(envs.state(e), env, g.row(e));
    }
    std::copy(o.data.begin(), o.data.end(), b.obs.begin() + static_cast<std::ptrdiff_t>(static_cast<std::size_t>(t) * E * 2 * b.obs_dim));
    std::copy(g.data.begin(), g.data.end(), b.global_state.begin() + static_cast<std::ptrdiff_t>(static_cast<std::size_t>(t) * E * b.state_dim));
    nnet::ForwardOut<float> act, val;
    if (random_actions) {
      act.logits = Matrix<float>(E * 2, na);
      val.value = Matrix<float>(E, 1);
    } else {
      act = team.forward(actor, o, carry.actor_h);
      val = nnet::policy_forward<float>(carch, critic, g, carry.critic_h);
      if (c.recurrent) {
        carry.actor_h = std::move(act.hidden);
        carry.critic_h = std::move(val.hidden);
      }
    }
    for (std::size_t e = 0; e < E; ++e) {
      std::array<int, grid::kNumAgents> ja{};
      for (int a = 0; a < grid::kNumAgents; ++a) {
        const float* l = act.logits.row(e * 2 + static_cast<std::size_t>(a));
        const int k = random_actions ? std::uniform_int_distribution<int>(0, static_cast<int>(na) - 1)(rng)
                                     : nnet::sample_action(l, na, rng);
        ja[a] = k;
        b.actions[b.ai(t, static_cast<int>(e), a)] = k;
        b.logp[b.ai(t, static_cast<int>(e), a)] = static_cast<float>(nnet::log_softmax_at(l, na, static_cast<std::size_t>(k)));
        b.tally.add(k, env, overlap);
      }
      b.values[b.ei(t, static_cast<int>(e))] = val.value.data[e];
      const auto out = envs.step(e, ja);
      b.rewards[b.ei(t, static_cast<int>(e))] = static_cast<float>(out.reward);
      b.dones[b.ei(t, static_cast<int>(e))] = out.done ? 1 : 0;
      carry.fresh[e] = out.done ? 1 : 0;
      if (out.done) b.episode_returns.push_back(out.episode_return);
    }
  }
  // Bootstrap from the state after the window, without advancing the carry.
  Matrix<float> hcb = carry.critic_h;
  for (std::size_t e = 0; e < E; ++e) {
    if (carry.fresh[e] && c.recurrent) detail::zero_rows(hcb, e, 1);
    grid::global_state(envs.state(e), env, g.row(e));
  }
  auto boot = nnet::policy_forward<float>(carch, critic, g, hcb);
  b.bootstrap.assign(boot.value.data.begin(), boot.value.data.end());
  return b;
}

// Per-env GAE over the window; advantages are shared by both agents.
inline void compute_advantages(RolloutBatch& b, double gamma, double lambda) {
  b.advantages.assign(b.values.size(), 0.0f);
  b.returns.assign(b.values.size(), 0.0f);
  std::vector<double> r(static_cast<std::size_t>(b.T)), v(static_cast<std::size_t>(b.T) + 1);
  std::vector<bool> d(static_cast<std::size_t>(b.T));
  for (int e = 0; e < b.E; ++e) {
    for (int t = 0; t < b.T; ++t) {
      r[static_cast<std::size_t>(t)] = b.rewards[b.ei(t, e)];
      v[static_cast<std::size_t>(t)] = b.values[b.ei(t, e)];
      d[static_cast<std::size_t>(t)] = b.dones[b.ei(t, e)] != 0;
    }
    v[static_cast<std::size_t>(b.T)] = b.bootstrap[static_cast<std::size_t>(e)];
    const auto g = compute_gae(r, v, d, gamma, lambda);
    for (int t = 0; t < b.T; ++t) {
      b.advantages[b.ei(t, e)] = static_cast<float>(g.advantages[static_cast<std::size_t>(t)]);
      b.returns[b.ei(t, e)] = static_cast<float>(g.returns[static_cast<std::size_t>(t)]);
    }
  }
}

// ---- taped replay of a window ----

struct Replay {
  Var logp;        // N x 1, rows ordered (group, t, member)
  Var neg_entropy; // N x 1
  Var values;      // (T*B) x 1, rows ordered (t, b)
  Matrix<float> old_logp;  // N x 1
  Matrix<float> adv;       // N x 1, raw (not yet standardized)
  Matrix<float> returns;   // (T*B) x 1
  std::vector<std::unique_ptr<nnet::TapedNet<float>>> actors;
  std::unique_ptr<nnet::TapedNet<float>> critic;
};

// Re-runs the recorded window for the given envs with full backprop through
// time. Hidden states start from the stored window-initial values and are
// zeroed wherever an episode started.
inline Replay replay_window(nnet::Tape<float>& tape, const RlConfig& c, const RolloutBatch& b,
                            std::span<const float> actor, std::span<const float> critic, const std::vector<int>& envs) {
  const TeamPolicy team = c.team();
  const nnet::NetArch carch = c.critic_arch();
  const std::size_t B = envs.size();
  const std::size_t ha = static_cast<std::size_t>(team.arch.hidden_dim);
  const std::size_t hc = static_cast<std::size_t>(carch.hidden_dim);
  Replay r;
  for (int k = 0; k < team.copies; ++k) {
    r.actors.push_back(std::make_unique<nnet::TapedNet<float>>(tape, team.arch, team.copy_params(actor, k)));
  }
  r.critic = std::make_unique<nnet::TapedNet<float>>(tape, carch, critic);

  // Group g holds (env, agent) members; one group with both agents when shared.
  std::vector<std::vector<std::pair<int, int>>> groups(static_cast<std::size_t>(team.copies));
  for (std::size_t i = 0; i < B; ++i) {
    for (int a = 0; a < grid::kNumAgents; ++a) {
      groups[team.copies == 1 ? 0 : static_cast<std::size_t>(a)].push_back({envs[i], a});
    }
  }
  std::vector<Var> ah(groups.size());
  for (std::size_t g = 0; g < groups.size(); ++g) {
    Matrix<float> h0(groups[g].size(), c.recurrent ? ha : 0);
    if (c.recurrent) {
      for (std::size_t m = 0; m < groups[g].size(); ++m) {
        const auto [e, a] = groups[g][m];
        const float* src = b.actor_h0.row(static_cast<std::size_t>(e) * 2 + static_cast<std::size_t>(a));
        std::copy(src, src + ha, h0.row(m));
      }
    }
    ah[g] = tape.leaf(std::move(h0));
  }
  Matrix<float> ch0(B, c.recurrent ? hc : 0);
  if (c.recurrent) {
    for (std::size_t i = 0; i < B; ++i) {
      const float* src = b.critic_h0.row(static_cast<std::size_t>(envs[i]));
      std::copy(src, src + hc, ch0.row(i));
    }
  }
  Var chv = tape.leaf(std::move(ch0));

  // Non-recurrent stages run once on all T steps stacked t-major; only the
  // GRU update is stepped in time. Rows come out ordered (group, t, member).
  const std::size_t T = static_cast<std::size_t>(b.T);
  auto run_steps = [&](nnet::TapedNet<float>& net, Var obs_all, Var h, std::size_t M, std::size_t hd,
                       const std::vector<std::size_t>& envs_of) {
    Var enc = net.encode(obs_all);
    if (!c.recurrent) return net.heads(enc);
    std::vector<Var> hs;
    hs.reserve(T);
    for (std::size_t t = 0; t < T; ++t) {
      Matrix<float> mask(M, hd, 1.0f);
      bool any_start = false;
      for (std::size_t m = 0; m < M; ++m) {
        if (b.starts[b.ei(static_cast<int>(t), static_cast<int>(envs_of[m]))]) {
          std::fill(mask.row(m), mask.row(m) + hd, 0.0f);
          any_start = true;
        }
      }
      if (any_start) h = tape.mul_const(h, mask);
      h = net.recur(tape.slice_rows(enc, t * M, (t + 1) * M), h);
      hs.push_back(h);
    }
    return net.heads(tape.concat_rows(hs));
  };

  std::vector<Var> lps, nents;
  std::vector<float> old, adv, ret;
  for (std::size_t g = 0; g < groups.size(); ++g) {
    const auto& mem = groups[g];
    const std::size_t M = mem.size();
    Matrix<float> o(T * M, b.obs_dim);
    std::vector<int> acts(T * M);
    std::vector<std::size_t> envs_of(M);
    for (std::size_t m = 0; m < M; ++m) envs_of[m] = static_cast<std::size_t>(mem[m].first);
    for (std::size_t t = 0; t < T; ++t) {
      for (std::size_t m = 0; m < M; ++m) {
        const auto [e, a] = mem[m];
        const std::size_t ai = b.ai(static_cast<int>(t), e, a);
        const float* src = &b.obs[ai * b.obs_dim];
        std::copy(src, src + b.obs_dim, o.row(t * M + m));
        acts[t * M + m] = b.actions[ai];
        old.push_back(b.logp[ai]);
        adv.push_back(b.advantages.empty() ? 0.0f : b.advantages[b.ei(static_cast<int>(t), e)]);
      }
    }
    auto out = run_steps(*r.actors[g], tape.leaf(std::move(o)), ah[g], M, ha, envs_of);
    Var ls = tape.log_softmax(out.logits);
    lps.push_back(tape.pick(ls, acts));
    nents.push_back(tape.row_sum(tape.mul(tape.exp(ls), ls)));
  }
  Matrix<float> gs(T * B, b.state_dim);
  std::vector<std::size_t> cenvs(B);
  for (std::size_t i = 0; i < B; ++i) cenvs[i] = static_cast<std::size_t>(envs[i]);
  for (std::size_t t = 0; t < T; ++t) {
    for (std::size_t i = 0; i < B; ++i) {
      const std::size_t ei = b.ei(static_cast<int>(t), envs[i]);
      const float* src = &b.global_state[ei * b.state_dim];
      std::copy(src, src + b.state_dim, gs.row(t * B + i));
      ret.push_back(b.returns.empty() ? 0.0f : b.returns[ei]);
    }
  }
  std::vector<Var> vals{run_steps(*r.critic, tape.leaf(std::move(gs)), chv, B, hc, cenvs).value};
  r.logp = tape.concat_rows(lps);
  r.neg_entropy = tape.concat_rows(nents);
  r.values = tape.concat_rows(vals);
  r.old_logp = Matrix<float>(old.size(), 1, std::span<const float>(old));
  r.adv = Matrix<float>(adv.size(), 1, std::span<const float>(adv));
  r.returns = Matrix<float>(ret.size(), 1, std::span<const float>(ret));
  return r;
}

// ---- update ----

struct UpdateStats {
  double policy_loss = 0.0;
  double value_loss = 0.0;
  double entropy = 0.0;
  double clip_fraction = 0.0;
  double grad_norm = 0.0;
  double approx_kl = 0.0;
  int steps = 0;
  bool aborted = false;
  std::string diagnostic;
};

struct Learner {
  std::vector<float> actor;
  std::vector<float> critic;
  Adam actor_opt;
  Adam critic_opt;
};

// epochs_per_update passes; each splits the envs into `minibatches` disjoint
// sequence groups. Advantages are standardized over the whole batch first.
inline UpdateStats ppo_update(const RlConfig& c, const RolloutBatch& batch, Learner& learner, double lr,
                              std::mt19937_64& rng) {
  if (batch.advantages.size() != batch.values.size()) throw Error("ppo_update: advantages not computed");
  RolloutBatch b = batch;
  {
    double s = 0.0, ss = 0.0;
    for (float a : b.advantages) s += a;
    const double n = static_cast<double>(b.advantages.size());
    const double mean = s / n;
    for (float a : b.advantages) ss += (a - mean) * (a - mean);
    const double sd = std::sqrt(ss / n);
    for (float& a : b.advantages) a = static_cast<float>((a - mean) / (sd + 1e-8));
  }
  learner.actor_opt.eps = c.adam_eps;
  learner.critic_opt.eps = c.adam_eps;
  UpdateStats st;
  std::vector<int> order(static_cast<std::size_t>(b.E));
  for (int epoch = 0; epoch < c.epochs_per_update && !st.aborted; ++epoch) {
    std::iota(order.begin(), order.end(), 0);
    std::shuffle(order.begin(), order.end(), rng);
    for (int mb = 0; mb < c.minibatches; ++mb) {
      const std::size_t lo = static_cast<std::size_t>(mb) * order.size() / static_cast<std::size_t>(c.minibatches);
      const std::size_t hi = static_cast<std::size_t>(mb + 1) * order.size() / static_cast<std::size_t>(c.minibatches);
      std::vector<int> envs(order.begin() + static_cast<std::ptrdiff_t>(lo), order.begin() + static_cast<std::ptrdiff_t>(hi));
      std::sort(envs.begin(), envs.end());
      nnet::Tape<float> tape;
      auto r = replay_window(tape, c, b, learner.actor, learner.critic, envs);
      auto sur = clipped_surrogate<float>(tape, r.logp, r.old_logp, r.adv, c.clip_eps);
      Var policy_loss = tape.scale(sur.value, -1.0f);
      Var value_loss = tape.mean(tape.square(tape.sub(r.values, tape.leaf(r.returns))));
      Var entropy = tape.scale(tape.mean(r.neg_entropy), -1.0f);
      Var loss = tape.add(tape.add(policy_loss, tape.scale(value_loss, static_cast<float>(c.value_coef))),
                          tape.scale(entropy, static_cast<float>(-c.entropy_coef)));
      const double lv = tape.value(loss).data[0];
      if (!std::isfinite(lv)) {
        st.aborted = true;
        st.diagnostic = "non-finite loss at epoch " + std::to_string(epoch) + ", minibatch " + std::to_string(mb);
        break;
      }
      tape.backward(loss);
      std::vector<double> ga, gc;
      for (auto& net : r.actors) {
        const auto g = net->gradient();
        ga.insert(ga.end(), g.begin(), g.end());
      }
      {
        const auto g = r.critic->gradient();
        gc.assign(g.begin(), g.end());
      }
      st.grad_norm += clip_global_norm({&ga, &gc}, c.max_grad_norm);
      learner.actor_opt.step(learner.actor, ga, lr);
      learner.critic_opt.step(learner.critic, gc, lr);

      const auto& lp = tape.value(r.logp);
      double kl = 0.0;
      for (std::size_t i = 0; i < lp.size(); ++i) kl += static_cast<double>(r.old_logp.data[i] - lp.data[i]);
      st.approx_kl += kl / static_cast<double>(lp.size());
      st.policy_loss += tape.value(policy_loss).data[0];
      st.value_loss += tape.value(value_loss).data[0];
      st.entropy += tape.value(entropy).data[0];
      st.clip_fraction += sur.clip_fraction;
      ++st.steps;
    }
  }
  if (st.steps > 0) {
    const double n = st.steps;
    st.policy_loss /= n;
    st.value_loss /= n;
    st.entropy /= n;
    st.clip_fraction /= n;
    st.grad_norm /= n;
    st.approx_kl /= n;
  }
  return st;
}

// ---- training loop ----

// Mean return of episodes finished in the window; when none finished, the
// per-step mean reward scaled to an episode.
inline std::pair<double, double> window_reward(const RolloutBatch& b, int episode_len) {
  if (!b.episode_returns.empty()) {
    const auto m = metrics::moments(b.episode_returns);
    return {m.mean, m.std};
  }
  double s = 0.0;
  for (float r : b.rewards) s += r;
  return {s / static_cast<double>(b.rewards.size()) * episode_len, 0.0};
}

struct IterationInfo {
  std::int64_t iteration = 0;
  const Learner* learner = nullptr;
  UpdateStats update;
  bool last = false;
};

struct TrainResult {
  metrics::RunHistory history;
  Learner learner;
};

inline metrics::RunHistory rl_history_shell(const RlConfig& c) {
  metrics::RunHistory h;
  h.aux_columns = {"entropy", "clip_fraction", "lr"};
  h.metadata = {{"algorithm", "mappo"},
                {"gamma", c.gamma},
                {"gae_lambda", c.gae_lambda},
                {"clip_eps", c.clip_eps},
                {"value_coef", c.value_coef},
                {"entropy_coef", c.entropy_coef},
                {"epochs_per_update", c.epochs_per_update},
                {"minibatches", c.minibatches},
                {"max_grad_norm", c.max_grad_norm},
                {"adam_eps", c.adam_eps},
                {"local_defaults_note",
                 "only lr_start and n_envs come from the source setting; other PPO hyperparameters are local defaults"},
                {"mimicry_source", "training rollouts of the current iteration"}};
  return h;
}

inline TrainResult train(const RlConfig& c, const std::function<void(const IterationInfo&)>& on_iteration = {}) {
  c.validate();
  TrainResult out;
  out.history = rl_history_shell(c);
  const TeamPolicy team = c.team();
  out.learner.actor = team.init(c.seed);
  out.learner.critic = nnet::init_params(c.critic_arch(), stream_seed(c.seed, Stream::kInit, 100));
  VecEnv envs(c.env, c.n_envs, c.seed);
  Carry carry = Carry::zeros(c);
  const std::int64_t n_iter = c.n_iterations();
  for (std::int64_t it = 0; it < n_iter; ++it) {
    const double lr = c.lr_at(it);
    std::mt19937_64 act_rng(stream_seed(c.seed, Stream::kActions, static_cast<std::uint64_t>(it)));
    auto batch = collect_rollouts(c, out.learner.actor, out.learner.critic, envs, carry, c.rollout_len, act_rng);
    compute_advantages(batch, c.gamma, c.gae_lambda);
    std::mt19937_64 shuf(stream_seed(c.seed, Stream::kShuffle, static_cast<std::uint64_t>(it)));
    const auto st = ppo_update(c, batch, out.learner, lr, shuf);
    const auto [mean_r, std_r] = window_reward(batch, c.env.episode_len);
    out.history.append({it, (it + 1) * c.steps_per_iteration(), mean_r, std_r, batch.tally.frequency(),
                        {st.entropy, st.clip_fraction, lr}});
    if (on_iteration) on_iteration({it, &out.learner, st, it + 1 == n_iter});
    if (st.aborted) {
      out.history.metadata["aborted"] = st.diagnostic;
      break;
    }
  }
  return out;
}

// Uniform-random joint actions on the same environment setup; returns the
// per-iteration window rewards (same definition as training's mean_reward).
inline std::vector<double> random_policy_rewards(const RlConfig& c, int iterations) {
  c.validate();
  const TeamPolicy team = c.team();
  const auto actor = team.init(c.seed);
  const auto critic = nnet::init_params(c.critic_arch(), stream_seed(c.seed, Stream::kInit, 100));
  VecEnv envs(c.env, c.n_envs, stream_seed(c.seed, Stream::kBaseline, 0));
  Carry carry = Carry::zeros(c);
  std::vector<double> out;
  for (int it = 0; it < iterations; ++it) {
    std::mt19937_64 rng(stream_seed(c.seed, Stream::kBaseline, static_cast<std::uint64_t>(it) + 1));
    auto b = collect_rollouts(c, actor, critic, envs, carry, c.rollout_len, rng, true);
    out.push_back(window_reward(b, c.env.episode_len).first);
  }
  return out;
}

}  // namespace mimic_sig::marl

#endif  // MIMIC_SIG_MARL_HPP_
