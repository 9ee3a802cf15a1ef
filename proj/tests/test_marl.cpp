#include <gtest/gtest.h>

#include <cmath>
#include <random>

#include "mimic_sig/marl.hpp"

namespace ms = mimic_sig;
namespace marl = mimic_sig::marl;
namespace nn = mimic_sig::nnet;
namespace gw = mimic_sig::grid;

namespace {

marl::RlConfig small_config() {
  marl::RlConfig c;
  c.env.width = 4;
  c.env.height = 4;
  c.env.alphabet_size = 3;
  c.env.agent_signals = {0, 1, 2};
  c.env.resource_signals = {0, 1, 2};
  c.hidden_dim = 8;
  c.n_feedforward = 1;
  c.n_envs = 4;
  c.rollout_len = 8;
  c.total_env_steps = 4 * 8 * 3;
  c.minibatches = 2;
  c.epochs_per_update = 2;
  c.seed = 17;
  return c;
}

// Direct (gamma*lambda)-weighted sum of TD errors, truncated at episode ends.
std::vector<double> gae_by_summation(const std::vector<double>& r, const std::vector<double>& v,
                                     const std::vector<bool>& d, double g, double l) {
  const std::size_t n = r.size();
  std::vector<double> delta(n);
  for (std::size_t t = 0; t < n; ++t) delta[t] = r[t] + (d[t] ? 0.0 : g * v[t + 1]) - v[t];
  std::vector<double> out(n, 0.0);
  for (std::size_t t = 0; t < n; ++t) {
    double w = 1.0;
    for (std::size_t k = t; k < n; ++k) {
      out[t] += w * delta[k];
      if (d[k]) break;
      w *= g * l;
    }
  }
  return out;
}

}  // namespace

TEST(Gae, TerminalStepIsRewardMinusValue) {
  const auto g = marl::compute_gae({2.0}, {0.5, 100.0}, {true}, 0.99, 0.95);
  EXPECT_DOUBLE_EQ(g.advantages[0], 1.5);
  EXPECT_DOUBLE_EQ(g.returns[0], 2.0);
}

TEST(Gae, LambdaZeroIsOneStepTdError) {
  const std::vector<double> r = {1.0, -0.5, 0.25}, v = {0.1, 0.2, 0.3, 0.4};
  const auto g = marl::compute_gae(r, v, {false, false, false}, 0.9, 0.0);
  for (std::size_t t = 0; t < r.size(); ++t) EXPECT_NEAR(g.advantages[t], r[t] + 0.9 * v[t + 1] - v[t], 1e-15);
}

TEST(Gae, FiveStepHandComputed) {
  const std::vector<double> r = {0.0, 1.0, 0.0, -1.0, 2.0}, v = {0.5, 0.4, 0.3, 0.2, 0.1, 0.0};
  const std::vector<bool> d = {false, false, true, false, false};
  const auto g = marl::compute_gae(r, v, d, 0.99, 0.95);
  const auto want = gae_by_summation(r, v, d, 0.99, 0.95);
  for (std::size_t t = 0; t < r.size(); ++t) EXPECT_NEAR(g.advantages[t], want[t], 1e-12);
}

TEST(Gae, AllDonePatternsUpToLengthSixMatchSummation) {
  std::mt19937_64 rng(4);
  std::uniform_real_distribution<double> u(-2.0, 2.0);
  double worst = 0.0;
  for (std::size_t n = 1; n <= 6; ++n) {
    for (unsigned mask = 0; mask < (1u << n); ++mask) {
      std::vector<double> r(n), v(n + 1);
      std::vector<bool> d(n);
      for (auto& x : r) x = u(rng);
      for (auto& x : v) x = u(rng);
      for (std::size_t t = 0; t < n; ++t) d[t] = (mask >> t) & 1u;
      const auto g = marl::compute_gae(r, v, d, 0.97, 0.9);
      const auto want = gae_by_summation(r, v, d, 0.97, 0.9);
      for (std::size_t t = 0; t < n; ++t) {
        worst = std::max(worst, std::abs(g.advantages[t] - want[t]));
        EXPECT_NEAR(g.returns[t], g.advantages[t] + v[t], 1e-12);
      }
    }
  }
  EXPECT_LT(worst, 1e-6);
}

TEST(Gae, MisalignedInputsThrow) {
  EXPECT_THROW(marl::compute_gae({1.0}, {0.0}, {false}, 0.9, 0.9), ms::ShapeError);
}

TEST(Surrogate, RatioOneGivesMeanAdvantage) {
  nn::Tape<double> t;
  nn::Matrix<double> lp(4, 1, std::vector<double>{-1.0, -0.5, -2.0, -0.1});
  nn::Matrix<double> adv(4, 1, std::vector<double>{1.0, -2.0, 0.5, 3.0});
  auto s = marl::clipped_surrogate<double>(t, t.leaf(lp), lp, adv, 0.2);
  EXPECT_NEAR(t.value(s.value).data[0], 2.5 / 4.0, 1e-15);
  EXPECT_EQ(s.clip_fraction, 0.0);
  EXPECT_NEAR(s.mean_ratio, 1.0, 1e-15);
}

TEST(Surrogate, ZeroAdvantagesGiveZeroLossAndGradient) {
  nn::Tape<double> t;
  nn::Matrix<double> old(3, 1, std::vector<double>{-1.0, -1.0, -1.0});
  auto lp = t.leaf(nn::Matrix<double>(3, 1, std::vector<double>{-0.5, -1.5, -1.0}), true);
  auto s = marl::clipped_surrogate<double>(t, lp, old, nn::Matrix<double>(3, 1), 0.2);
  EXPECT_EQ(t.value(s.value).data[0], 0.0);
  t.backward(s.value);
  for (double g : t.grad(lp).data) EXPECT_EQ(g, 0.0);
}

TEST(Surrogate, ClippedSamplesCarryNoGradient) {
  nn::Tape<double> t;
  nn::Matrix<double> old(2, 1, std::vector<double>{0.0, 0.0});
  // ratios e^0.5 and e^-0.5, both outside [0.8, 1.2]; positive advantage on the
  // first (clipped above), negative on the second (clipped below).
  auto lp = t.leaf(nn::Matrix<double>(2, 1, std::vector<double>{0.5, -0.5}), true);
  auto s = marl::clipped_surrogate<double>(t, lp, old, nn::Matrix<double>(2, 1, std::vector<double>{1.0, -1.0}), 0.2);
  EXPECT_EQ(s.clip_fraction, 1.0);
  EXPECT_NEAR(t.value(s.value).data[0], (1.2 - 0.8) / 2.0, 1e-12);
  t.backward(s.value);
  EXPECT_EQ(t.grad(lp).data[0], 0.0);
  EXPECT_EQ(t.grad(lp).data[1], 0.0);
}

TEST(Surrogate, BanditGradientPointsAlongAnalyticPolicyGradient) {
  // Two-armed bandit, logits = theta * [1, 0]: pi0 = s(theta). At ratio 1 the
  // surrogate gradient in theta is mean A (1[a=0] - pi0).
  std::mt19937_64 rng(12);
  std::normal_distribution<double> z;
  for (int trial = 0; trial < 20; ++trial) {
    const double theta = z(rng);
    const std::vector<int> acts = {0, 1, 1, 0, 1, 0};
    std::vector<double> a(acts.size());
    for (auto& x : a) x = z(rng);
    nn::Tape<double> t;
    auto th = t.leaf(nn::Matrix<double>(1, 1, std::vector<double>{theta}), true);
    auto logits = t.matmul(t.leaf(nn::Matrix<double>(acts.size(), 1, 1.0)),
                           t.matmul(th, t.leaf(nn::Matrix<double>(1, 2, std::vector<double>{1.0, 0.0}))));
    auto lp = t.pick(t.log_softmax(logits), acts);
    const auto old = t.value(lp);
    auto s = marl::clipped_surrogate<double>(t, lp, old, nn::Matrix<double>(a.size(), 1, a), 0.2);
    t.backward(s.value);
    const double pi0 = 1.0 / (1.0 + std::exp(-theta));
    double analytic = 0.0;
    for (std::size_t i = 0; i < acts.size(); ++i) analytic += a[i] * ((acts[i] == 0 ? 1.0 : 0.0) - pi0);
    analytic /= static_cast<double>(acts.size());
    EXPECT_NEAR(t.grad(th).data[0], analytic, 1e-12);
    if (std::abs(analytic) > 1e-9) {
      EXPECT_EQ(t.grad(th).data[0] > 0, analytic > 0);
    }
  }
}

TEST(Optim, GlobalNormClippedJointly) {
  std::vector<double> a = {3.0, 0.0}, b = {4.0};
  EXPECT_DOUBLE_EQ(marl::clip_global_norm({&a, &b}, 1.0), 5.0);
  EXPECT_NEAR(a[0], 0.6, 1e-15);
  EXPECT_NEAR(b[0], 0.8, 1e-15);
  std::vector<double> c = {0.1};
  marl::clip_global_norm({&c}, 1.0);
  EXPECT_EQ(c[0], 0.1);
}

TEST(Optim, AdamFirstStepIsLrTimesSign) {
  marl::Adam opt;
  opt.eps = 0.0;
  std::vector<float> p = {1.0f, 1.0f};
  opt.step(p, {0.3, -7.0}, 0.01);
  EXPECT_NEAR(p[0], 0.99, 1e-6);
  EXPECT_NEAR(p[1], 1.01, 1e-6);
}

TEST(Schedule, HalfwayLearningRateIsHalf) {
  auto c = small_config();
  c.total_env_steps = 4 * 8 * 10;
  EXPECT_EQ(c.n_iterations(), 10);
  EXPECT_DOUBLE_EQ(c.lr_at(0), c.lr_start);
  EXPECT_DOUBLE_EQ(c.lr_at(5), c.lr_start / 2.0);
}

TEST(Schedule, TooFewStepsRejected) {
  auto c = small_config();
  c.total_env_steps = 31;
  EXPECT_THROW(c.validate(), ms::ConfigError);
}

TEST(Sampling, ZeroParamsSampleUniformly) {
  auto c = small_config();
  const auto team = c.team();
  std::vector<float> params(team.genome_size(), 0.0f);
  gw::GridConfig env = c.env;
  auto rr = gw::reset(env, 3);
  nn::Matrix<float> o(1, static_cast<std::size_t>(env.obs_dim()));
  gw::encode_observation(rr.obs[0], env, o.row(0));
  auto out = team.forward(params, o, nn::Matrix<float>(1, static_cast<std::size_t>(c.hidden_dim)));
  const std::size_t na = static_cast<std::size_t>(env.n_actions());
  std::vector<int> counts(na, 0);
  std::mt19937_64 rng(5);
  const int n = 10000;
  for (int i = 0; i < n; ++i) ++counts[static_cast<std::size_t>(nn::sample_action(out.logits.row(0), na, rng))];
  const double p = 1.0 / static_cast<double>(na);
  const double se = std::sqrt(p * (1 - p) / n);
  for (int k : counts) EXPECT_LT(std::abs(k / static_cast<double>(n) - p), 4 * se);
}

TEST(Rollout, BatchShapes) {
  auto c = small_config();
  const auto team = c.team();
  const auto actor = team.init(1);
  const auto critic = nn::init_params(c.critic_arch(), 2);
  marl::VecEnv envs(c.env, c.n_envs, 3);
  auto carry = marl::Carry::zeros(c);
  std::mt19937_64 rng(4);
  const auto b = marl::collect_rollouts(c, actor, critic, envs, carry, c.rollout_len, rng);
  const std::size_t T = 8, E = 4, A = 2;
  EXPECT_EQ(b.actions.size(), T * E * A);
  EXPECT_EQ(b.logp.size(), T * E * A);
  EXPECT_EQ(b.obs.size(), T * E * A * static_cast<std::size_t>(c.env.obs_dim()));
  EXPECT_EQ(b.global_state.size(), T * E * static_cast<std::size_t>(c.env.global_state_dim()));
  EXPECT_EQ(b.rewards.size(), T * E);
  EXPECT_EQ(b.bootstrap.size(), E);
  for (std::size_t e = 0; e < E; ++e) EXPECT_EQ(b.starts[e], 1);
  for (int a : b.actions) {
    EXPECT_GE(a, 0);
    EXPECT_LT(a, c.env.n_actions());
  }
}

TEST(Rollout, EpisodesEndOnTimeLimitAndReset) {
  auto c = small_config();
  c.env.episode_len = 5;
  const auto team = c.team();
  marl::VecEnv envs(c.env, c.n_envs, 3);
  auto carry = marl::Carry::zeros(c);
  std::mt19937_64 rng(4);
  const auto b = marl::collect_rollouts(c, team.init(1), nn::init_params(c.critic_arch(), 2), envs, carry, 12, rng);
  EXPECT_EQ(b.episode_returns.size(), 2u * 4u);
  for (int e = 0; e < 4; ++e) {
    EXPECT_EQ(b.dones[b.ei(4, e)], 1);
    EXPECT_EQ(b.starts[b.ei(5, e)], 1);
    EXPECT_EQ(b.starts[b.ei(4, e)], 0);
  }
}

TEST(Rollout, ReplayReproducesRecordedLogProbs) {
  for (bool independent : {false, true}) {
    auto c = small_config();
    c.independent_actors = independent;
    c.env.episode_len = 5;  // episode boundaries inside the window
    const auto team = c.team();
    const auto actor = team.init(7);
    const auto critic = nn::init_params(c.critic_arch(), 8);
    marl::VecEnv envs(c.env, c.n_envs, 9);
    auto carry = marl::Carry::zeros(c);
    std::mt19937_64 rng(10);
    marl::collect_rollouts(c, actor, critic, envs, carry, 3, rng);  // non-zero carried hidden state
    auto b = marl::collect_rollouts(c, actor, critic, envs, carry, c.rollout_len, rng);
    marl::compute_advantages(b, c.gamma, c.gae_lambda);
    nn::Tape<float> tape;
    auto r = marl::replay_window(tape, c, b, actor, critic, {0, 1, 2, 3});
    const auto& lp = tape.value(r.logp);
    ASSERT_EQ(lp.size(), b.logp.size());
    for (std::size_t i = 0; i < lp.size(); ++i) EXPECT_NEAR(lp.data[i], r.old_logp.data[i], 1e-5) << i;
    const auto& v = tape.value(r.values);
    for (std::size_t i = 0; i < v.size(); ++i) EXPECT_NEAR(v.data[i], b.values[i], 1e-5) << i;
  }
}

TEST(Policy, SharedParametersSwapWithAgentRows) {
  auto c = small_config();
  const auto team = c.team();
  const auto params = team.init(21);
  auto rr = gw::reset(c.env, 5);
  const std::size_t d = static_cast<std::size_t>(c.env.obs_dim());
  nn::Matrix<float> o(2, d), s(2, d);
  gw::encode_observation(rr.obs[0], c.env, o.row(0));
  gw::encode_observation(rr.obs[1], c.env, o.row(1));
  std::copy(o.row(0), o.row(0) + d, s.row(1));
  std::copy(o.row(1), o.row(1) + d, s.row(0));
  nn::Matrix<float> h(2, static_cast<std::size_t>(c.hidden_dim));
  const auto a = team.forward(params, o, h);
  const auto b = team.forward(params, s, h);
  for (std::size_t k = 0; k < a.logits.cols; ++k) {
    EXPECT_EQ(a.logits(0, k), b.logits(1, k));
    EXPECT_EQ(a.logits(1, k), b.logits(0, k));
  }
}

TEST(Policy, IndependentActorsUseTheirOwnParameters) {
  auto c = small_config();
  c.independent_actors = true;
  const auto team = c.team();
  EXPECT_EQ(team.genome_size(), 2 * nn::param_count(team.arch));
  auto params = team.init(21);
  auto rr = gw::reset(c.env, 5);
  nn::Matrix<float> o(2, static_cast<std::size_t>(c.env.obs_dim()));
  gw::encode_observation(rr.obs[0], c.env, o.row(0));
  gw::encode_observation(rr.obs[1], c.env, o.row(1));
  nn::Matrix<float> h(2, static_cast<std::size_t>(c.hidden_dim));
  const auto before = team.forward(params, o, h);
  // Perturb only agent 1's policy bias.
  const auto& pib = nn::find_slice(nn::layout(team.arch), "pi.b");
  params[team.params_per_copy() + pib.offset] += 1.0f;
  const auto after = team.forward(params, o, h);
  for (std::size_t k = 0; k < before.logits.cols; ++k) EXPECT_EQ(before.logits(0, k), after.logits(0, k));
  EXPECT_NE(before.logits(1, 0), after.logits(1, 0));
}

TEST(Train, OneHistoryRowPerIteration) {
  auto c = small_config();
  const auto r = marl::train(c);
  ASSERT_EQ(r.history.size(), 3u);
  for (std::size_t i = 0; i < 3; ++i) {
    EXPECT_EQ(r.history.records[i].iteration, static_cast<std::int64_t>(i));
    EXPECT_EQ(r.history.records[i].env_steps, static_cast<std::int64_t>(i + 1) * 32);
  }
  EXPECT_EQ(r.history.aux_columns, (std::vector<std::string>{"entropy", "clip_fraction", "lr"}));
}

TEST(Train, SameSeedBitIdenticalHistory) {
  auto c = small_config();
  const auto a = marl::train(c);
  const auto b = marl::train(c);
  EXPECT_EQ(ms::metrics::history_to_csv(a.history), ms::metrics::history_to_csv(b.history));
  EXPECT_EQ(a.learner.actor, b.learner.actor);
  c.seed = 18;
  EXPECT_NE(ms::metrics::history_to_csv(marl::train(c).history), ms::metrics::history_to_csv(a.history));
}

TEST(Train, UpdateChangesParameters) {
  auto c = small_config();
  const auto init = c.team().init(c.seed);
  const auto r = marl::train(c);
  EXPECT_NE(r.learner.actor, init);
}

TEST(Train, FeedforwardVariantRuns) {
  auto c = small_config();
  c.recurrent = false;
  const auto r = marl::train(c);
  EXPECT_EQ(r.history.size(), 3u);
}

TEST(Baseline, RandomPolicyRewardsDeterministic) {
  const auto c = small_config();
  const auto a = marl::random_policy_rewards(c, 4);
  EXPECT_EQ(a.size(), 4u);
  EXPECT_EQ(a, marl::random_policy_rewards(c, 4));
}
