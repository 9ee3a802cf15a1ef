#include <gtest/gtest.h>

#include <algorithm>
#include <cmath>
#include <random>

#include "mimic_sig/metrics.hpp"

namespace m = mimic_sig::metrics;
namespace gw = mimic_sig::grid;

namespace {

gw::GridConfig partial_config() {
  gw::GridConfig c;
  c.alphabet_size = 9;
  c.agent_signals = {4, 5, 6, 7, 8};
  c.resource_signals = {0, 1, 2, 3, 4};
  return c;
}

m::RunHistory constant_run(double value, int n, std::int64_t step = 100) {
  m::RunHistory h;
  for (int i = 0; i < n; ++i) h.append({i, (i + 1) * step, value, 0.0, 0.0, {}});
  return h;
}

m::RunHistory ramp_run(const std::vector<double>& rewards) {
  m::RunHistory h;
  for (std::size_t i = 0; i < rewards.size(); ++i) {
    h.append({static_cast<std::int64_t>(i), static_cast<std::int64_t>(i + 1) * 10, rewards[i], 0.0, 0.0, {}});
  }
  return h;
}

}  // namespace

TEST(Mimicry, AllOverlapEmitsGiveOne) {
  const auto c = partial_config();
  // Action 5 emits agent_signals[0] = 4, the only shared symbol.
  EXPECT_DOUBLE_EQ(m::mimicry_frequency({5, 5, 5}, c), 1.0);
}

TEST(Mimicry, NoEmitsGiveZero) {
  EXPECT_DOUBLE_EQ(m::mimicry_frequency({0, 1, 2, 3, 4}, partial_config()), 0.0);
}

TEST(Mimicry, TwoOfFiveIsPointFour) {
  gw::GridConfig c;
  c.alphabet_size = 5;
  c.agent_signals = {0, 1, 2, 3, 4};
  c.resource_signals = {0, 1};
  // emits of symbols 0, 3, 1, 4, 2; two of them (0 and 1) are shared
  const std::vector<int> actions = {5, 8, 6, 9, 7};
  EXPECT_EQ(m::mimicry_frequency(actions, c), 0.4);
}

TEST(Mimicry, SpatialActionsDoNotChangeFrequency) {
  gw::GridConfig c;
  c.alphabet_size = 5;
  c.agent_signals = {0, 1, 2, 3, 4};
  c.resource_signals = {0, 1};
  std::vector<int> actions = {5, 8, 6, 9, 7};
  const double base = m::mimicry_frequency(actions, c);
  std::mt19937_64 rng(1);
  for (int i = 0; i < 50; ++i) {
    actions.insert(actions.begin() + static_cast<long>(rng() % (actions.size() + 1)), static_cast<int>(rng() % 5));
    EXPECT_EQ(m::mimicry_frequency(actions, c), base);
  }
}

TEST(Mimicry, EmptyTrajectoryThrows) {
  EXPECT_THROW(m::mimicry_frequency({}, partial_config()), mimic_sig::Error);
}

TEST(History, RejectsNonIncreasingIterations) {
  m::RunHistory h;
  h.append({0, 10, 1.0, 0.0, 0.0, {}});
  EXPECT_THROW(h.append({0, 20, 1.0, 0.0, 0.0, {}}), mimic_sig::Error);
}

TEST(History, RejectsFrequencyOutsideUnitInterval) {
  m::RunHistory h;
  EXPECT_THROW(h.append({0, 10, 1.0, 0.0, 1.5, {}}), mimic_sig::Error);
}

TEST(History, CsvRoundTripExact) {
  m::RunHistory h;
  h.aux_columns = {"entropy", "clip_fraction", "lr"};
  std::mt19937_64 rng(4);
  std::normal_distribution<double> g(0.0, 3.0);
  for (int i = 0; i < 20; ++i) h.append({i, i * 8192, g(rng), std::abs(g(rng)), 0.125 * (i % 8), {g(rng), 0.1, 2e-3 / (i + 1)}});
  const auto text = m::history_to_csv(h);
  EXPECT_EQ(text.substr(0, text.find('\n')),
            "iteration,env_steps,mean_reward,std_reward,mimicry_frequency,entropy,clip_fraction,lr");
  const auto back = m::history_from_csv(text);
  ASSERT_EQ(back.size(), h.size());
  EXPECT_EQ(back.aux_columns, h.aux_columns);
  for (std::size_t i = 0; i < h.size(); ++i) {
    EXPECT_EQ(back.records[i].mean_reward, h.records[i].mean_reward);
    EXPECT_EQ(back.records[i].aux, h.records[i].aux);
  }
  EXPECT_EQ(m::history_to_csv(back), text);
}

TEST(History, BadHeaderRejected) {
  EXPECT_THROW(m::history_from_csv("step,reward\n1,2\n"), mimic_sig::Error);
}

TEST(Aggregate, SingleRunHasZeroStd) {
  std::vector<m::RunHistory> runs = {ramp_run({-5, -2, 0, 3, 6})};
  const auto a = m::aggregate_runs(runs, 2);
  for (double s : a.reward_std) EXPECT_EQ(s, 0.0);
  EXPECT_EQ(a.final.std, 0.0);
  EXPECT_DOUBLE_EQ(a.final.mean, 4.5);
}

TEST(Aggregate, TwoConstantRunsMeanTenStdTwo) {
  const auto a = m::aggregate_runs({constant_run(8.0, 30), constant_run(12.0, 30)});
  for (std::size_t i = 0; i < a.env_steps.size(); ++i) {
    EXPECT_DOUBLE_EQ(a.reward_mean[i], 10.0);
    EXPECT_DOUBLE_EQ(a.reward_std[i], 2.0);
  }
  EXPECT_DOUBLE_EQ(a.final.mean, 10.0);
  EXPECT_DOUBLE_EQ(a.final.std, 2.0);
  EXPECT_FALSE(a.interpolated);
}

TEST(Aggregate, SyntheticRunsRecoverGeneratorParameters) {
  // Each run settles at mu + sigma * N(0,1) with per-iteration noise that
  // averages out over the final window.
  const double mu = 9.0, sigma = 1.5;
  std::mt19937_64 rng(2024);
  std::normal_distribution<double> level(mu, sigma), noise(0.0, 0.3);
  std::vector<m::RunHistory> runs;
  std::vector<double> levels;
  for (int k = 0; k < 10; ++k) {
    const double l = level(rng);
    levels.push_back(l);
    m::RunHistory h;
    for (int i = 0; i < 100; ++i) h.append({i, (i + 1) * 50, l + noise(rng), 0.0, 0.0, {}});
    runs.push_back(h);
  }
  const auto a = m::aggregate_runs(runs, 50);
  EXPECT_NEAR(a.final.mean, mu, 3.0 * sigma / std::sqrt(10.0));
  // Population std of 10 normal draws: chi distribution, generous band.
  EXPECT_GT(a.final.std, 0.4 * sigma);
  EXPECT_LT(a.final.std, 1.6 * sigma);
  // And the window means track the generator levels closely.
  for (std::size_t k = 0; k < 10; ++k) EXPECT_NEAR(a.final_per_run[k], levels[k], 4 * 0.3 / std::sqrt(50.0));
}

TEST(Aggregate, PermutationInvariantMean) {
  std::vector<m::RunHistory> runs = {ramp_run({1, 2, 3}), ramp_run({-1, 5, 0}), ramp_run({4, 4, 4})};
  const auto a = m::aggregate_runs(runs);
  std::reverse(runs.begin(), runs.end());
  const auto b = m::aggregate_runs(runs);
  for (std::size_t i = 0; i < a.reward_mean.size(); ++i) EXPECT_NEAR(a.reward_mean[i], b.reward_mean[i], 1e-12);
}

TEST(Aggregate, InterpolatesToCoarsestGrid) {
  m::RunHistory fine, coarse;
  for (int i = 0; i < 10; ++i) fine.append({i, (i + 1) * 10, static_cast<double>((i + 1) * 10), 0, 0, {}});
  for (int i = 0; i < 5; ++i) coarse.append({i, (i + 1) * 20, static_cast<double>((i + 1) * 20), 0, 0, {}});
  const auto a = m::aggregate_runs({fine, coarse}, 1);
  EXPECT_TRUE(a.interpolated);
  ASSERT_EQ(a.env_steps.size(), 5u);
  for (std::size_t i = 0; i < 5; ++i) {
    EXPECT_DOUBLE_EQ(a.reward_mean[i], a.env_steps[i]);  // y = x in both runs
    EXPECT_NEAR(a.reward_std[i], 0.0, 1e-12);
  }
}

TEST(Aggregate, EmptyInputThrows) {
  EXPECT_THROW(m::aggregate_runs({}), mimic_sig::Error);
}

TEST(Align, CrossingAt37MapsToZero) {
  std::vector<double> r(60, -3.0);
  for (std::size_t i = 37; i < r.size(); ++i) r[i] = 2.0;
  const auto out = m::align_curves({ramp_run(r)});
  ASSERT_EQ(out.aligned.size(), 1u);
  EXPECT_EQ(out.shift[0], 37);
  EXPECT_EQ(out.aligned[0].records[37].iteration, 0);
  EXPECT_EQ(out.aligned[0].records[0].iteration, -37);
}

TEST(Align, NeverCrossingExcludedAndReported) {
  const auto out = m::align_curves({ramp_run({-1, -2, -3}), ramp_run({-1, 1, 2})});
  ASSERT_EQ(out.excluded.size(), 1u);
  EXPECT_EQ(out.excluded[0], 0u);
  EXPECT_EQ(out.kept, std::vector<std::size_t>{1});
}

TEST(Align, RunsCoincideAtZeroAndKeepInternalDeltas) {
  std::vector<double> a(30, -1.0), b(30, -1.0);
  for (std::size_t i = 10; i < 30; ++i) a[i] = 1.0;
  for (std::size_t i = 20; i < 30; ++i) b[i] = 1.0;
  const auto ra = ramp_run(a), rb = ramp_run(b);
  const auto out = m::align_curves({ra, rb});
  ASSERT_EQ(out.aligned.size(), 2u);
  for (const auto& h : out.aligned) {
    auto it = std::find_if(h.records.begin(), h.records.end(), [](const m::Record& r) { return r.iteration == 0; });
    ASSERT_NE(it, h.records.end());
    EXPECT_GT(it->mean_reward, 0.0);
    if (it != h.records.begin()) {
      EXPECT_LE(std::prev(it)->mean_reward, 0.0);
    }
  }
  const auto orig = std::vector<m::RunHistory>{ra, rb};
  for (std::size_t k = 0; k < 2; ++k) {
    for (std::size_t i = 1; i < orig[k].size(); ++i) {
      EXPECT_EQ(out.aligned[k].records[i].iteration - out.aligned[k].records[i - 1].iteration,
                orig[k].records[i].iteration - orig[k].records[i - 1].iteration);
      EXPECT_EQ(out.aligned[k].records[i].mean_reward, orig[k].records[i].mean_reward);
    }
  }
}

TEST(Align, SustainWindowSkipsBlips) {
  const auto h = ramp_run({-1, 1, -1, 1, 1, 1});
  EXPECT_EQ(m::first_crossing(h, 0.0, 1), 1);
  EXPECT_EQ(m::first_crossing(h, 0.0, 3), 3);
}

TEST(Plot, SvgContainsSeries) {
  m::Series s{"reward", {0, 1, 2}, {-1, 0, 1}, false};
  m::Series f{"mimicry", {0, 1, 2}, {0.1, 0.5, 0.9}, true};
  const auto svg = m::line_plot_svg({s, f}, "run", "iteration", "reward", "frequency");
  EXPECT_NE(svg.find("<svg"), std::string::npos);
  EXPECT_EQ(std::count(svg.begin(), svg.end(), '\n') > 5, true);
  EXPECT_NE(svg.find("stroke-dasharray=\"5,3\""), std::string::npos);
  EXPECT_NE(svg.find("</svg>"), std::string::npos);
}
