#ifndef MIMIC_SIG_EVOLUTION_HPP_
#define MIMIC_SIG_EVOLUTION_HPP_

// Mutation-only truncation-selection GA over flat genomes.

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <functional>
#include <numeric>
#include <random>
#include <span>
#include <vector>

#include "mimic_sig/core.hpp"
#include "mimic_sig/gridworld.hpp"
#include "mimic_sig/metrics.hpp"
#include "mimic_sig/team.hpp"

namespace mimic_sig::evo {

struct EvoConfig {
  int population_size = 256;
  int elite_count = 1;
  int truncation_k = 0;  // 0 -> population_size / 8
  double mutation_sigma = 0.03;
  int generations = 100;
  int episodes_per_eval = 4;
  grid::GridConfig env;
  int hidden_dim = 128;
  int n_feedforward = 3;
  bool recurrent = true;
  bool separate_networks = false;
  bool fixed_eval_seeds = false;
  bool greedy_eval = true;
  int checkpoint_every = 0;  // generations; 0 -> final only
  std::uint64_t seed = 0;

  int resolved_truncation_k() const {
    return truncation_k > 0 ? truncation_k : std::max(1, population_size / 8);
  }

  TeamPolicy team() const {
    return TeamPolicy{actor_arch(env, hidden_dim, n_feedforward, recurrent), separate_networks ? 2 : 1};
  }

  void validate() const {
    env.validate();
    if (population_size < 1) throw ConfigError("population_size must be >= 1", "$.evo.population_size");
    if (elite_count < 0) throw ConfigError("elite_count must be >= 0", "$.evo.elite_count");
    const int k = resolved_truncation_k();
    if (k > population_size) throw ConfigError("truncation_k exceeds population_size", "$.evo.truncation_k");
    if (elite_count > k) throw ConfigError("elite_count exceeds truncation_k", "$.evo.elite_count");
    if (!(mutation_sigma > 0.0)) throw ConfigError("mutation_sigma must be > 0", "$.evo.mutation_sigma");
    if (generations < 1) throw ConfigError("generations must be >= 1", "$.evo.generations");
    if (episodes_per_eval < 1) throw ConfigError("episodes_per_eval must be >= 1", "$.evo.episodes_per_eval");
    if (checkpoint_every < 0) throw ConfigError("checkpoint_every must be >= 0", "$.evo.checkpoint_every");
    team().arch.validate();
  }
};

struct Fitness {
  double value = 0.0;
  metrics::EmitTally tally;
};

inline Fitness evaluate_fitness(std::span<const float> genome, const EvoConfig& c, std::uint64_t eval_seed) {
  auto st = run_policy_episodes(c.team(), genome, c.env, c.episodes_per_eval, eval_seed, c.greedy_eval);
  return {st.mean_return, st.tally};
}

// Top-k by fitness, ties to the lower index; returned best first.
inline std::vector<int> truncation_select(const std::vector<double>& fitness, int k) {
  if (k < 0 || static_cast<std::size_t>(k) > fitness.size()) throw ConfigError("truncation_k out of range", "$.evo.truncation_k");
  std::vector<int> idx(fitness.size());
  std::iota(idx.begin(), idx.end(), 0);
  std::stable_sort(idx.begin(), idx.end(), [&](int a, int b) { return fitness[a] > fitness[b]; });
  idx.resize(static_cast<std::size_t>(k));
  return idx;
}

inline std::vector<float> mutate(std::span<const float> genome, double sigma, std::mt19937_64& rng) {
  if (!(sigma > 0.0)) throw ConfigError("mutation_sigma must be > 0", "$.evo.mutation_sigma");
  std::normal_distribution<double> g(0.0, sigma);
  std::vector<float> out(genome.begin(), genome.end());
  for (auto& v : out) v = static_cast<float>(static_cast<double>(v) + g(rng));
  return out;
}

inline std::uint64_t eval_seed_for(const EvoConfig& c, int generation) {
  return stream_seed(c.seed, Stream::kEval, c.fixed_eval_seeds ? 0u : static_cast<std::uint64_t>(generation));
}

struct GenerationInfo {
  int generation = 0;
  const std::vector<float>* best = nullptr;
  double best_fitness = 0.0;
  bool last = false;
};

struct GaResult {
  metrics::RunHistory history;
  std::vector<float> best_genome;
  double best_fitness = 0.0;
};

// One history row per generation. mean_reward is the generation's best
// fitness, std_reward the population std; aux columns carry the population
// and parent means.
inline GaResult run_ga(const EvoConfig& c, const std::function<void(const GenerationInfo&)>& on_generation = {},
                       int threads = worker_threads()) {
  c.validate();
  const TeamPolicy team = c.team();
  const int n = c.population_size;
  const int k = c.resolved_truncation_k();
  std::vector<std::vector<float>> pop(static_cast<std::size_t>(n));
  for (int i = 0; i < n; ++i) pop[static_cast<std::size_t>(i)] = team.init(stream_seed(c.seed, Stream::kInit, static_cast<std::uint64_t>(i)));

  GaResult out;
  out.history.aux_columns = {"population_mean", "parent_mean"};
  out.history.metadata = {{"algorithm", "truncation_ga"}, {"population_size", n}, {"truncation_k", k},
                          {"elite_count", c.elite_count}, {"mutation_sigma", c.mutation_sigma},
                          {"genome_size", team.genome_size()}};
  const std::int64_t steps_per_gen =
      static_cast<std::int64_t>(n) * c.episodes_per_eval * c.env.episode_len;

  for (int g = 0; g < c.generations; ++g) {
    const std::uint64_t es = eval_seed_for(c, g);
    std::vector<Fitness> fit(static_cast<std::size_t>(n));
    parallel_for(static_cast<std::size_t>(n), threads,
                 [&](std::size_t i) { fit[i] = evaluate_fitness(pop[i], c, es); });
    std::vector<double> f(static_cast<std::size_t>(n));
    for (std::size_t i = 0; i < f.size(); ++i) f[i] = fit[i].value;
    const auto parents = truncation_select(f, k);
    const std::size_t best = static_cast<std::size_t>(parents.front());

    const auto pm = metrics::moments(f);
    double parent_mean = 0.0;
    for (int p : parents) parent_mean += f[static_cast<std::size_t>(p)];
    parent_mean /= static_cast<double>(parents.size());
    out.history.append({g, (g + 1) * steps_per_gen, f[best], pm.std, fit[best].tally.frequency(), {pm.mean, parent_mean}});
    out.best_genome = pop[best];
    out.best_fitness = f[best];
    if (on_generation) on_generation({g, &out.best_genome, f[best], g + 1 == c.generations});
    if (g + 1 == c.generations) break;

    std::mt19937_64 rng(stream_seed(c.seed, Stream::kMutation, static_cast<std::uint64_t>(g)));
    std::uniform_int_distribution<int> pick(0, k - 1);
    std::vector<std::vector<float>> next;
    next.reserve(static_cast<std::size_t>(n));
    for (int e = 0; e < c.elite_count; ++e) next.push_back(pop[static_cast<std::size_t>(parents[static_cast<std::size_t>(e)])]);
    while (static_cast<int>(next.size()) < n) {
      const int p = parents[static_cast<std::size_t>(pick(rng))];
      next.push_back(mutate(pop[static_cast<std::size_t>(p)], c.mutation_sigma, rng));
    }
    pop = std::move(next);
  }
  return out;
}

// Fitness of n freshly initialized genomes on one evaluation seed.
inline metrics::Moments random_genome_baseline(const EvoConfig& c, int n = 64, int threads = worker_threads()) {
  const TeamPolicy team = c.team();
  const std::uint64_t es = stream_seed(c.seed, Stream::kBaseline, 0);
  std::vector<double> f(static_cast<std::size_t>(n));
  parallel_for(static_cast<std::size_t>(n), threads, [&](std::size_t i) {
    const auto genome = team.init(stream_seed(c.seed, Stream::kBaseline, 1000 + i));
    f[i] = evaluate_fitness(genome, c, es).value;
  });
  return metrics::moments(f);
}

}  // namespace mimic_sig::evo

#endif  // MIMIC_SIG_EVOLUTION_HPP_
