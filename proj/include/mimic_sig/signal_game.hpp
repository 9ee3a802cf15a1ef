#ifndef MIMIC_SIG_SIGNAL_GAME_HPP_
#define MIMIC_SIG_SIGNAL_GAME_HPP_

// Exact computations over the two-player speaker/listener game with an
// optional non-communicative action set and an external signal source.
//
// Conventions:
//   * latent z is uniform over {0..n_latent-1}
//   * speaker actions 0..n_signals-1 are signals, the rest are
//     non-communicative
//   * listener input n_signals is the silent symbol
//   * team utility U = u * [a_s not a signal] + [a_l == z]

#include <cmath>
#include <cstdint>
#include <numeric>
#include <random>
#include <string>
#include <vector>

#include "mimic_sig/core.hpp"

namespace mimic_sig::game {

inline constexpr double kRowTolerance = 1e-9;
// Margin for strict comparisons inside the theorem checks, so floating
// rounding on exact ties is never reported as a selection.
inline constexpr double kTieTolerance = 1e-12;

// Dense row-major probability table.
struct Table {
  std::size_t rows = 0;
  std::size_t cols = 0;
  std::vector<double> data;

  Table() = default;
  Table(std::size_t r, std::size_t c, double fill = 0.0)
      : rows(r), cols(c), data(r * c, fill) {}

  double& operator()(std::size_t r, std::size_t c) { return data[r * cols + c]; }
  double operator()(std::size_t r, std::size_t c) const {
    return data[r * cols + c];
  }

  static Table uniform(std::size_t r, std::size_t c) {
    return Table(r, c, c == 0 ? 0.0 : 1.0 / static_cast<double>(c));
  }

  // Row r puts all mass on column picks[r].
  static Table one_hot(const std::vector<int>& picks, std::size_t c) {
    Table t(picks.size(), c);
    for (std::size_t r = 0; r < picks.size(); ++r) {
      t(r, static_cast<std::size_t>(picks[r])) = 1.0;
    }
    return t;
  }

  double row_sum(std::size_t r) const {
    double s = 0.0;
    for (std::size_t c = 0; c < cols; ++c) s += (*this)(r, c);
    return s;
  }

  bool is_row_stochastic(double tol = kRowTolerance) const {
    for (std::size_t r = 0; r < rows; ++r) {
      for (std::size_t c = 0; c < cols; ++c) {
        double v = (*this)(r, c);
        if (!(v >= -tol && v <= 1.0 + tol)) return false;
      }
      if (std::abs(row_sum(r) - 1.0) > tol) return false;
    }
    return true;
  }

  bool is_deterministic() const {
    for (double v : data) {
      if (v != 0.0 && v != 1.0) return false;
    }
    return true;
  }

  bool operator==(const Table&) const = default;
};

struct GameConfig {
  int n_latent = 3;
  int n_speaker_actions = 6;
  int n_signals = 3;
  int n_listener_actions = 3;
  double u = 0.5;
  double p_external = 0.0;
  // P(m | z, S): n_latent x n_signals.
  Table external_code;

  // Deterministic external code z -> z mod n_signals.
  static GameConfig make(int n_latent, int n_speaker_actions, int n_signals,
                         double u, double p_external = 0.0) {
    GameConfig c;
    c.n_latent = n_latent;
    c.n_speaker_actions = n_speaker_actions;
    c.n_signals = n_signals;
    c.n_listener_actions = n_latent;
    c.u = u;
    c.p_external = p_external;
    c.external_code = default_code(n_latent, n_signals);
    return c;
  }

  static Table default_code(int n_latent, int n_signals) {
    Table t(static_cast<std::size_t>(std::max(n_latent, 0)),
            static_cast<std::size_t>(std::max(n_signals, 0)));
    if (n_signals > 0) {
      for (int z = 0; z < n_latent; ++z) t(z, z % n_signals) = 1.0;
    }
    return t;
  }

  bool external_code_stochastic() const { return !external_code.is_deterministic(); }

  void validate() const {
    if (n_latent < 1) throw ConfigError("n_latent must be >= 1", "$.n_latent");
    if (n_signals < 0) throw ConfigError("n_signals must be >= 0", "$.n_signals");
    if (n_signals > n_speaker_actions) {
      throw ConfigError("n_signals must not exceed n_speaker_actions", "$.n_signals");
    }
    if (n_listener_actions != n_latent) {
      throw ConfigError("n_listener_actions must equal n_latent",
                        "$.n_listener_actions");
    }
    if (!(p_external >= 0.0 && p_external <= 1.0)) {
      throw ConfigError("p_external must lie in [0, 1]", "$.p_external");
    }
    if (!(u >= 0.0) || !std::isfinite(u)) throw ConfigError("u must be >= 0", "$.u");
    if (external_code.rows != static_cast<std::size_t>(n_latent) ||
        external_code.cols != static_cast<std::size_t>(n_signals)) {
      throw ConfigError("external_code must be n_latent x n_signals",
                        "$.external_code");
    }
    if (n_signals > 0 && !external_code.is_row_stochastic()) {
      throw ConfigError("external_code rows must be distributions",
                        "$.external_code");
    }
    if (n_signals == 0 && p_external > 0.0) {
      throw ConfigError("an external source needs at least one signal",
                        "$.p_external");
    }
  }

  std::size_t listener_inputs() const { return static_cast<std::size_t>(n_signals) + 1; }
  std::size_t silent() const { return static_cast<std::size_t>(n_signals); }
  bool is_signal(std::size_t speaker_action) const {
    return speaker_action < static_cast<std::size_t>(n_signals);
  }
  // Listener input produced by a speaker action.
  std::size_t listener_input(std::size_t speaker_action) const {
    return is_signal(speaker_action) ? speaker_action : silent();
  }
};

struct SpeakerPolicy {
  Table probs;  // n_latent x n_speaker_actions
};

struct ListenerPolicy {
  Table probs;  // (n_signals + 1) x n_listener_actions
};

struct JointStrategy {
  SpeakerPolicy speaker;
  ListenerPolicy listener;
};

inline void check_speaker(const SpeakerPolicy& s, const GameConfig& c) {
  if (s.probs.rows != static_cast<std::size_t>(c.n_latent) ||
      s.probs.cols != static_cast<std::size_t>(c.n_speaker_actions)) {
    throw ShapeError("speaker policy must be n_latent x n_speaker_actions");
  }
  if (!s.probs.is_row_stochastic()) throw ShapeError("speaker rows must sum to 1");
}

inline void check_listener(const ListenerPolicy& l, const GameConfig& c) {
  if (l.probs.rows != c.listener_inputs() ||
      l.probs.cols != static_cast<std::size_t>(c.n_listener_actions)) {
    throw ShapeError("listener policy must be (n_signals+1) x n_listener_actions");
  }
  if (!l.probs.is_row_stochastic()) throw ShapeError("listener rows must sum to 1");
}

inline void check_joint(const JointStrategy& j, const GameConfig& c) {
  check_speaker(j.speaker, c);
  check_listener(j.listener, c);
}

// ---- Named strategies ------------------------------------------------------

// Every latent value maps to the first non-communicative action.
inline SpeakerPolicy silent_speaker(const GameConfig& c) {
  if (c.n_speaker_actions <= c.n_signals) {
    throw ConfigError("no non-communicative speaker action exists",
                      "$.n_speaker_actions");
  }
  return {Table::one_hot(std::vector<int>(c.n_latent, c.n_signals),
                         c.n_speaker_actions)};
}

// z -> signal (z mod n_signals).
inline SpeakerPolicy perfect_code_speaker(const GameConfig& c) {
  if (c.n_signals == 0) throw ConfigError("no signals to code with", "$.n_signals");
  std::vector<int> picks(c.n_latent);
  for (int z = 0; z < c.n_latent; ++z) picks[z] = z % c.n_signals;
  return {Table::one_hot(picks, c.n_speaker_actions)};
}

inline SpeakerPolicy uniform_speaker(const GameConfig& c) {
  return {Table::uniform(c.n_latent, c.n_speaker_actions)};
}

inline ListenerPolicy uniform_listener(const GameConfig& c) {
  return {Table::uniform(c.listener_inputs(), c.n_listener_actions)};
}

// Signal m -> action (m mod n_listener_actions); silent row uniform.
inline ListenerPolicy decoder_listener(const GameConfig& c) {
  ListenerPolicy l{Table(c.listener_inputs(), c.n_listener_actions)};
  for (int m = 0; m < c.n_signals; ++m) l.probs(m, m % c.n_listener_actions) = 1.0;
  for (int a = 0; a < c.n_listener_actions; ++a) {
    l.probs(c.silent(), a) = 1.0 / c.n_listener_actions;
  }
  return l;
}

// U(a | z) = [a == z], stored as n_listener_actions x n_latent.
inline Table indicator_utility(const GameConfig& c) {
  Table t(c.n_listener_actions, c.n_latent);
  for (int a = 0; a < std::min(c.n_listener_actions, c.n_latent); ++a) t(a, a) = 1.0;
  return t;
}

// ---- Expected utilities of the joint game ----------------------------------

inline double alpha(const GameConfig& c) {
  return c.u + 1.0 / static_cast<double>(c.n_latent);
}

namespace detail {

struct Moments {
  double p_signal = 0.0;          // P(a_s in Sigma)
  double correct_signal = 0.0;    // P(a_l = z, a_s in Sigma)
  double correct_silent = 0.0;    // P(a_l = z, a_s not in Sigma)
};

inline Moments moments(const JointStrategy& j, const GameConfig& c) {
  Moments m;
  const double pz = 1.0 / static_cast<double>(c.n_latent);
  for (int z = 0; z < c.n_latent; ++z) {
    for (int as = 0; as < c.n_speaker_actions; ++as) {
      const double ps = j.speaker.probs(z, as);
      if (ps == 0.0) continue;
      const std::size_t input = c.listener_input(as);
      const double hit = z < c.n_listener_actions ? j.listener.probs(input, z) : 0.0;
      if (c.is_signal(as)) {
        m.p_signal += pz * ps;
        m.correct_signal += pz * ps * hit;
      } else {
        m.correct_silent += pz * ps * hit;
      }
    }
  }
  return m;
}

}  // namespace detail

// E[U | theta] by enumeration over (z, a_s, a_l). The external source plays
// no part here.
inline double expected_utility(const JointStrategy& j, const GameConfig& c) {
  check_joint(j, c);
  const double pz = 1.0 / static_cast<double>(c.n_latent);
  double total = 0.0;
  for (int z = 0; z < c.n_latent; ++z) {
    for (int as = 0; as < c.n_speaker_actions; ++as) {
      const double ps = j.speaker.probs(z, as);
      const std::size_t input = c.listener_input(as);
      const double us = c.is_signal(as) ? 0.0 : c.u;
      for (int al = 0; al < c.n_listener_actions; ++al) {
        const double pl = j.listener.probs(input, al);
        total += pz * ps * pl * (us + (al == z ? 1.0 : 0.0));
      }
    }
  }
  return total;
}

inline double signal_probability(const JointStrategy& j, const GameConfig& c) {
  check_joint(j, c);
  return detail::moments(j, c).p_signal;
}

// P(a_l = z | theta), unconditional.
inline double guess_accuracy(const JointStrategy& j, const GameConfig& c) {
  check_joint(j, c);
  auto m = detail::moments(j, c);
  return m.correct_signal + m.correct_silent;
}

inline double guess_accuracy_given_signal(const JointStrategy& j, const GameConfig& c) {
  check_joint(j, c);
  auto m = detail::moments(j, c);
  if (m.p_signal <= 0.0) {
    throw UndefinedConditional("speaker never signals; accuracy given a signal is undefined");
  }
  return m.correct_signal / m.p_signal;
}

inline double guess_accuracy_given_silence(const JointStrategy& j, const GameConfig& c) {
  check_joint(j, c);
  auto m = detail::moments(j, c);
  const double p_silent = 1.0 - m.p_signal;
  if (p_silent <= 0.0) {
    throw UndefinedConditional("speaker always signals; accuracy given silence is undefined");
  }
  return m.correct_silent / p_silent;
}

// Lowest accuracy-given-signal at which a candidate signalling with
// probability `signal_prob` beats a rival of utility `eu_rival`.
inline double selection_threshold(double eu_rival, double signal_prob, double alpha_value) {
  if (!(signal_prob > 0.0)) {
    throw UndefinedConditional("selection threshold needs signal_prob > 0");
  }
  return alpha_value + (eu_rival - alpha_value) / signal_prob;
}

// Strict improvement; exact ties are not selected.
inline bool is_selected(const JointStrategy& candidate, const JointStrategy& incumbent,
                        const GameConfig& c) {
  return expected_utility(candidate, c) > expected_utility(incumbent, c);
}

// ---- Single-agent views with an external source ----------------------------

// P(z | m) as a P(S)-weighted mix of the external-source and speaker
// posteriors. A branch under which m has zero likelihood drops out and the
// remaining weight is renormalized.
inline std::vector<double> listener_posterior(int message, const SpeakerPolicy& speaker,
                                              const GameConfig& c) {
  c.validate();
  check_speaker(speaker, c);
  if (message < 0 || message >= c.n_signals) {
    throw ShapeError("message must be a signal index");
  }
  const auto nz = static_cast<std::size_t>(c.n_latent);
  const double pz = 1.0 / static_cast<double>(nz);

  auto bayes = [&](auto likelihood, std::vector<double>& out) {
    double evidence = 0.0;
    out.assign(nz, 0.0);
    for (std::size_t z = 0; z < nz; ++z) {
      out[z] = likelihood(z) * pz;
      evidence += out[z];
    }
    if (evidence <= 0.0) return false;
    for (double& v : out) v /= evidence;
    return true;
  };

  std::vector<double> external, internal;
  const bool has_ext = c.p_external > 0.0 &&
                       bayes([&](std::size_t z) { return c.external_code(z, message); },
                             external);
  const bool has_int = c.p_external < 1.0 &&
                       bayes([&](std::size_t z) { return speaker.probs(z, message); },
                             internal);
  if (!has_ext && !has_int) {
    throw UndefinedConditional("message " + std::to_string(message) +
                               " has zero probability under both sources");
  }
  const double w_ext = has_ext ? c.p_external : 0.0;
  const double w_int = has_int ? 1.0 - c.p_external : 0.0;
  const double norm = w_ext + w_int;
  std::vector<double> post(nz, 0.0);
  for (std::size_t z = 0; z < nz; ++z) {
    if (has_ext) post[z] += w_ext / norm * external[z];
    if (has_int) post[z] += w_int / norm * internal[z];
  }
  return post;
}

// utility: n_listener_actions x n_latent, entry (a, z) = U(a | z).
inline double listener_expected_utility(int action, int message, const SpeakerPolicy& speaker,
                                        const GameConfig& c, const Table& utility) {
  if (action < 0 || action >= c.n_listener_actions) throw ShapeError("bad listener action");
  if (utility.rows != static_cast<std::size_t>(c.n_listener_actions) ||
      utility.cols != static_cast<std::size_t>(c.n_latent)) {
    throw ShapeError("utility table must be n_listener_actions x n_latent");
  }
  auto post = listener_posterior(message, speaker, c);
  double eu = 0.0;
  for (int z = 0; z < c.n_latent; ++z) eu += post[z] * utility(action, z);
  return eu;
}

// `message` is a speaker action; non-signal actions reach the listener as
// the silent symbol.
inline double speaker_expected_utility(int message, int z, const ListenerPolicy& listener,
                                       const GameConfig& c, const Table& utility) {
  check_listener(listener, c);
  if (message < 0 || message >= c.n_speaker_actions) throw ShapeError("bad speaker action");
  if (z < 0 || z >= c.n_latent) throw ShapeError("bad latent index");
  const std::size_t input = c.listener_input(static_cast<std::size_t>(message));
  double eu = 0.0;
  for (int a = 0; a < c.n_listener_actions; ++a) {
    eu += listener.probs(input, a) * utility(a, z);
  }
  return eu;
}

// Population variance over speakers of the listener's expected utility
// (its guess accuracy) against a fixed listener.
inline double listener_utility_variance(const std::vector<SpeakerPolicy>& speakers,
                                        const ListenerPolicy& listener, const GameConfig& c) {
  if (speakers.size() < 2) throw ShapeError("variance needs at least two speakers");
  std::vector<double> eu;
  eu.reserve(speakers.size());
  for (const auto& s : speakers) eu.push_back(guess_accuracy({s, listener}, c));
  const double mean = std::accumulate(eu.begin(), eu.end(), 0.0) / eu.size();
  double var = 0.0;
  for (double v : eu) var += (v - mean) * (v - mean);
  return var / eu.size();
}

// ---- Escape from the non-communicative optimum -----------------------------

enum class ListenerKind { kUniform, kCompetent };

// How the mass not moved by a mutation is redistributed.
enum class Redistribution { kProportional, kUniformSpread };

struct EscapeEstimate {
  double estimate = 0.0;
  double std_error = 0.0;
  // p/|A_s| for a competent listener (exact under the mutation model),
  // p^2/(|A_s||A_l|) for a uniform one (upper bound).
  double analytic = 0.0;
  bool analytic_is_bound = false;
  // Same experiment with the remaining mass spread uniformly instead of
  // rescaled proportionally.
  double estimate_uniform_spread = 0.0;
  double std_error_uniform_spread = 0.0;
  std::uint64_t n_samples = 0;
};

namespace detail {

// Moves mass q onto column `target` of row `r`; the other columns share
// 1 - q according to `rule`.
inline void shift_mass(Table& t, std::size_t r, std::size_t target, double q, Redistribution rule) {
  if (t(r, target) >= q) return;  // already carries at least q
  const double rest_before = 1.0 - t(r, target);
  const double rest_after = 1.0 - q;
  const std::size_t others = t.cols - 1;
  for (std::size_t col = 0; col < t.cols; ++col) {
    if (col == target) continue;
    if (rule == Redistribution::kUniformSpread || rest_before <= 0.0) {
      t(r, col) = others > 0 ? rest_after / static_cast<double>(others) : 0.0;
    } else {
      t(r, col) = t(r, col) / rest_before * rest_after;
    }
  }
  t(r, target) = q;
}

inline double run_escape(const GameConfig& c, double p, ListenerKind kind,
                         std::uint64_t n_samples, std::uint64_t seed, Redistribution rule) {
  const JointStrategy incumbent{silent_speaker(c), kind == ListenerKind::kCompetent
                                                       ? decoder_listener(c)
                                                       : uniform_listener(c)};
  const double eu_incumbent = expected_utility(incumbent, c);
  const double a = alpha(c);
  const double q_low = std::min(a, 1.0);

  std::mt19937_64 rng(seed);
  std::uniform_real_distribution<double> unit(0.0, 1.0);
  std::uniform_int_distribution<int> pick_z(0, c.n_latent - 1);
  std::uniform_int_distribution<int> pick_as(0, c.n_speaker_actions - 1);
  std::uniform_int_distribution<int> pick_m(0, c.n_signals - 1);
  std::uniform_int_distribution<int> pick_al(0, c.n_listener_actions - 1);
  // Mass strictly above alpha (capped at 1).
  auto draw_mass = [&] { return q_low + (1.0 - q_low) * (1.0 - unit(rng)); };

  std::uint64_t hits = 0;
  for (std::uint64_t i = 0; i < n_samples; ++i) {
    JointStrategy mutant = incumbent;
    bool changed = false;
    if (unit(rng) < p) {
      detail::shift_mass(mutant.speaker.probs, pick_z(rng), pick_as(rng), draw_mass(), rule);
      changed = true;
    }
    if (kind == ListenerKind::kUniform && unit(rng) < p) {
      const int m = pick_m(rng);
      const int al = pick_al(rng);
      detail::shift_mass(mutant.listener.probs, m, al, draw_mass(), rule);
      changed = true;
    }
    if (!changed) continue;
    const double ps = detail::moments(mutant, c).p_signal;
    if (ps > 0.0 && expected_utility(mutant, c) > eu_incumbent + kTieTolerance) ++hits;
  }
  return static_cast<double>(hits) / static_cast<double>(n_samples);
}

}  // namespace detail

// Monte-Carlo probability that one round of mutation events lifts the
// optimal non-communicative strategy to a selected communicative one.
// Mutation model: with probability p the speaker's row for a uniform z moves
// mass q ~ U(alpha, 1] onto a uniform speaker action; for the uniform
// listener a second independent event does the same to a uniform signal row
// of the listener. The competent listener decodes signal m to action m and
// is not mutated.
inline EscapeEstimate escape_probability_estimate(const GameConfig& c, double p, ListenerKind kind,
                                                  std::uint64_t n_samples, std::uint64_t seed) {
  c.validate();
  if (n_samples == 0) throw ConfigError("n_samples must be > 0", "$.n_samples");
  if (!(p >= 0.0 && p <= 1.0)) throw ConfigError("p must lie in [0, 1]", "$.p");
  if (c.n_signals == 0) throw ConfigError("escape analysis needs signals", "$.n_signals");
  if (kind == ListenerKind::kCompetent && c.n_signals != c.n_listener_actions) {
    throw ConfigError("a competent listener needs a bijective code (n_signals == n_latent)",
                      "$.n_signals");
  }
  EscapeEstimate e;
  e.n_samples = n_samples;
  const double n = static_cast<double>(n_samples);
  e.estimate = detail::run_escape(c, p, kind, n_samples, seed, Redistribution::kProportional);
  e.std_error = std::sqrt(e.estimate * (1.0 - e.estimate) / n);
  e.estimate_uniform_spread =
      detail::run_escape(c, p, kind, n_samples, seed, Redistribution::kUniformSpread);
  e.std_error_uniform_spread =
      std::sqrt(e.estimate_uniform_spread * (1.0 - e.estimate_uniform_spread) / n);
  if (kind == ListenerKind::kCompetent) {
    e.analytic = p / c.n_speaker_actions;
  } else {
    e.analytic = p * p / (static_cast<double>(c.n_speaker_actions) * c.n_listener_actions);
    e.analytic_is_bound = true;
  }
  return e;
}

// ---- Theorem checks ---------------------------------------------------------

inline constexpr double kMaxExhaustive = 1e6;
inline constexpr std::uint64_t kGridSamples = 200000;

struct TheoremReport {
  std::string mode;  // "exhaustive", "grid" or "vacuous"
  std::uint64_t strategies_checked = 0;  // communicative candidates examined
  // Candidates inside the theorem's hypotheses that contradict it.
  std::uint64_t counterexamples = 0;
  // Candidates outside the hypotheses (silence itself carries information
  // about z) that would contradict the conclusion. Reported, not counted.
  std::uint64_t informative_silence_exceptions = 0;
  double rival_utility = 0.0;
  bool stochastic_external_code = false;
  std::string note;
};

namespace detail {

inline double joint_strategy_count(const GameConfig& c) {
  return std::pow(static_cast<double>(c.n_speaker_actions), c.n_latent) *
         std::pow(static_cast<double>(c.n_listener_actions), c.n_signals + 1);
}

// Visits every deterministic joint strategy.
template <class Fn>
void for_each_deterministic(const GameConfig& c, Fn&& fn) {
  std::vector<int> sp(c.n_latent, 0);
  std::vector<int> li(c.listener_inputs(), 0);
  JointStrategy j{{Table(c.n_latent, c.n_speaker_actions)},
                  {Table(c.listener_inputs(), c.n_listener_actions)}};
  auto advance = [](std::vector<int>& digits, int base) {
    for (auto& d : digits) {
      if (++d < base) return true;
      d = 0;
    }
    return false;
  };
  do {
    std::fill(j.speaker.probs.data.begin(), j.speaker.probs.data.end(), 0.0);
    for (int z = 0; z < c.n_latent; ++z) j.speaker.probs(z, sp[z]) = 1.0;
    std::fill(li.begin(), li.end(), 0);
    do {
      std::fill(j.listener.probs.data.begin(), j.listener.probs.data.end(), 0.0);
      for (std::size_t m = 0; m < li.size(); ++m) j.listener.probs(m, li[m]) = 1.0;
      fn(j);
    } while (advance(li, c.n_listener_actions));
  } while (advance(sp, c.n_speaker_actions));
}

// Random point of the simplex grid {k / resolution} over `cols` entries,
// written into row r starting at column `first`, scaled to `mass`.
inline void grid_row(Table& t, std::size_t r, std::size_t first, std::size_t count, double mass,
                     int resolution, std::mt19937_64& rng) {
  if (count == 0) return;
  // Stars and bars: resolution units dropped into `count` bins.
  std::vector<int> units(count, 0);
  std::uniform_int_distribution<std::size_t> bin(0, count - 1);
  for (int k = 0; k < resolution; ++k) ++units[bin(rng)];
  for (std::size_t i = 0; i < count; ++i) {
    t(r, first + i) = mass * units[i] / static_cast<double>(resolution);
  }
}

// Mixed strategy on the grid. With `uninformative_silence` the silent mass is
// the same for every z, which makes silence carry no information about z.
inline JointStrategy grid_strategy(const GameConfig& c, int resolution, bool uninformative_silence,
                                   std::mt19937_64& rng) {
  JointStrategy j{{Table(c.n_latent, c.n_speaker_actions)},
                  {Table(c.listener_inputs(), c.n_listener_actions)}};
  const auto ns = static_cast<std::size_t>(c.n_signals);
  const auto na = static_cast<std::size_t>(c.n_speaker_actions);
  std::uniform_int_distribution<int> level(0, resolution);
  const bool has_silent_actions = na > ns;
  const double shared_silence = has_silent_actions ? level(rng) / static_cast<double>(resolution) : 0.0;
  for (int z = 0; z < c.n_latent; ++z) {
    double silence = uninformative_silence
                         ? shared_silence
                         : (has_silent_actions ? level(rng) / static_cast<double>(resolution) : 0.0);
    grid_row(j.speaker.probs, z, 0, ns, 1.0 - silence, resolution, rng);
    grid_row(j.speaker.probs, z, ns, na - ns, silence, resolution, rng);
  }
  for (std::size_t m = 0; m < c.listener_inputs(); ++m) {
    grid_row(j.listener.probs, m, 0, c.n_listener_actions, 1.0, resolution, rng);
  }
  return j;
}

// Hypothesis shared by both theorems: silence, when it happens, leaves the
// listener at chance.
inline bool silence_uninformative(const Moments& m, const GameConfig& c) {
  const double p_silent = 1.0 - m.p_signal;
  if (p_silent <= kTieTolerance) return true;
  return std::abs(m.correct_silent / p_silent - 1.0 / c.n_latent) <= 1e-9;
}

template <class Visit>
std::string visit_candidates(const GameConfig& c, int resolution, std::uint64_t seed, Visit&& visit) {
  if (joint_strategy_count(c) <= kMaxExhaustive) {
    for_each_deterministic(c, visit);
    return "exhaustive";
  }
  std::mt19937_64 rng(seed);
  for (std::uint64_t i = 0; i < kGridSamples; ++i) {
    visit(grid_strategy(c, resolution, i % 2 == 0, rng));
  }
  return "grid";
}

}  // namespace detail

// Against the optimal non-communicative strategy (utility alpha), every
// selected communicative strategy must have accuracy-given-signal > alpha.
inline TheoremReport verify_theorem_1(const GameConfig& c, int resolution = 10,
                                      std::uint64_t seed = 0) {
  c.validate();
  TheoremReport r;
  r.stochastic_external_code = c.external_code_stochastic();
  r.rival_utility = alpha(c);
  if (c.n_signals == 0) {
    r.mode = "vacuous";
    r.note = "no signals: there are no communicative strategies";
    return r;
  }
  if (c.n_speaker_actions == c.n_signals) {
    r.mode = "vacuous";
    r.note = "no non-communicative action: the optimal non-communicative strategy does not exist";
    return r;
  }
  const JointStrategy incumbent{silent_speaker(c), uniform_listener(c)};
  const double eu1 = expected_utility(incumbent, c);
  const double a = alpha(c);
  r.rival_utility = eu1;
  r.mode = detail::visit_candidates(c, resolution, seed, [&](const JointStrategy& j) {
    const auto m = detail::moments(j, c);
    if (m.p_signal <= 0.0) return;
    ++r.strategies_checked;
    const double eu2 = expected_utility(j, c);
    const double acc = m.correct_signal / m.p_signal;
    if (eu2 > eu1 + kTieTolerance && acc <= a) {
      if (detail::silence_uninformative(m, c)) {
        ++r.counterexamples;
      } else {
        ++r.informative_silence_exceptions;
      }
    }
  });
  return r;
}

// Against the poorest non-communicative strategy (always signals, uniform
// listener, utility 1/|Z|), every communicative strategy with improved
// accuracy-given-signal is selected.
inline TheoremReport verify_theorem_2(const GameConfig& c, int resolution = 10,
                                      std::uint64_t seed = 0) {
  c.validate();
  TheoremReport r;
  r.stochastic_external_code = c.external_code_stochastic();
  r.rival_utility = 1.0 / c.n_latent;
  if (c.n_signals == 0) {
    r.mode = "vacuous";
    r.note = "no signals: there are no communicative strategies";
    return r;
  }
  const JointStrategy incumbent{
      {Table::one_hot(std::vector<int>(c.n_latent, 0), c.n_speaker_actions)},
      uniform_listener(c)};
  const double eu1 = expected_utility(incumbent, c);
  const double chance = 1.0 / c.n_latent;
  r.rival_utility = eu1;
  r.mode = detail::visit_candidates(c, resolution, seed, [&](const JointStrategy& j) {
    const auto m = detail::moments(j, c);
    if (m.p_signal <= 0.0) return;
    const double acc = m.correct_signal / m.p_signal;
    if (acc <= chance + kTieTolerance) return;
    ++r.strategies_checked;
    if (expected_utility(j, c) > eu1) return;
    if (detail::silence_uninformative(m, c)) {
      ++r.counterexamples;
    } else {
      ++r.informative_silence_exceptions;
    }
  });
  return r;
}

}  // namespace mimic_sig::game

#endif  // MIMIC_SIG_SIGNAL_GAME_HPP_
