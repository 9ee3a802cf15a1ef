// End-to-end acceptance checks. Prints one PASS/FAIL line per criterion and
// exits non-zero if any fails.

#include <algorithm>
#include <chrono>
#include <cmath>
#include <cstdio>
#include <filesystem>
#include <functional>
#include <iostream>
#include <random>
#include <sstream>
#include <string>
#include <vector>

#include "mimic_sig/experiment.hpp"
#include "mimic_sig/gridworld.hpp"
#include "mimic_sig/marl.hpp"
#include "mimic_sig/metrics.hpp"
#include "mimic_sig/nnet.hpp"
#include "mimic_sig/signal_game.hpp"

namespace g = mimic_sig::game;
namespace gw = mimic_sig::grid;
namespace nn = mimic_sig::nnet;
namespace marl = mimic_sig::marl;
namespace m = mimic_sig::metrics;
namespace ex = mimic_sig::experiment;
namespace fs = std::filesystem;

namespace {

struct Outcome {
  bool pass = false;
  std::string detail;
};

double seconds_since(std::chrono::steady_clock::time_point t0) {
  return std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
}

std::string fmt(double v) {
  std::ostringstream os;
  os.precision(6);
  os << v;
  return os.str();
}

g::Table random_rows(std::size_t rows, std::size_t cols, std::mt19937_64& rng) {
  std::gamma_distribution<double> gamma(0.7, 1.0);
  g::Table t(rows, cols);
  for (std::size_t r = 0; r < rows; ++r) {
    double s = 0.0;
    for (std::size_t c = 0; c < cols; ++c) s += (t(r, c) = gamma(rng) + 1e-9);
    for (std::size_t c = 0; c < cols; ++c) t(r, c) /= s;
  }
  return t;
}

fs::path scratch_root() {
  const auto p = fs::temp_directory_path() / "mimic_sig_acceptance";
  fs::remove_all(p);
  fs::create_directories(p);
  return p;
}

// ---- 1-7, 12: exact checks ----

Outcome theory_oracle() {
  const auto t0 = std::chrono::steady_clock::now();
  const auto c = g::GameConfig::make(3, 6, 3, 0.5);
  const double a = g::alpha(c);
  const auto t1 = g::verify_theorem_1(c);
  const auto t2 = g::verify_theorem_2(c);
  const double secs = seconds_since(t0);
  const bool ok = std::abs(a - 5.0 / 6.0) < 1e-12 && t1.mode == "exhaustive" && t2.mode == "exhaustive" &&
                  t1.counterexamples == 0 && t2.counterexamples == 0 && secs < 10.0;
  return {ok, "alpha=" + fmt(a) + " t1=" + t1.mode + "/" + std::to_string(t1.counterexamples) + " t2=" + t2.mode + "/" +
                  std::to_string(t2.counterexamples) + " checked=" + std::to_string(t1.strategies_checked) + "+" +
                  std::to_string(t2.strategies_checked) + " time=" + fmt(secs) + "s"};
}

Outcome lemma_1() {
  const auto c = g::GameConfig::make(3, 6, 3, 0.5);
  std::mt19937_64 rng(11);
  std::vector<g::SpeakerPolicy> speakers;
  for (int i = 0; i < 100; ++i) speakers.push_back({random_rows(3, 6, rng)});
  const double v = g::listener_utility_variance(speakers, g::uniform_listener(c), c);
  return {v < 1e-12, "variance=" + fmt(v)};
}

Outcome degeneracy() {
  std::mt19937_64 rng(12);
  std::uniform_int_distribution<int> nz(2, 5), ns(1, 4), extra(0, 3);
  std::uniform_real_distribution<double> unit(0.0, 1.0);
  double worst_listener = 0.0, worst_speaker = 0.0;
  for (int k = 0; k < 100; ++k) {
    const int n_sig = ns(rng);
    auto c = g::GameConfig::make(nz(rng), n_sig + extra(rng), n_sig, 2.0 * unit(rng));
    g::Table utility(static_cast<std::size_t>(c.n_listener_actions), static_cast<std::size_t>(c.n_latent));
    for (auto& v : utility.data) v = unit(rng);

    // Speaker whose action distribution ignores z: every message leaves the
    // listener at the prior.
    const auto row = random_rows(1, static_cast<std::size_t>(c.n_speaker_actions), rng);
    g::SpeakerPolicy flat{g::Table(static_cast<std::size_t>(c.n_latent), static_cast<std::size_t>(c.n_speaker_actions))};
    for (int z = 0; z < c.n_latent; ++z) {
      for (int a = 0; a < c.n_speaker_actions; ++a) flat.probs(z, a) = row(0, a);
    }
    for (int a = 0; a < c.n_listener_actions; ++a) {
      double prior = 0.0;
      for (int z = 0; z < c.n_latent; ++z) prior += utility(a, z) / c.n_latent;
      for (int msg = 0; msg < c.n_signals; ++msg) {
        worst_listener = std::max(worst_listener, std::abs(g::listener_expected_utility(a, msg, flat, c, utility) - prior));
      }
    }

    // Uniform listener: every speaker action earns the same.
    const auto lis = g::uniform_listener(c);
    for (int z = 0; z < c.n_latent; ++z) {
      const double ref = g::speaker_expected_utility(0, z, lis, c, utility);
      for (int msg = 1; msg < c.n_speaker_actions; ++msg) {
        worst_speaker = std::max(worst_speaker, std::abs(g::speaker_expected_utility(msg, z, lis, c, utility) - ref));
      }
    }
  }
  return {worst_listener < 1e-12 && worst_speaker < 1e-12,
          "listener_dev=" + fmt(worst_listener) + " speaker_dev=" + fmt(worst_speaker)};
}

Outcome posterior_mixing() {
  const auto c = g::GameConfig::make(2, 3, 2, 0.5, 0.5);
  const auto post = g::listener_posterior(0, g::uniform_speaker(c), c);
  return {post.size() == 2 && post[0] == 0.75 && post[1] == 0.25, "posterior=(" + fmt(post[0]) + ", " + fmt(post[1]) + ")"};
}

Outcome sensor_semantics() {
  std::vector<gw::Signal> sigs{{{1, 1}, 0, 3}, {{3, 2}, 1, 3}};
  const auto bits = gw::sensor_read({2, 2}, sigs, 5);
  int wrong = 0;
  for (int s = 0; s < 4; ++s) {
    for (int k = 0; k < 5; ++k) {
      const bool expected = (s == gw::kBelow && k == 0) || (s == gw::kLeftOf && k == 0) || (s == gw::kRightOf && k == 1);
      if (bits[s][k] != (expected ? 1 : 0)) ++wrong;
    }
  }
  int boundary = 0;
  for (const auto& v : gw::sensor_read({0, 0}, {{{2, 1}, 0, 3}}, 1)) boundary += v[0];
  for (const auto& v : gw::sensor_read({2, 2}, {{{2, 2}, 0, 5}}, 1)) boundary += v[0];
  return {wrong == 0 && boundary == 0, "example_mismatches=" + std::to_string(wrong) + " boundary_bits=" + std::to_string(boundary)};
}

double rnn_loss(const nn::NetArch& arch, const std::vector<double>& params, const std::vector<nn::Matrix<double>>& obs,
                std::vector<double>* grad) {
  nn::Tape<double> tape;
  nn::TapedNet<double> net(tape, arch, params);
  nn::Var h = tape.leaf(nn::Matrix<double>(2, static_cast<std::size_t>(arch.hidden_dim)));
  std::vector<nn::Var> terms;
  const std::vector<int> actions = {0, 2};
  for (const auto& o : obs) {
    auto out = net.step(tape.leaf(o), h);
    h = out.hidden;
    nn::Var lp = tape.pick(tape.log_softmax(out.logits), actions);
    terms.push_back(tape.add(lp, tape.scale(tape.square(out.value), 0.5)));
  }
  nn::Var loss = tape.mean(tape.concat_rows(terms));
  if (grad) {
    tape.backward(loss);
    *grad = net.gradient();
  }
  return tape.value(loss).data[0];
}

Outcome gradient_check() {
  nn::NetArch a;
  a.input_dim = 3;
  a.hidden_dim = 4;
  a.n_feedforward = 1;
  a.recurrent = true;
  a.n_actions = 3;
  a.with_value_head = true;
  const auto n_params = nn::param_count(a);
  const auto lay = nn::layout(a);
  const auto& pi = nn::find_slice(lay, "pi.w");
  const auto& w0 = nn::find_slice(lay, "ff0.w");
  double worst = 0.0;
  for (std::uint64_t seed = 0; seed < 20; ++seed) {
    auto pf = nn::init_params(a, seed);
    std::vector<double> p(pf.begin(), pf.end());
    for (std::size_t i = pi.offset; i < pi.end(); ++i) p[i] *= 50.0;
    std::mt19937_64 rng(seed + 100);
    std::uniform_real_distribution<double> u(-1.0, 1.0);
    // Observations whose first-layer pre-activations sit within a step of a
    // ReLU kink are redrawn.
    auto near_kink = [&](const nn::Matrix<double>& o) {
      for (std::size_t r = 0; r < o.rows; ++r) {
        for (std::size_t j = 0; j < w0.cols; ++j) {
          double s = 0.0;
          for (std::size_t k = 0; k < w0.rows; ++k) s += o(r, k) * p[w0.offset + k * w0.cols + j];
          if (std::abs(s) < 0.02) return true;
        }
      }
      return false;
    };
    std::vector<nn::Matrix<double>> obs;
    while (obs.size() < 3) {
      nn::Matrix<double> o(2, 3);
      for (auto& v : o.data) v = u(rng);
      if (!near_kink(o)) obs.push_back(o);
    }
    std::vector<double> grad;
    rnn_loss(a, p, obs, &grad);
    const double h = 1e-3;
    for (std::size_t i = 0; i < p.size(); ++i) {
      auto plus = p, minus = p;
      plus[i] += h;
      minus[i] -= h;
      const double numeric = (rnn_loss(a, plus, obs, nullptr) - rnn_loss(a, minus, obs, nullptr)) / (2 * h);
      worst = std::max(worst, std::abs(grad[i] - numeric) / std::max({std::abs(grad[i]), std::abs(numeric), 1e-3}));
    }
  }
  return {n_params <= 200 && worst < 1e-4, "params=" + std::to_string(n_params) + " max_rel_err=" + fmt(worst)};
}

Outcome gae_oracle() {
  std::mt19937_64 rng(7);
  std::uniform_real_distribution<double> u(-2.0, 2.0);
  const double gamma = 0.99, lambda = 0.95;
  double worst = 0.0;
  int cases = 0;
  for (std::size_t n = 1; n <= 6; ++n) {
    for (unsigned mask = 0; mask < (1u << n); ++mask) {
      std::vector<double> r(n), v(n + 1);
      std::vector<bool> d(n);
      for (auto& x : r) x = u(rng);
      for (auto& x : v) x = u(rng);
      for (std::size_t t = 0; t < n; ++t) d[t] = (mask >> t) & 1u;
      const auto got = marl::compute_gae(r, v, d, gamma, lambda);
      for (std::size_t t = 0; t < n; ++t) {
        double want = 0.0, w = 1.0;
        for (std::size_t k = t; k < n; ++k) {
          want += w * (r[k] + (d[k] ? 0.0 : gamma * v[k + 1]) - v[k]);
          if (d[k]) break;
          w *= gamma * lambda;
        }
        worst = std::max(worst, std::abs(got.advantages[t] - want));
      }
      ++cases;
    }
  }
  return {worst < 1e-6, "trajectories=" + std::to_string(cases) + " max_err=" + fmt(worst)};
}

Outcome mimicry_pipeline() {
  gw::GridConfig c;
  c.alphabet_size = 5;
  c.agent_signals = {0, 1, 2, 3, 4};
  c.resource_signals = {0, 1};
  // Moves interleaved with five emits of symbols 0, 3, 1, 4, 2.
  const std::vector<int> actions = {0, 5, 2, 8, 6, 1, 9, 4, 7};
  const double freq = m::mimicry_frequency(actions, c);

  std::vector<m::RunHistory> runs;
  const std::vector<int> crossings = {0, 7, 23, 41};
  for (int at : crossings) {
    m::RunHistory h;
    for (int i = 0; i < 60; ++i) h.append({i, (i + 1) * 100, i < at ? -2.0 - 0.01 * i : 1.0 + 0.01 * i, 0.0, 0.0, {}});
    runs.push_back(h);
  }
  const auto al = m::align_curves(runs, 0.0);
  bool aligned = al.aligned.size() == crossings.size() && al.excluded.empty();
  for (std::size_t k = 0; aligned && k < crossings.size(); ++k) {
    const auto& rec = al.aligned[k].records[static_cast<std::size_t>(crossings[k])];
    aligned = rec.iteration == 0 && al.shift[k] == crossings[k];
  }
  return {freq == 0.4 && aligned, "frequency=" + fmt(freq) + " aligned=" + (aligned ? "yes" : "no")};
}

// ---- 8-11: training runs ----

ex::RunOutcome run_preset(const std::string& preset, const fs::path& out, std::vector<std::uint64_t> seeds) {
  auto s = ex::preset(preset);
  s.output_dir = out.string();
  s.seeds = std::move(seeds);
  s.validate();
  return ex::run(s, &std::cerr);
}

bool same_bytes(const fs::path& a, const fs::path& b) {
  if (!fs::exists(a) || !fs::exists(b)) return false;
  return m::read_text(a) == m::read_text(b);
}

struct Runs {
  fs::path root;
  ex::RunOutcome ga, ga_again, rl_full, rl_none, rl_again;
};

Outcome ga_smoke(const Runs& r) {
  bool ok = r.ga.seeds.size() == 3;
  std::string detail;
  for (const auto& s : r.ga.seeds) {
    if (!s.ok) {
      ok = false;
      detail += " seed" + std::to_string(s.seed) + ":error(" + s.error + ")";
      continue;
    }
    const double best = s.report["final_best_fitness"].get<double>();
    const double thr = s.report["threshold"].get<double>();
    const double secs = s.report["runtime_seconds"].get<double>();
    ok = ok && best > thr && secs < 300.0;
    detail += " seed" + std::to_string(s.seed) + ":best=" + fmt(best) + ",thr=" + fmt(thr) + ",time=" + fmt(secs) + "s";
  }
  return {ok, detail.substr(detail.empty() ? 0 : 1)};
}

const ex::SeedOutcome* find_seed(const ex::RunOutcome& r, std::uint64_t seed) {
  for (const auto& s : r.seeds) {
    if (s.seed == seed) return &s;
  }
  return nullptr;
}

Outcome rl_smoke(const Runs& r) {
  const auto* s = find_seed(r.rl_full, 1);
  if (!s || !s->ok) return {false, "seed 1 did not complete" + (s ? ": " + s->error : std::string())};
  const double fin = s->report["final_window_mean"].get<double>();
  const double thr = s->report["threshold"].get<double>();
  const double secs = s->report["runtime_seconds"].get<double>();
  return {fin > thr && secs < 900.0, "final10=" + fmt(fin) + " thr=" + fmt(thr) + " time=" + fmt(secs) + "s"};
}

Outcome determinism(const Runs& r) {
  int compared = 0, identical = 0;
  for (const auto& s : r.ga.seeds) {
    ++compared;
    identical += same_bytes(fs::path(r.ga.dir) / std::to_string(s.seed) / "metrics.csv",
                            fs::path(r.ga_again.dir) / std::to_string(s.seed) / "metrics.csv");
  }
  ++compared;
  identical += same_bytes(fs::path(r.rl_full.dir) / "1" / "metrics.csv", fs::path(r.rl_again.dir) / "1" / "metrics.csv");
  return {compared == 4 && identical == compared,
          std::to_string(identical) + "/" + std::to_string(compared) + " metrics.csv files bit-identical"};
}

Outcome overlap_direction(const Runs& r) {
  if (r.rl_full.aggregate.is_null() || r.rl_none.aggregate.is_null()) return {false, "aggregate missing"};
  const auto& f = r.rl_full.aggregate;
  const auto& n = r.rl_none.aggregate;
  const int nf = f["n_runs"].get<int>(), nn_ = n["n_runs"].get<int>();
  const double sf = f["final_std_pop"].get<double>(), sn = n["final_std_pop"].get<double>();
  auto list = [](const nlohmann::json& a) {
    std::string s;
    for (const auto& v : a["final_per_run"]) s += (s.empty() ? "" : ",") + fmt(v.get<double>());
    return s;
  };
  return {nf >= 5 && nn_ >= 5 && sf < sn,
          "full std=" + fmt(sf) + " mean=" + fmt(f["final_mean"].get<double>()) + " [" + list(f) + "]; none std=" + fmt(sn) +
              " mean=" + fmt(n["final_mean"].get<double>()) + " [" + list(n) +
              "]; reference table: mean 8.51/11.90/9.84 std 0.91/1.26/7.92 (full/partial/none)"};
}

}  // namespace

int main() {
  std::vector<std::pair<std::string, std::function<Outcome()>>> exact = {
      {"1 theory oracle", theory_oracle},       {"2 lemma 1 variance", lemma_1},
      {"3 degeneracy identities", degeneracy},  {"4 posterior mixing", posterior_mixing},
      {"5 sensor semantics", sensor_semantics}, {"6 gradient check", gradient_check},
      {"7 gae oracle", gae_oracle}};

  int failures = 0;
  auto report = [&](const std::string& name, const std::function<Outcome()>& f) {
    Outcome o;
    try {
      o = f();
    } catch (const std::exception& e) {
      o = {false, std::string("exception: ") + e.what()};
    }
    failures += o.pass ? 0 : 1;
    std::cout << (o.pass ? "PASS " : "FAIL ") << name << " :: " << o.detail << std::endl;
  };
  for (const auto& [name, f] : exact) report(name, f);

  Runs r;
  std::string run_error;
  try {
    r.root = scratch_root();
    r.ga = run_preset("ga-smoke", r.root / "a", {1, 2, 3});
    r.ga_again = run_preset("ga-smoke", r.root / "b", {1, 2, 3});
    r.rl_full = run_preset("rl-smoke-full", r.root / "a", {1, 2, 3, 4, 5});
    r.rl_again = run_preset("rl-smoke-full", r.root / "b", {1});
    r.rl_none = run_preset("rl-smoke-none", r.root / "a", {1, 2, 3, 4, 5});
  } catch (const std::exception& e) {
    run_error = e.what();
  }
  auto guarded = [&](auto fn) {
    return [&, fn]() -> Outcome {
      if (!run_error.empty()) return {false, "runs failed: " + run_error};
      return fn(r);
    };
  };
  report("8 ga smoke", guarded(ga_smoke));
  report("9 rl smoke", guarded(rl_smoke));
  report("10 determinism", guarded(determinism));
  report("11 overlap std direction", guarded(overlap_direction));
  report("12 mimicry pipeline", mimicry_pipeline);

  std::cout << (failures == 0 ? "all criteria passed" : std::to_string(failures) + " criteria failed") << std::endl;
  return failures == 0 ? 0 : 1;
}
