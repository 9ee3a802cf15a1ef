#ifndef MIMIC_SIG_METRICS_HPP_
#define MIMIC_SIG_METRICS_HPP_

#include <algorithm>
#include <charconv>
#include <cmath>
#include <cstdint>
#include <filesystem>
#include <fstream>
#include <limits>
#include <numeric>
#include <sstream>
#include <string>
#include <vector>

#include <json.hpp>

#include "mimic_sig/core.hpp"
#include "mimic_sig/gridworld.hpp"

namespace mimic_sig::metrics {

inline const std::vector<std::string>& base_columns() {
  static const std::vector<std::string> cols = {"iteration", "env_steps", "mean_reward", "std_reward",
                                                "mimicry_frequency"};
  return cols;
}

struct Record {
  std::int64_t iteration = 0;
  std::int64_t env_steps = 0;
  double mean_reward = 0.0;
  double std_reward = 0.0;
  double mimicry_frequency = 0.0;
  std::vector<double> aux;  // aligned with RunHistory::aux_columns
};

struct RunHistory {
  std::vector<std::string> aux_columns;
  std::vector<Record> records;
  nlohmann::json metadata = nlohmann::json::object();

  void append(Record r) {
    if (!records.empty() && r.iteration <= records.back().iteration) {
      throw Error("history iterations must be strictly increasing");
    }
    if (!(r.mimicry_frequency >= 0.0 && r.mimicry_frequency <= 1.0)) {
      throw Error("mimicry frequency outside [0, 1]");
    }
    if (r.aux.size() != aux_columns.size()) throw ShapeError("aux values do not match aux columns");
    records.push_back(std::move(r));
  }

  std::size_t size() const { return records.size(); }
  bool empty() const { return records.empty(); }

  double aux(std::size_t row, const std::string& col) const {
    for (std::size_t i = 0; i < aux_columns.size(); ++i) {
      if (aux_columns[i] == col) return records.at(row).aux[i];
    }
    throw Error("no column named " + col);
  }
};

// ---- mimicry ----

// Running tally of agent emits; spatial actions are ignored.
struct EmitTally {
  std::int64_t emits = 0;
  std::int64_t overlap = 0;

  void add(int action, const grid::GridConfig& c, const std::vector<int>& overlap_set) {
    if (!c.is_emit(action)) return;
    ++emits;
    const int s = c.emit_symbol(action);
    if (std::find(overlap_set.begin(), overlap_set.end(), s) != overlap_set.end()) ++overlap;
  }
  void merge(const EmitTally& o) {
    emits += o.emits;
    overlap += o.overlap;
  }
  // 0 when no emits occurred.
  double frequency() const { return emits == 0 ? 0.0 : static_cast<double>(overlap) / static_cast<double>(emits); }
};

inline double mimicry_frequency(const std::vector<int>& actions, const grid::GridConfig& c) {
  if (actions.empty()) throw Error("mimicry_frequency needs a non-empty trajectory");
  const auto overlap_set = c.overlap_symbols();
  EmitTally t;
  for (int a : actions) t.add(a, c, overlap_set);
  return t.frequency();
}

// ---- CSV ----

inline std::string format_number(double v) {
  if (std::isnan(v)) return "nan";
  if (std::isinf(v)) return v > 0 ? "inf" : "-inf";
  char buf[64];
  auto res = std::to_chars(buf, buf + sizeof(buf), v);
  return std::string(buf, res.ptr);
}

inline double parse_number(const std::string& s) {
  if (s == "nan") return std::numeric_limits<double>::quiet_NaN();
  if (s == "inf") return std::numeric_limits<double>::infinity();
  if (s == "-inf") return -std::numeric_limits<double>::infinity();
  double v = 0.0;
  auto res = std::from_chars(s.data(), s.data() + s.size(), v);
  if (res.ec != std::errc() || res.ptr != s.data() + s.size()) throw Error("bad number in CSV: '" + s + "'");
  return v;
}

inline std::vector<std::string> split_csv_line(const std::string& line) {
  std::vector<std::string> out;
  std::string cur;
  for (char ch : line) {
    if (ch == ',') {
      out.push_back(cur);
      cur.clear();
    } else if (ch != '\r') {
      cur.push_back(ch);
    }
  }
  out.push_back(cur);
  return out;
}

inline std::string history_to_csv(const RunHistory& h) {
  std::ostringstream os;
  std::vector<std::string> cols = base_columns();
  cols.insert(cols.end(), h.aux_columns.begin(), h.aux_columns.end());
  for (std::size_t i = 0; i < cols.size(); ++i) os << (i ? "," : "") << cols[i];
  os << '\n';
  for (const auto& r : h.records) {
    os << r.iteration << ',' << r.env_steps << ',' << format_number(r.mean_reward) << ','
       << format_number(r.std_reward) << ',' << format_number(r.mimicry_frequency);
    for (double v : r.aux) os << ',' << format_number(v);
    os << '\n';
  }
  return os.str();
}

inline RunHistory history_from_csv(const std::string& text) {
  std::istringstream is(text);
  std::string line;
  if (!std::getline(is, line)) throw Error("empty metrics CSV");
  const auto header = split_csv_line(line);
  const auto& base = base_columns();
  if (header.size() < base.size() || !std::equal(base.begin(), base.end(), header.begin())) {
    throw Error("metrics CSV header must start with iteration,env_steps,mean_reward,std_reward,mimicry_frequency");
  }
  RunHistory h;
  h.aux_columns.assign(header.begin() + static_cast<std::ptrdiff_t>(base.size()), header.end());
  while (std::getline(is, line)) {
    if (line.empty()) continue;
    const auto f = split_csv_line(line);
    if (f.size() != header.size()) throw Error("metrics CSV row has the wrong number of fields");
    Record r;
    r.iteration = static_cast<std::int64_t>(parse_number(f[0]));
    r.env_steps = static_cast<std::int64_t>(parse_number(f[1]));
    r.mean_reward = parse_number(f[2]);
    r.std_reward = parse_number(f[3]);
    r.mimicry_frequency = parse_number(f[4]);
    for (std::size_t i = base.size(); i < f.size(); ++i) r.aux.push_back(parse_number(f[i]));
    h.append(std::move(r));
  }
  return h;
}

inline void write_text(const std::filesystem::path& p, const std::string& text) {
  if (p.has_parent_path()) std::filesystem::create_directories(p.parent_path());
  std::ofstream f(p, std::ios::binary | std::ios::trunc);
  if (!f) throw Error("cannot write " + p.string());
  f << text;
}

inline std::string read_text(const std::filesystem::path& p) {
  std::ifstream f(p, std::ios::binary);
  if (!f) throw Error("cannot read " + p.string());
  std::ostringstream ss;
  ss << f.rdbuf();
  return ss.str();
}

inline void write_history_csv(const std::filesystem::path& p, const RunHistory& h) { write_text(p, history_to_csv(h)); }
inline RunHistory read_history_csv(const std::filesystem::path& p) { return history_from_csv(read_text(p)); }

// ---- aggregation ----

struct Moments {
  double mean = 0.0;
  double std = 0.0;     // population
  double sem = 0.0;  // sample std / sqrt(n); 0 for n = 1
};

inline Moments moments(const std::vector<double>& v) {
  if (v.empty()) throw Error("moments of an empty sample");
  Moments m;
  const double n = static_cast<double>(v.size());
  m.mean = std::accumulate(v.begin(), v.end(), 0.0) / n;
  double ss = 0.0;
  for (double x : v) ss += (x - m.mean) * (x - m.mean);
  m.std = std::sqrt(ss / n);
  m.sem = v.size() > 1 ? std::sqrt(ss / (n - 1.0)) / std::sqrt(n) : 0.0;
  return m;
}

struct Aggregate {
  std::vector<double> env_steps;  // common grid
  std::vector<double> reward_mean, reward_std, reward_stderr;
  std::vector<double> mimicry_mean, mimicry_std;
  std::vector<double> final_per_run;  // mean of each run's last k rewards
  Moments final;
  std::size_t n_runs = 0;
  std::size_t final_window = 0;
  bool interpolated = false;
};

namespace detail {

// Linear interpolation of y(x) at q; clamps outside the sampled range.
inline double interp(const std::vector<double>& x, const std::vector<double>& y, double q) {
  if (q <= x.front()) return y.front();
  if (q >= x.back()) return y.back();
  auto it = std::upper_bound(x.begin(), x.end(), q);
  const std::size_t i = static_cast<std::size_t>(it - x.begin());
  const double t = (q - x[i - 1]) / (x[i] - x[i - 1]);
  return y[i - 1] + t * (y[i] - y[i - 1]);
}

}  // namespace detail

// Mean of the last k mean_reward values (all of them if fewer).
inline double final_mean(const RunHistory& h, std::size_t k) {
  if (h.empty()) throw Error("final_mean of an empty history");
  const std::size_t n = std::min(k == 0 ? 1 : k, h.size());
  double s = 0.0;
  for (std::size_t i = h.size() - n; i < h.size(); ++i) s += h.records[i].mean_reward;
  return s / static_cast<double>(n);
}

// Pointwise statistics across runs on env_steps. Runs that share the exact
// grid are combined directly; otherwise all runs are interpolated onto the
// grid of the run with the fewest records.
inline Aggregate aggregate_runs(const std::vector<RunHistory>& runs, std::size_t final_window = 10) {
  if (runs.empty()) throw Error("aggregate_runs needs at least one history");
  for (const auto& r : runs) {
    if (r.empty()) throw Error("aggregate_runs got an empty history");
  }
  auto grid_of = [](const RunHistory& h) {
    std::vector<double> x;
    for (const auto& r : h.records) x.push_back(static_cast<double>(r.env_steps));
    return x;
  };
  std::size_t coarsest = 0;
  for (std::size_t i = 1; i < runs.size(); ++i) {
    if (runs[i].size() < runs[coarsest].size()) coarsest = i;
  }
  Aggregate a;
  a.n_runs = runs.size();
  a.env_steps = grid_of(runs[coarsest]);
  for (const auto& r : runs) {
    if (grid_of(r) != a.env_steps) a.interpolated = true;
  }
  std::vector<std::vector<double>> rew(runs.size()), mim(runs.size());
  for (std::size_t k = 0; k < runs.size(); ++k) {
    const auto x = grid_of(runs[k]);
    std::vector<double> yr, ym;
    for (const auto& rec : runs[k].records) {
      yr.push_back(rec.mean_reward);
      ym.push_back(rec.mimicry_frequency);
    }
    for (double q : a.env_steps) {
      rew[k].push_back(a.interpolated ? detail::interp(x, yr, q) : yr[rew[k].size()]);
      mim[k].push_back(a.interpolated ? detail::interp(x, ym, q) : ym[mim[k].size()]);
    }
  }
  for (std::size_t i = 0; i < a.env_steps.size(); ++i) {
    std::vector<double> col_r, col_m;
    for (std::size_t k = 0; k < runs.size(); ++k) {
      col_r.push_back(rew[k][i]);
      col_m.push_back(mim[k][i]);
    }
    const auto mr = moments(col_r);
    const auto mm = moments(col_m);
    a.reward_mean.push_back(mr.mean);
    a.reward_std.push_back(mr.std);
    a.reward_stderr.push_back(mr.sem);
    a.mimicry_mean.push_back(mm.mean);
    a.mimicry_std.push_back(mm.std);
  }
  a.final_window = final_window == 0 ? 1 : final_window;
  for (const auto& r : runs) a.final_per_run.push_back(final_mean(r, a.final_window));
  a.final = moments(a.final_per_run);
  return a;
}

inline std::string aggregate_to_csv(const Aggregate& a) {
  std::ostringstream os;
  os << "env_steps,mean_reward_mean,mean_reward_std_pop,mean_reward_stderr,mimicry_mean,mimicry_std_pop,n_runs\n";
  for (std::size_t i = 0; i < a.env_steps.size(); ++i) {
    os << format_number(a.env_steps[i]) << ',' << format_number(a.reward_mean[i]) << ','
       << format_number(a.reward_std[i]) << ',' << format_number(a.reward_stderr[i]) << ','
       << format_number(a.mimicry_mean[i]) << ',' << format_number(a.mimicry_std[i]) << ',' << a.n_runs << '\n';
  }
  return os.str();
}

// ---- alignment ----

struct AlignResult {
  std::vector<RunHistory> aligned;
  std::vector<std::size_t> kept;      // input indices of aligned runs
  std::vector<std::size_t> excluded;  // runs that never crossed
  std::vector<std::int64_t> shift;    // iteration subtracted from each kept run
};

// First record index whose mean_reward is above `threshold` for `sustain`
// consecutive records, or -1.
inline std::ptrdiff_t first_crossing(const RunHistory& h, double threshold, std::size_t sustain = 1) {
  if (sustain == 0) sustain = 1;
  std::size_t run = 0;
  for (std::size_t i = 0; i < h.size(); ++i) {
    run = h.records[i].mean_reward > threshold ? run + 1 : 0;
    if (run == sustain) return static_cast<std::ptrdiff_t>(i + 1 - sustain);
  }
  return -1;
}

inline AlignResult align_curves(const std::vector<RunHistory>& runs, double threshold = 0.0, std::size_t sustain = 1) {
  AlignResult out;
  for (std::size_t k = 0; k < runs.size(); ++k) {
    const auto at = first_crossing(runs[k], threshold, sustain);
    if (at < 0) {
      out.excluded.push_back(k);
      continue;
    }
    const std::int64_t s = runs[k].records[static_cast<std::size_t>(at)].iteration;
    RunHistory h = runs[k];
    for (auto& r : h.records) r.iteration -= s;
    h.metadata["aligned_shift"] = s;
    out.aligned.push_back(std::move(h));
    out.kept.push_back(k);
    out.shift.push_back(s);
  }
  return out;
}

// ---- SVG ----

struct Series {
  std::string label;
  std::vector<double> x;
  std::vector<double> y;
  bool secondary = false;  // plotted against the right axis in [0, 1]
};

// Line chart with reward on the left axis and optional frequency series on a
// right axis fixed to [0, 1].
inline std::string line_plot_svg(const std::vector<Series>& series, const std::string& title,
                                 const std::string& x_label, const std::string& y_label,
                                 const std::string& y2_label = "") {
  const double W = 720, H = 420, L = 70, R = 70, T = 40, B = 50;
  double x0 = std::numeric_limits<double>::infinity(), x1 = -x0, y0 = x0, y1 = -x0;
  for (const auto& s : series) {
    for (double v : s.x) {
      x0 = std::min(x0, v);
      x1 = std::max(x1, v);
    }
    if (s.secondary) continue;
    for (double v : s.y) {
      if (!std::isfinite(v)) continue;
      y0 = std::min(y0, v);
      y1 = std::max(y1, v);
    }
  }
  if (!std::isfinite(x0)) x0 = 0, x1 = 1;
  if (!std::isfinite(y0)) y0 = 0, y1 = 1;
  if (x1 == x0) x1 = x0 + 1;
  if (y1 == y0) y1 = y0 + 1;
  auto px = [&](double v) { return L + (v - x0) / (x1 - x0) * (W - L - R); };
  auto py = [&](double v) { return H - B - (v - y0) / (y1 - y0) * (H - T - B); };
  auto py2 = [&](double v) { return H - B - v * (H - T - B); };
  static const char* palette[] = {"#1f77b4", "#d62728", "#2ca02c", "#9467bd", "#ff7f0e", "#8c564b", "#e377c2", "#17becf"};
  std::ostringstream os;
  os << "<svg xmlns=\"http://www.w3.org/2000/svg\" width=\"" << W << "\" height=\"" << H
     << "\" font-family=\"sans-serif\" font-size=\"12\">\n";
  os << "<rect width=\"100%\" height=\"100%\" fill=\"white\"/>\n";
  os << "<text x=\"" << W / 2 << "\" y=\"22\" text-anchor=\"middle\" font-size=\"15\">" << title << "</text>\n";
  os << "<line x1=\"" << L << "\" y1=\"" << H - B << "\" x2=\"" << W - R << "\" y2=\"" << H - B
     << "\" stroke=\"black\"/>\n";
  os << "<line x1=\"" << L << "\" y1=\"" << T << "\" x2=\"" << L << "\" y2=\"" << H - B << "\" stroke=\"black\"/>\n";
  for (int i = 0; i <= 4; ++i) {
    const double xv = x0 + (x1 - x0) * i / 4.0;
    const double yv = y0 + (y1 - y0) * i / 4.0;
    os << "<text x=\"" << px(xv) << "\" y=\"" << H - B + 16 << "\" text-anchor=\"middle\">" << format_number(std::round(xv * 100) / 100)
       << "</text>\n";
    os << "<text x=\"" << L - 6 << "\" y=\"" << py(yv) + 4 << "\" text-anchor=\"end\">"
       << format_number(std::round(yv * 100) / 100) << "</text>\n";
  }
  if (y0 < 0 && y1 > 0) {
    os << "<line x1=\"" << L << "\" y1=\"" << py(0) << "\" x2=\"" << W - R << "\" y2=\"" << py(0)
       << "\" stroke=\"#999\" stroke-dasharray=\"2,3\"/>\n";
  }
  if (!y2_label.empty()) {
    os << "<line x1=\"" << W - R << "\" y1=\"" << T << "\" x2=\"" << W - R << "\" y2=\"" << H - B
       << "\" stroke=\"black\"/>\n";
    for (int i = 0; i <= 4; ++i) {
      os << "<text x=\"" << W - R + 6 << "\" y=\"" << py2(i / 4.0) + 4 << "\">" << format_number(i / 4.0) << "</text>\n";
    }
    os << "<text transform=\"translate(" << W - 14 << "," << H / 2 << ") rotate(90)\" text-anchor=\"middle\">"
       << y2_label << "</text>\n";
  }
  os << "<text x=\"" << (L + W - R) / 2 << "\" y=\"" << H - 12 << "\" text-anchor=\"middle\">" << x_label << "</text>\n";
  os << "<text transform=\"translate(16," << H / 2 << ") rotate(-90)\" text-anchor=\"middle\">" << y_label
     << "</text>\n";
  for (std::size_t k = 0; k < series.size(); ++k) {
    const auto& s = series[k];
    const char* color = palette[k % 8];
    os << "<polyline fill=\"none\" stroke=\"" << color << "\" stroke-width=\"1.5\""
       << (s.secondary ? " stroke-dasharray=\"5,3\"" : "") << " points=\"";
    for (std::size_t i = 0; i < s.x.size() && i < s.y.size(); ++i) {
      if (!std::isfinite(s.y[i])) continue;
      os << px(s.x[i]) << ',' << (s.secondary ? py2(std::clamp(s.y[i], 0.0, 1.0)) : py(s.y[i])) << ' ';
    }
    os << "\"/>\n";
    os << "<text x=\"" << L + 10 << "\" y=\"" << T + 14 + 14 * static_cast<double>(k) << "\" fill=\"" << color << "\">"
       << s.label << "</text>\n";
  }
  os << "</svg>\n";
  return os.str();
}

}  // namespace mimic_sig::metrics

#endif  // MIMIC_SIG_METRICS_HPP_
