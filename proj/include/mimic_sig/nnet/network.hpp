#ifndef MIMIC_SIG_NNET_NETWORK_HPP_
#define MIMIC_SIG_NNET_NETWORK_HPP_

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <limits>
#include <random>
#include <span>
#include <string>
#include <vector>

#include "mimic_sig/core.hpp"
#include "mimic_sig/nnet/matrix.hpp"
#include "mimic_sig/nnet/tape.hpp"

namespace mimic_sig::nnet {

// n_feedforward ReLU layers, then an optional GRU, then linear heads.
// n_actions may be 0 for a value-only network (critic).
struct NetArch {
  int input_dim = 1;
  int hidden_dim = 128;
  int n_feedforward = 3;
  bool recurrent = true;
  int n_actions = 1;
  bool with_value_head = false;

  void validate() const {
    if (input_dim < 1) throw ConfigError("input_dim must be >= 1", "$.arch.input_dim");
    if (hidden_dim < 1) throw ConfigError("hidden_dim must be >= 1", "$.arch.hidden_dim");
    if (n_feedforward < 0) throw ConfigError("n_feedforward must be >= 0", "$.arch.n_feedforward");
    if (n_actions < 0) throw ConfigError("n_actions must be >= 0", "$.arch.n_actions");
    if (n_actions == 0 && !with_value_head) {
      throw ConfigError("network needs a policy head or a value head", "$.arch.n_actions");
    }
    if (n_feedforward == 0 && !recurrent) {
      throw ConfigError("network needs at least one hidden layer", "$.arch.n_feedforward");
    }
  }

  int trunk_dim() const { return hidden_dim; }
  bool operator==(const NetArch&) const = default;
};

struct Slice {
  std::string name;
  std::size_t offset = 0;
  std::size_t rows = 0;
  std::size_t cols = 0;
  std::size_t size() const { return rows * cols; }
  std::size_t end() const { return offset + size(); }
};

// Weights are stored (fan_in x fan_out) so a batch of row vectors maps by x*W.
inline std::vector<Slice> layout(const NetArch& a) {
  a.validate();
  std::vector<Slice> out;
  std::size_t at = 0;
  auto add = [&](std::string name, int r, int c) {
    out.push_back({std::move(name), at, static_cast<std::size_t>(r), static_cast<std::size_t>(c)});
    at += static_cast<std::size_t>(r) * static_cast<std::size_t>(c);
  };
  const int h = a.hidden_dim;
  int in = a.input_dim;
  for (int i = 0; i < a.n_feedforward; ++i) {
    add("ff" + std::to_string(i) + ".w", in, h);
    add("ff" + std::to_string(i) + ".b", 1, h);
    in = h;
  }
  if (a.recurrent) {
    add("gru.wx", in, 3 * h);
    add("gru.wh", h, 3 * h);
    add("gru.bx", 1, 3 * h);
    add("gru.bh", 1, 3 * h);
  }
  if (a.n_actions > 0) {
    add("pi.w", h, a.n_actions);
    add("pi.b", 1, a.n_actions);
  }
  if (a.with_value_head) {
    add("v.w", h, 1);
    add("v.b", 1, 1);
  }
  return out;
}

inline std::size_t param_count(const NetArch& a) {
  const std::size_t h = static_cast<std::size_t>(a.hidden_dim);
  const std::size_t in = static_cast<std::size_t>(a.input_dim);
  std::size_t n = 0;
  std::size_t prev = in;
  for (int i = 0; i < a.n_feedforward; ++i) {
    n += prev * h + h;
    prev = h;
  }
  if (a.recurrent) n += prev * 3 * h + h * 3 * h + 6 * h;
  if (a.n_actions > 0) n += h * static_cast<std::size_t>(a.n_actions) + static_cast<std::size_t>(a.n_actions);
  if (a.with_value_head) n += h + 1;
  return n;
}

inline const Slice& find_slice(const std::vector<Slice>& l, const std::string& name) {
  for (const auto& s : l) {
    if (s.name == name) return s;
  }
  throw ShapeError("no parameter slice named " + name);
}

inline constexpr float kPolicyHeadScale = 0.01f;

// Feedforward and input-to-hidden weights ~ U(+-1/sqrt(fan_in)); recurrent
// weights are three orthogonal HxH blocks; biases zero; policy head scaled down.
inline std::vector<float> init_params(const NetArch& a, std::uint64_t seed) {
  const auto l = layout(a);
  std::vector<float> p(param_count(a), 0.0f);
  std::mt19937_64 rng(stream_seed(seed, Stream::kInit, 0));
  auto uniform_fill = [&](const Slice& s, double scale) {
    const double bound = scale / std::sqrt(static_cast<double>(s.rows));
    std::uniform_real_distribution<double> u(-bound, bound);
    for (std::size_t i = 0; i < s.size(); ++i) p[s.offset + i] = static_cast<float>(u(rng));
  };
  for (const auto& s : l) {
    if (s.rows == 1 && s.name.ends_with(".b")) continue;
    if (s.name == "gru.bx" || s.name == "gru.bh") continue;
    if (s.name == "gru.wh") {
      const std::size_t h = s.rows;
      std::normal_distribution<double> g(0.0, 1.0);
      for (int block = 0; block < 3; ++block) {
        // Gram-Schmidt on a Gaussian matrix, columns of the block.
        std::vector<double> q(h * h);
        for (auto& v : q) v = g(rng);
        for (std::size_t c = 0; c < h; ++c) {
          for (std::size_t prev = 0; prev < c; ++prev) {
            double dot = 0.0;
            for (std::size_t r = 0; r < h; ++r) dot += q[r * h + c] * q[r * h + prev];
            for (std::size_t r = 0; r < h; ++r) q[r * h + c] -= dot * q[r * h + prev];
          }
          double norm = 0.0;
          for (std::size_t r = 0; r < h; ++r) norm += q[r * h + c] * q[r * h + c];
          norm = std::sqrt(norm);
          for (std::size_t r = 0; r < h; ++r) q[r * h + c] /= norm;
        }
        for (std::size_t r = 0; r < h; ++r) {
          for (std::size_t c = 0; c < h; ++c) {
            p[s.offset + r * 3 * h + static_cast<std::size_t>(block) * h + c] = static_cast<float>(q[r * h + c]);
          }
        }
      }
      continue;
    }
    uniform_fill(s, s.name == "pi.w" ? static_cast<double>(kPolicyHeadScale) : 1.0);
  }
  return p;
}

// Layered view: one matrix per slice, in layout order.
template <class T>
std::vector<Matrix<T>> unflatten(const NetArch& a, std::span<const T> flat) {
  const auto l = layout(a);
  const std::size_t n = param_count(a);
  if (flat.size() != n) {
    throw ShapeError("parameter vector has " + std::to_string(flat.size()) + " entries, arch needs " +
                     std::to_string(n));
  }
  std::vector<Matrix<T>> out;
  out.reserve(l.size());
  for (const auto& s : l) out.emplace_back(s.rows, s.cols, flat.subspan(s.offset, s.size()));
  return out;
}

template <class T>
std::vector<T> flatten(const NetArch& a, const std::vector<Matrix<T>>& layers) {
  const auto l = layout(a);
  if (layers.size() != l.size()) throw ShapeError("layer count does not match arch");
  std::vector<T> out;
  out.reserve(param_count(a));
  for (std::size_t i = 0; i < l.size(); ++i) {
    if (layers[i].rows != l[i].rows || layers[i].cols != l[i].cols) {
      throw ShapeError("layer " + l[i].name + " has the wrong shape");
    }
    out.insert(out.end(), layers[i].data.begin(), layers[i].data.end());
  }
  return out;
}

template <class T>
struct ForwardOut {
  Matrix<T> logits;  // B x n_actions, empty if no policy head
  Matrix<T> value;   // B x 1, empty if no value head
  Matrix<T> hidden;  // B x hidden_dim, empty if not recurrent
};

namespace detail {

template <class T>
void dense(const Matrix<T>& x, const T* w, const T* b, std::size_t out_dim, Matrix<T>& y) {
  y = Matrix<T>(x.rows, out_dim);
  for (std::size_t r = 0; r < x.rows; ++r) std::copy(b, b + out_dim, y.row(r));
  kernels::gemm_nn(x.data.data(), w, y.data.data(), x.rows, x.cols, out_dim);
}

}  // namespace detail

// Untaped forward for a batch: obs is B x input_dim, hidden B x hidden_dim
// (ignored when not recurrent). Pure in all arguments.
template <class T>
ForwardOut<T> policy_forward(const NetArch& a, std::span<const T> params, const Matrix<T>& obs,
                             const Matrix<T>& hidden) {
  const std::size_t n = param_count(a);
  if (params.size() != n) throw ShapeError("parameter vector length does not match arch");
  if (obs.cols != static_cast<std::size_t>(a.input_dim)) {
    throw ShapeError("observation width " + std::to_string(obs.cols) + " != input_dim " +
                     std::to_string(a.input_dim));
  }
  const std::size_t h = static_cast<std::size_t>(a.hidden_dim);
  if (a.recurrent && (hidden.rows != obs.rows || hidden.cols != h)) {
    throw ShapeError("hidden state must be batch x hidden_dim");
  }
  const T* p = params.data();
  std::size_t at = 0;
  Matrix<T> x = obs;
  Matrix<T> y;
  for (int i = 0; i < a.n_feedforward; ++i) {
    const T* w = p + at;
    at += x.cols * h;
    const T* b = p + at;
    at += h;
    detail::dense(x, w, b, h, y);
    for (auto& v : y.data) v = v > T(0) ? v : T(0);
    std::swap(x, y);
  }
  ForwardOut<T> out;
  if (a.recurrent) {
    const T* wx = p + at;
    at += x.cols * 3 * h;
    const T* wh = p + at;
    at += h * 3 * h;
    const T* bx = p + at;
    at += 3 * h;
    const T* bh = p + at;
    at += 3 * h;
    Matrix<T> gx, gh;
    detail::dense(x, wx, bx, 3 * h, gx);
    detail::dense(hidden, wh, bh, 3 * h, gh);
    Matrix<T> hn(obs.rows, h);
    for (std::size_t r = 0; r < obs.rows; ++r) {
      const T* gxr = gx.row(r);
      const T* ghr = gh.row(r);
      const T* hr = hidden.row(r);
      T* o = hn.row(r);
      for (std::size_t j = 0; j < h; ++j) {
        const T rg = Tape<T>::stable_sigmoid(gxr[j] + ghr[j]);
        const T zg = Tape<T>::stable_sigmoid(gxr[h + j] + ghr[h + j]);
        const T cand = std::tanh(gxr[2 * h + j] + rg * ghr[2 * h + j]);
        o[j] = hr[j] + zg * (cand - hr[j]);
      }
    }
    x = hn;
    out.hidden = std::move(hn);
  }
  if (a.n_actions > 0) {
    const std::size_t na = static_cast<std::size_t>(a.n_actions);
    const T* w = p + at;
    at += h * na;
    const T* b = p + at;
    at += na;
    detail::dense(x, w, b, na, out.logits);
  }
  if (a.with_value_head) {
    const T* w = p + at;
    at += h;
    const T* b = p + at;
    at += 1;
    detail::dense(x, w, b, 1, out.value);
  }
  return out;
}

// Single-observation convenience form.
template <class T>
ForwardOut<T> policy_forward(const NetArch& a, std::span<const T> params, std::span<const T> obs,
                             std::span<const T> hidden) {
  if (obs.size() != static_cast<std::size_t>(a.input_dim)) throw ShapeError("observation length != input_dim");
  Matrix<T> o(1, obs.size(), obs);
  Matrix<T> hm;
  if (a.recurrent) {
    if (hidden.size() != static_cast<std::size_t>(a.hidden_dim)) throw ShapeError("hidden length != hidden_dim");
    hm = Matrix<T>(1, hidden.size(), hidden);
  }
  return policy_forward(a, params, o, hm);
}

// Records the same computation on a tape, with one gradient leaf per slice.
template <class T>
class TapedNet {
 public:
  struct StepOut {
    Var logits;
    Var value;
    Var hidden;
    bool has_logits = false;
    bool has_value = false;
  };

  TapedNet(Tape<T>& tape, const NetArch& arch, std::span<const T> params)
      : tape_(tape), arch_(arch), layout_(layout(arch)) {
    auto layers = unflatten<T>(arch, params);
    leaves_.reserve(layers.size());
    for (auto& m : layers) leaves_.push_back(tape_.leaf(std::move(m), true));
  }

  const NetArch& arch() const { return arch_; }

  // The step splits into three stages so a caller can run the
  // non-recurrent ones on many time steps stacked by row:
  //   encode (feedforward layers + GRU input projection), recur, heads.

  Var encode(Var obs) {
    if (tape_.value(obs).cols != static_cast<std::size_t>(arch_.input_dim)) {
      throw ShapeError("observation width does not match input_dim");
    }
    Var x = obs;
    for (int i = 0; i < arch_.n_feedforward; ++i) {
      x = tape_.relu(tape_.add_bias(tape_.matmul(x, leaves_[2 * i]), leaves_[2 * i + 1]));
    }
    if (!arch_.recurrent) return x;
    const std::size_t k = 2 * static_cast<std::size_t>(arch_.n_feedforward);
    return tape_.add_bias(tape_.matmul(x, leaves_[k]), leaves_[k + 2]);
  }

  Var recur(Var encoded, Var hidden) {
    if (!arch_.recurrent) return encoded;
    const std::size_t k = 2 * static_cast<std::size_t>(arch_.n_feedforward);
    Var gh = tape_.add_bias(tape_.matmul(hidden, leaves_[k + 1]), leaves_[k + 3]);
    return tape_.gru_cell(encoded, gh, hidden);
  }

  StepOut heads(Var x) {
    std::size_t k = 2 * static_cast<std::size_t>(arch_.n_feedforward) + (arch_.recurrent ? 4 : 0);
    StepOut out;
    if (arch_.n_actions > 0) {
      out.logits = tape_.add_bias(tape_.matmul(x, leaves_[k]), leaves_[k + 1]);
      out.has_logits = true;
      k += 2;
    }
    if (arch_.with_value_head) {
      out.value = tape_.add_bias(tape_.matmul(x, leaves_[k]), leaves_[k + 1]);
      out.has_value = true;
    }
    return out;
  }

  // hidden may be a Var produced by a previous step (full backprop through time).
  StepOut step(Var obs, Var hidden) {
    Var x = recur(encode(obs), hidden);
    StepOut out = heads(x);
    if (arch_.recurrent) out.hidden = x;
    return out;
  }

  // Gradient of the last backward() target, aligned with the flat layout.
  std::vector<T> gradient() const {
    std::vector<T> g;
    g.reserve(param_count(arch_));
    for (Var v : leaves_) {
      const auto m = tape_.grad(v);
      g.insert(g.end(), m.data.begin(), m.data.end());
    }
    return g;
  }

  const std::vector<Var>& leaves() const { return leaves_; }

 private:
  Tape<T>& tape_;
  NetArch arch_;
  std::vector<Slice> layout_;
  std::vector<Var> leaves_;
};

// ---- action selection ----

template <class T>
std::vector<double> softmax(const T* logits, std::size_t n) {
  std::vector<double> p(n);
  double mx = -std::numeric_limits<double>::infinity();
  for (std::size_t i = 0; i < n; ++i) mx = std::max(mx, static_cast<double>(logits[i]));
  double s = 0.0;
  for (std::size_t i = 0; i < n; ++i) {
    p[i] = std::exp(static_cast<double>(logits[i]) - mx);
    s += p[i];
  }
  for (auto& v : p) v /= s;
  return p;
}

template <class T>
double log_softmax_at(const T* logits, std::size_t n, std::size_t k) {
  double mx = -std::numeric_limits<double>::infinity();
  for (std::size_t i = 0; i < n; ++i) mx = std::max(mx, static_cast<double>(logits[i]));
  double s = 0.0;
  for (std::size_t i = 0; i < n; ++i) s += std::exp(static_cast<double>(logits[i]) - mx);
  return static_cast<double>(logits[k]) - mx - std::log(s);
}

// Lowest index wins ties.
template <class T>
int argmax(const T* logits, std::size_t n) {
  std::size_t best = 0;
  for (std::size_t i = 1; i < n; ++i) {
    if (logits[i] > logits[best]) best = i;
  }
  return static_cast<int>(best);
}

// Inverse-CDF draw from softmax(logits), temperature 1.
template <class T, class Rng>
int sample_action(const T* logits, std::size_t n, Rng& rng) {
  const auto p = softmax(logits, n);
  const double u = std::uniform_real_distribution<double>(0.0, 1.0)(rng);
  double c = 0.0;
  for (std::size_t i = 0; i < n; ++i) {
    c += p[i];
    if (u < c) return static_cast<int>(i);
  }
  return static_cast<int>(n - 1);
}

}  // namespace mimic_sig::nnet

#endif  // MIMIC_SIG_NNET_NETWORK_HPP_
