#ifndef MIMIC_SIG_NNET_TAPE_HPP_
#define MIMIC_SIG_NNET_TAPE_HPP_

// Reverse-mode differentiation over matrix-valued nodes.
//
// A Tape records every operation applied to its Vars. backward(loss) walks
// the record in reverse, accumulating d loss / d node into each node that
// depends on a leaf created with requires_grad. A tape belongs to one thread
// for its whole lifetime.

#include <algorithm>
#include <cmath>
#include <functional>
#include <limits>
#include <vector>

#include "mimic_sig/nnet/matrix.hpp"

namespace mimic_sig::nnet {

struct Var {
  std::size_t id = 0;
};

template <class T>
class Tape {
 public:
  Tape() = default;
  Tape(const Tape&) = delete;
  Tape& operator=(const Tape&) = delete;

  Var leaf(Matrix<T> value, bool requires_grad = false) {
    return push(std::move(value), requires_grad, nullptr);
  }

  const Matrix<T>& value(Var v) const { return nodes_[v.id].value; }

  // Gradient of the last backward() target; zeros if never reached.
  Matrix<T> grad(Var v) const {
    const Node& n = nodes_[v.id];
    if (n.grad.empty() && !n.value.empty()) return Matrix<T>(n.value.rows, n.value.cols);
    return n.grad;
  }

  std::size_t size() const { return nodes_.size(); }

  void backward(Var loss) {
    Node& root = nodes_[loss.id];
    if (root.value.rows != 1 || root.value.cols != 1) {
      throw ShapeError("backward needs a scalar (1x1) output");
    }
    for (auto& n : nodes_) n.grad = Matrix<T>();
    if (!root.requires_grad) return;
    root.grad = Matrix<T>(1, 1, T(1));
    for (std::size_t i = loss.id + 1; i-- > 0;) {
      Node& n = nodes_[i];
      if (n.backward && !n.grad.empty()) n.backward();
    }
  }

  // ---- operations ----

  Var matmul(Var a, Var b) {
    const auto& av = value(a);
    const auto& bv = value(b);
    if (av.cols != bv.rows) throw ShapeError("matmul inner dimensions differ");
    Matrix<T> out(av.rows, bv.cols);
    kernels::gemm_nn(av.data.data(), bv.data.data(), out.data.data(), av.rows, av.cols, bv.cols);
    return record(std::move(out), {a, b}, [this, a, b](std::size_t self) {
      const auto& g = nodes_[self].grad;
      const auto& av = value(a);
      const auto& bv = value(b);
      if (wants(a)) {
        kernels::gemm_nt(g.data.data(), bv.data.data(), acc(a).data.data(), av.rows, av.cols, bv.cols);
      }
      if (wants(b)) {
        kernels::gemm_tn(av.data.data(), g.data.data(), acc(b).data.data(), av.rows, av.cols, bv.cols);
      }
    });
  }

  Var add(Var a, Var b) {
    check_same(a, b, "add");
    Matrix<T> out = value(a);
    const auto& bv = value(b);
    for (std::size_t i = 0; i < out.size(); ++i) out.data[i] += bv.data[i];
    return record(std::move(out), {a, b}, [this, a, b](std::size_t self) {
      const auto& g = nodes_[self].grad;
      if (wants(a)) axpy(acc(a), g, T(1));
      if (wants(b)) axpy(acc(b), g, T(1));
    });
  }

  Var sub(Var a, Var b) {
    check_same(a, b, "sub");
    Matrix<T> out = value(a);
    const auto& bv = value(b);
    for (std::size_t i = 0; i < out.size(); ++i) out.data[i] -= bv.data[i];
    return record(std::move(out), {a, b}, [this, a, b](std::size_t self) {
      const auto& g = nodes_[self].grad;
      if (wants(a)) axpy(acc(a), g, T(1));
      if (wants(b)) axpy(acc(b), g, T(-1));
    });
  }

  // a (r x c) + bias (1 x c) broadcast over rows.
  Var add_bias(Var a, Var bias) {
    const auto& av = value(a);
    const auto& bv = value(bias);
    if (bv.rows != 1 || bv.cols != av.cols) throw ShapeError("bias must be 1 x cols");
    Matrix<T> out = av;
    for (std::size_t r = 0; r < out.rows; ++r) {
      T* o = out.row(r);
      for (std::size_t c = 0; c < out.cols; ++c) o[c] += bv.data[c];
    }
    return record(std::move(out), {a, bias}, [this, a, bias](std::size_t self) {
      const auto& g = nodes_[self].grad;
      if (wants(a)) axpy(acc(a), g, T(1));
      if (wants(bias)) {
        auto& gb = acc(bias);
        for (std::size_t r = 0; r < g.rows; ++r) {
          const T* gr = g.row(r);
          for (std::size_t c = 0; c < g.cols; ++c) gb.data[c] += gr[c];
        }
      }
    });
  }

  Var mul(Var a, Var b) {
    check_same(a, b, "mul");
    Matrix<T> out = value(a);
    const auto& bv = value(b);
    for (std::size_t i = 0; i < out.size(); ++i) out.data[i] *= bv.data[i];
    return record(std::move(out), {a, b}, [this, a, b](std::size_t self) {
      const auto& g = nodes_[self].grad;
      const auto& av = value(a);
      const auto& bv = value(b);
      if (wants(a)) {
        auto& ga = acc(a);
        for (std::size_t i = 0; i < g.size(); ++i) ga.data[i] += g.data[i] * bv.data[i];
      }
      if (wants(b)) {
        auto& gb = acc(b);
        for (std::size_t i = 0; i < g.size(); ++i) gb.data[i] += g.data[i] * av.data[i];
      }
    });
  }

  // s * a + shift
  Var affine(Var a, T s, T shift = T(0)) {
    Matrix<T> out = value(a);
    for (auto& v : out.data) v = s * v + shift;
    return record(std::move(out), {a}, [this, a, s](std::size_t self) {
      if (wants(a)) axpy(acc(a), nodes_[self].grad, s);
    });
  }

  Var scale(Var a, T s) { return affine(a, s, T(0)); }

  // Elementwise product with a constant matrix.
  Var mul_const(Var a, const Matrix<T>& m) {
    if (!value(a).same_shape(m)) throw ShapeError("mul_const shape mismatch");
    Matrix<T> out = value(a);
    for (std::size_t i = 0; i < out.size(); ++i) out.data[i] *= m.data[i];
    return record(std::move(out), {a}, [this, a, m](std::size_t self) {
      if (!wants(a)) return;
      const auto& g = nodes_[self].grad;
      auto& ga = acc(a);
      for (std::size_t i = 0; i < g.size(); ++i) ga.data[i] += g.data[i] * m.data[i];
    });
  }

  Var relu(Var a) {
    Matrix<T> out = value(a);
    for (auto& v : out.data) v = v > T(0) ? v : T(0);
    return record(std::move(out), {a}, [this, a](std::size_t self) {
      if (!wants(a)) return;
      const auto& g = nodes_[self].grad;
      const auto& x = value(a);
      auto& ga = acc(a);
      for (std::size_t i = 0; i < g.size(); ++i) {
        if (x.data[i] > T(0)) ga.data[i] += g.data[i];
      }
    });
  }

  Var sigmoid(Var a) {
    Matrix<T> out = value(a);
    for (auto& v : out.data) v = stable_sigmoid(v);
    return record(std::move(out), {a}, [this, a](std::size_t self) {
      if (!wants(a)) return;
      const auto& n = nodes_[self];
      auto& ga = acc(a);
      for (std::size_t i = 0; i < n.grad.size(); ++i) {
        const T y = n.value.data[i];
        ga.data[i] += n.grad.data[i] * y * (T(1) - y);
      }
    });
  }

  Var tanh(Var a) {
    Matrix<T> out = value(a);
    for (auto& v : out.data) v = std::tanh(v);
    return record(std::move(out), {a}, [this, a](std::size_t self) {
      if (!wants(a)) return;
      const auto& n = nodes_[self];
      auto& ga = acc(a);
      for (std::size_t i = 0; i < n.grad.size(); ++i) {
        const T y = n.value.data[i];
        ga.data[i] += n.grad.data[i] * (T(1) - y * y);
      }
    });
  }

  Var exp(Var a) {
    Matrix<T> out = value(a);
    for (auto& v : out.data) v = std::exp(v);
    return record(std::move(out), {a}, [this, a](std::size_t self) {
      if (!wants(a)) return;
      const auto& n = nodes_[self];
      auto& ga = acc(a);
      for (std::size_t i = 0; i < n.grad.size(); ++i) ga.data[i] += n.grad.data[i] * n.value.data[i];
    });
  }

  Var square(Var a) {
    Matrix<T> out = value(a);
    for (auto& v : out.data) v = v * v;
    return record(std::move(out), {a}, [this, a](std::size_t self) {
      if (!wants(a)) return;
      const auto& g = nodes_[self].grad;
      const auto& x = value(a);
      auto& ga = acc(a);
      for (std::size_t i = 0; i < g.size(); ++i) ga.data[i] += T(2) * x.data[i] * g.data[i];
    });
  }

  // Gradient flows only where lo < a < hi.
  Var clamp(Var a, T lo, T hi) {
    Matrix<T> out = value(a);
    for (auto& v : out.data) v = std::clamp(v, lo, hi);
    return record(std::move(out), {a}, [this, a, lo, hi](std::size_t self) {
      if (!wants(a)) return;
      const auto& g = nodes_[self].grad;
      const auto& x = value(a);
      auto& ga = acc(a);
      for (std::size_t i = 0; i < g.size(); ++i) {
        if (x.data[i] > lo && x.data[i] < hi) ga.data[i] += g.data[i];
      }
    });
  }

  // Elementwise min; ties send the gradient to `a`.
  Var minimum(Var a, Var b) {
    check_same(a, b, "minimum");
    const auto& av = value(a);
    const auto& bv = value(b);
    Matrix<T> out(av.rows, av.cols);
    for (std::size_t i = 0; i < out.size(); ++i) out.data[i] = std::min(av.data[i], bv.data[i]);
    return record(std::move(out), {a, b}, [this, a, b](std::size_t self) {
      const auto& g = nodes_[self].grad;
      const auto& av = value(a);
      const auto& bv = value(b);
      for (std::size_t i = 0; i < g.size(); ++i) {
        const bool take_a = av.data[i] <= bv.data[i];
        if (take_a && wants(a)) acc(a).data[i] += g.data[i];
        if (!take_a && wants(b)) acc(b).data[i] += g.data[i];
      }
    });
  }

  Var slice_cols(Var a, std::size_t begin, std::size_t end) {
    const auto& av = value(a);
    if (begin > end || end > av.cols) throw ShapeError("slice_cols out of range");
    Matrix<T> out(av.rows, end - begin);
    for (std::size_t r = 0; r < av.rows; ++r) {
      std::copy(av.row(r) + begin, av.row(r) + end, out.row(r));
    }
    return record(std::move(out), {a}, [this, a, begin](std::size_t self) {
      if (!wants(a)) return;
      const auto& g = nodes_[self].grad;
      auto& ga = acc(a);
      for (std::size_t r = 0; r < g.rows; ++r) {
        const T* gr = g.row(r);
        T* dst = ga.row(r) + begin;
        for (std::size_t c = 0; c < g.cols; ++c) dst[c] += gr[c];
      }
    });
  }

  // Fused GRU cell. gx, gh: B x 3H pre-activations laid out [reset, update,
  // candidate]; h: B x H.  r = s(gx_r + gh_r), z = s(gx_z + gh_z),
  // n = tanh(gx_n + r * gh_n), h' = h + z * (n - h).
  Var gru_cell(Var gx, Var gh, Var h) {
    const auto& hv = value(h);
    const std::size_t H = hv.cols;
    if (!value(gx).same_shape(value(gh)) || value(gx).rows != hv.rows || value(gx).cols != 3 * H) {
      throw ShapeError("gru_cell shape mismatch");
    }
    Matrix<T> out(hv.rows, H);
    for (std::size_t b = 0; b < hv.rows; ++b) {
      const T* x = value(gx).row(b);
      const T* y = value(gh).row(b);
      const T* hp = hv.row(b);
      T* o = out.row(b);
      for (std::size_t j = 0; j < H; ++j) {
        const T r = stable_sigmoid(x[j] + y[j]);
        const T z = stable_sigmoid(x[H + j] + y[H + j]);
        const T n = std::tanh(x[2 * H + j] + r * y[2 * H + j]);
        o[j] = hp[j] + z * (n - hp[j]);
      }
    }
    return record(std::move(out), {gx, gh, h}, [this, gx, gh, h](std::size_t self) {
      const auto& g = nodes_[self].grad;
      const auto& xv = value(gx);
      const auto& yv = value(gh);
      const auto& hv = value(h);
      const std::size_t H = hv.cols;
      T* dgx = wants(gx) ? acc(gx).data.data() : nullptr;
      T* dgh = wants(gh) ? acc(gh).data.data() : nullptr;
      T* dh = wants(h) ? acc(h).data.data() : nullptr;
      for (std::size_t b = 0; b < hv.rows; ++b) {
        const T* x = xv.row(b);
        const T* y = yv.row(b);
        const T* hp = hv.row(b);
        const T* gb = g.row(b);
        for (std::size_t j = 0; j < H; ++j) {
          const T r = stable_sigmoid(x[j] + y[j]);
          const T z = stable_sigmoid(x[H + j] + y[H + j]);
          const T n = std::tanh(x[2 * H + j] + r * y[2 * H + j]);
          const T dz = gb[j] * (n - hp[j]) * z * (T(1) - z);
          const T dn = gb[j] * z * (T(1) - n * n);
          const T dr = dn * y[2 * H + j] * r * (T(1) - r);
          const std::size_t row3 = b * 3 * H;
          if (dgx) {
            dgx[row3 + j] += dr;
            dgx[row3 + H + j] += dz;
            dgx[row3 + 2 * H + j] += dn;
          }
          if (dgh) {
            dgh[row3 + j] += dr;
            dgh[row3 + H + j] += dz;
            dgh[row3 + 2 * H + j] += dn * r;
          }
          if (dh) dh[b * H + j] += gb[j] * (T(1) - z);
        }
      }
    });
  }

  Var slice_rows(Var a, std::size_t begin, std::size_t end) {
    const auto& av = value(a);
    if (begin > end || end > av.rows) throw ShapeError("slice_rows out of range");
    Matrix<T> out(end - begin, av.cols);
    std::copy(av.row(begin), av.row(begin) + out.size(), out.data.begin());
    return record(std::move(out), {a}, [this, a, begin](std::size_t self) {
      if (!wants(a)) return;
      const auto& g = nodes_[self].grad;
      T* dst = acc(a).row(begin);
      for (std::size_t i = 0; i < g.size(); ++i) dst[i] += g.data[i];
    });
  }

  Var concat_rows(const std::vector<Var>& parts) {
    if (parts.empty()) throw ShapeError("concat_rows needs at least one part");
    const std::size_t cols = value(parts[0]).cols;
    std::size_t rows = 0;
    for (Var p : parts) {
      if (value(p).cols != cols) throw ShapeError("concat_rows column mismatch");
      rows += value(p).rows;
    }
    Matrix<T> out(rows, cols);
    std::size_t at = 0;
    for (Var p : parts) {
      const auto& pv = value(p);
      std::copy(pv.data.begin(), pv.data.end(), out.data.begin() + static_cast<std::ptrdiff_t>(at * cols));
      at += pv.rows;
    }
    return record(std::move(out), parts, [this, parts](std::size_t self) {
      const auto& g = nodes_[self].grad;
      std::size_t at = 0;
      for (Var p : parts) {
        const std::size_t n = value(p).size();
        if (wants(p)) {
          auto& gp = acc(p);
          for (std::size_t i = 0; i < n; ++i) gp.data[i] += g.data[at + i];
        }
        at += n;
      }
    });
  }

  // Row-wise log-softmax.
  Var log_softmax(Var a) {
    Matrix<T> out = value(a);
    for (std::size_t r = 0; r < out.rows; ++r) {
      T* o = out.row(r);
      const T mx = *std::max_element(o, o + out.cols);
      T s = T(0);
      for (std::size_t c = 0; c < out.cols; ++c) s += std::exp(o[c] - mx);
      const T lse = mx + std::log(s);
      for (std::size_t c = 0; c < out.cols; ++c) o[c] -= lse;
    }
    return record(std::move(out), {a}, [this, a](std::size_t self) {
      if (!wants(a)) return;
      const auto& n = nodes_[self];
      auto& ga = acc(a);
      for (std::size_t r = 0; r < n.value.rows; ++r) {
        const T* g = n.grad.row(r);
        const T* y = n.value.row(r);
        T gsum = T(0);
        for (std::size_t c = 0; c < n.value.cols; ++c) gsum += g[c];
        T* d = ga.row(r);
        for (std::size_t c = 0; c < n.value.cols; ++c) d[c] += g[c] - std::exp(y[c]) * gsum;
      }
    });
  }

  // (r x 1) column of a[i, index[i]].
  Var pick(Var a, const std::vector<int>& index) {
    const auto& av = value(a);
    if (index.size() != av.rows) throw ShapeError("pick needs one index per row");
    Matrix<T> out(av.rows, 1);
    for (std::size_t r = 0; r < av.rows; ++r) {
      if (index[r] < 0 || static_cast<std::size_t>(index[r]) >= av.cols) throw ShapeError("pick index out of range");
      out.data[r] = av(r, static_cast<std::size_t>(index[r]));
    }
    return record(std::move(out), {a}, [this, a, index](std::size_t self) {
      if (!wants(a)) return;
      const auto& g = nodes_[self].grad;
      auto& ga = acc(a);
      for (std::size_t r = 0; r < g.rows; ++r) ga(r, static_cast<std::size_t>(index[r])) += g.data[r];
    });
  }

  Var row_sum(Var a) {
    const auto& av = value(a);
    Matrix<T> out(av.rows, 1);
    for (std::size_t r = 0; r < av.rows; ++r) {
      T s = T(0);
      for (std::size_t c = 0; c < av.cols; ++c) s += av(r, c);
      out.data[r] = s;
    }
    return record(std::move(out), {a}, [this, a](std::size_t self) {
      if (!wants(a)) return;
      const auto& g = nodes_[self].grad;
      auto& ga = acc(a);
      for (std::size_t r = 0; r < ga.rows; ++r) {
        for (std::size_t c = 0; c < ga.cols; ++c) ga(r, c) += g.data[r];
      }
    });
  }

  Var sum(Var a) {
    const auto& av = value(a);
    T s = T(0);
    for (T v : av.data) s += v;
    return record(Matrix<T>(1, 1, s), {a}, [this, a](std::size_t self) {
      if (!wants(a)) return;
      const T g = nodes_[self].grad.data[0];
      for (auto& v : acc(a).data) v += g;
    });
  }

  Var mean(Var a) {
    const std::size_t n = value(a).size();
    if (n == 0) throw ShapeError("mean of an empty matrix");
    return scale(sum(a), T(1) / static_cast<T>(n));
  }

  static T stable_sigmoid(T v) {
    if (v >= T(0)) return T(1) / (T(1) + std::exp(-v));
    const T e = std::exp(v);
    return e / (T(1) + e);
  }

 private:
  struct Node {
    Matrix<T> value;
    Matrix<T> grad;
    bool requires_grad = false;
    std::function<void()> backward;
  };

  Var push(Matrix<T> value, bool requires_grad, std::function<void()> fn) {
    nodes_.push_back(Node{std::move(value), Matrix<T>(), requires_grad, std::move(fn)});
    return Var{nodes_.size() - 1};
  }

  template <class Fn>
  Var record(Matrix<T> value, const std::vector<Var>& inputs, Fn&& fn) {
    bool rg = false;
    for (Var v : inputs) rg = rg || nodes_[v.id].requires_grad;
    const std::size_t self = nodes_.size();
    if (!rg) return push(std::move(value), false, nullptr);
    return push(std::move(value), true, [fn = std::forward<Fn>(fn), self] { fn(self); });
  }

  bool wants(Var v) const { return nodes_[v.id].requires_grad; }

  Matrix<T>& acc(Var v) {
    Node& n = nodes_[v.id];
    if (n.grad.empty()) n.grad = Matrix<T>(n.value.rows, n.value.cols);
    return n.grad;
  }

  static void axpy(Matrix<T>& dst, const Matrix<T>& g, T s) {
    for (std::size_t i = 0; i < g.size(); ++i) dst.data[i] += s * g.data[i];
  }

  void check_same(Var a, Var b, const char* op) const {
    if (!value(a).same_shape(value(b))) throw ShapeError(std::string(op) + ": shape mismatch");
  }

  std::vector<Node> nodes_;
};

}  // namespace mimic_sig::nnet

#endif  // MIMIC_SIG_NNET_TAPE_HPP_
