#pragma once

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <functional>
#include <limits>
#include <memory>
#include <utility>
#include <vector>

#include "mixsep/errors.hpp"
#include "mixsep/tensor.hpp"

namespace mixsep::diffmath {

// Reverse-mode tape. Operations are recorded in creation order, which is a
// topological order by construction: a node can only reference slots that
// already exist. Single-threaded per tape; backward() may run once.
//
// Reductions and dot products accumulate in double regardless of T, then
// round to T on store. With T = double the tape doubles as the 64-bit
// reference path for the finite-difference oracle.
template <typename T>
class Tape {
 public:
  struct Var {
    int id = -1;
    bool valid() const { return id >= 0; }
  };

  Tape() = default;
  Tape(const Tape&) = delete;
  Tape& operator=(const Tape&) = delete;

  // Leaf bound to an external tensor: backward() accumulates into t.grad()
  // when t.requires_grad() is set.
  Var param(BasicTensor<T>& t) {
    Var v = push_slot(t, t.requires_grad());
    slots_[v.id].bound = &t;
    return v;
  }

  // Constant leaf (no gradient).
  Var input(const BasicTensor<T>& t) { return push_slot(t, false); }
  Var constant(BasicTensor<T> t) { return push_slot(std::move(t), false); }
  Var scalar(T v) { return constant(BasicTensor<T>::scalar(v)); }

  const BasicTensor<T>& val(Var v) const { return slot(v).value; }
  bool needs_grad(Var v) const { return slot(v).needs_grad; }
  std::size_t num_ops() const { return nodes_.size(); }

  // Gradient of the last backward() w.r.t. an interior slot (for tests).
  const std::vector<T>& grad(Var v) const {
    const auto& s = slot(v);
    if (s.grad.size() != s.value.numel()) throw ShapeError("grad not populated for slot");
    return s.grad;
  }

  // ---- elementwise --------------------------------------------------------

  Var add(Var a, Var b) {
    return binary(a, b, [](T x, T y) { return x + y; },
                  [](std::vector<T>& ga, const T* /*a*/, const T* /*b*/, const T* g, std::size_t n, bool ascal) {
                    if (ascal) {
                      double acc = 0;
                      for (std::size_t i = 0; i < n; ++i) acc += static_cast<double>(g[i]);
                      ga[0] += static_cast<T>(acc);
                    } else {
                      for (std::size_t i = 0; i < n; ++i) ga[i] += g[i];
                    }
                  },
                  /*second_negated=*/false);
  }

  Var sub(Var a, Var b) {
    return binary(a, b, [](T x, T y) { return x - y; },
                  [](std::vector<T>& ga, const T*, const T*, const T* g, std::size_t n, bool ascal) {
                    if (ascal) {
                      double acc = 0;
                      for (std::size_t i = 0; i < n; ++i) acc += static_cast<double>(g[i]);
                      ga[0] += static_cast<T>(acc);
                    } else {
                      for (std::size_t i = 0; i < n; ++i) ga[i] += g[i];
                    }
                  },
                  /*second_negated=*/true);
  }

  Var mul(Var a, Var b) {
    check_broadcast(a, b, "mul");
    const auto& av = slot(a).value;
    const auto& bv = slot(b).value;
    const bool a_scal = av.numel() == 1 && bv.numel() != 1;
    const bool b_scal = bv.numel() == 1 && av.numel() != 1;
    const std::size_t n = std::max(av.numel(), bv.numel());
    BasicTensor<T> out(a_scal ? bv.shape() : av.shape());
    for (std::size_t i = 0; i < n; ++i) out[i] = av[a_scal ? 0 : i] * bv[b_scal ? 0 : i];
    Var o = push_slot(std::move(out), slot(a).needs_grad || slot(b).needs_grad);
    if (slot(o).needs_grad) {
      record([this, a, b, o, n, a_scal, b_scal] {
        const auto& g = slots_[o.id].grad;
        const auto& av2 = slots_[a.id].value;
        const auto& bv2 = slots_[b.id].value;
        if (slots_[a.id].needs_grad) {
          auto& ga = slots_[a.id].grad;
          if (a_scal) {
            double acc = 0;
            for (std::size_t i = 0; i < n; ++i) acc += static_cast<double>(g[i]) * bv2[b_scal ? 0 : i];
            ga[0] += static_cast<T>(acc);
          } else {
            for (std::size_t i = 0; i < n; ++i) ga[i] += g[i] * bv2[b_scal ? 0 : i];
          }
        }
        if (slots_[b.id].needs_grad) {
          auto& gb = slots_[b.id].grad;
          if (b_scal) {
            double acc = 0;
            for (std::size_t i = 0; i < n; ++i) acc += static_cast<double>(g[i]) * av2[a_scal ? 0 : i];
            gb[0] += static_cast<T>(acc);
          } else {
            for (std::size_t i = 0; i < n; ++i) gb[i] += g[i] * av2[a_scal ? 0 : i];
          }
        }
      });
    }
    return o;
  }

  Var scalar_mul(Var a, T c) {
    return unary(a, [c](T x) { return c * x; }, [c](T /*x*/, T /*y*/) { return c; });
  }

  Var exp(Var a) {
    return unary(a, [](T x) { return std::exp(x); }, [](T /*x*/, T y) { return y; });
  }

  Var log(Var a) {
    return unary(a, [](T x) { return std::log(x); }, [](T x, T /*y*/) { return T(1) / x; });
  }

  Var relu(Var a) {
    return unary(a, [](T x) { return x > T(0) ? x : T(0); },
                 [](T x, T /*y*/) { return x > T(0) ? T(1) : T(0); });
  }

  Var clamp_min(Var a, T lo) {
    return unary(a, [lo](T x) { return x > lo ? x : lo; },
                 [lo](T x, T /*y*/) { return x > lo ? T(1) : T(0); });
  }

  Var square(Var a) {
    return unary(a, [](T x) { return x * x; }, [](T x, T /*y*/) { return T(2) * x; });
  }

  Var abs(Var a) {
    return unary(a, [](T x) { return std::fabs(x); },
                 [](T x, T /*y*/) { return x > T(0) ? T(1) : (x < T(0) ? T(-1) : T(0)); });
  }

  // ---- data movement ------------------------------------------------------

  Var reshape(Var a, Shape shape) {
    const auto& av = slot(a).value;
    if (shape_numel(shape) != av.numel()) {
      throw ShapeError("reshape " + shape_str(av.shape()) + " -> " + shape_str(shape) + " changes element count");
    }
    BasicTensor<T> out(std::move(shape), av.data());
    Var o = push_slot(std::move(out), slot(a).needs_grad);
    if (slot(o).needs_grad) {
      record([this, a, o] {
        const auto& g = slots_[o.id].grad;
        auto& ga = slots_[a.id].grad;
        for (std::size_t i = 0; i < g.size(); ++i) ga[i] += g[i];
      });
    }
    return o;
  }

  // out[i] = a[map[i]]. Backward scatter-adds. Covers permutes, slices,
  // broadcasts and gathers; the map is validated once at record time.
  Var index_map(Var a, std::vector<std::size_t> map, Shape out_shape) {
    const auto& av = slot(a).value;
    if (map.size() != shape_numel(out_shape)) throw ShapeError("index_map size does not match output shape");
    for (std::size_t m : map) {
      if (m >= av.numel()) throw ShapeError("index_map entry out of range");
    }
    auto shared = std::make_shared<const std::vector<std::size_t>>(std::move(map));
    BasicTensor<T> out(std::move(out_shape));
    for (std::size_t i = 0; i < out.numel(); ++i) out[i] = av[(*shared)[i]];
    Var o = push_slot(std::move(out), slot(a).needs_grad);
    if (slot(o).needs_grad) {
      record([this, a, o, shared] {
        const auto& g = slots_[o.id].grad;
        auto& ga = slots_[a.id].grad;
        for (std::size_t i = 0; i < g.size(); ++i) ga[(*shared)[i]] += g[i];
      });
    }
    return o;
  }

  // Stack equal-shaped parts along a new leading axis.
  Var stack0(const std::vector<Var>& parts) {
    if (parts.empty()) throw ShapeError("stack0 of zero tensors");
    const Shape& base = slot(parts[0]).value.shape();
    const std::size_t block = slot(parts[0]).value.numel();
    bool needs = false;
    for (Var p : parts) {
      if (slot(p).value.shape() != base) {
        throw ShapeError("stack0 shape mismatch: " + shape_str(base) + " vs " + shape_str(slot(p).value.shape()));
      }
      needs = needs || slot(p).needs_grad;
    }
    Shape out_shape;
    out_shape.push_back(parts.size());
    out_shape.insert(out_shape.end(), base.begin(), base.end());
    BasicTensor<T> out(std::move(out_shape));
    for (std::size_t p = 0; p < parts.size(); ++p) {
      const auto& pv = slot(parts[p]).value;
      std::copy(pv.data().begin(), pv.data().end(), out.data().begin() + p * block);
    }
    Var o = push_slot(std::move(out), needs);
    if (needs) {
      auto ids = std::make_shared<const std::vector<Var>>(parts);
      record([this, ids, o, block] {
        const auto& g = slots_[o.id].grad;
        for (std::size_t p = 0; p < ids->size(); ++p) {
          auto& s = slots_[(*ids)[p].id];
          if (!s.needs_grad) continue;
          for (std::size_t i = 0; i < block; ++i) s.grad[i] += g[p * block + i];
        }
      });
    }
    return o;
  }

  // ---- reductions ---------------------------------------------------------

  Var reduce_sum(Var a, const std::vector<std::size_t>& axes, bool keep) {
    return reduce(a, axes, keep, ReduceKind::Sum);
  }
  Var reduce_mean(Var a, const std::vector<std::size_t>& axes, bool keep) {
    return reduce(a, axes, keep, ReduceKind::Mean);
  }
  Var reduce_max(Var a, const std::vector<std::size_t>& axes, bool keep) {
    return reduce(a, axes, keep, ReduceKind::Max);
  }

  Var mean_all(Var a) { return reduce_mean(a, all_axes(a), false); }
  Var sum_all(Var a) { return reduce_sum(a, all_axes(a), false); }

  // ---- linear algebra -----------------------------------------------------

  Var matmul(Var a, Var b) {
    const auto& av = slot(a).value;
    const auto& bv = slot(b).value;
    if (av.rank() != 2 || bv.rank() != 2 || av.extent(1) != bv.extent(0)) {
      throw ShapeError("matmul shapes incompatible: " + shape_str(av.shape()) + " x " + shape_str(bv.shape()));
    }
    const std::size_t m = av.extent(0), k = av.extent(1), n = bv.extent(1);
    BasicTensor<T> out(Shape{m, n});
    std::vector<double> acc(n);
    for (std::size_t i = 0; i < m; ++i) {
      std::fill(acc.begin(), acc.end(), 0.0);
      for (std::size_t p = 0; p < k; ++p) {
        const double x = static_cast<double>(av[i * k + p]);
        const T* brow = bv.data().data() + p * n;
        for (std::size_t j = 0; j < n; ++j) acc[j] += x * static_cast<double>(brow[j]);
      }
      for (std::size_t j = 0; j < n; ++j) out[i * n + j] = static_cast<T>(acc[j]);
    }
    Var o = push_slot(std::move(out), slot(a).needs_grad || slot(b).needs_grad);
    if (slot(o).needs_grad) {
      record([this, a, b, o, m, k, n] {
        const auto& g = slots_[o.id].grad;
        const auto& av2 = slots_[a.id].value;
        const auto& bv2 = slots_[b.id].value;
        if (slots_[a.id].needs_grad) {
          auto& ga = slots_[a.id].grad;
          for (std::size_t i = 0; i < m; ++i) {
            for (std::size_t p = 0; p < k; ++p) {
              double s = 0;
              const T* grow = g.data() + i * n;
              const T* brow = bv2.data().data() + p * n;
              for (std::size_t j = 0; j < n; ++j) s += static_cast<double>(grow[j]) * brow[j];
              ga[i * k + p] += static_cast<T>(s);
            }
          }
        }
        if (slots_[b.id].needs_grad) {
          auto& gb = slots_[b.id].grad;
          for (std::size_t p = 0; p < k; ++p) {
            for (std::size_t j = 0; j < n; ++j) {
              double s = 0;
              for (std::size_t i = 0; i < m; ++i) s += static_cast<double>(av2[i * k + p]) * g[i * n + j];
              gb[p * n + j] += static_cast<T>(s);
            }
          }
        }
      });
    }
    return o;
  }

  // Per-row log-softmax via max-shifted log-sum-exp.
  Var log_softmax_rows(Var a) {
    const auto& av = slot(a).value;
    if (av.rank() != 2) throw ShapeError("log_softmax expects rank-2, got " + shape_str(av.shape()));
    const std::size_t r = av.extent(0), c = av.extent(1);
    BasicTensor<T> out(av.shape());
    for (std::size_t i = 0; i < r; ++i) {
      const T* row = av.data().data() + i * c;
      T m = row[0];
      for (std::size_t j = 1; j < c; ++j) m = std::max(m, row[j]);
      double lse = 0;
      for (std::size_t j = 0; j < c; ++j) lse += std::exp(static_cast<double>(row[j]) - static_cast<double>(m));
      const double shift = static_cast<double>(m) + std::log(lse);
      for (std::size_t j = 0; j < c; ++j) out[i * c + j] = static_cast<T>(static_cast<double>(row[j]) - shift);
    }
    Var o = push_slot(std::move(out), slot(a).needs_grad);
    if (slot(o).needs_grad) {
      record([this, a, o, r, c] {
        const auto& g = slots_[o.id].grad;
        const auto& ov = slots_[o.id].value;
        auto& ga = slots_[a.id].grad;
        for (std::size_t i = 0; i < r; ++i) {
          double gs = 0;
          for (std::size_t j = 0; j < c; ++j) gs += static_cast<double>(g[i * c + j]);
          for (std::size_t j = 0; j < c; ++j) {
            ga[i * c + j] += static_cast<T>(static_cast<double>(g[i * c + j]) -
                                            std::exp(static_cast<double>(ov[i * c + j])) * gs);
          }
        }
      });
    }
    return o;
  }

  // Normalize over `axis` to zero mean / unit variance per remaining
  // position, then scale and shift per channel. gain/bias are rank-1 of the
  // channel extent. Zero-variance channels land on the bias (eps path).
  Var channelwise_layernorm(Var x, std::size_t axis, Var gain, Var bias, T eps) {
    const auto& xv = slot(x).value;
    if (axis >= xv.rank()) throw ShapeError("layernorm axis out of range for " + shape_str(xv.shape()));
    const std::size_t C = xv.extent(axis);
    if (C < 1) throw ShapeError("layernorm channel extent < 1");
    const auto& gv = slot(gain).value;
    const auto& bv = slot(bias).value;
    if (gv.shape() != Shape{C} || bv.shape() != Shape{C}) {
      throw ShapeError("layernorm gain/bias must be rank-1 [" + std::to_string(C) + "], got " +
                       shape_str(gv.shape()) + " and " + shape_str(bv.shape()));
    }
    const auto st = row_major_strides(xv.shape());
    const std::size_t cstride = st[axis];
    std::size_t pre = 1, suf = 1;
    for (std::size_t i = 0; i < axis; ++i) pre *= xv.extent(i);
    for (std::size_t i = axis + 1; i < xv.rank(); ++i) suf *= xv.extent(i);

    BasicTensor<T> out(xv.shape());
    for (std::size_t p = 0; p < pre; ++p) {
      for (std::size_t s = 0; s < suf; ++s) {
        const std::size_t base = p * C * suf + s;
        double mu = 0;
        for (std::size_t c = 0; c < C; ++c) mu += static_cast<double>(xv[base + c * cstride]);
        mu /= C;
        double var = 0;
        for (std::size_t c = 0; c < C; ++c) {
          const double d = static_cast<double>(xv[base + c * cstride]) - mu;
          var += d * d;
        }
        var /= C;
        const double inv = 1.0 / std::sqrt(var + static_cast<double>(eps));
        for (std::size_t c = 0; c < C; ++c) {
          const double xh = (static_cast<double>(xv[base + c * cstride]) - mu) * inv;
          out[base + c * cstride] = static_cast<T>(xh * static_cast<double>(gv[c]) + static_cast<double>(bv[c]));
        }
      }
    }
    const bool needs = slot(x).needs_grad || slot(gain).needs_grad || slot(bias).needs_grad;
    Var o = push_slot(std::move(out), needs);
    if (needs) {
      record([this, x, gain, bias, o, axis, C, cstride, pre, suf, eps] {
        const auto& g = slots_[o.id].grad;
        const auto& xv2 = slots_[x.id].value;
        const auto& gv2 = slots_[gain.id].value;
        std::vector<double> xh(C), dxh(C);
        for (std::size_t p = 0; p < pre; ++p) {
          for (std::size_t s = 0; s < suf; ++s) {
            const std::size_t base = p * C * suf + s;
            double mu = 0;
            for (std::size_t c = 0; c < C; ++c) mu += static_cast<double>(xv2[base + c * cstride]);
            mu /= C;
            double var = 0;
            for (std::size_t c = 0; c < C; ++c) {
              const double d = static_cast<double>(xv2[base + c * cstride]) - mu;
              var += d * d;
            }
            var /= C;
            const double inv = 1.0 / std::sqrt(var + static_cast<double>(eps));
            double m1 = 0, m2 = 0;
            for (std::size_t c = 0; c < C; ++c) {
              xh[c] = (static_cast<double>(xv2[base + c * cstride]) - mu) * inv;
              dxh[c] = static_cast<double>(g[base + c * cstride]) * static_cast<double>(gv2[c]);
              m1 += dxh[c];
              m2 += dxh[c] * xh[c];
            }
            m1 /= C;
            m2 /= C;
            if (slots_[x.id].needs_grad) {
              auto& gx = slots_[x.id].grad;
              for (std::size_t c = 0; c < C; ++c) {
                gx[base + c * cstride] += static_cast<T>(inv * (dxh[c] - m1 - xh[c] * m2));
              }
            }
            if (slots_[gain.id].needs_grad) {
              auto& gg = slots_[gain.id].grad;
              for (std::size_t c = 0; c < C; ++c) gg[c] += static_cast<T>(static_cast<double>(g[base + c * cstride]) * xh[c]);
            }
            if (slots_[bias.id].needs_grad) {
              auto& gb = slots_[bias.id].grad;
              for (std::size_t c = 0; c < C; ++c) gb[c] += g[base + c * cstride];
            }
          }
        }
      });
    }
    return o;
  }

  // ---- backward -----------------------------------------------------------

  void backward(Var root) {
    const auto& rv = slot(root).value;
    if (rv.numel() != 1) throw ShapeError("backward root must be scalar, got " + shape_str(rv.shape()));
    if (backward_done_) throw ShapeError("backward already ran on this tape");
    backward_done_ = true;
    for (auto& s : slots_) {
      if (s.needs_grad) s.grad.assign(s.value.numel(), T(0));
    }
    if (slot(root).needs_grad) slots_[root.id].grad[0] = T(1);
    for (auto it = nodes_.rbegin(); it != nodes_.rend(); ++it) (*it)();
    for (auto& s : slots_) {
      if (s.bound != nullptr && s.needs_grad) s.bound->accumulate_grad(s.grad);
    }
  }

 private:
  enum class ReduceKind { Sum, Mean, Max };

  struct Slot {
    BasicTensor<T> value;
    std::vector<T> grad;
    bool needs_grad = false;
    BasicTensor<T>* bound = nullptr;
  };

  Slot& slot(Var v) {
    if (!v.valid() || static_cast<std::size_t>(v.id) >= slots_.size()) throw ShapeError("invalid tape variable");
    return slots_[v.id];
  }
  const Slot& slot(Var v) const {
    if (!v.valid() || static_cast<std::size_t>(v.id) >= slots_.size()) throw ShapeError("invalid tape variable");
    return slots_[v.id];
  }

  Var push_slot(BasicTensor<T> value, bool needs_grad) {
    slots_.push_back(Slot{std::move(value), {}, needs_grad, nullptr});
    return Var{static_cast<int>(slots_.size() - 1)};
  }

  void record(std::function<void()> node) { nodes_.push_back(std::move(node)); }

  std::vector<std::size_t> all_axes(Var a) const {
    std::vector<std::size_t> axes(slot(a).value.rank());
    for (std::size_t i = 0; i < axes.size(); ++i) axes[i] = i;
    if (axes.empty()) axes.push_back(0);  // rank-0: treated below as identity-ish reduce
    return axes;
  }

  void check_broadcast(Var a, Var b, const char* op) {
    const auto& av = slot(a).value;
    const auto& bv = slot(b).value;
    if (av.shape() != bv.shape() && av.numel() != 1 && bv.numel() != 1) {
      throw ShapeError(std::string(op) + ": shapes " + shape_str(av.shape()) + " and " + shape_str(bv.shape()) +
                       " are not broadcast-compatible");
    }
  }

  template <typename Fwd, typename BackA>
  Var binary(Var a, Var b, Fwd fwd, BackA back_into, bool second_negated) {
    check_broadcast(a, b, second_negated ? "sub" : "add");
    const auto& av = slot(a).value;
    const auto& bv = slot(b).value;
    const bool a_scal = av.numel() == 1 && bv.numel() != 1;
    const bool b_scal = bv.numel() == 1 && av.numel() != 1;
    const std::size_t n = std::max(av.numel(), bv.numel());
    BasicTensor<T> out(a_scal ? bv.shape() : av.shape());
    for (std::size_t i = 0; i < n; ++i) out[i] = fwd(av[a_scal ? 0 : i], bv[b_scal ? 0 : i]);
    Var o = push_slot(std::move(out), slot(a).needs_grad || slot(b).needs_grad);
    if (slot(o).needs_grad) {
      record([this, a, b, o, n, a_scal, b_scal, back_into, second_negated] {
        const auto& g = slots_[o.id].grad;
        if (slots_[a.id].needs_grad) {
          back_into(slots_[a.id].grad, nullptr, nullptr, g.data(), n, a_scal);
        }
        if (slots_[b.id].needs_grad) {
          if (second_negated) {
            std::vector<T> neg(n);
            for (std::size_t i = 0; i < n; ++i) neg[i] = -g[i];
            back_into(slots_[b.id].grad, nullptr, nullptr, neg.data(), n, b_scal);
          } else {
            back_into(slots_[b.id].grad, nullptr, nullptr, g.data(), n, b_scal);
          }
        }
      });
    }
    return o;
  }

  template <typename Fwd, typename Deriv>
  Var unary(Var a, Fwd fwd, Deriv dydx) {
    const auto& av = slot(a).value;
    BasicTensor<T> out(av.shape());
    for (std::size_t i = 0; i < av.numel(); ++i) out[i] = fwd(av[i]);
    Var o = push_slot(std::move(out), slot(a).needs_grad);
    if (slot(o).needs_grad) {
      record([this, a, o, dydx] {
        const auto& g = slots_[o.id].grad;
        const auto& xv = slots_[a.id].value;
        const auto& yv = slots_[o.id].value;
        auto& ga = slots_[a.id].grad;
        for (std::size_t i = 0; i < g.size(); ++i) ga[i] += g[i] * dydx(xv[i], yv[i]);
      });
    }
    return o;
  }

  Var reduce(Var a, std::vector<std::size_t> axes, bool keep, ReduceKind kind) {
    const auto& av = slot(a).value;
    const std::size_t rank = av.rank();
    if (axes.empty()) throw ShapeError("reduce with empty axis set");
    std::sort(axes.begin(), axes.end());
    axes.erase(std::unique(axes.begin(), axes.end()), axes.end());
    if (rank == 0) {
      if (axes != std::vector<std::size_t>{0}) throw ShapeError("reduce axis out of range for scalar");
    } else {
      for (std::size_t ax : axes) {
        if (ax >= rank) throw ShapeError("reduce axis " + std::to_string(ax) + " out of range for " + shape_str(av.shape()));
      }
    }
    std::vector<bool> reduced(std::max<std::size_t>(rank, 1), false);
    for (std::size_t ax : axes) reduced[ax] = true;
    Shape out_shape;
    std::size_t group = 1;
    for (std::size_t i = 0; i < rank; ++i) {
      if (reduced[i]) {
        group *= av.extent(i);
        if (keep) out_shape.push_back(1);
      } else {
        out_shape.push_back(av.extent(i));
      }
    }
    const std::size_t out_n = shape_numel(out_shape);

    // input flat index -> output group index
    auto mapping = std::make_shared<std::vector<std::size_t>>(av.numel());
    {
      const auto st = row_major_strides(av.shape());
      Shape kept_ext;
      for (std::size_t i = 0; i < rank; ++i) {
        if (!reduced[i]) kept_ext.push_back(av.extent(i));
      }
      const auto kst = row_major_strides(kept_ext);
      for (std::size_t flat = 0; flat < av.numel(); ++flat) {
        std::size_t rem = flat, out_idx = 0, kd = 0;
        for (std::size_t i = 0; i < rank; ++i) {
          const std::size_t coord = rem / st[i];
          rem %= st[i];
          if (!reduced[i]) out_idx += coord * kst[kd++];
        }
        (*mapping)[flat] = out_idx;
      }
    }

    BasicTensor<T> out(out_shape);
    std::shared_ptr<std::vector<std::size_t>> argmax;
    if (kind == ReduceKind::Max) {
      argmax = std::make_shared<std::vector<std::size_t>>(out_n, std::numeric_limits<std::size_t>::max());
      std::vector<bool> seen(out_n, false);
      for (std::size_t i = 0; i < av.numel(); ++i) {
        const std::size_t o = (*mapping)[i];
        if (!seen[o] || av[i] > out[o]) {  // strict: ties keep the lowest flat index
          seen[o] = true;
          out[o] = av[i];
          (*argmax)[o] = i;
        }
      }
    } else {
      std::vector<double> acc(out_n, 0.0);
      for (std::size_t i = 0; i < av.numel(); ++i) acc[(*mapping)[i]] += static_cast<double>(av[i]);
      const double scale = kind == ReduceKind::Mean ? 1.0 / static_cast<double>(group) : 1.0;
      for (std::size_t o = 0; o < out_n; ++o) out[o] = static_cast<T>(acc[o] * scale);
    }

    Var o = push_slot(std::move(out), slot(a).needs_grad);
    if (slot(o).needs_grad) {
      if (kind == ReduceKind::Max) {
        record([this, a, o, argmax] {
          const auto& g = slots_[o.id].grad;
          auto& ga = slots_[a.id].grad;
          for (std::size_t oi = 0; oi < g.size(); ++oi) ga[(*argmax)[oi]] += g[oi];
        });
      } else {
        const T scale = kind == ReduceKind::Mean ? static_cast<T>(1.0 / static_cast<double>(group)) : T(1);
        record([this, a, o, mapping, scale] {
          const auto& g = slots_[o.id].grad;
          auto& ga = slots_[a.id].grad;
          for (std::size_t i = 0; i < ga.size(); ++i) ga[i] += g[(*mapping)[i]] * scale;
        });
      }
    }
    return o;
  }

  std::vector<Slot> slots_;
  std::vector<std::function<void()>> nodes_;
  bool backward_done_ = false;
};

// Helper index maps shared by model/simvol code.

inline std::vector<std::size_t> transpose2d_map(std::size_t rows, std::size_t cols) {
  std::vector<std::size_t> map(rows * cols);
  for (std::size_t j = 0; j < cols; ++j) {
    for (std::size_t i = 0; i < rows; ++i) map[j * rows + i] = i * cols + j;
  }
  return map;
}

template <typename T>
typename Tape<T>::Var transpose2d(Tape<T>& tape, typename Tape<T>::Var a) {
  const auto& v = tape.val(a);
  if (v.rank() != 2) throw ShapeError("transpose2d expects rank-2, got " + shape_str(v.shape()));
  return tape.index_map(a, transpose2d_map(v.extent(0), v.extent(1)), Shape{v.extent(1), v.extent(0)});
}

// Select index `k` along axis 0.
template <typename T>
typename Tape<T>::Var select0(Tape<T>& tape, typename Tape<T>::Var a, std::size_t k) {
  const auto& v = tape.val(a);
  if (v.rank() < 1 || k >= v.extent(0)) throw ShapeError("select0 index out of range for " + shape_str(v.shape()));
  const std::size_t block = v.numel() / v.extent(0);
  std::vector<std::size_t> map(block);
  for (std::size_t i = 0; i < block; ++i) map[i] = k * block + i;
  Shape out(v.shape().begin() + 1, v.shape().end());
  return tape.index_map(a, std::move(map), std::move(out));
}

template <typename T>
typename Tape<T>::Var diagonal(Tape<T>& tape, typename Tape<T>::Var a) {
  const auto& v = tape.val(a);
  if (v.rank() != 2 || v.extent(0) != v.extent(1)) throw ShapeError("diagonal expects square matrix");
  const std::size_t n = v.extent(0);
  std::vector<std::size_t> map(n);
  for (std::size_t i = 0; i < n; ++i) map[i] = i * n + i;
  return tape.index_map(a, std::move(map), Shape{n});
}

}  // namespace mixsep::diffmath
