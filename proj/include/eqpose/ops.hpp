#pragma once

#include <cmath>
#include <memory>
#include <vector>

#include "eqpose/kernels.hpp"
#include "eqpose/tensor.hpp"

namespace eqpose {

// Differentiable ops. Each takes an optional tape; with tape == nullptr (or
// when no input is on the tape) only the forward value is produced. Backward
// closures accumulate (+=) into input gradients so fan-out works.

template <typename T, class F, class DF>
Tensor<T> unary_op(Tape<T>* tp, const Tensor<T>& x, const char* name, F f, DF df) {
  Tensor<T> out(x.shape);
  for (long long i = 0; i < x.size(); ++i) out[i] = f(x[i]);
  check_finite(tp, out, name);
  if (tp && x.node >= 0) {
    Tensor<T> xs = x, os = out;
    int xn = x.node;
    out.node = tp->add_node(out.size(), [xs, os, xn, df](Tape<T>& t, const std::vector<T>& g) {
      auto& gx = t.ensure(xn);
      for (long long i = 0; i < xs.size(); ++i) gx[(size_t)i] += g[(size_t)i] * df(xs[i], os[i]);
    });
  }
  return out;
}

template <typename T>
Tensor<T> elu(Tape<T>* tp, const Tensor<T>& x, double alpha = 1.0) {
  T a = (T)alpha;
  return unary_op(
      tp, x, "elu", [a](T v) { return v > T(0) ? v : a * (std::exp(v) - T(1)); },
      [a](T v, T y) { return v > T(0) ? T(1) : y + a; });
}

template <typename T>
Tensor<T> expt(Tape<T>* tp, const Tensor<T>& x) {
  return unary_op(
      tp, x, "exp", [](T v) { return std::exp(v); }, [](T, T y) { return y; });
}

template <typename T>
Tensor<T> sqrtt(Tape<T>* tp, const Tensor<T>& x) {
  return unary_op(
      tp, x, "sqrt", [](T v) { return std::sqrt(v); },
      [](T, T y) { return T(1) / (T(2) * y); });
}

template <typename T>
Tensor<T> scale(Tape<T>* tp, const Tensor<T>& x, double c) {
  T cc = (T)c;
  return unary_op(
      tp, x, "scale", [cc](T v) { return cc * v; }, [cc](T, T) { return cc; });
}

template <typename T>
Tensor<T> add_const(Tape<T>* tp, const Tensor<T>& x, double c) {
  T cc = (T)c;
  return unary_op(
      tp, x, "add_const", [cc](T v) { return v + cc; }, [cc](T, T) { return T(1); });
}

enum class BinOp { Add, Sub, Mul, Div };

template <typename T>
Tensor<T> binary_op(Tape<T>* tp, const Tensor<T>& a, const Tensor<T>& b, BinOp op) {
  contract(a.shape == b.shape, "elementwise op: shape mismatch " + shape_str(a.shape) + " vs " +
                                   shape_str(b.shape));
  Tensor<T> out(a.shape);
  for (long long i = 0; i < a.size(); ++i) {
    switch (op) {
      case BinOp::Add: out[i] = a[i] + b[i]; break;
      case BinOp::Sub: out[i] = a[i] - b[i]; break;
      case BinOp::Mul: out[i] = a[i] * b[i]; break;
      case BinOp::Div: out[i] = a[i] / b[i]; break;
    }
  }
  check_finite(tp, out, "elementwise");
  if (tp && (a.node >= 0 || b.node >= 0)) {
    Tensor<T> as = a, bs = b;
    int an = a.node, bn = b.node;
    out.node = tp->add_node(out.size(), [as, bs, an, bn, op](Tape<T>& t,
                                                             const std::vector<T>& g) {
      long long n = as.size();
      if (an >= 0) {
        auto& ga = t.ensure(an);
        for (long long i = 0; i < n; ++i) {
          switch (op) {
            case BinOp::Add:
            case BinOp::Sub: ga[(size_t)i] += g[(size_t)i]; break;
            case BinOp::Mul: ga[(size_t)i] += g[(size_t)i] * bs[i]; break;
            case BinOp::Div: ga[(size_t)i] += g[(size_t)i] / bs[i]; break;
          }
        }
      }
      if (bn >= 0) {
        auto& gb = t.ensure(bn);
        for (long long i = 0; i < n; ++i) {
          switch (op) {
            case BinOp::Add: gb[(size_t)i] += g[(size_t)i]; break;
            case BinOp::Sub: gb[(size_t)i] -= g[(size_t)i]; break;
            case BinOp::Mul: gb[(size_t)i] += g[(size_t)i] * as[i]; break;
            case BinOp::Div:
              gb[(size_t)i] -= g[(size_t)i] * as[i] / (bs[i] * bs[i]);
              break;
          }
        }
      }
    });
  }
  return out;
}

template <typename T>
Tensor<T> add(Tape<T>* tp, const Tensor<T>& a, const Tensor<T>& b) {
  return binary_op(tp, a, b, BinOp::Add);
}
template <typename T>
Tensor<T> sub(Tape<T>* tp, const Tensor<T>& a, const Tensor<T>& b) {
  return binary_op(tp, a, b, BinOp::Sub);
}
template <typename T>
Tensor<T> mul(Tape<T>* tp, const Tensor<T>& a, const Tensor<T>& b) {
  return binary_op(tp, a, b, BinOp::Mul);
}
template <typename T>
Tensor<T> divt(Tape<T>* tp, const Tensor<T>& a, const Tensor<T>& b) {
  return binary_op(tp, a, b, BinOp::Div);
}

template <typename T>
Tensor<T> reshape(Tape<T>* tp, const Tensor<T>& x, std::vector<int> shape) {
  Tensor<T> out = x.with_shape(std::move(shape));
  out.node = -1;
  if (tp && x.node >= 0) {
    int xn = x.node;
    long long n = x.size();
    out.node = tp->add_node(n, [xn, n](Tape<T>& t, const std::vector<T>& g) {
      auto& gx = t.ensure(xn);
      for (long long i = 0; i < n; ++i) gx[(size_t)i] += g[(size_t)i];
    });
  }
  return out;
}

// Sum of all elements -> shape [1]. Double accumulation in a fixed order.
template <typename T>
Tensor<T> sum_all(Tape<T>* tp, const Tensor<T>& x) {
  double acc = 0.0;
  for (long long i = 0; i < x.size(); ++i) acc += (double)x[i];
  Tensor<T> out({1}, {(T)acc});
  check_finite(tp, out, "sum_all");
  if (tp && x.node >= 0) {
    int xn = x.node;
    long long n = x.size();
    out.node = tp->add_node(1, [xn, n](Tape<T>& t, const std::vector<T>& g) {
      auto& gx = t.ensure(xn);
      for (long long i = 0; i < n; ++i) gx[(size_t)i] += g[0];
    });
  }
  return out;
}

// Mean over all trailing axes, one value per leading-axis slice: [K,...] -> [K].
template <typename T>
Tensor<T> channel_mean(Tape<T>* tp, const Tensor<T>& x) {
  contract(x.rank() >= 2, "channel_mean: need rank >= 2, got " + shape_str(x.shape));
  int k_n = x.dim(0);
  long long rest = x.size() / k_n;
  Tensor<T> out({k_n});
  for (int k = 0; k < k_n; ++k) {
    double acc = 0.0;
    const T* p = x.data() + (long long)k * rest;
    for (long long i = 0; i < rest; ++i) acc += (double)p[i];
    out[k] = (T)(acc / (double)rest);
  }
  check_finite(tp, out, "channel_mean");
  if (tp && x.node >= 0) {
    int xn = x.node;
    out.node = tp->add_node(k_n, [xn, k_n, rest](Tape<T>& t, const std::vector<T>& g) {
      auto& gx = t.ensure(xn);
      for (int k = 0; k < k_n; ++k) {
        T gk = g[(size_t)k] / (T)rest;
        T* p = gx.data() + (long long)k * rest;
        for (long long i = 0; i < rest; ++i) p[i] += gk;
      }
    });
  }
  return out;
}

// [K] broadcast to [K, trailing...] given the target shape.
template <typename T>
Tensor<T> broadcast_channel(Tape<T>* tp, const Tensor<T>& k, std::vector<int> shape) {
  contract(k.rank() == 1 && !shape.empty() && shape[0] == k.dim(0),
           "broadcast_channel: shape head must match " + shape_str(k.shape));
  Tensor<T> out(shape);
  int k_n = k.dim(0);
  long long rest = out.size() / k_n;
  for (int c = 0; c < k_n; ++c) {
    T* p = out.data() + (long long)c * rest;
    for (long long i = 0; i < rest; ++i) p[i] = k[c];
  }
  if (tp && k.node >= 0) {
    int kn = k.node;
    out.node = tp->add_node(out.size(), [kn, k_n, rest](Tape<T>& t, const std::vector<T>& g) {
      auto& gk = t.ensure(kn);
      for (int c = 0; c < k_n; ++c) {
        double acc = 0.0;
        const T* p = g.data() + (long long)c * rest;
        for (long long i = 0; i < rest; ++i) acc += (double)p[i];
        gk[(size_t)c] += (T)acc;
      }
    });
  }
  return out;
}

// Reorders (and possibly duplicates) the planes of a [C,H,W] tensor.
template <typename T>
Tensor<T> gather_planes(Tape<T>* tp, const Tensor<T>& x, const std::vector<int>& srcs) {
  contract(x.rank() == 3, "gather_planes: need [C,H,W], got " + shape_str(x.shape));
  int c_n = x.dim(0), h = x.dim(1), w = x.dim(2);
  long long plane = (long long)h * w;
  Tensor<T> out({(int)srcs.size(), h, w});
  for (size_t i = 0; i < srcs.size(); ++i) {
    contract(srcs[i] >= 0 && srcs[i] < c_n, "gather_planes: source index out of range");
    const T* s = x.data() + (long long)srcs[i] * plane;
    T* d = out.data() + (long long)i * plane;
    for (long long j = 0; j < plane; ++j) d[j] = s[j];
  }
  if (tp && x.node >= 0) {
    int xn = x.node;
    std::vector<int> sv = srcs;
    out.node = tp->add_node(out.size(), [xn, sv, plane](Tape<T>& t, const std::vector<T>& g) {
      auto& gx = t.ensure(xn);
      for (size_t i = 0; i < sv.size(); ++i) {
        T* d = gx.data() + (long long)sv[i] * plane;
        const T* s = g.data() + (long long)i * plane;
        for (long long j = 0; j < plane; ++j) d[j] += s[j];
      }
    });
  }
  return out;
}

template <typename T>
Tensor<T> conv2d(Tape<T>* tp, const Tensor<T>& x, const Tensor<T>& w, int pad, int stride) {
  contract(x.rank() == 3, "conv2d: input must be [C,H,W], got " + shape_str(x.shape));
  contract(w.rank() == 4, "conv2d: kernels must be [Co,Ci,kh,kw], got " + shape_str(w.shape));
  contract(w.dim(1) == x.dim(0), "conv2d: channel mismatch " + shape_str(x.shape) + " vs " +
                                     shape_str(w.shape));
  int kh = w.dim(2), kw = w.dim(3);
  contract(kh % 2 == 1 && kw % 2 == 1, "conv2d: kernel sides must be odd");
  contract(pad >= 0 && stride >= 1, "conv2d: need pad >= 0, stride >= 1");
  int h = x.dim(1), wd = x.dim(2), ci_n = x.dim(0), co_n = w.dim(0);
  int ny = h + 2 * pad - kh, nx = wd + 2 * pad - kw;
  contract(ny >= 0 && nx >= 0 && ny % stride == 0 && nx % stride == 0,
           "conv2d: non-integral output extent for input " + shape_str(x.shape) + ", kernel " +
               shape_str(w.shape));
  int ho = ny / stride + 1, wo = nx / stride + 1;
  Tensor<T> out({co_n, ho, wo});
  kernels::conv2d_fwd(x.data(), w.data(), out.data(), ci_n, h, wd, co_n, kh, kw, pad, stride,
                      ho, wo);
  check_finite(tp, out, "conv2d");
  if (tp && (x.node >= 0 || w.node >= 0)) {
    Tensor<T> xs = x, ws = w;
    int xn = x.node, wn = w.node;
    out.node = tp->add_node(
        out.size(), [xs, ws, xn, wn, ci_n, h, wd, co_n, kh, kw, pad, stride, ho,
                     wo](Tape<T>& t, const std::vector<T>& g) {
          if (xn >= 0)
            kernels::conv2d_bwd_input(g.data(), ws.data(), t.ensure(xn).data(), ci_n, h, wd,
                                      co_n, kh, kw, pad, stride, ho, wo);
          if (wn >= 0)
            kernels::conv2d_bwd_weight(g.data(), xs.data(), t.ensure(wn).data(), ci_n, h, wd,
                                       co_n, kh, kw, pad, stride, ho, wo);
        });
  }
  return out;
}

template <typename T>
Tensor<T> maxpool2d(Tape<T>* tp, const Tensor<T>& x, int k, int stride) {
  contract(x.rank() == 3, "maxpool2d: input must be [C,H,W], got " + shape_str(x.shape));
  contract(k >= 1 && stride >= 1, "maxpool2d: need k >= 1, stride >= 1");
  int c_n = x.dim(0), h = x.dim(1), wd = x.dim(2);
  contract(k <= h && k <= wd, "maxpool2d: window exceeds input " + shape_str(x.shape));
  contract((h - k) % stride == 0 && (wd - k) % stride == 0,
           "maxpool2d: non-integral output extent");
  int ho = (h - k) / stride + 1, wo = (wd - k) / stride + 1;
  Tensor<T> out({c_n, ho, wo});
  auto arg = std::make_shared<std::vector<int>>((size_t)out.size());
  kernels::maxpool_fwd(x.data(), out.data(), arg->data(), c_n, h, wd, k, stride, ho, wo);
  check_finite(tp, out, "maxpool2d");
  if (tp && x.node >= 0) {
    int xn = x.node;
    out.node = tp->add_node(out.size(),
                            [xn, arg, c_n, h, wd, ho, wo](Tape<T>& t, const std::vector<T>& g) {
                              kernels::maxpool_bwd(g.data(), arg->data(),
                                                   t.ensure(xn).data(), c_n, h, wd, ho, wo);
                            });
  }
  return out;
}

template <typename T>
Tensor<T> linear(Tape<T>* tp, const Tensor<T>& x, const Tensor<T>& w, const Tensor<T>& b) {
  contract(x.rank() == 1 && w.rank() == 2 && b.rank() == 1 && w.dim(1) == x.dim(0) &&
               w.dim(0) == b.dim(0),
           "linear: shape mismatch x" + shape_str(x.shape) + " w" + shape_str(w.shape) + " b" +
               shape_str(b.shape));
  int m = w.dim(0), n = w.dim(1);
  Tensor<T> out({m});
  kernels::linear_fwd(x.data(), w.data(), b.data(), out.data(), m, n);
  check_finite(tp, out, "linear");
  if (tp && (x.node >= 0 || w.node >= 0 || b.node >= 0)) {
    Tensor<T> xs = x, ws = w;
    int xn = x.node, wn = w.node, bn = b.node;
    out.node =
        tp->add_node(m, [xs, ws, xn, wn, bn, m, n](Tape<T>& t, const std::vector<T>& g) {
          if (xn >= 0) {
            auto& gx = t.ensure(xn);
            for (int j = 0; j < n; ++j) {
              T acc = T(0);
              for (int i = 0; i < m; ++i) acc += g[(size_t)i] * ws[(long long)i * n + j];
              gx[(size_t)j] += acc;
            }
          }
          if (wn >= 0) {
            auto& gw = t.ensure(wn);
            for (int i = 0; i < m; ++i)
              for (int j = 0; j < n; ++j) gw[(size_t)((long long)i * n + j)] += g[(size_t)i] * xs[j];
          }
          if (bn >= 0) {
            auto& gb = t.ensure(bn);
            for (int i = 0; i < m; ++i) gb[(size_t)i] += g[(size_t)i];
          }
        });
  }
  return out;
}

// ---------------------------------------------------------------------------
// Adam. Moment buffers are kept in double regardless of the tensor type so the
// update is deterministic and precision does not depend on T.

struct AdamConfig {
  double lr = 1e-4;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double eps = 1e-5;
};

struct AdamState {
  long long step = 0;
  std::vector<std::vector<double>> m, v;
};

template <typename T>
void adam_init(AdamState& st, const std::vector<Tensor<T>>& params) {
  st.step = 0;
  st.m.clear();
  st.v.clear();
  for (const auto& p : params) {
    st.m.emplace_back((size_t)p.size(), 0.0);
    st.v.emplace_back((size_t)p.size(), 0.0);
  }
}

template <typename T>
std::vector<Tensor<T>> adam_step(const std::vector<Tensor<T>>& params,
                                 const std::vector<const std::vector<T>*>& grads, AdamState& st,
                                 const AdamConfig& cfg) {
  contract(params.size() == grads.size() && params.size() == st.m.size(),
           "adam_step: parameter/gradient/state count mismatch");
  st.step += 1;
  double bc1 = 1.0 - std::pow(cfg.beta1, (double)st.step);
  double bc2 = 1.0 - std::pow(cfg.beta2, (double)st.step);
  std::vector<Tensor<T>> out;
  out.reserve(params.size());
  for (size_t p = 0; p < params.size(); ++p) {
    const auto& w = params[p];
    const auto& g = *grads[p];
    contract((long long)g.size() == w.size(), "adam_step: gradient size mismatch");
    Tensor<T> nw(w.shape);
    auto& m = st.m[p];
    auto& v = st.v[p];
    for (long long i = 0; i < w.size(); ++i) {
      double gi = (double)g[(size_t)i];
      m[(size_t)i] = cfg.beta1 * m[(size_t)i] + (1.0 - cfg.beta1) * gi;
      v[(size_t)i] = cfg.beta2 * v[(size_t)i] + (1.0 - cfg.beta2) * gi * gi;
      double mh = m[(size_t)i] / bc1, vh = v[(size_t)i] / bc2;
      nw[i] = (T)((double)w[i] - cfg.lr * mh / (std::sqrt(vh) + cfg.eps));
    }
    nw.node = -1;
    out.push_back(std::move(nw));
  }
  return out;
}

}  // namespace eqpose
