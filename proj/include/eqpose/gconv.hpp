#pragma once

#include <array>
#include <cmath>
#include <cstdio>
#include <functional>
#include <vector>

#include "eqpose/geom.hpp"
#include "eqpose/ops.hpp"
#include "eqpose/tensor.hpp"

namespace eqpose {

struct CyclicGroup {
  int n;
  explicit CyclicGroup(int n_) : n(n_) { contract(n >= 1, "cyclic group size must be >= 1"); }
  double step() const { return 2.0 * kPi / n; }
};

// ---------------------------------------------------------------------------
// Rotation resampling plans.
//
// A plan maps a square grid onto itself under rotation by steps*(2pi/denom)
// about the grid center (side-1)/2, sampling the source at R(angle) * target
// offset. The angle is decomposed as exact quarter turns times a residual in
// [0, 90deg): the quarter part is an index permutation (exact), the residual
// is bilinear. Composing a quarter-turn plan with a residual plan therefore
// reproduces the combined plan tap-for-tap, which keeps e.g. the 135deg plan
// bitwise equal to 90deg applied after 45deg.

struct ResamplePlan {
  int side = 0;
  std::vector<int> offs;      // CSR: taps of dst cell d are [offs[d], offs[d+1])
  std::vector<int> src;
  std::vector<double> wgt;
};

inline std::vector<double> circular_mask(int k) {
  std::vector<double> m((size_t)k * k, 0.0);
  double c = (k - 1) / 2.0, lim = k / 2.0;
  for (int i = 0; i < k; ++i)
    for (int j = 0; j < k; ++j) {
      double dy = i - c, dx = j - c;
      if (std::sqrt(dx * dx + dy * dy) <= lim) m[(size_t)(i * k + j)] = 1.0;
    }
  return m;
}

inline ResamplePlan build_rotation_plan(int side, int steps, int denom, bool masked,
                                        int shift_x = 0, int shift_y = 0) {
  contract(side >= 1 && denom >= 1, "rotation plan: bad geometry");
  steps %= denom;
  if (steps < 0) steps += denom;
  // exact quarter turns + residual in [0, 90deg)
  int quarter = 0, rsteps = steps;
  if ((4LL * steps) % denom == 0) {
    quarter = (int)((4LL * steps) / denom) % 4;
    rsteps = 0;
  } else if (denom % 4 == 0) {
    quarter = steps / (denom / 4);
    rsteps = steps % (denom / 4);
  }
  double rho = 2.0 * kPi * rsteps / denom;
  double cr = std::cos(rho), sr = std::sin(rho);
  double c = (side - 1) / 2.0;
  std::vector<double> mask = masked ? circular_mask(side) : std::vector<double>();

  ResamplePlan plan;
  plan.side = side;
  plan.offs.assign((size_t)side * side + 1, 0);
  for (int i = 0; i < side; ++i)
    for (int j = 0; j < side; ++j) {
      int dst = i * side + j;
      plan.offs[(size_t)dst] = (int)plan.src.size();
      if (masked && mask[(size_t)dst] == 0.0) continue;
      double x = j - c, y = i - c;
      // residual rotation (bilinear), then exact quarter turn of the position
      double xr = cr * x - sr * y, yr = sr * x + cr * y;
      double xq, yq;
      switch (quarter) {
        case 0: xq = xr; yq = yr; break;
        case 1: xq = -yr; yq = xr; break;
        case 2: xq = -xr; yq = -yr; break;
        default: xq = yr; yq = -xr; break;
      }
      double xs = xq + shift_x + c, ys = yq + shift_y + c;
      double x0 = std::floor(xs), y0 = std::floor(ys);
      double fx = xs - x0, fy = ys - y0;
      const double tap_w[4] = {(1 - fx) * (1 - fy), fx * (1 - fy), (1 - fx) * fy, fx * fy};
      const int tap_x[4] = {(int)x0, (int)x0 + 1, (int)x0, (int)x0 + 1};
      const int tap_y[4] = {(int)y0, (int)y0, (int)y0 + 1, (int)y0 + 1};
      for (int t = 0; t < 4; ++t) {
        if (tap_w[t] == 0.0) continue;
        if (tap_x[t] < 0 || tap_x[t] >= side || tap_y[t] < 0 || tap_y[t] >= side) continue;
        plan.src.push_back(tap_y[t] * side + tap_x[t]);
        plan.wgt.push_back(tap_w[t]);
      }
    }
  plan.offs[(size_t)side * side] = (int)plan.src.size();
  return plan;
}

// Applies a plan to the trailing [side,side] axes of x; differentiable.
template <typename T>
Tensor<T> apply_plan(Tape<T>* tp, const Tensor<T>& x, const ResamplePlan& plan) {
  contract(x.rank() >= 2 && x.dim(x.rank() - 1) == plan.side &&
               x.dim(x.rank() - 2) == plan.side,
           "apply_plan: trailing axes of " + shape_str(x.shape) + " must be square side " +
               std::to_string(plan.side));
  long long cells = (long long)plan.side * plan.side;
  long long slices = x.size() / cells;
  Tensor<T> out(x.shape);
  for (long long s = 0; s < slices; ++s) {
    const T* in = x.data() + s * cells;
    T* o = out.data() + s * cells;
    for (long long d = 0; d < cells; ++d) {
      T acc = T(0);
      for (int t = plan.offs[(size_t)d]; t < plan.offs[(size_t)d + 1]; ++t)
        acc += (T)plan.wgt[(size_t)t] * in[plan.src[(size_t)t]];
      o[d] = acc;
    }
  }
  if (tp && x.node >= 0) {
    int xn = x.node;
    ResamplePlan p = plan;
    out.node =
        tp->add_node(out.size(), [xn, p, cells, slices](Tape<T>& t, const std::vector<T>& g) {
          auto& gx = t.ensure(xn);
          for (long long s = 0; s < slices; ++s) {
            T* gi = gx.data() + s * cells;
            const T* go = g.data() + s * cells;
            for (long long d = 0; d < cells; ++d)
              for (int k = p.offs[(size_t)d]; k < p.offs[(size_t)d + 1]; ++k)
                gi[p.src[(size_t)k]] += (T)p.wgt[(size_t)k] * go[d];
          }
        });
  }
  return out;
}

// Pins weights outside the inscribed disk to zero (gradient included).
template <typename T>
Tensor<T> apply_circular_mask(Tape<T>* tp, const Tensor<T>& w) {
  int k = w.dim(w.rank() - 1);
  contract(w.dim(w.rank() - 2) == k, "circular mask: kernel must be square");
  std::vector<double> m = circular_mask(k);
  bool all = true;
  for (double v : m) all = all && v == 1.0;
  if (all) return w;  // 1x1 and 3x3 disks cover the whole square
  Tensor<T> mt({k, k});
  for (int i = 0; i < k * k; ++i) mt[i] = (T)m[(size_t)i];
  Tensor<T> full(w.shape);
  long long cells = (long long)k * k, slices = w.size() / cells;
  for (long long s = 0; s < slices; ++s)
    for (long long i = 0; i < cells; ++i) full[s * cells + i] = mt[i];
  return mul(tp, w, full);
}

// Public 2D kernel rotation: resample under rotation by r*(2pi/N), mask re-applied.
template <typename T>
Tensor<T> rotate_kernel(Tape<T>* tp, const Tensor<T>& w, int r, int n_group) {
  int k = w.dim(w.rank() - 1);
  contract(w.dim(w.rank() - 2) == k, "rotate_kernel: kernel must be square, got " +
                                         shape_str(w.shape));
  contract(k % 2 == 1, "rotate_kernel: kernel side must be odd, got " + std::to_string(k));
  contract(r >= 0 && r < n_group, "rotate_kernel: need 0 <= r < N");
  return apply_plan(tp, w, build_rotation_plan(k, r, n_group, true));
}

namespace detail {

// plane order (r-major over the fiber) -> (k-major), as gather indices
inline std::vector<int> interleave_kr(int k_n, int n) {
  std::vector<int> srcs((size_t)k_n * n);
  for (int k = 0; k < k_n; ++k)
    for (int r = 0; r < n; ++r) srcs[(size_t)(k * n + r)] = r * k_n + k;
  return srcs;
}

}  // namespace detail

// Concatenates [C_i,H,W] tensors along axis 0.
template <typename T>
Tensor<T> concat_planes(Tape<T>* tp, const std::vector<Tensor<T>>& xs) {
  contract(!xs.empty(), "concat_planes: empty input");
  int h = xs[0].dim(1), w = xs[0].dim(2), c_total = 0;
  for (const auto& x : xs) {
    contract(x.rank() == 3 && x.dim(1) == h && x.dim(2) == w,
             "concat_planes: mismatched plane shapes");
    c_total += x.dim(0);
  }
  Tensor<T> out({c_total, h, w});
  long long off = 0;
  for (const auto& x : xs) {
    for (long long i = 0; i < x.size(); ++i) out[off + i] = x[i];
    off += x.size();
  }
  bool any = false;
  for (const auto& x : xs)
    if (x.node >= 0) any = true;
  if (tp && any) {
    std::vector<int> nodes;
    std::vector<long long> sizes;
    for (const auto& x : xs) {
      nodes.push_back(x.node);
      sizes.push_back(x.size());
    }
    out.node = tp->add_node(out.size(), [nodes, sizes](Tape<T>& t, const std::vector<T>& g) {
      long long off2 = 0;
      for (size_t i = 0; i < nodes.size(); ++i) {
        if (nodes[i] >= 0) {
          auto& gx = t.ensure(nodes[i]);
          for (long long j = 0; j < sizes[i]; ++j) gx[(size_t)j] += g[(size_t)(off2 + j)];
        }
        off2 += sizes[i];
      }
    });
  }
  return out;
}

// Lifting layer: image [C,H,W] -> feature [K,N,H',W'] where orientation
// channel r sees the base kernels rotated by r*(2pi/N).
template <typename T>
Tensor<T> lift_conv(Tape<T>* tp, const Tensor<T>& image, const Tensor<T>& w, int n_group,
                    int pad) {
  contract(image.rank() == 3, "lift_conv: image must be [C,H,W]");
  contract(w.rank() == 4, "lift_conv: weights must be [K,C,kh,kw]");
  CyclicGroup grp(n_group);
  Tensor<T> wm = apply_circular_mask(tp, w);
  std::vector<Tensor<T>> outs;
  outs.reserve((size_t)grp.n);
  for (int r = 0; r < grp.n; ++r)
    outs.push_back(conv2d(tp, image, rotate_kernel(tp, wm, r, grp.n), pad, 1));
  int k_n = w.dim(0), ho = outs[0].dim(1), wo = outs[0].dim(2);
  Tensor<T> stack = concat_planes(tp, outs);
  Tensor<T> inter = gather_planes(tp, stack, detail::interleave_kr(k_n, grp.n));
  return reshape(tp, inter, {k_n, grp.n, ho, wo});
}

// Group layer: feature [K,N,H,W] with kernels [K',K,N,kh,kw]; output channel
// (k',r) correlates the fiber-shifted input with the r-rotated kernels.
template <typename T>
Tensor<T> group_conv(Tape<T>* tp, const Tensor<T>& v, const Tensor<T>& w, int pad) {
  contract(v.rank() == 4, "group_conv: feature must be [K,N,H,W], got " + shape_str(v.shape));
  contract(w.rank() == 5, "group_conv: weights must be [K',K,N,kh,kw], got " +
                              shape_str(w.shape));
  int k_in = v.dim(0), n = v.dim(1), h = v.dim(2), wd = v.dim(3);
  int k_out = w.dim(0), kk = w.dim(3);
  contract(w.dim(1) == k_in && w.dim(2) == n,
           "group_conv: group mismatch between feature " + shape_str(v.shape) +
               " and weights " + shape_str(w.shape));
  Tensor<T> planes = reshape(tp, v, {k_in * n, h, wd});
  Tensor<T> wm = apply_circular_mask(tp, w);
  std::vector<Tensor<T>> outs;
  outs.reserve((size_t)n);
  for (int r = 0; r < n; ++r) {
    std::vector<int> srcs((size_t)k_in * n);
    for (int k = 0; k < k_in; ++k)
      for (int s = 0; s < n; ++s) srcs[(size_t)(k * n + s)] = k * n + (s + r) % n;
    Tensor<T> shifted = gather_planes(tp, planes, srcs);
    Tensor<T> wr = reshape(tp, rotate_kernel(tp, wm, r, n), {k_out, k_in * n, kk, kk});
    outs.push_back(conv2d(tp, shifted, wr, pad, 1));
  }
  int ho = outs[0].dim(1), wo = outs[0].dim(2);
  Tensor<T> stack = concat_planes(tp, outs);
  Tensor<T> inter = gather_planes(tp, stack, detail::interleave_kr(k_out, n));
  return reshape(tp, inter, {k_out, n, ho, wo});
}

// The representation of a roto-translation on feature maps: spatial rotation
// by steps*(2pi/denom) (+ integer shift) and a cyclic shift of the fiber.
// A trivial fiber (size 1) carries the identity fiber action.
template <typename T>
Tensor<T> feature_action_general(const Tensor<T>& v, int steps, int denom,
                                 std::array<int, 2> shift = {0, 0}) {
  contract(v.rank() == 4, "feature_action: need [K,N,H,W], got " + shape_str(v.shape));
  int k_n = v.dim(0), fiber = v.dim(1), h = v.dim(2), wd = v.dim(3);
  contract(h == wd, "feature_action: spatial extents must be square");
  int fshift = 0;
  if (fiber > 1) {
    long long num = (long long)steps * fiber;
    contract(num % denom == 0, "feature_action: rotation is not a fiber step");
    fshift = (int)(((num / denom) % fiber + fiber) % fiber);
  }
  ResamplePlan plan = build_rotation_plan(h, steps, denom, false, shift[0], shift[1]);
  Tensor<T> out(v.shape);
  long long cells = (long long)h * wd;
  for (int k = 0; k < k_n; ++k)
    for (int nn = 0; nn < fiber; ++nn) {
      const T* in = v.data() + ((long long)k * fiber + (nn - fshift + fiber) % fiber) * cells;
      T* o = out.data() + ((long long)k * fiber + nn) * cells;
      for (long long d = 0; d < cells; ++d) {
        T acc = T(0);
        for (int t = plan.offs[(size_t)d]; t < plan.offs[(size_t)d + 1]; ++t)
          acc += (T)plan.wgt[(size_t)t] * in[plan.src[(size_t)t]];
        o[d] = acc;
      }
    }
  return out;
}

template <typename T>
Tensor<T> feature_action(const Tensor<T>& v, int r, std::array<int, 2> shift = {0, 0}) {
  contract(r >= 0 && r < v.dim(1), "feature_action: need 0 <= r < N");
  return feature_action_general(v, r, v.dim(1), shift);
}

// Max over the orientation fiber: [K,N,H,W] -> [K,H,W], argmax routing.
template <typename T>
Tensor<T> group_pool(Tape<T>* tp, const Tensor<T>& v) {
  contract(v.rank() == 4, "group_pool: need [K,N,H,W], got " + shape_str(v.shape));
  int k_n = v.dim(0), n = v.dim(1), h = v.dim(2), wd = v.dim(3);
  long long cells = (long long)h * wd;
  Tensor<T> out({k_n, h, wd});
  auto arg = std::make_shared<std::vector<int>>((size_t)out.size());
  for (int k = 0; k < k_n; ++k)
    for (long long d = 0; d < cells; ++d) {
      T best = v.data()[(long long)k * n * cells + d];
      int besti = 0;
      for (int nn = 1; nn < n; ++nn) {
        T val = v.data()[((long long)k * n + nn) * cells + d];
        if (val > best) {
          best = val;
          besti = nn;
        }
      }
      out[(long long)k * cells + d] = best;
      (*arg)[(size_t)((long long)k * cells + d)] = besti;
    }
  check_finite(tp, out, "group_pool");
  if (tp && v.node >= 0) {
    int vn = v.node;
    out.node =
        tp->add_node(out.size(), [vn, arg, k_n, n, cells](Tape<T>& t, const std::vector<T>& g) {
          auto& gv = t.ensure(vn);
          for (int k = 0; k < k_n; ++k)
            for (long long d = 0; d < cells; ++d) {
              int nn = (*arg)[(size_t)((long long)k * cells + d)];
              gv[(size_t)(((long long)k * n + nn) * cells + d)] +=
                  g[(size_t)((long long)k * cells + d)];
            }
        });
  }
  return out;
}

// Normalization preserving the fiber structure: statistics per K channel,
// pooled over fiber and space; affine scale/shift shared across the fiber.
// Stats are per sample; running stats (double) feed evaluation mode.
template <typename T>
struct GBatchNorm {
  Tensor<T> gamma, beta;  // [K]
  std::vector<double> run_mean, run_var;
  double momentum = 0.1;
  double eps = 1e-5;
  bool primed = false;

  explicit GBatchNorm(int k_n = 0) {
    if (k_n > 0) init(k_n);
  }
  void init(int k_n) {
    gamma = Tensor<T>::full({k_n}, T(1));
    beta = Tensor<T>::zeros({k_n});
    run_mean.assign((size_t)k_n, 0.0);
    run_var.assign((size_t)k_n, 1.0);
    primed = false;
  }

  Tensor<T> forward(Tape<T>* tp, const Tensor<T>& v, bool training, const Tensor<T>& gamma_l,
                    const Tensor<T>& beta_l) {
    contract(v.rank() == 4 && v.dim(0) == gamma_l.dim(0),
             "gbatchnorm: feature/parameter mismatch");
    int k_n = v.dim(0);
    Tensor<T> mu, var;
    if (training) {
      mu = channel_mean(tp, v);
      Tensor<T> cent = sub(tp, v, broadcast_channel(tp, mu, v.shape));
      var = channel_mean(tp, mul(tp, cent, cent));
      for (int k = 0; k < k_n; ++k) {
        double m = momentum, om = 1.0 - m;
        if (!primed) {
          run_mean[(size_t)k] = (double)mu[k];
          run_var[(size_t)k] = (double)var[k];
        } else {
          run_mean[(size_t)k] = om * run_mean[(size_t)k] + m * (double)mu[k];
          run_var[(size_t)k] = om * run_var[(size_t)k] + m * (double)var[k];
        }
      }
      primed = true;
      Tensor<T> xn = divt(tp, cent,
                          broadcast_channel(tp, sqrtt(tp, add_const(tp, var, eps)), v.shape));
      return add(tp, mul(tp, xn, broadcast_channel(tp, gamma_l, v.shape)),
                 broadcast_channel(tp, beta_l, v.shape));
    }
    Tensor<T> rm({k_n}), rs({k_n});
    for (int k = 0; k < k_n; ++k) {
      rm[k] = (T)run_mean[(size_t)k];
      rs[k] = (T)std::sqrt(run_var[(size_t)k] + eps);
    }
    Tensor<T> cent = sub(tp, v, broadcast_channel(tp, rm, v.shape));
    Tensor<T> xn = divt(tp, cent, broadcast_channel(tp, rs, v.shape));
    return add(tp, mul(tp, xn, broadcast_channel(tp, gamma_l, v.shape)),
               broadcast_channel(tp, beta_l, v.shape));
  }
};

// ---------------------------------------------------------------------------
// Equivariance meter.

template <typename T>
Tensor<T> rotate_image(const Tensor<T>& image, int steps, int denom) {
  contract(image.rank() == 3 && image.dim(1) == image.dim(2),
           "rotate_image: image must be [C,S,S]");
  Tensor<T> v = image.with_shape({image.dim(0), 1, image.dim(1), image.dim(2)});
  v.node = -1;
  Tensor<T> r = feature_action_general(v, steps, denom);
  return r.with_shape(image.shape);
}

// max interior |F(rot image) - act(F(image))| / max |F(image)|.
// The border is clamped so at least a 2x2 interior survives; with exact
// quarter-turn inputs the identity holds on the full grid anyway.
template <typename T>
double equivariance_error(const std::function<Tensor<T>(const Tensor<T>&)>& extractor,
                          const Tensor<T>& image, int steps, int denom, int border) {
  Tensor<T> f0 = extractor(image);
  contract(f0.rank() == 4, "equivariance_error: extractor must return [K,N,H,W]");
  Tensor<T> fr = extractor(rotate_image(image, steps, denom));
  Tensor<T> want = feature_action_general(f0, steps, denom);
  int h = f0.dim(2), wd = f0.dim(3);
  int b = border;
  if (h - 2 * b < 2) b = std::max(0, (h - 2) / 2);
  double worst = 0.0, mag = 0.0;
  for (long long i = 0; i < f0.size(); ++i) mag = std::max(mag, (double)std::abs(f0[i]));
  long long cells = (long long)h * wd;
  for (long long p = 0; p < f0.size() / cells; ++p)
    for (int y = b; y < h - b; ++y)
      for (int x = b; x < wd - b; ++x) {
        long long idx = p * cells + (long long)y * wd + x;
        worst = std::max(worst, (double)std::abs(fr[idx] - want[idx]));
      }
  return mag > 0 ? worst / mag : worst;
}

// CSV export for external visualization: header k,n,y,x,value.
template <typename T>
void export_feature_csv(const Tensor<T>& v, std::FILE* f) {
  contract(v.rank() == 4, "export_feature_csv: need [K,N,H,W]");
  std::fprintf(f, "k,n,y,x,value\n");
  long long i = 0;
  for (int k = 0; k < v.dim(0); ++k)
    for (int n = 0; n < v.dim(1); ++n)
      for (int y = 0; y < v.dim(2); ++y)
        for (int x = 0; x < v.dim(3); ++x)
          std::fprintf(f, "%d,%d,%d,%d,%.17g\n", k, n, y, x, (double)v[i++]);
}

}  // namespace eqpose
