#pragma once

// Pose regression pipeline: group-equivariant backbone, per-branch embedding
// MLPs, dual regression heads (position / orientation), uncertainty-weighted
// loss with learned balance scalars, parameter accounting, and the Adam
// training step.

#include <cmath>
#include <string>
#include <utility>
#include <vector>

#include "eqpose/gconv.hpp"
#include "eqpose/geom.hpp"
#include "eqpose/ops.hpp"
#include "eqpose/rng.hpp"

namespace eqpose {

enum class BackbonePreset {
  Study10,  // ten plain conv layers, spatial pooling after every second one
  ResnetS,  // lift stem + two residual stages of two blocks each
};

// Channel widths are *effective* counts (fiber channels x group size); each
// stage allocates width/N base kernels, so configs that differ only in N have
// the same activation footprint and can be compared like-for-like.
struct BackboneConfig {
  BackbonePreset preset = BackbonePreset::Study10;
  int group_size = 4;       // N; 1 recovers a classical CNN
  int kernel = 3;           // odd spatial support
  std::vector<int> widths;  // effective width per stage; empty -> preset default
  int in_channels = 1;
  int input_hw = 32;
  bool use_bn = true;
  bool invariant_pool = false;  // fiber max + global average -> [K] head input
  int head_width = 128;

  std::vector<int> stage_widths() const {
    if (!widths.empty()) return widths;
    if (preset == BackbonePreset::Study10) return {16, 16, 32, 32, 32};
    return {16, 32};
  }

  // Number of 2x halvings the schedule applies to the input side.
  int pool_count() const { return preset == BackbonePreset::Study10 ? 5 : 3; }

  int feature_hw() const {
    int div = 1 << pool_count();
    contract(input_hw % div == 0 && input_hw >= div,
             "backbone: input side " + std::to_string(input_hw) + " incompatible with " +
                 std::to_string(pool_count()) + " pooling stages");
    return input_hw / div;
  }

  void validate() const {
    contract(group_size >= 1, "backbone: group size must be >= 1");
    contract(kernel >= 1 && kernel % 2 == 1, "backbone: kernel must be odd and positive");
    contract(in_channels >= 1 && input_hw >= 1 && head_width >= 1,
             "backbone: channel/extent fields must be positive");
    auto w = stage_widths();
    size_t want = preset == BackbonePreset::Study10 ? 5 : 2;
    contract(w.size() == want, "backbone: preset expects " + std::to_string(want) +
                                   " stage widths, got " + std::to_string(w.size()));
    for (int wi : w)
      contract(wi >= 1 && wi % group_size == 0,
               "backbone: stage width " + std::to_string(wi) +
                   " must be a positive multiple of the group size");
    (void)feature_hw();
  }
};

template <typename T>
struct PoseHead {
  Tensor<T> w1, b1, w2, b2, p, pb;  // two-layer ELU embedding, then linear
};

template <typename T>
struct PoseModel {
  BackboneConfig cfg;
  std::vector<Tensor<T>> conv;    // base kernels in forward order
  std::vector<GBatchNorm<T>> bn;  // one per conv layer; empty when !use_bn
  PoseHead<T> head_t, head_q;
  Tensor<T> s_t, s_r;  // [1] learned loss-balance scalars
};

namespace detail {

// Per-layer fiber channel counts for the ten conv layers of either preset.
// Entry i is {in, out} in base (per-orientation) channels; layer 0 is a lift.
inline std::vector<std::pair<int, int>> layer_channels(const BackboneConfig& cfg) {
  auto w = cfg.stage_widths();
  int n = cfg.group_size;
  std::vector<std::pair<int, int>> ch;
  if (cfg.preset == BackbonePreset::Study10) {
    int prev = cfg.in_channels;
    for (int layer = 0; layer < 10; ++layer) {
      int out = w[(size_t)(layer / 2)] / n;
      ch.emplace_back(prev, out);
      prev = out;
    }
  } else {
    int k1 = w[0] / n, k2 = w[1] / n;
    ch.emplace_back(cfg.in_channels, k1);                    // stem (lift)
    for (int i = 0; i < 4; ++i) ch.emplace_back(k1, k1);     // stage 1: 2 blocks
    ch.emplace_back(k1, k2);                                 // 1x1 transition
    for (int i = 0; i < 4; ++i) ch.emplace_back(k2, k2);     // stage 2: 2 blocks
  }
  return ch;
}

inline int layer_kernel(const BackboneConfig& cfg, int layer) {
  if (cfg.preset == BackbonePreset::ResnetS && layer == 5) return 1;  // transition
  return cfg.kernel;
}

}  // namespace detail

// Head input length after flattening (or invariant pooling).
inline long long head_input_len(const BackboneConfig& cfg) {
  auto ch = detail::layer_channels(cfg);
  int k_last = ch.back().second;
  if (cfg.invariant_pool) return k_last;
  int fh = cfg.feature_hw();
  return (long long)k_last * cfg.group_size * fh * fh;
}

template <typename T>
PoseModel<T> init_pose_model(const BackboneConfig& cfg, Rng& rng) {
  cfg.validate();
  PoseModel<T> m;
  m.cfg = cfg;
  auto ch = detail::layer_channels(cfg);
  for (size_t i = 0; i < ch.size(); ++i) {
    int k = detail::layer_kernel(cfg, (int)i);
    auto [cin, cout] = ch[i];
    if (i == 0) {
      m.conv.push_back(he_normal<T>(rng, {cout, cin, k, k}, (long long)cin * k * k));
    } else {
      m.conv.push_back(he_normal<T>(rng, {cout, cin, cfg.group_size, k, k},
                                    (long long)cin * cfg.group_size * k * k));
    }
    if (cfg.use_bn) m.bn.emplace_back(cout);
  }
  long long d = head_input_len(cfg);
  int hw = cfg.head_width;
  auto make_head = [&](int out_dim) {
    PoseHead<T> h;
    h.w1 = he_normal<T>(rng, {hw, (int)d}, d);
    h.b1 = Tensor<T>::zeros({hw});
    h.w2 = he_normal<T>(rng, {hw, hw}, hw);
    h.b2 = Tensor<T>::zeros({hw});
    h.p = he_normal<T>(rng, {out_dim, hw}, hw);
    h.pb = Tensor<T>::zeros({out_dim});
    return h;
  };
  m.head_t = make_head(3);
  m.head_q = make_head(4);
  m.head_q.pb[0] = T(1);  // bias toward the identity quaternion
  m.s_t = Tensor<T>::full({1}, T(0));
  m.s_r = Tensor<T>::full({1}, T(-3));
  return m;
}

// Visits every learnable tensor in a fixed, documented order (conv kernels,
// normalization affine terms, both heads, loss scalars). Checkpointing and the
// optimizer both rely on this order being stable.
template <class Model, class Fn>
void for_each_param(Model& m, Fn fn) {
  for (size_t i = 0; i < m.conv.size(); ++i)
    fn("backbone.conv" + std::to_string(i), m.conv[i]);
  for (size_t i = 0; i < m.bn.size(); ++i) {
    fn("backbone.bn" + std::to_string(i) + ".gamma", m.bn[i].gamma);
    fn("backbone.bn" + std::to_string(i) + ".beta", m.bn[i].beta);
  }
  auto head = [&](const std::string& pre, auto& h) {
    fn(pre + ".w1", h.w1);
    fn(pre + ".b1", h.b1);
    fn(pre + ".w2", h.w2);
    fn(pre + ".b2", h.b2);
    fn(pre + ".p", h.p);
    fn(pre + ".pb", h.pb);
  };
  head("head_t", m.head_t);
  head("head_q", m.head_q);
  fn("loss.s_t", m.s_t);
  fn("loss.s_r", m.s_r);
}

namespace detail {

template <typename T>
Tensor<T> conv_bn_act(Tape<T>* tp, PoseModel<T>& m, int layer, const Tensor<T>& x, bool training,
                      bool activate = true) {
  int k = layer_kernel(m.cfg, layer);
  Tensor<T> v = layer == 0 ? lift_conv(tp, x, m.conv[0], m.cfg.group_size, k / 2)
                           : group_conv(tp, x, m.conv[(size_t)layer], k / 2);
  if (m.cfg.use_bn) {
    auto& bn = m.bn[(size_t)layer];
    v = bn.forward(tp, v, training, bn.gamma, bn.beta);
  }
  return activate ? elu(tp, v) : v;
}

template <typename T>
Tensor<T> pool2(Tape<T>* tp, const Tensor<T>& v) {
  int k = v.dim(0), n = v.dim(1), h = v.dim(2), w = v.dim(3);
  Tensor<T> flat = reshape(tp, v, {k * n, h, w});
  return reshape(tp, maxpool2d(tp, flat, 2, 2), {k, n, h / 2, w / 2});
}

template <typename T>
Tensor<T> residual_block(Tape<T>* tp, PoseModel<T>& m, int first_layer, const Tensor<T>& x,
                         bool training) {
  Tensor<T> v = conv_bn_act(tp, m, first_layer, x, training);
  v = conv_bn_act(tp, m, first_layer + 1, v, training, /*activate=*/false);
  return elu(tp, add(tp, x, v));
}

}  // namespace detail

// Number of inspection points along the backbone (the last one is the full
// backbone output before any invariant pooling).
inline int backbone_probe_count(const BackboneConfig& cfg) {
  return cfg.preset == BackbonePreset::Study10 ? 10 : 6;
}

// Human-readable name of a probe stage, for verification reports.
inline std::string backbone_probe_name(const BackboneConfig& cfg, int probe) {
  if (cfg.preset == BackbonePreset::Study10) return "conv" + std::to_string(probe);
  static const char* names[] = {"stem", "block1", "block2", "transition", "block3", "block4"};
  return names[probe];
}

// Runs the backbone up to and including probe stage `upto` (0-based); the
// result is always a [K, N, H', W'] feature map.
template <typename T>
Tensor<T> backbone_forward_upto(Tape<T>* tp, PoseModel<T>& m, const Tensor<T>& image,
                                bool training, int upto) {
  const auto& cfg = m.cfg;
  contract(image.rank() == 3 && image.dim(0) == cfg.in_channels &&
               image.dim(1) == cfg.input_hw && image.dim(2) == cfg.input_hw,
           "backbone_forward: image " + shape_str(image.shape) + " does not match config [" +
               std::to_string(cfg.in_channels) + "," + std::to_string(cfg.input_hw) + "," +
               std::to_string(cfg.input_hw) + "]");
  contract(upto >= 0 && upto < backbone_probe_count(cfg), "backbone_forward: bad probe index");
  Tensor<T> v;
  if (cfg.preset == BackbonePreset::Study10) {
    v = detail::conv_bn_act(tp, m, 0, image, training);
    for (int layer = 1; layer <= upto; ++layer) {
      v = detail::conv_bn_act(tp, m, layer, v, training);
      if (layer % 2 == 1) v = detail::pool2(tp, v);
    }
  } else {
    v = detail::pool2(tp, detail::conv_bn_act(tp, m, 0, image, training));  // stem
    if (upto >= 1) v = detail::residual_block(tp, m, 1, v, training);
    if (upto >= 2) v = detail::pool2(tp, detail::residual_block(tp, m, 3, v, training));
    if (upto >= 3) v = detail::conv_bn_act(tp, m, 5, v, training);  // 1x1 transition
    if (upto >= 4) v = detail::residual_block(tp, m, 6, v, training);
    if (upto >= 5) v = detail::pool2(tp, detail::residual_block(tp, m, 8, v, training));
  }
  return v;
}

// Runs the configured backbone. Returns [K, N, H', W'] feature maps, or a
// [K] rotation-invariant descriptor when cfg.invariant_pool is set.
template <typename T>
Tensor<T> backbone_forward(Tape<T>* tp, PoseModel<T>& m, const Tensor<T>& image, bool training) {
  Tensor<T> v =
      backbone_forward_upto(tp, m, image, training, backbone_probe_count(m.cfg) - 1);
  if (m.cfg.invariant_pool) v = channel_mean(tp, group_pool(tp, v));
  return v;
}

template <typename T>
struct PosePrediction {
  Tensor<T> t;      // [3] position
  Tensor<T> q_raw;  // [4] unnormalized orientation (w, x, y, z); feeds the loss

  // Hemisphere-normalized pose for metrics and reporting.
  Se3Pose pose() const {
    return {{(double)t[0], (double)t[1], (double)t[2]},
            quat_normalized((double)q_raw[0], (double)q_raw[1], (double)q_raw[2],
                            (double)q_raw[3])};
  }
};

template <typename T>
PosePrediction<T> regress_pose(Tape<T>* tp, PoseModel<T>& m, const Tensor<T>& features) {
  Tensor<T> x = reshape(tp, features, {(int)features.size()});
  auto branch = [&](PoseHead<T>& h) {
    Tensor<T> e = elu(tp, linear(tp, x, h.w1, h.b1));
    e = elu(tp, linear(tp, e, h.w2, h.b2));
    return linear(tp, e, h.p, h.pb);
  };
  return {branch(m.head_t), branch(m.head_q)};
}

// Uncertainty-weighted pose loss:
//   |t0 - t| * exp(-s_t) + s_t + |q0 - q/|q|| * exp(-s_r) + s_r
// The ground-truth quaternion sign is chosen to minimize the orientation term
// so the loss is continuous across the double cover.
template <typename T>
Tensor<T> pose_loss(Tape<T>* tp, const Tensor<T>& t_pred, const Tensor<T>& q_raw,
                    const Se3Pose& gt, const Tensor<T>& s_t, const Tensor<T>& s_r) {
  contract(t_pred.rank() == 1 && t_pred.dim(0) == 3, "pose_loss: position must be [3]");
  contract(q_raw.rank() == 1 && q_raw.dim(0) == 4, "pose_loss: quaternion must be [4]");
  contract(s_t.size() == 1 && s_r.size() == 1, "pose_loss: balance scalars must be [1]");
  Tensor<T> t0({3}, {(T)gt.t.x, (T)gt.t.y, (T)gt.t.z});
  Tensor<T> dt = sub(tp, t_pred, t0);
  Tensor<T> l_t = sqrtt(tp, sum_all(tp, mul(tp, dt, dt)));

  Tensor<T> n2 = sum_all(tp, mul(tp, q_raw, q_raw));
  contract((double)n2[0] > 0.0, "pose_loss: raw quaternion has zero norm");
  Tensor<T> qn =
      divt(tp, q_raw, reshape(tp, broadcast_channel(tp, sqrtt(tp, n2), {1, 4}), {4}));
  double gq[4] = {gt.q.w, gt.q.x, gt.q.y, gt.q.z};
  double dot = 0.0;
  for (int i = 0; i < 4; ++i) dot += gq[i] * (double)qn[i];
  T sgn = dot < 0.0 ? T(-1) : T(1);
  Tensor<T> q0({4}, {sgn * (T)gq[0], sgn * (T)gq[1], sgn * (T)gq[2], sgn * (T)gq[3]});
  Tensor<T> dq = sub(tp, qn, q0);
  Tensor<T> l_r = sqrtt(tp, sum_all(tp, mul(tp, dq, dq)));

  Tensor<T> term_t = add(tp, mul(tp, l_t, expt(tp, scale(tp, s_t, -1.0))), s_t);
  Tensor<T> term_r = add(tp, mul(tp, l_r, expt(tp, scale(tp, s_r, -1.0))), s_r);
  return add(tp, term_t, term_r);
}

// ---------------------------------------------------------------------------
// Parameter accounting. Base kernels are counted once; their rotated copies
// share storage and are excluded by construction.

struct ParamCount {
  long long total = 0;
  long long backbone = 0;
  std::vector<std::pair<std::string, long long>> by_layer;
};

template <typename T>
ParamCount count_params(const PoseModel<T>& m) {
  ParamCount pc;
  for_each_param(m, [&](const std::string& name, const Tensor<T>& t) {
    pc.by_layer.emplace_back(name, t.size());
    pc.total += t.size();
    if (name.rfind("backbone.", 0) == 0) pc.backbone += t.size();
  });
  return pc;
}

// ---------------------------------------------------------------------------
// Training.

template <typename T>
struct PoseSample {
  Tensor<T> image;  // [C, H, W]
  Se3Pose pose;
};

struct TrainConfig {
  int batch_size = 16;
  AdamConfig adam;  // lr 1e-4, beta 0.9/0.999
};

struct EpochStats {
  double mean_loss = 0.0;
  double s_t = 0.0;
  double s_r = 0.0;
};

template <typename T>
void adam_init(AdamState& st, PoseModel<T>& m) {
  st.step = 0;
  st.m.clear();
  st.v.clear();
  for_each_param(m, [&](const std::string&, Tensor<T>& t) {
    st.m.emplace_back((size_t)t.size(), 0.0);
    st.v.emplace_back((size_t)t.size(), 0.0);
  });
}

// One full pass over the dataset in a freshly shuffled order. Each batch
// builds a summed loss graph, backpropagates once, and applies Adam. Batch
// losses are measured before the update they trigger.
template <typename T>
EpochStats train_epoch(PoseModel<T>& m, const std::vector<PoseSample<T>>& data, AdamState& opt,
                       const TrainConfig& cfg, Rng& rng) {
  contract(!data.empty(), "train_epoch: dataset is empty");
  contract(cfg.batch_size >= 1, "train_epoch: batch size must be >= 1");
  size_t n = data.size();
  std::vector<size_t> order(n);
  for (size_t i = 0; i < n; ++i) order[i] = i;
  for (size_t i = n; i > 1; --i) std::swap(order[i - 1], order[(size_t)rng.uniform_int(0, (int)i - 1)]);

  double loss_acc = 0.0;
  for (size_t start = 0; start < n; start += (size_t)cfg.batch_size) {
    size_t stop = std::min(n, start + (size_t)cfg.batch_size);
    Tape<T> tape;
    std::vector<Tensor<T>*> params;
    for_each_param(m, [&](const std::string&, Tensor<T>& t) {
      t = tape.leaf(t);
      params.push_back(&t);
    });
    Tensor<T> batch_sum;
    for (size_t i = start; i < stop; ++i) {
      const auto& s = data[order[i]];
      Tensor<T> feat = backbone_forward(&tape, m, s.image, /*training=*/true);
      PosePrediction<T> pred = regress_pose(&tape, m, feat);
      Tensor<T> l = pose_loss(&tape, pred.t, pred.q_raw, s.pose, m.s_t, m.s_r);
      batch_sum = i == start ? l : add(&tape, batch_sum, l);
    }
    Tensor<T> batch_mean = scale(&tape, batch_sum, 1.0 / (double)(stop - start));
    tape.backward(batch_mean);
    loss_acc += (double)batch_mean[0] * (double)(stop - start);

    std::vector<Tensor<T>> values;
    std::vector<const std::vector<T>*> grads;
    values.reserve(params.size());
    grads.reserve(params.size());
    for (Tensor<T>* p : params) {
      values.push_back(*p);
      grads.push_back(&tape.grad(*p));
    }
    std::vector<Tensor<T>> updated = adam_step(values, grads, opt, cfg.adam);
    for (size_t p = 0; p < params.size(); ++p) *params[p] = std::move(updated[p]);
  }
  return {loss_acc / (double)n, (double)m.s_t[0], (double)m.s_r[0]};
}

}  // namespace eqpose
