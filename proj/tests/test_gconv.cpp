#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <cmath>
#include <cstring>
#include <functional>

#include "eqpose/gconv.hpp"
#include "eqpose/ops.hpp"
#include "eqpose/rng.hpp"
#include "fd_check.hpp"

using namespace eqpose;
using eqpose::testing::fd_check;
using eqpose::testing::smooth_random;

namespace {

template <typename T>
Tensor<T> random_tensor(Rng& rng, std::vector<int> shape) {
  Tensor<T> t(std::move(shape));
  for (long long i = 0; i < t.size(); ++i) t[i] = (T)rng.uniform(-1.0, 1.0);
  return t;
}

}  // namespace

TEST_CASE("rotate_kernel: identity, quarter turn permutation, 2x45 = 90") {
  Tensor<double> k({3, 3}, {1, 2, 3, 4, 5, 6, 7, 8, 9});
  Tensor<double> r0 = rotate_kernel<double>(nullptr, k, 0, 4);
  for (int i = 0; i < 9; ++i) CHECK(r0[i] == k[i]);

  Tensor<double> r1 = rotate_kernel<double>(nullptr, k, 1, 4);
  double want[9] = {3, 6, 9, 2, 5, 8, 1, 4, 7};
  for (int i = 0; i < 9; ++i) CHECK(r1[i] == want[i]);

  Tensor<double> r2of8 = rotate_kernel<double>(nullptr, k, 2, 8);
  for (int i = 0; i < 9; ++i) CHECK(r2of8[i] == r1[i]);

  Tensor<double> even({2, 2}, {1, 2, 3, 4});
  CHECK_THROWS_AS(rotate_kernel<double>(nullptr, even, 1, 4), ContractViolation);
}

TEST_CASE("rotate_kernel: rot90 after rot45 equals rot135 bitwise") {
  Rng rng(61);
  for (int side : {3, 5, 7}) {
    Tensor<double> k = random_tensor<double>(rng, {side, side});
    Tensor<double> k45 = rotate_kernel<double>(nullptr, k, 1, 8);
    Tensor<double> k135a = rotate_kernel<double>(nullptr, k45, 2, 8);
    Tensor<double> k135b = rotate_kernel<double>(nullptr, k, 3, 8);
    CHECK(std::memcmp(k135a.data(), k135b.data(), sizeof(double) * k.size()) == 0);
  }
}

TEST_CASE("rotate_kernel: circular mask pins 5x5 corners to zero") {
  Tensor<double> k = Tensor<double>::full({5, 5}, 1.0);
  Tensor<double> r = rotate_kernel<double>(nullptr, k, 1, 8);
  CHECK(r[0] == 0.0);
  CHECK(r[4] == 0.0);
  CHECK(r[20] == 0.0);
  CHECK(r[24] == 0.0);
  CHECK(r[12] > 0.0);
}

TEST_CASE("lift_conv: N=1 equals plain conv2d") {
  Rng rng(62);
  Tensor<double> img = random_tensor<double>(rng, {2, 8, 8});
  Tensor<double> w = random_tensor<double>(rng, {3, 2, 3, 3});
  Tensor<double> lifted = lift_conv<double>(nullptr, img, w, 1, 1);
  Tensor<double> plain = conv2d<double>(nullptr, img, w, 1, 1);
  REQUIRE(lifted.shape == std::vector<int>{3, 1, 8, 8});
  for (long long i = 0; i < plain.size(); ++i) CHECK(lifted[i] == plain[i]);
}

TEST_CASE("lift_conv: rotationally symmetric kernel gives identical channels") {
  Rng rng(63);
  Tensor<double> img = random_tensor<double>(rng, {1, 10, 10});
  // kernel depends only on radius: value = f(dist to center)
  Tensor<double> w({2, 1, 3, 3});
  for (int k = 0; k < 2; ++k)
    for (int i = 0; i < 3; ++i)
      for (int j = 0; j < 3; ++j) {
        double d = std::hypot(i - 1.0, j - 1.0);
        w[((long long)k * 3 + i) * 3 + j] = (k + 1) * std::exp(-d);
      }
  Tensor<double> v = lift_conv<double>(nullptr, img, w, 4, 1);
  long long plane = 10 * 10;
  for (int k = 0; k < 2; ++k)
    for (int r = 1; r < 4; ++r)
      for (long long i = 0; i < plane; ++i)
        CHECK(v[((long long)k * 4 + r) * plane + i] ==
              doctest::Approx(v[((long long)k * 4 + 0) * plane + i]).epsilon(1e-12));
}

TEST_CASE("lift_conv: 90-degree equivariance, exact fiber-shift oracle") {
  Rng rng(64);
  for (int n : {4, 8}) {
    Tensor<float> img = random_tensor<float>(rng, {1, 16, 16});
    Tensor<float> w = random_tensor<float>(rng, {3, 1, 3, 3});
    auto extractor = [&](const Tensor<float>& x) {
      return lift_conv<float>(nullptr, x, w, n, 1);
    };
    for (int q = 0; q < 4; ++q) {
      double err = equivariance_error<float>(extractor, img, q * n / 4, n, 1);
      CHECK(err <= 1e-5);
    }
  }
}

TEST_CASE("group_conv: N=1 equals plain conv2d over merged channels") {
  Rng rng(65);
  Tensor<double> v = random_tensor<double>(rng, {3, 1, 8, 8});
  Tensor<double> w = random_tensor<double>(rng, {2, 3, 1, 3, 3});
  Tensor<double> out = group_conv<double>(nullptr, v, w, 1);
  Tensor<double> plain = conv2d<double>(nullptr, v.with_shape({3, 8, 8}),
                                        w.with_shape({2, 3, 3, 3}), 1, 1);
  REQUIRE(out.shape == std::vector<int>{2, 1, 8, 8});
  for (long long i = 0; i < plain.size(); ++i) CHECK(out[i] == plain[i]);
}

TEST_CASE("group_conv: center-delta kernels") {
  Rng rng(66);
  int K = 2, N = 4, S = 6;
  Tensor<double> v = random_tensor<double>(rng, {K, N, S, S});
  long long plane = S * S;

  // delta on every (k', k, s): output = sum over all input planes, any r
  Tensor<double> wall = Tensor<double>::zeros({1, K, N, 3, 3});
  for (int k = 0; k < K; ++k)
    for (int s = 0; s < N; ++s) wall[(((long long)k * N + s) * 3 + 1) * 3 + 1] = 1.0;
  Tensor<double> osum = group_conv<double>(nullptr, v, wall, 1);
  for (int r = 0; r < N; ++r)
    for (long long i = 0; i < plane; ++i) {
      double want = 0;
      for (int p = 0; p < K * N; ++p) want += v[(long long)p * plane + i];
      CHECK(osum[(long long)r * plane + i] == doctest::Approx(want).epsilon(1e-12));
    }

  // delta only at (k'==k, s==0): output(k', r) = v[k', r]
  Tensor<double> wid = Tensor<double>::zeros({K, K, N, 3, 3});
  for (int k = 0; k < K; ++k) wid[(((long long)k * K + k) * N + 0) * 9 + 4] = 1.0;
  Tensor<double> oid = group_conv<double>(nullptr, v, wid, 1);
  for (long long i = 0; i < v.size(); ++i) CHECK(oid[i] == doctest::Approx(v[i]).epsilon(1e-12));
}

TEST_CASE("group_conv: 90-degree equivariance through a two-layer stack") {
  Rng rng(67);
  for (int n : {4, 8}) {
    Tensor<float> img = random_tensor<float>(rng, {1, 16, 16});
    Tensor<float> w1 = random_tensor<float>(rng, {3, 1, 3, 3});
    Tensor<float> w2 = random_tensor<float>(rng, {2, 3, n, 3, 3});
    auto extractor = [&](const Tensor<float>& x) {
      Tensor<float> v = lift_conv<float>(nullptr, x, w1, n, 1);
      v = elu<float>(nullptr, v.with_shape({3 * n, 16, 16})).with_shape({3, n, 16, 16});
      return group_conv<float>(nullptr, v, w2, 1);
    };
    for (int q = 0; q < 4; ++q) {
      double err = equivariance_error<float>(extractor, img, q * n / 4, n, 2);
      CHECK(err <= 1e-5);
    }
  }
  Tensor<double> v = random_tensor<double>(rng, {3, 4, 6, 6});
  Tensor<double> wbad = random_tensor<double>(rng, {2, 3, 8, 3, 3});
  CHECK_THROWS_AS(group_conv<double>(nullptr, v, wbad, 1), ContractViolation);
}

TEST_CASE("feature_action: identity, full cycle, composition") {
  Rng rng(68);
  Tensor<double> v = random_tensor<double>(rng, {2, 4, 8, 8});
  Tensor<double> id = feature_action(v, 0);
  for (long long i = 0; i < v.size(); ++i) CHECK(id[i] == v[i]);

  Tensor<double> cyc = v;
  for (int i = 0; i < 4; ++i) cyc = feature_action(cyc, 1);
  for (long long i = 0; i < v.size(); ++i) CHECK(cyc[i] == v[i]);

  for (int r1 = 0; r1 < 4; ++r1)
    for (int r2 = 0; r2 < 4; ++r2) {
      Tensor<double> two = feature_action(feature_action(v, r1), r2);
      Tensor<double> one = feature_action(v, (r1 + r2) % 4);
      CHECK(std::memcmp(two.data(), one.data(), sizeof(double) * v.size()) == 0);
    }
}

TEST_CASE("feature_action: integer shift moves content") {
  Tensor<double> v = Tensor<double>::zeros({1, 1, 5, 5});
  v[2 * 5 + 2] = 1.0;  // center
  Tensor<double> s = feature_action(v, 0, {1, 0});
  // out(p) = in(p + shift): content moves one cell in -x
  CHECK(s[2 * 5 + 1] == 1.0);
  CHECK(s[2 * 5 + 2] == 0.0);
}

TEST_CASE("group_pool: constants, naive oracle, rotation commutation") {
  Rng rng(69);
  Tensor<double> c = Tensor<double>::full({3, 4, 5, 5}, 2.5);
  Tensor<double> pc = group_pool<double>(nullptr, c);
  REQUIRE(pc.shape == std::vector<int>{3, 5, 5});
  for (long long i = 0; i < pc.size(); ++i) CHECK(pc[i] == 2.5);

  Tensor<double> v = random_tensor<double>(rng, {2, 8, 6, 6});
  Tensor<double> p = group_pool<double>(nullptr, v);
  for (int k = 0; k < 2; ++k)
    for (long long d = 0; d < 36; ++d) {
      double want = v[(long long)k * 8 * 36 + d];
      for (int n = 1; n < 8; ++n)
        want = std::max(want, v[((long long)k * 8 + n) * 36 + d]);
      CHECK(p[(long long)k * 36 + d] == want);
    }

  // max over the fiber is invariant to the fiber shift, so pooling commutes
  // with the spatial part of the action
  for (int r = 0; r < 4; ++r) {
    Tensor<double> v4 = random_tensor<double>(rng, {2, 4, 6, 6});
    Tensor<double> lhs = group_pool<double>(nullptr, feature_action(v4, r));
    Tensor<double> rot =
        feature_action_general(group_pool<double>(nullptr, v4).with_shape({2, 1, 6, 6}), r, 4);
    CHECK(std::memcmp(lhs.data(), rot.data(), sizeof(double) * lhs.size()) == 0);
  }
}

TEST_CASE("gbatchnorm: training stats, permutation, constants") {
  Rng rng(70);
  GBatchNorm<double> bn(3);
  Tensor<double> v = random_tensor<double>(rng, {3, 4, 5, 5});
  Tensor<double> y = bn.forward(nullptr, v, true, bn.gamma, bn.beta);

  // per-channel mean ~0, var ~1 (gamma=1, beta=0)
  for (int k = 0; k < 3; ++k) {
    double m = 0, s2 = 0;
    for (long long i = 0; i < 100; ++i) m += y[(long long)k * 100 + i];
    m /= 100;
    for (long long i = 0; i < 100; ++i) {
      double d = y[(long long)k * 100 + i] - m;
      s2 += d * d;
    }
    s2 /= 100;
    CHECK(std::abs(m) <= 1e-6);
    CHECK(std::abs(s2 - 1.0) <= 1e-4);
  }

  // fiber permutation commutes
  GBatchNorm<double> bn2(3);
  Tensor<double> vp(v.shape);
  long long plane = 25;
  for (int k = 0; k < 3; ++k)
    for (int n = 0; n < 4; ++n)
      for (long long i = 0; i < plane; ++i)
        vp[((long long)k * 4 + n) * plane + i] = v[((long long)k * 4 + (n + 1) % 4) * plane + i];
  Tensor<double> yp = bn2.forward(nullptr, vp, true, bn2.gamma, bn2.beta);
  for (int k = 0; k < 3; ++k)
    for (int n = 0; n < 4; ++n)
      for (long long i = 0; i < plane; ++i)
        CHECK(yp[((long long)k * 4 + n) * plane + i] ==
              doctest::Approx(y[((long long)k * 4 + (n + 1) % 4) * plane + i]).epsilon(1e-12));

  // constant input -> zero pre-affine
  GBatchNorm<double> bn3(2);
  Tensor<double> cv = Tensor<double>::full({2, 2, 3, 3}, 4.0);
  Tensor<double> cy = bn3.forward(nullptr, cv, true, bn3.gamma, bn3.beta);
  for (long long i = 0; i < cy.size(); ++i) CHECK(cy[i] == 0.0);

  // eval mode uses running stats
  GBatchNorm<double> bn4(1);
  Tensor<double> t1 = random_tensor<double>(rng, {1, 2, 4, 4});
  bn4.forward(nullptr, t1, true, bn4.gamma, bn4.beta);
  Tensor<double> e1 = bn4.forward(nullptr, t1, false, bn4.gamma, bn4.beta);
  Tensor<double> e2 = bn4.forward(nullptr, t1, false, bn4.gamma, bn4.beta);
  CHECK(std::memcmp(e1.data(), e2.data(), sizeof(double) * e1.size()) == 0);
}

TEST_CASE("gradients: lift_conv, group_conv, gbatchnorm, group_pool vs finite differences") {
  for (std::uint64_t seed : {81, 82}) {
    Rng rng(seed);
    Tensor<double> img = smooth_random(rng, {1, 6, 6});
    auto rep = fd_check(
        [&img](Tape<double>* tp, const std::vector<Tensor<double>>& ps) {
          Tensor<double> v = lift_conv(tp, img, ps[0], 4, 1);
          v = group_conv(tp, v, ps[1], 1);
          GBatchNorm<double> bn(2);
          v = bn.forward(tp, v, true, ps[2], ps[3]);
          Tensor<double> pooled = group_pool(tp, v);
          return sum_all(tp, mul(tp, pooled, pooled));
        },
        {smooth_random(rng, {2, 1, 3, 3}), smooth_random(rng, {2, 2, 4, 3, 3}),
         smooth_random(rng, {2}, 0.5, 1.5), smooth_random(rng, {2})});
    INFO(rep.where);
    CHECK(rep.max_rel_err <= 1e-4);
  }
}

TEST_CASE("gradients: input gradient flows through lift_conv") {
  Rng rng(83);
  Tensor<double> w = smooth_random(rng, {2, 1, 3, 3});
  auto rep = fd_check(
      [&w](Tape<double>* tp, const std::vector<Tensor<double>>& ps) {
        Tensor<double> v = lift_conv(tp, ps[0], w, 8, 1);
        return sum_all(tp, mul(tp, v, v));
      },
      {smooth_random(rng, {1, 5, 5})});
  INFO(rep.where);
  CHECK(rep.max_rel_err <= 1e-4);
}

TEST_CASE("equivariance_error: zero at r=0; exact stack at 90-degree steps") {
  Rng rng(84);
  Tensor<double> img = random_tensor<double>(rng, {1, 16, 16});
  Tensor<double> w = random_tensor<double>(rng, {2, 1, 3, 3});
  auto ex = [&](const Tensor<double>& x) { return lift_conv<double>(nullptr, x, w, 4, 1); };
  CHECK(equivariance_error<double>(ex, img, 0, 4, 1) == 0.0);
  for (int r = 1; r < 4; ++r) CHECK(equivariance_error<double>(ex, img, r, 4, 1) <= 1e-10);
}

TEST_CASE("equivariance_error: full C4/C8 stacks 1e-4 (f32) and 1e-10 (f64)") {
  Rng rng(85);
  auto run = [&](auto tag, int n, double tol) {
    using T = decltype(tag);
    Tensor<T> img = random_tensor<T>(rng, {1, 16, 16});
    Tensor<T> w1 = random_tensor<T>(rng, {2, 1, 3, 3});
    Tensor<T> w2 = random_tensor<T>(rng, {3, 2, n, 3, 3});
    GBatchNorm<T> bn(3);
    auto ex = [&](const Tensor<T>& x) {
      Tensor<T> v = lift_conv<T>(nullptr, x, w1, n, 1);
      v = elu<T>(nullptr, v.with_shape({2 * n, 16, 16})).with_shape({2, n, 16, 16});
      v = group_conv<T>(nullptr, v, w2, 1);
      GBatchNorm<T> local(3);
      v = local.forward(nullptr, v, true, local.gamma, local.beta);
      Tensor<T> pooled = maxpool2d<T>(nullptr, v.with_shape({3 * n, 16, 16}), 2, 2);
      return pooled.with_shape({3, n, 8, 8});
    };
    for (int q = 1; q < 4; ++q)
      CHECK(equivariance_error<T>(ex, img, q * n / 4, n, 2) <= tol);
  };
  run(1.0f, 4, 1e-4);
  run(1.0f, 8, 1e-4);
  run(1.0, 4, 1e-10);
  run(1.0, 8, 1e-10);
}

TEST_CASE("equivariance_error: N=8 odd steps beat a classical stack on smooth input") {
  // 5x5 kernels: a 3x3 disk has too few cells to express a 45-degree
  // resampling, so finite-angle fidelity needs the larger support.
  const int S = 32, k = 5, border = 10;
  for (std::uint64_t seed : {86, 87, 88}) {
    Rng rng(seed);
    Tensor<float> img({1, S, S});
    {  // band-limited noise: coarse grid bilinearly upsampled
      const int coarse = 8;
      std::vector<double> g((size_t)coarse * coarse);
      for (auto& v : g) v = rng.uniform(0.0, 1.0);
      for (int y = 0; y < S; ++y)
        for (int x = 0; x < S; ++x) {
          double gy = (double)y / (S - 1) * (coarse - 1);
          double gx = (double)x / (S - 1) * (coarse - 1);
          int y0 = (int)gy, x0 = (int)gx;
          int y1 = std::min(y0 + 1, coarse - 1), x1 = std::min(x0 + 1, coarse - 1);
          double fy = gy - y0, fx = gx - x0;
          img[(long long)y * S + x] =
              (float)((1 - fy) * ((1 - fx) * g[(size_t)(y0 * coarse + x0)] +
                                  fx * g[(size_t)(y0 * coarse + x1)]) +
                      fy * ((1 - fx) * g[(size_t)(y1 * coarse + x0)] +
                            fx * g[(size_t)(y1 * coarse + x1)]));
        }
    }
    // A single random weight draw occasionally lands a classical net that is
    // accidentally near-equivariant on one image, so the comparison averages
    // over a small ensemble of draws and over all four odd steps; the means
    // sit a factor ~2-4 apart.
    const int K = 4;  // effective width 32 for both stacks
    double e_equi = 0.0, e_classical = 0.0;
    int count = 0;
    for (int draw = 0; draw < 3; ++draw) {
      Tensor<float> w1 = random_tensor<float>(rng, {K, 1, k, k});
      Tensor<float> w2 = random_tensor<float>(rng, {K, K, 8, k, k});
      auto equi = [&](const Tensor<float>& x) {
        Tensor<float> v = lift_conv<float>(nullptr, x, w1, 8, k / 2);
        return group_conv<float>(nullptr, v, w2, k / 2);
      };
      Tensor<float> c1 = random_tensor<float>(rng, {8 * K, 1, k, k});
      Tensor<float> c2 = random_tensor<float>(rng, {8 * K, 8 * K, k, k});
      auto classical = [&](const Tensor<float>& x) {
        Tensor<float> v = conv2d<float>(nullptr, x, c1, k / 2, 1);
        Tensor<float> o = conv2d<float>(nullptr, v, c2, k / 2, 1);
        return o.with_shape({8 * K, 1, S, S});
      };
      double first_odd = -1.0;
      for (int r : {1, 3, 5, 7}) {
        double ee = equivariance_error<float>(equi, img, r, 8, border);
        CHECK(ee > 0.0);
        CHECK(std::isfinite(ee));
        // every odd step shares the same single 45-degree resample (the rest
        // of the rotation is an exact quarter-turn permutation), so the
        // reported error is the same number for r = 1, 3, 5, 7
        if (first_odd < 0.0)
          first_odd = ee;
        else
          CHECK(ee == doctest::Approx(first_odd).epsilon(1e-5));
        e_equi += ee;
        e_classical += equivariance_error<float>(classical, img, r, 8, border);
        ++count;
      }
    }
    e_equi /= count;
    e_classical /= count;
    CHECK(e_equi < e_classical);
  }
}

TEST_CASE("feature CSV export") {
  Tensor<double> v({1, 1, 2, 2}, {1.0, 2.0, 3.0, 4.0});
  std::FILE* f = std::tmpfile();
  REQUIRE(f != nullptr);
  export_feature_csv(v, f);
  std::rewind(f);
  char line[128];
  REQUIRE(std::fgets(line, sizeof line, f) != nullptr);
  CHECK(std::string(line) == "k,n,y,x,value\n");
  REQUIRE(std::fgets(line, sizeof line, f) != nullptr);
  CHECK(std::string(line) == "0,0,0,0,1\n");
  REQUIRE(std::fgets(line, sizeof line, f) != nullptr);
  CHECK(std::string(line) == "0,0,0,1,2\n");
  std::fclose(f);
}
