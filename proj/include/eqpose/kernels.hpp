#pragma once

// Raw compute kernels. The eqpose::kernels versions parallelize over output
// elements with OpenMP; every output element is produced by exactly one
// iteration with a fixed inner summation order, so results are bit-identical
// to a serial run at any thread count. eqpose::ref holds deliberately naive
// serial implementations kept as oracles for tests and the benchmark.

namespace eqpose::kernels {

template <typename T>
void conv2d_fwd(const T* in, const T* w, T* out, int ci_n, int h, int wd, int co_n, int kh,
                int kw, int pad, int stride, int ho, int wo) {
  long long total = (long long)co_n * ho;
#pragma omp parallel for schedule(static)
  for (long long t = 0; t < total; ++t) {
    int co = (int)(t / ho), oy = (int)(t % ho);
    const T* wco = w + (long long)co * ci_n * kh * kw;
    for (int ox = 0; ox < wo; ++ox) {
      T acc = T(0);
      for (int ci = 0; ci < ci_n; ++ci) {
        const T* inp = in + (long long)ci * h * wd;
        const T* wk = wco + (long long)ci * kh * kw;
        for (int ky = 0; ky < kh; ++ky) {
          int iy = oy * stride - pad + ky;
          if (iy < 0 || iy >= h) continue;
          for (int kx = 0; kx < kw; ++kx) {
            int ix = ox * stride - pad + kx;
            if (ix < 0 || ix >= wd) continue;
            acc += inp[(long long)iy * wd + ix] * wk[ky * kw + kx];
          }
        }
      }
      out[((long long)co * ho + oy) * wo + ox] = acc;
    }
  }
}

template <typename T>
void conv2d_bwd_input(const T* gout, const T* w, T* gin, int ci_n, int h, int wd, int co_n,
                      int kh, int kw, int pad, int stride, int ho, int wo) {
  long long total = (long long)ci_n * h;
#pragma omp parallel for schedule(static)
  for (long long t = 0; t < total; ++t) {
    int ci = (int)(t / h), iy = (int)(t % h);
    for (int ix = 0; ix < wd; ++ix) {
      T acc = T(0);
      for (int co = 0; co < co_n; ++co) {
        const T* wk = w + ((long long)co * ci_n + ci) * kh * kw;
        const T* go = gout + (long long)co * ho * wo;
        for (int ky = 0; ky < kh; ++ky) {
          int num = iy + pad - ky;
          if (num < 0 || num % stride) continue;
          int oy = num / stride;
          if (oy >= ho) continue;
          for (int kx = 0; kx < kw; ++kx) {
            int nx = ix + pad - kx;
            if (nx < 0 || nx % stride) continue;
            int ox = nx / stride;
            if (ox >= wo) continue;
            acc += go[(long long)oy * wo + ox] * wk[ky * kw + kx];
          }
        }
      }
      gin[((long long)ci * h + iy) * wd + ix] += acc;
    }
  }
}

template <typename T>
void conv2d_bwd_weight(const T* gout, const T* in, T* gw, int ci_n, int h, int wd, int co_n,
                       int kh, int kw, int pad, int stride, int ho, int wo) {
  long long total = (long long)co_n * ci_n;
#pragma omp parallel for schedule(static)
  for (long long t = 0; t < total; ++t) {
    int co = (int)(t / ci_n), ci = (int)(t % ci_n);
    const T* go = gout + (long long)co * ho * wo;
    const T* inp = in + (long long)ci * h * wd;
    T* g = gw + t * kh * kw;
    for (int ky = 0; ky < kh; ++ky)
      for (int kx = 0; kx < kw; ++kx) {
        T acc = T(0);
        for (int oy = 0; oy < ho; ++oy) {
          int iy = oy * stride - pad + ky;
          if (iy < 0 || iy >= h) continue;
          for (int ox = 0; ox < wo; ++ox) {
            int ix = ox * stride - pad + kx;
            if (ix < 0 || ix >= wd) continue;
            acc += go[(long long)oy * wo + ox] * inp[(long long)iy * wd + ix];
          }
        }
        g[ky * kw + kx] += acc;
      }
  }
}

template <typename T>
void maxpool_fwd(const T* in, T* out, int* arg, int c_n, int h, int wd, int k, int stride,
                 int ho, int wo) {
  long long total = (long long)c_n * ho;
#pragma omp parallel for schedule(static)
  for (long long t = 0; t < total; ++t) {
    int c = (int)(t / ho), oy = (int)(t % ho);
    const T* inp = in + (long long)c * h * wd;
    for (int ox = 0; ox < wo; ++ox) {
      T best = inp[(long long)(oy * stride) * wd + ox * stride];
      long long besti = (long long)(oy * stride) * wd + ox * stride;
      for (int ky = 0; ky < k; ++ky)
        for (int kx = 0; kx < k; ++kx) {
          long long idx = (long long)(oy * stride + ky) * wd + ox * stride + kx;
          if (inp[idx] > best) {  // strict: first occurrence wins ties
            best = inp[idx];
            besti = idx;
          }
        }
      long long o = ((long long)c * ho + oy) * wo + ox;
      out[o] = best;
      arg[o] = (int)besti;
    }
  }
}

template <typename T>
void maxpool_bwd(const T* gout, const int* arg, T* gin, int c_n, int h, int wd, int ho, int wo) {
  for (int c = 0; c < c_n; ++c) {
    T* g = gin + (long long)c * h * wd;
    const T* go = gout + (long long)c * ho * wo;
    const int* a = arg + (long long)c * ho * wo;
    for (long long i = 0; i < (long long)ho * wo; ++i) g[a[i]] += go[i];
  }
}

template <typename T>
void linear_fwd(const T* x, const T* w, const T* b, T* out, int m, int n) {
#pragma omp parallel for schedule(static)
  for (int i = 0; i < m; ++i) {
    T acc = b ? b[i] : T(0);
    const T* wr = w + (long long)i * n;
    for (int j = 0; j < n; ++j) acc += wr[j] * x[j];
    out[i] = acc;
  }
}

}  // namespace eqpose::kernels

namespace eqpose::ref {

// Quadruple-nested-loop direct convolution, no parallelism, no early exits.
template <typename T>
void conv2d(const T* in, const T* w, T* out, int ci_n, int h, int wd, int co_n, int kh, int kw,
            int pad, int stride, int ho, int wo) {
  for (int co = 0; co < co_n; ++co)
    for (int oy = 0; oy < ho; ++oy)
      for (int ox = 0; ox < wo; ++ox) {
        T acc = T(0);
        for (int ci = 0; ci < ci_n; ++ci)
          for (int ky = 0; ky < kh; ++ky)
            for (int kx = 0; kx < kw; ++kx) {
              int iy = oy * stride - pad + ky;
              int ix = ox * stride - pad + kx;
              T v = (iy >= 0 && iy < h && ix >= 0 && ix < wd)
                        ? in[((long long)ci * h + iy) * wd + ix]
                        : T(0);
              acc += v * w[(((long long)co * ci_n + ci) * kh + ky) * kw + kx];
            }
        out[((long long)co * ho + oy) * wo + ox] = acc;
      }
}

template <typename T>
void linear(const T* x, const T* w, const T* b, T* out, int m, int n) {
  for (int i = 0; i < m; ++i) {
    T acc = b ? b[i] : T(0);
    for (int j = 0; j < n; ++j) acc += w[(long long)i * n + j] * x[j];
    out[i] = acc;
  }
}

template <typename T>
void maxpool(const T* in, T* out, int c_n, int h, int wd, int k, int stride, int ho, int wo) {
  for (int c = 0; c < c_n; ++c)
    for (int oy = 0; oy < ho; ++oy)
      for (int ox = 0; ox < wo; ++ox) {
        T best = in[((long long)c * h + oy * stride) * wd + ox * stride];
        for (int ky = 0; ky < k; ++ky)
          for (int kx = 0; kx < k; ++kx) {
            T v = in[((long long)c * h + oy * stride + ky) * wd + ox * stride + kx];
            if (v > best) best = v;
          }
        out[((long long)c * ho + oy) * wo + ox] = best;
      }
}

}  // namespace eqpose::ref
