#pragma once

#include <algorithm>
#include <cstdint>
#include <vector>

#include "sardet/common.hpp"

// Raw dense kernels behind the tensor ops. Two variants of each hot kernel:
//
//   sardet::kernels::*         OpenMP-parallel. Every loop is written in
//                              gather/owner form: each output element (or an
//                              exclusively owned output plane) is accumulated
//                              by exactly one thread in a fixed order, so the
//                              result is bitwise identical to the serial
//                              variant at any thread count.
//   sardet::kernels::serial::* Definitional nested loops, kept as the
//                              reference the tests compare against.
//
// Backward kernels accumulate (+=) into their destination; callers zero the
// buffers on first use. Forward kernels overwrite.

namespace sardet::kernels {

inline int conv_out_extent(int in, int k, int stride, int pad) {
  return (in + 2 * pad - k) / stride + 1;
}

// ---------------------------------------------------------------------------
// conv2d, zero padding: in [B,C,H,W] * w [O,C,k,k] -> out [B,O,HO,WO]
// ---------------------------------------------------------------------------

template <class T>
void conv2d_forward(const T* in, const T* w, T* out, int B, int C, int H, int W, int O, int k,
                    int stride, int pad) {
  const int HO = conv_out_extent(H, k, stride, pad);
  const int WO = conv_out_extent(W, k, stride, pad);
#pragma omp parallel for collapse(2) schedule(static)
  for (int b = 0; b < B; ++b) {
    for (int o = 0; o < O; ++o) {
      T* dst = out + (static_cast<int64_t>(b) * O + o) * HO * WO;
      std::fill(dst, dst + static_cast<int64_t>(HO) * WO, T(0));
      for (int c = 0; c < C; ++c) {
        const T* src = in + (static_cast<int64_t>(b) * C + c) * H * W;
        const T* ker = w + (static_cast<int64_t>(o) * C + c) * k * k;
        for (int ky = 0; ky < k; ++ky) {
          for (int kx = 0; kx < k; ++kx) {
            const T wv = ker[ky * k + kx];
            for (int y = 0; y < HO; ++y) {
              const int iy = y * stride - pad + ky;
              if (iy < 0 || iy >= H) continue;
              const T* row = src + static_cast<int64_t>(iy) * W;
              T* orow = dst + static_cast<int64_t>(y) * WO;
              for (int x = 0; x < WO; ++x) {
                const int ix = x * stride - pad + kx;
                if (ix < 0 || ix >= W) continue;
                orow[x] += wv * row[ix];
              }
            }
          }
        }
      }
    }
  }
}

template <class T>
void conv2d_backward_input(const T* dout, const T* w, T* din, int B, int C, int H, int W, int O,
                           int k, int stride, int pad) {
  const int HO = conv_out_extent(H, k, stride, pad);
  const int WO = conv_out_extent(W, k, stride, pad);
  // Owner plane: (b, c). Scatter within the owned plane is race-free.
#pragma omp parallel for collapse(2) schedule(static)
  for (int b = 0; b < B; ++b) {
    for (int c = 0; c < C; ++c) {
      T* dst = din + (static_cast<int64_t>(b) * C + c) * H * W;
      for (int o = 0; o < O; ++o) {
        const T* gsrc = dout + (static_cast<int64_t>(b) * O + o) * HO * WO;
        const T* ker = w + (static_cast<int64_t>(o) * C + c) * k * k;
        for (int ky = 0; ky < k; ++ky) {
          for (int kx = 0; kx < k; ++kx) {
            const T wv = ker[ky * k + kx];
            for (int y = 0; y < HO; ++y) {
              const int iy = y * stride - pad + ky;
              if (iy < 0 || iy >= H) continue;
              T* drow = dst + static_cast<int64_t>(iy) * W;
              const T* grow = gsrc + static_cast<int64_t>(y) * WO;
              for (int x = 0; x < WO; ++x) {
                const int ix = x * stride - pad + kx;
                if (ix < 0 || ix >= W) continue;
                drow[ix] += wv * grow[x];
              }
            }
          }
        }
      }
    }
  }
}

template <class T>
void conv2d_backward_weight(const T* dout, const T* in, T* dw, int B, int C, int H, int W, int O,
                            int k, int stride, int pad) {
  const int HO = conv_out_extent(H, k, stride, pad);
  const int WO = conv_out_extent(W, k, stride, pad);
  // Owner block: dw[o][c].
#pragma omp parallel for collapse(2) schedule(static)
  for (int o = 0; o < O; ++o) {
    for (int c = 0; c < C; ++c) {
      T* dst = dw + (static_cast<int64_t>(o) * C + c) * k * k;
      for (int b = 0; b < B; ++b) {
        const T* gsrc = dout + (static_cast<int64_t>(b) * O + o) * HO * WO;
        const T* src = in + (static_cast<int64_t>(b) * C + c) * H * W;
        for (int ky = 0; ky < k; ++ky) {
          for (int kx = 0; kx < k; ++kx) {
            T acc = 0;
            for (int y = 0; y < HO; ++y) {
              const int iy = y * stride - pad + ky;
              if (iy < 0 || iy >= H) continue;
              const T* row = src + static_cast<int64_t>(iy) * W;
              const T* grow = gsrc + static_cast<int64_t>(y) * WO;
              for (int x = 0; x < WO; ++x) {
                const int ix = x * stride - pad + kx;
                if (ix < 0 || ix >= W) continue;
                acc += grow[x] * row[ix];
              }
            }
            dst[ky * k + kx] += acc;
          }
        }
      }
    }
  }
}

// ---------------------------------------------------------------------------
// Central pixel-difference convolution, stride 1, "same" output size.
// Out-of-patch samples use edge replication so a spatially constant input
// maps to exactly zero everywhere, borders included.
//   out[b,o,y,x] = sum_c sum_i w[o,c,i] * (in[b,c,clamp(y+dy),clamp(x+dx)] - in[b,c,y,x])
// ---------------------------------------------------------------------------

template <class T>
void pdc_forward(const T* in, const T* w, T* out, int B, int C, int H, int W, int O, int k) {
  const int r = k / 2;
#pragma omp parallel for collapse(2) schedule(static)
  for (int b = 0; b < B; ++b) {
    for (int o = 0; o < O; ++o) {
      T* dst = out + (static_cast<int64_t>(b) * O + o) * H * W;
      std::fill(dst, dst + static_cast<int64_t>(H) * W, T(0));
      for (int c = 0; c < C; ++c) {
        const T* src = in + (static_cast<int64_t>(b) * C + c) * H * W;
        const T* ker = w + (static_cast<int64_t>(o) * C + c) * k * k;
        for (int ky = 0; ky < k; ++ky) {
          for (int kx = 0; kx < k; ++kx) {
            const T wv = ker[ky * k + kx];
            for (int y = 0; y < H; ++y) {
              const int iy = std::clamp(y + ky - r, 0, H - 1);
              const T* row = src + static_cast<int64_t>(iy) * W;
              const T* crow = src + static_cast<int64_t>(y) * W;
              T* orow = dst + static_cast<int64_t>(y) * W;
              for (int x = 0; x < W; ++x) {
                const int ix = std::clamp(x + kx - r, 0, W - 1);
                orow[x] += wv * (row[ix] - crow[x]);
              }
            }
          }
        }
      }
    }
  }
}

template <class T>
void pdc_backward_input(const T* dout, const T* w, T* din, int B, int C, int H, int W, int O,
                        int k) {
  const int r = k / 2;
#pragma omp parallel for collapse(2) schedule(static)
  for (int b = 0; b < B; ++b) {
    for (int c = 0; c < C; ++c) {
      T* dst = din + (static_cast<int64_t>(b) * C + c) * H * W;
      for (int o = 0; o < O; ++o) {
        const T* gsrc = dout + (static_cast<int64_t>(b) * O + o) * H * W;
        const T* ker = w + (static_cast<int64_t>(o) * C + c) * k * k;
        for (int ky = 0; ky < k; ++ky) {
          for (int kx = 0; kx < k; ++kx) {
            const T wv = ker[ky * k + kx];
            for (int y = 0; y < H; ++y) {
              const int iy = std::clamp(y + ky - r, 0, H - 1);
              const T* grow = gsrc + static_cast<int64_t>(y) * W;
              T* drow_n = dst + static_cast<int64_t>(iy) * W;
              T* drow_c = dst + static_cast<int64_t>(y) * W;
              for (int x = 0; x < W; ++x) {
                const int ix = std::clamp(x + kx - r, 0, W - 1);
                const T g = grow[x];
                drow_n[ix] += wv * g;
                drow_c[x] -= wv * g;
              }
            }
          }
        }
      }
    }
  }
}

template <class T>
void pdc_backward_weight(const T* dout, const T* in, T* dw, int B, int C, int H, int W, int O,
                         int k) {
  const int r = k / 2;
#pragma omp parallel for collapse(2) schedule(static)
  for (int o = 0; o < O; ++o) {
    for (int c = 0; c < C; ++c) {
      T* dst = dw + (static_cast<int64_t>(o) * C + c) * k * k;
      for (int b = 0; b < B; ++b) {
        const T* gsrc = dout + (static_cast<int64_t>(b) * O + o) * H * W;
        const T* src = in + (static_cast<int64_t>(b) * C + c) * H * W;
        for (int ky = 0; ky < k; ++ky) {
          for (int kx = 0; kx < k; ++kx) {
            T acc = 0;
            for (int y = 0; y < H; ++y) {
              const int iy = std::clamp(y + ky - r, 0, H - 1);
              const T* row = src + static_cast<int64_t>(iy) * W;
              const T* crow = src + static_cast<int64_t>(y) * W;
              const T* grow = gsrc + static_cast<int64_t>(y) * W;
              for (int x = 0; x < W; ++x) {
                const int ix = std::clamp(x + kx - r, 0, W - 1);
                acc += grow[x] * (row[ix] - crow[x]);
              }
            }
            dst[ky * k + kx] += acc;
          }
        }
      }
    }
  }
}

// ---------------------------------------------------------------------------
// Matrix products for the linear layers. Weight matrices are stored row-major
// as [rows, cols]; the suffix names the (implicit) transposition of each
// operand:  nt: a [M,K] * b[N,K]^T -> [M,N]
//           nn: a [M,N] * b [N,K]  -> [M,K]   (accumulating)
//           tn: a [M,N]^T * b [M,K] -> [N,K]  (accumulating)
// ---------------------------------------------------------------------------

template <class T>
void matmul_nt(const T* a, const T* b, T* out, int M, int K, int N) {
#pragma omp parallel for schedule(static)
  for (int m = 0; m < M; ++m) {
    const T* arow = a + static_cast<int64_t>(m) * K;
    T* orow = out + static_cast<int64_t>(m) * N;
    for (int n = 0; n < N; ++n) {
      const T* brow = b + static_cast<int64_t>(n) * K;
      T acc = 0;
      for (int i = 0; i < K; ++i) acc += arow[i] * brow[i];
      orow[n] = acc;
    }
  }
}

template <class T>
void matmul_nn_acc(const T* a, const T* b, T* out, int M, int N, int K) {
#pragma omp parallel for schedule(static)
  for (int m = 0; m < M; ++m) {
    const T* arow = a + static_cast<int64_t>(m) * N;
    T* orow = out + static_cast<int64_t>(m) * K;
    for (int n = 0; n < N; ++n) {
      const T av = arow[n];
      const T* brow = b + static_cast<int64_t>(n) * K;
      for (int i = 0; i < K; ++i) orow[i] += av * brow[i];
    }
  }
}

template <class T>
void matmul_tn_acc(const T* a, const T* b, T* out, int M, int N, int K) {
#pragma omp parallel for schedule(static)
  for (int n = 0; n < N; ++n) {
    T* orow = out + static_cast<int64_t>(n) * K;
    for (int m = 0; m < M; ++m) {
      const T av = a[static_cast<int64_t>(m) * N + n];
      const T* brow = b + static_cast<int64_t>(m) * K;
      for (int i = 0; i < K; ++i) orow[i] += av * brow[i];
    }
  }
}

// ---------------------------------------------------------------------------
// Bilinear RoI crop. Rects are normalized [x1,y1,x2,y2] per box with a batch
// index; sample centers sit at (i + 0.5)/out of the rect, mapped to pixel
// space as u*W - 0.5 with edge clamping, so a full-image rect with out == W
// reproduces the input exactly.
// ---------------------------------------------------------------------------

struct RoiRect {
  int batch = 0;
  float x1 = 0.f, y1 = 0.f, x2 = 1.f, y2 = 1.f;
};

template <class T>
void crop_forward(const T* in, int B, int C, int H, int W, const RoiRect* rois, int n, int out,
                  T* dst) {
  (void)B;
#pragma omp parallel for schedule(static)
  for (int i = 0; i < n; ++i) {
    const RoiRect& r = rois[i];
    const T* src = in + static_cast<int64_t>(r.batch) * C * H * W;
    T* d = dst + static_cast<int64_t>(i) * C * out * out;
    const float rw = r.x2 - r.x1;
    const float rh = r.y2 - r.y1;
    for (int oy = 0; oy < out; ++oy) {
      const float v = r.y1 + (oy + 0.5f) * rh / out;
      const float py = v * H - 0.5f;
      const int y0 = static_cast<int>(std::floor(py));
      const float fy = py - y0;
      const int ya = std::clamp(y0, 0, H - 1);
      const int yb = std::clamp(y0 + 1, 0, H - 1);
      for (int ox = 0; ox < out; ++ox) {
        const float u = r.x1 + (ox + 0.5f) * rw / out;
        const float px = u * W - 0.5f;
        const int x0 = static_cast<int>(std::floor(px));
        const float fx = px - x0;
        const int xa = std::clamp(x0, 0, W - 1);
        const int xb = std::clamp(x0 + 1, 0, W - 1);
        const T w00 = static_cast<T>((1 - fy) * (1 - fx));
        const T w01 = static_cast<T>((1 - fy) * fx);
        const T w10 = static_cast<T>(fy * (1 - fx));
        const T w11 = static_cast<T>(fy * fx);
        for (int c = 0; c < C; ++c) {
          const T* plane = src + static_cast<int64_t>(c) * H * W;
          d[(static_cast<int64_t>(c) * out + oy) * out + ox] =
              w00 * plane[ya * W + xa] + w01 * plane[ya * W + xb] + w10 * plane[yb * W + xa] +
              w11 * plane[yb * W + xb];
        }
      }
    }
  }
}

// Scatter form; boxes of the same image are processed in index order by the
// thread that owns that image, so accumulation order is fixed.
template <class T>
void crop_backward(const T* dout, int B, int C, int H, int W, const RoiRect* rois, int n, int out,
                   T* din) {
#pragma omp parallel for schedule(static)
  for (int b = 0; b < B; ++b) {
    T* dplane = din + static_cast<int64_t>(b) * C * H * W;
    for (int i = 0; i < n; ++i) {
      if (rois[i].batch != b) continue;
      const RoiRect& r = rois[i];
      const T* g = dout + static_cast<int64_t>(i) * C * out * out;
      const float rw = r.x2 - r.x1;
      const float rh = r.y2 - r.y1;
      for (int oy = 0; oy < out; ++oy) {
        const float v = r.y1 + (oy + 0.5f) * rh / out;
        const float py = v * H - 0.5f;
        const int y0 = static_cast<int>(std::floor(py));
        const float fy = py - y0;
        const int ya = std::clamp(y0, 0, H - 1);
        const int yb = std::clamp(y0 + 1, 0, H - 1);
        for (int ox = 0; ox < out; ++ox) {
          const float u = r.x1 + (ox + 0.5f) * rw / out;
          const float px = u * W - 0.5f;
          const int x0 = static_cast<int>(std::floor(px));
          const float fx = px - x0;
          const int xa = std::clamp(x0, 0, W - 1);
          const int xb = std::clamp(x0 + 1, 0, W - 1);
          const T w00 = static_cast<T>((1 - fy) * (1 - fx));
          const T w01 = static_cast<T>((1 - fy) * fx);
          const T w10 = static_cast<T>(fy * (1 - fx));
          const T w11 = static_cast<T>(fy * fx);
          for (int c = 0; c < C; ++c) {
            const T gv = g[(static_cast<int64_t>(c) * out + oy) * out + ox];
            T* plane = dplane + static_cast<int64_t>(c) * H * W;
            plane[ya * W + xa] += w00 * gv;
            plane[ya * W + xb] += w01 * gv;
            plane[yb * W + xa] += w10 * gv;
            plane[yb * W + xb] += w11 * gv;
          }
        }
      }
    }
  }
}

// ---------------------------------------------------------------------------
// 2x2 max pooling, stride 2. idx records the flat input offset of each
// winner (first occurrence wins ties) for the backward scatter.
// ---------------------------------------------------------------------------

template <class T>
void maxpool2_forward(const T* in, T* out, int64_t* idx, int B, int C, int H, int W) {
  const int HO = H / 2, WO = W / 2;
#pragma omp parallel for collapse(2) schedule(static)
  for (int b = 0; b < B; ++b) {
    for (int c = 0; c < C; ++c) {
      const int64_t pbase = (static_cast<int64_t>(b) * C + c) * H * W;
      const int64_t obase = (static_cast<int64_t>(b) * C + c) * HO * WO;
      for (int y = 0; y < HO; ++y) {
        for (int x = 0; x < WO; ++x) {
          int64_t best = pbase + (2 * y) * W + 2 * x;
          T bv = in[best];
          const int64_t cand[3] = {pbase + (2 * y) * W + 2 * x + 1, pbase + (2 * y + 1) * W + 2 * x,
                                   pbase + (2 * y + 1) * W + 2 * x + 1};
          for (int64_t cd : cand) {
            if (in[cd] > bv) {
              bv = in[cd];
              best = cd;
            }
          }
          out[obase + y * WO + x] = bv;
          idx[obase + y * WO + x] = best;
        }
      }
    }
  }
}

template <class T>
void maxpool2_backward(const T* dout, const int64_t* idx, T* din, int B, int C, int H, int W) {
  const int HO = H / 2, WO = W / 2;
#pragma omp parallel for collapse(2) schedule(static)
  for (int b = 0; b < B; ++b) {
    for (int c = 0; c < C; ++c) {
      const int64_t obase = (static_cast<int64_t>(b) * C + c) * HO * WO;
      for (int64_t i = obase; i < obase + static_cast<int64_t>(HO) * WO; ++i) din[idx[i]] += dout[i];
    }
  }
}

// ---------------------------------------------------------------------------
// Nearest-neighbour 2x upsampling.
// ---------------------------------------------------------------------------

template <class T>
void upsample2_forward(const T* in, T* out, int B, int C, int H, int W) {
#pragma omp parallel for collapse(2) schedule(static)
  for (int b = 0; b < B; ++b) {
    for (int c = 0; c < C; ++c) {
      const T* src = in + (static_cast<int64_t>(b) * C + c) * H * W;
      T* dst = out + (static_cast<int64_t>(b) * C + c) * 4 * H * W;
      for (int y = 0; y < 2 * H; ++y) {
        const T* row = src + static_cast<int64_t>(y / 2) * W;
        T* orow = dst + static_cast<int64_t>(y) * 2 * W;
        for (int x = 0; x < 2 * W; ++x) orow[x] = row[x / 2];
      }
    }
  }
}

template <class T>
void upsample2_backward(const T* dout, T* din, int B, int C, int H, int W) {
#pragma omp parallel for collapse(2) schedule(static)
  for (int b = 0; b < B; ++b) {
    for (int c = 0; c < C; ++c) {
      const T* g = dout + (static_cast<int64_t>(b) * C + c) * 4 * H * W;
      T* dst = din + (static_cast<int64_t>(b) * C + c) * H * W;
      for (int y = 0; y < H; ++y) {
        for (int x = 0; x < W; ++x) {
          dst[y * W + x] += g[(2 * y) * 2 * W + 2 * x] + g[(2 * y) * 2 * W + 2 * x + 1] +
                            g[(2 * y + 1) * 2 * W + 2 * x] + g[(2 * y + 1) * 2 * W + 2 * x + 1];
        }
      }
    }
  }
}

// ---------------------------------------------------------------------------
// Serial reference implementations (definitional form).
// ---------------------------------------------------------------------------

namespace serial {

template <class T>
void conv2d_forward(const T* in, const T* w, T* out, int B, int C, int H, int W, int O, int k,
                    int stride, int pad) {
  const int HO = conv_out_extent(H, k, stride, pad);
  const int WO = conv_out_extent(W, k, stride, pad);
  for (int b = 0; b < B; ++b)
    for (int o = 0; o < O; ++o)
      for (int y = 0; y < HO; ++y)
        for (int x = 0; x < WO; ++x) {
          T acc = 0;
          for (int c = 0; c < C; ++c)
            for (int ky = 0; ky < k; ++ky)
              for (int kx = 0; kx < k; ++kx) {
                const int iy = y * stride - pad + ky;
                const int ix = x * stride - pad + kx;
                if (iy < 0 || iy >= H || ix < 0 || ix >= W) continue;
                acc += w[((static_cast<int64_t>(o) * C + c) * k + ky) * k + kx] *
                       in[((static_cast<int64_t>(b) * C + c) * H + iy) * W + ix];
              }
          out[((static_cast<int64_t>(b) * O + o) * HO + y) * WO + x] = acc;
        }
}

template <class T>
void conv2d_backward_input(const T* dout, const T* w, T* din, int B, int C, int H, int W, int O,
                           int k, int stride, int pad) {
  const int HO = conv_out_extent(H, k, stride, pad);
  const int WO = conv_out_extent(W, k, stride, pad);
  for (int b = 0; b < B; ++b)
    for (int c = 0; c < C; ++c)
      for (int iy = 0; iy < H; ++iy)
        for (int ix = 0; ix < W; ++ix) {
          T acc = 0;
          for (int o = 0; o < O; ++o)
            for (int ky = 0; ky < k; ++ky)
              for (int kx = 0; kx < k; ++kx) {
                const int ny = iy + pad - ky;
                const int nx = ix + pad - kx;
                if (ny < 0 || nx < 0 || ny % stride || nx % stride) continue;
                const int y = ny / stride, x = nx / stride;
                if (y >= HO || x >= WO) continue;
                acc += w[((static_cast<int64_t>(o) * C + c) * k + ky) * k + kx] *
                       dout[((static_cast<int64_t>(b) * O + o) * HO + y) * WO + x];
              }
          din[((static_cast<int64_t>(b) * C + c) * H + iy) * W + ix] += acc;
        }
}

template <class T>
void conv2d_backward_weight(const T* dout, const T* in, T* dw, int B, int C, int H, int W, int O,
                            int k, int stride, int pad) {
  const int HO = conv_out_extent(H, k, stride, pad);
  const int WO = conv_out_extent(W, k, stride, pad);
  for (int o = 0; o < O; ++o)
    for (int c = 0; c < C; ++c)
      for (int ky = 0; ky < k; ++ky)
        for (int kx = 0; kx < k; ++kx) {
          T acc = 0;
          for (int b = 0; b < B; ++b)
            for (int y = 0; y < HO; ++y)
              for (int x = 0; x < WO; ++x) {
                const int iy = y * stride - pad + ky;
                const int ix = x * stride - pad + kx;
                if (iy < 0 || iy >= H || ix < 0 || ix >= W) continue;
                acc += dout[((static_cast<int64_t>(b) * O + o) * HO + y) * WO + x] *
                       in[((static_cast<int64_t>(b) * C + c) * H + iy) * W + ix];
              }
          dw[((static_cast<int64_t>(o) * C + c) * k + ky) * k + kx] += acc;
        }
}

template <class T>
void pdc_forward(const T* in, const T* w, T* out, int B, int C, int H, int W, int O, int k) {
  const int r = k / 2;
  for (int b = 0; b < B; ++b)
    for (int o = 0; o < O; ++o)
      for (int y = 0; y < H; ++y)
        for (int x = 0; x < W; ++x) {
          T acc = 0;
          for (int c = 0; c < C; ++c) {
            const T* src = in + (static_cast<int64_t>(b) * C + c) * H * W;
            const T xc = src[y * W + x];
            for (int ky = 0; ky < k; ++ky)
              for (int kx = 0; kx < k; ++kx) {
                const int iy = std::clamp(y + ky - r, 0, H - 1);
                const int ix = std::clamp(x + kx - r, 0, W - 1);
                acc += w[((static_cast<int64_t>(o) * C + c) * k + ky) * k + kx] *
                       (src[iy * W + ix] - xc);
              }
          }
          out[((static_cast<int64_t>(b) * O + o) * H + y) * W + x] = acc;
        }
}

template <class T>
void matmul_nt(const T* a, const T* b, T* out, int M, int K, int N) {
  for (int m = 0; m < M; ++m)
    for (int n = 0; n < N; ++n) {
      T acc = 0;
      for (int i = 0; i < K; ++i)
        acc += a[static_cast<int64_t>(m) * K + i] * b[static_cast<int64_t>(n) * K + i];
      out[static_cast<int64_t>(m) * N + n] = acc;
    }
}

template <class T>
void crop_forward(const T* in, int B, int C, int H, int W, const RoiRect* rois, int n, int out,
                  T* dst) {
  (void)B;
  for (int i = 0; i < n; ++i) {
    const RoiRect& r = rois[i];
    for (int c = 0; c < C; ++c) {
      const T* plane = in + (static_cast<int64_t>(r.batch) * C + c) * H * W;
      for (int oy = 0; oy < out; ++oy)
        for (int ox = 0; ox < out; ++ox) {
          const float v = r.y1 + (oy + 0.5f) * (r.y2 - r.y1) / out;
          const float u = r.x1 + (ox + 0.5f) * (r.x2 - r.x1) / out;
          const float py = v * H - 0.5f;
          const float px = u * W - 0.5f;
          const int y0 = static_cast<int>(std::floor(py));
          const int x0 = static_cast<int>(std::floor(px));
          const float fy = py - y0;
          const float fx = px - x0;
          T acc = 0;
          for (int dy = 0; dy <= 1; ++dy)
            for (int dx = 0; dx <= 1; ++dx) {
              const int yy = std::clamp(y0 + dy, 0, H - 1);
              const int xx = std::clamp(x0 + dx, 0, W - 1);
              const float wy = dy ? fy : 1 - fy;
              const float wx = dx ? fx : 1 - fx;
              acc += static_cast<T>(wy * wx) * plane[yy * W + xx];
            }
          dst[((static_cast<int64_t>(i) * C + c) * out + oy) * out + ox] = acc;
        }
    }
  }
}

}  // namespace serial

}  // namespace sardet::kernels
