#include "irep/kernels.hpp"

#include <algorithm>
#include <atomic>
#include <vector>

#ifdef _OPENMP
#include <omp.h>
#endif

namespace irep::kernels {

namespace {

std::atomic<int> g_max_threads{0};

int effective_threads() {
  int n = g_max_threads.load(std::memory_order_relaxed);
#ifdef _OPENMP
  if (n <= 0) n = omp_get_max_threads();
  if (omp_in_parallel()) n = 1;
#else
  n = 1;
#endif
  return n;
}

// Valid output range for one kernel tap: indices o with
// 0 <= o*stride + k*dil - pad < in.
struct TapRange {
  int lo, hi;   // inclusive; empty when lo > hi
  int origin;   // input index at o == 0, i.e. k*dil - pad
};

TapRange tap_range(int in, int out, int pad, int k, int dil, int stride) {
  TapRange r{};
  r.origin = k * dil - pad;
  r.lo = r.origin >= 0 ? 0 : (-r.origin + stride - 1) / stride;
  const int num = in - 1 - r.origin;
  r.hi = num < 0 ? -1 : std::min(out - 1, num / stride);
  return r;
}

}  // namespace

int conv_out_dim(int in, int pad, int k, int dil, int stride) {
  const int extent = (k - 1) * dil + 1;
  return (in + 2 * pad - extent) / stride + 1;
}

void set_max_threads(int n) { g_max_threads.store(n, std::memory_order_relaxed); }
int max_threads() { return g_max_threads.load(std::memory_order_relaxed); }

ThreadLimit::ThreadLimit(int n) : saved_(max_threads()) { set_max_threads(n); }
ThreadLimit::~ThreadLimit() { set_max_threads(saved_); }

void conv2d_forward(const ConvGeom& g, const double* x, const double* w,
                    const double* bias, double* y) {
  const int icg = g.in_c / g.groups;
  const int ocg = g.out_c / g.groups;
  const long long plane_in = 1LL * g.in_h * g.in_w;
  const long long plane_out = 1LL * g.out_h * g.out_w;
  const long long tasks = 1LL * g.n * g.out_c;
  const int T = effective_threads();
#ifdef _OPENMP
#pragma omp parallel for num_threads(T) if (T > 1) schedule(static)
#endif
  for (long long t = 0; t < tasks; ++t) {
    const int n = static_cast<int>(t / g.out_c);
    const int oc = static_cast<int>(t % g.out_c);
    const int grp = oc / ocg;
    double* yp = y + (1LL * n * g.out_c + oc) * plane_out;
    std::fill(yp, yp + plane_out, bias ? bias[oc] : 0.0);
    for (int k = 0; k < icg; ++k) {
      const int ic = grp * icg + k;
      const double* xp = x + (1LL * n * g.in_c + ic) * plane_in;
      const double* wp = w + (1LL * oc * icg + k) * g.k_h * g.k_w;
      for (int kh = 0; kh < g.k_h; ++kh) {
        const TapRange rh = tap_range(g.in_h, g.out_h, g.p_h, kh, g.d_h, g.s_h);
        for (int kw = 0; kw < g.k_w; ++kw) {
          const TapRange rw = tap_range(g.in_w, g.out_w, g.p_w, kw, g.d_w, g.s_w);
          const double wv = wp[kh * g.k_w + kw];
          for (int oh = rh.lo; oh <= rh.hi; ++oh) {
            const double* xrow = xp + 1LL * (oh * g.s_h + rh.origin) * g.in_w + rw.origin;
            double* yrow = yp + 1LL * oh * g.out_w;
            for (int ow = rw.lo; ow <= rw.hi; ++ow) {
              yrow[ow] += wv * xrow[ow * g.s_w];
            }
          }
        }
      }
    }
  }
}

void conv2d_backward_input(const ConvGeom& g, const double* dy, const double* w,
                           double* dx_accum) {
  const int icg = g.in_c / g.groups;
  const int ocg = g.out_c / g.groups;
  const long long plane_in = 1LL * g.in_h * g.in_w;
  const long long plane_out = 1LL * g.out_h * g.out_w;
  const long long tasks = 1LL * g.n * g.in_c;
  const int T = effective_threads();
#ifdef _OPENMP
#pragma omp parallel for num_threads(T) if (T > 1) schedule(static)
#endif
  for (long long t = 0; t < tasks; ++t) {
    const int n = static_cast<int>(t / g.in_c);
    const int ic = static_cast<int>(t % g.in_c);
    const int grp = ic / icg;
    const int k = ic - grp * icg;
    std::vector<double> scratch(static_cast<std::size_t>(plane_in), 0.0);
    for (int oc = grp * ocg; oc < (grp + 1) * ocg; ++oc) {
      const double* dyp = dy + (1LL * n * g.out_c + oc) * plane_out;
      const double* wp = w + (1LL * oc * icg + k) * g.k_h * g.k_w;
      for (int kh = 0; kh < g.k_h; ++kh) {
        const TapRange rh = tap_range(g.in_h, g.out_h, g.p_h, kh, g.d_h, g.s_h);
        for (int kw = 0; kw < g.k_w; ++kw) {
          const TapRange rw = tap_range(g.in_w, g.out_w, g.p_w, kw, g.d_w, g.s_w);
          const double wv = wp[kh * g.k_w + kw];
          for (int oh = rh.lo; oh <= rh.hi; ++oh) {
            double* srow = scratch.data() + 1LL * (oh * g.s_h + rh.origin) * g.in_w + rw.origin;
            const double* dyrow = dyp + 1LL * oh * g.out_w;
            for (int ow = rw.lo; ow <= rw.hi; ++ow) {
              srow[ow * g.s_w] += wv * dyrow[ow];
            }
          }
        }
      }
    }
    double* dxp = dx_accum + (1LL * n * g.in_c + ic) * plane_in;
    for (long long i = 0; i < plane_in; ++i) dxp[i] += scratch[static_cast<std::size_t>(i)];
  }
}

void conv2d_backward_weight(const ConvGeom& g, const double* x, const double* dy,
                            double* dw_accum) {
  const int icg = g.in_c / g.groups;
  const int ocg = g.out_c / g.groups;
  const long long plane_in = 1LL * g.in_h * g.in_w;
  const long long plane_out = 1LL * g.out_h * g.out_w;
  const long long tasks = 1LL * g.out_c * icg * g.k_h * g.k_w;
  const int T = effective_threads();
#ifdef _OPENMP
#pragma omp parallel for num_threads(T) if (T > 1) schedule(static)
#endif
  for (long long t = 0; t < tasks; ++t) {
    long long r = t;
    const int kw = static_cast<int>(r % g.k_w);
    r /= g.k_w;
    const int kh = static_cast<int>(r % g.k_h);
    r /= g.k_h;
    const int k = static_cast<int>(r % icg);
    const int oc = static_cast<int>(r / icg);
    const int ic = (oc / ocg) * icg + k;
    const TapRange rh = tap_range(g.in_h, g.out_h, g.p_h, kh, g.d_h, g.s_h);
    const TapRange rw = tap_range(g.in_w, g.out_w, g.p_w, kw, g.d_w, g.s_w);
    double acc = 0.0;
    for (int n = 0; n < g.n; ++n) {
      const double* xp = x + (1LL * n * g.in_c + ic) * plane_in;
      const double* dyp = dy + (1LL * n * g.out_c + oc) * plane_out;
      for (int oh = rh.lo; oh <= rh.hi; ++oh) {
        const double* xrow = xp + 1LL * (oh * g.s_h + rh.origin) * g.in_w + rw.origin;
        const double* dyrow = dyp + 1LL * oh * g.out_w;
        for (int ow = rw.lo; ow <= rw.hi; ++ow) {
          acc += dyrow[ow] * xrow[ow * g.s_w];
        }
      }
    }
    dw_accum[t] += acc;
  }
}

void conv2d_backward_bias(const ConvGeom& g, const double* dy, double* db_accum) {
  const long long plane_out = 1LL * g.out_h * g.out_w;
  const int T = effective_threads();
#ifdef _OPENMP
#pragma omp parallel for num_threads(T) if (T > 1) schedule(static)
#endif
  for (int oc = 0; oc < g.out_c; ++oc) {
    double acc = 0.0;
    for (int n = 0; n < g.n; ++n) {
      const double* dyp = dy + (1LL * n * g.out_c + oc) * plane_out;
      for (long long i = 0; i < plane_out; ++i) acc += dyp[i];
    }
    db_accum[oc] += acc;
  }
}

void avgpool_forward(int n, int c, int in_h, int in_w, int k, int stride, int pad,
                     const double* x, double* y) {
  const int out_h = conv_out_dim(in_h, pad, k, 1, stride);
  const int out_w = conv_out_dim(in_w, pad, k, 1, stride);
  const double inv = 1.0 / (static_cast<double>(k) * k);
  const long long plane_in = 1LL * in_h * in_w;
  const long long plane_out = 1LL * out_h * out_w;
  const long long tasks = 1LL * n * c;
  const int T = effective_threads();
#ifdef _OPENMP
#pragma omp parallel for num_threads(T) if (T > 1) schedule(static)
#endif
  for (long long t = 0; t < tasks; ++t) {
    const double* xp = x + t * plane_in;
    double* yp = y + t * plane_out;
    for (int oh = 0; oh < out_h; ++oh) {
      const int h0 = oh * stride - pad;
      const int h_lo = std::max(0, h0);
      const int h_hi = std::min(in_h, h0 + k);
      for (int ow = 0; ow < out_w; ++ow) {
        const int w0 = ow * stride - pad;
        const int w_lo = std::max(0, w0);
        const int w_hi = std::min(in_w, w0 + k);
        double acc = 0.0;
        for (int ih = h_lo; ih < h_hi; ++ih) {
          const double* xrow = xp + 1LL * ih * in_w;
          for (int iw = w_lo; iw < w_hi; ++iw) acc += xrow[iw];
        }
        yp[1LL * oh * out_w + ow] = acc * inv;
      }
    }
  }
}

void avgpool_backward(int n, int c, int in_h, int in_w, int k, int stride, int pad,
                      const double* dy, double* dx_accum) {
  const int out_h = conv_out_dim(in_h, pad, k, 1, stride);
  const int out_w = conv_out_dim(in_w, pad, k, 1, stride);
  const double inv = 1.0 / (static_cast<double>(k) * k);
  const long long plane_in = 1LL * in_h * in_w;
  const long long plane_out = 1LL * out_h * out_w;
  const long long tasks = 1LL * n * c;
  const int T = effective_threads();
#ifdef _OPENMP
#pragma omp parallel for num_threads(T) if (T > 1) schedule(static)
#endif
  for (long long t = 0; t < tasks; ++t) {
    const double* dyp = dy + t * plane_out;
    double* dxp = dx_accum + t * plane_in;
    for (int ih = 0; ih < in_h; ++ih) {
      for (int iw = 0; iw < in_w; ++iw) {
        // windows (oh, ow) with oh*stride - pad <= ih < oh*stride - pad + k
        double acc = 0.0;
        for (int kh = 0; kh < k; ++kh) {
          const int oh_num = ih + pad - kh;
          if (oh_num < 0 || oh_num % stride != 0) continue;
          const int oh = oh_num / stride;
          if (oh >= out_h) continue;
          for (int kw = 0; kw < k; ++kw) {
            const int ow_num = iw + pad - kw;
            if (ow_num < 0 || ow_num % stride != 0) continue;
            const int ow = ow_num / stride;
            if (ow >= out_w) continue;
            acc += dyp[1LL * oh * out_w + ow];
          }
        }
        dxp[1LL * ih * in_w + iw] += acc * inv;
      }
    }
  }
}

void conv2d_forward_ref(const ConvGeom& g, const double* x, const double* w,
                        const double* bias, double* y) {
  const int icg = g.in_c / g.groups;
  const int ocg = g.out_c / g.groups;
  for (int n = 0; n < g.n; ++n) {
    for (int oc = 0; oc < g.out_c; ++oc) {
      const int grp = oc / ocg;
      for (int oh = 0; oh < g.out_h; ++oh) {
        for (int ow = 0; ow < g.out_w; ++ow) {
          double acc = bias ? bias[oc] : 0.0;
          for (int k = 0; k < icg; ++k) {
            const int ic = grp * icg + k;
            for (int kh = 0; kh < g.k_h; ++kh) {
              const int ih = oh * g.s_h - g.p_h + kh * g.d_h;
              if (ih < 0 || ih >= g.in_h) continue;
              for (int kw = 0; kw < g.k_w; ++kw) {
                const int iw = ow * g.s_w - g.p_w + kw * g.d_w;
                if (iw < 0 || iw >= g.in_w) continue;
                acc += w[((1LL * oc * icg + k) * g.k_h + kh) * g.k_w + kw] *
                       x[((1LL * n * g.in_c + ic) * g.in_h + ih) * g.in_w + iw];
              }
            }
          }
          y[((1LL * n * g.out_c + oc) * g.out_h + oh) * g.out_w + ow] = acc;
        }
      }
    }
  }
}

void avgpool_forward_ref(int n, int c, int in_h, int in_w, int k, int stride, int pad,
                         const double* x, double* y) {
  const int out_h = conv_out_dim(in_h, pad, k, 1, stride);
  const int out_w = conv_out_dim(in_w, pad, k, 1, stride);
  const double inv = 1.0 / (static_cast<double>(k) * k);
  for (long long t = 0; t < 1LL * n * c; ++t) {
    const double* xp = x + t * in_h * in_w;
    double* yp = y + t * out_h * out_w;
    for (int oh = 0; oh < out_h; ++oh) {
      for (int ow = 0; ow < out_w; ++ow) {
        double acc = 0.0;
        for (int kh = 0; kh < k; ++kh) {
          const int ih = oh * stride - pad + kh;
          if (ih < 0 || ih >= in_h) continue;
          for (int kw = 0; kw < k; ++kw) {
            const int iw = ow * stride - pad + kw;
            if (iw < 0 || iw >= in_w) continue;
            acc += xp[1LL * ih * in_w + iw];
          }
        }
        yp[1LL * oh * out_w + ow] = acc * inv;
      }
    }
  }
}

}  // namespace irep::kernels
