#pragma once

namespace irep::kernels {

// Geometry of a 2-D convolution over NCHW data.
struct ConvGeom {
  int n = 0, in_c = 0, in_h = 0, in_w = 0;
  int out_c = 0, k_h = 0, k_w = 0;
  int s_h = 1, s_w = 1;
  int p_h = 0, p_w = 0;
  int d_h = 1, d_w = 1;
  int groups = 1;
  int out_h = 0, out_w = 0;
};

// floor((in + 2*pad - ((k-1)*dil + 1)) / stride) + 1
int conv_out_dim(int in, int pad, int k, int dil, int stride);

// Thread cap for the parallel kernels. 0 means the OpenMP default; 1 runs
// everything serially. Each output element is always a serial reduction in a
// fixed order, so results are bitwise identical for every thread count.
void set_max_threads(int n);
int max_threads();

// RAII override, used by timing-sensitive code to pin a thread count.
class ThreadLimit {
 public:
  explicit ThreadLimit(int n);
  ~ThreadLimit();

 private:
  int saved_;
};

// Production kernels (OpenMP over independent output slices).
void conv2d_forward(const ConvGeom& g, const double* x, const double* w,
                    const double* bias, double* y);
void conv2d_backward_input(const ConvGeom& g, const double* dy, const double* w,
                           double* dx_accum);
void conv2d_backward_weight(const ConvGeom& g, const double* x, const double* dy,
                            double* dw_accum);
void conv2d_backward_bias(const ConvGeom& g, const double* dy, double* db_accum);

// Average pooling; zero-padded windows always divide by k*k.
void avgpool_forward(int n, int c, int in_h, int in_w, int k, int stride, int pad,
                     const double* x, double* y);
void avgpool_backward(int n, int c, int in_h, int in_w, int k, int stride, int pad,
                      const double* dy, double* dx_accum);

// Naive bounds-checked references kept for testing and the kernel benchmark.
void conv2d_forward_ref(const ConvGeom& g, const double* x, const double* w,
                        const double* bias, double* y);
void avgpool_forward_ref(int n, int c, int in_h, int in_w, int k, int stride, int pad,
                         const double* x, double* y);

}  // namespace irep::kernels
