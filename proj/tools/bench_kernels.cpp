// Compares the OpenMP convolution kernels against the serial reference on a
// few representative shapes. The parallel kernels reduce each output element
// in a fixed order, so the outputs must match the reference bitwise.
#include <chrono>
#include <cstdio>
#include <functional>
#include <string>
#include <vector>

#include "irep/kernels.hpp"
#include "irep/rng.hpp"

using irep::kernels::ConvGeom;

namespace {

using Clock = std::chrono::steady_clock;

struct Case {
  const char* name;
  ConvGeom g;
};

double time_ms(const std::function<void()>& fn, int reps) {
  fn();  // warmup
  const auto t0 = Clock::now();
  for (int i = 0; i < reps; ++i) fn();
  return std::chrono::duration<double, std::milli>(Clock::now() - t0).count() / reps;
}

}  // namespace

int main(int argc, char** argv) {
  const int reps = argc > 1 ? std::stoi(argv[1]) : 5;
  std::vector<Case> cases;
  auto make = [](const char* name, int n, int c, int hw, int oc, int k, int pad) {
    Case cs{name, {}};
    cs.g.n = n;
    cs.g.in_c = c;
    cs.g.in_h = cs.g.in_w = hw;
    cs.g.out_c = oc;
    cs.g.k_h = cs.g.k_w = k;
    cs.g.p_h = cs.g.p_w = pad;
    cs.g.out_h = irep::kernels::conv_out_dim(hw, pad, k, 1, 1);
    cs.g.out_w = cs.g.out_h;
    return cs;
  };
  cases.push_back(make("3x3 16c 32px", 8, 16, 32, 16, 3, 1));
  cases.push_back(make("3x3 32c 16px", 8, 32, 16, 32, 3, 1));
  cases.push_back(make("1x1 32c 32px", 8, 32, 32, 32, 1, 0));

  std::printf("%-16s %12s %12s %12s %8s %s\n", "case", "ref_ms", "serial_ms", "omp_ms",
              "speedup", "bitwise");
  for (const Case& cs : cases) {
    const ConvGeom& g = cs.g;
    irep::Rng rng(42);
    std::vector<double> x(1LL * g.n * g.in_c * g.in_h * g.in_w);
    std::vector<double> w(1LL * g.out_c * g.in_c * g.k_h * g.k_w);
    std::vector<double> bias(g.out_c);
    for (auto& v : x) v = rng.uniform(-1, 1);
    for (auto& v : w) v = rng.uniform(-1, 1);
    for (auto& v : bias) v = rng.uniform(-1, 1);
    std::vector<double> y_ref(1LL * g.n * g.out_c * g.out_h * g.out_w);
    std::vector<double> y_serial(y_ref.size()), y_omp(y_ref.size());

    const double t_ref = time_ms(
        [&]() { irep::kernels::conv2d_forward_ref(g, x.data(), w.data(), bias.data(), y_ref.data()); },
        reps);
    double t_serial, t_omp;
    {
      irep::kernels::ThreadLimit one(1);
      t_serial = time_ms(
          [&]() { irep::kernels::conv2d_forward(g, x.data(), w.data(), bias.data(), y_serial.data()); },
          reps);
    }
    {
      irep::kernels::ThreadLimit def(0);
      t_omp = time_ms(
          [&]() { irep::kernels::conv2d_forward(g, x.data(), w.data(), bias.data(), y_omp.data()); },
          reps);
    }
    const bool bitwise = y_ref == y_serial && y_serial == y_omp;
    std::printf("%-16s %12.3f %12.3f %12.3f %7.2fx %s\n", cs.name, t_ref, t_serial, t_omp,
                t_serial / t_omp, bitwise ? "yes" : "NO");
    if (!bitwise) return 1;
  }
  return 0;
}
