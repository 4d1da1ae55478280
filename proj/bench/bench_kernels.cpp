// Times the serial reference kernels against the OpenMP variants and prints
// a table with speedups. The dispatched entry points are forced onto the
// parallel path (thread cap from the command line, min-ops threshold 0) so
// the comparison is honest even for mid-sized problems.

#include <chrono>
#include <cstdio>
#include <cstdlib>
#include <functional>
#include <string>
#include <vector>

#include "clipfit/kernels.hpp"
#include "clipfit/rng.hpp"

using clock_type = std::chrono::steady_clock;
using clipfit::Rng;
namespace kern = clipfit::kern;

namespace {

double time_of(const std::function<void()>& fn, int reps) {
  fn();  // warm-up
  const auto t0 = clock_type::now();
  for (int i = 0; i < reps; ++i) fn();
  const auto t1 = clock_type::now();
  return std::chrono::duration<double>(t1 - t0).count() /
         static_cast<double>(reps);
}

double checksum(const std::vector<double>& v) {
  double s = 0.0;
  for (double x : v) s += x;
  return s;
}

struct Case {
  std::string name;
  std::function<void()> serial;
  std::function<void()> parallel;
  const std::vector<double>* serial_out;
  const std::vector<double>* parallel_out;
};

}  // namespace

int main(int argc, char** argv) {
  const int threads = argc > 1 ? std::atoi(argv[1]) : kern::max_threads();
  const int reps = argc > 2 ? std::atoi(argv[2]) : 5;
  kern::set_max_threads(threads);
  kern::set_parallel_min_ops(0);  // always take the parallel path

  Rng rng(7);
  const std::size_t m = 384, k = 384, n = 384;
  std::vector<double> a(m * k), b(k * n), bt(n * k), at(k * m);
  rng.fill_normal(a.data(), a.size(), 0.0, 1.0);
  rng.fill_normal(b.data(), b.size(), 0.0, 1.0);
  rng.fill_normal(bt.data(), bt.size(), 0.0, 1.0);
  rng.fill_normal(at.data(), at.size(), 0.0, 1.0);
  std::vector<double> c_s(m * n), c_p(m * n);

  const std::size_t rows = 4096, d = 512;
  std::vector<double> x(rows * d), gain(d, 1.0), bias(d, 0.0);
  rng.fill_normal(x.data(), x.size(), 0.0, 1.0);
  std::vector<double> y_s(rows * d), y_p(rows * d);
  std::vector<double> mean_s(rows), istd_s(rows), mean_p(rows), istd_p(rows);
  std::vector<double> dy(rows * d);
  rng.fill_normal(dy.data(), dy.size(), 0.0, 1.0);
  std::vector<double> dx_s(rows * d), dg_s(d), db_s(d);
  std::vector<double> dx_p(rows * d), dg_p(d), db_p(d);
  std::vector<double> g_s(rows * d), g_p(rows * d);
  std::vector<double> sm_s(rows * d), sm_p(rows * d);

  std::vector<Case> cases;
  cases.push_back(
      {"matmul_nn 384^3",
       [&] { kern::matmul_nn_serial(a.data(), b.data(), c_s.data(), m, k, n); },
       [&] { kern::matmul_nn(a.data(), b.data(), c_p.data(), m, k, n); },
       &c_s, &c_p});
  cases.push_back(
      {"matmul_nt 384^3",
       [&] {
         kern::matmul_nt_serial(a.data(), bt.data(), c_s.data(), m, k, n);
       },
       [&] { kern::matmul_nt(a.data(), bt.data(), c_p.data(), m, k, n); },
       &c_s, &c_p});
  cases.push_back(
      {"matmul_tn 384^3",
       [&] {
         kern::matmul_tn_serial(at.data(), b.data(), c_s.data(), m, k, n);
       },
       [&] { kern::matmul_tn(at.data(), b.data(), c_p.data(), m, k, n); },
       &c_s, &c_p});
  cases.push_back({"layer_norm_fwd 4096x512",
                   [&] {
                     kern::layer_norm_fwd_serial(x.data(), gain.data(),
                                                 bias.data(), y_s.data(),
                                                 mean_s.data(), istd_s.data(),
                                                 rows, d, 1e-5);
                   },
                   [&] {
                     kern::layer_norm_fwd(x.data(), gain.data(), bias.data(),
                                          y_p.data(), mean_p.data(),
                                          istd_p.data(), rows, d, 1e-5);
                   },
                   &y_s, &y_p});
  cases.push_back({"layer_norm_bwd 4096x512",
                   [&] {
                     std::fill(dx_s.begin(), dx_s.end(), 0.0);
                     std::fill(dg_s.begin(), dg_s.end(), 0.0);
                     std::fill(db_s.begin(), db_s.end(), 0.0);
                     kern::layer_norm_bwd_serial(
                         x.data(), gain.data(), mean_s.data(), istd_s.data(),
                         dy.data(), dx_s.data(), dg_s.data(), db_s.data(),
                         rows, d);
                   },
                   [&] {
                     std::fill(dx_p.begin(), dx_p.end(), 0.0);
                     std::fill(dg_p.begin(), dg_p.end(), 0.0);
                     std::fill(db_p.begin(), db_p.end(), 0.0);
                     kern::layer_norm_bwd(x.data(), gain.data(), mean_p.data(),
                                          istd_p.data(), dy.data(),
                                          dx_p.data(), dg_p.data(),
                                          db_p.data(), rows, d);
                   },
                   &dx_s, &dx_p});
  cases.push_back(
      {"gelu_fwd 2M",
       [&] { kern::gelu_fwd_serial(x.data(), g_s.data(), x.size()); },
       [&] { kern::gelu_fwd(x.data(), g_p.data(), x.size()); }, &g_s, &g_p});
  cases.push_back(
      {"gelu_bwd 2M",
       [&] { kern::gelu_bwd_serial(x.data(), dy.data(), g_s.data(), x.size()); },
       [&] { kern::gelu_bwd(x.data(), dy.data(), g_p.data(), x.size()); },
       &g_s, &g_p});
  cases.push_back(
      {"softmax_rows 4096x512",
       [&] { kern::softmax_rows_fwd_serial(x.data(), sm_s.data(), rows, d); },
       [&] { kern::softmax_rows_fwd(x.data(), sm_p.data(), rows, d); },
       &sm_s, &sm_p});

  std::printf("threads=%d reps=%d\n", threads, reps);
  std::printf("%-24s %12s %12s %9s  %s\n", "kernel", "serial (ms)",
              "openmp (ms)", "speedup", "bitwise");
  for (Case& c : cases) {
    const double ts = time_of(c.serial, reps);
    const double tp = time_of(c.parallel, reps);
    const bool same = *c.serial_out == *c.parallel_out;
    std::printf("%-24s %12.3f %12.3f %8.2fx  %s   (checksum %.6g)\n",
                c.name.c_str(), ts * 1e3, tp * 1e3, ts / tp,
                same ? "yes" : "NO ", checksum(*c.serial_out));
    if (!same) return 1;
  }
  return 0;
}
