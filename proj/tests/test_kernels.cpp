// The OpenMP kernels must be bitwise identical to their serial references:
// each output element is computed by one thread with the same inner-loop
// order. These tests force the parallel path (thread cap up, min-ops gate
// down) and compare byte for byte.

#include <cstring>
#include <vector>

#include "clipfit/kernels.hpp"
#include "clipfit/rng.hpp"
#include "doctest.h"

using namespace clipfit;

namespace {

struct ForceParallel {
  int threads;
  std::size_t min_ops;
  ForceParallel() : threads(kern::max_threads()), min_ops(kern::parallel_min_ops()) {
    kern::set_max_threads(4);
    kern::set_parallel_min_ops(0);
  }
  ~ForceParallel() {
    kern::set_max_threads(threads);
    kern::set_parallel_min_ops(min_ops);
  }
};

std::vector<double> random_vec(Rng& rng, std::size_t n) {
  std::vector<double> v(n);
  for (double& x : v) x = 2.0 * rng.uniform() - 1.0;
  return v;
}

bool bitwise_equal(const std::vector<double>& a, const std::vector<double>& b) {
  return a.size() == b.size() &&
         std::memcmp(a.data(), b.data(), a.size() * sizeof(double)) == 0;
}

}  // namespace

TEST_CASE("matmul kernels: parallel output is bitwise equal to serial") {
  ForceParallel guard;
  Rng rng(3);
  const struct {
    std::size_t m, k, n;
  } sizes[] = {{1, 1, 1}, {2, 3, 4}, {7, 5, 3}, {16, 16, 16}, {33, 17, 9}};
  for (const auto& s : sizes) {
    for (bool acc : {false, true}) {
      const auto a = random_vec(rng, s.m * s.k);
      const auto b_nn = random_vec(rng, s.k * s.n);
      const auto b_nt = random_vec(rng, s.n * s.k);
      const auto init = random_vec(rng, s.m * s.n);

      auto c1 = init, c2 = init;
      kern::matmul_nn_serial(a.data(), b_nn.data(), c1.data(), s.m, s.k, s.n, acc);
      kern::matmul_nn(a.data(), b_nn.data(), c2.data(), s.m, s.k, s.n, acc);
      CHECK(bitwise_equal(c1, c2));

      c1 = init, c2 = init;
      kern::matmul_nt_serial(a.data(), b_nt.data(), c1.data(), s.m, s.k, s.n, acc);
      kern::matmul_nt(a.data(), b_nt.data(), c2.data(), s.m, s.k, s.n, acc);
      CHECK(bitwise_equal(c1, c2));

      const auto a_t = random_vec(rng, s.k * s.m);  // stored [k x m]
      c1 = init, c2 = init;
      kern::matmul_tn_serial(a_t.data(), b_nn.data(), c1.data(), s.m, s.k, s.n, acc);
      kern::matmul_tn(a_t.data(), b_nn.data(), c2.data(), s.m, s.k, s.n, acc);
      CHECK(bitwise_equal(c1, c2));
    }
  }
}

TEST_CASE("layer_norm kernels: forward and backward bitwise equal") {
  ForceParallel guard;
  Rng rng(5);
  const std::size_t rows = 13, d = 37;
  const double eps = 1e-5;
  const auto x = random_vec(rng, rows * d);
  const auto gain = random_vec(rng, d);
  const auto bias = random_vec(rng, d);
  const auto dy = random_vec(rng, rows * d);

  std::vector<double> y1(rows * d), y2(rows * d), mu1(rows), mu2(rows),
      is1(rows), is2(rows);
  kern::layer_norm_fwd_serial(x.data(), gain.data(), bias.data(), y1.data(),
                              mu1.data(), is1.data(), rows, d, eps);
  kern::layer_norm_fwd(x.data(), gain.data(), bias.data(), y2.data(),
                       mu2.data(), is2.data(), rows, d, eps);
  CHECK(bitwise_equal(y1, y2));
  CHECK(bitwise_equal(mu1, mu2));
  CHECK(bitwise_equal(is1, is2));

  std::vector<double> dx1(rows * d, 0.1), dx2(rows * d, 0.1), dg1(d, 0.2),
      dg2(d, 0.2), db1(d, 0.3), db2(d, 0.3);
  kern::layer_norm_bwd_serial(x.data(), gain.data(), mu1.data(), is1.data(),
                              dy.data(), dx1.data(), dg1.data(), db1.data(),
                              rows, d);
  kern::layer_norm_bwd(x.data(), gain.data(), mu1.data(), is1.data(), dy.data(),
                       dx2.data(), dg2.data(), db2.data(), rows, d);
  CHECK(bitwise_equal(dx1, dx2));
  CHECK(bitwise_equal(dg1, dg2));
  CHECK(bitwise_equal(db1, db2));
}

TEST_CASE("gelu kernels bitwise equal") {
  ForceParallel guard;
  Rng rng(7);
  const std::size_t n = 1001;
  const auto x = random_vec(rng, n);
  const auto dy = random_vec(rng, n);

  std::vector<double> y1(n), y2(n);
  kern::gelu_fwd_serial(x.data(), y1.data(), n);
  kern::gelu_fwd(x.data(), y2.data(), n);
  CHECK(bitwise_equal(y1, y2));

  std::vector<double> dx1(n, 0.5), dx2(n, 0.5);
  kern::gelu_bwd_serial(x.data(), dy.data(), dx1.data(), n);
  kern::gelu_bwd(x.data(), dy.data(), dx2.data(), n);
  CHECK(bitwise_equal(dx1, dx2));
}

TEST_CASE("softmax kernel bitwise equal") {
  ForceParallel guard;
  Rng rng(9);
  const std::size_t rows = 19, d = 23;
  const auto x = random_vec(rng, rows * d);
  std::vector<double> y1(rows * d), y2(rows * d);
  kern::softmax_rows_fwd_serial(x.data(), y1.data(), rows, d);
  kern::softmax_rows_fwd(x.data(), y2.data(), rows, d);
  CHECK(bitwise_equal(y1, y2));
}

TEST_CASE("thread controls round-trip and the serial fallback engages") {
  const int before = kern::max_threads();
  kern::set_max_threads(1);  // forces serial in the dispatchers
  Rng rng(11);
  const auto a = random_vec(rng, 6);
  const auto b = random_vec(rng, 8);
  std::vector<double> c1(12, 0.0), c2(12, 0.0);
  kern::matmul_nn_serial(a.data(), b.data(), c1.data(), 3, 2, 4, false);
  kern::matmul_nn(a.data(), b.data(), c2.data(), 3, 2, 4, false);
  CHECK(bitwise_equal(c1, c2));
  kern::set_max_threads(before);
  CHECK(kern::max_threads() == before);
}
