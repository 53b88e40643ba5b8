#include <doctest.h>

#include <algorithm>
#include <cmath>
#include <numeric>

#include "impash/loss.hpp"
#include "oracles.hpp"
#include "test_util.hpp"

using namespace impash;
using testutil::random_unit_rows;
using testutil::rel_err;

namespace {

Tensor basis_rows(std::size_t rows, std::size_t dim, std::size_t axis) {
  Tensor t({rows, dim});
  for (std::size_t i = 0; i < rows; ++i) t.at(i, axis) = 1.0;
  return t;
}

Tensor permute_rows(const Tensor& t, const std::vector<std::size_t>& perm) {
  Tensor out(t.shape);
  for (std::size_t i = 0; i < perm.size(); ++i)
    std::copy(t.row(perm[i]).begin(), t.row(perm[i]).end(), out.row(i).begin());
  return out;
}

}  // namespace

TEST_CASE("info_nce matches the loop oracle on random small instances") {
  Rng rng(1);
  for (int trial = 0; trial < 200; ++trial) {
    const std::size_t b = 1 + rng.below(4), k = 1 + rng.below(8), d = 2 + rng.below(15);
    const double tau = rng.uniform(0.05, 1.0);
    const Tensor q = random_unit_rows(rng, b, d), kp = random_unit_rows(rng, b, d), n = random_unit_rows(rng, k, d);
    const double got = info_nce(q, kp, n, tau);
    CHECK(std::abs(got - oracle::info_nce(q, kp, n, tau)) < 1e-9);
    CHECK(got > 0.0);
  }
}

TEST_CASE("uniform logits give exactly log(K+1)") {
  for (std::size_t k : {1u, 3u, 512u, 65536u}) {
    const Tensor q = basis_rows(4, 8, 0), kp = basis_rows(4, 8, 1), n = basis_rows(k, 8, 2);
    CHECK(info_nce(q, kp, n, 0.07) == std::log(static_cast<double>(k) + 1.0));
    const ImpashLoss l = impash_loss(q, q, kp, kp, n, n, 0.07);
    CHECK(l.value.total == doctest::Approx(4.0 * std::log(static_cast<double>(k) + 1.0)).epsilon(1e-14));
  }
}

TEST_CASE("aligned positive, orthogonal negatives: log(1 + K e^(-1/tau))") {
  const double tau = 0.07;
  const std::size_t k = 65536;
  const Tensor q = basis_rows(2, 4, 0), n = basis_rows(k, 4, 3);
  const double expect = std::log1p(static_cast<double>(k) * std::exp(-1.0 / tau));
  // 65,536 terms summed onto a partition value near 1
  CHECK(info_nce(q, q, n, tau) == doctest::Approx(expect).epsilon(1e-9));
}

TEST_CASE("gradient of info_nce matches central differences") {
  Rng rng(2);
  for (int trial = 0; trial < 20; ++trial) {
    const std::size_t b = 1 + rng.below(4), k = 1 + rng.below(8), d = 2 + rng.below(15);
    const double tau = rng.uniform(0.1, 1.0);
    Tensor q = random_unit_rows(rng, b, d);
    const Tensor kp = random_unit_rows(rng, b, d), n = random_unit_rows(rng, k, d);
    const NceResult r = info_nce_with_grad(q, kp, n, tau);
    for (std::size_t i = 0; i < q.size(); ++i) {
      const double fd = testutil::central_diff([&] { return oracle::info_nce(q, kp, n, tau); }, q.data[i], 1e-4);
      CHECK(rel_err(r.grad_q.data[i], fd) < 1e-3);
    }
  }
}

TEST_CASE("impash_loss is the sum of its four pairings") {
  Rng rng(3);
  for (int trial = 0; trial < 50; ++trial) {
    const std::size_t b = 1 + rng.below(5), k = 1 + rng.below(10), d = 2 + rng.below(15);
    const Tensor q1 = random_unit_rows(rng, b, d), q2 = random_unit_rows(rng, b, d);
    const Tensor k1 = random_unit_rows(rng, b, d), k2 = random_unit_rows(rng, b, d);
    const Tensor n1 = random_unit_rows(rng, k, d), n2 = random_unit_rows(rng, k, d);
    const ImpashLoss l = impash_loss(q1, q2, k1, k2, n1, n2, 0.2);
    const std::array<double, 4> expect{info_nce(q1, k1, n1, 0.2), info_nce(q1, k2, n2, 0.2),
                                       info_nce(q2, k1, n1, 0.2), info_nce(q2, k2, n2, 0.2)};
    for (int t = 0; t < 4; ++t) CHECK(l.value.terms[t] == expect[t]);
    CHECK(std::abs(l.value.total - (expect[0] + expect[1] + expect[2] + expect[3])) < 1e-9);
    // each queue is used only with its own keys
    CHECK(std::abs(l.value.terms[1] - oracle::info_nce(q1, k2, n2, 0.2)) < 1e-9);
    CHECK(std::abs(l.value.terms[2] - oracle::info_nce(q2, k1, n1, 0.2)) < 1e-9);
  }
}

TEST_CASE("gradients of the total w.r.t. q1 and q2 match central differences") {
  Rng rng(4);
  const std::size_t b = 3, k = 6, d = 7;
  const double tau = 0.3;
  Tensor q1 = random_unit_rows(rng, b, d), q2 = random_unit_rows(rng, b, d);
  const Tensor k1 = random_unit_rows(rng, b, d), k2 = random_unit_rows(rng, b, d);
  const Tensor n1 = random_unit_rows(rng, k, d), n2 = random_unit_rows(rng, k, d);
  const ImpashLoss l = impash_loss(q1, q2, k1, k2, n1, n2, tau);
  auto total = [&] {
    return oracle::info_nce(q1, k1, n1, tau) + oracle::info_nce(q1, k2, n2, tau) +
           oracle::info_nce(q2, k1, n1, tau) + oracle::info_nce(q2, k2, n2, tau);
  };
  for (std::size_t i = 0; i < q1.size(); ++i) {
    CHECK(rel_err(l.grad_q1.data[i], testutil::central_diff(total, q1.data[i], 1e-4)) < 1e-3);
    CHECK(rel_err(l.grad_q2.data[i], testutil::central_diff(total, q2.data[i], 1e-4)) < 1e-3);
  }
}

TEST_CASE("loss is invariant to negative order and to a joint batch permutation") {
  Rng rng(5);
  const Tensor q = random_unit_rows(rng, 4, 6), kp = random_unit_rows(rng, 4, 6), n = random_unit_rows(rng, 9, 6);
  const double base = info_nce(q, kp, n, 0.1);
  std::vector<std::size_t> pn(9), pb(4);
  std::iota(pn.begin(), pn.end(), 0);
  std::iota(pb.begin(), pb.end(), 0);
  rng.shuffle(std::span<std::size_t>(pn));
  rng.shuffle(std::span<std::size_t>(pb));
  CHECK(info_nce(q, kp, permute_rows(n, pn), 0.1) == doctest::Approx(base).epsilon(1e-12));
  const NceResult r = info_nce_with_grad(permute_rows(q, pb), permute_rows(kp, pb), n, 0.1);
  CHECK(r.loss == doctest::Approx(base).epsilon(1e-12));
  const Tensor g = info_nce_with_grad(q, kp, n, 0.1).grad_q;
  CHECK(testutil::max_abs_diff(r.grad_q.data, permute_rows(g, pb).data) < 1e-12);
}

TEST_CASE("info_nce input validation") {
  Rng rng(6);
  const Tensor q = random_unit_rows(rng, 2, 4), n = random_unit_rows(rng, 3, 4);
  CHECK_THROWS(info_nce(q, q, n, 0.0));
  CHECK_THROWS(info_nce(q, q, n, -1.0));
  Tensor bad = q;
  bad.at(0, 0) *= 1.01;
  CHECK_THROWS(info_nce(bad, q, n, 0.1));
  CHECK_THROWS(info_nce(q, bad, n, 0.1));
  CHECK_THROWS(info_nce(q, q, random_unit_rows(rng, 3, 5), 0.1));
  CHECK_THROWS(info_nce(q, random_unit_rows(rng, 3, 4), n, 0.1));
}

TEST_CASE("cross entropy: uniform, saturated, loop oracle, gradient, label range") {
  Rng rng(7);
  Tensor uniform({5, 4}, 0.3);
  CHECK(cross_entropy(uniform, std::vector<int>{0, 1, 2, 3, 0}) == doctest::Approx(std::log(4.0)).epsilon(1e-14));

  Tensor sat({2, 3});
  sat.at(0, 1) = 1e4;
  sat.at(1, 2) = 1e4;
  CHECK(cross_entropy(sat, std::vector<int>{1, 2}) < 1e-3);

  for (int trial = 0; trial < 30; ++trial) {
    Tensor logits = testutil::random_matrix(rng, 3, 4, 2.0);
    std::vector<int> labels{static_cast<int>(rng.below(4)), static_cast<int>(rng.below(4)), static_cast<int>(rng.below(4))};
    const CrossEntropyResult r = cross_entropy_with_grad(logits, labels);
    CHECK(std::abs(r.loss - oracle::cross_entropy(logits, labels)) < 1e-12);
    for (std::size_t i = 0; i < logits.size(); ++i) {
      const double fd = testutil::central_diff([&] { return oracle::cross_entropy(logits, labels); }, logits.data[i], 1e-4);
      CHECK(rel_err(r.grad_logits.data[i], fd) < 1e-3);
    }
  }
  CHECK_THROWS(cross_entropy(uniform, std::vector<int>{0, 1, 2, 4, 0}));
  CHECK_THROWS(cross_entropy(uniform, std::vector<int>{0, -1, 2, 3, 0}));
  CHECK_THROWS(cross_entropy(uniform, std::vector<int>{0, 1}));
}
