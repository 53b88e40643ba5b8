#include <doctest.h>

#include <cmath>

#include "impash/kernels.hpp"
#include "impash/memory.hpp"
#include "oracles.hpp"
#include "test_util.hpp"

using namespace impash;

namespace {

// Unit rows whose first coordinate carries a tag, so rows can be identified
// after they pass through the queue.
Tensor tagged_rows(const std::vector<long>& tags, std::size_t dim) {
  Tensor t({tags.size(), dim});
  for (std::size_t i = 0; i < tags.size(); ++i) {
    const double a = 1.0 / (2.0 + static_cast<double>(tags[i]));
    t.at(i, 0) = a;
    t.at(i, 1) = std::sqrt(1.0 - a * a);
  }
  return t;
}

long tag_of(const Tensor& buf, std::size_t row) {
  return std::lround(1.0 / buf.at(row, 0) - 2.0);
}

void check_unit_rows(const Tensor& m) {
  for (std::size_t i = 0; i < m.rows(); ++i) CHECK(std::abs(std::sqrt(kernels::dot(m.row(i), m.row(i))) - 1.0) < 1e-6);
}

}  // namespace

TEST_CASE("new queue: shape, unit rows, pointer at zero, seed determinism") {
  const FeatureQueue q = FeatureQueue::create(65536, 1);
  CHECK(q.capacity() == 65536);
  CHECK(q.dim() == 128);
  CHECK(q.write_ptr() == 0);
  CHECK(q.fill_count() == 0);
  check_unit_rows(q.snapshot());

  const FeatureQueue one = FeatureQueue::create(1, 2);
  CHECK(one.capacity() == 1);
  CHECK(FeatureQueue::create(16, 3).buffer() == FeatureQueue::create(16, 3).buffer());
  CHECK_FALSE(FeatureQueue::create(16, 3).buffer() == FeatureQueue::create(16, 4).buffer());
  CHECK_THROWS(FeatureQueue::create(0, 1));
}

TEST_CASE("K=8: a third batch of 4 evicts the first") {
  FeatureQueue q = FeatureQueue::create(8, 5, 4);
  q.enqueue(tagged_rows({0, 1, 2, 3}, 4));
  q.enqueue(tagged_rows({4, 5, 6, 7}, 4));
  CHECK(q.write_ptr() == 0);
  q.enqueue(tagged_rows({8, 9, 10, 11}, 4));
  const Tensor s = q.snapshot();
  const std::vector<long> expect{8, 9, 10, 11, 4, 5, 6, 7};
  for (std::size_t i = 0; i < 8; ++i) CHECK(tag_of(s, i) == expect[i]);
  CHECK(q.write_ptr() == 4);
  CHECK(q.fill_count() == 8);

  const Tensor ordered = q.ordered_rows();
  for (std::size_t i = 0; i < 8; ++i) CHECK(tag_of(ordered, i) == static_cast<long>(4 + i));
}

TEST_CASE("B = K replaces the whole buffer and returns the pointer") {
  FeatureQueue q = FeatureQueue::create(6, 6, 3);
  q.enqueue(tagged_rows({0, 1}, 3));
  const std::size_t before = q.write_ptr();
  const Tensor batch = tagged_rows({10, 11, 12, 13, 14, 15}, 3);
  q.enqueue(batch);
  CHECK(q.write_ptr() == before);
  const Tensor ordered = q.ordered_rows();
  CHECK(ordered == batch);
}

TEST_CASE("snapshot before an enqueue is unaffected; newest rows equal the batch") {
  FeatureQueue q = FeatureQueue::create(10, 7, 5);
  const Tensor before = q.snapshot();
  Rng rng(8);
  const Tensor batch = testutil::random_unit_rows(rng, 3, 5);
  q.enqueue(batch);
  CHECK(before == FeatureQueue::create(10, 7, 5).snapshot());
  const Tensor ordered = q.ordered_rows();
  for (std::size_t i = 0; i < 3; ++i)
    for (std::size_t c = 0; c < 5; ++c) CHECK(ordered.at(7 + i, c) == batch.at(i, c));
}

TEST_CASE("enqueue rejects oversize, wrong width and non-unit batches") {
  FeatureQueue q = FeatureQueue::create(4, 9, 3);
  Rng rng(10);
  CHECK_THROWS(q.enqueue(testutil::random_unit_rows(rng, 5, 3)));
  CHECK_THROWS(q.enqueue(testutil::random_unit_rows(rng, 2, 4)));
  Tensor bad = testutil::random_unit_rows(rng, 2, 3);
  bad.at(1, 0) += 0.1;
  CHECK_THROWS_WITH(q.enqueue(bad), doctest::Contains("row 1"));
  CHECK(q.write_ptr() == 0);
}

TEST_CASE("ring behaviour matches a scripted simulation over randomized sequences") {
  Rng rng(11);
  for (int trial = 0; trial < 300; ++trial) {
    const std::size_t k = 1 + rng.below(20);
    FeatureQueue q = FeatureQueue::create(k, rng.next_u64(), 2);
    oracle::RingSim sim(k);
    long next = 0;
    const int steps = 1 + static_cast<int>(rng.below(12));
    for (int s = 0; s < steps; ++s) {
      const std::size_t b = 1 + rng.below(k);
      std::vector<long> tags;
      for (std::size_t i = 0; i < b; ++i) tags.push_back(next++);
      q.enqueue(tagged_rows(tags, 2));
      for (long t : tags) sim.push(t);
      REQUIRE(q.write_ptr() == sim.ptr);
      CHECK(q.fill_count() == std::min<std::size_t>(k, static_cast<std::size_t>(next)));
    }
    const Tensor buf = q.snapshot();
    for (std::size_t i = 0; i < k; ++i)
      if (sim.slots[i] >= 0) CHECK(tag_of(buf, i) == sim.slots[i]);
    if (static_cast<std::size_t>(next) >= k) {
      const Tensor ordered = q.ordered_rows();
      for (std::size_t i = 0; i < k; ++i) CHECK(tag_of(ordered, i) == sim.history[i]);
    }
  }
}

TEST_CASE("restore validates pointers and round-trips state") {
  FeatureQueue q = FeatureQueue::create(5, 12, 3);
  Rng rng(13);
  q.enqueue(testutil::random_unit_rows(rng, 3, 3));
  const FeatureQueue r = FeatureQueue::restore(q.buffer(), q.write_ptr(), q.fill_count());
  CHECK(r.buffer() == q.buffer());
  CHECK(r.write_ptr() == 3);
  CHECK(r.fill_count() == 3);
  CHECK_THROWS(FeatureQueue::restore(q.buffer(), 5, 0));
  CHECK_THROWS(FeatureQueue::restore(q.buffer(), 0, 6));
}
