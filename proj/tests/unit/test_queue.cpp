#include <algorithm>
#include <vector>

#include "doctest.h"
#include "oracles.hpp"
#include "specalign/core/errors.hpp"
#include "specalign/queue/memory_queue.hpp"
#include "test_support.hpp"

using namespace specalign;
using specalign::testing::random_matrix;

using oracle::ReferenceQueue;

TEST_CASE("construction and capacity defaults") {
  CHECK(kPresetQueueCapacity == 65536);
  CHECK(kToyQueueCapacity == 1024);
  MemoryQueue q(kToyQueueCapacity, 64);
  CHECK(q.fill() == 0);
  CHECK(q.cursor() == 0);
  CHECK(q.empty());
  CHECK_THROWS_AS(MemoryQueue(0, 4), ConfigError);
  CHECK_THROWS_AS(MemoryQueue(4, 0), ConfigError);
}

TEST_CASE("push normalises, advances the cursor and wraps") {
  Rng rng(1);
  MemoryQueue q(5, 3);
  const Mat a = random_matrix(rng, 3, 3) * 10.0;
  q.push_batch(a);
  CHECK(q.fill() == 3);
  CHECK(q.cursor() == 3);
  for (Eigen::Index r = 0; r < 3; ++r) CHECK(q.buffer().row(r).norm() == doctest::Approx(1.0).epsilon(1e-14));

  const Mat b = random_matrix(rng, 4, 3);
  q.push_batch(b);
  CHECK(q.fill() == 5);
  CHECK(q.cursor() == 2);
  // Oldest two rows of `a` were overwritten; logical order is a[2], b[0..3].
  const Mat ordered = q.ordered();
  CHECK((ordered.row(0) - a.row(2).normalized()).norm() < 1e-14);
  CHECK((ordered.row(4) - b.row(3).normalized()).norm() < 1e-14);
  CHECK(q.physical_index(0) == 2);

  CHECK_THROWS_AS(q.push_batch(random_matrix(rng, 6, 3)), ConfigError);
  CHECK_THROWS_AS(q.push_batch(random_matrix(rng, 1, 4)), ShapeError);
  Mat zero = Mat::Zero(1, 3);
  CHECK_THROWS_AS(q.push_batch(zero), DegenerateEmbeddingError);
}

TEST_CASE("top-k examples") {
  MemoryQueue q(8, 4);
  q.push_batch(Mat::Identity(4, 4));
  Mat query(1, 4);
  query << 0, 1, 0, 0;
  const TopK one = q.top_k(query, 1);
  CHECK(one.k_eff == 1);
  CHECK(one.index(0, 0) == 1);
  CHECK(one.sims(0, 0) == 1.0);

  MemoryQueue small(16, 4);
  small.push_batch(Mat::Identity(3, 4));
  CHECK(small.top_k(query, 10).k_eff == 3);

  // Two identical entries: the lower physical index comes first.
  MemoryQueue ties(4, 2);
  Mat rows(3, 2);
  rows << 1, 1, 0, 1, 1, 1;
  ties.push_batch(rows);
  Mat probe(1, 2);
  probe << 1, 1;
  const TopK t = ties.top_k(probe, 3);
  CHECK(t.index(0, 0) == 0);
  CHECK(t.index(0, 1) == 2);
  CHECK(t.index(0, 2) == 1);

  MemoryQueue empty(4, 4);
  CHECK_THROWS_AS(empty.top_k(query, 1), QueueEmptyError);
  CHECK_THROWS_AS(q.top_k(query, 0), ConfigError);
}

TEST_CASE("top-k over a full queue is the full similarity sort") {
  Rng rng(2);
  MemoryQueue q(12, 6);
  for (int i = 0; i < 5; ++i) q.push_batch(random_matrix(rng, 4, 6));
  const Mat z = random_matrix(rng, 3, 6);
  const TopK all = q.top_k(z, 12);
  REQUIRE(all.k_eff == 12);
  for (Eigen::Index r = 0; r < 3; ++r) {
    std::vector<std::size_t> got;
    for (int j = 0; j < 12; ++j) got.push_back(all.index(r, j));
    std::vector<std::size_t> perm = got;
    std::sort(perm.begin(), perm.end());
    for (std::size_t j = 0; j < 12; ++j) CHECK(perm[j] == j);

    std::vector<std::pair<double, std::size_t>> full;
    const RowVec u = z.row(r).normalized();
    for (std::size_t j = 0; j < 12; ++j) full.emplace_back(q.buffer().row(static_cast<Eigen::Index>(j)).dot(u), j);
    std::sort(full.begin(), full.end(), [](const auto& a, const auto& b) { return a.first > b.first; });
    for (std::size_t j = 0; j < 12; ++j) {
      CHECK(got[j] == full[j].second);
      CHECK(all.sims(r, static_cast<Eigen::Index>(j)) == doctest::Approx(full[j].first).epsilon(1e-12));
    }
  }
}

TEST_CASE("randomised interleavings agree with a reference deque") {
  Rng rng(3);
  int ops = 0;
  for (int run = 0; run < 4; ++run) {
    const std::size_t capacity = 3 + rng.index(9);
    const std::size_t dim = 2 + rng.index(5);
    MemoryQueue q(capacity, dim);
    ReferenceQueue ref{capacity};
    Mat last;
    for (int step = 0; step < 400; ++step, ++ops) {
      const auto choice = rng.index(10);
      if (choice < 5 || ref.entries.empty()) {
        const auto rows = static_cast<Eigen::Index>(1 + rng.index(std::min<std::size_t>(capacity, 4)));
        Mat z = random_matrix(rng, rows, static_cast<Eigen::Index>(dim));
        // Occasional duplicates exercise the tie rule.
        if (last.size() > 0 && rng.index(4) == 0) z.row(0) = last.row(0);
        q.push_batch(z);
        ref.push(z);
        last = z;
      } else if (choice < 9) {
        const int k = 1 + static_cast<int>(rng.index(capacity + 3));
        const Mat z = random_matrix(rng, 1 + static_cast<Eigen::Index>(rng.index(3)), static_cast<Eigen::Index>(dim));
        const TopK got = q.top_k(z, k);
        for (Eigen::Index r = 0; r < z.rows(); ++r) {
          const auto want = ref.top_k(z.row(r), static_cast<std::size_t>(k));
          REQUIRE(static_cast<std::size_t>(got.k_eff) == want.size());
          for (int j = 0; j < got.k_eff; ++j) {
            CHECK(got.index(r, j) == want[static_cast<std::size_t>(j)].first);
            CHECK(std::abs(got.sims(r, j) - want[static_cast<std::size_t>(j)].second) < 1e-12);
          }
        }
      } else {
        q = MemoryQueue::restore(q.checkpoint(), dim);
      }
      REQUIRE(q.fill() == ref.entries.size());
      const Mat ordered = q.ordered();
      for (std::size_t j = 0; j < ref.entries.size(); ++j) {
        for (std::size_t c = 0; c < dim; ++c) {
          CHECK(std::abs(ordered(static_cast<Eigen::Index>(j), static_cast<Eigen::Index>(c)) - ref.entries[j].row[c]) <
                1e-15);
        }
      }
    }
  }
  CHECK(ops >= 1000);
}

TEST_CASE("checkpoint round trip is bit exact") {
  Rng rng(4);
  for (int trial = 0; trial < 20; ++trial) {
    const std::size_t capacity = 1 + rng.index(16);
    MemoryQueue q(capacity, 5);
    const auto pushes = rng.index(6);
    for (std::uint64_t i = 0; i < pushes; ++i) {
      q.push_batch(random_matrix(rng, static_cast<Eigen::Index>(1 + rng.index(capacity)), 5));
    }
    const auto bytes = q.checkpoint();
    const MemoryQueue back = MemoryQueue::restore(bytes);
    CHECK(back == q);
    CHECK(back.cursor() == q.cursor());
    CHECK(back.fill() == q.fill());
    CHECK(back.checkpoint() == bytes);
  }
}

TEST_CASE("restore diagnostics") {
  Rng rng(5);
  MemoryQueue q(6, 4);
  q.push_batch(random_matrix(rng, 4, 4));
  auto bytes = q.checkpoint();

  CHECK_THROWS_AS(MemoryQueue::restore(bytes, 8), CheckpointError);
  CHECK_NOTHROW(MemoryQueue::restore(bytes, 4));

  auto truncated = bytes;
  truncated.resize(truncated.size() - 9);
  CHECK_THROWS_AS(MemoryQueue::restore(truncated), CheckpointError);

  auto flipped = bytes;
  flipped[60] ^= 0x10;
  CHECK_THROWS_AS(MemoryQueue::restore(flipped), CheckpointError);

  auto version = bytes;
  version[8] = 2;
  CHECK_THROWS_WITH_AS(MemoryQueue::restore(version), doctest::Contains("version"), CheckpointError);

  auto magic = bytes;
  magic[0] = 'X';
  CHECK_THROWS_AS(MemoryQueue::restore(magic), CheckpointError);
}

TEST_CASE("pushed rows are copies") {
  Rng rng(6);
  MemoryQueue q(4, 3);
  Mat z = random_matrix(rng, 2, 3);
  q.push_batch(z);
  const Mat before = q.buffer();
  z.setConstant(5.0);
  CHECK(q.buffer() == before);
}
