#include "oracles.hpp"

#include "unimatch/errors.hpp"
#include "unimatch/matching.hpp"

#include <doctest.h>

#include <numeric>
#include <random>

using namespace unimatch;
using namespace unimatch::matching;

namespace {

PartialPermutation random_partial(std::mt19937_64& rng, int m, int d) {
  std::vector<int> cols(static_cast<std::size_t>(d));
  std::iota(cols.begin(), cols.end(), 0);
  std::shuffle(cols.begin(), cols.end(), rng);
  cols.resize(static_cast<std::size_t>(m));
  return PartialPermutation(cols, d);
}

BinaryMatrix identity(int n) { return BinaryMatrix::Identity(n, n); }

}  // namespace

TEST_CASE("partial permutations") {
  const PartialPermutation p({2, 0}, 3);
  BinaryMatrix expected(2, 3);
  expected << 0, 0, 1, 1, 0, 0;
  CHECK(p.matrix() == expected);
  CHECK(PartialPermutation::from_matrix(expected) == p);
  CHECK_THROWS_AS(PartialPermutation({0, 0}, 3), Error);
  CHECK_THROWS_AS(PartialPermutation({3}, 3), Error);
  expected(0, 0) = 1;
  CHECK_THROWS_AS(PartialPermutation::from_matrix(expected), Error);
}

TEST_CASE("Hungarian extraction") {
  SUBCASE("permutation input is returned unchanged") {
    Eigen::MatrixXd x = Eigen::MatrixXd::Zero(4, 4);
    const std::vector<int> perm{2, 0, 3, 1};
    for (int i = 0; i < 4; ++i) x(i, perm[static_cast<std::size_t>(i)]) = 1.0;
    CHECK(extract_matching(x).matching.assignment() == perm);
  }

  SUBCASE("3x3 example against all 6 permutations") {
    Eigen::MatrixXd s(3, 3);
    s << 0.9, 0.1, 0.2, 0.8, 0.7, 0.1, 0.1, 0.2, 0.6;
    const Extraction e = extract_matching(s);
    CHECK(e.matching.assignment() == std::vector<int>{0, 1, 2});
    CHECK(e.total_score == doctest::Approx(2.2).epsilon(1e-12));
    std::vector<int> perm{0, 1, 2};
    double best = -1.0;
    do {
      best = std::max(best, s(0, perm[0]) + s(1, perm[1]) + s(2, perm[2]));
    } while (std::next_permutation(perm.begin(), perm.end()));
    CHECK(e.total_score == doctest::Approx(best).epsilon(1e-12));
  }

  SUBCASE("ties resolve to the identity") {
    CHECK(extract_matching(Eigen::MatrixXd::Constant(4, 4, 0.5)).matching.assignment() ==
          std::vector<int>{0, 1, 2, 3});
    CHECK(extract_matching(Eigen::MatrixXd::Constant(3, 5, 0.5)).matching.assignment() ==
          std::vector<int>{0, 1, 2});
  }

  SUBCASE("random rectangular matrices match brute force") {
    std::mt19937_64 rng(31);
    std::uniform_real_distribution<double> u(0.0, 1.0);
    for (int trial = 0; trial < 60; ++trial) {
      const int d = 1 + trial % 6;
      const int m = 1 + static_cast<int>(rng() % static_cast<std::uint64_t>(d));
      Eigen::MatrixXd s(m, d);
      for (Eigen::Index i = 0; i < s.size(); ++i) s(i) = u(rng);
      const Extraction e = extract_matching(s);
      const oracle::BestAssignment best = oracle::brute_force_assignment(s);
      double total = 0.0;
      for (int i = 0; i < m; ++i) total += s(i, e.matching[i]);
      CHECK(total == doctest::Approx(best.total).epsilon(1e-12));
      CHECK(e.matching.assignment() == best.assignment);
    }
  }

  SUBCASE("errors") {
    CHECK_THROWS_AS(extract_matching(Eigen::MatrixXd::Ones(3, 2)), Error);
    Eigen::MatrixXd bad = Eigen::MatrixXd::Ones(2, 2);
    bad(0, 1) = std::numeric_limits<double>::quiet_NaN();
    CHECK_THROWS_AS(extract_matching(bad), Error);
  }
}

TEST_CASE("pairwise composition") {
  const PartialPermutation a({0, 1, 2}, 4);
  CHECK(compose_pairwise(a, a) == identity(3));

  const PartialPermutation b({1, 2, 3}, 4);
  const BinaryMatrix ab = compose_pairwise(a, b);
  CHECK(ab.sum() == 2);
  CHECK(ab(1, 0) == 1);
  CHECK(ab(2, 1) == 1);
  CHECK(compose_pairwise(a, b).transpose() == compose_pairwise(b, a));

  std::mt19937_64 rng(37);
  for (int trial = 0; trial < 20; ++trial) {
    const PartialPermutation x = random_partial(rng, 4, 7), y = random_partial(rng, 5, 7);
    CHECK(compose_pairwise(x, y) == (x.matrix() * y.matrix().transpose()).eval());
  }
  CHECK_THROWS_AS(compose_pairwise(PartialPermutation({0}, 2), PartialPermutation({0}, 3)), Error);
}

TEST_CASE("cycle consistency verification") {
  std::mt19937_64 rng(41);
  for (int trial = 0; trial < 50; ++trial) {
    MultiMatching mm;
    const int d = 2 + trial % 7;
    const int n = 1 + trial % 6;
    for (int j = 0; j < n; ++j)
      mm.instances.emplace_back("i" + std::to_string(j),
                                random_partial(rng, 1 + static_cast<int>(rng() % static_cast<std::uint64_t>(d)), d));
    CHECK(verify_cycle_consistency(compose_all(mm), n).consistent);
  }

  MultiMatching one;
  one.instances.emplace_back("a", PartialPermutation({1, 0}, 2));
  CHECK(verify_cycle_consistency(compose_all(one), 1).consistent);

  // Three instances with the same two points; X_kl swaps them.
  PairwiseSet set;
  for (int j = 0; j < 3; ++j)
    for (int k = 0; k < 3; ++k) set[{j, k}] = identity(2);
  BinaryMatrix swap(2, 2);
  swap << 0, 1, 1, 0;
  set[{1, 2}] = swap;
  set[{2, 1}] = swap;
  const ConsistencyResult r = verify_cycle_consistency(set, 3);
  CHECK_FALSE(r.consistent);
  REQUIRE(r.violation.has_value());
  CHECK(r.violation->property == 3);
  const std::set<int> involved{r.violation->j, r.violation->k, r.violation->l};
  CHECK(involved == std::set<int>{0, 1, 2});

  set[{0, 0}] = swap;
  const ConsistencyResult self = verify_cycle_consistency(set, 3);
  CHECK_FALSE(self.consistent);
  CHECK(self.violation->property == 1);

  PairwiseSet asym;
  for (int j = 0; j < 2; ++j)
    for (int k = 0; k < 2; ++k) asym[{j, k}] = identity(2);
  asym[{0, 1}] = swap;
  CHECK(verify_cycle_consistency(asym, 2).violation->property == 2);

  asym.erase({1, 0});
  CHECK_THROWS_AS(verify_cycle_consistency(asym, 2), Error);
}

TEST_CASE("cycle consistency score") {
  BinaryMatrix swapped = identity(5);
  swapped.row(1).swap(swapped.row(2));
  CHECK(cycle_consistency_score(identity(5), identity(5), swapped) == 60.0);
  CHECK(cycle_consistency_score(identity(5), identity(5), identity(5)) == 100.0);
  CHECK_THROWS_AS(cycle_consistency_score(identity(2), identity(2), BinaryMatrix::Zero(2, 2)), Error);

  std::mt19937_64 rng(43);
  for (int trial = 0; trial < 50; ++trial) {
    const PartialPermutation a = random_partial(rng, 4, 6), b = random_partial(rng, 5, 6), c = random_partial(rng, 3, 6);
    bool shared = false;
    for (int x : a.assignment())
      for (int y : b.assignment())
        for (int z : c.assignment()) shared = shared || (x == y && y == z);
    if (!shared) {
      CHECK_THROWS_AS(triple_cycle_score(a, b, c), Error);
      continue;
    }
    CHECK(triple_cycle_score(a, b, c) == 100.0);
    const auto r = restrict_to_common_support(a, b, c);
    CHECK(r[0].rows() == r[1].rows());
    CHECK(r[1].rows() == r[2].rows());
  }
}

TEST_CASE("matching accuracy") {
  std::vector<int> ten(10);
  std::iota(ten.begin(), ten.end(), 0);
  const PartialPermutation gt(ten, 10);
  CHECK(matching_accuracy(gt, gt) == 100.0);
  std::vector<int> one_off = ten;
  one_off[3] = 9;
  one_off[9] = 3;
  CHECK(matching_accuracy(PartialPermutation(one_off, 10), gt) == 80.0);

  const PartialPermutation eleven({0, 1, 2, 3, 4, 5, 6, 7, 8, 10}, 11);
  CHECK(matching_accuracy(eleven, PartialPermutation(ten, 11)) == 90.0);

  std::mt19937_64 rng(47);
  const PartialPermutation r = random_partial(rng, 5, 5);
  const PartialPermutation id({0, 1, 2, 3, 4}, 5);
  int same = 0;
  for (int i = 0; i < 5; ++i) same += r[i] == i ? 1 : 0;
  CHECK(matching_accuracy(r, id) == 100.0 * same / 5.0);
  CHECK_THROWS_AS(matching_accuracy(id, PartialPermutation({0, 1}, 5)), Error);
}
