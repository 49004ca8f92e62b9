#include "unimatch/matching.hpp"

#include "unimatch/errors.hpp"

#include <algorithm>
#include <limits>
#include <set>

namespace unimatch::matching {

PartialPermutation::PartialPermutation(std::vector<int> assignment, int universe_size)
    : assignment_(std::move(assignment)), universe_size_(universe_size) {
  if (universe_size_ < 0) throw Error(ErrorKind::Data, "negative universe size");
  std::vector<char> used(static_cast<std::size_t>(universe_size_), 0);
  for (std::size_t i = 0; i < assignment_.size(); ++i) {
    const int a = assignment_[i];
    if (a < 0 || a >= universe_size_)
      throw Error(ErrorKind::Data, "row " + std::to_string(i) + " maps outside the universe");
    if (used[static_cast<std::size_t>(a)] != 0)
      throw Error(ErrorKind::Data, "universe point " + std::to_string(a) + " assigned twice");
    used[static_cast<std::size_t>(a)] = 1;
  }
}

PartialPermutation PartialPermutation::from_matrix(const BinaryMatrix& x) {
  std::vector<int> assignment(static_cast<std::size_t>(x.rows()), -1);
  for (Eigen::Index i = 0; i < x.rows(); ++i) {
    int ones = 0;
    for (Eigen::Index k = 0; k < x.cols(); ++k) {
      if (x(i, k) != 0 && x(i, k) != 1) throw Error(ErrorKind::Data, "matching matrix entries must be 0 or 1");
      if (x(i, k) == 1) {
        ++ones;
        assignment[static_cast<std::size_t>(i)] = static_cast<int>(k);
      }
    }
    if (ones != 1) throw Error(ErrorKind::Data, "row " + std::to_string(i) + " does not sum to one");
  }
  return PartialPermutation(std::move(assignment), static_cast<int>(x.cols()));
}

BinaryMatrix PartialPermutation::matrix() const {
  BinaryMatrix x = BinaryMatrix::Zero(rows(), universe_size_);
  for (int i = 0; i < rows(); ++i) x(i, assignment_[static_cast<std::size_t>(i)]) = 1;
  return x;
}

Extraction extract_matching(const Eigen::MatrixXd& scores) {
  const int n = static_cast<int>(scores.rows());
  const int m = static_cast<int>(scores.cols());
  if (n > m)
    throw Error(ErrorKind::Infeasible, "cannot match " + std::to_string(n) + " keypoints injectively into " +
                                           std::to_string(m) + " universe points");
  if (!scores.allFinite()) throw Error(ErrorKind::Numerical, "non-finite matching scores");

  // Shortest augmenting paths with potentials (1-based, column 0 is a sentinel).
  const double inf = std::numeric_limits<double>::infinity();
  std::vector<double> u(static_cast<std::size_t>(n) + 1, 0.0), v(static_cast<std::size_t>(m) + 1, 0.0);
  std::vector<int> p(static_cast<std::size_t>(m) + 1, 0), way(static_cast<std::size_t>(m) + 1, 0);
  auto cost = [&scores](int i, int j) { return 1.0 - scores(i - 1, j - 1); };

  for (int i = 1; i <= n; ++i) {
    p[0] = i;
    int j0 = 0;
    std::vector<double> minv(static_cast<std::size_t>(m) + 1, inf);
    std::vector<char> used(static_cast<std::size_t>(m) + 1, 0);
    do {
      used[static_cast<std::size_t>(j0)] = 1;
      const int i0 = p[static_cast<std::size_t>(j0)];
      double delta = inf;
      int j1 = 0;
      for (int j = 1; j <= m; ++j) {
        if (used[static_cast<std::size_t>(j)] != 0) continue;
        const double cur = cost(i0, j) - u[static_cast<std::size_t>(i0)] - v[static_cast<std::size_t>(j)];
        if (cur < minv[static_cast<std::size_t>(j)]) {
          minv[static_cast<std::size_t>(j)] = cur;
          way[static_cast<std::size_t>(j)] = j0;
        }
        const double mv = minv[static_cast<std::size_t>(j)];
        const bool free_j = p[static_cast<std::size_t>(j)] == 0;
        if (mv < delta || (mv == delta && j1 != 0 && free_j && p[static_cast<std::size_t>(j1)] != 0)) {
          delta = mv;
          j1 = j;
        }
      }
      for (int j = 0; j <= m; ++j) {
        if (used[static_cast<std::size_t>(j)] != 0) {
          u[static_cast<std::size_t>(p[static_cast<std::size_t>(j)])] += delta;
          v[static_cast<std::size_t>(j)] -= delta;
        } else {
          minv[static_cast<std::size_t>(j)] -= delta;
        }
      }
      j0 = j1;
    } while (p[static_cast<std::size_t>(j0)] != 0);
    do {
      const int j1 = way[static_cast<std::size_t>(j0)];
      p[static_cast<std::size_t>(j0)] = p[static_cast<std::size_t>(j1)];
      j0 = j1;
    } while (j0 != 0);
  }

  std::vector<int> assignment(static_cast<std::size_t>(n), -1);
  for (int j = 1; j <= m; ++j)
    if (p[static_cast<std::size_t>(j)] != 0) assignment[static_cast<std::size_t>(p[static_cast<std::size_t>(j)] - 1)] = j - 1;
  double total = 0.0;
  for (int i = 0; i < n; ++i) total += scores(i, assignment[static_cast<std::size_t>(i)]);
  return {PartialPermutation(std::move(assignment), m), total};
}

BinaryMatrix compose_pairwise(const PartialPermutation& xj, const PartialPermutation& xk) {
  if (xj.universe_size() != xk.universe_size())
    throw Error(ErrorKind::Shape, "compose_pairwise: universe sizes differ (" + std::to_string(xj.universe_size()) +
                                      " vs " + std::to_string(xk.universe_size()) + ")");
  return xj.matrix() * xk.matrix().transpose();
}

PairwiseSet compose_all(const MultiMatching& multi) {
  PairwiseSet out;
  const int n = static_cast<int>(multi.instances.size());
  for (int j = 0; j < n; ++j)
    for (int k = 0; k < n; ++k)
      out[{j, k}] = compose_pairwise(multi.instances[static_cast<std::size_t>(j)].second,
                                     multi.instances[static_cast<std::size_t>(k)].second);
  return out;
}

ConsistencyResult verify_cycle_consistency(const PairwiseSet& pairwise, int n) {
  auto get = [&pairwise](int j, int k) -> const BinaryMatrix& {
    auto it = pairwise.find({j, k});
    if (it == pairwise.end())
      throw Error(ErrorKind::Data, "missing pairwise matching (" + std::to_string(j) + ", " + std::to_string(k) + ")");
    return it->second;
  };
  auto fail = [](int property, int j, int k, int l) {
    return ConsistencyResult{false, Violation{property, j, k, l}};
  };

  for (int j = 0; j < n; ++j) {
    const BinaryMatrix& xjj = get(j, j);
    if (xjj.rows() != xjj.cols() || xjj != BinaryMatrix::Identity(xjj.rows(), xjj.cols())) return fail(1, j, j, j);
  }
  for (int j = 0; j < n; ++j)
    for (int k = j + 1; k < n; ++k) {
      const BinaryMatrix& a = get(j, k);
      const BinaryMatrix& b = get(k, j);
      if (a.rows() != b.cols() || a.cols() != b.rows() || a != b.transpose()) return fail(2, j, k, k);
    }
  for (int j = 0; j < n; ++j)
    for (int k = 0; k < n; ++k)
      for (int l = 0; l < n; ++l) {
        const BinaryMatrix& jk = get(j, k);
        const BinaryMatrix& kl = get(k, l);
        const BinaryMatrix& jl = get(j, l);
        if (jk.cols() != kl.rows() || jk.rows() != jl.rows() || kl.cols() != jl.cols()) return fail(3, j, k, l);
        const BinaryMatrix prod = jk * kl;
        if ((prod.array() > jl.array()).any()) return fail(3, j, k, l);
      }
  return {};
}

double cycle_consistency_score(const BinaryMatrix& xjk, const BinaryMatrix& xjl, const BinaryMatrix& xkl) {
  if (xjk.rows() != xjl.rows() || xjk.cols() != xkl.rows() || xjl.cols() != xkl.cols())
    throw Error(ErrorKind::Shape, "cycle_consistency_score: incompatible matching shapes");
  const BinaryMatrix composed = xjk.transpose() * xjl;
  int m_kl = 0;
  int m_cycle = 0;
  for (Eigen::Index r = 0; r < xkl.rows(); ++r) {
    if (xkl.row(r).sum() == 0) continue;
    ++m_kl;
    if (composed.row(r) == xkl.row(r)) ++m_cycle;
  }
  if (m_kl == 0) throw Error(ErrorKind::UndefinedScore, "cycle consistency score undefined: no matched points");
  return 100.0 * static_cast<double>(m_cycle) / static_cast<double>(m_kl);
}

std::array<PartialPermutation, 3> restrict_to_common_support(const PartialPermutation& xj,
                                                             const PartialPermutation& xk,
                                                             const PartialPermutation& xl) {
  const int d = xj.universe_size();
  if (xk.universe_size() != d || xl.universe_size() != d)
    throw Error(ErrorKind::Shape, "restrict_to_common_support: universe sizes differ");
  std::vector<int> hits(static_cast<std::size_t>(d), 0);
  for (const PartialPermutation* x : {&xj, &xk, &xl})
    for (int a : x->assignment()) ++hits[static_cast<std::size_t>(a)];
  auto restrict = [&hits, d](const PartialPermutation& x) {
    std::vector<int> kept;
    for (int a : x.assignment())
      if (hits[static_cast<std::size_t>(a)] == 3) kept.push_back(a);
    return PartialPermutation(std::move(kept), d);
  };
  return {restrict(xj), restrict(xk), restrict(xl)};
}

double triple_cycle_score(const PartialPermutation& xj, const PartialPermutation& xk, const PartialPermutation& xl) {
  const auto [rj, rk, rl] = restrict_to_common_support(xj, xk, xl);
  return cycle_consistency_score(compose_pairwise(rj, rk), compose_pairwise(rj, rl), compose_pairwise(rk, rl));
}

double matching_accuracy(const PartialPermutation& predicted, const PartialPermutation& gt) {
  if (predicted.rows() != gt.rows() || predicted.universe_size() != gt.universe_size())
    throw Error(ErrorKind::Shape, "matching_accuracy: shape mismatch");
  if (gt.rows() == 0) throw Error(ErrorKind::Shape, "matching_accuracy: empty matching");
  int agree = 0;
  for (int i = 0; i < gt.rows(); ++i) agree += predicted[i] == gt[i] ? 1 : 0;
  return 100.0 * static_cast<double>(agree) / static_cast<double>(gt.rows());
}

}  // namespace unimatch::matching
