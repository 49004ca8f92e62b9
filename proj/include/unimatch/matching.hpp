#pragma once

#include <Eigen/Dense>

#include <array>
#include <cstdint>
#include <map>
#include <optional>
#include <string>
#include <utility>
#include <vector>

namespace unimatch::matching {

using BinaryMatrix = Eigen::MatrixXi;

/// Injective map from an instance's keypoints to the d universe points: every
/// row of the m×d matrix sums to one, every column to at most one.
class PartialPermutation {
 public:
  PartialPermutation() = default;
  /// Throws a data error if `assignment` is not injective into [0, universe_size).
  PartialPermutation(std::vector<int> assignment, int universe_size);

  static PartialPermutation from_matrix(const BinaryMatrix& x);

  int rows() const { return static_cast<int>(assignment_.size()); }
  int universe_size() const { return universe_size_; }
  int operator[](int row) const { return assignment_[static_cast<std::size_t>(row)]; }
  const std::vector<int>& assignment() const { return assignment_; }

  BinaryMatrix matrix() const;

  bool operator==(const PartialPermutation&) const = default;

 private:
  std::vector<int> assignment_;
  int universe_size_ = 0;
};

struct MultiMatching {
  std::vector<std::pair<std::string, PartialPermutation>> instances;
};

struct Extraction {
  PartialPermutation matching;
  double total_score = 0.0;
};

/// Maximizes Σ scores(i, π(i)) over injective π by the Hungarian method on
/// 1 − scores. Among equally cheap augmenting paths the search prefers an
/// unassigned universe point, then the lowest universe index.
Extraction extract_matching(const Eigen::MatrixXd& scores);

/// X_jk = X_j·X_kᵀ.
BinaryMatrix compose_pairwise(const PartialPermutation& xj, const PartialPermutation& xk);

/// Pairwise matchings keyed by (j, k) instance positions; must contain every ordered pair.
using PairwiseSet = std::map<std::pair<int, int>, BinaryMatrix>;

PairwiseSet compose_all(const MultiMatching& multi);

struct Violation {
  int property = 0;  // 1: X_jj = I, 2: X_jk = X_kjᵀ, 3: X_jk·X_kl ⪯ X_jl
  int j = 0, k = 0, l = 0;
};

struct ConsistencyResult {
  bool consistent = true;
  std::optional<Violation> violation;
};

/// Checks the three cycle-consistency properties for `n` instances.
ConsistencyResult verify_cycle_consistency(const PairwiseSet& pairwise, int n);

/// Percentage of rows of X_kl that agree with X′_kl = X_jkᵀ·X_jl. Rows of X_kl
/// without a match do not count. Throws when X_kl has no matched rows.
double cycle_consistency_score(const BinaryMatrix& xjk, const BinaryMatrix& xjl, const BinaryMatrix& xkl);

/// Restricts three instance-to-universe matchings to keypoints whose universe
/// point is matched in all three instances.
std::array<PartialPermutation, 3> restrict_to_common_support(const PartialPermutation& xj,
                                                             const PartialPermutation& xk,
                                                             const PartialPermutation& xl);

/// Cycle score of the triple (j, k, l) built from instance-to-universe matchings
/// restricted to their common universe support. Empty support is an error.
double triple_cycle_score(const PartialPermutation& xj, const PartialPermutation& xk, const PartialPermutation& xl);

/// 100 × fraction of rows where predicted and ground truth agree.
double matching_accuracy(const PartialPermutation& predicted, const PartialPermutation& gt);

}  // namespace unimatch::matching
