#pragma once

#include <Eigen/Core>

#include <cstdint>
#include <iosfwd>
#include <span>
#include <vector>

namespace rgmm {

struct TreeConfig {
  int max_splits = 400;
  int min_leaf = 5;
  /// Switch features with more than `quantile_min_distinct` distinct values to
  /// `quantile_bins` quantile thresholds instead of every midpoint.
  bool quantile_candidates = false;
  int quantile_min_distinct = 1 << 14;
  int quantile_bins = 256;

  void validate() const;
};

/// 1 - sum p^2. Throws when the proportions are negative or do not sum to 1 within 1e-9.
double gini(const Eigen::Ref<const Eigen::VectorXd>& proportions);

struct TreeNode {
  int feature = -1;  // -1 for leaves
  double threshold = 0.0;
  int left = -1;
  int right = -1;
  Eigen::VectorXd confidence;  // class-weight proportions at this node

  bool is_leaf() const { return feature < 0; }
};

class DecisionTree {
 public:
  DecisionTree() = default;
  DecisionTree(int classes, int features, std::vector<TreeNode> nodes);

  int classes() const { return classes_; }
  int features() const { return features_; }
  int split_count() const;
  const std::vector<TreeNode>& nodes() const { return nodes_; }

  /// Index of the leaf that `x` routes to; x[feature] <= threshold goes left.
  template <typename Derived>
  int leaf_index(const Eigen::DenseBase<Derived>& x) const {
    int at = 0;
    while (!nodes_[at].is_leaf()) {
      const TreeNode& n = nodes_[at];
      at = x(n.feature) <= n.threshold ? n.left : n.right;
    }
    return at;
  }

  template <typename Derived>
  const Eigen::VectorXd& confidence(const Eigen::DenseBase<Derived>& x) const {
    return nodes_[leaf_index(x)].confidence;
  }

  /// Leaf confidence for every row of `x` (n x classes).
  Eigen::MatrixXd confidence_rows(const Eigen::Ref<const Eigen::MatrixXd>& x) const;

  void write(std::ostream& out) const;
  static DecisionTree read(std::istream& in);

 private:
  int classes_ = 0;
  int features_ = 0;
  std::vector<TreeNode> nodes_;
};

/// Per-feature row orderings of a feature matrix, computed once and reused
/// by every tree trained on (a resampling of) the same rows.
class FeatureOrder {
 public:
  explicit FeatureOrder(const Eigen::Ref<const Eigen::MatrixXd>& features);
  std::span<const std::int32_t> column(Eigen::Index f) const {
    return {order_.data() + f * rows_, static_cast<std::size_t>(rows_)};
  }
  Eigen::Index rows() const { return rows_; }
  Eigen::Index cols() const { return cols_; }

 private:
  Eigen::Index rows_ = 0;
  Eigen::Index cols_ = 0;
  std::vector<std::int32_t> order_;
};

/// Training rows for one tree. `counts` is the multiplicity of each row
/// (rows with count 0 are ignored); empty means every row once.
struct TreeTrainingSet {
  const Eigen::MatrixXd& features;
  std::span<const int> labels;
  std::span<const double> weights;
  std::span<const int> counts = {};
  int classes = 2;
};

/// Greedy weighted-GINI CART grown best-first until the split budget, purity
/// or the minimum leaf size stops it. Leaf confidences are class-weight proportions.
/// Ties between equal splits go to the lowest feature index, then the lowest threshold.
DecisionTree train_tree(const TreeTrainingSet& set, const TreeConfig& cfg, const FeatureOrder* presorted = nullptr);

/// Sum of weights of rows whose argmax confidence differs from their label.
double weighted_error(const DecisionTree& tree, const Eigen::Ref<const Eigen::MatrixXd>& features,
                      std::span<const int> labels, std::span<const double> weights);

/// Lowest index among the maximal entries.
int argmax_label(const Eigen::Ref<const Eigen::VectorXd>& scores);

}  // namespace rgmm
