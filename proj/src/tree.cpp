#include "rgmm/tree.hpp"

#include <algorithm>
#include <cmath>
#include <istream>
#include <limits>
#include <numeric>
#include <ostream>
#include <queue>
#include <string>

#include "rgmm/error.hpp"

namespace rgmm {

void TreeConfig::validate() const {
  if (max_splits < 1) throw Error(ErrorCode::InvalidConfig, "tree max_splits must be >= 1");
  if (min_leaf < 1) throw Error(ErrorCode::InvalidConfig, "tree min_leaf must be >= 1");
  if (quantile_candidates && (quantile_bins < 2 || quantile_min_distinct < 2)) {
    throw Error(ErrorCode::InvalidConfig, "tree quantile settings out of range");
  }
}

double gini(const Eigen::Ref<const Eigen::VectorXd>& proportions) {
  if ((proportions.array() < 0.0).any() || std::abs(proportions.sum() - 1.0) > 1e-9) {
    throw Error(ErrorCode::InvalidArgument, "gini: proportions must be non-negative and sum to 1");
  }
  return 1.0 - proportions.squaredNorm();
}

int argmax_label(const Eigen::Ref<const Eigen::VectorXd>& scores) {
  int best = 0;
  for (int k = 1; k < scores.size(); ++k) {
    if (scores[k] > scores[best]) best = k;
  }
  return best;
}

DecisionTree::DecisionTree(int classes, int features, std::vector<TreeNode> nodes)
    : classes_(classes), features_(features), nodes_(std::move(nodes)) {
  if (nodes_.empty()) throw Error(ErrorCode::InvalidArgument, "tree has no nodes");
  const int n = static_cast<int>(nodes_.size());
  for (const auto& node : nodes_) {
    if (node.confidence.size() != classes_) throw Error(ErrorCode::DimensionMismatch, "tree node confidence size");
    if (!node.is_leaf()) {
      if (node.feature >= features_ || node.left <= 0 || node.right <= 0 || node.left >= n || node.right >= n) {
        throw Error(ErrorCode::MalformedFile, "tree node references out of range");
      }
    }
  }
}

int DecisionTree::split_count() const {
  return static_cast<int>(std::count_if(nodes_.begin(), nodes_.end(), [](const TreeNode& n) { return !n.is_leaf(); }));
}

Eigen::MatrixXd DecisionTree::confidence_rows(const Eigen::Ref<const Eigen::MatrixXd>& x) const {
  if (x.cols() != features_) throw Error(ErrorCode::DimensionMismatch, "tree: feature count mismatch");
  Eigen::MatrixXd out(x.rows(), classes_);
  for (Eigen::Index i = 0; i < x.rows(); ++i) out.row(i) = nodes_[leaf_index(x.row(i))].confidence.transpose();
  return out;
}

void DecisionTree::write(std::ostream& out) const {
  const auto old = out.precision(std::numeric_limits<double>::max_digits10);
  out << "tree " << classes_ << ' ' << features_ << ' ' << nodes_.size() << '\n';
  for (const auto& n : nodes_) {
    if (n.is_leaf()) {
      out << "leaf";
    } else {
      out << "split " << n.feature << ' ' << n.threshold << ' ' << n.left << ' ' << n.right;
    }
    for (Eigen::Index k = 0; k < n.confidence.size(); ++k) out << ' ' << n.confidence[k];
    out << '\n';
  }
  out.precision(old);
}

DecisionTree DecisionTree::read(std::istream& in) {
  auto fail = [](const std::string& what) { return Error(ErrorCode::MalformedFile, "tree: " + what); };
  std::string token;
  int classes = 0, features = 0;
  std::size_t count = 0;
  if (!(in >> token) || token != "tree" || !(in >> classes >> features >> count) || classes < 1 || count < 1) {
    throw fail("bad header");
  }
  std::vector<TreeNode> nodes(count);
  for (auto& n : nodes) {
    if (!(in >> token)) throw fail("truncated");
    if (token == "split") {
      if (!(in >> n.feature >> n.threshold >> n.left >> n.right) || n.feature < 0) throw fail("bad split");
    } else if (token != "leaf") {
      throw fail("unknown node kind '" + token + "'");
    }
    n.confidence.resize(classes);
    for (int k = 0; k < classes; ++k) {
      if (!(in >> n.confidence[k])) throw fail("bad confidence");
    }
  }
  return DecisionTree(classes, features, std::move(nodes));
}

FeatureOrder::FeatureOrder(const Eigen::Ref<const Eigen::MatrixXd>& features)
    : rows_(features.rows()), cols_(features.cols()), order_(static_cast<std::size_t>(rows_ * cols_)) {
  for (Eigen::Index f = 0; f < cols_; ++f) {
    auto begin = order_.begin() + f * rows_;
    std::iota(begin, begin + rows_, 0);
    const auto col = features.col(f);
    std::stable_sort(begin, begin + rows_, [&](std::int32_t a, std::int32_t b) { return col[a] < col[b]; });
  }
}

namespace {

struct Candidate {
  int feature = -1;
  double threshold = 0.0;
  double decrease = 0.0;
};

struct NodeWork {
  int id = 0;
  Eigen::Index begin = 0;  // offset inside every feature segment
  Eigen::Index end = 0;
  Candidate split;
};

struct QueueOrder {
  bool operator()(const NodeWork& a, const NodeWork& b) const {
    if (a.split.decrease != b.split.decrease) return a.split.decrease < b.split.decrease;
    return a.id > b.id;
  }
};

// Weighted impurity mass W * gini = W - sum(w_t^2) / W.
double impurity_mass(const Eigen::VectorXd& class_weight) {
  const double total = class_weight.sum();
  return total > 0.0 ? total - class_weight.squaredNorm() / total : 0.0;
}

class Grower {
 public:
  Grower(const TreeTrainingSet& set, const TreeConfig& cfg, const FeatureOrder* presorted)
      : set_(set), cfg_(cfg), features_(set.features.cols()) {
    const Eigen::Index total_rows = set.features.rows();
    if (static_cast<Eigen::Index>(set.labels.size()) != total_rows ||
        static_cast<Eigen::Index>(set.weights.size()) != total_rows ||
        (!set.counts.empty() && static_cast<Eigen::Index>(set.counts.size()) != total_rows)) {
      throw Error(ErrorCode::DimensionMismatch, "train_tree: labels/weights/counts length mismatch");
    }
    if (presorted && (presorted->rows() != total_rows || presorted->cols() != features_)) {
      throw Error(ErrorCode::DimensionMismatch, "train_tree: presorted order does not match features");
    }
    double weight_total = 0.0;
    for (Eigen::Index i = 0; i < total_rows; ++i) {
      if (count(i) <= 0) continue;
      const int t = set.labels[static_cast<std::size_t>(i)];
      if (t < 0 || t >= set.classes) throw Error(ErrorCode::InvalidArgument, "train_tree: label out of range");
      if (!(set.weights[static_cast<std::size_t>(i)] >= 0.0)) {
        throw Error(ErrorCode::InvalidArgument, "train_tree: weights must be non-negative");
      }
      weight_total += set.weights[static_cast<std::size_t>(i)];
      ++active_;
    }
    if (active_ == 0) throw Error(ErrorCode::EmptyInput, "train_tree: no training rows");
    if (!(weight_total > 0.0)) throw Error(ErrorCode::InvalidArgument, "train_tree: total weight must be positive");

    index_.resize(static_cast<std::size_t>(active_ * features_));
    for (Eigen::Index f = 0; f < features_; ++f) {
      std::int32_t* out = segment(f);
      if (presorted) {
        for (std::int32_t row : presorted->column(f)) {
          if (count(row) > 0) *out++ = row;
        }
      } else {
        for (Eigen::Index i = 0; i < total_rows; ++i) {
          if (count(i) > 0) *out++ = static_cast<std::int32_t>(i);
        }
        const auto col = set.features.col(f);
        std::stable_sort(segment(f), segment(f) + active_,
                         [&](std::int32_t a, std::int32_t b) { return col[a] < col[b]; });
      }
    }
    if (cfg.quantile_candidates) build_quantile_candidates();
    go_left_.assign(static_cast<std::size_t>(total_rows), 0);
    scratch_.resize(static_cast<std::size_t>(active_));
  }

  DecisionTree grow() {
    std::priority_queue<NodeWork, std::vector<NodeWork>, QueueOrder> queue;
    nodes_.push_back(make_node(0, active_));
    NodeWork root{0, 0, active_, {}};
    if (evaluate(root)) queue.push(root);
    int splits = 0;
    while (!queue.empty() && splits < cfg_.max_splits) {
      NodeWork work = queue.top();
      queue.pop();
      const Eigen::Index mid = partition(work);
      const int left_id = static_cast<int>(nodes_.size());
      nodes_.push_back(make_node(work.begin, mid));
      nodes_.push_back(make_node(mid, work.end));
      TreeNode& parent = nodes_[static_cast<std::size_t>(work.id)];
      parent.feature = work.split.feature;
      parent.threshold = work.split.threshold;
      parent.left = left_id;
      parent.right = left_id + 1;
      ++splits;
      NodeWork left{left_id, work.begin, mid, {}};
      NodeWork right{left_id + 1, mid, work.end, {}};
      if (evaluate(left)) queue.push(left);
      if (evaluate(right)) queue.push(right);
    }
    return DecisionTree(set_.classes, static_cast<int>(features_), std::move(nodes_));
  }

 private:
  int count(Eigen::Index row) const {
    return set_.counts.empty() ? 1 : set_.counts[static_cast<std::size_t>(row)];
  }
  std::int32_t* segment(Eigen::Index f) { return index_.data() + f * active_; }
  double value(std::int32_t row, Eigen::Index f) const { return set_.features(row, f); }

  TreeNode make_node(Eigen::Index begin, Eigen::Index end) {
    Eigen::VectorXd w = Eigen::VectorXd::Zero(set_.classes);
    const std::int32_t* rows = segment(0);
    for (Eigen::Index p = begin; p < end; ++p) {
      w[set_.labels[static_cast<std::size_t>(rows[p])]] += set_.weights[static_cast<std::size_t>(rows[p])];
    }
    TreeNode node;
    const double total = w.sum();
    node.confidence = total > 0.0 ? Eigen::VectorXd(w / total)
                                  : Eigen::VectorXd::Constant(set_.classes, 1.0 / set_.classes);
    return node;
  }

  /// Finds the best split of a node; false when the node must stay a leaf.
  bool evaluate(NodeWork& work) {
    const std::int32_t* first = segment(0);
    Eigen::VectorXd node_w = Eigen::VectorXd::Zero(set_.classes);
    long node_count = 0;
    for (Eigen::Index p = work.begin; p < work.end; ++p) {
      const auto row = static_cast<std::size_t>(first[p]);
      node_w[set_.labels[row]] += set_.weights[row];
      node_count += count(first[p]);
    }
    if (node_count < 2L * cfg_.min_leaf) return false;
    const double parent_mass = impurity_mass(node_w);
    if (!(parent_mass > 0.0)) return false;  // pure

    Candidate best;
    double best_mass = std::numeric_limits<double>::infinity();
    Eigen::VectorXd left_w(set_.classes);
    for (Eigen::Index f = 0; f < features_; ++f) {
      const std::int32_t* rows = segment(f);
      const std::vector<double>* allowed = allowed_.empty() ? nullptr : &allowed_[static_cast<std::size_t>(f)];
      std::size_t allowed_at = 0;
      left_w.setZero();
      long left_count = 0;
      for (Eigen::Index p = work.begin; p + 1 < work.end; ++p) {
        const std::int32_t row = rows[p];
        left_w[set_.labels[static_cast<std::size_t>(row)]] += set_.weights[static_cast<std::size_t>(row)];
        left_count += count(row);
        const double a = value(row, f);
        const double b = value(rows[p + 1], f);
        if (!(a < b)) continue;
        if (left_count < cfg_.min_leaf) continue;
        if (node_count - left_count < cfg_.min_leaf) break;
        if (allowed && !allowed->empty()) {
          while (allowed_at < allowed->size() && (*allowed)[allowed_at] < a) ++allowed_at;
          if (allowed_at == allowed->size() || (*allowed)[allowed_at] != a) continue;
        }
        const double mass = impurity_mass(left_w) + impurity_mass(node_w - left_w);
        if (mass < best_mass) {
          best_mass = mass;
          double mid = 0.5 * (a + b);
          if (!(mid < b)) mid = a;
          best = {static_cast<int>(f), mid, parent_mass - mass};
        }
      }
    }
    if (best.feature < 0 || !(best.decrease > 0.0)) return false;
    work.split = best;
    return true;
  }

  /// Stable partition of every feature segment of the node; returns the split point.
  Eigen::Index partition(const NodeWork& work) {
    const int f_split = work.split.feature;
    const double thr = work.split.threshold;
    const std::int32_t* rows = segment(f_split);
    for (Eigen::Index p = work.begin; p < work.end; ++p) {
      go_left_[static_cast<std::size_t>(rows[p])] = value(rows[p], f_split) <= thr ? 1 : 0;
    }
    Eigen::Index mid = work.begin;
    for (Eigen::Index f = 0; f < features_; ++f) {
      std::int32_t* seg = segment(f);
      Eigen::Index l = work.begin;
      std::size_t r = 0;
      for (Eigen::Index p = work.begin; p < work.end; ++p) {
        if (go_left_[static_cast<std::size_t>(seg[p])]) {
          seg[l++] = seg[p];
        } else {
          scratch_[r++] = seg[p];
        }
      }
      std::copy(scratch_.begin(), scratch_.begin() + static_cast<std::ptrdiff_t>(r), seg + l);
      mid = l;
    }
    return mid;
  }

  void build_quantile_candidates() {
    allowed_.resize(static_cast<std::size_t>(features_));
    for (Eigen::Index f = 0; f < features_; ++f) {
      const std::int32_t* rows = segment(f);
      Eigen::Index distinct = 1;
      for (Eigen::Index p = 1; p < active_; ++p) {
        if (value(rows[p - 1], f) < value(rows[p], f)) ++distinct;
      }
      if (distinct <= cfg_.quantile_min_distinct) continue;
      auto& out = allowed_[static_cast<std::size_t>(f)];
      for (int k = 1; k < cfg_.quantile_bins; ++k) {
        const Eigen::Index pos = k * active_ / cfg_.quantile_bins;
        const double v = value(rows[pos], f);
        if (out.empty() || out.back() < v) out.push_back(v);
      }
    }
  }

  const TreeTrainingSet& set_;
  const TreeConfig& cfg_;
  Eigen::Index features_;
  Eigen::Index active_ = 0;
  std::vector<std::int32_t> index_;
  std::vector<char> go_left_;
  std::vector<std::int32_t> scratch_;
  std::vector<std::vector<double>> allowed_;
  std::vector<TreeNode> nodes_;
};

}  // namespace

DecisionTree train_tree(const TreeTrainingSet& set, const TreeConfig& cfg, const FeatureOrder* presorted) {
  cfg.validate();
  if (set.classes < 1) throw Error(ErrorCode::InvalidArgument, "train_tree: need at least one class");
  if (set.features.rows() == 0) throw Error(ErrorCode::EmptyInput, "train_tree: no training rows");
  return Grower(set, cfg, presorted).grow();
}

double weighted_error(const DecisionTree& tree, const Eigen::Ref<const Eigen::MatrixXd>& features,
                      std::span<const int> labels, std::span<const double> weights) {
  double err = 0.0;
  for (Eigen::Index i = 0; i < features.rows(); ++i) {
    if (argmax_label(tree.confidence(features.row(i))) != labels[static_cast<std::size_t>(i)]) {
      err += weights[static_cast<std::size_t>(i)];
    }
  }
  return err;
}

}  // namespace rgmm
