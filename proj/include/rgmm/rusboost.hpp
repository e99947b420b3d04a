#pragma once

#include <Eigen/Core>

#include <cstdint>
#include <iosfwd>
#include <random>
#include <span>
#include <string>
#include <vector>

#include "rgmm/tree.hpp"

namespace rgmm {

struct BoostConfig {
  int learners = 150;
  double rus_ratio = 1.0;    // minority:majority after undersampling
  int retry_budget = 5;      // fresh resamples for a round whose learner scores eps >= 0.5
  double min_error = 1e-10;  // eps == 0 is clamped here

  void validate() const;
};

/// Weights over mislabels (i, t), t != t_i, stored densely as n x K with the
/// true-label entries held at zero.
struct MislabelDistribution {
  Eigen::MatrixXd weights;

  Eigen::Index samples() const { return weights.rows(); }
  int classes() const { return static_cast<int>(weights.cols()); }
  /// Per-sample selection weight: sum over the sample's mislabels.
  Eigen::VectorXd sample_weights() const { return weights.rowwise().sum(); }
};

MislabelDistribution init_mislabel(std::span<const int> labels, int classes);

/// Draws with replacement, weight-proportional, then random undersampling of
/// every non-minority class down to (minority draws) / ratio.
struct Resample {
  std::vector<int> counts;      // multiplicity per original row
  std::vector<double> weights;  // renormalized distribution over retained draws (count / total)
  int minority = 0;
  long minority_draws = 0;
  long retained = 0;
};

Resample rus_resample(std::span<const int> labels, const Eigen::Ref<const Eigen::VectorXd>& selection_weights,
                      int classes, double target_ratio, std::mt19937_64& rng);

struct PseudoLoss {
  double raw = 0.0;     // sum W(i,t) [1 - h(x_i, t_i) + h(x_i, t)]
  double halved = 0.0;  // raw / 2: random guessing scores 0.5
};

/// `confidence` holds h(x_i, t) as an n x K matrix with entries in [0, 1].
PseudoLoss pseudo_loss(const Eigen::Ref<const Eigen::MatrixXd>& confidence, std::span<const int> labels,
                       const MislabelDistribution& dist);

/// W'(i,t) proportional to W(i,t) * alpha^(0.5 * (1 + h(x_i,t_i) - h(x_i,t))). Returns true when every
/// weight underflowed and the distribution was reset to uniform.
bool update_mislabel(MislabelDistribution& dist, const Eigen::Ref<const Eigen::MatrixXd>& confidence,
                     std::span<const int> labels, double alpha);

struct WeakLearner {
  DecisionTree tree;
  double error = 0.0;  // halved pseudo-loss, in (0, 0.5)
  double alpha = 0.0;  // error / (1 - error)
  double vote() const;  // log(1 / alpha)
};

class BoostedEnsemble {
 public:
  BoostedEnsemble() = default;
  BoostedEnsemble(int classes, int features, std::string layout, std::vector<WeakLearner> learners);

  int classes() const { return classes_; }
  int features() const { return features_; }
  const std::string& layout() const { return layout_; }
  const std::vector<WeakLearner>& learners() const { return learners_; }

  /// Weighted votes sum_j h_j(x, v) log(1 / alpha_j) for each label v.
  template <typename Derived>
  Eigen::VectorXd scores(const Eigen::DenseBase<Derived>& x) const {
    check(x.size());
    Eigen::VectorXd s = Eigen::VectorXd::Zero(classes_);
    for (const auto& l : learners_) s += l.tree.confidence(x) * l.vote();
    return s;
  }

  template <typename Derived>
  int predict(const Eigen::DenseBase<Derived>& x) const {
    return argmax_label(scores(x));
  }

  std::vector<int> predict_rows(const Eigen::Ref<const Eigen::MatrixXd>& x) const;

  void write(std::ostream& out) const;
  static BoostedEnsemble read(std::istream& in);

 private:
  void check(Eigen::Index size) const;

  int classes_ = 0;
  int features_ = 0;
  std::string layout_;
  std::vector<WeakLearner> learners_;
};

struct BoostRound {
  int round = 0;
  int attempts = 0;
  bool skipped = false;
  double raw_loss = 0.0;
  double error = 0.0;
  double alpha = 0.0;
  bool reset_distribution = false;
};

struct BoostResult {
  BoostedEnsemble ensemble;
  std::vector<BoostRound> rounds;
};

BoostResult train_rusboost(const Eigen::MatrixXd& features, std::span<const int> labels, int classes,
                           const TreeConfig& tree_cfg, const BoostConfig& boost_cfg, std::uint64_t seed,
                           const std::string& layout = {});

}  // namespace rgmm
