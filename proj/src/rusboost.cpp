#include "rgmm/rusboost.hpp"

#include <algorithm>
#include <cmath>
#include <istream>
#include <limits>
#include <ostream>

#include "rgmm/error.hpp"

namespace rgmm {

void BoostConfig::validate() const {
  if (learners < 1) throw Error(ErrorCode::InvalidConfig, "boost learners must be >= 1");
  if (!(rus_ratio > 0.0)) throw Error(ErrorCode::InvalidConfig, "rus ratio must be > 0");
  if (retry_budget < 0) throw Error(ErrorCode::InvalidConfig, "boost retry budget must be >= 0");
  if (!(min_error > 0.0 && min_error < 0.5)) throw Error(ErrorCode::InvalidConfig, "boost min_error must be in (0, 0.5)");
}

namespace {

void check_labels(std::span<const int> labels, int classes) {
  for (int t : labels) {
    if (t < 0 || t >= classes) throw Error(ErrorCode::InvalidArgument, "label out of range");
  }
}

}  // namespace

MislabelDistribution init_mislabel(std::span<const int> labels, int classes) {
  if (labels.empty()) throw Error(ErrorCode::EmptyInput, "init_mislabel: no samples");
  if (classes < 2) throw Error(ErrorCode::InvalidArgument, "init_mislabel: need K >= 2");
  check_labels(labels, classes);
  const auto n = static_cast<Eigen::Index>(labels.size());
  MislabelDistribution dist;
  dist.weights = Eigen::MatrixXd::Constant(n, classes, 1.0 / (static_cast<double>(n) * (classes - 1)));
  for (Eigen::Index i = 0; i < n; ++i) dist.weights(i, labels[static_cast<std::size_t>(i)]) = 0.0;
  return dist;
}

Resample rus_resample(std::span<const int> labels, const Eigen::Ref<const Eigen::VectorXd>& selection_weights,
                      int classes, double target_ratio, std::mt19937_64& rng) {
  if (!(target_ratio > 0.0)) throw Error(ErrorCode::InvalidArgument, "rus_resample: ratio must be > 0");
  const auto n = labels.size();
  if (n == 0 || selection_weights.size() != static_cast<Eigen::Index>(n)) {
    throw Error(ErrorCode::DimensionMismatch, "rus_resample: weights/labels length mismatch");
  }
  check_labels(labels, classes);
  std::vector<long> class_size(static_cast<std::size_t>(classes), 0);
  for (int t : labels) ++class_size[static_cast<std::size_t>(t)];
  for (int k = 0; k < classes; ++k) {
    if (class_size[static_cast<std::size_t>(k)] == 0) {
      throw Error(ErrorCode::InvalidData, "rus_resample: class " + std::to_string(k) + " absent from input");
    }
  }
  Resample out;
  out.minority = static_cast<int>(std::min_element(class_size.begin(), class_size.end()) - class_size.begin());

  std::discrete_distribution<std::size_t> pick(selection_weights.data(), selection_weights.data() + n);
  std::vector<std::vector<std::size_t>> draws(static_cast<std::size_t>(classes));
  for (std::size_t k = 0; k < n; ++k) {
    const std::size_t row = pick(rng);
    draws[static_cast<std::size_t>(labels[row])].push_back(row);
  }
  out.minority_draws = static_cast<long>(draws[static_cast<std::size_t>(out.minority)].size());
  const auto keep = static_cast<std::size_t>(std::llround(static_cast<double>(out.minority_draws) / target_ratio));

  out.counts.assign(n, 0);
  for (int k = 0; k < classes; ++k) {
    auto& d = draws[static_cast<std::size_t>(k)];
    if (k != out.minority && d.size() > keep) {
      std::shuffle(d.begin(), d.end(), rng);
      d.resize(keep);
    }
    for (std::size_t row : d) ++out.counts[row];
    out.retained += static_cast<long>(d.size());
  }
  out.weights.assign(n, 0.0);
  if (out.retained > 0) {
    for (std::size_t i = 0; i < n; ++i) out.weights[i] = static_cast<double>(out.counts[i]) / static_cast<double>(out.retained);
  }
  return out;
}

PseudoLoss pseudo_loss(const Eigen::Ref<const Eigen::MatrixXd>& confidence, std::span<const int> labels,
                       const MislabelDistribution& dist) {
  if (confidence.rows() != dist.samples() || confidence.cols() != dist.classes() ||
      static_cast<Eigen::Index>(labels.size()) != dist.samples()) {
    throw Error(ErrorCode::DimensionMismatch, "pseudo_loss: shape mismatch");
  }
  if ((confidence.array() < 0.0).any() || (confidence.array() > 1.0).any()) {
    throw Error(ErrorCode::InvalidArgument, "pseudo_loss: h must lie in [0, 1]");
  }
  PseudoLoss loss;
  for (Eigen::Index i = 0; i < dist.samples(); ++i) {
    const int ti = labels[static_cast<std::size_t>(i)];
    for (int t = 0; t < dist.classes(); ++t) {
      if (t == ti) continue;
      loss.raw += dist.weights(i, t) * (1.0 - confidence(i, ti) + confidence(i, t));
    }
  }
  loss.halved = 0.5 * loss.raw;
  return loss;
}

bool update_mislabel(MislabelDistribution& dist, const Eigen::Ref<const Eigen::MatrixXd>& confidence,
                     std::span<const int> labels, double alpha) {
  if (!(alpha > 0.0 && alpha < 1.0)) throw Error(ErrorCode::InvalidArgument, "update_mislabel: alpha must be in (0, 1)");
  if (confidence.rows() != dist.samples() || confidence.cols() != dist.classes()) {
    throw Error(ErrorCode::DimensionMismatch, "update_mislabel: shape mismatch");
  }
  for (Eigen::Index i = 0; i < dist.samples(); ++i) {
    const int ti = labels[static_cast<std::size_t>(i)];
    for (int t = 0; t < dist.classes(); ++t) {
      if (t == ti) continue;
      dist.weights(i, t) *= std::pow(alpha, 0.5 * (1.0 + confidence(i, ti) - confidence(i, t)));
    }
  }
  const double total = dist.weights.sum();
  if (!(total > 0.0) || !std::isfinite(total)) {
    dist = init_mislabel(labels, dist.classes());
    return true;
  }
  dist.weights /= total;
  return false;
}

double WeakLearner::vote() const { return std::log(1.0 / alpha); }

BoostedEnsemble::BoostedEnsemble(int classes, int features, std::string layout, std::vector<WeakLearner> learners)
    : classes_(classes), features_(features), layout_(std::move(layout)), learners_(std::move(learners)) {
  if (learners_.empty()) throw Error(ErrorCode::FitFailed, "ensemble has no learners");
  for (const auto& l : learners_) {
    if (l.tree.classes() != classes_ || l.tree.features() != features_) {
      throw Error(ErrorCode::DimensionMismatch, "ensemble learner layout disagrees");
    }
    // alpha == 1 is a zero vote
    if (!(l.alpha > 0.0 && l.alpha <= 1.0)) throw Error(ErrorCode::InvalidArgument, "ensemble alpha out of (0, 1]");
  }
  if (layout_.find_first_of(" \t\n") != std::string::npos) {
    throw Error(ErrorCode::InvalidArgument, "ensemble layout descriptor must not contain whitespace");
  }
}

void BoostedEnsemble::check(Eigen::Index size) const {
  if (size != features_) {
    throw Error(ErrorCode::DimensionMismatch, "ensemble expects " + std::to_string(features_) + " features, got " +
                                                  std::to_string(size));
  }
}

std::vector<int> BoostedEnsemble::predict_rows(const Eigen::Ref<const Eigen::MatrixXd>& x) const {
  check(x.cols());
  std::vector<int> out(static_cast<std::size_t>(x.rows()));
  for (Eigen::Index i = 0; i < x.rows(); ++i) out[static_cast<std::size_t>(i)] = predict(x.row(i));
  return out;
}

void BoostedEnsemble::write(std::ostream& out) const {
  const auto old = out.precision(std::numeric_limits<double>::max_digits10);
  out << "rusboost-ensemble 1\n";
  out << "classes " << classes_ << "\nfeatures " << features_ << "\nlayout " << (layout_.empty() ? "-" : layout_) << '\n';
  out << "learners " << learners_.size() << '\n';
  for (const auto& l : learners_) {
    out << "learner " << l.error << ' ' << l.alpha << '\n';
    l.tree.write(out);
  }
  out.precision(old);
}

BoostedEnsemble BoostedEnsemble::read(std::istream& in) {
  auto expect = [&](const char* token) {
    std::string got;
    if (!(in >> got) || got != token) {
      throw Error(ErrorCode::MalformedFile, std::string("ensemble: expected '") + token + "', got '" + got + "'");
    }
  };
  expect("rusboost-ensemble");
  int version = 0;
  if (!(in >> version) || version != 1) throw Error(ErrorCode::MalformedFile, "ensemble: unsupported version");
  int classes = 0, features = 0;
  std::size_t count = 0;
  std::string layout;
  expect("classes");
  in >> classes;
  expect("features");
  in >> features;
  expect("layout");
  in >> layout;
  expect("learners");
  if (!(in >> count) || count == 0) throw Error(ErrorCode::MalformedFile, "ensemble: bad learner count");
  std::vector<WeakLearner> learners;
  for (std::size_t j = 0; j < count; ++j) {
    WeakLearner l;
    expect("learner");
    if (!(in >> l.error >> l.alpha)) throw Error(ErrorCode::MalformedFile, "ensemble: bad learner header");
    l.tree = DecisionTree::read(in);
    learners.push_back(std::move(l));
  }
  return BoostedEnsemble(classes, features, layout == "-" ? std::string{} : layout, std::move(learners));
}

BoostResult train_rusboost(const Eigen::MatrixXd& features, std::span<const int> labels, int classes,
                           const TreeConfig& tree_cfg, const BoostConfig& boost_cfg, std::uint64_t seed,
                           const std::string& layout) {
  tree_cfg.validate();
  boost_cfg.validate();
  if (static_cast<Eigen::Index>(labels.size()) != features.rows()) {
    throw Error(ErrorCode::DimensionMismatch, "train_rusboost: labels/features length mismatch");
  }
  MislabelDistribution dist = init_mislabel(labels, classes);
  std::vector<int> present(static_cast<std::size_t>(classes), 0);
  for (int t : labels) present[static_cast<std::size_t>(t)] = 1;
  if (std::find(present.begin(), present.end(), 0) != present.end()) {
    throw Error(ErrorCode::InvalidData, "train_rusboost: every class must be present");
  }

  const FeatureOrder order(features);
  std::mt19937_64 rng(seed);
  BoostResult result;
  std::vector<WeakLearner> learners;
  for (int round = 1; round <= boost_cfg.learners; ++round) {
    BoostRound report;
    report.round = round;
    const Eigen::VectorXd selection = dist.sample_weights();
    bool accepted = false;
    for (int attempt = 0; attempt <= boost_cfg.retry_budget && !accepted; ++attempt) {
      report.attempts = attempt + 1;
      const Resample draw = rus_resample(labels, selection, classes, boost_cfg.rus_ratio, rng);
      if (draw.retained == 0) continue;
      DecisionTree tree = train_tree({features, labels, draw.weights, draw.counts, classes}, tree_cfg, &order);
      const Eigen::MatrixXd h = tree.confidence_rows(features);
      const PseudoLoss loss = pseudo_loss(h, labels, dist);
      report.raw_loss = loss.raw;
      if (loss.halved >= 0.5) continue;
      const double error = std::max(loss.halved, boost_cfg.min_error);
      const double alpha = error / (1.0 - error);
      report.error = error;
      report.alpha = alpha;
      report.reset_distribution = update_mislabel(dist, h, labels, alpha);
      learners.push_back({std::move(tree), error, alpha});
      accepted = true;
    }
    report.skipped = !accepted;
    result.rounds.push_back(report);
  }
  if (learners.empty()) throw Error(ErrorCode::FitFailed, "train_rusboost: no learner beat random guessing");
  result.ensemble = BoostedEnsemble(classes, static_cast<int>(features.cols()), layout, std::move(learners));
  return result;
}

}  // namespace rgmm
