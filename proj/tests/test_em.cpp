#include <catch_amalgamated.hpp>

#include <Eigen/Dense>

#include "rgmm/em.hpp"
#include "support.hpp"

using namespace rgmm;
using Catch::Approx;

namespace {

MixtureModel<double> separated_pair() {
  MixtureModel<double> m;
  m.weights = Eigen::Vector2d(0.35, 0.65);
  Eigen::Matrix2d c0, c1;
  c0 << 1.0, 0.3, 0.3, 0.8;
  c1 << 0.6, -0.2, -0.2, 1.2;
  m.components = {{Eigen::Vector2d(2.0, 5.0), c0}, {Eigen::Vector2d(10.0, -6.0), c1}};
  return m;
}

/// Largest relative error of weights and means, minimized over the two labelings.
double recovery_error(const MixtureModel<double>& truth, const MixtureModel<double>& fit) {
  if (fit.size() != truth.size()) return std::numeric_limits<double>::infinity();
  double best = std::numeric_limits<double>::infinity();
  for (int flip = 0; flip < 2; ++flip) {
    double worst = 0.0;
    for (int j = 0; j < 2; ++j) {
      const int f = flip ? 1 - j : j;
      worst = std::max(worst, std::abs(fit.weights[f] - truth.weights[j]) / truth.weights[j]);
      const Eigen::ArrayXd rel =
          (fit.components[f].mean - truth.components[j].mean).array().abs() / truth.components[j].mean.array().abs();
      worst = std::max(worst, rel.maxCoeff());
    }
    best = std::min(best, worst);
  }
  return best;
}

}  // namespace

TEST_CASE("one component is the sample mean and biased covariance") {
  std::mt19937_64 rng(3);
  Eigen::Matrix3d cov;
  cov << 2.0, 0.4, -0.3, 0.4, 1.0, 0.2, -0.3, 0.2, 0.5;
  MixtureModel<double> truth;
  truth.weights = Eigen::VectorXd::Ones(1);
  truth.components = {{Eigen::Vector3d(1.0, -1.0, 4.0), cov}};
  const Eigen::MatrixXd data = draw_samples(truth, 500, rng);

  const EmFit<double> fit = em_fit(data, 1, EmConfig{}, 9);
  const Eigen::Vector3d mean = data.colwise().mean();
  const Eigen::MatrixXd centered = data.rowwise() - mean.transpose();
  const Eigen::Matrix3d sample_cov = centered.transpose() * centered / 500.0;
  REQUIRE(fit.model.size() == 1);
  CHECK((fit.model.components[0].mean - mean).cwiseAbs().maxCoeff() < 1e-12);
  CHECK((fit.model.components[0].covariance - sample_cov).cwiseAbs().maxCoeff() < 1e-12);
  CHECK(fit.model.weights[0] == 1.0);
  // The first M-step lands on the optimum; the second confirms it.
  CHECK(fit.runs[0].converged);
  CHECK(fit.runs[0].iterations <= 2);
  const auto& ll = fit.runs[0].log_likelihood;
  CHECK(std::abs(ll.back() - ll[ll.size() - 2]) <= 1e-12 * std::abs(ll.back()));
}

TEST_CASE("log-likelihood never decreases") {
  std::mt19937_64 rng(5);
  for (int trial = 0; trial < 10; ++trial) {
    const int J = 1 + trial % 4;
    const auto truth = test::random_mixture(J, 2 + trial % 3, rng);
    const Eigen::MatrixXd data = draw_samples(truth, 1000, rng);
    EmConfig cfg;
    cfg.restarts = 2;
    const auto fit = em_fit(data, J, cfg, 100 + trial);
    for (const auto& run : fit.runs) {
      for (std::size_t i = 1; i < run.log_likelihood.size(); ++i) {
        CHECK(run.log_likelihood[i] >= run.log_likelihood[i - 1] - 1e-9);
      }
    }
  }
}

TEST_CASE("two separated components are recovered") {
  const auto truth = separated_pair();
  int good = 0;
  for (std::uint64_t seed = 1; seed <= 5; ++seed) {
    std::mt19937_64 rng(seed);
    const Eigen::MatrixXd data = draw_samples(truth, 5000, rng);
    const auto fit = em_fit(data, 2, EmConfig{}, seed);
    good += recovery_error(truth, fit.model) <= 0.10;
  }
  CHECK(good >= 4);
}

TEST_CASE("weights are a distribution after fitting") {
  std::mt19937_64 rng(7);
  const auto truth = test::random_mixture(3, 3, rng);
  const Eigen::MatrixXd data = draw_samples(truth, 1500, rng);
  const auto fit = em_fit(data, 3, EmConfig{}, 1);
  CHECK(std::abs(fit.model.weights.sum() - 1.0) <= 1e-12);
  CHECK((fit.model.weights.array() >= 0.0).all());
  for (const auto& c : fit.model.components) {
    CHECK((c.covariance - c.covariance.transpose()).cwiseAbs().maxCoeff() == 0.0);
    CHECK(Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd>(c.covariance).eigenvalues().minCoeff() > 0.0);
  }
}

TEST_CASE("fixed seed is bit-reproducible") {
  std::mt19937_64 rng(11);
  const auto truth = test::random_mixture(2, 3, rng);
  const Eigen::MatrixXd data = draw_samples(truth, 800, rng);
  const auto a = em_fit(data, 2, EmConfig{}, 42);
  const auto b = em_fit(data, 2, EmConfig{}, 42);
  CHECK(a.model.weights == b.model.weights);
  for (int j = 0; j < a.model.size(); ++j) {
    CHECK(a.model.components[j].mean == b.model.components[j].mean);
    CHECK(a.model.components[j].covariance == b.model.components[j].covariance);
  }
  CHECK(a.runs.back().log_likelihood == b.runs.back().log_likelihood);
}

TEST_CASE("best restart minimizes the in-sample conditional error") {
  std::mt19937_64 rng(13);
  const auto truth = test::random_mixture(3, 3, rng);
  const Eigen::MatrixXd data = draw_samples(truth, 600, rng);
  const auto fit = em_fit(data, 3, EmConfig{}, 8);
  REQUIRE(fit.restart_mse.size() == 5);
  const double best = *std::min_element(fit.restart_mse.begin(), fit.restart_mse.end());
  CHECK(fit.restart_mse[static_cast<std::size_t>(fit.best_restart)] == best);
  CHECK(conditional_errors(fit.model, data).first == Approx(best));
}

TEST_CASE("too few samples fail the fit") {
  const Eigen::MatrixXd data = Eigen::MatrixXd::Random(5, 3);
  CHECK(test::error_of([&] { em_fit(data, 2, EmConfig{}, 1); }) == ErrorCode::FitFailed);
}

TEST_CASE("a singular direction triggers the ridge") {
  std::mt19937_64 rng(17);
  std::normal_distribution<double> n;
  Eigen::MatrixXd data(400, 3);
  for (Eigen::Index i = 0; i < 400; ++i) {
    data(i, 0) = n(rng);
    data(i, 1) = n(rng);
    data(i, 2) = 5.0;  // constant channel
  }
  const auto fit = em_fit(data, 1, EmConfig{}, 3);
  CHECK(fit.runs[0].ridge_applications > 0);
  CHECK(Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd>(fit.model.components[0].covariance).eigenvalues().minCoeff() > 0.0);
  CHECK(std::isfinite(conditional_expectation(fit.model, Eigen::Vector2d(0.1, 5.0)).value));
}

TEST_CASE("light components are dropped and the fit flagged") {
  std::mt19937_64 rng(19);
  MixtureModel<double> truth;
  truth.weights = Eigen::Vector2d(0.85, 0.15);
  truth.components = {{Eigen::Vector2d(0.0, 0.0), Eigen::Matrix2d::Identity()},
                      {Eigen::Vector2d(20.0, 20.0), Eigen::Matrix2d::Identity()}};
  const Eigen::MatrixXd data = draw_samples(truth, 2000, rng);
  EmConfig cfg;
  cfg.min_weight = 0.3;
  cfg.restarts = 1;
  const auto fit = em_fit(data, 2, cfg, 5);
  CHECK(fit.degenerate);
  CHECK(fit.model.size() == 1);
  CHECK(fit.runs[0].dropped_components >= 1);
  CHECK(fit.model.weights[0] == 1.0);
}

TEST_CASE("model order selection") {
  const auto truth = separated_pair();
  SECTION("J=2 data picks J=2 in most seeds") {
    int hits = 0;
    for (std::uint64_t seed = 1; seed <= 5; ++seed) {
      std::mt19937_64 rng(seed * 7919);
      const Eigen::MatrixXd train = draw_samples(truth, 3000, rng);
      const Eigen::MatrixXd val = draw_samples(truth, 2000, rng);
      EmConfig cfg;
      cfg.restarts = 3;
      const auto sel = select_model(train, val, {1, 2, 3}, cfg, seed);
      hits += sel.components == 2;
      REQUIRE(sel.scores.size() == 3);
      for (const auto& s : sel.scores) {
        CHECK(s.ok);
        CHECK(std::isfinite(s.mse));
        CHECK(std::isfinite(s.mae));
      }
    }
    CHECK(hits >= 4);
  }
  SECTION("a single candidate is returned as is") {
    std::mt19937_64 rng(3);
    const Eigen::MatrixXd train = draw_samples(truth, 500, rng);
    const auto sel = select_model(train, train, {1}, EmConfig{}, 4);
    CHECK(sel.components == 1);
    CHECK(sel.model.size() == 1);
    REQUIRE(sel.scores.size() == 1);
    CHECK(sel.scores[0].mse == Approx(conditional_errors(sel.model, train).first));
  }
  SECTION("the MAE criterion scores by absolute error") {
    std::mt19937_64 rng(5);
    const Eigen::MatrixXd train = draw_samples(truth, 800, rng);
    const Eigen::MatrixXd val = draw_samples(truth, 400, rng);
    EmConfig cfg;
    cfg.criterion = SelectionCriterion::Mae;
    const auto sel = select_model(train, val, {1, 2}, cfg, 6);
    double best = std::numeric_limits<double>::infinity();
    for (const auto& s : sel.scores) best = std::min(best, s.mae);
    CHECK(conditional_errors(sel.model, val).second == Approx(best));
  }
  SECTION("candidates that cannot be fitted are reported, not fatal") {
    std::mt19937_64 rng(7);
    const Eigen::MatrixXd train = draw_samples(truth, 10, rng);
    const auto sel = select_model(train, train, {1, 6}, EmConfig{}, 1);
    CHECK(sel.components == 1);
    CHECK_FALSE(sel.scores[1].ok);
    CHECK_FALSE(sel.scores[1].error.empty());
    CHECK(test::error_of([&] { select_model(train, train, {6}, EmConfig{}, 1); }) == ErrorCode::FitFailed);
  }
}
