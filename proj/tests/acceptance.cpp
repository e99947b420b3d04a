// Acceptance run: one PASS/FAIL line per criterion, exit status 0 only when all pass.

#include <chrono>
#include <cstdio>
#include <fstream>
#include <functional>
#include <iostream>
#include <random>
#include <sstream>
#include <string>

#include "rgmm/cli.hpp"
#include "rgmm/em.hpp"
#include "rgmm/evaluation.hpp"
#include "rgmm/mixture.hpp"
#include "rgmm/phantom.hpp"
#include "rgmm/predictor.hpp"
#include "rgmm/rusboost.hpp"
#include "support.hpp"

using namespace rgmm;

namespace {

struct Outcome {
  bool pass = false;
  std::string detail;
};

int failures = 0;

void criterion(int id, const std::string& name, double limit_s, const std::function<Outcome()>& body) {
  const auto start = std::chrono::steady_clock::now();
  Outcome o;
  try {
    o = body();
  } catch (const std::exception& e) {
    o = {false, std::string("exception: ") + e.what()};
  }
  const double secs = std::chrono::duration<double>(std::chrono::steady_clock::now() - start).count();
  const bool in_time = secs <= limit_s;
  const bool pass = o.pass && in_time;
  failures += !pass;
  char timing[96];
  std::snprintf(timing, sizeof timing, "%.2fs of %.0fs", secs, limit_s);
  std::cout << (pass ? "PASS" : "FAIL") << " [" << id << "] " << name << ": " << o.detail << " (" << timing
            << (in_time ? "" : ", over time") << ")" << std::endl;
}

MixtureModel<double> separated_pair() {
  MixtureModel<double> m;
  m.weights = Eigen::Vector2d(0.35, 0.65);
  Eigen::Matrix2d c0, c1;
  c0 << 1.0, 0.3, 0.3, 0.8;
  c1 << 0.6, -0.2, -0.2, 1.2;
  m.components = {{Eigen::Vector2d(2.0, 5.0), c0}, {Eigen::Vector2d(10.0, -6.0), c1}};
  return m;
}

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

template <typename... Args>
std::string fmt(const char* f, Args... args) {
  char buf[256];
  std::snprintf(buf, sizeof buf, f, args...);
  return buf;
}

Outcome em_monotonicity() {
  std::mt19937_64 rng(1001);
  std::uniform_int_distribution<int> pick_j(1, 4), pick_dim(2, 5);
  double worst = 0.0;
  for (int fit = 0; fit < 50; ++fit) {
    const int J = pick_j(rng), dim = pick_dim(rng);
    const auto truth = test::random_mixture(J, dim, rng);
    const Eigen::MatrixXd data = draw_samples(truth, 2000, rng);
    EmConfig cfg;
    cfg.restarts = 1;
    const auto result = em_fit(data, J, cfg, 5000 + fit);
    for (const auto& run : result.runs) {
      for (std::size_t i = 1; i < run.log_likelihood.size(); ++i) {
        worst = std::max(worst, run.log_likelihood[i - 1] - run.log_likelihood[i]);
      }
    }
  }
  return {worst <= 1e-9, fmt("50 fits, largest per-step decrease %.3g", worst)};
}

Outcome conditional_oracle() {
  std::mt19937_64 rng(2002);
  std::uniform_int_distribution<int> pick_j(1, 3), pick_dim(2, 4);
  int ok = 0, total = 0;
  double worst = 0.0;
  for (int m = 0; m < 20; ++m) {
    const auto model = test::random_mixture(pick_j(rng), pick_dim(rng), rng, 1.5);
    const Eigen::MatrixXd probes = draw_samples(model, 10, rng).rightCols(model.dim() - 1);
    for (Eigen::Index p = 0; p < probes.rows(); ++p) {
      const Eigen::VectorXd x = probes.row(p).transpose();
      const auto mc = test::monte_carlo_conditional_mean(model, x, 1000000, rng);
      const double z = std::abs(conditional_expectation(model, x).value - mc.mean) / mc.standard_error;
      worst = std::max(worst, z);
      ok += z <= 3.0;
      ++total;
    }
  }
  return {ok == total, fmt("%d of %d probes within 3 SE, largest |z| %.2f", ok, total, worst)};
}

Outcome recovery() {
  const auto truth = separated_pair();
  int good = 0;
  double worst = 0.0;
  for (std::uint64_t seed = 1; seed <= 5; ++seed) {
    std::mt19937_64 rng(seed);
    const Eigen::MatrixXd data = draw_samples(truth, 5000, rng);
    const double err = recovery_error(truth, em_fit(data, 2, EmConfig{}, seed).model);
    worst = std::max(worst, err);
    good += err <= 0.10;
  }
  return {good >= 4, fmt("%d of 5 seeds within 10%%, worst relative error %.4f", good, worst)};
}

Outcome order_selection() {
  const auto truth = separated_pair();
  int hits = 0;
  std::string picks;
  for (std::uint64_t seed = 1; seed <= 5; ++seed) {
    std::mt19937_64 rng(seed * 7919);
    const Eigen::MatrixXd train = draw_samples(truth, 3000, rng);
    const Eigen::MatrixXd val = draw_samples(truth, 2000, rng);
    const auto sel = select_model(train, val, {1, 2, 3}, EmConfig{}, seed);
    hits += sel.components == 2;
    picks += std::to_string(sel.components);
  }
  return {hits >= 4, "picked J=" + picks + " over 5 seeds"};
}

struct Labeled {
  Eigen::MatrixXd x;
  std::vector<int> t;
};

/// Overlapping 2D classes, minority share 0.1849.
Labeled imbalanced(int n, std::uint64_t seed) {
  std::mt19937_64 rng(seed);
  std::normal_distribution<double> g;
  std::bernoulli_distribution minority(0.1849);
  Labeled d;
  d.x.resize(n, 2);
  for (int i = 0; i < n; ++i) {
    const int t = minority(rng) ? 1 : 0;
    d.t.push_back(t);
    d.x(i, 0) = g(rng) + 1.2 * t;
    d.x(i, 1) = g(rng) + 1.2 * t;
  }
  return d;
}

double error_rate(const std::vector<int>& truth, const std::vector<int>& pred) {
  return classification_metrics(truth, pred, kBone).err;
}

Outcome boosting() {
  const Labeled train = imbalanced(4000, 5005);
  const Labeled test = imbalanced(4000, 5006);
  const TreeConfig tree;
  BoostConfig one, many;
  one.learners = 1;
  many.learners = 30;
  const auto e1 = train_rusboost(train.x, train.t, 2, tree, one, 77).ensemble;
  const auto e30 = train_rusboost(train.x, train.t, 2, tree, many, 77).ensemble;
  const double err1 = error_rate(train.t, e1.predict_rows(train.x));
  const double err30 = error_rate(train.t, e30.predict_rows(train.x));

  const std::vector<double> unit(train.t.size(), 1.0);
  const DecisionTree plain = train_tree({train.x, train.t, unit}, tree);
  std::vector<int> plain_pred;
  for (Eigen::Index i = 0; i < test.x.rows(); ++i) plain_pred.push_back(argmax_label(plain.confidence(test.x.row(i))));
  const double f_boost = classification_metrics(test.t, e30.predict_rows(test.x), kBone).f_score;
  const double f_tree = classification_metrics(test.t, plain_pred, kBone).f_score;
  return {err30 <= err1 && f_boost >= f_tree,
          fmt("train err M=30 %.4f vs M=1 %.4f; held-out minority F %.4f vs single tree %.4f", err30, err1, f_boost,
              f_tree)};
}

Outcome pseudo_loss_calibration() {
  const std::vector<int> labels = {0, 1, 1, 0, 1};
  const MislabelDistribution dist = init_mislabel(labels, 2);
  Eigen::MatrixXd perfect(5, 2);
  for (int i = 0; i < 5; ++i) perfect.row(i) = labels[static_cast<std::size_t>(i)] ? Eigen::RowVector2d(0, 1) : Eigen::RowVector2d(1, 0);
  const double p = pseudo_loss(perfect, labels, dist).halved;
  const double r = pseudo_loss(Eigen::MatrixXd::Constant(5, 2, 0.5), labels, dist).halved;
  const double w = pseudo_loss(Eigen::MatrixXd::Ones(5, 2) - perfect, labels, dist).halved;
  return {p == 0.0 && r == 0.5 && w == 1.0, fmt("eps = %.17g / %.17g / %.17g", p, r, w)};
}

Outcome end_to_end() {
  PhantomSettings s;
  s.size = 32;
  s.patients = 4;
  const PhantomSpec spec = default_phantom_spec(s);
  const auto cohort = generate_phantom(spec, 4, mix_seed(20190101, 3));
  std::vector<PatientDataset> patients;
  for (const auto& p : cohort) patients.push_back(p.data);

  PipelineConfig cfg;
  cfg.boost.learners = 30;
  cfg.candidates = {{2, 3}, {1, 2}};
  cfg.em.restarts = 2;
  const RegressionReport report = loo_patient_eval(patients, pipeline_predictor(cfg, 20190101));
  double oracle = 0.0;
  for (const auto& p : cohort) oracle += patient_error(p.data, oracle_predict(spec, p)).mae;
  oracle /= static_cast<double>(cohort.size());
  bool failed = false;
  for (const auto& p : report.patients) failed |= p.failed;
  const double gap = report.mean_mae / oracle - 1.0;
  return {!failed && gap <= 0.15,
          fmt("pipeline MAE %.3f HU, oracle MAE %.3f HU, gap %.2f%%", report.mean_mae, oracle, 100.0 * gap)};
}

Outcome metric_identities() {
  const PrecisionRecall pr = prf(3, 1, 2);
  bool ok = pr.precision == 0.75 && pr.recall == 0.6 && pr.f_score == 2.0 / 3.0;
  const std::vector<int> truth = {1, 1, 0, 0, 1, 0, 0}, pred = {1, 0, 0, 1, 1, 0, 0};
  const ClassificationMetrics m = classification_metrics(truth, pred);
  ok &= m.err + m.accuracy() == 1.0;
  const std::vector<double> meas = {0, 5, 19.5, 20, 21, 39, 40, 45, 55, 59.9};
  const std::vector<double> est = {2, 5, 18.5, 30, 19, 41, 40, 40, 60, 59.9};
  const auto curve = smoothed_residuals(meas, est, 20.0, ResidualMode::Signed);
  const double expected[3] = {1.0 / 3.0, 10.0 / 3.0, 0.0};
  double worst = 0.0;
  ok &= curve.size() == 3;
  for (std::size_t i = 0; i < curve.size() && i < 3; ++i) worst = std::max(worst, std::abs(curve[i].value - expected[i]));
  ok &= worst <= 1e-12;
  return {ok, fmt("F1 %.17g, err+acc %.17g, curve deviation %.3g", pr.f_score, m.err + m.accuracy(), worst)};
}

std::string slurp(const std::filesystem::path& p) {
  std::ifstream in(p, std::ios::binary);
  std::ostringstream s;
  s << in.rdbuf();
  return s.str();
}

int quiet_run(std::vector<std::string> args) {
  args.emplace_back("-q");
  return cli::run(args);
}

int train_into(const std::string& cohort, const std::filesystem::path& out, const std::string& seed) {
  std::vector<std::string> args{"train", "--cohort", cohort};
  args.insert(args.end(), {"-o", out.string(), "--seed", seed});
  return quiet_run(std::move(args));
}

Outcome determinism() {
  test::TempDir dir("acceptance");
  const std::string cohort = (dir / "cohort").string();
  std::vector<std::string> phantom{"phantom", "-o", cohort};
  phantom.insert(phantom.end(), {"--phantom-size", "16", "--phantom-patients", "3"});
  if (quiet_run(std::move(phantom)) != 0) return {false, "phantom failed"};
  const int a = train_into(cohort, dir / "a", "7");
  const int b = train_into(cohort, dir / "b", "7");
  const int c = train_into(cohort, dir / "c", "8");
  if (a || b || c) return {false, "train failed"};
  const std::string ma = slurp(dir / "a" / "model.rgmm");
  const bool same = ma == slurp(dir / "b" / "model.rgmm");
  const bool differ = ma != slurp(dir / "c" / "model.rgmm");
  return {same && differ, std::string("same seed ") + (same ? "identical" : "DIFFERENT") + ", other seed " +
                              (differ ? "different" : "IDENTICAL") + ", " + std::to_string(ma.size()) + " bytes"};
}

}  // namespace

int main() {
  criterion(1, "EM log-likelihood monotonicity", 60, em_monotonicity);
  criterion(2, "conditional expectation vs Monte-Carlo", 120, conditional_oracle);
  criterion(3, "two-component parameter recovery", 60, recovery);
  criterion(4, "model-order selection", 120, order_selection);
  criterion(5, "boosting behavior on imbalanced data", 180, boosting);
  criterion(6, "pseudo-loss calibration", 1, pseudo_loss_calibration);
  criterion(7, "end-to-end oracle gap", 600, end_to_end);
  criterion(8, "metric identities", 1, metric_identities);
  criterion(9, "determinism of train", 300, determinism);
  std::cout << (failures == 0 ? "ALL PASS" : std::to_string(failures) + " FAILED") << std::endl;
  return failures == 0 ? 0 : 1;
}
