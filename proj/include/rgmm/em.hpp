#pragma once

// EM fitting of joint (y, x) mixtures and the two-stage order selection:
// restarts are ranked by conditional-prediction MSE on the fitting data,
// component counts by validation error.

#include <Eigen/Eigenvalues>

#include <algorithm>
#include <cstdint>
#include <optional>
#include <random>
#include <string>
#include <vector>

#include "rgmm/mixture.hpp"

namespace rgmm {

enum class SelectionCriterion { Mse, Mae };

struct EmConfig {
  double tolerance = 1e-6;     // relative log-likelihood improvement
  int max_iterations = 500;
  int restarts = 5;
  double ridge_scale = 1e-6;   // ridge = ridge_scale * trace(Sigma) / dim
  double min_weight = 1e-8;    // components below this are dropped
  SelectionCriterion criterion = SelectionCriterion::Mse;
};

template <typename Scalar>
struct EmRun {
  MixtureModel<Scalar> model;
  std::vector<Scalar> log_likelihood;  // mean per-sample log-likelihood, one entry per parameter state
  int iterations = 0;
  bool converged = false;
  int dropped_components = 0;
  int ridge_applications = 0;
};

template <typename Scalar>
struct EmFit {
  MixtureModel<Scalar> model;
  int requested_components = 0;
  bool degenerate = false;  // fewer components survived than requested
  int best_restart = 0;
  std::vector<Scalar> restart_mse;
  std::vector<EmRun<Scalar>> runs;
};

namespace detail {

/// k-means++ style seeding on column-standardized data.
template <typename Scalar, typename Rng>
Mat<Scalar> seed_means(const Mat<Scalar>& data, int count, Rng& rng) {
  const Eigen::Index n = data.rows();
  const Vec<Scalar> center = data.colwise().mean().transpose();
  Vec<Scalar> scale = ((data.rowwise() - center.transpose()).colwise().squaredNorm().transpose() / Scalar(n)).cwiseSqrt();
  for (Eigen::Index k = 0; k < scale.size(); ++k) {
    if (!(scale[k] > Scalar(0))) scale[k] = Scalar(1);
  }
  const Mat<Scalar> z = (data.rowwise() - center.transpose()).array().rowwise() / scale.transpose().array();

  Mat<Scalar> means(count, data.cols());
  std::uniform_int_distribution<Eigen::Index> first(0, n - 1);
  Eigen::Index chosen = first(rng);
  means.row(0) = data.row(chosen);
  Vec<Scalar> nearest = (z.rowwise() - z.row(chosen)).rowwise().squaredNorm();
  for (int j = 1; j < count; ++j) {
    const Scalar total = nearest.sum();
    if (total > Scalar(0)) {
      std::uniform_real_distribution<Scalar> u(Scalar(0), total);
      Scalar target = u(rng);
      chosen = n - 1;
      for (Eigen::Index i = 0; i < n; ++i) {
        target -= nearest[i];
        if (target <= Scalar(0)) {
          chosen = i;
          break;
        }
      }
    } else {
      chosen = first(rng);
    }
    means.row(j) = data.row(chosen);
    nearest = nearest.cwiseMin((z.rowwise() - z.row(chosen)).rowwise().squaredNorm());
  }
  return means;
}

/// Adds ridge * I when the smallest eigenvalue falls below the ridge. Returns true when applied.
template <typename Scalar>
bool regularize(Mat<Scalar>& cov, Scalar ridge_scale) {
  cov = (cov + cov.transpose()) * Scalar(0.5);
  const Scalar ridge = ridge_scale * cov.trace() / Scalar(cov.rows());
  Eigen::SelfAdjointEigenSolver<Mat<Scalar>> eig(cov, Eigen::EigenvaluesOnly);
  if (eig.info() != Eigen::Success || eig.eigenvalues().minCoeff() < ridge) {
    cov.diagonal().array() += ridge;
    return true;
  }
  return false;
}

/// E-step: fills log responsibilities (n x J) and returns the mean log-likelihood.
template <typename Scalar>
Scalar expectation(const Mat<Scalar>& data, const MixtureModel<Scalar>& model, Mat<Scalar>& resp) {
  const Eigen::Index n = data.rows();
  resp.resize(n, model.size());
  for (int j = 0; j < model.size(); ++j) {
    const auto& c = model.components[j];
    resp.col(j) = log_gaussian_rows<Scalar>(data, c.mean, factorize(c.covariance)).array() + std::log(model.weights[j]);
  }
  Scalar total = 0;
  for (Eigen::Index i = 0; i < n; ++i) {
    const Scalar lse = log_sum_exp(resp.row(i));
    resp.row(i) = (resp.row(i).array() - lse).exp();
    total += lse;
  }
  return total / Scalar(n);
}

}  // namespace detail

/// A single EM run from one seeding.
template <typename Scalar, typename Rng>
EmRun<Scalar> em_fit_once(const Mat<Scalar>& data, int components, const EmConfig& cfg, Rng& rng) {
  const Eigen::Index n = data.rows();
  const Eigen::Index dim = data.cols();
  if (components < 1) throw Error(ErrorCode::InvalidArgument, "em_fit: component count must be >= 1");
  if (n < static_cast<Eigen::Index>(components) * dim) {
    throw Error(ErrorCode::FitFailed, "em_fit: need at least J*(1+d) = " + std::to_string(components * dim) +
                                          " samples, have " + std::to_string(n));
  }

  EmRun<Scalar> run;
  const Vec<Scalar> grand_mean = data.colwise().mean().transpose();
  Mat<Scalar> pooled = (data.rowwise() - grand_mean.transpose()).transpose() * (data.rowwise() - grand_mean.transpose()) / Scalar(n);
  if (detail::regularize(pooled, Scalar(cfg.ridge_scale))) ++run.ridge_applications;
  const Mat<Scalar> means = detail::seed_means(data, components, rng);

  MixtureModel<Scalar> model;
  model.weights = Vec<Scalar>::Constant(components, Scalar(1) / Scalar(components));
  for (int j = 0; j < components; ++j) model.components.push_back({means.row(j).transpose(), pooled});

  Mat<Scalar> resp;
  Scalar ll = detail::expectation(data, model, resp);
  run.log_likelihood.push_back(ll);

  for (int it = 1; it <= cfg.max_iterations; ++it) {
    // M-step
    const Vec<Scalar> mass = resp.colwise().sum().transpose();
    MixtureModel<Scalar> next;
    std::vector<Scalar> kept_mass;
    for (int j = 0; j < model.size(); ++j) {
      if (!(mass[j] / Scalar(n) >= Scalar(cfg.min_weight))) {
        ++run.dropped_components;
        continue;
      }
      GaussianComponent<Scalar> c;
      c.mean = (data.transpose() * resp.col(j)) / mass[j];
      const Mat<Scalar> centered = data.rowwise() - c.mean.transpose();
      c.covariance = (centered.transpose() * resp.col(j).asDiagonal() * centered) / mass[j];
      if (detail::regularize(c.covariance, Scalar(cfg.ridge_scale))) ++run.ridge_applications;
      if (Eigen::LLT<Mat<Scalar>>(c.covariance).info() != Eigen::Success) {
        ++run.dropped_components;
        continue;
      }
      kept_mass.push_back(mass[j]);
      next.components.push_back(std::move(c));
    }
    if (next.components.empty()) throw Error(ErrorCode::FitFailed, "em_fit: every component degenerated");
    next.weights = Eigen::Map<const Vec<Scalar>>(kept_mass.data(), static_cast<Eigen::Index>(kept_mass.size()));
    next.weights /= next.weights.sum();
    model = std::move(next);

    const Scalar next_ll = detail::expectation(data, model, resp);
    run.log_likelihood.push_back(next_ll);
    run.iterations = it;
    const bool small_step = (next_ll - ll) < Scalar(cfg.tolerance) * std::abs(ll);
    ll = next_ll;
    if (small_step) {
      run.converged = true;
      break;
    }
  }
  run.model = std::move(model);
  return run;
}

/// Mean squared and absolute error of E[y | x] against the target column of `data`.
template <typename Scalar>
std::pair<Scalar, Scalar> conditional_errors(const MixtureModel<Scalar>& model, const Mat<Scalar>& data) {
  const ConditionalRegressor<Scalar> regressor(model);
  const Vec<Scalar> residual = regressor.predict(data.rightCols(data.cols() - 1)) - data.col(0);
  return {residual.squaredNorm() / Scalar(residual.size()), residual.cwiseAbs().mean()};
}

/// `cfg.restarts` seeded EM runs; the restart with the lowest conditional MSE on `data` wins.
template <typename Scalar>
EmFit<Scalar> em_fit(const Mat<Scalar>& data, int components, const EmConfig& cfg, std::uint64_t seed) {
  if (cfg.restarts < 1) throw Error(ErrorCode::InvalidArgument, "em_fit: restarts must be >= 1");
  EmFit<Scalar> fit;
  fit.requested_components = components;
  Scalar best = std::numeric_limits<Scalar>::infinity();
  for (int r = 0; r < cfg.restarts; ++r) {
    std::seed_seq seq{static_cast<std::uint32_t>(seed), static_cast<std::uint32_t>(seed >> 32),
                      static_cast<std::uint32_t>(components), static_cast<std::uint32_t>(r)};
    std::mt19937_64 rng(seq);
    EmRun<Scalar> run = em_fit_once(data, components, cfg, rng);
    Scalar mse = std::numeric_limits<Scalar>::infinity();
    if (data.cols() >= 2) {
      mse = conditional_errors(run.model, data).first;
    } else {
      mse = -run.log_likelihood.back();  // no conditional target; fall back to likelihood
    }
    fit.restart_mse.push_back(mse);
    if (mse < best || fit.runs.empty()) {
      best = mse;
      fit.best_restart = r;
      fit.model = run.model;
    }
    fit.runs.push_back(std::move(run));
  }
  fit.degenerate = fit.model.size() < components;
  return fit;
}

template <typename Scalar>
struct CandidateScore {
  int components = 0;
  bool ok = false;
  std::string error;
  Scalar mse = std::numeric_limits<Scalar>::quiet_NaN();
  Scalar mae = std::numeric_limits<Scalar>::quiet_NaN();
  bool degenerate = false;
  int iterations = 0;
  bool converged = false;
};

template <typename Scalar>
struct Selection {
  MixtureModel<Scalar> model;
  int components = 0;
  std::vector<CandidateScore<Scalar>> scores;
};

/// Fits each candidate component count on `train` and keeps the one whose
/// conditional prediction of y on `validation` is best under `cfg.criterion`.
/// Ties go to the earlier candidate.
template <typename Scalar>
Selection<Scalar> select_model(const Mat<Scalar>& train, const Mat<Scalar>& validation,
                               const std::vector<int>& candidates, const EmConfig& cfg, std::uint64_t seed) {
  if (candidates.empty()) throw Error(ErrorCode::InvalidArgument, "select_model: no candidate component counts");
  if (validation.rows() == 0) throw Error(ErrorCode::EmptyInput, "select_model: empty validation set");
  if (validation.cols() != train.cols() || train.cols() < 2) {
    throw Error(ErrorCode::DimensionMismatch, "select_model: train/validation dimensions disagree");
  }
  Selection<Scalar> out;
  Scalar best = std::numeric_limits<Scalar>::infinity();
  std::optional<MixtureModel<Scalar>> best_model;
  for (int J : candidates) {
    CandidateScore<Scalar> score;
    score.components = J;
    try {
      EmFit<Scalar> fit = em_fit(train, J, cfg, seed);
      std::tie(score.mse, score.mae) = conditional_errors(fit.model, validation);
      score.ok = std::isfinite(score.mse);
      score.degenerate = fit.degenerate;
      score.iterations = fit.runs[fit.best_restart].iterations;
      score.converged = fit.runs[fit.best_restart].converged;
      const Scalar value = cfg.criterion == SelectionCriterion::Mse ? score.mse : score.mae;
      if (score.ok && value < best) {
        best = value;
        best_model = std::move(fit.model);
        out.components = J;
      }
    } catch (const Error& e) {
      score.error = e.what();
    }
    out.scores.push_back(std::move(score));
  }
  if (!best_model) throw Error(ErrorCode::FitFailed, "select_model: every candidate failed");
  out.model = std::move(*best_model);
  return out;
}

}  // namespace rgmm
