#pragma once

#include <Eigen/Dense>

#include <algorithm>
#include <cmath>
#include <filesystem>
#include <functional>
#include <optional>
#include <random>
#include <string>

#include "rgmm/error.hpp"
#include "rgmm/mixture.hpp"
#include "rgmm/volume.hpp"

namespace rgmm::test {

/// Code of the rgmm::Error thrown by `fn`, or nothing when it returns normally.
inline std::optional<ErrorCode> error_of(const std::function<void()>& fn) {
  try {
    fn();
  } catch (const Error& e) {
    return e.code();
  }
  return std::nullopt;
}

/// Fresh empty directory under the system temp dir, removed on destruction.
class TempDir {
 public:
  explicit TempDir(const std::string& tag) {
    std::random_device rd;
    path_ = std::filesystem::temp_directory_path() / ("rgmm-" + tag + "-" + std::to_string(rd()));
    std::filesystem::remove_all(path_);
    std::filesystem::create_directories(path_);
  }
  ~TempDir() {
    std::error_code ec;
    std::filesystem::remove_all(path_, ec);
  }
  TempDir(const TempDir&) = delete;
  TempDir& operator=(const TempDir&) = delete;

  const std::filesystem::path& path() const { return path_; }
  std::filesystem::path operator/(const std::string& name) const { return path_ / name; }

 private:
  std::filesystem::path path_;
};

inline Eigen::MatrixXd random_spd(int dim, std::mt19937_64& rng, double floor = 0.2) {
  std::normal_distribution<double> n;
  Eigen::MatrixXd a(dim, dim);
  for (int i = 0; i < dim; ++i)
    for (int j = 0; j < dim; ++j) a(i, j) = n(rng);
  return a * a.transpose() / dim + floor * Eigen::MatrixXd::Identity(dim, dim);
}

inline MixtureModel<double> random_mixture(int components, int dim, std::mt19937_64& rng, double spread = 3.0) {
  std::uniform_real_distribution<double> u(0.2, 1.0);
  std::normal_distribution<double> n;
  MixtureModel<double> m;
  m.weights.resize(components);
  for (int j = 0; j < components; ++j) {
    m.weights[j] = u(rng);
    GaussianComponent<double> c;
    c.mean.resize(dim);
    for (int k = 0; k < dim; ++k) c.mean[k] = spread * n(rng);
    c.covariance = random_spd(dim, rng);
    m.components.push_back(std::move(c));
  }
  m.weights /= m.weights.sum();
  return m;
}

struct MonteCarloMean {
  double mean = 0.0;
  double standard_error = 0.0;
  double spread = 0.0;  // weighted standard deviation of y
};

/// Self-normalized importance sampling of y ~ N(center, scale^2), weighted by the
/// joint density p(y, x). Uses only log densities.
inline MonteCarloMean importance_sample(const MixtureModel<double>& model, const Eigen::VectorXd& x, long draws,
                                        double center, double scale, std::mt19937_64& rng) {
  const int dim = model.dim();
  std::normal_distribution<double> proposal(center, scale);
  std::vector<Eigen::LLT<Eigen::MatrixXd>> llts;
  for (const auto& c : model.components) llts.push_back(detail::factorize(c.covariance));

  constexpr long chunk = 100000;
  std::vector<double> log_w, ys;
  log_w.reserve(static_cast<std::size_t>(draws));
  ys.reserve(static_cast<std::size_t>(draws));
  Eigen::MatrixXd rows(chunk, dim);
  Eigen::MatrixXd terms(chunk, model.size());
  for (long done = 0; done < draws; done += chunk) {
    const long m = std::min(chunk, draws - done);
    for (long i = 0; i < m; ++i) {
      rows(i, 0) = proposal(rng);
      rows.row(i).tail(dim - 1) = x.transpose();
    }
    for (int j = 0; j < model.size(); ++j) {
      terms.col(j).head(m) = detail::log_gaussian_rows<double>(rows.topRows(m), model.components[j].mean, llts[j]).array() +
                             std::log(model.weights[j]);
    }
    for (long i = 0; i < m; ++i) {
      const double y = rows(i, 0);
      const double z = (y - center) / scale;
      log_w.push_back(log_sum_exp(terms.row(i)) + 0.5 * z * z);
      ys.push_back(y);
    }
  }
  const double top = *std::max_element(log_w.begin(), log_w.end());
  double sw = 0.0, swy = 0.0;
  for (std::size_t i = 0; i < ys.size(); ++i) {
    const double w = std::exp(log_w[i] - top);
    sw += w;
    swy += w * ys[i];
  }
  MonteCarloMean out;
  out.mean = swy / sw;
  double var = 0.0, spread = 0.0;
  for (std::size_t i = 0; i < ys.size(); ++i) {
    const double w = std::exp(log_w[i] - top) / sw;
    const double r2 = (ys[i] - out.mean) * (ys[i] - out.mean);
    var += w * w * r2;
    spread += w * r2;
  }
  out.standard_error = std::sqrt(var);
  out.spread = std::sqrt(spread);
  return out;
}

/// E[y | x] by importance sampling. A pilot run of draws / 10 from a broad
/// normal around the marginal of y locates the posterior; the main run of
/// `draws` samples from a normal twice as wide as the pilot spread.
inline MonteCarloMean monte_carlo_conditional_mean(const MixtureModel<double>& model, const Eigen::VectorXd& x,
                                                   long draws, std::mt19937_64& rng) {
  double my = 0.0, second = 0.0;
  for (int j = 0; j < model.size(); ++j) {
    const auto& c = model.components[j];
    my += model.weights[j] * c.mean[0];
    second += model.weights[j] * (c.covariance(0, 0) + c.mean[0] * c.mean[0]);
  }
  const MonteCarloMean pilot =
      importance_sample(model, x, std::max(draws / 10, 1000L), my, 3.0 * std::sqrt(second - my * my), rng);
  return importance_sample(model, x, draws, pilot.mean, 2.0 * pilot.spread, rng);
}

/// Patient with `d` channels of uniform noise, CT from a fixed rule, and a mask
/// holding exactly `masked` voxels (the first ones in storage order).
inline PatientDataset random_patient(const std::string& id, const Eigen::Array3i& dims, int d, long masked,
                                     std::uint64_t seed) {
  std::mt19937_64 rng(seed);
  std::uniform_real_distribution<double> u(0.0, 1.0);
  const Eigen::Array3d spacing(1.0, 1.0, 1.0);
  PatientDataset p;
  p.id = id;
  for (int c = 0; c < d; ++c) {
    Volume v(dims, spacing);
    for (Eigen::Index i = 0; i < v.size(); ++i) v.data()[i] = static_cast<float>(u(rng));
    p.mr.push_back(std::move(v));
  }
  p.ct = Volume(dims, spacing);
  for (Eigen::Index i = 0; i < p.ct.size(); ++i) p.ct.data()[i] = static_cast<float>(-500.0 + 1500.0 * u(rng));
  p.mask = Volume(dims, spacing, 0.0f);
  for (long i = 0; i < masked; ++i) p.mask.data()[i] = 1.0f;
  return p;
}

}  // namespace rgmm::test
