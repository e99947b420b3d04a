#pragma once

// Gaussian mixtures over joint (y, x) vectors: y is coordinate 0, the d
// conditioning features follow. Everything is templated on the scalar type;
// the pipeline instantiates double.

#include <Eigen/Cholesky>
#include <Eigen/Core>

#include <cmath>
#include <istream>
#include <limits>
#include <numbers>
#include <ostream>
#include <random>
#include <string>
#include <vector>

#include "rgmm/error.hpp"

namespace rgmm {

template <typename Scalar>
using Vec = Eigen::Matrix<Scalar, Eigen::Dynamic, 1>;
template <typename Scalar>
using Mat = Eigen::Matrix<Scalar, Eigen::Dynamic, Eigen::Dynamic>;

template <typename Scalar>
struct GaussianComponent {
  Vec<Scalar> mean;
  Mat<Scalar> covariance;
};

template <typename Scalar>
struct MixtureModel {
  Vec<Scalar> weights;
  std::vector<GaussianComponent<Scalar>> components;

  int size() const { return static_cast<int>(components.size()); }
  int dim() const { return components.empty() ? 0 : static_cast<int>(components.front().mean.size()); }

  void validate() const {
    if (components.empty()) throw Error(ErrorCode::InvalidArgument, "mixture has no components");
    if (weights.size() != size()) throw Error(ErrorCode::DimensionMismatch, "mixture weight count mismatch");
    if ((weights.array() < Scalar(0)).any() || std::abs(weights.sum() - Scalar(1)) > Scalar(1e-9)) {
      throw Error(ErrorCode::InvalidArgument, "mixture weights must be a probability vector");
    }
    for (const auto& c : components) {
      if (c.mean.size() != dim() || c.covariance.rows() != dim() || c.covariance.cols() != dim()) {
        throw Error(ErrorCode::DimensionMismatch, "mixture component dimensions disagree");
      }
    }
  }
};

/// One mixture per tissue class, indexed by label.
template <typename Scalar>
using TissueGMM = std::vector<MixtureModel<Scalar>>;

template <typename Derived>
typename Derived::Scalar log_sum_exp(const Eigen::DenseBase<Derived>& values) {
  using Scalar = typename Derived::Scalar;
  const Scalar top = values.maxCoeff();
  if (!std::isfinite(top)) return top;
  return top + std::log((values.derived().array() - top).exp().sum());
}

namespace detail {

template <typename Scalar>
Eigen::LLT<Mat<Scalar>> factorize(const Mat<Scalar>& covariance) {
  Eigen::LLT<Mat<Scalar>> llt(covariance);
  if (llt.info() != Eigen::Success) {
    throw Error(ErrorCode::Numerical, "covariance is not positive definite");
  }
  return llt;
}

template <typename Scalar>
Scalar log_determinant(const Eigen::LLT<Mat<Scalar>>& llt) {
  return Scalar(2) * llt.matrixL().toDenseMatrix().diagonal().array().log().sum();
}

/// log N(row; mean, cov) for every row of `points` (n x dim).
template <typename Scalar, typename Derived>
Vec<Scalar> log_gaussian_rows(const Eigen::MatrixBase<Derived>& points, const Vec<Scalar>& mean,
                              const Eigen::LLT<Mat<Scalar>>& llt) {
  const auto dim = static_cast<Scalar>(mean.size());
  Mat<Scalar> centered = (points.rowwise() - mean.transpose()).transpose();
  llt.matrixL().solveInPlace(centered);
  const Scalar norm = -Scalar(0.5) * (dim * std::log(Scalar(2) * std::numbers::pi_v<Scalar>) + log_determinant(llt));
  return (norm - Scalar(0.5) * centered.colwise().squaredNorm().array()).matrix().transpose();
}

}  // namespace detail

/// log sum_j w_j N(v; mu_j, Sigma_j), evaluated with log-sum-exp.
template <typename Scalar, typename Derived>
Scalar log_density(const MixtureModel<Scalar>& model, const Eigen::MatrixBase<Derived>& v) {
  model.validate();
  if (v.size() != model.dim()) throw Error(ErrorCode::DimensionMismatch, "log_density: dimension mismatch");
  Vec<Scalar> terms(model.size());
  const Mat<Scalar> row = v.template cast<Scalar>().reshaped(1, v.size());
  for (int j = 0; j < model.size(); ++j) {
    const auto& c = model.components[j];
    terms[j] = std::log(model.weights[j]) + detail::log_gaussian_rows<Scalar>(row, c.mean, detail::factorize(c.covariance))[0];
  }
  return log_sum_exp(terms);
}

template <typename Scalar>
struct ConditionalPrediction {
  Scalar value;
  Vec<Scalar> betas;
};

/// E[y | x] under a joint mixture, with the per-component regressions and
/// marginal-likelihood weights precomputed once.
template <typename Scalar>
class ConditionalRegressor {
 public:
  ConditionalRegressor() = default;

  explicit ConditionalRegressor(const MixtureModel<Scalar>& model) {
    model.validate();
    if (model.dim() < 2) throw Error(ErrorCode::DimensionMismatch, "conditional regression needs dim >= 2");
    const int d = model.dim() - 1;
    for (int j = 0; j < model.size(); ++j) {
      const auto& c = model.components[j];
      Part part;
      part.mean_y = c.mean[0];
      part.mean_x = c.mean.tail(d);
      const Mat<Scalar> sxx = c.covariance.bottomRightCorner(d, d);
      part.llt = detail::factorize(sxx);
      part.slope = part.llt.solve(c.covariance.block(1, 0, d, 1));
      part.log_weight = std::log(model.weights[j]);
      parts_.push_back(std::move(part));
    }
  }

  int features() const { return parts_.empty() ? 0 : static_cast<int>(parts_.front().mean_x.size()); }
  int size() const { return static_cast<int>(parts_.size()); }

  template <typename Derived>
  ConditionalPrediction<Scalar> operator()(const Eigen::MatrixBase<Derived>& x) const {
    if (x.size() != features()) throw Error(ErrorCode::DimensionMismatch, "conditional_expectation: dimension mismatch");
    const Mat<Scalar> row = x.template cast<Scalar>().reshaped(1, x.size());
    Vec<Scalar> log_terms(size());
    Vec<Scalar> means(size());
    for (int j = 0; j < size(); ++j) {
      const Part& p = parts_[j];
      log_terms[j] = p.log_weight + detail::log_gaussian_rows<Scalar>(row, p.mean_x, p.llt)[0];
      means[j] = p.mean_y + p.slope.dot(row.row(0).transpose() - p.mean_x);
    }
    ConditionalPrediction<Scalar> out;
    out.betas = (log_terms.array() - log_sum_exp(log_terms)).exp().matrix();
    out.value = out.betas.dot(means);
    return out;
  }

  /// Conditional means for every row of `x` (n x d).
  template <typename Derived>
  Vec<Scalar> predict(const Eigen::MatrixBase<Derived>& x) const {
    if (x.cols() != features()) throw Error(ErrorCode::DimensionMismatch, "conditional_expectation: dimension mismatch");
    const Eigen::Index n = x.rows();
    Mat<Scalar> log_terms(n, size());
    Mat<Scalar> means(n, size());
    const Mat<Scalar> rows = x.template cast<Scalar>();
    for (int j = 0; j < size(); ++j) {
      const Part& p = parts_[j];
      log_terms.col(j) = detail::log_gaussian_rows<Scalar>(rows, p.mean_x, p.llt).array() + p.log_weight;
      means.col(j) = ((rows.rowwise() - p.mean_x.transpose()) * p.slope).array() + p.mean_y;
    }
    Vec<Scalar> out(n);
    for (Eigen::Index i = 0; i < n; ++i) {
      const Scalar lse = log_sum_exp(log_terms.row(i));
      out[i] = ((log_terms.row(i).array() - lse).exp() * means.row(i).array()).sum();
    }
    return out;
  }

 private:
  struct Part {
    Scalar mean_y{};
    Vec<Scalar> mean_x;
    Vec<Scalar> slope;  // Sigma_xx^-1 Sigma_xy
    Eigen::LLT<Mat<Scalar>> llt;
    Scalar log_weight{};
  };
  std::vector<Part> parts_;
};

template <typename Scalar, typename Derived>
ConditionalPrediction<Scalar> conditional_expectation(const MixtureModel<Scalar>& model,
                                                      const Eigen::MatrixBase<Derived>& x) {
  return ConditionalRegressor<Scalar>(model)(x);
}

/// n independent draws (rows) from the mixture; `components_out` receives the latent index when non-null.
template <typename Scalar, typename Rng>
Mat<Scalar> draw_samples(const MixtureModel<Scalar>& model, Eigen::Index n, Rng& rng,
                         std::vector<int>* components_out = nullptr) {
  model.validate();
  std::vector<Mat<Scalar>> factors;
  for (const auto& c : model.components) factors.push_back(detail::factorize(c.covariance).matrixL());
  std::discrete_distribution<int> pick(model.weights.data(), model.weights.data() + model.weights.size());
  std::normal_distribution<Scalar> normal;
  Mat<Scalar> out(n, model.dim());
  if (components_out) components_out->resize(static_cast<std::size_t>(n));
  Vec<Scalar> z(model.dim());
  for (Eigen::Index i = 0; i < n; ++i) {
    const int j = pick(rng);
    for (Eigen::Index k = 0; k < z.size(); ++k) z[k] = normal(rng);
    out.row(i) = (model.components[j].mean + factors[j] * z).transpose();
    if (components_out) (*components_out)[static_cast<std::size_t>(i)] = j;
  }
  return out;
}

// ---------------------------------------------------------------------------
// Text serialization, full round-trip precision:
//   mixture <dim> <components>
//   weight <w>
//   mean <dim values>
//   covariance <dim*dim values, row-major>
// (the last three lines repeat per component)

template <typename Scalar>
void write_mixture(std::ostream& out, const MixtureModel<Scalar>& model) {
  const auto old = out.precision(std::numeric_limits<Scalar>::max_digits10);
  out << "mixture " << model.dim() << ' ' << model.size() << '\n';
  for (int j = 0; j < model.size(); ++j) {
    const auto& c = model.components[j];
    out << "weight " << model.weights[j] << "\nmean";
    for (Eigen::Index k = 0; k < c.mean.size(); ++k) out << ' ' << c.mean[k];
    out << "\ncovariance";
    for (Eigen::Index r = 0; r < c.covariance.rows(); ++r) {
      for (Eigen::Index k = 0; k < c.covariance.cols(); ++k) out << ' ' << c.covariance(r, k);
    }
    out << '\n';
  }
  out.precision(old);
}

namespace detail {

inline void expect_token(std::istream& in, const std::string& token) {
  std::string got;
  if (!(in >> got) || got != token) {
    throw Error(ErrorCode::MalformedFile, "expected '" + token + "', got '" + got + "'");
  }
}

template <typename T>
T read_value(std::istream& in) {
  T value{};
  if (!(in >> value)) throw Error(ErrorCode::MalformedFile, "truncated or non-numeric value");
  return value;
}

}  // namespace detail

template <typename Scalar>
MixtureModel<Scalar> read_mixture(std::istream& in) {
  detail::expect_token(in, "mixture");
  const int dim = detail::read_value<int>(in);
  const int count = detail::read_value<int>(in);
  if (dim < 1 || count < 1) throw Error(ErrorCode::MalformedFile, "mixture header out of range");
  MixtureModel<Scalar> model;
  model.weights.resize(count);
  for (int j = 0; j < count; ++j) {
    GaussianComponent<Scalar> c;
    detail::expect_token(in, "weight");
    model.weights[j] = detail::read_value<Scalar>(in);
    detail::expect_token(in, "mean");
    c.mean.resize(dim);
    for (int k = 0; k < dim; ++k) c.mean[k] = detail::read_value<Scalar>(in);
    detail::expect_token(in, "covariance");
    c.covariance.resize(dim, dim);
    for (int r = 0; r < dim; ++r) {
      for (int k = 0; k < dim; ++k) c.covariance(r, k) = detail::read_value<Scalar>(in);
    }
    model.components.push_back(std::move(c));
  }
  model.validate();
  return model;
}

template <typename Scalar>
void write_tissue_gmm(std::ostream& out, const TissueGMM<Scalar>& gmm) {
  out << "tissue-gmm " << gmm.size() << '\n';
  for (std::size_t k = 0; k < gmm.size(); ++k) {
    out << "class " << k << '\n';
    write_mixture(out, gmm[k]);
  }
}

template <typename Scalar>
TissueGMM<Scalar> read_tissue_gmm(std::istream& in) {
  detail::expect_token(in, "tissue-gmm");
  const int classes = detail::read_value<int>(in);
  if (classes < 1) throw Error(ErrorCode::MalformedFile, "tissue-gmm needs at least one class");
  TissueGMM<Scalar> out;
  for (int k = 0; k < classes; ++k) {
    detail::expect_token(in, "class");
    if (detail::read_value<int>(in) != k) throw Error(ErrorCode::MalformedFile, "tissue-gmm classes out of order");
    out.push_back(read_mixture<Scalar>(in));
  }
  for (const auto& m : out) {
    if (m.dim() != out.front().dim()) throw Error(ErrorCode::MalformedFile, "tissue-gmm class dimensions disagree");
  }
  return out;
}

}  // namespace rgmm
