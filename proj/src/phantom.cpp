#include "rgmm/phantom.hpp"

#include <algorithm>
#include <cmath>
#include <istream>
#include <limits>
#include <ostream>
#include <random>

#include "rgmm/error.hpp"
#include "rgmm/labeling.hpp"

namespace rgmm {

void PhantomSpec::validate() const {
  if ((dims < 1).any()) throw Error(ErrorCode::InvalidArgument, "phantom dims must be >= 1");
  if (!(spacing > 0.0).all()) throw Error(ErrorCode::InvalidArgument, "phantom spacing must be > 0");
  if (truth.size() != static_cast<std::size_t>(kTissueClasses)) {
    throw Error(ErrorCode::InvalidArgument, "phantom needs one true mixture per tissue class");
  }
  for (const auto& m : truth) {
    m.validate();
    if (m.dim() != truth.front().dim() || m.dim() < 2) throw Error(ErrorCode::DimensionMismatch, "phantom mixtures disagree on dimension");
    for (const auto& c : m.components) detail::factorize(c.covariance);
  }
  if (!(minority_fraction > 0.0 && minority_fraction < 1.0)) {
    throw Error(ErrorCode::InvalidArgument, "phantom minority fraction must be in (0, 1)");
  }
  const double voxels = static_cast<double>(dims.cast<Eigen::Index>().prod());
  if (std::round(voxels * minority_fraction) < 1.0 || std::round(voxels * (1.0 - minority_fraction)) < 1.0) {
    throw Error(ErrorCode::InvalidArgument, "minority fraction infeasible for this grid size");
  }
  if (!(smoothing_voxels >= 0.0)) throw Error(ErrorCode::InvalidArgument, "phantom smoothing must be >= 0");
}

namespace {

/// Joint (y, x) component with y = mean_y + slope.(x - mean_x) + e, e ~ N(0, residual_sd^2).
GaussianComponent<double> regression_component(double mean_y, const Eigen::Vector4d& mean_x, const Eigen::Matrix4d& sxx,
                                               const Eigen::Vector4d& direction, double explained_sd, double residual_sd) {
  const double scale = explained_sd / std::sqrt(direction.dot(sxx * direction));
  const Eigen::Vector4d slope = direction * scale;
  GaussianComponent<double> c;
  c.mean.resize(5);
  c.mean << mean_y, mean_x;
  c.covariance.resize(5, 5);
  const Eigen::Vector4d cross = sxx * slope;
  c.covariance(0, 0) = slope.dot(cross) + residual_sd * residual_sd;
  c.covariance.block(1, 0, 4, 1) = cross;
  c.covariance.block(0, 1, 1, 4) = cross.transpose();
  c.covariance.bottomRightCorner(4, 4) = sxx;
  return c;
}

std::vector<double> gaussian_kernel(double sigma) {
  if (sigma <= 0.0) return {1.0};
  const int radius = static_cast<int>(std::ceil(3.0 * sigma));
  std::vector<double> k(static_cast<std::size_t>(2 * radius + 1));
  double total = 0.0;
  for (int i = -radius; i <= radius; ++i) {
    k[static_cast<std::size_t>(i + radius)] = std::exp(-0.5 * i * i / (sigma * sigma));
    total += k[static_cast<std::size_t>(i + radius)];
  }
  for (double& v : k) v /= total;
  return k;
}

/// Separable Gaussian blur with replicate boundaries.
std::vector<double> smooth(const std::vector<double>& field, const Eigen::Array3i& dims, double sigma) {
  const std::vector<double> kernel = gaussian_kernel(sigma);
  const int radius = static_cast<int>(kernel.size() / 2);
  std::vector<double> cur = field, next(field.size());
  auto at = [&](int x, int y, int z) { return static_cast<std::size_t>(x + dims[0] * (y + dims[1] * z)); };
  for (int axis = 0; axis < 3; ++axis) {
    for (int z = 0; z < dims[2]; ++z) {
      for (int y = 0; y < dims[1]; ++y) {
        for (int x = 0; x < dims[0]; ++x) {
          double acc = 0.0;
          for (int k = -radius; k <= radius; ++k) {
            int p[3] = {x, y, z};
            p[axis] = std::clamp(p[axis] + k, 0, dims[axis] - 1);
            acc += kernel[static_cast<std::size_t>(k + radius)] * cur[at(p[0], p[1], p[2])];
          }
          next[at(x, y, z)] = acc;
        }
      }
    }
    std::swap(cur, next);
  }
  return cur;
}

}  // namespace

PhantomSpec default_phantom_spec(const PhantomSettings& settings) {
  PhantomSpec spec;
  spec.dims = Eigen::Array3i::Constant(settings.size);
  spec.spacing = Eigen::Array3d::Constant(settings.spacing_mm);
  spec.minority_fraction = settings.minority_fraction;
  spec.smoothing_voxels = settings.smoothing_voxels;

  const double sd = 0.10 * settings.noise_scale;
  Eigen::Matrix4d sxx = Eigen::Matrix4d::Constant(0.2 * sd * sd);
  sxx.diagonal().setConstant(sd * sd);

  const Eigen::Vector4d soft_dir(1.0, 0.5, -0.5, -1.0);
  const Eigen::Vector4d bone_dir(-1.0, -1.0, 0.5, 0.25);

  MixtureModel<double> non_bone;
  non_bone.weights = Eigen::Vector3d(0.25, 0.25, 0.5);
  non_bone.components = {
      regression_component(-90.0, {0.80, 0.70, 0.60, 0.55}, sxx, soft_dir, 8.0, 8.0),   // fat
      regression_component(10.0, {0.40, 0.35, 0.70, 0.75}, sxx, soft_dir, 8.0, 8.0),    // fluid
      regression_component(40.0, {0.60, 0.50, 0.45, 0.40}, sxx, soft_dir, 8.0, 8.0),    // soft tissue
  };
  MixtureModel<double> bone;
  bone.weights = Eigen::Vector2d(0.6, 0.4);
  bone.components = {
      regression_component(450.0, {0.30, 0.15, 0.20, 0.10}, sxx, bone_dir, 50.0, 60.0),   // spongy
      regression_component(1000.0, {0.20, 0.05, 0.10, 0.02}, sxx, bone_dir, 70.0, 90.0),  // cortical
  };
  spec.truth = {non_bone, bone};
  spec.validate();
  return spec;
}

std::vector<PhantomPatient> generate_phantom(const PhantomSpec& spec, int patients, std::uint64_t seed) {
  spec.validate();
  if (patients < 1) throw Error(ErrorCode::InvalidArgument, "generate_phantom: need at least one patient");
  const Eigen::Index n = spec.dims.cast<Eigen::Index>().prod();
  const int d = spec.channels();
  std::mt19937_64 rng(seed);
  std::normal_distribution<double> normal;

  std::vector<PhantomPatient> out;
  for (int p = 0; p < patients; ++p) {
    std::vector<double> noise(static_cast<std::size_t>(n));
    for (double& v : noise) v = normal(rng);
    const std::vector<double> field = smooth(noise, spec.dims, spec.smoothing_voxels);

    // Exactly round(n * f) voxels above the cut, ties broken by voxel index.
    std::vector<Eigen::Index> order(static_cast<std::size_t>(n));
    for (Eigen::Index i = 0; i < n; ++i) order[static_cast<std::size_t>(i)] = i;
    std::stable_sort(order.begin(), order.end(), [&](Eigen::Index a, Eigen::Index b) {
      return field[static_cast<std::size_t>(a)] > field[static_cast<std::size_t>(b)];
    });
    const auto minority = static_cast<std::size_t>(std::llround(static_cast<double>(n) * spec.minority_fraction));
    std::vector<int> labels(static_cast<std::size_t>(n), kNonBone);
    for (std::size_t i = 0; i < minority; ++i) labels[static_cast<std::size_t>(order[i])] = kBone;

    PhantomPatient patient;
    char id[32];
    std::snprintf(id, sizeof id, "patient_%02d", p + 1);
    patient.data.id = id;
    patient.data.ct = Volume(spec.dims, spec.spacing, 0.0f);
    patient.data.mask = Volume(spec.dims, spec.spacing, 1.0f);
    patient.data.mr.assign(static_cast<std::size_t>(d), Volume(spec.dims, spec.spacing, 0.0f));
    patient.true_labels = Volume(spec.dims, spec.spacing, 0.0f);

    for (int k = 0; k < kTissueClasses; ++k) {
      std::vector<Eigen::Index> voxels;
      for (Eigen::Index i = 0; i < n; ++i) {
        if (labels[static_cast<std::size_t>(i)] == k) voxels.push_back(i);
      }
      const Mat<double> draws = draw_samples(spec.truth[static_cast<std::size_t>(k)],
                                             static_cast<Eigen::Index>(voxels.size()), rng);
      for (std::size_t v = 0; v < voxels.size(); ++v) {
        const Eigen::Index i = voxels[v];
        const auto row = static_cast<Eigen::Index>(v);
        patient.data.ct.data()[i] = static_cast<float>(draws(row, 0));
        for (int c = 0; c < d; ++c) patient.data.mr[static_cast<std::size_t>(c)].data()[i] = static_cast<float>(draws(row, 1 + c));
        patient.true_labels.data()[i] = static_cast<float>(k);
      }
    }
    out.push_back(std::move(patient));
  }
  return out;
}

Volume oracle_predict(const PhantomSpec& spec, const PhantomPatient& patient, float fill_hu) {
  const PatientDataset& data = patient.data;
  Volume out(data.ct.dims(), data.ct.spacing(), fill_hu);
  const int d = spec.channels();
  if (data.channels() != d) throw Error(ErrorCode::DimensionMismatch, "oracle: channel count mismatch");
  for (int k = 0; k < kTissueClasses; ++k) {
    std::vector<Eigen::Index> voxels;
    for (Eigen::Index i = 0; i < data.mask.size(); ++i) {
      if (data.mask.data()[i] == 1.0f && static_cast<int>(patient.true_labels.data()[i]) == k) voxels.push_back(i);
    }
    Eigen::MatrixXd x(static_cast<Eigen::Index>(voxels.size()), d);
    for (std::size_t v = 0; v < voxels.size(); ++v) {
      for (int c = 0; c < d; ++c) x(static_cast<Eigen::Index>(v), c) = data.mr[static_cast<std::size_t>(c)].data()[voxels[v]];
    }
    if (voxels.empty()) continue;
    const Eigen::VectorXd y = ConditionalRegressor<double>(spec.truth[static_cast<std::size_t>(k)]).predict(x);
    for (std::size_t v = 0; v < voxels.size(); ++v) out.data()[voxels[v]] = static_cast<float>(y[static_cast<Eigen::Index>(v)]);
  }
  return out;
}

void write_phantom_truth(std::ostream& out, const PhantomSpec& spec) {
  const auto old = out.precision(std::numeric_limits<double>::max_digits10);
  out << "phantom-truth 1\n";
  out << "dims " << spec.dims[0] << ' ' << spec.dims[1] << ' ' << spec.dims[2] << '\n';
  out << "spacing " << spec.spacing[0] << ' ' << spec.spacing[1] << ' ' << spec.spacing[2] << '\n';
  out << "minority_fraction " << spec.minority_fraction << '\n';
  out << "smoothing_voxels " << spec.smoothing_voxels << '\n';
  write_tissue_gmm(out, spec.truth);
  out.precision(old);
}

PhantomSpec read_phantom_truth(std::istream& in) {
  PhantomSpec spec;
  detail::expect_token(in, "phantom-truth");
  if (detail::read_value<int>(in) != 1) throw Error(ErrorCode::MalformedFile, "phantom truth: unsupported version");
  detail::expect_token(in, "dims");
  for (int i = 0; i < 3; ++i) spec.dims[i] = detail::read_value<int>(in);
  detail::expect_token(in, "spacing");
  for (int i = 0; i < 3; ++i) spec.spacing[i] = detail::read_value<double>(in);
  detail::expect_token(in, "minority_fraction");
  spec.minority_fraction = detail::read_value<double>(in);
  detail::expect_token(in, "smoothing_voxels");
  spec.smoothing_voxels = detail::read_value<double>(in);
  spec.truth = read_tissue_gmm<double>(in);
  spec.validate();
  return spec;
}

}  // namespace rgmm
