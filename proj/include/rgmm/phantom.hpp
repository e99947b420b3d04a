#pragma once

#include <Eigen/Core>

#include <cstdint>
#include <iosfwd>
#include <vector>

#include "rgmm/config.hpp"
#include "rgmm/mixture.hpp"
#include "rgmm/volume.hpp"

namespace rgmm {

/// Generator for synthetic cohorts with known per-class joint (y, x) mixtures.
/// Labels come from smoothed white noise thresholded at the quantile that
/// yields the requested minority fraction, so neighborhoods carry class information.
struct PhantomSpec {
  Eigen::Array3i dims = Eigen::Array3i::Constant(32);
  Eigen::Array3d spacing = Eigen::Array3d::Constant(1.33);
  TissueGMM<double> truth;  // indexed by label, dimension 1 + d
  double minority_fraction = 0.1849;
  double smoothing_voxels = 2.0;

  int channels() const { return truth.empty() ? 0 : truth.front().dim() - 1; }
  void validate() const;
};

/// Head-like defaults with d = 4: three non-bone and two bone sub-tissues.
/// `noise_scale` multiplies the MR noise standard deviation.
PhantomSpec default_phantom_spec(const PhantomSettings& settings = {});

struct PhantomPatient {
  PatientDataset data;
  Volume true_labels;
};

std::vector<PhantomPatient> generate_phantom(const PhantomSpec& spec, int patients, std::uint64_t seed);

/// Estimate from the generating parameters and the true labels; mask == 0 voxels get `fill_hu`.
Volume oracle_predict(const PhantomSpec& spec, const PhantomPatient& patient, float fill_hu = -1000.0f);

// Truth file:
//   phantom-truth 1
//   dims <nx ny nz>
//   spacing <sx sy sz>
//   minority_fraction <f>
//   smoothing_voxels <s>
//   <tissue-gmm serialization>
void write_phantom_truth(std::ostream& out, const PhantomSpec& spec);
PhantomSpec read_phantom_truth(std::istream& in);

}  // namespace rgmm
