#pragma once

#include <cstdint>
#include <iosfwd>
#include <string>
#include <vector>

#include "rgmm/config.hpp"
#include "rgmm/em.hpp"
#include "rgmm/mixture.hpp"
#include "rgmm/rusboost.hpp"
#include "rgmm/volume.hpp"

namespace rgmm {

/// Independent seed for a named stream: 1 is the classifier, 100 + k the class-k mixture.
std::uint64_t mix_seed(std::uint64_t seed, std::uint64_t stream);

/// Tissue classifier over [raw | neighborhood] features plus one joint
/// (y, x) mixture per tissue class.
struct RgmmModel {
  int channels = 0;
  PipelineConfig config;
  BoostedEnsemble classifier;
  TissueGMM<double> regressors;

  /// Layout token stored with the classifier, e.g. "d4-second".
  static std::string layout_for(int channels, NeighborhoodOrder order);
  void validate() const;
};

struct ClassFitReport {
  int label = 0;
  long train_rows = 0;
  long validation_rows = 0;
  bool validation_fallback = false;  // no validation voxels of this class; scored on training rows
  int selected_components = 0;
  std::vector<CandidateScore<double>> scores;
};

struct TrainingReport {
  std::vector<std::string> fit_patients;
  std::vector<std::string> validation_patients;
  std::vector<ClassFitReport> classes;
  std::vector<BoostRound> rounds;
  int retained_learners = 0;
  double classifier_training_error = 0.0;
  long training_voxels = 0;
  long minority_voxels = 0;
};

struct TrainedPipeline {
  RgmmModel model;
  TrainingReport report;
};

/// Patients are processed in id order, so the input order never matters. The
/// last patient (by id) is the validation set for component-count selection.
TrainedPipeline train_pipeline(std::vector<PatientDataset> patients, const PipelineConfig& cfg, std::uint64_t seed);

struct CtPrediction {
  Volume ct;
  Volume labels;  // predicted class per voxel, -1 outside the mask
  long predicted_voxels = 0;
};

CtPrediction predict_ct(const RgmmModel& model, const std::vector<Volume>& mr, const Volume& mask);

/// Conditional mean of each row of `regressor_input` under a class mixture.
Eigen::VectorXd regress_class(const MixtureModel<double>& model, const Eigen::Ref<const Eigen::MatrixXd>& regressor_input);

// Bundle layout:
//   rgmm-bundle 1
//   channels <d>
//   config <line count>
//   <key = value lines>
//   <ensemble serialization>
//   <tissue-gmm serialization>
//   end-bundle
void write_bundle(std::ostream& out, const RgmmModel& model);
RgmmModel read_bundle(std::istream& in);

}  // namespace rgmm
