#pragma once

#include <Eigen/Core>

#include <cstdint>
#include <functional>
#include <iosfwd>
#include <span>
#include <string>
#include <vector>

#include "rgmm/config.hpp"
#include "rgmm/volume.hpp"

namespace rgmm {

struct ClassificationMetrics {
  long tp = 0, fp = 0, fn = 0, tn = 0;
  double err = 0.0;
  double precision = 0.0;
  double recall = 0.0;
  double f_score = 0.0;
  double beta = 1.0;

  long total() const { return tp + fp + fn + tn; }
  double accuracy() const;
};

struct PrecisionRecall {
  double precision = 0.0;
  double recall = 0.0;
  double f_score = 0.0;
};

/// Pr = TP/(TP+FP), Re = TP/(TP+FN), F = (1+b^2) Re Pr / (b^2 Pr + Re); 0/0 is 0.
PrecisionRecall prf(long tp, long fp, long fn, double beta = 1.0);

/// Confusion counts with `positive` (the minority class) as the positive label.
ClassificationMetrics classification_metrics(std::span<const int> truth, std::span<const int> predicted,
                                             int positive = 1, double beta = 1.0);

/// Trains on the out-of-fold rows and returns the predicted label of every in-fold row.
using FoldTrainer = std::function<std::vector<int>(std::span<const Eigen::Index> train, std::span<const Eigen::Index> test)>;

struct CrossValidation {
  ClassificationMetrics pooled;
  std::vector<ClassificationMetrics> folds;
  std::vector<int> fold_of_row;
  int redraws = 0;
};

/// Seeded shuffle, then k near-equal contiguous blocks. A draw that leaves
/// some fold (or its complement) without one of the classes is redrawn once.
CrossValidation kfold_cv(std::span<const int> labels, int k, const FoldTrainer& train, std::uint64_t seed,
                         int positive = 1, double beta = 1.0);

enum class ResidualMode {
  Signed,      // mean of (sCT - mCT)
  Error,       // mean of (mCT - sCT)
  Absolute,    // mean of |sCT - mCT|
};

struct CurvePoint {
  double center = 0.0;
  double value = 0.0;
  long count = 0;
};

/// Non-overlapping windows of `window` HU over the measured intensity range,
/// anchored at the smallest measured value; empty windows are omitted.
std::vector<CurvePoint> smoothed_residuals(std::span<const double> measured, std::span<const double> estimated,
                                           double window, ResidualMode mode);

struct PatientError {
  std::string id;
  long voxels = 0;
  long bone_voxels = 0;
  double mae = 0.0;
  double bone_mae = 0.0;  // voxels with measured CT above the bone threshold; 0 when none
  bool failed = false;
  std::string error;
};

struct RegressionReport {
  std::vector<PatientError> patients;
  double mean_mae = 0.0;
  double mean_bone_mae = 0.0;
  std::vector<CurvePoint> residual;           // sCT - mCT
  std::vector<CurvePoint> prediction_error;   // mCT - sCT
  std::vector<CurvePoint> absolute_residual;  // |sCT - mCT|
  std::vector<double> measured;               // pooled masked voxels, patient order
  std::vector<double> estimated;
};

/// Given the training patients and the held-out one, returns the CT estimate for the held-out patient.
using PatientPredictor = std::function<Volume(const std::vector<PatientDataset>& train, const PatientDataset& held_out)>;

RegressionReport loo_patient_eval(const std::vector<PatientDataset>& patients, const PatientPredictor& predict,
                                  double window = 20.0, double bone_threshold_hu = kDefaultBoneThresholdHu);

/// The trained pipeline as a PatientPredictor.
PatientPredictor pipeline_predictor(const PipelineConfig& cfg, std::uint64_t seed);

/// MAE over mask == 1 voxels, and over those whose measured CT exceeds the threshold.
PatientError patient_error(const PatientDataset& patient, const Volume& estimate,
                           double bone_threshold_hu = kDefaultBoneThresholdHu);

void write_patient_table_csv(std::ostream& out, const RegressionReport& report);
void write_curves_csv(std::ostream& out, const RegressionReport& report);

}  // namespace rgmm
