#include "rgmm/evaluation.hpp"

#include <algorithm>
#include <cmath>
#include <iomanip>
#include <map>
#include <numeric>
#include <ostream>
#include <random>
#include <set>

#include "rgmm/error.hpp"
#include "rgmm/predictor.hpp"

namespace rgmm {

double ClassificationMetrics::accuracy() const {
  const long n = total();
  return n == 0 ? 0.0 : static_cast<double>(tp + tn) / static_cast<double>(n);
}

PrecisionRecall prf(long tp, long fp, long fn, double beta) {
  if (tp < 0 || fp < 0 || fn < 0) throw Error(ErrorCode::InvalidArgument, "prf: negative counts");
  PrecisionRecall out;
  out.precision = tp + fp == 0 ? 0.0 : static_cast<double>(tp) / static_cast<double>(tp + fp);
  out.recall = tp + fn == 0 ? 0.0 : static_cast<double>(tp) / static_cast<double>(tp + fn);
  // Count form of (1 + b^2) Pr Re / (b^2 Pr + Re): exact for small integer counts.
  const double b2 = beta * beta;
  const double num = (1.0 + b2) * static_cast<double>(tp);
  const double denom = num + b2 * static_cast<double>(fn) + static_cast<double>(fp);
  out.f_score = tp == 0 ? 0.0 : num / denom;
  return out;
}

ClassificationMetrics classification_metrics(std::span<const int> truth, std::span<const int> predicted, int positive,
                                             double beta) {
  if (truth.size() != predicted.size()) throw Error(ErrorCode::DimensionMismatch, "metrics: length mismatch");
  ClassificationMetrics m;
  m.beta = beta;
  long wrong = 0;
  for (std::size_t i = 0; i < truth.size(); ++i) {
    const bool t = truth[i] == positive;
    const bool p = predicted[i] == positive;
    if (t && p) ++m.tp;
    else if (!t && p) ++m.fp;
    else if (t && !p) ++m.fn;
    else ++m.tn;
    wrong += truth[i] != predicted[i];
  }
  m.err = truth.empty() ? 0.0 : static_cast<double>(wrong) / static_cast<double>(truth.size());
  const PrecisionRecall pr = prf(m.tp, m.fp, m.fn, beta);
  m.precision = pr.precision;
  m.recall = pr.recall;
  m.f_score = pr.f_score;
  return m;
}

namespace {

std::vector<int> assign_folds(std::size_t n, int k, std::mt19937_64& rng) {
  std::vector<Eigen::Index> order(n);
  std::iota(order.begin(), order.end(), 0);
  std::shuffle(order.begin(), order.end(), rng);
  std::vector<int> fold(n);
  for (std::size_t pos = 0; pos < n; ++pos) {
    fold[static_cast<std::size_t>(order[pos])] = static_cast<int>(pos * static_cast<std::size_t>(k) / n);
  }
  return fold;
}

bool folds_cover_classes(std::span<const int> labels, const std::vector<int>& fold, int k) {
  std::set<int> all(labels.begin(), labels.end());
  for (int f = 0; f < k; ++f) {
    std::set<int> in, out;
    for (std::size_t i = 0; i < labels.size(); ++i) (fold[i] == f ? in : out).insert(labels[i]);
    if (in != all || out != all) return false;
  }
  return true;
}

}  // namespace

CrossValidation kfold_cv(std::span<const int> labels, int k, const FoldTrainer& train, std::uint64_t seed, int positive,
                         double beta) {
  if (k < 2) throw Error(ErrorCode::InvalidArgument, "kfold_cv: k must be >= 2");
  if (labels.size() < static_cast<std::size_t>(k)) throw Error(ErrorCode::InvalidArgument, "kfold_cv: fewer samples than folds");
  std::mt19937_64 rng(seed);
  CrossValidation cv;
  cv.fold_of_row = assign_folds(labels.size(), k, rng);
  if (!folds_cover_classes(labels, cv.fold_of_row, k)) {
    cv.redraws = 1;
    cv.fold_of_row = assign_folds(labels.size(), k, rng);
    if (!folds_cover_classes(labels, cv.fold_of_row, k)) {
      throw Error(ErrorCode::InvalidData, "kfold_cv: a fold is missing a class after one redraw");
    }
  }
  std::vector<int> truth_all, pred_all;
  for (int f = 0; f < k; ++f) {
    std::vector<Eigen::Index> train_rows, test_rows;
    for (std::size_t i = 0; i < labels.size(); ++i) {
      (cv.fold_of_row[i] == f ? test_rows : train_rows).push_back(static_cast<Eigen::Index>(i));
    }
    const std::vector<int> predicted = train(train_rows, test_rows);
    if (predicted.size() != test_rows.size()) throw Error(ErrorCode::DimensionMismatch, "kfold_cv: trainer returned wrong count");
    std::vector<int> truth;
    for (Eigen::Index r : test_rows) truth.push_back(labels[static_cast<std::size_t>(r)]);
    cv.folds.push_back(classification_metrics(truth, predicted, positive, beta));
    truth_all.insert(truth_all.end(), truth.begin(), truth.end());
    pred_all.insert(pred_all.end(), predicted.begin(), predicted.end());
  }
  cv.pooled = classification_metrics(truth_all, pred_all, positive, beta);
  return cv;
}

std::vector<CurvePoint> smoothed_residuals(std::span<const double> measured, std::span<const double> estimated,
                                           double window, ResidualMode mode) {
  if (measured.size() != estimated.size()) throw Error(ErrorCode::DimensionMismatch, "smoothed_residuals: length mismatch");
  if (measured.empty()) throw Error(ErrorCode::EmptyInput, "smoothed_residuals: no voxels");
  if (!(window > 0.0)) throw Error(ErrorCode::InvalidArgument, "smoothed_residuals: window must be > 0");
  const double anchor = *std::min_element(measured.begin(), measured.end());
  std::map<long, std::pair<double, long>> bins;
  for (std::size_t i = 0; i < measured.size(); ++i) {
    const auto bin = static_cast<long>(std::floor((measured[i] - anchor) / window));
    double r = estimated[i] - measured[i];
    if (mode == ResidualMode::Error) r = -r;
    if (mode == ResidualMode::Absolute) r = std::abs(r);
    auto& acc = bins[bin];
    acc.first += r;
    acc.second += 1;
  }
  std::vector<CurvePoint> out;
  for (const auto& [bin, acc] : bins) {
    out.push_back({anchor + (static_cast<double>(bin) + 0.5) * window, acc.first / static_cast<double>(acc.second), acc.second});
  }
  return out;
}

PatientError patient_error(const PatientDataset& patient, const Volume& estimate, double bone_threshold_hu) {
  if (!estimate.same_geometry(patient.ct)) throw Error(ErrorCode::DimensionMismatch, "estimate geometry differs from CT");
  PatientError e;
  e.id = patient.id;
  double abs_sum = 0.0, bone_sum = 0.0;
  for (Eigen::Index i = 0; i < patient.mask.size(); ++i) {
    if (patient.mask.data()[i] != 1.0f) continue;
    const double m = patient.ct.data()[i];
    const double err = std::abs(static_cast<double>(estimate.data()[i]) - m);
    abs_sum += err;
    ++e.voxels;
    if (m > bone_threshold_hu) {
      bone_sum += err;
      ++e.bone_voxels;
    }
  }
  e.mae = e.voxels ? abs_sum / static_cast<double>(e.voxels) : 0.0;
  e.bone_mae = e.bone_voxels ? bone_sum / static_cast<double>(e.bone_voxels) : 0.0;
  return e;
}

RegressionReport loo_patient_eval(const std::vector<PatientDataset>& patients, const PatientPredictor& predict,
                                  double window, double bone_threshold_hu) {
  if (patients.size() < 2) throw Error(ErrorCode::InvalidArgument, "loo_patient_eval: need at least 2 patients");
  RegressionReport report;
  int ok = 0;
  for (std::size_t held = 0; held < patients.size(); ++held) {
    std::vector<PatientDataset> train;
    for (std::size_t p = 0; p < patients.size(); ++p) {
      if (p != held) train.push_back(patients[p]);
    }
    const PatientDataset& test = patients[held];
    try {
      const Volume estimate = predict(train, test);
      PatientError e = patient_error(test, estimate, bone_threshold_hu);
      for (Eigen::Index i = 0; i < test.mask.size(); ++i) {
        if (test.mask.data()[i] != 1.0f) continue;
        report.measured.push_back(test.ct.data()[i]);
        report.estimated.push_back(estimate.data()[i]);
      }
      report.mean_mae += e.mae;
      report.mean_bone_mae += e.bone_mae;
      ++ok;
      report.patients.push_back(std::move(e));
    } catch (const Error& err) {
      PatientError e;
      e.id = test.id;
      e.failed = true;
      e.error = err.what();
      report.patients.push_back(std::move(e));
    }
  }
  if (ok > 0) {
    report.mean_mae /= ok;
    report.mean_bone_mae /= ok;
    report.residual = smoothed_residuals(report.measured, report.estimated, window, ResidualMode::Signed);
    report.prediction_error = smoothed_residuals(report.measured, report.estimated, window, ResidualMode::Error);
    report.absolute_residual = smoothed_residuals(report.measured, report.estimated, window, ResidualMode::Absolute);
  }
  return report;
}

PatientPredictor pipeline_predictor(const PipelineConfig& cfg, std::uint64_t seed) {
  return [cfg, seed](const std::vector<PatientDataset>& train, const PatientDataset& held_out) {
    const TrainedPipeline trained = train_pipeline(train, cfg, seed);
    return predict_ct(trained.model, held_out.mr, held_out.mask).ct;
  };
}

void write_patient_table_csv(std::ostream& out, const RegressionReport& report) {
  out << std::setprecision(10);
  out << "patient,voxels,bone_voxels,mae_hu,bone_mae_hu,failed\n";
  for (const auto& p : report.patients) {
    out << p.id << ',' << p.voxels << ',' << p.bone_voxels << ',' << p.mae << ',' << p.bone_mae << ','
        << (p.failed ? 1 : 0) << '\n';
  }
  out << "mean,,," << report.mean_mae << ',' << report.mean_bone_mae << ",\n";
}

void write_curves_csv(std::ostream& out, const RegressionReport& report) {
  out << std::setprecision(10);
  out << "window_center_hu,count,residual_sct_minus_mct,error_mct_minus_sct,abs_residual\n";
  for (std::size_t i = 0; i < report.residual.size(); ++i) {
    out << report.residual[i].center << ',' << report.residual[i].count << ',' << report.residual[i].value << ','
        << report.prediction_error[i].value << ',' << report.absolute_residual[i].value << '\n';
  }
}

}  // namespace rgmm
