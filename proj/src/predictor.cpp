#include "rgmm/predictor.hpp"

#include <algorithm>
#include <istream>
#include <ostream>
#include <set>
#include <sstream>
#include <thread>

#include "rgmm/error.hpp"

namespace rgmm {

std::uint64_t mix_seed(std::uint64_t seed, std::uint64_t stream) {
  // splitmix64 finalizer over (seed, stream)
  std::uint64_t z = seed + 0x9e3779b97f4a7c15ULL * (stream + 1);
  z = (z ^ (z >> 30)) * 0xbf58476d1ce4e5b9ULL;
  z = (z ^ (z >> 27)) * 0x94d049bb133111ebULL;
  return z ^ (z >> 31);
}

namespace {

template <typename Fn>
void parallel_chunks(Eigen::Index n, int threads, Fn&& fn) {
  if (threads <= 1 || n < 4096) {
    fn(Eigen::Index{0}, n);
    return;
  }
  std::vector<std::thread> pool;
  const Eigen::Index chunk = (n + threads - 1) / threads;
  for (int t = 0; t < threads; ++t) {
    const Eigen::Index begin = t * chunk;
    const Eigen::Index end = std::min(n, begin + chunk);
    if (begin >= end) break;
    pool.emplace_back([&fn, begin, end] { fn(begin, end); });
  }
  for (auto& th : pool) th.join();
}

Eigen::MatrixXd regressor_input(const Eigen::MatrixXd& raw, const Eigen::MatrixXd& neighborhood, RegressorFeatures which) {
  if (which == RegressorFeatures::Raw) return raw;
  Eigen::MatrixXd out(raw.rows(), raw.cols() + neighborhood.cols());
  out << raw, neighborhood;
  return out;
}

Eigen::MatrixXd take_rows(const Eigen::MatrixXd& m, const std::vector<Eigen::Index>& rows) {
  Eigen::MatrixXd out(static_cast<Eigen::Index>(rows.size()), m.cols());
  for (std::size_t i = 0; i < rows.size(); ++i) out.row(static_cast<Eigen::Index>(i)) = m.row(rows[i]);
  return out;
}

std::vector<Eigen::Index> stride_subsample(const std::vector<Eigen::Index>& rows, long cap) {
  if (cap <= 0 || static_cast<long>(rows.size()) <= cap) return rows;
  std::vector<Eigen::Index> out;
  out.reserve(static_cast<std::size_t>(cap));
  const double step = static_cast<double>(rows.size()) / static_cast<double>(cap);
  for (long i = 0; i < cap; ++i) out.push_back(rows[static_cast<std::size_t>(static_cast<double>(i) * step)]);
  return out;
}

}  // namespace

std::string RgmmModel::layout_for(int channels, NeighborhoodOrder order) {
  return "d" + std::to_string(channels) + "-" + to_string(order);
}

void RgmmModel::validate() const {
  config.validate();
  if (channels < 1) throw Error(ErrorCode::InvalidArgument, "model has no channels");
  if (classifier.classes() != static_cast<int>(regressors.size())) {
    throw Error(ErrorCode::DimensionMismatch, "classifier label set and regressor classes disagree");
  }
  const int m = static_cast<int>(neighbor_offsets(config.order).size());
  if (classifier.features() != channels * (1 + m)) {
    throw Error(ErrorCode::DimensionMismatch, "classifier feature count does not match channels/order");
  }
  const int reg_dim = 1 + (config.regressor_features == RegressorFeatures::Raw ? channels : channels * (1 + m));
  for (const auto& r : regressors) {
    if (r.dim() != reg_dim) throw Error(ErrorCode::DimensionMismatch, "regressor dimension does not match channels");
  }
}

Eigen::VectorXd regress_class(const MixtureModel<double>& model, const Eigen::Ref<const Eigen::MatrixXd>& input) {
  if (input.rows() == 0) return Eigen::VectorXd(0);
  return ConditionalRegressor<double>(model).predict(input);
}

TrainedPipeline train_pipeline(std::vector<PatientDataset> patients, const PipelineConfig& cfg, std::uint64_t seed) {
  cfg.validate();
  if (patients.size() < 2) throw Error(ErrorCode::InvalidArgument, "train_pipeline: need at least 2 training patients");
  std::sort(patients.begin(), patients.end(), [](const auto& a, const auto& b) { return a.id < b.id; });
  std::set<std::string> ids;
  for (const auto& p : patients) {
    if (!ids.insert(p.id).second) throw Error(ErrorCode::InvalidArgument, "duplicate patient id '" + p.id + "'");
  }

  const SampleTable table = assemble(patients, cfg.order, cfg.threshold_hu);
  const int validation_index = static_cast<int>(table.patients.size()) - 1;

  TrainedPipeline out;
  TrainingReport& report = out.report;
  for (int p = 0; p < validation_index; ++p) report.fit_patients.push_back(table.patients[static_cast<std::size_t>(p)]);
  report.validation_patients.push_back(table.patients[static_cast<std::size_t>(validation_index)]);
  report.training_voxels = table.rows();
  report.minority_voxels = std::count(table.label.begin(), table.label.end(), kBone);

  // Regressors: one mixture per class over (y, x).
  const Eigen::MatrixXd reg_x = regressor_input(table.raw, table.neighborhood, cfg.regressor_features);
  Eigen::MatrixXd joint(table.rows(), 1 + reg_x.cols());
  joint << table.target, reg_x;

  RgmmModel& model = out.model;
  model.channels = table.channels;
  model.config = cfg;
  for (int k = 0; k < kTissueClasses; ++k) {
    std::vector<Eigen::Index> fit_rows, val_rows;
    for (Eigen::Index r = 0; r < table.rows(); ++r) {
      if (table.label[static_cast<std::size_t>(r)] != k) continue;
      (table.patient_of_row[static_cast<std::size_t>(r)] == validation_index ? val_rows : fit_rows).push_back(r);
    }
    ClassFitReport cls;
    cls.label = k;
    const auto& grid = cfg.candidates[static_cast<std::size_t>(k)];
    const long needed = static_cast<long>(*std::min_element(grid.begin(), grid.end())) * joint.cols();
    if (static_cast<long>(fit_rows.size()) < needed) {
      throw Error(ErrorCode::FitFailed, "class " + std::to_string(k) + " has " + std::to_string(fit_rows.size()) +
                                            " training voxels; the smallest candidate needs " + std::to_string(needed));
    }
    if (val_rows.empty()) {
      cls.validation_fallback = true;
      val_rows = fit_rows;
    }
    fit_rows = stride_subsample(fit_rows, cfg.em_max_samples);
    cls.train_rows = static_cast<long>(fit_rows.size());
    cls.validation_rows = static_cast<long>(val_rows.size());
    Selection<double> sel = select_model<double>(take_rows(joint, fit_rows), take_rows(joint, val_rows), grid, cfg.em,
                                                 mix_seed(seed, 100 + static_cast<std::uint64_t>(k)));
    cls.selected_components = sel.components;
    cls.scores = std::move(sel.scores);
    model.regressors.push_back(std::move(sel.model));
    report.classes.push_back(std::move(cls));
  }

  // Classifier on [raw | neighborhood] over every training voxel.
  const Eigen::MatrixXd features = table.combined();
  BoostResult boost = train_rusboost(features, table.label, kTissueClasses, cfg.tree, cfg.boost, mix_seed(seed, 1),
                                     RgmmModel::layout_for(table.channels, cfg.order));
  model.classifier = std::move(boost.ensemble);
  report.rounds = std::move(boost.rounds);
  report.retained_learners = static_cast<int>(model.classifier.learners().size());
  const std::vector<int> fitted = model.classifier.predict_rows(features);
  long wrong = 0;
  for (std::size_t i = 0; i < fitted.size(); ++i) wrong += fitted[i] != table.label[i];
  report.classifier_training_error = static_cast<double>(wrong) / static_cast<double>(fitted.size());

  model.validate();
  return out;
}

CtPrediction predict_ct(const RgmmModel& model, const std::vector<Volume>& mr, const Volume& mask) {
  if (static_cast<int>(mr.size()) != model.channels) {
    throw Error(ErrorCode::DimensionMismatch, "model expects " + std::to_string(model.channels) + " MR channels, got " +
                                                  std::to_string(mr.size()));
  }
  if (!((mask.data() == 0.0f) || (mask.data() == 1.0f)).all()) {
    throw Error(ErrorCode::InvalidData, "mask values must be exactly 0 or 1");
  }
  const auto& cfg = model.config;
  const VoxelFeatures vf = voxel_features(mr, mask, cfg.order);
  CtPrediction out{Volume(mask.dims(), mask.spacing(), cfg.fill_hu), Volume(mask.dims(), mask.spacing(), -1.0f), 0};
  const auto n = static_cast<Eigen::Index>(vf.voxel.size());
  out.predicted_voxels = static_cast<long>(n);
  if (n == 0) return out;

  Eigen::MatrixXd features(n, vf.raw.cols() + vf.neighborhood.cols());
  features << vf.raw, vf.neighborhood;
  if (features.cols() != model.classifier.features()) {
    throw Error(ErrorCode::DimensionMismatch, "input feature layout does not match the model");
  }
  const Eigen::MatrixXd reg_x = regressor_input(vf.raw, vf.neighborhood, cfg.regressor_features);
  const int classes = model.classifier.classes();

  Eigen::MatrixXd scores(n, classes);
  parallel_chunks(n, cfg.threads, [&](Eigen::Index begin, Eigen::Index end) {
    for (Eigen::Index i = begin; i < end; ++i) scores.row(i) = model.classifier.scores(features.row(i)).transpose();
  });
  std::vector<int> labels(static_cast<std::size_t>(n));
  for (Eigen::Index i = 0; i < n; ++i) labels[static_cast<std::size_t>(i)] = argmax_label(scores.row(i).transpose());

  Eigen::VectorXd estimate(n);
  if (cfg.gating == Gating::Hard) {
    for (int k = 0; k < classes; ++k) {
      std::vector<Eigen::Index> rows;
      for (Eigen::Index i = 0; i < n; ++i) {
        if (labels[static_cast<std::size_t>(i)] == k) rows.push_back(i);
      }
      const Eigen::VectorXd y = regress_class(model.regressors[static_cast<std::size_t>(k)], take_rows(reg_x, rows));
      for (std::size_t r = 0; r < rows.size(); ++r) estimate[rows[r]] = y[static_cast<Eigen::Index>(r)];
    }
  } else {
    // Vote shares as class probabilities.
    estimate.setZero();
    const Eigen::VectorXd totals = scores.rowwise().sum();
    for (int k = 0; k < classes; ++k) {
      const Eigen::VectorXd y = regress_class(model.regressors[static_cast<std::size_t>(k)], reg_x);
      estimate.array() += scores.col(k).array() / totals.array() * y.array();
    }
  }
  for (Eigen::Index i = 0; i < n; ++i) {
    out.ct.data()[vf.voxel[static_cast<std::size_t>(i)]] = static_cast<float>(estimate[i]);
    out.labels.data()[vf.voxel[static_cast<std::size_t>(i)]] = static_cast<float>(labels[static_cast<std::size_t>(i)]);
  }
  return out;
}

void write_bundle(std::ostream& out, const RgmmModel& model) {
  model.validate();
  const std::string config = pipeline_to_text(model.config);
  out << "rgmm-bundle 1\n";
  out << "channels " << model.channels << '\n';
  out << "config " << std::count(config.begin(), config.end(), '\n') << '\n' << config;
  model.classifier.write(out);
  write_tissue_gmm(out, model.regressors);
  out << "end-bundle\n";
}

RgmmModel read_bundle(std::istream& in) {
  auto expect = [&](const std::string& token) {
    std::string got;
    if (!(in >> got) || got != token) {
      throw Error(ErrorCode::MalformedFile, "bundle: expected '" + token + "', got '" + got + "'");
    }
  };
  expect("rgmm-bundle");
  int version = 0;
  if (!(in >> version) || version != 1) throw Error(ErrorCode::MalformedFile, "bundle: unsupported version");
  RgmmModel model;
  expect("channels");
  if (!(in >> model.channels)) throw Error(ErrorCode::MalformedFile, "bundle: bad channel count");
  expect("config");
  int lines = 0;
  if (!(in >> lines) || lines < 0) throw Error(ErrorCode::MalformedFile, "bundle: bad config length");
  std::string line;
  std::getline(in, line);
  std::string text;
  for (int i = 0; i < lines; ++i) {
    if (!std::getline(in, line)) throw Error(ErrorCode::MalformedFile, "bundle: truncated config");
    text += line + '\n';
  }
  try {
    model.config = pipeline_from_map(parse_key_values(text));
  } catch (const Error& e) {
    throw Error(ErrorCode::MalformedFile, std::string("bundle config: ") + e.what());
  }
  model.classifier = BoostedEnsemble::read(in);
  model.regressors = read_tissue_gmm<double>(in);
  expect("end-bundle");
  model.validate();
  return model;
}

}  // namespace rgmm
