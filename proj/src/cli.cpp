#include "rgmm/cli.hpp"

#include <CLI11.hpp>
#include <json.hpp>
#include <openssl/evp.h>

#include <algorithm>
#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <iomanip>
#include <iostream>
#include <map>
#include <sstream>

#include "rgmm/config.hpp"
#include "rgmm/error.hpp"
#include "rgmm/evaluation.hpp"
#include "rgmm/phantom.hpp"
#include "rgmm/predictor.hpp"
#include "rgmm/rusboost.hpp"

namespace rgmm::cli {

namespace fs = std::filesystem;
using json = nlohmann::ordered_json;

namespace {

std::string sha256_file(const fs::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw Error(ErrorCode::Io, "cannot read " + path.string());
  const std::string bytes((std::istreambuf_iterator<char>(in)), std::istreambuf_iterator<char>());
  unsigned char md[EVP_MAX_MD_SIZE];
  unsigned int len = 0;
  if (EVP_Digest(bytes.data(), bytes.size(), md, &len, EVP_sha256(), nullptr) != 1) {
    throw Error(ErrorCode::Io, "sha256 failed for " + path.string());
  }
  static const char* hex = "0123456789abcdef";
  std::string out;
  for (unsigned int i = 0; i < len; ++i) {
    out += hex[md[i] >> 4];
    out += hex[md[i] & 15];
  }
  return out;
}

std::vector<fs::path> files_under(const fs::path& dir) {
  std::vector<fs::path> out;
  for (const auto& e : fs::recursive_directory_iterator(dir)) {
    if (e.is_regular_file()) out.push_back(e.path());
  }
  std::sort(out.begin(), out.end());
  return out;
}

fs::path payload_of(const fs::path& header) {
  fs::path p = header;
  return p.replace_extension(".raw");
}

/// Records inputs and outputs with checksums; refuses outputs that would overwrite an input.
class Manifest {
 public:
  Manifest(std::string command, const std::vector<std::string>& args) : command_(std::move(command)), args_(args) {}

  void input(const fs::path& p) { inputs_.push_back(p); }
  void input_tree(const fs::path& dir) {
    for (const auto& f : files_under(dir)) input(f);
  }
  void input_volume(const fs::path& header) {
    input(header);
    input(payload_of(header));
  }

  /// Call before writing `p`.
  fs::path claim(const fs::path& p) {
    for (const auto& in : inputs_) {
      std::error_code ec;
      if (fs::exists(p) && fs::equivalent(p, in, ec)) {
        throw Error(ErrorCode::InvalidArgument, "output " + p.string() + " would overwrite an input");
      }
    }
    outputs_.push_back(p);
    return p;
  }
  fs::path claim_volume(const fs::path& header) {
    claim(payload_of(header));
    return claim(header);
  }

  json seeds = json::object();

  void write(const fs::path& dir, const RunConfig& rc) const {
    json j;
    j["tool"] = "rgmm";
    j["manifest_version"] = 1;
    j["command"] = command_;
    j["arguments"] = args_;
    j["seed"] = rc.seed;
    j["derived_seeds"] = seeds;
    j["config"] = json::object();
    for (const auto& [k, v] : rc.to_map()) j["config"][k] = v;
    j["inputs"] = listing(inputs_);
    j["outputs"] = listing(outputs_);
    const fs::path path = dir / "manifest.json";
    std::ofstream out(path, std::ios::binary);
    if (!out) throw Error(ErrorCode::Io, "cannot write " + path.string());
    out << j.dump(2) << '\n';
  }

 private:
  static json listing(const std::vector<fs::path>& paths) {
    json a = json::array();
    for (const auto& p : paths) a.push_back({{"path", p.generic_string()}, {"sha256", sha256_file(p)}});
    return a;
  }

  std::string command_;
  std::vector<std::string> args_;
  std::vector<fs::path> inputs_;
  std::vector<fs::path> outputs_;
};

std::ofstream open_out(const fs::path& p) {
  std::ofstream out(p, std::ios::binary);
  if (!out) throw Error(ErrorCode::Io, "cannot write " + p.string());
  return out;
}

void write_json(const fs::path& p, const json& j) { open_out(p) << j.dump(2) << '\n'; }

/// Options shared by every subcommand.
struct Common {
  std::string config;
  std::vector<std::string> sets;
  std::map<std::string, std::string> flags;
  bool quiet = false;
};

void add_common(CLI::App* sub, Common& c) {
  sub->add_option("-c,--config", c.config, "key = value config file (default: $" + std::string(kConfigEnv) + ")");
  sub->add_option("--set", c.sets, "override one config key, as key=value (repeatable)");
  sub->add_flag("-q,--quiet", c.quiet, "suppress progress output");
  static const std::vector<std::pair<std::string, std::string>> keyed = {
      {"--seed", "seed"},
      {"--threshold-hu", "threshold_hu"},
      {"--neighborhood", "neighborhood"},
      {"--learners", "learners"},
      {"--max-splits", "max_splits"},
      {"--min-leaf", "min_leaf"},
      {"--rus-ratio", "rus_ratio"},
      {"--components-class0", "components_class0"},
      {"--components-class1", "components_class1"},
      {"--em-restarts", "em_restarts"},
      {"--em-max-samples", "em_max_samples"},
      {"--threads", "threads"},
      {"--cv-folds", "cv_folds"},
      {"--window-hu", "window_hu"},
      {"--phantom-patients", "phantom_patients"},
      {"--phantom-size", "phantom_size"},
  };
  for (const auto& [flag, key] : keyed) {
    sub->add_option_function<std::string>(
        flag, [&c, key = key](const std::string& v) { c.flags[key] = v; }, "config key " + key);
  }
}

/// Defaults, then the config file, then --set, then dedicated flags.
RunConfig resolve(const Common& c, Manifest& manifest) {
  RunConfig rc;
  std::string path = c.config;
  if (path.empty()) {
    if (const char* env = std::getenv(kConfigEnv)) path = env;
  }
  if (!path.empty()) {
    rc.apply(read_key_value_file(path));
    manifest.input(path);
  }
  for (const auto& s : c.sets) {
    const auto eq = s.find('=');
    if (eq == std::string::npos) throw Error(ErrorCode::InvalidConfig, "--set expects key=value, got '" + s + "'");
    rc.apply(parse_key_values(s.substr(0, eq) + " = " + s.substr(eq + 1)));
  }
  rc.apply(c.flags);
  rc.validate();
  return rc;
}

json scores_json(const std::vector<CandidateScore<double>>& scores) {
  json a = json::array();
  for (const auto& s : scores) {
    a.push_back({{"components", s.components},
                 {"ok", s.ok},
                 {"mse", s.mse},
                 {"mae", s.mae},
                 {"degenerate", s.degenerate},
                 {"iterations", s.iterations},
                 {"converged", s.converged},
                 {"error", s.error}});
  }
  return a;
}

json training_json(const TrainingReport& r) {
  json j;
  j["fit_patients"] = r.fit_patients;
  j["validation_patients"] = r.validation_patients;
  j["training_voxels"] = r.training_voxels;
  j["minority_voxels"] = r.minority_voxels;
  j["retained_learners"] = r.retained_learners;
  j["classifier_training_error"] = r.classifier_training_error;
  j["classes"] = json::array();
  for (const auto& c : r.classes) {
    j["classes"].push_back({{"label", c.label},
                            {"train_rows", c.train_rows},
                            {"validation_rows", c.validation_rows},
                            {"validation_fallback", c.validation_fallback},
                            {"selected_components", c.selected_components},
                            {"candidates", scores_json(c.scores)}});
  }
  j["rounds"] = json::array();
  for (const auto& b : r.rounds) {
    j["rounds"].push_back({{"round", b.round},
                           {"attempts", b.attempts},
                           {"skipped", b.skipped},
                           {"raw_pseudo_loss", b.raw_loss},
                           {"pseudo_loss", b.error},
                           {"alpha", b.alpha},
                           {"reset_distribution", b.reset_distribution}});
  }
  return j;
}

json metrics_json(const ClassificationMetrics& m) {
  return {{"tp", m.tp},         {"fp", m.fp},     {"fn", m.fn},           {"tn", m.tn},
          {"err", m.err},       {"precision", m.precision}, {"recall", m.recall}, {"f_score", m.f_score},
          {"beta", m.beta}};
}

void seed_streams(Manifest& m, std::uint64_t seed) {
  m.seeds["classifier"] = mix_seed(seed, 1);
  for (int k = 0; k < kTissueClasses; ++k) m.seeds["class_" + std::to_string(k)] = mix_seed(seed, 100 + k);
}

void say(const Common& c, const std::string& line) {
  if (!c.quiet) std::cout << line << '\n';
}

// ---------------------------------------------------------------------------

int cmd_phantom(const Common& c, const fs::path& out, const std::vector<std::string>& args) {
  Manifest manifest("phantom", args);
  const RunConfig rc = resolve(c, manifest);
  const PhantomSpec spec = default_phantom_spec(rc.phantom);
  const std::uint64_t seed = mix_seed(rc.seed, 3);
  manifest.seeds["phantom"] = seed;
  const std::vector<PhantomPatient> cohort = generate_phantom(spec, rc.phantom.patients, seed);

  fs::create_directories(out);
  for (const auto& p : cohort) {
    const fs::path dir = out / p.data.id;
    for (int ch = 0; ch < p.data.channels(); ++ch) manifest.claim_volume(dir / ("mr_" + std::to_string(ch) + ".vhdr"));
    manifest.claim_volume(dir / "ct.vhdr");
    manifest.claim_volume(dir / "mask.vhdr");
    save_patient(dir, p.data);
    write_volume(manifest.claim_volume(dir / "true_labels.vhdr"), p.true_labels);
  }
  {
    std::ofstream truth = open_out(manifest.claim(out / "truth.txt"));
    write_phantom_truth(truth, spec);
  }
  manifest.write(out, rc);
  say(c, "phantom: " + std::to_string(cohort.size()) + " patients written to " + out.string());
  return kExitOk;
}

int cmd_train(const Common& c, const fs::path& cohort_dir, const fs::path& out, const std::vector<std::string>& args) {
  Manifest manifest("train", args);
  const RunConfig rc = resolve(c, manifest);
  std::vector<PatientDataset> cohort = load_cohort(cohort_dir);
  manifest.input_tree(cohort_dir);
  seed_streams(manifest, rc.seed);

  const TrainedPipeline trained = train_pipeline(std::move(cohort), rc.pipeline, rc.seed);
  fs::create_directories(out);
  {
    std::ofstream bundle = open_out(manifest.claim(out / "model.rgmm"));
    write_bundle(bundle, trained.model);
  }
  write_json(manifest.claim(out / "training_report.json"), training_json(trained.report));
  manifest.write(out, rc);
  say(c, "train: " + std::to_string(trained.report.retained_learners) + " learners, classifier training error " +
             std::to_string(trained.report.classifier_training_error));
  return kExitOk;
}

int cmd_predict(const Common& c, const fs::path& model_path, const fs::path& input, const fs::path& out,
                const std::vector<std::string>& args) {
  Manifest manifest("predict", args);
  const RunConfig rc = resolve(c, manifest);
  RgmmModel model;
  {
    std::ifstream in(model_path, std::ios::binary);
    if (!in) throw Error(ErrorCode::Io, "cannot open model " + model_path.string());
    model = read_bundle(in);
  }
  manifest.input(model_path);
  model.config.threads = rc.pipeline.threads;

  const PatientPaths paths = PatientPaths::in_directory(input);
  if (paths.mr.empty()) throw Error(ErrorCode::Io, "no mr_0.vhdr in " + input.string());
  std::vector<Volume> mr;
  for (const auto& p : paths.mr) {
    mr.push_back(read_volume(p));
    manifest.input_volume(p);
  }
  Volume mask(mr.front().dims(), mr.front().spacing(), 1.0f);
  if (fs::exists(paths.mask)) {
    mask = read_volume(paths.mask);
    manifest.input_volume(paths.mask);
  }

  const CtPrediction pred = predict_ct(model, mr, mask);
  fs::create_directories(out);
  write_volume(manifest.claim_volume(out / "sct.vhdr"), pred.ct);
  write_volume(manifest.claim_volume(out / "sct_labels.vhdr"), pred.labels);
  manifest.write(out, rc);
  say(c, "predict: " + std::to_string(pred.predicted_voxels) + " voxels estimated");
  return kExitOk;
}

int cmd_evaluate(const Common& c, const fs::path& cohort_dir, const fs::path& out, const std::string& truth_path,
                 const std::vector<std::string>& args) {
  Manifest manifest("evaluate", args);
  const RunConfig rc = resolve(c, manifest);
  const std::vector<PatientDataset> cohort = load_cohort(cohort_dir);
  manifest.input_tree(cohort_dir);
  seed_streams(manifest, rc.seed);

  const RegressionReport report =
      loo_patient_eval(cohort, pipeline_predictor(rc.pipeline, rc.seed), rc.window_hu, rc.pipeline.threshold_hu);

  json summary;
  summary["mean_mae_hu"] = report.mean_mae;
  summary["mean_bone_mae_hu"] = report.mean_bone_mae;
  summary["window_hu"] = rc.window_hu;
  summary["patients"] = json::array();
  int failed = 0;
  for (const auto& p : report.patients) {
    failed += p.failed;
    summary["patients"].push_back({{"id", p.id},
                                   {"voxels", p.voxels},
                                   {"bone_voxels", p.bone_voxels},
                                   {"mae_hu", p.mae},
                                   {"bone_mae_hu", p.bone_mae},
                                   {"failed", p.failed},
                                   {"error", p.error}});
  }
  summary["failed_patients"] = failed;

  if (!truth_path.empty()) {
    std::ifstream in(truth_path);
    if (!in) throw Error(ErrorCode::Io, "cannot open truth " + truth_path);
    const PhantomSpec spec = read_phantom_truth(in);
    manifest.input(truth_path);
    double oracle = 0.0;
    json rows = json::array();
    for (const auto& p : cohort) {
      PhantomPatient pp{p, read_volume(cohort_dir / p.id / "true_labels.vhdr")};
      const PatientError e = patient_error(p, oracle_predict(spec, pp, rc.pipeline.fill_hu), rc.pipeline.threshold_hu);
      oracle += e.mae;
      rows.push_back({{"id", p.id}, {"mae_hu", e.mae}, {"bone_mae_hu", e.bone_mae}});
    }
    oracle /= static_cast<double>(cohort.size());
    summary["oracle"] = {{"mean_mae_hu", oracle}, {"patients", rows}, {"relative_gap", report.mean_mae / oracle - 1.0}};
  }

  fs::create_directories(out);
  {
    std::ofstream table = open_out(manifest.claim(out / "patients.csv"));
    write_patient_table_csv(table, report);
    std::ofstream curves = open_out(manifest.claim(out / "curves.csv"));
    write_curves_csv(curves, report);
  }
  write_json(manifest.claim(out / "summary.json"), summary);
  manifest.write(out, rc);
  say(c, "evaluate: mean MAE " + std::to_string(report.mean_mae) + " HU, bone MAE " +
             std::to_string(report.mean_bone_mae) + " HU");
  return failed ? static_cast<int>(ErrorCode::FitFailed) : kExitOk;
}

int cmd_cv(const Common& c, const fs::path& cohort_dir, const fs::path& out, const std::vector<std::string>& args) {
  Manifest manifest("cv-classifier", args);
  const RunConfig rc = resolve(c, manifest);
  const std::vector<PatientDataset> cohort = load_cohort(cohort_dir);
  manifest.input_tree(cohort_dir);
  const PipelineConfig& cfg = rc.pipeline;
  const SampleTable table = assemble(cohort, cfg.order, cfg.threshold_hu);
  const Eigen::MatrixXd features = table.combined();
  const std::uint64_t fold_seed = mix_seed(rc.seed, 2);
  const std::uint64_t boost_seed = mix_seed(rc.seed, 1);
  manifest.seeds["folds"] = fold_seed;
  manifest.seeds["classifier"] = boost_seed;

  const FoldTrainer trainer = [&](std::span<const Eigen::Index> train, std::span<const Eigen::Index> test) {
    Eigen::MatrixXd x(static_cast<Eigen::Index>(train.size()), features.cols());
    std::vector<int> y(train.size());
    for (std::size_t i = 0; i < train.size(); ++i) {
      x.row(static_cast<Eigen::Index>(i)) = features.row(train[i]);
      y[i] = table.label[static_cast<std::size_t>(train[i])];
    }
    const BoostResult fit = train_rusboost(x, y, kTissueClasses, cfg.tree, cfg.boost, boost_seed,
                                           RgmmModel::layout_for(table.channels, cfg.order));
    Eigen::MatrixXd t(static_cast<Eigen::Index>(test.size()), features.cols());
    for (std::size_t i = 0; i < test.size(); ++i) t.row(static_cast<Eigen::Index>(i)) = features.row(test[i]);
    return fit.ensemble.predict_rows(t);
  };
  const CrossValidation cv = kfold_cv(table.label, rc.cv_folds, trainer, fold_seed, kBone, rc.fscore_beta);

  json j;
  j["folds"] = rc.cv_folds;
  j["redraws"] = cv.redraws;
  j["pooled"] = metrics_json(cv.pooled);
  j["per_fold"] = json::array();
  for (const auto& f : cv.folds) j["per_fold"].push_back(metrics_json(f));
  fs::create_directories(out);
  write_json(manifest.claim(out / "cv.json"), j);
  {
    std::ofstream csv = open_out(manifest.claim(out / "folds.csv"));
    csv << std::setprecision(10) << "fold,tp,fp,fn,tn,err,precision,recall,f_score\n";
    for (std::size_t f = 0; f < cv.folds.size(); ++f) {
      const auto& m = cv.folds[f];
      csv << f << ',' << m.tp << ',' << m.fp << ',' << m.fn << ',' << m.tn << ',' << m.err << ',' << m.precision << ','
          << m.recall << ',' << m.f_score << '\n';
    }
    const auto& m = cv.pooled;
    csv << "pooled," << m.tp << ',' << m.fp << ',' << m.fn << ',' << m.tn << ',' << m.err << ',' << m.precision << ','
        << m.recall << ',' << m.f_score << '\n';
  }
  manifest.write(out, rc);
  say(c, "cv-classifier: err " + std::to_string(cv.pooled.err) + ", F " + std::to_string(cv.pooled.f_score));
  return kExitOk;
}

}  // namespace

int run(const std::vector<std::string>& args) {
  CLI::App app{"RGMM: CT estimation from multi-channel MR"};
  app.name("rgmm");
  app.require_subcommand(1);

  Common common;
  std::string out, cohort, model, input, truth;

  CLI::App* phantom = app.add_subcommand("phantom", "generate a synthetic cohort and its truth file");
  add_common(phantom, common);
  phantom->add_option("-o,--out", out, "output directory")->required();

  CLI::App* train = app.add_subcommand("train", "train a model bundle on a cohort");
  add_common(train, common);
  train->add_option("--cohort", cohort, "cohort directory")->required();
  train->add_option("-o,--out", out, "output directory")->required();

  CLI::App* predict = app.add_subcommand("predict", "estimate CT for one MR study");
  add_common(predict, common);
  predict->add_option("--model", model, "model bundle")->required();
  predict->add_option("--input", input, "directory with mr_<c>.vhdr and optional mask.vhdr")->required();
  predict->add_option("-o,--out", out, "output directory")->required();

  CLI::App* evaluate = app.add_subcommand("evaluate", "leave-one-patient-out regression report");
  add_common(evaluate, common);
  evaluate->add_option("--cohort", cohort, "cohort directory")->required();
  evaluate->add_option("-o,--out", out, "output directory")->required();
  evaluate->add_option("--truth", truth, "phantom truth file; adds the oracle comparison");

  CLI::App* cv = app.add_subcommand("cv-classifier", "k-fold cross-validation of the tissue classifier");
  add_common(cv, common);
  cv->add_option("--cohort", cohort, "cohort directory")->required();
  cv->add_option("-o,--out", out, "output directory")->required();

  try {
    std::vector<std::string> reversed(args.rbegin(), args.rend());
    app.parse(reversed);
  } catch (const CLI::ParseError& e) {
    const int code = app.exit(e);
    return code == 0 ? kExitOk : kExitUsage;
  }

  try {
    if (phantom->parsed()) return cmd_phantom(common, out, args);
    if (train->parsed()) return cmd_train(common, cohort, out, args);
    if (predict->parsed()) return cmd_predict(common, model, input, out, args);
    if (evaluate->parsed()) return cmd_evaluate(common, cohort, out, truth, args);
    if (cv->parsed()) return cmd_cv(common, cohort, out, args);
  } catch (const Error& e) {
    std::cerr << "rgmm: " << to_string(e.code()) << ": " << e.what() << '\n';
    return static_cast<int>(e.code());
  } catch (const fs::filesystem_error& e) {
    std::cerr << "rgmm: io: " << e.what() << '\n';
    return static_cast<int>(ErrorCode::Io);
  } catch (const std::exception& e) {
    std::cerr << "rgmm: internal: " << e.what() << '\n';
    return kExitInternal;
  }
  return kExitUsage;
}

int run(int argc, const char* const* argv) {
  std::vector<std::string> args;
  for (int i = 1; i < argc; ++i) args.emplace_back(argv[i]);
  return run(args);
}

}  // namespace rgmm::cli
