#include <catch_amalgamated.hpp>

#include <cstdlib>
#include <fstream>
#include <json.hpp>
#include <sstream>

#include "rgmm/cli.hpp"
#include "rgmm/volume.hpp"
#include "support.hpp"

using namespace rgmm;
namespace fs = std::filesystem;

namespace {

const std::vector<std::string> kSmall = {"--phantom-size", "10", "--phantom-patients", "3", "--learners", "4",
                                         "--max-splits", "20", "--components-class0", "1,2", "--components-class1", "1",
                                         "--em-restarts", "1", "-q"};

int run(std::vector<std::string> args, bool small = true) {
  if (small) args.insert(args.end(), kSmall.begin(), kSmall.end());
  return cli::run(args);
}

std::string slurp(const fs::path& p) {
  std::ifstream in(p, std::ios::binary);
  std::ostringstream s;
  s << in.rdbuf();
  return s.str();
}

nlohmann::json read_json(const fs::path& p) { return nlohmann::json::parse(slurp(p)); }

/// One shared phantom cohort and model for the whole file.
struct Fixture {
  test::TempDir dir{"cli"};
  fs::path cohort = dir / "cohort";
  fs::path model = dir / "model";
  Fixture() {
    REQUIRE(run({"phantom", "-o", cohort.string(), "--seed", "4"}) == 0);
    REQUIRE(run({"train", "--cohort", cohort.string(), "-o", model.string(), "--seed", "4"}) == 0);
  }
};

Fixture& fixture() {
  static Fixture f;
  return f;
}

}  // namespace

TEST_CASE("phantom writes a loadable cohort with its truth") {
  const Fixture& f = fixture();
  const auto patients = load_cohort(f.cohort);
  REQUIRE(patients.size() == 3u);
  CHECK(patients[0].id == "patient_01");
  CHECK(patients[0].channels() == 4);
  CHECK((patients[0].ct.dims() == 10).all());
  CHECK(fs::exists(f.cohort / "truth.txt"));
  CHECK(fs::exists(f.cohort / "patient_02" / "true_labels.vhdr"));
  CHECK(fs::exists(f.cohort / "manifest.json"));
}

TEST_CASE("train writes a bundle, a report and a manifest") {
  const Fixture& f = fixture();
  CHECK(fs::file_size(f.model / "model.rgmm") > 0);
  const auto report = read_json(f.model / "training_report.json");
  CHECK(report["rounds"].size() == 4u);
  CHECK(report["classes"].size() == 2u);
  CHECK(report["classes"][1]["selected_components"] == 1);
  const auto manifest = read_json(f.model / "manifest.json");
  CHECK(manifest["command"] == "train");
  CHECK(manifest["seed"] == 4);
  CHECK(manifest["config"]["learners"] == "4");
  CHECK(manifest["derived_seeds"].contains("classifier"));
  CHECK(manifest["inputs"].size() >= 3u * 6u * 2u);
  for (const auto& o : manifest["outputs"]) CHECK(fs::exists(o["path"].get<std::string>()));
}

TEST_CASE("predict and evaluate run end to end") {
  const Fixture& f = fixture();
  const fs::path out = f.dir / "pred";
  CHECK(run({"predict", "--model", (f.model / "model.rgmm").string(), "--input", (f.cohort / "patient_01").string(),
             "-o", out.string()},
            false) == 0);
  const Volume sct = read_volume(out / "sct.vhdr");
  const Volume labels = read_volume(out / "sct_labels.vhdr");
  CHECK((sct.dims() == 10).all());
  CHECK(((labels.data() == 0.0f) || (labels.data() == 1.0f)).all());
  CHECK(sct.data().isFinite().all());

  const fs::path eval = f.dir / "eval";
  REQUIRE(run({"evaluate", "--cohort", f.cohort.string(), "-o", eval.string(), "--truth",
               (f.cohort / "truth.txt").string()}) == 0);
  const auto summary = read_json(eval / "summary.json");
  CHECK(summary["mean_mae_hu"].get<double>() > 0.0);
  CHECK(summary["oracle"]["mean_mae_hu"].get<double>() > 0.0);
  CHECK(slurp(eval / "patients.csv").rfind("patient,voxels,", 0) == 0);
  CHECK(slurp(eval / "curves.csv").rfind("window_center_hu,", 0) == 0);

  const fs::path cv = f.dir / "cv";
  REQUIRE(run({"cv-classifier", "--cohort", f.cohort.string(), "-o", cv.string(), "--cv-folds", "3"}) == 0);
  const auto cvj = read_json(cv / "cv.json");
  CHECK(cvj["pooled"]["err"].get<double>() >= 0.0);
  CHECK(cvj["folds"] == 3);
}

TEST_CASE("exit codes") {
  const Fixture& f = fixture();
  CHECK(cli::run(std::vector<std::string>{"frobnicate"}) == cli::kExitUsage);
  CHECK(cli::run(std::vector<std::string>{}) == cli::kExitUsage);
  CHECK(cli::run(std::vector<std::string>{"train", "--cohort", f.cohort.string()}) == cli::kExitUsage);
  CHECK(run({"train", "--cohort", f.cohort.string(), "-o", (f.dir / "bad").string(), "--set", "learners=0"}, false) ==
        static_cast<int>(ErrorCode::InvalidConfig));
  CHECK(run({"train", "--cohort", f.cohort.string(), "-o", (f.dir / "bad").string(), "--set", "bogus=1"}, false) ==
        static_cast<int>(ErrorCode::InvalidConfig));
  CHECK(run({"train", "--cohort", (f.dir / "nowhere").string(), "-o", (f.dir / "bad").string()}, false) ==
        static_cast<int>(ErrorCode::Io));

  // A three-channel study against a four-channel model.
  const fs::path three = f.dir / "three";
  fs::create_directories(three);
  for (int c = 0; c < 3; ++c) {
    const std::string name = "mr_" + std::to_string(c);
    write_volume(three / (name + ".vhdr"), read_volume(f.cohort / "patient_01" / (name + ".vhdr")));
  }
  CHECK(run({"predict", "--model", (f.model / "model.rgmm").string(), "--input", three.string(), "-o",
             (f.dir / "three_out").string()},
            false) == static_cast<int>(ErrorCode::DimensionMismatch));
}

TEST_CASE("the seed fixes the model bytes") {
  const Fixture& f = fixture();
  const fs::path again = f.dir / "again", other = f.dir / "other";
  REQUIRE(run({"train", "--cohort", f.cohort.string(), "-o", again.string(), "--seed", "4"}) == 0);
  REQUIRE(run({"train", "--cohort", f.cohort.string(), "-o", other.string(), "--seed", "5"}) == 0);
  CHECK(slurp(again / "model.rgmm") == slurp(f.model / "model.rgmm"));
  CHECK(slurp(other / "model.rgmm") != slurp(f.model / "model.rgmm"));
}

TEST_CASE("config precedence and checksums") {
  const Fixture& f = fixture();
  const fs::path conf = f.dir / "run.conf";
  std::ofstream(conf) << "learners = 4\n";
  const fs::path a = f.dir / "prec_a";
  REQUIRE(cli::run(std::vector<std::string>{"phantom", "-o", a.string(), "-c", conf.string(), "--phantom-size", "6",
                                            "--set", "phantom_patients=2", "--set", "learners=9", "-q"}) == 0);
  auto m = read_json(a / "manifest.json");
  CHECK(m["config"]["learners"] == "9");  // --set beats the file
  CHECK(m["config"]["phantom_size"] == "6");
  CHECK(m["config"]["phantom_patients"] == "2");
  bool found = false;
  for (const auto& in : m["inputs"]) {
    if (fs::path(in["path"].get<std::string>()) == conf) {
      found = true;
      CHECK(in["sha256"] == "d98c9f107a7f4004973365cdd738a5769abc368507a9c72281f1a2597df56f10");
    }
  }
  CHECK(found);

  const fs::path b = f.dir / "prec_b";
  REQUIRE(cli::run(std::vector<std::string>{"phantom", "-o", b.string(), "-c", conf.string(), "--set",
                                            "learners=9", "--learners", "11", "--phantom-size", "6", "-q"}) == 0);
  CHECK(read_json(b / "manifest.json")["config"]["learners"] == "11");  // flags beat --set

  ::setenv(cli::kConfigEnv, conf.c_str(), 1);
  const fs::path c = f.dir / "prec_c";
  const int rc = cli::run(std::vector<std::string>{"phantom", "-o", c.string(), "--phantom-size", "6", "-q"});
  ::unsetenv(cli::kConfigEnv);
  REQUIRE(rc == 0);
  CHECK(read_json(c / "manifest.json")["config"]["learners"] == "4");
}

TEST_CASE("inputs are left untouched") {
  const Fixture& f = fixture();
  const fs::path ct = f.cohort / "patient_01" / "ct.raw";
  const std::string before = slurp(ct);
  REQUIRE(run({"train", "--cohort", f.cohort.string(), "-o", (f.dir / "untouched").string(), "--seed", "4"}) == 0);
  CHECK(slurp(ct) == before);
}
