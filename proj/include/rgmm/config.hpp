#pragma once

#include <cstdint>
#include <filesystem>
#include <map>
#include <string>
#include <vector>

#include "rgmm/em.hpp"
#include "rgmm/rusboost.hpp"
#include "rgmm/tree.hpp"
#include "rgmm/volume.hpp"

namespace rgmm {

enum class RegressorFeatures { Raw, Combined };
enum class Gating { Hard, Soft };

/// Everything that shapes a trained model. Serialized into every model bundle.
struct PipelineConfig {
  double threshold_hu = kDefaultBoneThresholdHu;
  NeighborhoodOrder order = NeighborhoodOrder::Second;
  std::vector<std::vector<int>> candidates = {{5, 6}, {5, 6}};  // component-count grid per tissue class
  EmConfig em;
  /// Cap on rows per class handed to EM (evenly strided subsample); 0 keeps all.
  long em_max_samples = 0;
  TreeConfig tree;
  BoostConfig boost;
  float fill_hu = -1000.0f;
  RegressorFeatures regressor_features = RegressorFeatures::Raw;
  Gating gating = Gating::Hard;
  int threads = 1;

  void validate() const;
};

struct PhantomSettings {
  int patients = 4;
  int size = 32;  // cubic volumes
  double spacing_mm = 1.33;
  double minority_fraction = 0.1849;
  double smoothing_voxels = 2.0;
  double noise_scale = 1.0;
};

/// Whole-run configuration: pipeline plus evaluation and phantom settings.
struct RunConfig {
  PipelineConfig pipeline;
  PhantomSettings phantom;
  int cv_folds = 10;
  double window_hu = 20.0;
  double fscore_beta = 1.0;
  std::uint64_t seed = 20190101;

  void validate() const;

  /// Canonical `key = value` text, one key per line in a fixed order.
  std::map<std::string, std::string> to_map() const;
  std::string to_text() const;
  /// Applies the keys in `values` over the current settings; unknown keys are errors.
  void apply(const std::map<std::string, std::string>& values);
};

/// Parses `key = value` lines; '#' starts a comment line.
std::map<std::string, std::string> parse_key_values(const std::string& text);
std::map<std::string, std::string> read_key_value_file(const std::filesystem::path& path);

std::string pipeline_to_text(const PipelineConfig& cfg);
PipelineConfig pipeline_from_map(const std::map<std::string, std::string>& values);

}  // namespace rgmm
