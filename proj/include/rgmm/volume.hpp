#pragma once

#include <Eigen/Core>

#include <cstdint>
#include <filesystem>
#include <iosfwd>
#include <string>
#include <vector>

#include "rgmm/labeling.hpp"

namespace rgmm {

/// Dense scalar grid stored x-fastest: index = x + nx * (y + ny * z).
class Volume {
 public:
  Volume() = default;
  Volume(const Eigen::Array3i& dims, const Eigen::Array3d& spacing, float fill = 0.0f);
  Volume(const Eigen::Array3i& dims, const Eigen::Array3d& spacing, Eigen::ArrayXf data);

  const Eigen::Array3i& dims() const { return dims_; }
  const Eigen::Array3d& spacing() const { return spacing_; }
  Eigen::Index size() const { return data_.size(); }

  const Eigen::ArrayXf& data() const { return data_; }
  Eigen::ArrayXf& data() { return data_; }

  Eigen::Index index(int x, int y, int z) const {
    return x + static_cast<Eigen::Index>(dims_[0]) * (y + static_cast<Eigen::Index>(dims_[1]) * z);
  }
  Eigen::Vector3i coords(Eigen::Index idx) const;

  float operator()(int x, int y, int z) const { return data_[index(x, y, z)]; }
  float& operator()(int x, int y, int z) { return data_[index(x, y, z)]; }

  /// Value at (x, y, z) with every coordinate clamped into range.
  float clamped(int x, int y, int z) const;

  bool same_geometry(const Volume& other) const;

 private:
  Eigen::Array3i dims_ = Eigen::Array3i::Ones();
  Eigen::Array3d spacing_ = Eigen::Array3d::Ones();
  Eigen::ArrayXf data_ = Eigen::ArrayXf::Zero(1);
};

struct PatientDataset {
  std::vector<Volume> mr;  // d channels
  Volume ct;
  Volume mask;
  std::string id;

  int channels() const { return static_cast<int>(mr.size()); }
  /// Throws on geometry disagreement or a mask value outside {0, 1}.
  void validate() const;
};

enum class NeighborhoodOrder { First = 1, Second = 2 };

NeighborhoodOrder parse_order(const std::string& text);
std::string to_string(NeighborhoodOrder order);

/// Neighbor offsets (dx, dy, dz), sorted lexicographically by (dz, dy, dx).
/// First order: the 6 face neighbors. Second order: the 26 voxels of the 3x3x3 shell.
const std::vector<Eigen::Vector3i>& neighbor_offsets(NeighborhoodOrder order);

/// Flat voxel records. Column layout of the combined feature matrix is
/// [raw channels | neighborhood], where the neighborhood block is channel-major:
/// all offsets for channel 0, then all offsets for channel 1, and so on.
struct SampleTable {
  int channels = 0;
  NeighborhoodOrder order = NeighborhoodOrder::Second;
  std::vector<std::string> patients;       // distinct ids, in assembly order
  std::vector<int> patient_of_row;         // index into `patients`
  std::vector<std::int64_t> voxel;         // voxel index inside the source volume
  Eigen::MatrixXd raw;                     // n x d
  Eigen::MatrixXd neighborhood;            // n x (d * offsets)
  Eigen::VectorXd target;                  // CT in HU
  std::vector<int> label;

  Eigen::Index rows() const { return raw.rows(); }
  int neighborhood_width() const { return static_cast<int>(neighbor_offsets(order).size()) * channels; }
  Eigen::MatrixXd combined() const;
  /// Joint (y, x) rows with the target in column 0.
  Eigen::MatrixXd joint() const;
};

/// Raw and neighborhood intensities for every mask == 1 voxel, in voxel order.
struct VoxelFeatures {
  std::vector<std::int64_t> voxel;
  Eigen::MatrixXd raw;
  Eigen::MatrixXd neighborhood;
};

VoxelFeatures voxel_features(const std::vector<Volume>& mr, const Volume& mask, NeighborhoodOrder order);

SampleTable extract_features(const PatientDataset& patient, NeighborhoodOrder order,
                             double threshold_hu = kDefaultBoneThresholdHu);

SampleTable assemble(const std::vector<PatientDataset>& patients, NeighborhoodOrder order,
                     double threshold_hu = kDefaultBoneThresholdHu);

void write_csv(std::ostream& out, const SampleTable& table);

// ---------------------------------------------------------------------------
// Volume file format: `<name>.vhdr` holds `key = value` lines
//   format = rgmm-volume
//   version = 1
//   dims = nx ny nz
//   spacing = sx sy sz
//   dtype = float32
//   byte_order = little
//   payload = <name>.raw
// and the payload is nx*ny*nz little-endian float32 values, x-fastest.

Volume read_volume(const std::filesystem::path& header);
void write_volume(const std::filesystem::path& header, const Volume& volume);

struct PatientPaths {
  std::vector<std::filesystem::path> mr;
  std::filesystem::path ct;
  std::filesystem::path mask;

  /// mr_0.vhdr ... mr_{d-1}.vhdr, ct.vhdr, mask.vhdr inside `dir`.
  static PatientPaths in_directory(const std::filesystem::path& dir);
};

PatientDataset load_patient(const PatientPaths& paths, const std::string& patient_id);
void save_patient(const std::filesystem::path& dir, const PatientDataset& patient);

/// Every subdirectory of `dir` holding a patient, sorted by name.
std::vector<PatientDataset> load_cohort(const std::filesystem::path& dir);

}  // namespace rgmm
