#include "rgmm/volume.hpp"

#include <algorithm>
#include <bit>
#include <cstring>
#include <fstream>
#include <iomanip>
#include <map>
#include <sstream>

#include "rgmm/error.hpp"

namespace fs = std::filesystem;

namespace rgmm {

Volume::Volume(const Eigen::Array3i& dims, const Eigen::Array3d& spacing, float fill)
    : Volume(dims, spacing, Eigen::ArrayXf::Constant(std::max<Eigen::Index>(0, dims.cast<Eigen::Index>().prod()), fill)) {}

Volume::Volume(const Eigen::Array3i& dims, const Eigen::Array3d& spacing, Eigen::ArrayXf data)
    : dims_(dims), spacing_(spacing), data_(std::move(data)) {
  if ((dims_ < 1).any()) {
    throw Error(ErrorCode::InvalidArgument, "volume dims must all be >= 1");
  }
  if (!(spacing_ > 0.0).all() || !spacing_.allFinite()) {
    throw Error(ErrorCode::InvalidArgument, "volume spacing must be strictly positive");
  }
  if (data_.size() != dims_.cast<Eigen::Index>().prod()) {
    throw Error(ErrorCode::DimensionMismatch, "volume payload length does not match dims");
  }
}

Eigen::Vector3i Volume::coords(Eigen::Index idx) const {
  const Eigen::Index plane = static_cast<Eigen::Index>(dims_[0]) * dims_[1];
  const int z = static_cast<int>(idx / plane);
  const Eigen::Index rem = idx % plane;
  return {static_cast<int>(rem % dims_[0]), static_cast<int>(rem / dims_[0]), z};
}

float Volume::clamped(int x, int y, int z) const {
  x = std::clamp(x, 0, dims_[0] - 1);
  y = std::clamp(y, 0, dims_[1] - 1);
  z = std::clamp(z, 0, dims_[2] - 1);
  return data_[index(x, y, z)];
}

bool Volume::same_geometry(const Volume& other) const {
  return (dims_ == other.dims_).all() && (spacing_ == other.spacing_).all();
}

void PatientDataset::validate() const {
  if (mr.empty()) {
    throw Error(ErrorCode::InvalidData, "patient '" + id + "' has no MR channels");
  }
  for (const auto& channel : mr) {
    if (!channel.same_geometry(ct)) {
      throw Error(ErrorCode::DimensionMismatch, "patient '" + id + "': MR and CT geometry differ");
    }
  }
  if (!mask.same_geometry(ct)) {
    throw Error(ErrorCode::DimensionMismatch, "patient '" + id + "': mask and CT geometry differ");
  }
  if (!((mask.data() == 0.0f) || (mask.data() == 1.0f)).all()) {
    throw Error(ErrorCode::InvalidData, "patient '" + id + "': mask values must be exactly 0 or 1");
  }
}

NeighborhoodOrder parse_order(const std::string& text) {
  if (text == "first" || text == "1") return NeighborhoodOrder::First;
  if (text == "second" || text == "2") return NeighborhoodOrder::Second;
  throw Error(ErrorCode::InvalidArgument, "unknown neighborhood order '" + text + "'");
}

std::string to_string(NeighborhoodOrder order) {
  return order == NeighborhoodOrder::First ? "first" : "second";
}

namespace {

std::vector<Eigen::Vector3i> make_offsets(NeighborhoodOrder order) {
  std::vector<Eigen::Vector3i> out;
  for (int dz = -1; dz <= 1; ++dz) {
    for (int dy = -1; dy <= 1; ++dy) {
      for (int dx = -1; dx <= 1; ++dx) {
        const int manhattan = std::abs(dx) + std::abs(dy) + std::abs(dz);
        if (manhattan == 0) continue;
        if (order == NeighborhoodOrder::First && manhattan != 1) continue;
        out.emplace_back(dx, dy, dz);
      }
    }
  }
  return out;
}

}  // namespace

const std::vector<Eigen::Vector3i>& neighbor_offsets(NeighborhoodOrder order) {
  static const std::vector<Eigen::Vector3i> first = make_offsets(NeighborhoodOrder::First);
  static const std::vector<Eigen::Vector3i> second = make_offsets(NeighborhoodOrder::Second);
  return order == NeighborhoodOrder::First ? first : second;
}

Eigen::MatrixXd SampleTable::combined() const {
  Eigen::MatrixXd out(rows(), raw.cols() + neighborhood.cols());
  out << raw, neighborhood;
  return out;
}

Eigen::MatrixXd SampleTable::joint() const {
  Eigen::MatrixXd out(rows(), 1 + raw.cols());
  out << target, raw;
  return out;
}

VoxelFeatures voxel_features(const std::vector<Volume>& mr, const Volume& mask, NeighborhoodOrder order) {
  if (mr.empty()) throw Error(ErrorCode::InvalidData, "voxel_features: no MR channels");
  for (const auto& channel : mr) {
    if (!channel.same_geometry(mask)) throw Error(ErrorCode::DimensionMismatch, "voxel_features: MR and mask geometry differ");
  }
  const auto& offsets = neighbor_offsets(order);
  const int d = static_cast<int>(mr.size());
  const int m = static_cast<int>(offsets.size());

  VoxelFeatures out;
  for (Eigen::Index i = 0; i < mask.size(); ++i) {
    if (mask.data()[i] == 1.0f) out.voxel.push_back(i);
  }
  const auto n = static_cast<Eigen::Index>(out.voxel.size());
  out.raw.resize(n, d);
  out.neighborhood.resize(n, static_cast<Eigen::Index>(d) * m);
  for (Eigen::Index row = 0; row < n; ++row) {
    const Eigen::Vector3i at = mask.coords(out.voxel[row]);
    for (int c = 0; c < d; ++c) {
      const Volume& channel = mr[c];
      out.raw(row, c) = channel.data()[out.voxel[row]];
      for (int k = 0; k < m; ++k) {
        const Eigen::Vector3i p = at + offsets[k];
        out.neighborhood(row, static_cast<Eigen::Index>(c) * m + k) = channel.clamped(p.x(), p.y(), p.z());
      }
    }
  }
  return out;
}

SampleTable extract_features(const PatientDataset& patient, NeighborhoodOrder order, double threshold_hu) {
  patient.validate();
  VoxelFeatures features = voxel_features(patient.mr, patient.mask, order);
  if (features.voxel.empty()) {
    throw Error(ErrorCode::EmptyInput, "patient '" + patient.id + "' has an empty mask");
  }
  const auto n = static_cast<Eigen::Index>(features.voxel.size());
  SampleTable table;
  table.channels = patient.channels();
  table.order = order;
  table.patients = {patient.id};
  table.patient_of_row.assign(features.voxel.size(), 0);
  table.voxel = std::move(features.voxel);
  table.raw = std::move(features.raw);
  table.neighborhood = std::move(features.neighborhood);
  table.target.resize(n);
  table.label.resize(static_cast<std::size_t>(n));
  for (Eigen::Index row = 0; row < n; ++row) {
    const double y = patient.ct.data()[table.voxel[static_cast<std::size_t>(row)]];
    table.target[row] = y;
    table.label[static_cast<std::size_t>(row)] = label_tissue(y, threshold_hu);
  }
  return table;
}

SampleTable assemble(const std::vector<PatientDataset>& patients, NeighborhoodOrder order, double threshold_hu) {
  if (patients.empty()) {
    throw Error(ErrorCode::EmptyInput, "assemble: no patients");
  }
  const int d = patients.front().channels();
  std::vector<SampleTable> parts;
  parts.reserve(patients.size());
  Eigen::Index total = 0;
  for (const auto& p : patients) {
    if (p.channels() != d) {
      throw Error(ErrorCode::DimensionMismatch, "assemble: patients disagree on channel count");
    }
    parts.push_back(extract_features(p, order, threshold_hu));
    total += parts.back().rows();
  }
  if (parts.size() == 1) return std::move(parts.front());

  SampleTable out;
  out.channels = d;
  out.order = order;
  out.raw.resize(total, d);
  out.neighborhood.resize(total, parts.front().neighborhood.cols());
  out.target.resize(total);
  Eigen::Index at = 0;
  for (std::size_t p = 0; p < parts.size(); ++p) {
    auto& part = parts[p];
    const Eigen::Index n = part.rows();
    out.patients.push_back(part.patients.front());
    out.patient_of_row.insert(out.patient_of_row.end(), static_cast<std::size_t>(n), static_cast<int>(p));
    out.voxel.insert(out.voxel.end(), part.voxel.begin(), part.voxel.end());
    out.label.insert(out.label.end(), part.label.begin(), part.label.end());
    out.raw.middleRows(at, n) = part.raw;
    out.neighborhood.middleRows(at, n) = part.neighborhood;
    out.target.segment(at, n) = part.target;
    at += n;
  }
  return out;
}

void write_csv(std::ostream& out, const SampleTable& table) {
  const auto& offsets = neighbor_offsets(table.order);
  out << "patient_id,voxel_index";
  for (int c = 0; c < table.channels; ++c) out << ",x" << c;
  for (int c = 0; c < table.channels; ++c) {
    for (const auto& o : offsets) {
      out << ",s" << c << "_" << o.x() << "_" << o.y() << "_" << o.z();
    }
  }
  out << ",y,t\n";
  out << std::setprecision(9);
  for (Eigen::Index r = 0; r < table.rows(); ++r) {
    out << table.patients[table.patient_of_row[r]] << ',' << table.voxel[r];
    for (Eigen::Index c = 0; c < table.raw.cols(); ++c) out << ',' << table.raw(r, c);
    for (Eigen::Index c = 0; c < table.neighborhood.cols(); ++c) out << ',' << table.neighborhood(r, c);
    out << ',' << table.target[r] << ',' << table.label[r] << '\n';
  }
}

// ---------------------------------------------------------------------------

namespace {

std::map<std::string, std::string> read_key_values(const fs::path& path) {
  std::ifstream in(path);
  if (!in) throw Error(ErrorCode::Io, "cannot open " + path.string());
  std::map<std::string, std::string> kv;
  std::string line;
  while (std::getline(in, line)) {
    if (line.empty() || line[0] == '#') continue;
    const auto eq = line.find('=');
    if (eq == std::string::npos) {
      throw Error(ErrorCode::MalformedFile, path.string() + ": expected 'key = value', got '" + line + "'");
    }
    auto trim = [](std::string s) {
      const auto b = s.find_first_not_of(" \t\r");
      const auto e = s.find_last_not_of(" \t\r");
      return b == std::string::npos ? std::string{} : s.substr(b, e - b + 1);
    };
    kv[trim(line.substr(0, eq))] = trim(line.substr(eq + 1));
  }
  return kv;
}

const std::string& require(const std::map<std::string, std::string>& kv, const std::string& key, const fs::path& where) {
  auto it = kv.find(key);
  if (it == kv.end()) throw Error(ErrorCode::MalformedFile, where.string() + ": missing key '" + key + "'");
  return it->second;
}

template <typename Array>
Array parse_triple(const std::string& text, const fs::path& where) {
  std::istringstream in(text);
  Array out;
  for (int i = 0; i < 3; ++i) {
    if (!(in >> out[i])) throw Error(ErrorCode::MalformedFile, where.string() + ": bad triple '" + text + "'");
  }
  std::string rest;
  if (in >> rest) throw Error(ErrorCode::MalformedFile, where.string() + ": bad triple '" + text + "'");
  return out;
}

}  // namespace

Volume read_volume(const fs::path& header) {
  const auto kv = read_key_values(header);
  if (require(kv, "format", header) != "rgmm-volume") {
    throw Error(ErrorCode::MalformedFile, header.string() + ": not an rgmm-volume header");
  }
  if (require(kv, "version", header) != "1") {
    throw Error(ErrorCode::MalformedFile, header.string() + ": unsupported version");
  }
  if (require(kv, "dtype", header) != "float32") {
    throw Error(ErrorCode::MalformedFile, header.string() + ": dtype must be float32");
  }
  if (require(kv, "byte_order", header) != "little") {
    throw Error(ErrorCode::MalformedFile, header.string() + ": byte_order must be little");
  }
  const auto dims = parse_triple<Eigen::Array3i>(require(kv, "dims", header), header);
  const auto spacing = parse_triple<Eigen::Array3d>(require(kv, "spacing", header), header);
  if ((dims < 1).any() || !(spacing > 0.0).all()) {
    throw Error(ErrorCode::MalformedFile, header.string() + ": dims must be >= 1 and spacing > 0");
  }
  const fs::path payload = header.parent_path() / require(kv, "payload", header);

  const Eigen::Index n = dims.cast<Eigen::Index>().prod();
  std::ifstream in(payload, std::ios::binary);
  if (!in) throw Error(ErrorCode::Io, "cannot open " + payload.string());
  std::vector<unsigned char> bytes(static_cast<std::size_t>(n) * 4);
  in.read(reinterpret_cast<char*>(bytes.data()), static_cast<std::streamsize>(bytes.size()));
  if (in.gcount() != static_cast<std::streamsize>(bytes.size()) || in.peek() != std::char_traits<char>::eof()) {
    throw Error(ErrorCode::MalformedFile, payload.string() + ": payload size does not match dims");
  }
  Eigen::ArrayXf data(n);
  for (Eigen::Index i = 0; i < n; ++i) {
    const unsigned char* b = &bytes[static_cast<std::size_t>(i) * 4];
    const std::uint32_t word = std::uint32_t{b[0]} | (std::uint32_t{b[1]} << 8) | (std::uint32_t{b[2]} << 16) |
                               (std::uint32_t{b[3]} << 24);
    data[i] = std::bit_cast<float>(word);
  }
  return Volume(dims, spacing, std::move(data));
}

void write_volume(const fs::path& header, const Volume& volume) {
  fs::path payload = header;
  payload.replace_extension(".raw");
  {
    std::ofstream out(header);
    if (!out) throw Error(ErrorCode::Io, "cannot write " + header.string());
    out << std::setprecision(17);
    out << "format = rgmm-volume\nversion = 1\n";
    out << "dims = " << volume.dims()[0] << ' ' << volume.dims()[1] << ' ' << volume.dims()[2] << '\n';
    out << "spacing = " << volume.spacing()[0] << ' ' << volume.spacing()[1] << ' ' << volume.spacing()[2] << '\n';
    out << "dtype = float32\nbyte_order = little\n";
    out << "payload = " << payload.filename().string() << '\n';
  }
  std::vector<unsigned char> bytes(static_cast<std::size_t>(volume.size()) * 4);
  for (Eigen::Index i = 0; i < volume.size(); ++i) {
    const auto word = std::bit_cast<std::uint32_t>(volume.data()[i]);
    unsigned char* b = &bytes[static_cast<std::size_t>(i) * 4];
    b[0] = word & 0xff;
    b[1] = (word >> 8) & 0xff;
    b[2] = (word >> 16) & 0xff;
    b[3] = (word >> 24) & 0xff;
  }
  std::ofstream out(payload, std::ios::binary);
  if (!out) throw Error(ErrorCode::Io, "cannot write " + payload.string());
  out.write(reinterpret_cast<const char*>(bytes.data()), static_cast<std::streamsize>(bytes.size()));
}

PatientPaths PatientPaths::in_directory(const fs::path& dir) {
  PatientPaths paths;
  for (int c = 0;; ++c) {
    fs::path p = dir / ("mr_" + std::to_string(c) + ".vhdr");
    if (!fs::exists(p)) break;
    paths.mr.push_back(std::move(p));
  }
  paths.ct = dir / "ct.vhdr";
  paths.mask = dir / "mask.vhdr";
  return paths;
}

PatientDataset load_patient(const PatientPaths& paths, const std::string& patient_id) {
  PatientDataset patient;
  patient.id = patient_id;
  for (const auto& p : paths.mr) patient.mr.push_back(read_volume(p));
  patient.ct = read_volume(paths.ct);
  patient.mask = read_volume(paths.mask);
  patient.validate();
  return patient;
}

void save_patient(const fs::path& dir, const PatientDataset& patient) {
  fs::create_directories(dir);
  for (int c = 0; c < patient.channels(); ++c) {
    write_volume(dir / ("mr_" + std::to_string(c) + ".vhdr"), patient.mr[c]);
  }
  write_volume(dir / "ct.vhdr", patient.ct);
  write_volume(dir / "mask.vhdr", patient.mask);
}

std::vector<PatientDataset> load_cohort(const fs::path& dir) {
  if (!fs::is_directory(dir)) throw Error(ErrorCode::Io, dir.string() + " is not a directory");
  std::vector<fs::path> subdirs;
  for (const auto& entry : fs::directory_iterator(dir)) {
    if (entry.is_directory() && fs::exists(entry.path() / "ct.vhdr")) subdirs.push_back(entry.path());
  }
  std::sort(subdirs.begin(), subdirs.end());
  if (subdirs.empty()) throw Error(ErrorCode::EmptyInput, dir.string() + " holds no patient directories");
  std::vector<PatientDataset> out;
  for (const auto& sub : subdirs) {
    out.push_back(load_patient(PatientPaths::in_directory(sub), sub.filename().string()));
  }
  return out;
}

}  // namespace rgmm
