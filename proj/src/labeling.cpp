#include "rgmm/labeling.hpp"

#include <cmath>
#include <string>

#include "rgmm/error.hpp"

namespace rgmm {

const char* to_string(ErrorCode code) noexcept {
  switch (code) {
    case ErrorCode::InvalidArgument: return "invalid argument";
    case ErrorCode::InvalidConfig: return "invalid config";
    case ErrorCode::Io: return "i/o error";
    case ErrorCode::MalformedFile: return "malformed file";
    case ErrorCode::DimensionMismatch: return "dimension mismatch";
    case ErrorCode::InvalidData: return "invalid data";
    case ErrorCode::EmptyInput: return "empty input";
    case ErrorCode::FitFailed: return "fit failed";
    case ErrorCode::Numerical: return "numerical failure";
  }
  return "unknown";
}

int label_tissue(double y, double threshold_hu) {
  if (!std::isfinite(y)) {
    throw Error(ErrorCode::InvalidData, "label_tissue: non-finite CT intensity");
  }
  return y <= threshold_hu ? kNonBone : kBone;
}

}  // namespace rgmm
