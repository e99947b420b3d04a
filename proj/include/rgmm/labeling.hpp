#pragma once

namespace rgmm {

inline constexpr double kDefaultBoneThresholdHu = 100.0;
inline constexpr int kNonBone = 0;
inline constexpr int kBone = 1;
inline constexpr int kTissueClasses = 2;

/// 0 when y <= threshold, 1 otherwise. Throws on non-finite y.
int label_tissue(double y, double threshold_hu = kDefaultBoneThresholdHu);

}  // namespace rgmm
