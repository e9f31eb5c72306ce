#pragma once

#include <limits>

#include "trot/tensor.hpp"

namespace trot {

// Per-class segmentation scores. hd95 uses +infinity as the sentinel when
// exactly one of the masks is empty; both-empty counts as perfect agreement.
struct SegmentationResult {
  double dice = 0.0;
  double hd95 = 0.0;
  bool pred_present = false;
  bool truth_present = false;
};

inline constexpr double kHd95Sentinel = std::numeric_limits<double>::infinity();

// 2|P∩T| / (|P|+|T|), counted in integer arithmetic.
double dice_score(const TensorI& pred, const TensorI& truth, int cls);

// 95th percentile (linear interpolation) of the symmetric multiset of
// boundary-to-boundary Euclidean distances, scaled by voxel spacing.
// Boundary voxel: foreground voxel with a six-connected background neighbor
// (outside the array counts as background).
double hd95(const TensorI& pred, const TensorI& truth, int cls,
            const std::array<double, 3>& spacing = {1.0, 1.0, 1.0});

SegmentationResult evaluate_class(const TensorI& pred, const TensorI& truth, int cls,
                                  const std::array<double, 3>& spacing = {1.0, 1.0, 1.0});

}  // namespace trot
