#pragma once

#include <string>

#include "trot/common.hpp"
#include "trot/tensor.hpp"

namespace trot {

// A 3D scan: (C, D, H, W) intensities in [0,1] plus an optional voxel-wise
// label mask in {0..K}. Label shape always matches the spatial shape.
struct Volume {
  TensorD intensities;              // (C, D, H, W)
  TensorI label;                    // (D, H, W); empty when unlabeled
  std::array<double, 3> spacing{1.0, 1.0, 1.0};
  std::string id;

  int channels() const { return static_cast<int>(intensities.dim(0)); }
  Shape3 spatial_shape() const {
    return {static_cast<int>(intensities.dim(1)), static_cast<int>(intensities.dim(2)),
            static_cast<int>(intensities.dim(3))};
  }
  bool has_label() const { return !label.data.empty(); }

  void validate(int n_classes = -1) const {
    require(intensities.rank() == 4, "ShapeMismatch", "intensities must be (C,D,H,W)");
    require(intensities.all_finite(), "FormatError", "volume " + id + " has non-finite intensities");
    if (has_label()) {
      require(label.rank() == 3 && label.dim(0) == intensities.dim(1) &&
                  label.dim(1) == intensities.dim(2) && label.dim(2) == intensities.dim(3),
              "ShapeMismatch", "label shape disagrees with intensities for volume " + id);
      if (n_classes >= 0)
        for (int32_t v : label.data)
          require(v >= 0 && v <= n_classes, "FormatError",
                  "label value out of range in volume " + id);
    }
  }
};

}  // namespace trot
