#pragma once

#include <vector>

#include "trot/common.hpp"
#include "trot/tensor.hpp"

namespace trot {

// One element of the 48-element symmetry group of the voxel grid: an axis
// permutation followed by per-output-axis flips. Quarter-turn rotations are
// exactly representable, so application is pure reindexing.
struct SpatialTransform {
  std::array<int, 3> axis_perm{0, 1, 2};  // output axis k reads input axis axis_perm[k]
  std::array<bool, 3> flips{false, false, false};

  bool operator==(const SpatialTransform&) const = default;

  bool is_identity() const {
    return axis_perm == std::array<int, 3>{0, 1, 2} && flips == std::array<bool, 3>{false, false, false};
  }

  // grids whose shape is unchanged by the axis permutation
  bool shape_invariant(const Shape3& s) const {
    for (int k = 0; k < 3; ++k)
      if (s[static_cast<size_t>(axis_perm[static_cast<size_t>(k)])] != s[static_cast<size_t>(k)]) return false;
    return true;
  }

  std::array<int, 6> serialize() const {
    return {axis_perm[0], axis_perm[1], axis_perm[2], flips[0] ? 1 : 0, flips[1] ? 1 : 0,
            flips[2] ? 1 : 0};
  }
  static SpatialTransform deserialize(const std::array<int, 6>& v);
};

SpatialTransform identity_transform();

// apply(x, compose(t1, t2)) == apply(apply(x, t2), t1)
SpatialTransform compose(const SpatialTransform& t1, const SpatialTransform& t2);

SpatialTransform inverse(const SpatialTransform& t);

// All 48 group elements in a fixed enumeration order.
const std::vector<SpatialTransform>& all_transforms();

// Source coordinate read by output coordinate o under apply(): i = t^{-1}(o).
inline Shape3 source_coord(const SpatialTransform& t, const Shape3& shape, const Shape3& o) {
  Shape3 i{};
  for (int k = 0; k < 3; ++k) {
    int ax = t.axis_perm[static_cast<size_t>(k)];
    i[static_cast<size_t>(ax)] =
        t.flips[static_cast<size_t>(k)] ? shape[static_cast<size_t>(ax)] - 1 - o[static_cast<size_t>(k)]
                                        : o[static_cast<size_t>(k)];
  }
  return i;
}

// Uniform draw from the subgroup keeping grid_shape and every patch size
// invariant. The 8 pure-flip elements always qualify.
SpatialTransform sample_valid_transform(const Shape3& grid_shape,
                                        const std::vector<Shape3>& patch_sizes, Rng& rng);

std::vector<SpatialTransform> valid_transforms(const Shape3& grid_shape,
                                               const std::vector<Shape3>& patch_sizes);

// Flat index map for apply() on a (C, s0, s1, s2) array: out[i] = in[map[i]].
std::vector<int64_t> transform_index_map(const SpatialTransform& t, const Shape3& shape,
                                         int64_t channels);

// Row-major (N, C) index map for restore_token_grid on position-major token
// matrices: output row p reads the row the transform sent to p.
std::vector<int64_t> token_restore_map(const SpatialTransform& t, const Shape3& grid,
                                       int64_t channels);

// Reindex a (C, D, H, W) array. Channel axis untouched, bit-exact.
template <typename T>
Tensor<T> apply_to_grid(const Tensor<T>& v, const SpatialTransform& t) {
  require(v.rank() == 4, "ShapeMismatch", "apply_to_grid expects a (C,D,H,W) tensor");
  Shape3 s{static_cast<int>(v.dim(1)), static_cast<int>(v.dim(2)), static_cast<int>(v.dim(3))};
  require(t.shape_invariant(s), "ShapeNotInvariant",
          "grid shape " + shape3_str(s) + " is not invariant under the axis permutation");
  Tensor<T> out(v.shape);
  auto map = transform_index_map(t, s, v.dim(0));
  for (int64_t i = 0; i < out.numel(); ++i) out[i] = v[map[static_cast<size_t>(i)]];
  return out;
}

// Same reindexing for a rank-3 label array.
template <typename T>
Tensor<T> apply_to_grid3(const Tensor<T>& v, const SpatialTransform& t) {
  Tensor<T> v4 = v.reshaped({1, v.dim(0), v.dim(1), v.dim(2)});
  return apply_to_grid(v4, t).reshaped({v.dim(0), v.dim(1), v.dim(2)});
}

// Undo the spatial transform on a token grid: apply_to_grid under inverse(t).
// After this, token (i,j,k) addresses the same input region as without t.
template <typename T>
Tensor<T> restore_token_grid(const Tensor<T>& g, const SpatialTransform& t) {
  return apply_to_grid(g, inverse(t));
}

}  // namespace trot
