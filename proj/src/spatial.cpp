#include "trot/spatial.hpp"

#include <algorithm>

namespace trot {

SpatialTransform identity_transform() { return SpatialTransform{}; }

SpatialTransform SpatialTransform::deserialize(const std::array<int, 6>& v) {
  SpatialTransform t;
  t.axis_perm = {v[0], v[1], v[2]};
  t.flips = {v[3] != 0, v[4] != 0, v[5] != 0};
  std::array<bool, 3> seen{false, false, false};
  for (int k = 0; k < 3; ++k) {
    require(t.axis_perm[static_cast<size_t>(k)] >= 0 && t.axis_perm[static_cast<size_t>(k)] < 3,
            "FormatError", "axis_perm entry out of range");
    seen[static_cast<size_t>(t.axis_perm[static_cast<size_t>(k)])] = true;
  }
  require(seen[0] && seen[1] && seen[2], "FormatError", "axis_perm is not a permutation");
  return t;
}

SpatialTransform compose(const SpatialTransform& t1, const SpatialTransform& t2) {
  // Derived from out[o] = x[t2^{-1}(t1^{-1}(o))]: permutations compose as
  // p[k] = p2[p1[k]], and a flip survives iff exactly one of the two stages flips.
  SpatialTransform r;
  for (int k = 0; k < 3; ++k) {
    int m = t1.axis_perm[static_cast<size_t>(k)];
    r.axis_perm[static_cast<size_t>(k)] = t2.axis_perm[static_cast<size_t>(m)];
    r.flips[static_cast<size_t>(k)] =
        t1.flips[static_cast<size_t>(k)] != t2.flips[static_cast<size_t>(m)];
  }
  return r;
}

SpatialTransform inverse(const SpatialTransform& t) {
  // compose(r, t) = identity requires r.perm = t.perm^{-1} and
  // r.flips[k] = t.flips[r.perm[k]].
  SpatialTransform r;
  for (int k = 0; k < 3; ++k) {
    int j = t.axis_perm[static_cast<size_t>(k)];
    r.axis_perm[static_cast<size_t>(j)] = k;
  }
  for (int k = 0; k < 3; ++k)
    r.flips[static_cast<size_t>(k)] =
        t.flips[static_cast<size_t>(r.axis_perm[static_cast<size_t>(k)])];
  return r;
}

const std::vector<SpatialTransform>& all_transforms() {
  static const std::vector<SpatialTransform> table = [] {
    std::vector<SpatialTransform> v;
    std::array<int, 3> perm{0, 1, 2};
    std::sort(perm.begin(), perm.end());
    do {
      for (int f = 0; f < 8; ++f) {
        SpatialTransform t;
        t.axis_perm = perm;
        t.flips = {(f & 1) != 0, (f & 2) != 0, (f & 4) != 0};
        v.push_back(t);
      }
    } while (std::next_permutation(perm.begin(), perm.end()));
    return v;
  }();
  return table;
}

std::vector<SpatialTransform> valid_transforms(const Shape3& grid_shape,
                                               const std::vector<Shape3>& patch_sizes) {
  std::vector<SpatialTransform> out;
  for (const auto& t : all_transforms()) {
    if (!t.shape_invariant(grid_shape)) continue;
    bool ok = true;
    for (const auto& p : patch_sizes)
      if (!t.shape_invariant(p)) {
        ok = false;
        break;
      }
    if (ok) out.push_back(t);
  }
  return out;
}

SpatialTransform sample_valid_transform(const Shape3& grid_shape,
                                        const std::vector<Shape3>& patch_sizes, Rng& rng) {
  auto valid = valid_transforms(grid_shape, patch_sizes);
  // pure flips always survive the filters, so valid is never empty
  return valid[static_cast<size_t>(uniform_int(rng, 0, static_cast<int>(valid.size()) - 1))];
}

std::vector<int64_t> transform_index_map(const SpatialTransform& t, const Shape3& shape,
                                         int64_t channels) {
  require(t.shape_invariant(shape), "ShapeNotInvariant",
          "grid shape " + shape3_str(shape) + " is not invariant under the axis permutation");
  const int64_t s0 = shape[0], s1 = shape[1], s2 = shape[2];
  const int64_t n = s0 * s1 * s2;
  std::vector<int64_t> map(static_cast<size_t>(channels * n));
  for (int o0 = 0; o0 < s0; ++o0)
    for (int o1 = 0; o1 < s1; ++o1)
      for (int o2 = 0; o2 < s2; ++o2) {
        Shape3 src = source_coord(t, shape, {o0, o1, o2});
        int64_t so = (static_cast<int64_t>(src[0]) * s1 + src[1]) * s2 + src[2];
        int64_t oo = (static_cast<int64_t>(o0) * s1 + o1) * s2 + o2;
        map[static_cast<size_t>(oo)] = so;
      }
  for (int64_t c = 1; c < channels; ++c)
    for (int64_t i = 0; i < n; ++i)
      map[static_cast<size_t>(c * n + i)] = c * n + map[static_cast<size_t>(i)];
  return map;
}

std::vector<int64_t> token_restore_map(const SpatialTransform& t, const Shape3& grid,
                                       int64_t channels) {
  const SpatialTransform u = inverse(t);
  require(u.shape_invariant(grid), "ShapeNotInvariant",
          "token grid " + shape3_str(grid) + " is not invariant under the axis permutation");
  const int64_t g1 = grid[1], g2 = grid[2];
  std::vector<int64_t> map(static_cast<size_t>(prod3(grid) * channels));
  int64_t row = 0;
  for (int o0 = 0; o0 < grid[0]; ++o0)
    for (int o1 = 0; o1 < g1; ++o1)
      for (int o2 = 0; o2 < g2; ++o2, ++row) {
        Shape3 src = source_coord(u, grid, {o0, o1, o2});
        int64_t src_row = (static_cast<int64_t>(src[0]) * g1 + src[1]) * g2 + src[2];
        for (int64_t c = 0; c < channels; ++c)
          map[static_cast<size_t>(row * channels + c)] = src_row * channels + c;
      }
  return map;
}

}  // namespace trot
