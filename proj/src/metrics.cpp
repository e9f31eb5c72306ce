#include "trot/metrics.hpp"

#include <algorithm>
#include <cmath>
#include <vector>

namespace trot {

namespace {

void check_shapes(const TensorI& pred, const TensorI& truth) {
  require(pred.rank() == 3 && truth.rank() == 3 && pred.shape == truth.shape, "ShapeMismatch",
          "prediction and truth masks must share a (D,H,W) shape");
}

std::vector<std::array<int, 3>> boundary_voxels(const TensorI& mask, int cls) {
  const int d = static_cast<int>(mask.dim(0));
  const int h = static_cast<int>(mask.dim(1));
  const int w = static_cast<int>(mask.dim(2));
  auto is_fg = [&](int z, int y, int x) {
    if (z < 0 || z >= d || y < 0 || y >= h || x < 0 || x >= w) return false;
    return mask.at3(z, y, x) == cls;
  };
  std::vector<std::array<int, 3>> out;
  for (int z = 0; z < d; ++z)
    for (int y = 0; y < h; ++y)
      for (int x = 0; x < w; ++x) {
        if (!is_fg(z, y, x)) continue;
        if (!is_fg(z - 1, y, x) || !is_fg(z + 1, y, x) || !is_fg(z, y - 1, x) ||
            !is_fg(z, y + 1, x) || !is_fg(z, y, x - 1) || !is_fg(z, y, x + 1))
          out.push_back({z, y, x});
      }
  return out;
}

double percentile95(std::vector<double>& v) {
  std::sort(v.begin(), v.end());
  if (v.size() == 1) return v[0];
  double pos = 0.95 * static_cast<double>(v.size() - 1);
  auto lo = static_cast<size_t>(pos);
  size_t hi = std::min(lo + 1, v.size() - 1);
  double frac = pos - static_cast<double>(lo);
  return v[lo] * (1.0 - frac) + v[hi] * frac;
}

void nearest_distances(const std::vector<std::array<int, 3>>& from,
                       const std::vector<std::array<int, 3>>& to,
                       const std::array<double, 3>& spacing, std::vector<double>& out) {
  for (const auto& a : from) {
    double best = std::numeric_limits<double>::max();
    for (const auto& b : to) {
      double dz = (a[0] - b[0]) * spacing[0];
      double dy = (a[1] - b[1]) * spacing[1];
      double dx = (a[2] - b[2]) * spacing[2];
      best = std::min(best, dz * dz + dy * dy + dx * dx);
    }
    out.push_back(std::sqrt(best));
  }
}

}  // namespace

double dice_score(const TensorI& pred, const TensorI& truth, int cls) {
  check_shapes(pred, truth);
  int64_t np = 0, nt = 0, ni = 0;
  for (int64_t i = 0; i < pred.numel(); ++i) {
    bool p = pred[i] == cls, t = truth[i] == cls;
    np += p;
    nt += t;
    ni += p && t;
  }
  if (np == 0 && nt == 0) return 1.0;  // vacuous agreement
  if (np == 0 || nt == 0) return 0.0;
  return 2.0 * static_cast<double>(ni) / static_cast<double>(np + nt);
}

double hd95(const TensorI& pred, const TensorI& truth, int cls,
            const std::array<double, 3>& spacing) {
  check_shapes(pred, truth);
  auto bp = boundary_voxels(pred, cls);
  auto bt = boundary_voxels(truth, cls);
  if (bp.empty() && bt.empty()) return 0.0;
  if (bp.empty() || bt.empty()) return kHd95Sentinel;
  std::vector<double> dists;
  dists.reserve(bp.size() + bt.size());
  nearest_distances(bp, bt, spacing, dists);
  nearest_distances(bt, bp, spacing, dists);
  return percentile95(dists);
}

SegmentationResult evaluate_class(const TensorI& pred, const TensorI& truth, int cls,
                                  const std::array<double, 3>& spacing) {
  SegmentationResult r;
  r.dice = dice_score(pred, truth, cls);
  r.hd95 = hd95(pred, truth, cls, spacing);
  for (int64_t i = 0; i < pred.numel(); ++i) {
    r.pred_present = r.pred_present || pred[i] == cls;
    r.truth_present = r.truth_present || truth[i] == cls;
    if (r.pred_present && r.truth_present) break;
  }
  return r;
}

}  // namespace trot
