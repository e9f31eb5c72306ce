#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <algorithm>

#include "trot/metrics.hpp"
#include "trot/spatial.hpp"

using namespace trot;

namespace {

TensorI make_mask(const Shape3& s) { return TensorI({s[0], s[1], s[2]}); }

// Independent oracle: boundary extraction and the all-pairs percentile done
// from scratch, no shared code with the implementation beyond the definition.
double hd95_oracle(const TensorI& a, const TensorI& b, int cls,
                   const std::array<double, 3>& sp = {1, 1, 1}) {
  auto boundary = [&](const TensorI& m) {
    std::vector<std::array<int, 3>> out;
    for (int z = 0; z < m.dim(0); ++z)
      for (int y = 0; y < m.dim(1); ++y)
        for (int x = 0; x < m.dim(2); ++x) {
          if (m.at3(z, y, x) != cls) continue;
          bool edge = false;
          const int dz[] = {1, -1, 0, 0, 0, 0}, dy[] = {0, 0, 1, -1, 0, 0},
                    dx[] = {0, 0, 0, 0, 1, -1};
          for (int n = 0; n < 6; ++n) {
            int zz = z + dz[n], yy = y + dy[n], xx = x + dx[n];
            if (zz < 0 || zz >= m.dim(0) || yy < 0 || yy >= m.dim(1) || xx < 0 || xx >= m.dim(2) ||
                m.at3(zz, yy, xx) != cls)
              edge = true;
          }
          if (edge) out.push_back({z, y, x});
        }
    return out;
  };
  auto ba = boundary(a), bb = boundary(b);
  if (ba.empty() && bb.empty()) return 0.0;
  if (ba.empty() || bb.empty()) return kHd95Sentinel;
  std::vector<double> d;
  auto side = [&](const auto& from, const auto& to) {
    for (const auto& p : from) {
      double best = 1e300;
      for (const auto& q : to) {
        double v = 0;
        for (int k = 0; k < 3; ++k) {
          double diff = (p[static_cast<size_t>(k)] - q[static_cast<size_t>(k)]) * sp[static_cast<size_t>(k)];
          v += diff * diff;
        }
        best = std::min(best, v);
      }
      d.push_back(std::sqrt(best));
    }
  };
  side(ba, bb);
  side(bb, ba);
  std::sort(d.begin(), d.end());
  double pos = 0.95 * static_cast<double>(d.size() - 1);
  auto lo = static_cast<size_t>(pos);
  size_t hi = std::min(lo + 1, d.size() - 1);
  return d[lo] + (pos - static_cast<double>(lo)) * (d[hi] - d[lo]);
}

}  // namespace

TEST_CASE("dice basics") {
  TensorI p = make_mask({4, 4, 4}), t = make_mask({4, 4, 4});
  SUBCASE("identical masks") {
    p.at3(1, 1, 1) = 1;
    t.at3(1, 1, 1) = 1;
    CHECK(dice_score(p, t, 1) == 1.0);
  }
  SUBCASE("disjoint nonempty masks") {
    p.at3(0, 0, 0) = 1;
    t.at3(3, 3, 3) = 1;
    CHECK(dice_score(p, t, 1) == 0.0);
  }
  SUBCASE("counting example: |P|=6, |T|=4, overlap 3") {
    for (int i = 0; i < 6; ++i) p[i] = 1;
    for (int i = 3; i < 7; ++i) t[i] = 1;
    CHECK(dice_score(p, t, 1) == doctest::Approx(0.6).epsilon(1e-15));
  }
  SUBCASE("both empty counts as agreement, one empty as zero") {
    CHECK(dice_score(p, t, 1) == 1.0);
    p.at3(0, 0, 0) = 1;
    CHECK(dice_score(p, t, 1) == 0.0);
  }
}

TEST_CASE("dice symmetry and identity of supports") {
  Rng rng(4);
  for (int rep = 0; rep < 20; ++rep) {
    TensorI p = make_mask({5, 5, 5}), t = make_mask({5, 5, 5});
    for (auto& v : p.data) v = uniform_int(rng, 0, 2);
    for (auto& v : t.data) v = uniform_int(rng, 0, 2);
    for (int cls = 1; cls <= 2; ++cls) {
      CHECK(dice_score(p, t, cls) == dice_score(t, p, cls));
      if (dice_score(p, t, cls) == 1.0) {
        for (int64_t i = 0; i < p.numel(); ++i) CHECK((p[i] == cls) == (t[i] == cls));
      }
    }
  }
}

TEST_CASE("hd95 basics") {
  SUBCASE("identical masks give zero") {
    TensorI p = make_mask({6, 6, 6});
    p.at3(2, 2, 2) = 1;
    p.at3(2, 2, 3) = 1;
    CHECK(hd95(p, p, 1) == 0.0);
  }
  SUBCASE("single voxels offset by one along the last axis") {
    TensorI p = make_mask({4, 4, 4}), t = make_mask({4, 4, 4});
    p.at3(1, 1, 1) = 1;
    t.at3(1, 1, 2) = 1;
    CHECK(hd95(p, t, 1) == doctest::Approx(1.0).epsilon(1e-12));
  }
  SUBCASE("empty prediction yields the sentinel with presence flags") {
    TensorI p = make_mask({4, 4, 4}), t = make_mask({4, 4, 4});
    t.at3(1, 1, 1) = 1;
    auto r = evaluate_class(p, t, 1);
    CHECK(std::isinf(r.hd95));
    CHECK(r.dice == 0.0);
    CHECK_FALSE(r.pred_present);
    CHECK(r.truth_present);
  }
  SUBCASE("both empty is vacuous agreement") {
    TensorI p = make_mask({4, 4, 4}), t = make_mask({4, 4, 4});
    auto r = evaluate_class(p, t, 1);
    CHECK(r.dice == 1.0);
    CHECK(r.hd95 == 0.0);
  }
}

TEST_CASE("two cubes offset by four match the all-pairs oracle") {
  TensorI p = make_mask({16, 16, 16}), t = make_mask({16, 16, 16});
  for (int z = 2; z < 5; ++z)
    for (int y = 2; y < 5; ++y)
      for (int x = 2; x < 5; ++x) {
        p.at3(z, y, x) = 1;
        t.at3(z, y, x + 4) = 1;
      }
  double got = hd95(p, t, 1);
  double want = hd95_oracle(p, t, 1);
  CHECK(got == doctest::Approx(want).epsilon(1e-12));
  CHECK(got == doctest::Approx(hd95(t, p, 1)).epsilon(1e-12));
}

TEST_CASE("50 random mask pairs match both oracles") {
  Rng rng(7);
  for (int rep = 0; rep < 50; ++rep) {
    TensorI p = make_mask({8, 8, 8}), t = make_mask({8, 8, 8});
    // blobby random masks so boundaries are nontrivial
    for (int b = 0; b < 3; ++b) {
      int cz = uniform_int(rng, 0, 7), cy = uniform_int(rng, 0, 7), cx = uniform_int(rng, 0, 7);
      int r = uniform_int(rng, 1, 2);
      for (int z = std::max(0, cz - r); z <= std::min(7, cz + r); ++z)
        for (int y = std::max(0, cy - r); y <= std::min(7, cy + r); ++y)
          for (int x = std::max(0, cx - r); x <= std::min(7, cx + r); ++x) {
            if (b % 2 == 0) p.at3(z, y, x) = 1;
            else t.at3(z, y, x) = 1;
          }
    }
    // counting oracle for dice
    int64_t np = 0, nt = 0, ni = 0;
    for (int64_t i = 0; i < p.numel(); ++i) {
      np += p[i] == 1;
      nt += t[i] == 1;
      ni += p[i] == 1 && t[i] == 1;
    }
    double dice_expect = (np + nt) == 0 ? 1.0 : 2.0 * static_cast<double>(ni) / static_cast<double>(np + nt);
    CHECK(dice_score(p, t, 1) == dice_expect);
    double h = hd95(p, t, 1);
    double ho = hd95_oracle(p, t, 1);
    if (std::isinf(ho)) CHECK(std::isinf(h));
    else CHECK(h == doctest::Approx(ho).epsilon(1e-9));
  }
}

TEST_CASE("metrics are invariant under a joint spatial transform") {
  Rng rng(9);
  TensorI p = make_mask({6, 6, 6}), t = make_mask({6, 6, 6});
  for (auto& v : p.data) v = uniform_int(rng, 0, 1);
  for (auto& v : t.data) v = uniform_int(rng, 0, 1);
  for (const auto& tr : all_transforms()) {
    TensorI pt = apply_to_grid3(p, tr), tt = apply_to_grid3(t, tr);
    CHECK(dice_score(pt, tt, 1) == dice_score(p, t, 1));
    CHECK(hd95(pt, tt, 1) == doctest::Approx(hd95(p, t, 1)).epsilon(1e-12));
  }
}

TEST_CASE("spacing scales hd95 distances") {
  TensorI p = make_mask({4, 4, 4}), t = make_mask({4, 4, 4});
  p.at3(1, 1, 1) = 1;
  t.at3(1, 1, 2) = 1;
  CHECK(hd95(p, t, 1, {1.0, 1.0, 2.5}) == doctest::Approx(2.5).epsilon(1e-12));
}

TEST_CASE("shape mismatch is rejected") {
  TensorI p = make_mask({4, 4, 4}), t = make_mask({4, 4, 5});
  CHECK_THROWS_WITH_AS(dice_score(p, t, 1), doctest::Contains("ShapeMismatch"), Error);
  CHECK_THROWS_WITH_AS(hd95(p, t, 1), doctest::Contains("ShapeMismatch"), Error);
}
