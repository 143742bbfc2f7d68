#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include "doctest.h"

#include <bit>
#include <limits>

#include "gtforge/errors.hpp"
#include "gtforge/matcher.hpp"
#include "gtforge/synth.hpp"
#include "sgm_oracle.hpp"
#include "test_util.hpp"

using namespace gtforge;
using namespace testutil;

namespace {

ImageF random_image(std::mt19937_64& rng, int w, int h) {
  ImageF img(w, h);
  for (float& v : img.data()) v = static_cast<float>(rng() % 256);
  return img;
}

// Independent census: list of neighbor comparisons in row-major order.
std::vector<bool> census_bits(const ImageF& img, int x, int y, int window) {
  std::vector<bool> bits;
  const int r = window / 2;
  for (int dy = -r; dy <= r; ++dy)
    for (int dx = -r; dx <= r; ++dx) {
      if (!dx && !dy) continue;
      const int xx = std::min(std::max(x + dx, 0), img.width() - 1);
      const int yy = std::min(std::max(y + dy, 0), img.height() - 1);
      bits.push_back(img(xx, yy) < img(x, y));
    }
  return bits;
}

int popcount(const CensusCode& c) { return std::popcount(c.lo) + std::popcount(c.hi); }

CostVolume random_volume(std::mt19937_64& rng, int w, int h, int dmax, int max_cost) {
  CostVolume v(w, h, dmax);
  for (auto& c : v.costs) c = static_cast<std::uint16_t>(rng() % static_cast<std::uint64_t>(max_cost + 1));
  return v;
}

// Minimum over every label sequence along the strip prefix ending at pixel `end` with label d.
std::int64_t best_sequence(const std::vector<std::vector<std::int64_t>>& c, int end, int d, int p1, int p2) {
  const int D = static_cast<int>(c[0].size());
  std::vector<int> labels(static_cast<std::size_t>(end + 1), 0);
  std::int64_t best = std::numeric_limits<std::int64_t>::max();
  for (;;) {
    labels[static_cast<std::size_t>(end)] = d;
    std::int64_t total = 0;
    for (int q = 0; q <= end; ++q) {
      total += c[static_cast<std::size_t>(q)][static_cast<std::size_t>(labels[static_cast<std::size_t>(q)])];
      if (q > 0) total += penalty(labels[static_cast<std::size_t>(q)], labels[static_cast<std::size_t>(q - 1)], p1, p2);
    }
    best = std::min(best, total);
    int k = 0;
    while (k < end && ++labels[static_cast<std::size_t>(k)] == D) labels[static_cast<std::size_t>(k++)] = 0;
    if (k == end) break;
  }
  return best;
}

}  // namespace

TEST_CASE("census: constant image and bit layout") {
  ImageF flat(7, 5, 42.0f);
  for (const CensusCode& c : census_transform(flat, 5).codes) CHECK(popcount(c) == 0);

  ImageF img(5, 5, 200.0f);
  img(2, 2) = 10.0f;
  const CensusImage c = census_transform(img, 3);
  CHECK(c.bits == 8);
  // Neighbor at offset o from the dark pixel sees it at offset -o: row-major index among the 8.
  const int idx[3][3] = {{0, 1, 2}, {3, -1, 4}, {5, 6, 7}};
  for (int dy = -1; dy <= 1; ++dy)
    for (int dx = -1; dx <= 1; ++dx) {
      if (!dx && !dy) continue;
      const CensusCode& code = c.at(2 + dx, 2 + dy);
      CHECK(popcount(code) == 1);
      CHECK(code.test(idx[1 - dy][1 - dx]));
    }
  CHECK(popcount(c.at(2, 2)) == 0);

  ImageF bright(5, 5, 10.0f);
  bright(2, 2) = 200.0f;
  CHECK(popcount(census_transform(bright, 3).at(2, 2)) == 8);
}

TEST_CASE("census: matches the reference with clamped borders") {
  std::mt19937_64 rng(1);
  const ImageF img = random_image(rng, 23, 17);
  for (const int window : {3, 5, 7, 9}) {
    const CensusImage c = census_transform(img, window);
    CHECK(c.bits == window * window - 1);
    for (int y = 0; y < img.height(); ++y)
      for (int x = 0; x < img.width(); ++x) {
        const std::vector<bool> ref = census_bits(img, x, y, window);
        for (int b = 0; b < c.bits; ++b) CHECK(c.at(x, y).test(b) == ref[static_cast<std::size_t>(b)]);
      }
  }
}

TEST_CASE("census: window preconditions") {
  ImageF img(8, 8);
  CHECK_THROWS_AS(census_transform(img, 11), WindowTooLarge);
  CHECK_THROWS(census_transform(img, 4));
  CHECK_THROWS(census_transform(img, 1));
}

TEST_CASE("cost volume") {
  std::mt19937_64 rng(2);
  const ImageF left = random_image(rng, 40, 20);
  const CensusImage cl = census_transform(left, 5);
  const CostVolume same = build_cost_volume(cl, cl, 10);
  for (int y = 0; y < 20; ++y)
    for (int x = 0; x < 40; ++x) {
      CHECK(same.at(x, y, 0) == 0);
      for (int d = x + 1; d <= 10; ++d) CHECK(same.at(x, y, d) == cl.bits);
    }

  ImageF right(40, 20);
  for (int y = 0; y < 20; ++y)
    for (int x = 0; x < 40; ++x) right(x, y) = left(std::min(x + 7, 39), y);
  const CostVolume vol = build_cost_volume(cl, census_transform(right, 5), 12);
  // Distinct local maxima share the all-ones code, so a few pixels tie at zero cost.
  int at7 = 0, total = 0;
  for (int y = 2; y < 18; ++y)
    for (int x = 9; x < 30; ++x) {
      int best = 0;
      for (int d = 1; d <= 12; ++d)
        if (vol.at(x, y, d) < vol.at(x, y, best)) best = d;
      ++total;
      at7 += best == 7;
      CHECK(vol.at(x, y, 7) == 0);
    }
  CHECK(at7 >= 0.95 * total);
  for (int y = 0; y < 20; ++y)
    for (int x = 0; x < 40; ++x)
      for (int d = 0; d <= 12; ++d) {
        const int expect = x - d < 0 ? cl.bits
                                     : popcount({cl.at(x, y).lo ^ census_transform(right, 5).at(x - d, y).lo,
                                                 cl.at(x, y).hi ^ census_transform(right, 5).at(x - d, y).hi});
        if (y % 7 == 0 && x % 5 == 0) CHECK(vol.at(x, y, d) == expect);
      }
  CHECK_THROWS_AS(build_cost_volume(cl, census_transform(random_image(rng, 39, 20), 5), 4), SizeMismatch);
}

TEST_CASE("path aggregation equals exhaustive label enumeration on short strips") {
  std::mt19937_64 rng(3);
  for (int trial = 0; trial < 20; ++trial) {
    const int w = 2 + static_cast<int>(rng() % 7);
    const CostVolume vol = random_volume(rng, w, 1, 3, 24);
    const int p1 = 1 + static_cast<int>(rng() % 8);
    const int p2 = p1 + 1 + static_cast<int>(rng() % 80);
    const CostVolume agg = aggregate_path(vol, {1, 0}, p1, p2);
    std::vector<std::vector<std::int64_t>> c(static_cast<std::size_t>(w), std::vector<std::int64_t>(4));
    for (int x = 0; x < w; ++x)
      for (int d = 0; d < 4; ++d) c[static_cast<std::size_t>(x)][static_cast<std::size_t>(d)] = vol.at(x, 0, d);
    for (int x = 0; x < w; ++x) {
      std::int64_t prev_min = 0;
      if (x > 0) {
        prev_min = std::numeric_limits<std::int64_t>::max();
        for (int k = 0; k < 4; ++k) prev_min = std::min(prev_min, best_sequence(c, x - 1, k, p1, p2));
      }
      for (int d = 0; d < 4; ++d) CHECK(agg.at(x, 0, d) == best_sequence(c, x, d, p1, p2) - prev_min);
    }
  }
}

TEST_CASE("path aggregation equals the DP oracle for every direction on 16 px volumes") {
  std::mt19937_64 rng(4);
  for (const PathDirection dir : sgm_directions(8)) {
    const CostVolume vol = random_volume(rng, 16, 11, 6, 48);
    const CostVolume agg = aggregate_path(vol, dir, 7, 86);
    for (int y = 0; y < vol.height; ++y)
      for (int x = 0; x < vol.width; ++x) {
        const auto ref = path_oracle(vol, x, y, dir, 7, 86);
        for (int d = 0; d < vol.disparities(); ++d) CHECK(agg.at(x, y, d) == ref[static_cast<std::size_t>(d)]);
      }
  }
}

TEST_CASE("large P2 on a two-region strip") {
  CostVolume vol(8, 1, 2);
  for (int x = 0; x < 8; ++x)
    for (int d = 0; d <= 2; ++d) vol.at(x, 0, d) = static_cast<std::uint16_t>(x < 4 ? (d == 0 ? 0 : 10) : (d == 2 ? 0 : 10));
  const CostVolume agg = aggregate_path(vol, {1, 0}, 3, 1000);
  for (int x = 0; x < 8; ++x) {
    const auto ref = path_oracle(vol, x, 0, {1, 0}, 3, 1000);
    for (int d = 0; d <= 2; ++d) CHECK(agg.at(x, 0, d) == ref[static_cast<std::size_t>(d)]);
  }
  // Jumping 0 -> 2 costs P2; stepping through d = 1 costs 2 P1 + 10.
  CHECK(agg.at(4, 0, 2) == 0 + 16 - 0);
}

TEST_CASE("sgm_aggregate trivial cases") {
  std::mt19937_64 rng(5);
  const CostVolume one = random_volume(rng, 1, 1, 9, 24);
  for (const int paths : {4, 8}) {
    SgmParams p;
    p.paths = paths;
    for (const PathDirection dir : sgm_directions(paths)) CHECK(aggregate_path(one, dir, p.p1, p.p2).costs == one.costs);
    const CostVolume sum = sgm_aggregate(one, p);
    for (std::size_t i = 0; i < one.costs.size(); ++i) CHECK(sum.costs[i] == paths * one.costs[i]);
  }
  const CostVolume zero(9, 7, 5);
  CHECK(sgm_aggregate(zero, SgmParams{}).costs == zero.costs);
  CHECK(sgm_directions(4).size() == 4);
  CHECK(sgm_directions(8).size() == 8);
}

TEST_CASE("sgm_aggregate is the sum of the path volumes") {
  std::mt19937_64 rng(6);
  const CostVolume vol = random_volume(rng, 20, 13, 8, 24);
  SgmParams p;
  std::vector<std::uint32_t> expect(vol.costs.size(), 0);
  for (const PathDirection dir : sgm_directions(8)) {
    const CostVolume l = aggregate_path(vol, dir, p.p1, p.p2);
    for (std::size_t i = 0; i < expect.size(); ++i) expect[i] += l.costs[i];
  }
  const CostVolume sum = sgm_aggregate(vol, p);
  for (std::size_t i = 0; i < expect.size(); ++i) CHECK(sum.costs[i] == std::min<std::uint32_t>(expect[i], 65535));
  p.workers = 3;
  CHECK(sgm_aggregate(vol, p).costs == sum.costs);
}

TEST_CASE("wta: argmin, ties, subpixel") {
  SgmParams p;
  p.lr_check_tol.reset();
  p.subpixel = false;
  CostVolume vol(6, 3, 9, 50);
  for (int y = 0; y < 3; ++y)
    for (int x = 0; x < 6; ++x) vol.at(x, y, 7) = 1;
  const DisparityResult r7 = wta_disparity(vol, p);
  for (const float d : r7.disparity.data()) CHECK(d == 7.0f);

  CostVolume tie(4, 1, 6, 50);
  for (int x = 0; x < 4; ++x) tie.at(x, 0, 3) = tie.at(x, 0, 5) = 2;
  const DisparityResult r3 = wta_disparity(tie, p);
  for (const float d : r3.disparity.data()) CHECK(d == 3.0f);

  // Parabola through (3, 10), (4, 4), (5, 6): vertex at 4 + (10 - 6) / (2 (10 - 8 + 6)) = 4.25.
  CostVolume par(1, 1, 8, 90);
  par.at(0, 0, 3) = 10;
  par.at(0, 0, 4) = 4;
  par.at(0, 0, 5) = 6;
  p.subpixel = true;
  CHECK(wta_disparity(par, p).disparity(0, 0) == doctest::Approx(4.25));
}

TEST_CASE("match_pair: integer shift, subpixel shift, determinism") {
  std::mt19937_64 rng(7);
  const ImageF left = random_image(rng, 96, 64);
  ImageF right(96, 64);
  for (int y = 0; y < 64; ++y)
    for (int x = 0; x < 96; ++x) right(x, y) = left(std::min(x + 5, 95), y);
  SgmParams p;
  p.d_max = 16;
  p.subpixel = false;
  const DisparityResult r = match_pair(left, right, p);
  int exact = 0, total = 0;
  for (int y = 4; y < 60; ++y)
    for (int x = 20; x < 88; ++x) {
      ++total;
      exact += r.disparity(x, y) == 5.0f;
    }
  CHECK(exact >= 0.99 * total);
  for (int y = 0; y < 64; ++y)
    for (int x = 0; x < 96; ++x) CHECK((r.valid(x, y) != 0) == std::isfinite(r.disparity(x, y)));

  SgmParams many = p;
  many.workers = 4;
  CHECK(match_pair(left, right, many).disparity == r.disparity);

  ImageF sl(128, 64), sr(128, 64);
  for (int y = 0; y < 64; ++y)
    for (int x = 0; x < 128; ++x) {
      sl(x, y) = static_cast<float>(texture_value(9, x, y, 3.0));
      sr(x, y) = static_cast<float>(texture_value(9, x + 7.25, y, 3.0));
    }
  SgmParams sp;
  sp.d_max = 16;
  const DisparityResult s = match_pair(sl, sr, sp);
  double err = 0;
  int n = 0;
  for (int y = 4; y < 60; ++y)
    for (int x = 24; x < 120; ++x)
      if (std::isfinite(s.disparity(x, y))) {
        err += std::abs(s.disparity(x, y) - 7.25);
        ++n;
      }
  REQUIRE(n > 0.9 * 56 * 96);
  CHECK(err / n < 0.25);
}

TEST_CASE("SgmParams validation") {
  SgmParams p;
  p.p1 = 10;
  p.p2 = 10;
  CHECK_THROWS_AS(p.validate(), InvalidParams);
  p = {};
  p.paths = 6;
  CHECK_THROWS_AS(p.validate(), InvalidParams);
  p = {};
  p.census_window = 11;
  CHECK_THROWS(p.validate());
}
