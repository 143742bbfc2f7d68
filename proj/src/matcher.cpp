#include "gtforge/matcher.hpp"

#include <algorithm>
#include <bit>
#include <cmath>
#include <limits>

#include "gtforge/parallel.hpp"

namespace gtforge {

CensusImage census_transform(const ImageF& image, int window) {
  if (window > 9) throw WindowTooLarge("census window larger than 9");
  if (window < 3 || window % 2 == 0) throw InvalidParams("census window must be odd and >= 3");
  const int r = window / 2;
  const int w = image.width();
  const int h = image.height();
  CensusImage out{w, h, window * window - 1, std::vector<CensusCode>(image.size())};
  for (int y = 0; y < h; ++y) {
    for (int x = 0; x < w; ++x) {
      const float center = image(x, y);
      CensusCode code;
      int bit = 0;
      for (int dy = -r; dy <= r; ++dy) {
        const int yy = std::clamp(y + dy, 0, h - 1);
        for (int dx = -r; dx <= r; ++dx) {
          if (dx == 0 && dy == 0) continue;
          const int xx = std::clamp(x + dx, 0, w - 1);
          if (image(xx, yy) < center) {
            if (bit < 64) code.lo |= std::uint64_t{1} << bit;
            else code.hi |= std::uint64_t{1} << (bit - 64);
          }
          ++bit;
        }
      }
      out.codes[static_cast<std::size_t>(y) * static_cast<std::size_t>(w) + static_cast<std::size_t>(x)] = code;
    }
  }
  return out;
}

CostVolume build_cost_volume(const CensusImage& left, const CensusImage& right, int d_max) {
  if (left.width != right.width || left.height != right.height || left.bits != right.bits)
    throw SizeMismatch("census images differ in size or window");
  if (d_max < 0) throw InvalidParams("d_max must be >= 0");
  CostVolume vol(left.width, left.height, d_max);
  const auto max_cost = static_cast<std::uint16_t>(left.bits);
  for (int y = 0; y < left.height; ++y) {
    for (int x = 0; x < left.width; ++x) {
      const CensusCode& l = left.at(x, y);
      for (int d = 0; d <= d_max; ++d) {
        if (x - d < 0) {
          vol.at(x, y, d) = max_cost;
          continue;
        }
        const CensusCode& r = right.at(x - d, y);
        vol.at(x, y, d) = static_cast<std::uint16_t>(std::popcount(l.lo ^ r.lo) + std::popcount(l.hi ^ r.hi));
      }
    }
  }
  return vol;
}

void SgmParams::validate() const {
  if (census_window > 9) throw WindowTooLarge("census window larger than 9");
  if (census_window < 3 || census_window % 2 == 0) throw InvalidParams("census window must be odd and >= 3");
  if (!(0 < p1 && p1 < p2)) throw InvalidParams("SGM penalties must satisfy 0 < P1 < P2");
  if (paths != 4 && paths != 8) throw InvalidParams("SGM path count must be 4 or 8");
  if (d_max < 0) throw InvalidParams("d_max must be >= 0");
  if (lr_check_tol && !(*lr_check_tol >= 0.0)) throw InvalidParams("lr_check_tol must be >= 0");
}

std::vector<PathDirection> sgm_directions(int paths) {
  std::vector<PathDirection> dirs = {{1, 0}, {-1, 0}, {0, 1}, {0, -1}};
  if (paths == 8) dirs.insert(dirs.end(), {{1, 1}, {-1, -1}, {1, -1}, {-1, 1}});
  return dirs;
}

namespace {

// One SGM recurrence step: out[d] from the predecessor's L (or raw costs when
// the predecessor lies outside the image). Returns min_d out[d].
std::uint16_t path_step(const std::uint16_t* cost, const std::uint16_t* prev, std::uint16_t prev_min, int nd, int p1,
                        int p2, std::uint16_t* out) {
  std::uint16_t best = std::numeric_limits<std::uint16_t>::max();
  if (prev == nullptr) {
    for (int d = 0; d < nd; ++d) {
      out[d] = cost[d];
      best = std::min(best, out[d]);
    }
    return best;
  }
  const int jump = prev_min + p2;
  for (int d = 0; d < nd; ++d) {
    int m = std::min<int>(prev[d], jump);
    if (d > 0) m = std::min(m, prev[d - 1] + p1);
    if (d + 1 < nd) m = std::min(m, prev[d + 1] + p1);
    const int v = cost[d] + m - prev_min;
    out[d] = static_cast<std::uint16_t>(std::min(v, 65535));
    best = std::min(best, out[d]);
  }
  return best;
}

// Runs the recurrence along direction dir and hands each pixel's L vector to sink(x, y, L).
template <typename Sink>
void run_path(const CostVolume& vol, PathDirection dir, int p1, int p2, Sink&& sink) {
  const int w = vol.width;
  const int h = vol.height;
  const int nd = vol.disparities();
  const auto snd = static_cast<std::size_t>(nd);
  const int x0 = dir.dx >= 0 ? 0 : w - 1;
  const int xstep = dir.dx >= 0 ? 1 : -1;
  const int y0 = dir.dy >= 0 ? 0 : h - 1;
  const int ystep = dir.dy >= 0 ? 1 : -1;

  std::vector<std::uint16_t> prev_row(static_cast<std::size_t>(w) * snd);
  std::vector<std::uint16_t> cur_row(static_cast<std::size_t>(w) * snd);
  std::vector<std::uint16_t> prev_min(static_cast<std::size_t>(w));
  std::vector<std::uint16_t> cur_min(static_cast<std::size_t>(w));

  for (int yi = 0, y = y0; yi < h; ++yi, y += ystep) {
    for (int xi = 0, x = x0; xi < w; ++xi, x += xstep) {
      const int px = x - dir.dx;
      const int py = y - dir.dy;
      const std::uint16_t* prev = nullptr;
      std::uint16_t pmin = 0;
      if (px >= 0 && px < w && py >= 0 && py < h) {
        if (dir.dy == 0) {
          prev = &cur_row[static_cast<std::size_t>(px) * snd];
          pmin = cur_min[static_cast<std::size_t>(px)];
        } else {
          prev = &prev_row[static_cast<std::size_t>(px) * snd];
          pmin = prev_min[static_cast<std::size_t>(px)];
        }
      }
      std::uint16_t* out = &cur_row[static_cast<std::size_t>(x) * snd];
      cur_min[static_cast<std::size_t>(x)] = path_step(&vol.costs[vol.offset(x, y)], prev, pmin, nd, p1, p2, out);
      sink(x, y, static_cast<const std::uint16_t*>(out));
    }
    std::swap(prev_row, cur_row);
    std::swap(prev_min, cur_min);
  }
}

}  // namespace

CostVolume aggregate_path(const CostVolume& vol, PathDirection dir, int p1, int p2) {
  CostVolume out(vol.width, vol.height, vol.d_max);
  const auto nd = static_cast<std::size_t>(vol.disparities());
  run_path(vol, dir, p1, p2, [&](int x, int y, const std::uint16_t* l) {
    std::copy(l, l + nd, out.costs.begin() + static_cast<std::ptrdiff_t>(out.offset(x, y)));
  });
  return out;
}

CostVolume sgm_aggregate(const CostVolume& vol, const SgmParams& params) {
  params.validate();
  const auto dirs = sgm_directions(params.paths);
  CostVolume sum(vol.width, vol.height, vol.d_max);
  const auto nd = static_cast<std::size_t>(vol.disparities());

  // Horizontal paths are row-independent and run on worker threads; each row
  // writes only its own slice of the sum, and every direction is added in a
  // fixed order, so results do not depend on the worker count.
  for (const PathDirection& dir : dirs) {
    auto add = [&](int x, int y, const std::uint16_t* l) {
      std::uint16_t* s = &sum.costs[sum.offset(x, y)];
      for (std::size_t d = 0; d < nd; ++d) s[d] = static_cast<std::uint16_t>(std::min<int>(s[d] + l[d], 65535));
    };
    if (dir.dy == 0 && params.workers > 1) {
      parallel_for(static_cast<std::size_t>(vol.height), params.workers, [&](std::size_t begin, std::size_t end) {
        for (std::size_t row = begin; row < end; ++row) {
          CostVolume strip(vol.width, 1, vol.d_max);
          std::copy(vol.costs.begin() + static_cast<std::ptrdiff_t>(vol.offset(0, static_cast<int>(row))),
                    vol.costs.begin() + static_cast<std::ptrdiff_t>(vol.offset(0, static_cast<int>(row)) + strip.costs.size()),
                    strip.costs.begin());
          run_path(strip, dir, params.p1, params.p2,
                   [&](int x, int, const std::uint16_t* l) { add(x, static_cast<int>(row), l); });
        }
      });
    } else {
      run_path(vol, dir, params.p1, params.p2, add);
    }
  }
  return sum;
}

DisparityResult wta_disparity(const CostVolume& agg, const SgmParams& params) {
  const int w = agg.width;
  const int h = agg.height;
  const int nd = agg.disparities();
  DisparityResult out{ImageF(w, h, std::numeric_limits<float>::infinity()), Mask(w, h, 0)};
  Image<int> left_int(w, h, 0);

  for (int y = 0; y < h; ++y) {
    for (int x = 0; x < w; ++x) {
      const std::uint16_t* c = &agg.costs[agg.offset(x, y)];
      int best = 0;
      for (int d = 1; d < nd; ++d)
        if (c[d] < c[best]) best = d;
      left_int(x, y) = best;
      double disp = best;
      if (params.subpixel && best > 0 && best + 1 < nd) {
        const double cm = c[best - 1];
        const double c0 = c[best];
        const double cp = c[best + 1];
        const double denom = cm - 2.0 * c0 + cp;
        if (denom > 0.0) disp += (cm - cp) / (2.0 * denom);
      }
      out.disparity(x, y) = static_cast<float>(disp);
      out.valid(x, y) = 1;
    }
  }

  if (params.lr_check_tol) {
    // right-view winners read the same volume along x_r + d
    Image<int> right_int(w, h, 0);
    for (int y = 0; y < h; ++y) {
      for (int xr = 0; xr < w; ++xr) {
        int best = 0;
        std::uint16_t best_cost = std::numeric_limits<std::uint16_t>::max();
        for (int d = 0; d < nd && xr + d < w; ++d) {
          const std::uint16_t v = agg.at(xr + d, y, d);
          if (v < best_cost) {
            best_cost = v;
            best = d;
          }
        }
        right_int(xr, y) = best;
      }
    }
    for (int y = 0; y < h; ++y) {
      for (int x = 0; x < w; ++x) {
        const int xr = x - left_int(x, y);
        const bool ok = xr >= 0 && std::abs(left_int(x, y) - right_int(xr, y)) <= *params.lr_check_tol;
        if (!ok) {
          out.disparity(x, y) = std::numeric_limits<float>::infinity();
          out.valid(x, y) = 0;
        }
      }
    }
  }
  return out;
}

DisparityResult match_pair(const ImageF& left, const ImageF& right, const SgmParams& params) {
  params.validate();
  if (left.width() != right.width() || left.height() != right.height())
    throw SizeMismatch("stereo images differ in size");
  const CensusImage cl = census_transform(left, params.census_window);
  const CensusImage cr = census_transform(right, params.census_window);
  const CostVolume raw = build_cost_volume(cl, cr, params.d_max);
  return wta_disparity(sgm_aggregate(raw, params), params);
}

}  // namespace gtforge
