#pragma once

#include <array>
#include <cstdint>
#include <optional>
#include <vector>

#include "gtforge/raster.hpp"

namespace gtforge {

/// Census descriptor; windows up to 9x9 need 80 bits.
struct CensusCode {
  std::uint64_t lo = 0;
  std::uint64_t hi = 0;

  bool test(int bit) const { return bit < 64 ? (lo >> bit) & 1u : (hi >> (bit - 64)) & 1u; }
  bool operator==(const CensusCode&) const = default;
};

struct CensusImage {
  int width = 0;
  int height = 0;
  int bits = 0;  // window^2 - 1
  std::vector<CensusCode> codes;

  const CensusCode& at(int x, int y) const {
    return codes[static_cast<std::size_t>(y) * static_cast<std::size_t>(width) + static_cast<std::size_t>(x)];
  }
};

/// Bit k is set when the k-th neighbor (row-major, center skipped) is darker
/// than the center. Borders clamp to the edge. Odd windows 3..9 only.
CensusImage census_transform(const ImageF& image, int window);

/// Costs for disparities 0..d_max, laid out [(y * width + x) * (d_max + 1) + d].
struct CostVolume {
  int width = 0;
  int height = 0;
  int d_max = 0;
  std::vector<std::uint16_t> costs;

  CostVolume() = default;
  CostVolume(int w, int h, int dmax, std::uint16_t fill = 0)
      : width(w), height(h), d_max(dmax),
        costs(static_cast<std::size_t>(w) * static_cast<std::size_t>(h) * static_cast<std::size_t>(dmax + 1), fill) {}

  int disparities() const { return d_max + 1; }
  std::size_t offset(int x, int y) const {
    return (static_cast<std::size_t>(y) * static_cast<std::size_t>(width) + static_cast<std::size_t>(x)) *
           static_cast<std::size_t>(d_max + 1);
  }
  std::uint16_t& at(int x, int y, int d) { return costs[offset(x, y) + static_cast<std::size_t>(d)]; }
  std::uint16_t at(int x, int y, int d) const { return costs[offset(x, y) + static_cast<std::size_t>(d)]; }
};

/// cost(x, y, d) = Hamming(left(x, y), right(x - d, y)); x - d < 0 costs census bits.
CostVolume build_cost_volume(const CensusImage& left, const CensusImage& right, int d_max);

struct SgmParams {
  int census_window = 5;
  int d_max = 64;
  int p1 = 7;
  int p2 = 86;
  int paths = 8;
  std::optional<double> lr_check_tol = 1.0;
  bool subpixel = true;
  int workers = 1;

  void validate() const;
};

struct PathDirection {
  int dx;
  int dy;
};

/// The 4 or 8 directions summed by sgm_aggregate, in summation order.
std::vector<PathDirection> sgm_directions(int paths);

/// L_r for one direction r:
/// L(p,d) = C(p,d) + min(L(p-r,d), L(p-r,d+-1) + P1, min_k L(p-r,k) + P2) - min_k L(p-r,k).
CostVolume aggregate_path(const CostVolume& vol, PathDirection dir, int p1, int p2);

/// Saturating 16-bit sum of L_r over the configured directions.
CostVolume sgm_aggregate(const CostVolume& vol, const SgmParams& params);

struct DisparityResult {
  ImageF disparity;  // +inf where invalid
  Mask valid;
};

/// Winner-take-all with smallest-d tie-break, optional parabola subpixel
/// refinement and optional left-right consistency check.
DisparityResult wta_disparity(const CostVolume& aggregated, const SgmParams& params);

/// Full census/SGM pipeline on a rectified pair.
DisparityResult match_pair(const ImageF& left, const ImageF& right, const SgmParams& params);

}  // namespace gtforge
