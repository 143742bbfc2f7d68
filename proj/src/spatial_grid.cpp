#include "gtforge/spatial_grid.hpp"

#include <algorithm>
#include <numeric>

namespace gtforge {

UniformGrid::UniformGrid(std::span<const Vec3> points, double cell_size) : cell_(cell_size) {
  if (!(cell_size > 0.0)) throw DegenerateInput("grid cell size must be positive");
  std::vector<Key> keys(points.size());
  for (std::size_t i = 0; i < points.size(); ++i) keys[i] = key_of(points[i]);
  order_.resize(points.size());
  std::iota(order_.begin(), order_.end(), 0u);
  std::sort(order_.begin(), order_.end(), [&](std::uint32_t a, std::uint32_t b) {
    const Key& ka = keys[a];
    const Key& kb = keys[b];
    if (ka.x != kb.x) return ka.x < kb.x;
    if (ka.y != kb.y) return ka.y < kb.y;
    if (ka.z != kb.z) return ka.z < kb.z;
    return a < b;
  });
  cells_.reserve(points.size() / 4 + 1);
  std::uint32_t begin = 0;
  while (begin < order_.size()) {
    std::uint32_t end = begin + 1;
    while (end < order_.size() && keys[order_[end]] == keys[order_[begin]]) ++end;
    cells_.emplace(keys[order_[begin]], std::make_pair(begin, end));
    begin = end;
  }
}

}  // namespace gtforge
