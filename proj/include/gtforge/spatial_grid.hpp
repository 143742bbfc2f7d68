#pragma once

#include <cmath>
#include <cstdint>
#include <span>
#include <unordered_map>
#include <vector>

#include "gtforge/geometry.hpp"

namespace gtforge {

/// Uniform 3D bucket grid over a fixed point set. Buckets hold point indices
/// in increasing order.
class UniformGrid {
 public:
  UniformGrid(std::span<const Vec3> points, double cell_size);

  double cell_size() const { return cell_; }

  /// Calls fn(index) for every point in the 3x3x3 block of cells around p.
  template <typename Fn>
  void for_each_near(const Vec3& p, Fn&& fn) const {
    const Key c = key_of(p);
    for (std::int64_t dz = -1; dz <= 1; ++dz)
      for (std::int64_t dy = -1; dy <= 1; ++dy)
        for (std::int64_t dx = -1; dx <= 1; ++dx) {
          const auto it = cells_.find(Key{c.x + dx, c.y + dy, c.z + dz});
          if (it == cells_.end()) continue;
          for (std::uint32_t k = it->second.first; k < it->second.second; ++k) fn(order_[k]);
        }
  }

 private:
  struct Key {
    std::int64_t x, y, z;
    bool operator==(const Key&) const = default;
  };
  struct KeyHash {
    std::size_t operator()(const Key& k) const {
      std::uint64_t h = static_cast<std::uint64_t>(k.x) * 0x9E3779B97F4A7C15ull;
      h ^= static_cast<std::uint64_t>(k.y) * 0xC2B2AE3D27D4EB4Full + (h << 6) + (h >> 2);
      h ^= static_cast<std::uint64_t>(k.z) * 0x165667B19E3779F9ull + (h << 6) + (h >> 2);
      return static_cast<std::size_t>(h);
    }
  };

  Key key_of(const Vec3& p) const {
    return Key{static_cast<std::int64_t>(std::floor(p.x() / cell_)), static_cast<std::int64_t>(std::floor(p.y() / cell_)),
               static_cast<std::int64_t>(std::floor(p.z() / cell_))};
  }

  double cell_;
  std::vector<std::uint32_t> order_;
  std::unordered_map<Key, std::pair<std::uint32_t, std::uint32_t>, KeyHash> cells_;
};

}  // namespace gtforge
