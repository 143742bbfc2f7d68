#include "gtforge/gtgen.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <limits>
#include <sstream>

#include "gtforge/parallel.hpp"

namespace gtforge {

const char* to_string(Visibility v) { return v == Visibility::kSeen ? "seen" : "occ"; }

Visibility visibility_from_string(const std::string& s) {
  if (s == "seen") return Visibility::kSeen;
  if (s == "occ") return Visibility::kOccludedRight;
  throw FormatError("unknown visibility label '" + s + "'");
}

SparseDisparityMap::SparseDisparityMap(int width, int height, std::string pair_id,
                                       std::vector<GroundTruthSample> samples)
    : width_(width), height_(height), pair_id_(std::move(pair_id)), samples_(std::move(samples)) {
  if (width_ < 0 || height_ < 0) throw FormatError("negative map dimensions");
  std::sort(samples_.begin(), samples_.end(), [](const GroundTruthSample& a, const GroundTruthSample& b) {
    return a.row != b.row ? a.row < b.row : a.col < b.col;
  });
  for (std::size_t i = 0; i < samples_.size(); ++i) {
    const GroundTruthSample& s = samples_[i];
    if (s.col < 0 || s.row < 0 || s.col >= width_ || s.row >= height_) throw FormatError("sample outside the map");
    if (!std::isfinite(s.disparity)) throw FormatError("non-finite disparity");
    if (i > 0 && samples_[i - 1].col == s.col && samples_[i - 1].row == s.row)
      throw FormatError("two samples share pixel (" + std::to_string(s.col) + ", " + std::to_string(s.row) + ")");
  }
}

const GroundTruthSample* SparseDisparityMap::find(int col, int row) const {
  const auto it = std::lower_bound(samples_.begin(), samples_.end(), std::make_pair(row, col),
                                   [](const GroundTruthSample& s, const std::pair<int, int>& key) {
                                     return s.row != key.first ? s.row < key.first : s.col < key.second;
                                   });
  if (it == samples_.end() || it->row != row || it->col != col) return nullptr;
  return &*it;
}

std::size_t SparseDisparityMap::count(Visibility v) const {
  return static_cast<std::size_t>(
      std::count_if(samples_.begin(), samples_.end(), [v](const GroundTruthSample& s) { return s.visibility == v; }));
}

namespace {

struct Candidate {
  bool valid = false;
  GroundTruthSample sample;
  double depth = 0.0;
};

int pixel_of(double v) { return static_cast<int>(std::floor(v + 0.5)); }

}  // namespace

SparseDisparityMap generate_gt(const PointCloud& cloud, const RayIndex& index, const EpipolarGeometry& geom,
                               const GtGenOptions& options, const std::string& pair_id) {
  if (index.vertex_count() != cloud.size())
    throw MeshCloudMismatch("mesh has " + std::to_string(index.vertex_count()) + " vertices, cloud has " +
                            std::to_string(cloud.size()) + " points");
  const int width = geom.left.width();
  const int height = geom.left.height();

  std::vector<Candidate> candidates(cloud.size());
  parallel_for(cloud.size(), options.workers, [&](std::size_t begin, std::size_t end) {
    for (std::size_t i = begin; i < end; ++i) {
      const Vec3& p = cloud[i].position;
      const Vec3 cl = geom.left.to_camera(p);
      const Vec3 cr = geom.right.to_camera(p);
      if (!(cl.z() > 0.0) || !(cr.z() > 0.0)) continue;
      const RectifiedProjection proj = project_rectified(p, geom);
      const int col = pixel_of(proj.left.x());
      const int row = pixel_of(proj.left.y());
      const int col_r = pixel_of(proj.right.x());
      const int row_r = pixel_of(proj.right.y());
      if (col < 0 || row < 0 || col >= width || row >= height) continue;
      if (col_r < 0 || row_r < 0 || col_r >= geom.right.width() || row_r >= geom.right.height()) continue;
      if (ray_occluded(p, geom.left.center(), index, options.epsilon)) continue;
      const bool right_hidden = ray_occluded(p, geom.right.center(), index, options.epsilon);

      Candidate& c = candidates[i];
      c.valid = true;
      c.depth = proj.depth;
      c.sample = GroundTruthSample{col,
                                   row,
                                   proj.left.x(),
                                   proj.right.x(),
                                   proj.disparity(),
                                   right_hidden ? Visibility::kOccludedRight : Visibility::kSeen,
                                   static_cast<std::int64_t>(i)};
    }
  });

  // nearest point wins each pixel; lowest point index breaks exact depth ties
  std::vector<std::int64_t> owner(static_cast<std::size_t>(width) * static_cast<std::size_t>(height), -1);
  for (std::size_t i = 0; i < candidates.size(); ++i) {
    const Candidate& c = candidates[i];
    if (!c.valid) continue;
    auto& slot = owner[static_cast<std::size_t>(c.sample.row) * static_cast<std::size_t>(width) +
                       static_cast<std::size_t>(c.sample.col)];
    if (slot < 0 || c.depth < candidates[static_cast<std::size_t>(slot)].depth) slot = static_cast<std::int64_t>(i);
  }
  std::vector<GroundTruthSample> samples;
  for (const std::int64_t o : owner)
    if (o >= 0) samples.push_back(candidates[static_cast<std::size_t>(o)].sample);
  return SparseDisparityMap(width, height, pair_id, std::move(samples));
}

void AlphaFilterConfig::validate() const {
  if (window_radius < 1) throw InvalidParams("alpha filter window radius must be >= 1");
  if (!(alpha_threshold > 0.0 && alpha_threshold < 1.0)) throw InvalidParams("alpha threshold must lie in (0, 1)");
  if (min_window_samples < 1) throw InvalidParams("min_window_samples must be >= 1");
}

SparseDisparityMap alpha_filter(const SparseDisparityMap& map, const AlphaFilterConfig& cfg) {
  cfg.validate();
  const int w = map.width();
  const int h = map.height();
  std::vector<std::int32_t> grid(static_cast<std::size_t>(w) * static_cast<std::size_t>(h), -1);
  const auto& samples = map.samples();
  for (std::size_t i = 0; i < samples.size(); ++i)
    grid[static_cast<std::size_t>(samples[i].row) * static_cast<std::size_t>(w) + static_cast<std::size_t>(samples[i].col)] =
        static_cast<std::int32_t>(i);

  std::vector<GroundTruthSample> kept;
  kept.reserve(samples.size());
  std::vector<double> window;
  const int r = cfg.window_radius;
  for (const GroundTruthSample& s : samples) {
    window.clear();
    for (int y = std::max(0, s.row - r); y <= std::min(h - 1, s.row + r); ++y)
      for (int x = std::max(0, s.col - r); x <= std::min(w - 1, s.col + r); ++x) {
        const std::int32_t k = grid[static_cast<std::size_t>(y) * static_cast<std::size_t>(w) + static_cast<std::size_t>(x)];
        if (k >= 0) window.push_back(samples[static_cast<std::size_t>(k)].disparity);
      }
    if (static_cast<int>(window.size()) < cfg.min_window_samples) {
      kept.push_back(s);
      continue;
    }
    const auto [lo, hi] = std::minmax_element(window.begin(), window.end());
    const double d_min = *lo;
    const double d_max = *hi;
    if (d_max == d_min) {
      kept.push_back(s);
      continue;
    }
    const double alpha = (s.disparity - d_min) / (d_max - d_min);
    std::sort(window.begin(), window.end());
    const std::size_t n = window.size();
    const double median = n % 2 == 1 ? window[n / 2] : 0.5 * (window[n / 2 - 1] + window[n / 2]);
    bool remove;
    if (cfg.direction == AlphaDirection::kRemoveDeeper)
      remove = alpha < cfg.alpha_threshold && s.disparity < median;
    else
      remove = alpha > 1.0 - cfg.alpha_threshold && s.disparity > median;
    if (!remove) kept.push_back(s);
  }
  return SparseDisparityMap(w, h, map.pair_id(), std::move(kept));
}

namespace {

std::string format_double(double v) {
  char buf[40];
  std::snprintf(buf, sizeof(buf), "%.17g", v);
  return buf;
}

}  // namespace

void write_gt(const std::filesystem::path& path, const SparseDisparityMap& map) {
  std::ofstream out(path);
  if (!out) throw IoError("cannot write " + path.string());
  out << "# gtforge sparse disparity v1\n"
      << "pair_id " << (map.pair_id().empty() ? "-" : map.pair_id()) << '\n'
      << "width " << map.width() << '\n'
      << "height " << map.height() << '\n'
      << "count " << map.size() << '\n'
      << "# col row x_l x_r d vis src\n";
  for (const GroundTruthSample& s : map.samples()) {
    out << s.col << ' ' << s.row << ' ' << format_double(s.x_left) << ' ' << format_double(s.x_right) << ' '
        << format_double(s.disparity) << ' ' << to_string(s.visibility) << ' ' << s.source_point << '\n';
  }
  if (!out) throw IoError("write failed for " + path.string());
}

SparseDisparityMap read_gt(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw IoError("cannot open " + path.string());
  std::string line;
  std::string pair_id;
  int width = -1;
  int height = -1;
  long long count = -1;

  auto next_line = [&](std::string& l) {
    while (std::getline(in, l)) {
      if (!l.empty() && l.back() == '\r') l.pop_back();
      if (l.empty() || l[0] == '#') continue;
      return true;
    }
    return false;
  };
  auto header_value = [&](const char* key) {
    if (!next_line(line)) throw FormatError(path.string() + ": missing header key " + key);
    std::istringstream ls(line);
    std::string k, v;
    if (!(ls >> k >> v) || k != key) throw FormatError(path.string() + ": expected header key " + key);
    return v;
  };
  try {
    pair_id = header_value("pair_id");
    if (pair_id == "-") pair_id.clear();
    width = std::stoi(header_value("width"));
    height = std::stoi(header_value("height"));
    count = std::stoll(header_value("count"));
  } catch (const std::logic_error&) {
    throw FormatError(path.string() + ": malformed header value");
  }
  if (count < 0) throw FormatError(path.string() + ": negative sample count");

  std::vector<GroundTruthSample> samples;
  samples.reserve(static_cast<std::size_t>(count));
  for (long long i = 0; i < count; ++i) {
    if (!next_line(line)) throw FormatError(path.string() + ": expected " + std::to_string(count) + " samples");
    std::istringstream ls(line);
    GroundTruthSample s;
    std::string xl, xr, d, vis;
    if (!(ls >> s.col >> s.row >> xl >> xr >> d >> vis)) throw FormatError(path.string() + ": malformed sample line");
    try {
      s.x_left = std::stod(xl);
      s.x_right = std::stod(xr);
      s.disparity = std::stod(d);
    } catch (const std::logic_error&) {
      throw FormatError(path.string() + ": malformed number in sample line");
    }
    s.visibility = visibility_from_string(vis);
    if (!(ls >> s.source_point)) s.source_point = -1;
    samples.push_back(s);
  }
  if (next_line(line)) throw FormatError(path.string() + ": trailing data after samples");
  return SparseDisparityMap(width, height, pair_id, std::move(samples));
}

ImageF to_dense(const SparseDisparityMap& map, bool include_occluded) {
  ImageF dense(map.width(), map.height(), std::numeric_limits<float>::infinity());
  for (const GroundTruthSample& s : map.samples()) {
    if (s.visibility == Visibility::kOccludedRight && !include_occluded) continue;
    dense(s.col, s.row) = static_cast<float>(s.disparity);
  }
  return dense;
}

void write_gt_pfm(const std::filesystem::path& path, const SparseDisparityMap& map, bool include_occluded) {
  write_pfm(path, to_dense(map, include_occluded));
}

void write_gt_png16(const std::filesystem::path& path, const SparseDisparityMap& map, bool include_occluded) {
  Image<std::uint16_t> png(map.width(), map.height(), 0);
  for (const GroundTruthSample& s : map.samples()) {
    if (s.visibility == Visibility::kOccludedRight && !include_occluded) continue;
    const double scaled = std::round(s.disparity * 256.0);
    if (scaled >= 1.0 && scaled <= 65535.0) png(s.col, s.row) = static_cast<std::uint16_t>(scaled);
  }
  write_png16(path, png);
}

}  // namespace gtforge
