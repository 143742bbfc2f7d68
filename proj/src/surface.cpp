#include "gtforge/surface.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <iomanip>
#include <limits>
#include <numeric>

#include "gtforge/predicates.hpp"

namespace gtforge {

namespace {

constexpr std::uint32_t kInf = std::numeric_limits<std::uint32_t>::max();
constexpr std::uint32_t kNone = std::numeric_limits<std::uint32_t>::max();

// Hilbert index of (x, y) on a 2^16 x 2^16 grid.
std::uint64_t hilbert_index(std::uint32_t x, std::uint32_t y) {
  std::uint64_t d = 0;
  for (std::uint32_t s = 1u << 15; s > 0; s >>= 1) {
    const std::uint32_t rx = (x & s) ? 1u : 0u;
    const std::uint32_t ry = (y & s) ? 1u : 0u;
    d += static_cast<std::uint64_t>(s) * s * ((3u * rx) ^ ry);
    if (ry == 0) {
      if (rx == 1) {
        x = 65535u - x;
        y = 65535u - y;
      }
      std::swap(x, y);
    }
  }
  return d;
}

// Triangulation with an explicit vertex at infinity ("ghost" triangles close
// the convex hull). Finite triangles are counter-clockwise; triangle slot n[i]
// is the neighbor across the edge opposite v[i].
class Delaunay {
 public:
  explicit Delaunay(const std::vector<Vec3>& pts) : pts_(pts) {}

  void run(const std::vector<std::uint32_t>& order);

  std::vector<Triangle> finite_triangles() const {
    std::vector<Triangle> out;
    for (std::size_t t = 0; t < tris_.size(); ++t) {
      if (!alive_[t]) continue;
      const auto& v = tris_[t].v;
      if (v[0] == kInf || v[1] == kInf || v[2] == kInf) continue;
      out.push_back({v[0], v[1], v[2]});
    }
    return out;
  }

 private:
  struct Tri {
    std::array<std::uint32_t, 3> v;
    std::array<std::uint32_t, 3> n;
  };

  const double* xy(std::uint32_t i) const { return pts_[i].data(); }

  bool is_ghost(std::uint32_t t) const {
    const auto& v = tris_[t].v;
    return v[0] == kInf || v[1] == kInf || v[2] == kInf;
  }

  std::uint32_t alloc(const Tri& tri) {
    if (!free_.empty()) {
      const std::uint32_t t = free_.back();
      free_.pop_back();
      tris_[t] = tri;
      alive_[t] = 1;
      stamp_[t] = 0;
      return t;
    }
    tris_.push_back(tri);
    alive_.push_back(1);
    stamp_.push_back(0);
    return static_cast<std::uint32_t>(tris_.size() - 1);
  }

  bool in_conflict(std::uint32_t t, std::uint32_t p) const {
    const auto& v = tris_[t].v;
    int k = -1;
    for (int i = 0; i < 3; ++i)
      if (v[static_cast<std::size_t>(i)] == kInf) k = i;
    if (k < 0) return predicates::incircle(xy(v[0]), xy(v[1]), xy(v[2]), xy(p)) > 0;
    // ghost (u, w, inf): the outside of hull edge u->w lies on its left
    const std::uint32_t u = v[static_cast<std::size_t>((k + 1) % 3)];
    const std::uint32_t w = v[static_cast<std::size_t>((k + 2) % 3)];
    const int o = predicates::orient2d(xy(u), xy(w), xy(p));
    if (o > 0) return true;
    if (o < 0) return false;
    const Vec3& a = pts_[u];
    const Vec3& b = pts_[w];
    const Vec3& q = pts_[p];
    const double t1 = (q.x() - a.x()) * (b.x() - a.x()) + (q.y() - a.y()) * (b.y() - a.y());
    const double t2 = (q.x() - b.x()) * (a.x() - b.x()) + (q.y() - b.y()) * (a.y() - b.y());
    return t1 > 0.0 && t2 > 0.0;
  }

  std::uint32_t locate(std::uint32_t p, std::uint32_t start);
  void insert(std::uint32_t p);

  const std::vector<Vec3>& pts_;
  std::vector<Tri> tris_;
  std::vector<std::uint8_t> alive_;
  std::vector<std::uint32_t> stamp_;
  std::vector<std::uint32_t> free_;
  std::uint32_t hint_ = 0;
  std::uint32_t round_ = 0;
  std::uint32_t rng_ = 0x2545F491u;

  // scratch
  std::vector<std::uint32_t> stack_;
  std::vector<std::uint32_t> cavity_;
  struct BoundaryEdge {
    std::uint32_t a, b, outside;
  };
  std::vector<BoundaryEdge> boundary_;
  std::vector<std::pair<std::uint32_t, std::uint32_t>> by_first_;
  std::vector<std::pair<std::uint32_t, std::uint32_t>> by_second_;
};

std::uint32_t Delaunay::locate(std::uint32_t p, std::uint32_t start) {
  std::uint32_t t = start;
  if (is_ghost(t)) {
    const auto& v = tris_[t].v;
    for (std::size_t i = 0; i < 3; ++i)
      if (v[i] == kInf) t = tris_[t].n[i];
  }
  for (;;) {
    rng_ = rng_ * 1664525u + 1013904223u;
    const std::uint32_t r = (rng_ >> 16) % 3u;
    bool moved = false;
    for (std::uint32_t k = 0; k < 3; ++k) {
      const std::size_t i = (r + k) % 3;
      const auto& v = tris_[t].v;
      if (predicates::orient2d(xy(v[(i + 1) % 3]), xy(v[(i + 2) % 3]), xy(p)) < 0) {
        t = tris_[t].n[i];
        if (is_ghost(t)) return t;
        moved = true;
        break;
      }
    }
    if (!moved) return t;
  }
}

void Delaunay::insert(std::uint32_t p) {
  ++round_;
  const std::uint32_t start = locate(p, hint_);

  stack_.clear();
  cavity_.clear();
  boundary_.clear();
  stack_.push_back(start);
  stamp_[start] = round_;
  while (!stack_.empty()) {
    const std::uint32_t t = stack_.back();
    stack_.pop_back();
    cavity_.push_back(t);
    for (std::size_t i = 0; i < 3; ++i) {
      const std::uint32_t nb = tris_[t].n[i];
      if (stamp_[nb] == round_) continue;
      if (in_conflict(nb, p)) {
        stamp_[nb] = round_;
        stack_.push_back(nb);
      } else {
        boundary_.push_back({tris_[t].v[(i + 1) % 3], tris_[t].v[(i + 2) % 3], nb});
      }
    }
  }

  for (const std::uint32_t t : cavity_) {
    alive_[t] = 0;
    free_.push_back(t);
  }

  by_first_.clear();
  by_second_.clear();
  std::uint32_t finite_new = kNone;
  for (const BoundaryEdge& e : boundary_) {
    const std::uint32_t t = alloc(Tri{{e.a, e.b, p}, {kNone, kNone, e.outside}});
    // point the outside triangle back at the new one
    auto& out = tris_[e.outside];
    for (std::size_t k = 0; k < 3; ++k) {
      if (out.v[k] != e.a && out.v[k] != e.b) {
        out.n[k] = t;
        break;
      }
    }
    by_first_.emplace_back(e.a, t);
    by_second_.emplace_back(e.b, t);
    if (e.a != kInf && e.b != kInf) finite_new = t;
  }
  std::sort(by_first_.begin(), by_first_.end());
  std::sort(by_second_.begin(), by_second_.end());
  auto lookup = [](const std::vector<std::pair<std::uint32_t, std::uint32_t>>& m, std::uint32_t key) {
    const auto it = std::lower_bound(m.begin(), m.end(), std::make_pair(key, std::uint32_t{0}));
    return it->second;
  };
  for (const auto& [first, t] : by_first_) {
    auto& tri = tris_[t];
    tri.n[0] = lookup(by_first_, tri.v[1]);   // edge (b, p) is shared with the triangle starting at b
    tri.n[1] = lookup(by_second_, tri.v[0]);  // edge (p, a) is shared with the triangle ending at a
  }
  hint_ = finite_new != kNone ? finite_new : by_first_.front().second;
}

void Delaunay::run(const std::vector<std::uint32_t>& order) {
  if (order.size() < 3) throw DegenerateInput("triangulation needs at least 3 distinct sites");
  const std::uint32_t a = order[0];
  const std::uint32_t b = order[1];
  std::size_t c_pos = 0;
  int o = 0;
  for (std::size_t i = 2; i < order.size(); ++i) {
    o = predicates::orient2d(xy(a), xy(b), xy(order[i]));
    if (o != 0) {
      c_pos = i;
      break;
    }
  }
  if (o == 0) throw DegenerateInput("all sites are collinear");
  std::uint32_t c = order[c_pos];
  std::uint32_t b2 = b;
  if (o < 0) std::swap(b2, c);

  // seed triangle (a, b2, c) plus three ghosts, neighbors wired by shared edges
  tris_ = {Tri{{a, b2, c}, {}}, Tri{{b2, a, kInf}, {}}, Tri{{c, b2, kInf}, {}}, Tri{{a, c, kInf}, {}}};
  alive_.assign(4, 1);
  stamp_.assign(4, 0);
  for (std::size_t t = 0; t < 4; ++t) {
    for (std::size_t i = 0; i < 3; ++i) {
      const std::uint32_t e0 = tris_[t].v[(i + 1) % 3];
      const std::uint32_t e1 = tris_[t].v[(i + 2) % 3];
      for (std::size_t s = 0; s < 4; ++s) {
        if (s == t) continue;
        for (std::size_t j = 0; j < 3; ++j) {
          if (tris_[s].v[(j + 1) % 3] == e1 && tris_[s].v[(j + 2) % 3] == e0) tris_[t].n[i] = static_cast<std::uint32_t>(s);
        }
      }
    }
  }
  hint_ = 0;

  for (std::size_t i = 2; i < order.size(); ++i) {
    if (i == c_pos) continue;
    insert(order[i]);
  }
}

}  // namespace

SurfaceMesh triangulate_xy(std::vector<Vec3> vertices) {
  const std::size_t n = vertices.size();
  for (const Vec3& v : vertices)
    if (!v.allFinite()) throw DegenerateInput("non-finite vertex");

  // one site per distinct (x, y): the highest z wins, lowest index on ties
  std::vector<std::uint32_t> idx(n);
  std::iota(idx.begin(), idx.end(), 0u);
  std::sort(idx.begin(), idx.end(), [&](std::uint32_t i, std::uint32_t j) {
    const Vec3& p = vertices[i];
    const Vec3& q = vertices[j];
    if (p.x() != q.x()) return p.x() < q.x();
    if (p.y() != q.y()) return p.y() < q.y();
    if (p.z() != q.z()) return p.z() > q.z();
    return i < j;
  });
  std::vector<std::uint32_t> sites;
  sites.reserve(n);
  for (std::size_t k = 0; k < n; ++k) {
    if (k > 0 && vertices[idx[k]].x() == vertices[idx[k - 1]].x() && vertices[idx[k]].y() == vertices[idx[k - 1]].y())
      continue;
    sites.push_back(idx[k]);
  }
  if (sites.size() < 3) throw DegenerateInput("triangulation needs at least 3 distinct sites");

  // spatially coherent insertion order
  double minx = std::numeric_limits<double>::infinity(), miny = minx;
  double maxx = -minx, maxy = -minx;
  for (const std::uint32_t s : sites) {
    minx = std::min(minx, vertices[s].x());
    maxx = std::max(maxx, vertices[s].x());
    miny = std::min(miny, vertices[s].y());
    maxy = std::max(maxy, vertices[s].y());
  }
  const double span = std::max({maxx - minx, maxy - miny, 1e-300});
  std::vector<std::pair<std::uint64_t, std::uint32_t>> keyed;
  keyed.reserve(sites.size());
  for (const std::uint32_t s : sites) {
    const auto gx = static_cast<std::uint32_t>(std::min(65535.0, (vertices[s].x() - minx) / span * 65535.0));
    const auto gy = static_cast<std::uint32_t>(std::min(65535.0, (vertices[s].y() - miny) / span * 65535.0));
    keyed.emplace_back(hilbert_index(gx, gy), s);
  }
  std::sort(keyed.begin(), keyed.end());
  std::vector<std::uint32_t> order;
  order.reserve(keyed.size());
  for (const auto& k : keyed) order.push_back(k.second);

  Delaunay dt(vertices);
  dt.run(order);

  SurfaceMesh mesh;
  mesh.triangles = dt.finite_triangles();
  mesh.z_span.reserve(mesh.triangles.size());
  for (const Triangle& t : mesh.triangles) {
    const double z0 = vertices[t[0]].z(), z1 = vertices[t[1]].z(), z2 = vertices[t[2]].z();
    mesh.z_span.push_back(std::max({z0, z1, z2}) - std::min({z0, z1, z2}));
  }
  mesh.vertices = std::move(vertices);
  return mesh;
}

SurfaceMesh triangulate_xy(const PointCloud& cloud) {
  std::vector<Vec3> v;
  v.reserve(cloud.size());
  for (const LidarPoint& p : cloud.points()) v.push_back(p.position);
  return triangulate_xy(std::move(v));
}

SurfaceMesh filter_steep_triangles(const SurfaceMesh& mesh, double dz_max) {
  SurfaceMesh out;
  out.vertices = mesh.vertices;
  for (std::size_t i = 0; i < mesh.triangles.size(); ++i) {
    if (mesh.z_span[i] > dz_max) continue;
    out.triangles.push_back(mesh.triangles[i]);
    out.z_span.push_back(mesh.z_span[i]);
  }
  return out;
}

void write_mesh_ply(const std::filesystem::path& path, const SurfaceMesh& mesh) {
  std::ofstream out(path);
  if (!out) throw IoError("cannot write " + path.string());
  out << "ply\nformat ascii 1.0\nelement vertex " << mesh.vertices.size()
      << "\nproperty double x\nproperty double y\nproperty double z\nelement face " << mesh.triangles.size()
      << "\nproperty list uchar int vertex_indices\nend_header\n"
      << std::setprecision(17);
  for (const Vec3& v : mesh.vertices) out << v.x() << ' ' << v.y() << ' ' << v.z() << '\n';
  for (const Triangle& t : mesh.triangles) out << "3 " << t[0] << ' ' << t[1] << ' ' << t[2] << '\n';
}

bool segment_hits_triangle(const Vec3& origin, const Vec3& delta, const Vec3& v0, const Vec3& v1, const Vec3& v2) {
  const Vec3 e1 = v1 - v0;
  const Vec3 e2 = v2 - v0;
  const Vec3 pvec = delta.cross(e2);
  const double det = e1.dot(pvec);
  if (det == 0.0) return false;
  const double inv = 1.0 / det;
  const Vec3 tvec = origin - v0;
  const double u = tvec.dot(pvec) * inv;
  if (u < 0.0 || u > 1.0) return false;
  const Vec3 qvec = tvec.cross(e1);
  const double v = delta.dot(qvec) * inv;
  if (v < 0.0 || u + v > 1.0) return false;
  const double t = e2.dot(qvec) * inv;
  return t > 0.0 && t < 1.0;
}

RayIndex::RayIndex(const SurfaceMesh& mesh) : vertex_count_(mesh.vertices.size()) {
  tris_.reserve(mesh.triangles.size());
  std::vector<Vec3> centroids;
  centroids.reserve(mesh.triangles.size());
  for (std::size_t i = 0; i < mesh.triangles.size(); ++i) {
    const Triangle& t = mesh.triangles[i];
    tris_.push_back({mesh.vertices[t[0]], mesh.vertices[t[1]], mesh.vertices[t[2]], static_cast<std::uint32_t>(i)});
    centroids.push_back((tris_.back().v0 + tris_.back().v1 + tris_.back().v2) / 3.0);
  }
  if (!tris_.empty()) {
    nodes_.reserve(2 * tris_.size() / kLeafSize + 2);
    build(0, static_cast<std::uint32_t>(tris_.size()), centroids);
  }
}

std::uint32_t RayIndex::build(std::uint32_t begin, std::uint32_t end, std::vector<Vec3>& centroids) {
  const auto node_id = static_cast<std::uint32_t>(nodes_.size());
  nodes_.emplace_back();
  Eigen::AlignedBox3d box;
  Eigen::AlignedBox3d cbox;
  for (std::uint32_t i = begin; i < end; ++i) {
    box.extend(tris_[i].v0);
    box.extend(tris_[i].v1);
    box.extend(tris_[i].v2);
    cbox.extend(centroids[i]);
  }
  nodes_[node_id].box = box;
  if (end - begin <= kLeafSize) {
    nodes_[node_id].first = begin;
    nodes_[node_id].count = end - begin;
    return node_id;
  }

  int axis = 0;
  cbox.sizes().maxCoeff(&axis);
  const std::uint32_t mid = begin + (end - begin) / 2;
  // sort a permutation so triangles and centroids move together
  std::vector<std::uint32_t> perm(end - begin);
  std::iota(perm.begin(), perm.end(), begin);
  std::nth_element(perm.begin(), perm.begin() + (mid - begin), perm.end(), [&](std::uint32_t a, std::uint32_t b) {
    const double ca = centroids[a][axis];
    const double cb = centroids[b][axis];
    if (ca != cb) return ca < cb;
    return tris_[a].id < tris_[b].id;
  });
  std::vector<Tri> tmp_t;
  std::vector<Vec3> tmp_c;
  tmp_t.reserve(perm.size());
  tmp_c.reserve(perm.size());
  for (const std::uint32_t p : perm) {
    tmp_t.push_back(tris_[p]);
    tmp_c.push_back(centroids[p]);
  }
  std::copy(tmp_t.begin(), tmp_t.end(), tris_.begin() + begin);
  std::copy(tmp_c.begin(), tmp_c.end(), centroids.begin() + begin);

  const std::uint32_t left = build(begin, mid, centroids);
  const std::uint32_t right = build(mid, end, centroids);
  nodes_[node_id].first = left;
  nodes_[node_id].right = right;
  nodes_[node_id].count = 0;
  return node_id;
}

namespace {

// Conservative slab test of segment origin + t * delta, t in [0, 1].
bool segment_overlaps_box(const Vec3& origin, const Vec3& delta, const Eigen::AlignedBox3d& box) {
  double t0 = 0.0;
  double t1 = 1.0;
  for (int a = 0; a < 3; ++a) {
    const double pad = 1e-9 * (1.0 + std::abs(box.min()[a]) + std::abs(box.max()[a]));
    const double lo = box.min()[a] - pad;
    const double hi = box.max()[a] + pad;
    if (delta[a] == 0.0) {
      if (origin[a] < lo || origin[a] > hi) return false;
      continue;
    }
    const double inv = 1.0 / delta[a];
    double ta = (lo - origin[a]) * inv;
    double tb = (hi - origin[a]) * inv;
    if (ta > tb) std::swap(ta, tb);
    t0 = std::max(t0, ta);
    t1 = std::min(t1, tb);
    if (t0 > t1) return false;
  }
  return true;
}

}  // namespace

template <typename Visit>
void RayIndex::traverse(const Vec3& origin, const Vec3& delta, Visit&& visit) const {
  if (nodes_.empty()) return;
  std::uint32_t stack[128];
  int top = 0;
  stack[top++] = 0;
  while (top > 0) {
    const Node& node = nodes_[stack[--top]];
    if (!segment_overlaps_box(origin, delta, node.box)) continue;
    if (node.count > 0) {
      for (std::uint32_t i = node.first; i < node.first + node.count; ++i) {
        const Tri& t = tris_[i];
        if (segment_hits_triangle(origin, delta, t.v0, t.v1, t.v2)) {
          if (!visit(t.id)) return;
        }
      }
    } else {
      stack[top++] = node.right;
      stack[top++] = node.first;
    }
  }
}

bool RayIndex::any_hit(const Vec3& origin, const Vec3& delta) const {
  bool hit = false;
  traverse(origin, delta, [&](std::uint32_t) {
    hit = true;
    return false;
  });
  return hit;
}

std::vector<std::uint32_t> RayIndex::all_hits(const Vec3& origin, const Vec3& delta) const {
  std::vector<std::uint32_t> hits;
  traverse(origin, delta, [&](std::uint32_t id) {
    hits.push_back(id);
    return true;
  });
  std::sort(hits.begin(), hits.end());
  return hits;
}

std::size_t RayIndex::leaf_count() const {
  return static_cast<std::size_t>(std::count_if(nodes_.begin(), nodes_.end(), [](const Node& n) { return n.count > 0; }));
}

bool RayIndex::validate() const {
  if (nodes_.empty()) return tris_.empty();
  std::vector<int> seen(tris_.size(), 0);
  for (const Node& n : nodes_) {
    if (n.count > 0) {
      for (std::uint32_t i = n.first; i < n.first + n.count; ++i) {
        ++seen[i];
        if (!n.box.contains(tris_[i].v0) || !n.box.contains(tris_[i].v1) || !n.box.contains(tris_[i].v2)) return false;
      }
    } else {
      if (!n.box.contains(nodes_[n.first].box) || !n.box.contains(nodes_[n.right].box)) return false;
    }
  }
  return std::all_of(seen.begin(), seen.end(), [](int s) { return s == 1; });
}

RayIndex build_ray_index(const SurfaceMesh& mesh) { return RayIndex(mesh); }

bool ray_occluded(const Vec3& point, const Vec3& optical_center, const RayIndex& index, double epsilon) {
  const Vec3 to_center = optical_center - point;
  const double length = to_center.norm();
  if (!(length > epsilon)) return false;
  const Vec3 dir = to_center / length;
  const Vec3 start = point + epsilon * dir;
  return index.any_hit(start, optical_center - start);
}

}  // namespace gtforge
