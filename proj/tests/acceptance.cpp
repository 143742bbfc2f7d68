#include <chrono>
#include <cstdio>
#include <cstring>
#include <functional>
#include <iostream>
#include <sstream>

#include "gtforge/errors.hpp"
#include "gtforge/evalkit.hpp"
#include "gtforge/geometry.hpp"
#include "gtforge/gtgen.hpp"
#include "gtforge/matcher.hpp"
#include "gtforge/pipeline.hpp"
#include "gtforge/pointcloud.hpp"
#include "gtforge/raster.hpp"
#include "gtforge/registration.hpp"
#include "gtforge/surface.hpp"
#include "gtforge/synth.hpp"
#include "metric_oracle.hpp"
#include "pipeline_util.hpp"
#include "sgm_oracle.hpp"
#include "test_util.hpp"
#include "zbuffer.hpp"

using namespace gtforge;
using namespace testutil;

namespace {

struct Outcome {
  bool pass = true;
  std::ostringstream detail;

  void require(bool ok, const std::string& what) {
    if (!ok) {
      pass = false;
      detail << " [failed: " << what << "]";
    }
  }
};

using Clock = std::chrono::steady_clock;

double seconds_since(Clock::time_point t0) {
  return std::chrono::duration<double>(Clock::now() - t0).count();
}

ImageF random_texture(std::mt19937_64& rng, int w, int h) {
  ImageF img(w, h);
  for (float& v : img.data()) v = static_cast<float>(rng() % 256);
  return img;
}

void epipolar(Outcome& o) {
  const auto t0 = Clock::now();
  std::mt19937_64 rng(101);
  double worst_row = 0.0, worst_disp = 0.0;
  for (int pair = 0; pair < 50; ++pair) {
    const Vec3 cl(uniform(rng, -50, 50), uniform(rng, -50, 50), uniform(rng, 900, 1100));
    const Vec3 cr = cl + Vec3(uniform(rng, 100, 400), uniform(rng, -50, 50), uniform(rng, -20, 20));
    const EpipolarGeometry g = rectify_pair(random_camera(rng, cl), random_camera(rng, cr));
    for (int k = 0; k < 200; ++k) {
      const Vec3 p(uniform(rng, -200, 400), uniform(rng, -200, 200), uniform(rng, 0, 100));
      const RectifiedProjection rp = project_rectified(p, g);
      worst_row = std::max(worst_row, std::abs(rp.left.y() - rp.right.y()));
      worst_disp = std::max(worst_disp, std::abs(rp.disparity() - g.baseline * g.focal() / rp.depth));
    }
  }
  const double t = seconds_since(t0);
  o.detail << "10000 points, 50 pairs: max |yl-yr| " << worst_row << " px, max |d-bf/z| " << worst_disp << " px, " << t
           << " s";
  o.require(worst_row < 1e-6, "row alignment");
  o.require(worst_disp < 1e-6, "disparity");
  o.require(t < 5.0, "runtime");
}

void occlusion(Outcome& o) {
  const fs::path dir = temp_dir("acceptance_occlusion");
  spit(dir / "recipe.json",
       R"({"seed": 2, "synth": {"extent": [-30, -50, 70, 50],
       "boxes": [{"min": [5, -8], "max": [15, 8], "height": 10}], "lidar": {"spacing": 0.1, "jitter": 0.25},
       "cameras": {"count": 2, "focal": 500, "width": 300, "height": 300, "altitude": 100, "spacing": 20,
       "start": [0, 0]}, "tiepoints": 50}})");
  PipelineConfig recipe = load_config(dir / "recipe.json");
  recipe.output = dir / "ds";
  cmd_synth(recipe, {});
  const PipelineConfig cfg = load_config(dir / "ds" / "config.json");

  const auto t0 = Clock::now();
  o.require(cmd_pairs(cfg, {}) == 0, "pairs");
  o.require(cmd_gen_gt(cfg, {}) == 0, "gen-gt");
  const double t = seconds_since(t0);

  const PointCloud raw = load_cloud(cfg.cloud);
  const PointCloud cloud = remove_isolated(keep_first_echo(raw), cfg.isolation_radius);
  const SurfaceMesh mesh = filter_steep_triangles(triangulate_xy(cloud), cfg.dz_max);
  const PairManifest manifest = read_manifest(manifest_path(cfg, {}));
  std::size_t agree = 0, total = 0, off_edge = 0, occluded = 0;
  for (const PairEntry& p : manifest.pairs()) {
    const EpipolarGeometry g = rectify_pair(read_pose(cfg.output / "poses" / (p.left + ".json")),
                                            read_pose(cfg.output / "poses" / (p.right + ".json")));
    const ImageF zl = zbuffer(mesh, g.left);
    const ImageF zr = zbuffer(mesh, g.right);
    for (const GroundTruthSample& s : read_gt(gt_path(cfg, p.pair_id)).samples()) {
      const Vec3& x = cloud[static_cast<std::size_t>(s.source_point)].position;
      const bool ok = zbuffer_visible(zl, g.left, x, 0.5) &&
                      zbuffer_visible(zr, g.right, x, 0.5) == (s.visibility == Visibility::kSeen);
      ++total;
      agree += ok;
      occluded += s.visibility != Visibility::kSeen;
      if (!ok && !near_depth_edge(zl, g.left, x, 1.0) && !near_depth_edge(zr, g.right, x, 1.0)) ++off_edge;
    }
  }
  const double rate = total ? static_cast<double>(agree) / static_cast<double>(total) : 0.0;
  o.detail << raw.size() << " points, " << total << " samples (" << occluded << " occluded): agreement " << 100.0 * rate
           << " %, " << off_edge << " disagreements away from depth edges, pairs+gen-gt " << t << " s";
  o.require(raw.size() >= 1000000, "cloud size");
  o.require(manifest.pairs().size() == 1, "pair count");
  o.require(rate >= 0.99, "agreement");
  o.require(off_edge == 0, "disagreements off edges");
  o.require(occluded > 100, "occlusion present");
  o.require(t < 30.0, "runtime");
}

PairEvaluation graded(std::size_t wrong, std::size_t n = 1000) {
  std::vector<GroundTruthSample> s;
  for (std::size_t i = 0; i < n; ++i) {
    GroundTruthSample g;
    g.col = static_cast<int>(i % 100);
    g.row = static_cast<int>(i / 100);
    g.disparity = 20.0;
    g.x_left = g.col;
    g.x_right = g.col - 20.0;
    s.push_back(g);
  }
  const SparseDisparityMap gt(100, static_cast<int>(n / 100), "p", s);
  ImageF pred(100, static_cast<int>(n / 100), 20.0f);
  for (std::size_t i = 0; i < wrong; ++i) pred(static_cast<int>(i % 100), static_cast<int>(i / 100)) = 25.0f;
  MetricSpec spec;
  spec.thresholds = {1};
  return evaluate_pair(pred, gt, spec, Split::kAll);
}

void thresholds(Outcome& o) {
  auto steep_kept = [](double dz) {
    return filter_steep_triangles(triangulate_xy(std::vector<Vec3>{Vec3(0, 0, 0), Vec3(1, 0, 0), Vec3(0, 1, dz)}))
               .triangles.size() == 1;
  };
  o.require(!steep_kept(2.01), "z_span 2.01 removed");
  o.require(steep_kept(2.00), "z_span 2.00 kept");

  auto lone_kept = [](double gap) {
    const PointCloud c(std::vector<LidarPoint>{{Vec3(0, 0, 0), 1, std::nullopt}, {Vec3(gap, 0, 0), 1, std::nullopt}});
    return remove_isolated(c, 3.0).size() == 2;
  };
  o.require(!lone_kept(3.01), "lone point at 3.01 m removed");
  o.require(lone_kept(2.99), "point at 2.99 m kept");

  const auto v1 = change_filter_stage1({graded(601), graded(599), graded(600)});
  o.require(v1[0].dropped, "stage 1 at 60.1 % dropped");
  o.require(!v1[1].dropped, "stage 1 at 59.9 % kept");
  o.require(!v1[2].dropped, "stage 1 at 60.0 % kept");
  const std::map<std::string, PairEvaluation> s2 = {{"a", graded(401)}, {"b", graded(399)}};
  const auto v2 = change_filter_stage2({"a", "b"}, s2);
  o.require(v2[0].dropped, "stage 2 at 40.1 % dropped");
  o.require(!v2[1].dropped, "stage 2 at 39.9 % kept");

  o.require(bh_bin(0.39) == BhBin::kSmall, "B/H 0.39 small");
  o.require(bh_bin(0.40) == BhBin::kMiddle, "B/H 0.40 middle");
  o.require(bh_bin(0.61) == BhBin::kLarge, "B/H 0.61 large");
  o.detail << "steep 2.01/2.00, isolation 3.01/2.99, stage 1 60.1/59.9/60.0 %, stage 2 40.1/39.9 %, B/H 0.39/0.40/0.61";
}

void sgm(Outcome& o) {
  const auto t0 = Clock::now();
  std::mt19937_64 rng(404);
  std::size_t strips = 0, mismatches = 0;
  for (int len = 1; len <= 16; ++len)
    for (const bool vertical : {false, true})
      for (int trial = 0; trial < 4; ++trial) {
        CostVolume vol(vertical ? 1 : len, vertical ? len : 1, 7);
        for (auto& c : vol.costs) c = static_cast<std::uint16_t>(rng() % 25);
        const int p1 = 1 + static_cast<int>(rng() % 10), p2 = p1 + 1 + static_cast<int>(rng() % 100);
        for (const PathDirection dir : sgm_directions(8)) {
          const CostVolume agg = aggregate_path(vol, dir, p1, p2);
          for (int y = 0; y < vol.height; ++y)
            for (int x = 0; x < vol.width; ++x) {
              const auto ref = path_oracle(vol, x, y, dir, p1, p2);
              for (int d = 0; d <= vol.d_max; ++d) mismatches += agg.at(x, y, d) != ref[static_cast<std::size_t>(d)];
            }
        }
        ++strips;
      }

  // Interior: the whole disparity search range lies inside the image and the census window inside the rows.
  const ImageF left = random_texture(rng, 256, 256);
  SgmParams p;
  p.subpixel = false;
  double exact_rate = 1.0, matchable_rate = 1.0;
  for (const int shift : {0, 9, 21, 32}) {
    ImageF right(256, 256);
    for (int y = 0; y < 256; ++y)
      for (int x = 0; x < 256; ++x) right(x, y) = left(std::min(x + shift, 255), y);
    const DisparityResult r = match_pair(left, right, p);
    std::size_t exact = 0, interior = 0, hit = 0, matchable = 0;
    for (int y = 0; y < 256; ++y)
      for (int x = shift; x < 256; ++x) {
        const bool ok = r.disparity(x, y) == static_cast<float>(shift);
        ++matchable;
        hit += ok;
        if (x < p.d_max || x >= 254 || y < 2 || y >= 254) continue;
        ++interior;
        exact += ok;
      }
    exact_rate = std::min(exact_rate, static_cast<double>(exact) / static_cast<double>(interior));
    matchable_rate = std::min(matchable_rate, static_cast<double>(hit) / static_cast<double>(matchable));
  }

  ImageF sl(256, 256), sr(256, 256);
  for (int y = 0; y < 256; ++y)
    for (int x = 0; x < 256; ++x) {
      sl(x, y) = static_cast<float>(texture_value(17, x, y, 3.0));
      sr(x, y) = static_cast<float>(texture_value(17, x + 7.25, y, 3.0));
    }
  const DisparityResult s = match_pair(sl, sr, SgmParams{});
  double err = 0.0;
  std::size_t valid = 0, sub_matchable = 0;
  for (int y = 0; y < 256; ++y)
    for (int x = 8; x < 256; ++x) {
      ++sub_matchable;
      if (!std::isfinite(s.disparity(x, y))) continue;
      err += std::abs(s.disparity(x, y) - 7.25);
      ++valid;
    }
  const double mean_err = valid ? err / static_cast<double>(valid) : 1e9;
  const double t = seconds_since(t0);
  o.detail << strips << " strips x 8 directions, " << mismatches << " mismatches; integer shifts 0/9/21/32 at least " << 100.0 * exact_rate
           << " % exact in the interior (" << 100.0 * matchable_rate << " % over all matchable pixels); 7.25 px shift mean |error| " << mean_err << " px over " << valid << "/" << sub_matchable
           << " pixels; " << t << " s";
  o.require(mismatches == 0, "DP oracle");
  o.require(exact_rate >= 0.99, "integer shift");
  o.require(mean_err < 0.25, "subpixel");
  o.require(valid >= sub_matchable * 9 / 10, "subpixel coverage");
  o.require(t < 10.0, "runtime");
}

double angle_deg(const Mat3& a, const Mat3& b) {
  return std::acos(std::clamp(((a * b.transpose()).trace() - 1.0) / 2.0, -1.0, 1.0)) * 180.0 / M_PI;
}

void registration(Outcome& o) {
  SynthRecipe r;
  // Nearest-neighbour GCP matching finds the true LiDAR point only while the first triangulation error stays
  // below half the point spacing.
  r.extent_min = Vec2(-80, -80);
  r.extent_max = Vec2(140, 80);
  r.boxes.push_back({Vec2(20, -10), Vec2(40, 10), 12.0, true, true});
  r.lidar_spacing = 3.0;
  r.cameras = {4, 500.0, 256, 256, 100.0, 20.0, Vec2(0, 0)};
  r.tiepoints = 300;
  r.seed = 5;
  const auto truth = synth_cameras(r);
  const PointCloud cloud = synth_cloud(r);
  const auto tps = synth_tiepoints(r, cloud, truth);
  const auto start = perturb_cameras(truth, 0.5, 0.2, 77);
  RegistrationConfig cfg;
  cfg.max_gcp_distance = 10.0;
  const RegistrationResult res = refine_registration(start, tps, cloud, cfg);
  double worst_rot = 0.0, worst_shift = 0.0, start_rot = 0.0;
  for (std::size_t i = 0; i < truth.size(); ++i) {
    worst_rot = std::max(worst_rot, angle_deg(res.cameras[i].rotation(), truth[i].rotation()));
    worst_shift = std::max(worst_shift, (res.cameras[i].center() - truth[i].center()).norm());
    start_rot = std::max(start_rot, angle_deg(start[i].rotation(), truth[i].rotation()));
  }
  bool monotone = true;
  for (std::size_t k = 1; k < res.report.rmse_history.size(); ++k)
    monotone &= res.report.rmse_history[k] <= res.report.rmse_history[k - 1];

  std::mt19937_64 rng(505);
  double worst_jac = 0.0;
  for (int trial = 0; trial < 100; ++trial) {
    const OrientedCamera cam =
        random_camera(rng, Vec3(uniform(rng, -100, 100), uniform(rng, -100, 100), uniform(rng, 800, 1200)));
    std::vector<Vec3> pts;
    std::vector<Vec2> obs;
    for (int i = 0; i < 20; ++i) {
      pts.emplace_back(uniform(rng, -400, 400), uniform(rng, -400, 400), uniform(rng, 0, 60));
      obs.push_back(project(pts.back(), cam).pixel);
    }
    const Eigen::MatrixXd j = reprojection_jacobian(cam, pts);
    for (int k = 0; k < 6; ++k) {
      const double h = k < 3 ? 1e-6 : 1e-4;
      Eigen::Matrix<double, 6, 1> step = Eigen::Matrix<double, 6, 1>::Zero();
      step[k] = h;
      const Eigen::VectorXd fd = (reprojection_residuals(apply_pose_increment(cam, step), pts, obs) -
                                  reprojection_residuals(apply_pose_increment(cam, -step), pts, obs)) /
                                 (2 * h);
      worst_jac = std::max(worst_jac, (j.col(k) - fd).norm() / fd.norm());
    }
  }
  o.detail << "start error up to " << start_rot << " deg; final rotation error " << worst_rot << " deg, translation "
           << worst_shift << " m after " << res.report.iterations << " iterations, RMSE "
           << res.report.rmse_history.front() << " -> " << res.report.rmse_history.back()
           << " m; Jacobian relative error " << worst_jac;
  o.require(start_rot > 0.49, "perturbation applied");
  o.require(worst_rot < 0.01, "rotation");
  o.require(worst_shift < 0.05, "translation");
  o.require(res.report.iterations <= 10, "iterations");
  o.require(monotone, "monotone RMSE");
  o.require(worst_jac < 1e-5, "Jacobian");
}

void metrics(Outcome& o) {
  std::mt19937_64 rng(606);
  MetricSpec spec;
  spec.thresholds = {0.5, 1, 2, 3, 5, 9};
  std::size_t checked = 0, failures = 0;
  for (int trial = 0; trial < 1000; ++trial) {
    const RandomCase c = random_case(rng);
    for (const Split split : {Split::kAll, Split::kSeen, Split::kOccluded}) {
      const OracleCounts base = brute_force(c.pred, c.gt, 1.0, split);
      if (base.selected == 0) {
        bool threw = false;
        try {
          n_pixel_fraction(c.pred, c.gt, 1.0, split);
        } catch (const EmptySelection&) {
          threw = true;
        }
        failures += !threw;
        continue;
      }
      const PairEvaluation e = evaluate_pair(c.pred, c.gt, spec, split);
      for (std::size_t k = 0; k < spec.thresholds.size(); ++k) {
        const OracleCounts ref = brute_force(c.pred, c.gt, spec.thresholds[k], split);
        const NPixelResult single = n_pixel_fraction(c.pred, c.gt, spec.thresholds[k], split);
        const double f = static_cast<double>(ref.within) / static_cast<double>(ref.selected);
        failures += single.fraction != f || e.fraction_within[k] != f;
        failures += single.invalid != ref.selected - ref.valid;
        failures += e.error_at(spec.thresholds[k]) + e.fraction_within[k] != 1.0;
        if (k > 0) failures += e.fraction_within[k] < e.fraction_within[k - 1];
      }
      if (base.valid > 0) {
        const double ref = base.abs_sum / static_cast<double>(base.valid);
        failures += average_error(c.pred, c.gt, split).value != ref;
      }
      const double p = e.fraction_within[2], p_base = e.fraction_within[3];
      if (p_base > 0) failures += shift_gain(p, p_base) != (p / p_base - 1.0) * 100.0;
      if (p_base > 0) failures += shift_gain(p_base, p_base) != 0.0;
      ++checked;
    }
  }
  o.detail << "1000 random maps, " << checked << " split evaluations, " << failures << " disagreements";
  o.require(failures == 0, "oracle agreement");
  o.require(shift_gain(0.37, 0.37) == 0.0, "self gain");
}

std::map<std::string, std::string> pipeline_tree(const fs::path& dir, int workers) {
  PipelineConfig cfg = make_dataset(dir, small_recipe(21));
  cfg.workers = workers;
  CommandOptions opts;
  for (const auto& cmd : {cmd_pairs, cmd_gen_gt, cmd_match, cmd_filter, cmd_eval})
    if (cmd(cfg, opts) != 0) throw std::runtime_error("pipeline stage failed");
  return tree(cfg.output);
}

void determinism(Outcome& o) {
  const auto a = pipeline_tree(temp_dir("acceptance_det_a"), 1);
  const auto b = pipeline_tree(temp_dir("acceptance_det_b"), 4);
  const auto c = pipeline_tree(temp_dir("acceptance_det_c"), 3);
  std::size_t bytes = 0;
  for (const auto& [k, v] : a) bytes += v.size();
  o.detail << a.size() << " files, " << bytes << " bytes; workers 1, 4 and 3";
  o.require(a == b, "workers 1 vs 4");
  o.require(a == c, "workers 1 vs 3");
  o.require(a.count("pairs.json") && a.count("eval/sgm/pooled.csv") && a.count("filter_stage1.csv"), "outputs present");
}

void formats(Outcome& o) {
  const fs::path dir = temp_dir("acceptance_formats");
  std::mt19937_64 rng(808);
  ImageF img(37, 23);
  for (float& v : img.data()) {
    std::uint32_t bits = static_cast<std::uint32_t>(rng());
    std::memcpy(&v, &bits, 4);
    if (std::isnan(v)) v = std::numeric_limits<float>::infinity();
  }
  img(0, 0) = -std::numeric_limits<float>::infinity();
  img(1, 0) = std::numeric_limits<float>::denorm_min();
  write_pfm(dir / "a.pfm", img);
  const ImageF back = read_pfm(dir / "a.pfm");
  o.require(std::memcmp(back.data().data(), img.data().data(), img.data().size() * 4) == 0, "PFM bit-exact");

  const std::string bytes = slurp(dir / "a.pfm");
  const std::string header = "Pf\n37 23\n";
  o.require(bytes.compare(0, header.size(), header) == 0, "PFM header");
  const std::size_t scale_end = bytes.find('\n', header.size());
  const double scale = std::stod(bytes.substr(header.size(), scale_end - header.size()));
  o.require(scale < 0, "negative scale");
  const char* raster = bytes.data() + scale_end + 1;
  bool rows_ok = bytes.size() == scale_end + 1 + 37 * 23 * 4;
  for (int r = 0; r < 23 && rows_ok; ++r)
    for (int x = 0; x < 37; ++x) {
      const unsigned char* b = reinterpret_cast<const unsigned char*>(raster + (r * 37 + x) * 4);
      const std::uint32_t le = b[0] | (b[1] << 8) | (b[2] << 16) | (static_cast<std::uint32_t>(b[3]) << 24);
      std::uint32_t expect;
      std::memcpy(&expect, &img(x, 22 - r), 4);
      rows_ok &= le == expect;
    }
  o.require(rows_ok, "little endian, bottom row first");

  std::size_t samples = 0;
  bool gt_ok = true;
  for (int trial = 0; trial < 50; ++trial) {
    const RandomCase c = random_case(rng);
    std::vector<GroundTruthSample> s = c.gt.samples();
    for (auto& g : s) {
      g.x_left = g.col + uniform(rng, -0.5, 0.5);
      g.x_right = g.x_left - g.disparity;
      g.disparity = g.x_left - g.x_right;
      g.source_point = static_cast<std::int64_t>(rng() % 1000000);
    }
    const SparseDisparityMap m(c.gt.width(), c.gt.height(), "pair_" + std::to_string(trial), s);
    write_gt(dir / "g.txt", m);
    gt_ok &= read_gt(dir / "g.txt") == m;
    samples += m.size();
  }
  o.require(gt_ok, "sparse GT round trip");
  o.detail << "PFM 37x23 bit-exact with inf/denormals, scale " << scale << ", bottom-up rows; " << samples
           << " sparse samples round-tripped with labels";
}

}  // namespace

int main() {
  const std::vector<std::pair<std::string, std::function<void(Outcome&)>>> criteria = {
      {"epipolar invariant", epipolar},  {"occlusion oracle", occlusion},   {"literal thresholds", thresholds},
      {"SGM correctness", sgm},          {"registration recovery", registration}, {"metric oracle", metrics},
      {"end-to-end determinism", determinism}, {"format fidelity", formats}};
  int failed = 0;
  for (std::size_t i = 0; i < criteria.size(); ++i) {
    Outcome o;
    try {
      criteria[i].second(o);
    } catch (const std::exception& e) {
      o.pass = false;
      o.detail << " [exception: " << e.what() << "]";
    }
    failed += !o.pass;
    std::cout << "criterion " << i + 1 << " " << (o.pass ? "PASS" : "FAIL") << " " << criteria[i].first << ": "
              << o.detail.str() << std::endl;
  }
  return failed ? 1 : 0;
}
