#include "gtforge/pipeline.hpp"

#include <algorithm>
#include <cstdio>
#include <cstdlib>
#include <fstream>
#include <iostream>
#include <map>
#include <set>
#include <sstream>

#include "gtforge/errors.hpp"
#include "gtforge/parallel.hpp"
#include "gtforge/pointcloud.hpp"
#include "gtforge/surface.hpp"
#include "json.hpp"

namespace gtforge {

using nlohmann::json;

namespace {

fs::path resolve(const fs::path& base, const std::string& p) {
  const fs::path path(p);
  return (path.is_absolute() ? path : base / path).lexically_normal();
}

void check_keys(const json& obj, std::initializer_list<const char*> allowed, const std::string& section) {
  if (!obj.is_object()) throw ConfigError("'" + section + "' must be an object");
  for (const auto& [key, _] : obj.items()) {
    if (std::none_of(allowed.begin(), allowed.end(), [&](const char* a) { return key == a; }))
      throw ConfigError("unknown key '" + key + "' in " + section);
  }
}

template <typename T>
void read_opt(const json& obj, const char* key, T& out) {
  if (obj.contains(key)) out = obj.at(key).get<T>();
}

Vec2 vec2(const json& j) { return Vec2(j.at(0).get<double>(), j.at(1).get<double>()); }

SynthRecipe parse_recipe(const json& s) {
  check_keys(s, {"plane_z", "extent", "boxes", "lidar", "texture_cell", "cameras", "tiepoints", "perturb"}, "synth");
  SynthRecipe r;
  read_opt(s, "plane_z", r.plane_z);
  if (s.contains("extent")) {
    const json& e = s.at("extent");
    if (!e.is_array() || e.size() != 4) throw ConfigError("synth.extent must be [xmin, ymin, xmax, ymax]");
    r.extent_min = Vec2(e[0].get<double>(), e[1].get<double>());
    r.extent_max = Vec2(e[2].get<double>(), e[3].get<double>());
  }
  if (s.contains("boxes")) {
    for (const json& b : s.at("boxes")) {
      check_keys(b, {"min", "max", "height", "in_lidar", "in_images"}, "synth.boxes[]");
      SynthBox box;
      box.min = vec2(b.at("min"));
      box.max = vec2(b.at("max"));
      box.height = b.at("height").get<double>();
      read_opt(b, "in_lidar", box.in_lidar);
      read_opt(b, "in_images", box.in_images);
      r.boxes.push_back(box);
    }
  }
  if (s.contains("lidar")) {
    const json& l = s.at("lidar");
    check_keys(l, {"spacing", "jitter"}, "synth.lidar");
    read_opt(l, "spacing", r.lidar_spacing);
    read_opt(l, "jitter", r.lidar_jitter);
  }
  read_opt(s, "texture_cell", r.texture_cell);
  if (s.contains("cameras")) {
    const json& c = s.at("cameras");
    check_keys(c, {"count", "focal", "width", "height", "altitude", "spacing", "start"}, "synth.cameras");
    read_opt(c, "count", r.cameras.count);
    read_opt(c, "focal", r.cameras.focal);
    read_opt(c, "width", r.cameras.width);
    read_opt(c, "height", r.cameras.height);
    read_opt(c, "altitude", r.cameras.altitude);
    read_opt(c, "spacing", r.cameras.spacing);
    if (c.contains("start")) r.cameras.start = vec2(c.at("start"));
  }
  read_opt(s, "tiepoints", r.tiepoints);
  if (s.contains("perturb")) {
    const json& p = s.at("perturb");
    check_keys(p, {"rotation_deg", "translation_m"}, "synth.perturb");
    read_opt(p, "rotation_deg", r.perturb_rotation_deg);
    read_opt(p, "translation_m", r.perturb_translation_m);
  }
  return r;
}

json read_json_file(const fs::path& path) {
  std::ifstream in(path);
  if (!in) throw ConfigError("cannot open " + path.string());
  try {
    return json::parse(in);
  } catch (const json::exception& e) {
    throw ConfigError(path.string() + ": " + e.what());
  }
}

void write_json_file(const fs::path& path, const json& j) {
  std::ofstream out(path);
  if (!out) throw IoError("cannot write " + path.string());
  out << j.dump(2) << '\n';
}

std::string csv_safe(std::string s) {
  std::replace(s.begin(), s.end(), ',', ';');
  std::replace(s.begin(), s.end(), '\n', ' ');
  return s;
}

std::string fmt(double v) {
  char buf[40];
  std::snprintf(buf, sizeof(buf), "%.10g", v);
  return buf;
}

struct Dataset {
  std::map<std::string, OrientedCamera> cameras;
  std::map<std::string, fs::path> images;
};

Dataset load_cameras(const PipelineConfig& cfg) {
  Dataset ds;
  for (const CameraEntry& c : cfg.cameras) {
    ds.cameras.emplace(c.id, read_pose(cfg.pose_path(c)));
    ds.images.emplace(c.id, c.image);
  }
  return ds;
}

int workers_of(const PipelineConfig& cfg) { return std::max(1, cfg.workers); }

// Runs fn on every item, capturing per-item failures instead of aborting the batch.
template <typename Fn>
std::vector<std::string> run_isolated(std::size_t n, int workers, Fn&& fn) {
  std::vector<std::string> errors(n);
  parallel_for(n, workers, [&](std::size_t begin, std::size_t end) {
    for (std::size_t i = begin; i < end; ++i) {
      try {
        fn(i);
      } catch (const std::exception& e) {
        errors[i] = e.what();
        if (errors[i].empty()) errors[i] = "unknown error";
      }
    }
  });
  return errors;
}

int report_failures(const std::string& stage, const std::vector<std::string>& ids,
                    const std::vector<std::string>& errors) {
  int failed = 0;
  for (std::size_t i = 0; i < ids.size(); ++i) {
    if (errors[i].empty()) continue;
    ++failed;
    std::cerr << stage << ": pair " << ids[i] << " failed: " << errors[i] << '\n';
  }
  if (failed) std::cerr << stage << ": " << failed << " of " << ids.size() << " pairs failed\n";
  return failed ? 1 : 0;
}

fs::path prediction_file(const fs::path& dir, const std::string& pair_id) { return dir / (pair_id + ".pfm"); }

ImageF load_prediction(const fs::path& dir, const std::string& pair_id) {
  const fs::path p = prediction_file(dir, pair_id);
  if (!fs::exists(p)) throw MissingPrediction("no prediction for pair '" + pair_id + "' at " + p.string());
  return read_pfm(p);
}

}  // namespace

void PipelineConfig::validate() const {
  if (workers < 1) throw ConfigError("workers must be at least 1");
  if (!(min_overlap >= 0.0 && min_overlap < 1.0)) throw ConfigError("pairs.min_overlap must lie in [0, 1)");
  if (!(isolation_radius > 0.0)) throw ConfigError("pointcloud.isolation_radius must be positive");
  if (!(dz_max > 0.0)) throw ConfigError("surface.dz_max must be positive");
  if (!(gtgen.epsilon >= 0.0)) throw ConfigError("gtgen.epsilon must be non-negative");
  try {
    alpha.validate();
    sgm.validate();
    metrics.validate();
    if (synth) synth->validate();
  } catch (const ConfigError&) {
    throw;
  } catch (const Error& e) {
    throw ConfigError(e.what());
  }
  if (!(registration.max_gcp_distance > 0.0)) throw ConfigError("registration.max_gcp_distance must be positive");
  if (registration.max_iters < 1) throw ConfigError("registration.max_iters must be at least 1");
  if (!(stage1_threshold > 0.0 && stage1_threshold <= 1.0)) throw ConfigError("filter.stage1_threshold must lie in (0, 1]");
  if (!(stage2_threshold > 0.0 && stage2_threshold <= 1.0)) throw ConfigError("filter.stage2_threshold must lie in (0, 1]");
  if (!prediction_sets.empty() &&
      std::find(metrics.thresholds.begin(), metrics.thresholds.end(), shift_gain_n) == metrics.thresholds.end())
    throw ConfigError("eval.shift_gain_n must be one of eval.thresholds");
  if (training_cap < 1) throw ConfigError("report.training_cap must be at least 1");
  std::set<std::string> ids;
  for (const CameraEntry& c : cameras)
    if (!ids.insert(c.id).second) throw ConfigError("duplicate camera id '" + c.id + "'");
}

void PipelineConfig::validate_dataset(bool need_images, bool need_cloud) const {
  if (cameras.empty()) throw ConfigError(config_path.string() + ": dataset.cameras is empty");
  for (const CameraEntry& c : cameras) {
    if (!fs::exists(pose_path(c))) throw ConfigError("pose file not found: " + pose_path(c).string());
    if (need_images) {
      if (c.image.empty()) throw ConfigError("camera '" + c.id + "' has no image");
      if (!fs::exists(c.image)) throw ConfigError("image file not found: " + c.image.string());
    }
  }
  if (need_cloud) {
    if (cloud.empty()) throw ConfigError(config_path.string() + ": dataset.cloud is not set");
    if (!fs::exists(cloud)) throw ConfigError("cloud file not found: " + cloud.string());
  }
}

fs::path PipelineConfig::pose_path(const CameraEntry& cam) const {
  if (use_refined_poses) {
    fs::path refined = cam.pose;
    refined.replace_extension(".refined.json");
    if (fs::exists(refined)) return refined;
  }
  return cam.pose;
}

PipelineConfig load_config(const fs::path& path) {
  if (!fs::exists(path)) throw ConfigError("config file not found: " + path.string());
  const json root = read_json_file(path);
  const fs::path base = path.parent_path().empty() ? fs::path(".") : path.parent_path();
  PipelineConfig cfg;
  cfg.config_path = path;
  try {
    check_keys(root,
               {"seed", "workers", "output", "dataset", "pairs", "pointcloud", "surface", "gtgen", "registration",
                "matcher", "filter", "eval", "report", "synth"},
               "config");
    read_opt(root, "seed", cfg.seed);
    read_opt(root, "workers", cfg.workers);
    cfg.output = resolve(base, root.value("output", std::string("out")));

    if (root.contains("dataset")) {
      const json& d = root.at("dataset");
      check_keys(d, {"cloud", "cameras", "tiepoints", "ground_height", "use_refined_poses"}, "dataset");
      if (d.contains("cloud")) cfg.cloud = resolve(base, d.at("cloud").get<std::string>());
      if (d.contains("cameras")) {
        for (const json& c : d.at("cameras")) {
          check_keys(c, {"id", "pose", "image"}, "dataset.cameras[]");
          CameraEntry e;
          e.id = c.at("id").get<std::string>();
          e.pose = resolve(base, c.at("pose").get<std::string>());
          if (c.contains("image")) e.image = resolve(base, c.at("image").get<std::string>());
          cfg.cameras.push_back(std::move(e));
        }
      }
      if (d.contains("tiepoints")) cfg.tiepoints = resolve(base, d.at("tiepoints").get<std::string>());
      if (d.contains("ground_height")) cfg.ground_height = d.at("ground_height").get<double>();
      read_opt(d, "use_refined_poses", cfg.use_refined_poses);
    }
    if (root.contains("pairs")) {
      check_keys(root.at("pairs"), {"min_overlap"}, "pairs");
      read_opt(root.at("pairs"), "min_overlap", cfg.min_overlap);
    }
    if (root.contains("pointcloud")) {
      check_keys(root.at("pointcloud"), {"isolation_radius"}, "pointcloud");
      read_opt(root.at("pointcloud"), "isolation_radius", cfg.isolation_radius);
    }
    if (root.contains("surface")) {
      check_keys(root.at("surface"), {"dz_max"}, "surface");
      read_opt(root.at("surface"), "dz_max", cfg.dz_max);
    }
    if (root.contains("gtgen")) {
      const json& g = root.at("gtgen");
      check_keys(g, {"epsilon", "alpha_filter"}, "gtgen");
      read_opt(g, "epsilon", cfg.gtgen.epsilon);
      if (g.contains("alpha_filter")) {
        const json& a = g.at("alpha_filter");
        check_keys(a, {"enabled", "window_radius", "threshold", "min_samples", "direction"}, "gtgen.alpha_filter");
        read_opt(a, "enabled", cfg.alpha_enabled);
        read_opt(a, "window_radius", cfg.alpha.window_radius);
        read_opt(a, "threshold", cfg.alpha.alpha_threshold);
        read_opt(a, "min_samples", cfg.alpha.min_window_samples);
        if (a.contains("direction")) {
          const std::string dir = a.at("direction").get<std::string>();
          if (dir == "remove_deeper") cfg.alpha.direction = AlphaDirection::kRemoveDeeper;
          else if (dir == "remove_shallower") cfg.alpha.direction = AlphaDirection::kRemoveShallower;
          else throw ConfigError("gtgen.alpha_filter.direction must be remove_deeper or remove_shallower");
        }
      }
    }
    if (root.contains("registration")) {
      const json& r = root.at("registration");
      check_keys(r, {"max_gcp_distance", "rel_tol", "abs_tol", "max_iters"}, "registration");
      read_opt(r, "max_gcp_distance", cfg.registration.max_gcp_distance);
      read_opt(r, "rel_tol", cfg.registration.rel_tol);
      read_opt(r, "abs_tol", cfg.registration.abs_tol);
      read_opt(r, "max_iters", cfg.registration.max_iters);
    }
    if (root.contains("matcher")) {
      const json& m = root.at("matcher");
      check_keys(m, {"census_window", "d_max", "p1", "p2", "paths", "lr_check_tol", "subpixel"}, "matcher");
      read_opt(m, "census_window", cfg.sgm.census_window);
      read_opt(m, "d_max", cfg.sgm.d_max);
      read_opt(m, "p1", cfg.sgm.p1);
      read_opt(m, "p2", cfg.sgm.p2);
      read_opt(m, "paths", cfg.sgm.paths);
      if (m.contains("lr_check_tol")) {
        if (m.at("lr_check_tol").is_null()) cfg.sgm.lr_check_tol.reset();
        else cfg.sgm.lr_check_tol = m.at("lr_check_tol").get<double>();
      }
      read_opt(m, "subpixel", cfg.sgm.subpixel);
    }
    if (root.contains("filter")) {
      check_keys(root.at("filter"), {"stage1_threshold", "stage2_threshold"}, "filter");
      read_opt(root.at("filter"), "stage1_threshold", cfg.stage1_threshold);
      read_opt(root.at("filter"), "stage2_threshold", cfg.stage2_threshold);
    }
    if (root.contains("eval")) {
      const json& e = root.at("eval");
      check_keys(e, {"thresholds", "average_error", "baseline_method", "shift_gain_n", "prediction_sets"}, "eval");
      read_opt(e, "thresholds", cfg.metrics.thresholds);
      read_opt(e, "average_error", cfg.metrics.average_error);
      read_opt(e, "baseline_method", cfg.baseline_method);
      read_opt(e, "shift_gain_n", cfg.shift_gain_n);
      if (e.contains("prediction_sets")) {
        for (const json& s : e.at("prediction_sets")) {
          check_keys(s, {"method", "train", "test", "predictions"}, "eval.prediction_sets[]");
          PredictionSet p;
          p.method = s.at("method").get<std::string>();
          p.train_dataset = s.value("train", std::string("-"));
          p.test_dataset = s.at("test").get<std::string>();
          p.directory = resolve(base, s.at("predictions").get<std::string>());
          cfg.prediction_sets.push_back(std::move(p));
        }
      }
    }
    if (root.contains("report")) {
      check_keys(root.at("report"), {"training_cap"}, "report");
      read_opt(root.at("report"), "training_cap", cfg.training_cap);
    }
    if (root.contains("synth")) cfg.synth = parse_recipe(root.at("synth"));
  } catch (const json::exception& e) {
    throw ConfigError(path.string() + ": " + e.what());
  }
  cfg.validate();
  return cfg;
}

const char* to_string(PairStatus s) {
  switch (s) {
    case PairStatus::kActive: return "active";
    case PairStatus::kDroppedStage1: return "dropped_stage1";
    case PairStatus::kDroppedStage2: return "dropped_stage2";
  }
  return "?";
}

PairStatus pair_status_from_string(const std::string& s) {
  if (s == "active") return PairStatus::kActive;
  if (s == "dropped_stage1") return PairStatus::kDroppedStage1;
  if (s == "dropped_stage2") return PairStatus::kDroppedStage2;
  throw FormatError("unknown pair status '" + s + "'");
}

PairManifest::PairManifest(std::vector<PairEntry> pairs) : pairs_(std::move(pairs)) {
  std::set<std::string> ids;
  for (const PairEntry& p : pairs_)
    if (!ids.insert(p.pair_id).second) throw FormatError("duplicate pair id '" + p.pair_id + "'");
}

std::vector<const PairEntry*> PairManifest::active() const {
  std::vector<const PairEntry*> out;
  for (const PairEntry& p : pairs_)
    if (p.status == PairStatus::kActive) out.push_back(&p);
  return out;
}

const PairEntry& PairManifest::at(const std::string& pair_id) const {
  for (const PairEntry& p : pairs_)
    if (p.pair_id == pair_id) return p;
  throw InvalidParams("unknown pair '" + pair_id + "'");
}

void PairManifest::set_status(const std::string& pair_id, PairStatus status) {
  for (PairEntry& p : pairs_) {
    if (p.pair_id != pair_id) continue;
    if (p.status == status) return;
    if (p.status != PairStatus::kActive || status == PairStatus::kActive)
      throw InvalidParams("pair '" + pair_id + "' cannot move from " + to_string(p.status) + " to " +
                          to_string(status));
    p.status = status;
    return;
  }
  throw InvalidParams("unknown pair '" + pair_id + "'");
}

PairManifest read_manifest(const fs::path& path) {
  if (!fs::exists(path)) throw ConfigError("pair manifest not found: " + path.string());
  const json root = read_json_file(path);
  std::vector<PairEntry> pairs;
  try {
    for (const json& p : root.at("pairs")) {
      PairEntry e;
      e.pair_id = p.at("pair_id").get<std::string>();
      e.left = p.at("left").get<std::string>();
      e.right = p.at("right").get<std::string>();
      e.overlap_fraction = p.at("overlap_fraction").get<double>();
      e.bh_ratio = p.at("bh_ratio").get<double>();
      const std::string bin = p.at("bh_bin").get<std::string>();
      if (bin != "none") e.bin = bh_bin_from_string(bin);
      e.gsd = p.at("gsd").get<double>();
      e.status = pair_status_from_string(p.at("status").get<std::string>());
      pairs.push_back(std::move(e));
    }
  } catch (const json::exception& e) {
    throw FormatError(path.string() + ": " + e.what());
  }
  return PairManifest(std::move(pairs));
}

void write_manifest(const fs::path& path, const PairManifest& manifest) {
  json arr = json::array();
  for (const PairEntry& p : manifest.pairs()) {
    arr.push_back({{"pair_id", p.pair_id},
                   {"left", p.left},
                   {"right", p.right},
                   {"overlap_fraction", p.overlap_fraction},
                   {"bh_ratio", p.bh_ratio},
                   {"bh_bin", p.bin ? to_string(*p.bin) : "none"},
                   {"gsd", p.gsd},
                   {"status", to_string(p.status)}});
  }
  if (path.has_parent_path()) fs::create_directories(path.parent_path());
  write_json_file(path, json{{"pairs", arr}});
}

fs::path manifest_path(const PipelineConfig& cfg, const CommandOptions& opts) {
  return opts.manifest ? *opts.manifest : cfg.output / "pairs.json";
}

fs::path gt_path(const PipelineConfig& cfg, const std::string& pair_id) {
  return cfg.output / "pairs" / pair_id / "gt.txt";
}

fs::path baseline_predictions_dir(const PipelineConfig& cfg) { return cfg.output / "predictions" / "sgm"; }

int resolve_workers(int configured) {
  const char* env = std::getenv("GTFORGE_WORKERS");
  if (!env || !*env) return configured;
  char* end = nullptr;
  const long v = std::strtol(env, &end, 10);
  if (*end != '\0' || v < 1 || v > 1024) throw ConfigError(std::string("GTFORGE_WORKERS must be a positive integer, got '") + env + "'");
  return static_cast<int>(v);
}

int cmd_pairs(const PipelineConfig& cfg, const CommandOptions& opts) {
  cfg.validate_dataset(false, !cfg.ground_height.has_value());
  const Dataset ds = load_cameras(cfg);
  const double ground = cfg.ground_height ? *cfg.ground_height : median_elevation(load_cloud(cfg.cloud).heights());

  std::vector<PairEntry> pairs;
  for (std::size_t i = 0; i < cfg.cameras.size(); ++i) {
    const OrientedCamera& li = ds.cameras.at(cfg.cameras[i].id);
    const FootprintPolygon fi = footprint(li, ground);
    for (std::size_t j = i + 1; j < cfg.cameras.size(); ++j) {
      const OrientedCamera& rj = ds.cameras.at(cfg.cameras[j].id);
      const double overlap = overlap_fraction(fi, footprint(rj, ground));
      if (!(overlap > cfg.min_overlap)) continue;
      PairEntry e;
      e.left = cfg.cameras[i].id;
      e.right = cfg.cameras[j].id;
      e.pair_id = e.left + "_" + e.right;
      e.overlap_fraction = overlap;
      e.gsd = (0.5 * (li.center().z() + rj.center().z()) - ground) / (0.5 * (li.focal() + rj.focal()));
      try {
        e.bh_ratio = base_height_ratio(rectify_pair(li, rj), ground);
        e.bin = bh_bin(e.bh_ratio);
      } catch (const CoincidentCenters&) {
        e.bh_ratio = 0.0;
      }
      pairs.push_back(std::move(e));
    }
  }

  const fs::path out = manifest_path(cfg, opts);
  if (fs::exists(out)) {
    const PairManifest previous = read_manifest(out);
    for (PairEntry& e : pairs)
      for (const PairEntry& old : previous.pairs())
        if (old.pair_id == e.pair_id) e.status = old.status;
  }
  write_manifest(out, PairManifest(std::move(pairs)));
  return 0;
}

int cmd_register(const PipelineConfig& cfg, const CommandOptions&) {
  cfg.validate_dataset(false, true);
  if (!cfg.tiepoints) throw ConfigError(cfg.config_path.string() + ": dataset.tiepoints is required for register");
  if (!fs::exists(*cfg.tiepoints)) throw ConfigError("tie point file not found: " + cfg.tiepoints->string());

  std::vector<OrientedCamera> cams;
  std::vector<std::string> ids;
  for (const CameraEntry& c : cfg.cameras) {
    cams.push_back(read_pose(c.pose));
    ids.push_back(c.id);
  }
  const std::vector<TiePoint> tiepoints = read_tiepoints(*cfg.tiepoints);
  const PointCloud cloud = load_cloud(cfg.cloud);
  RegistrationConfig rc = cfg.registration;
  rc.workers = workers_of(cfg);
  const RegistrationResult result = refine_registration(cams, tiepoints, cloud, rc);

  for (std::size_t i = 0; i < cfg.cameras.size(); ++i) {
    fs::path refined = cfg.cameras[i].pose;
    refined.replace_extension(".refined.json");
    write_pose(refined, result.cameras[i]);
  }
  fs::create_directories(cfg.output);
  write_registration_report(cfg.output / "registration_report.json", result.report, ids);
  return 0;
}

int cmd_gen_gt(const PipelineConfig& cfg, const CommandOptions& opts) {
  const PairManifest manifest = read_manifest(manifest_path(cfg, opts));
  const std::vector<const PairEntry*> active = manifest.active();
  if (active.empty()) throw UsageError("pair manifest has no active pairs");
  cfg.validate_dataset(false, true);
  const Dataset ds = load_cameras(cfg);

  std::vector<std::string> ids;
  for (const PairEntry* p : active) ids.push_back(p->pair_id);

  std::string prep_error;
  PointCloud cloud;
  RayIndex index;
  try {
    cloud = remove_isolated(keep_first_echo(load_cloud(cfg.cloud)), cfg.isolation_radius);
    index = build_ray_index(filter_steep_triangles(triangulate_xy(cloud), cfg.dz_max));
  } catch (const Error& e) {
    prep_error = e.what();
  }

  struct Counts {
    std::size_t samples = 0, seen = 0, occ = 0;
  };
  std::vector<Counts> counts(active.size());
  fs::create_directories(cfg.output / "pairs");
  const std::vector<std::string> errors = run_isolated(active.size(), workers_of(cfg), [&](std::size_t i) {
    if (!prep_error.empty()) throw DegenerateInput(prep_error);
    const PairEntry& p = *active[i];
    const EpipolarGeometry geom = rectify_pair(ds.cameras.at(p.left), ds.cameras.at(p.right));
    GtGenOptions go = cfg.gtgen;
    go.workers = 1;
    SparseDisparityMap map = generate_gt(cloud, index, geom, go, p.pair_id);
    if (cfg.alpha_enabled) map = alpha_filter(map, cfg.alpha);
    const fs::path dir = cfg.output / "pairs" / p.pair_id;
    fs::create_directories(dir);
    write_gt(dir / "gt.txt", map);
    write_gt_pfm(dir / "gt.pfm", map);
    counts[i] = {map.size(), map.count(Visibility::kSeen), map.count(Visibility::kOccludedRight)};
  });

  std::ofstream csv(cfg.output / "gt_summary.csv");
  if (!csv) throw IoError("cannot write " + (cfg.output / "gt_summary.csv").string());
  csv << "pair_id,status,samples,seen,occ,occ_ratio,error\n";
  for (std::size_t i = 0; i < active.size(); ++i) {
    const Counts& c = counts[i];
    const double ratio = c.samples ? static_cast<double>(c.occ) / static_cast<double>(c.samples) : 0.0;
    csv << ids[i] << ',' << (errors[i].empty() ? "ok" : "failed") << ',' << c.samples << ',' << c.seen << ','
        << c.occ << ',' << fmt(ratio) << ',' << csv_safe(errors[i]) << '\n';
  }
  return report_failures("gen-gt", ids, errors);
}

int cmd_match(const PipelineConfig& cfg, const CommandOptions& opts) {
  const PairManifest manifest = read_manifest(manifest_path(cfg, opts));
  const std::vector<const PairEntry*> active = manifest.active();
  cfg.validate_dataset(true, false);
  const Dataset ds = load_cameras(cfg);
  const fs::path out_dir = opts.predictions ? *opts.predictions : baseline_predictions_dir(cfg);
  fs::create_directories(out_dir);

  std::vector<std::string> ids;
  for (const PairEntry* p : active) ids.push_back(p->pair_id);
  SgmParams params = cfg.sgm;
  params.workers = 1;
  const std::vector<std::string> errors = run_isolated(active.size(), workers_of(cfg), [&](std::size_t i) {
    const PairEntry& p = *active[i];
    const OrientedCamera& lc = ds.cameras.at(p.left);
    const OrientedCamera& rc = ds.cameras.at(p.right);
    const EpipolarGeometry geom = rectify_pair(lc, rc);
    const RectifiedImage left = resample_rectified(read_png_gray(ds.images.at(p.left)), lc, geom, Side::kLeft);
    const RectifiedImage right = resample_rectified(read_png_gray(ds.images.at(p.right)), rc, geom, Side::kRight);
    DisparityResult res = match_pair(left.image, right.image, params);
    for (int y = 0; y < res.disparity.height(); ++y)
      for (int x = 0; x < res.disparity.width(); ++x)
        if (!left.valid(x, y)) res.disparity(x, y) = std::numeric_limits<float>::infinity();
    write_pfm(prediction_file(out_dir, p.pair_id), res.disparity);
  });

  json done = json::array();
  for (std::size_t i = 0; i < ids.size(); ++i)
    if (errors[i].empty()) done.push_back(ids[i]);
  json sidecar = {{"method", "sgm"},
                  {"census_window", cfg.sgm.census_window},
                  {"d_max", cfg.sgm.d_max},
                  {"p1", cfg.sgm.p1},
                  {"p2", cfg.sgm.p2},
                  {"paths", cfg.sgm.paths},
                  {"lr_check_tol", cfg.sgm.lr_check_tol ? json(*cfg.sgm.lr_check_tol) : json(nullptr)},
                  {"subpixel", cfg.sgm.subpixel},
                  {"pairs", done}};
  write_json_file(out_dir / "sgm_params.json", sidecar);
  return report_failures("match", ids, errors);
}

int cmd_filter(const PipelineConfig& cfg, const CommandOptions& opts) {
  if (opts.stage != 1 && opts.stage != 2) throw UsageError("--stage must be 1 or 2");
  if (opts.stage == 2 && !opts.predictions) throw UsageError("filter --stage 2 requires --predictions <dir>");
  const fs::path mpath = manifest_path(cfg, opts);
  PairManifest manifest = read_manifest(mpath);
  const std::vector<const PairEntry*> active = manifest.active();
  const fs::path pred_dir = opts.predictions ? *opts.predictions : baseline_predictions_dir(cfg);

  std::vector<std::string> ids;
  for (const PairEntry* p : active) ids.push_back(p->pair_id);
  std::vector<std::optional<PairEvaluation>> evals(active.size());
  const MetricSpec spec{{1.0}, false};
  const std::vector<std::string> errors = run_isolated(active.size(), workers_of(cfg), [&](std::size_t i) {
    const SparseDisparityMap gt = read_gt(gt_path(cfg, ids[i]));
    evals[i] = evaluate_pair(load_prediction(pred_dir, ids[i]), gt, spec, Split::kAll);
  });

  std::vector<FilterVerdict> verdicts;
  if (opts.stage == 1) {
    std::vector<PairEvaluation> ok;
    for (const auto& e : evals)
      if (e) ok.push_back(*e);
    verdicts = change_filter_stage1(ok, cfg.stage1_threshold);
  } else {
    std::vector<std::string> ok_ids;
    std::map<std::string, PairEvaluation> by_id;
    for (std::size_t i = 0; i < ids.size(); ++i) {
      if (!evals[i]) continue;
      ok_ids.push_back(ids[i]);
      by_id.emplace(ids[i], *evals[i]);
    }
    verdicts = change_filter_stage2(ok_ids, by_id, cfg.stage2_threshold);
  }

  const PairStatus dropped = opts.stage == 1 ? PairStatus::kDroppedStage1 : PairStatus::kDroppedStage2;
  const fs::path log = cfg.output / ("filter_stage" + std::to_string(opts.stage) + ".csv");
  fs::create_directories(cfg.output);
  std::ofstream csv(log);
  if (!csv) throw IoError("cannot write " + log.string());
  csv << "pair_id,one_pixel_error,threshold\n";
  for (const FilterVerdict& v : verdicts) {
    if (!v.dropped) continue;
    manifest.set_status(v.pair_id, dropped);
    csv << v.pair_id << ',' << fmt(v.one_pixel_error) << ',' << fmt(v.threshold) << '\n';
  }
  write_manifest(mpath, manifest);
  return report_failures("filter", ids, errors);
}

int cmd_eval(const PipelineConfig& cfg, const CommandOptions& opts) {
  const PairManifest manifest = read_manifest(manifest_path(cfg, opts));
  const std::vector<const PairEntry*> active = manifest.active();
  if (active.empty()) throw UsageError("pair manifest has no active pairs");
  const fs::path pred_dir = opts.predictions ? *opts.predictions : baseline_predictions_dir(cfg);

  std::vector<std::string> ids;
  for (const PairEntry* p : active) ids.push_back(p->pair_id);
  const std::array<Split, 3> splits{Split::kAll, Split::kSeen, Split::kOccluded};
  std::vector<std::array<std::optional<PairEvaluation>, 3>> evals(active.size());
  auto evaluate_set = [&](const fs::path& dir) {
    evals.assign(active.size(), {});
    return run_isolated(active.size(), workers_of(cfg), [&](std::size_t i) {
      const SparseDisparityMap gt = read_gt(gt_path(cfg, ids[i]));
      const ImageF pred = load_prediction(dir, ids[i]);
      for (std::size_t s = 0; s < splits.size(); ++s) {
        try {
          evals[i][s] = evaluate_pair(pred, gt, cfg.metrics, splits[s]);
        } catch (const EmptySelection&) {
          if (splits[s] == Split::kAll) throw;
        }
      }
    });
  };
  const std::vector<std::string> errors = evaluate_set(pred_dir);

  const fs::path out_dir = cfg.output / "eval" / opts.method;
  fs::create_directories(out_dir);
  std::vector<PairEvaluation> rows;
  std::array<std::vector<PairEvaluation>, 3> per_split;
  for (const auto& e : evals)
    for (std::size_t s = 0; s < splits.size(); ++s)
      if (e[s]) {
        rows.push_back(*e[s]);
        per_split[s].push_back(*e[s]);
      }
  write_pair_metrics_csv(out_dir / "pairs.csv", rows);

  std::vector<PairEvaluation> pooled;
  std::vector<CurveSeries> curves;
  for (std::size_t s = 0; s < splits.size(); ++s) {
    if (per_split[s].empty()) continue;
    pooled.push_back(pool_evaluations(per_split[s], "pooled"));
    curves.push_back({opts.method + " " + to_string(splits[s]), pooled.back().thresholds, pooled.back().fraction_within});
  }
  write_pair_metrics_csv(out_dir / "pooled.csv", pooled);
  write_histogram_svg(out_dir / "curve.svg", curves);
  int status = report_failures("eval", ids, errors);

  if (!cfg.prediction_sets.empty()) {
    std::vector<LabeledEvaluation> labeled;
    for (const PredictionSet& set : cfg.prediction_sets) {
      const std::vector<std::string> set_errors = evaluate_set(set.directory);
      status = std::max(status, report_failures("eval " + set.method, ids, set_errors));
      std::vector<PairEvaluation> all;
      for (const auto& e : evals)
        if (e[0]) all.push_back(*e[0]);
      if (all.empty()) continue;
      labeled.push_back({set.test_dataset, set.method, set.train_dataset, pool_evaluations(all, set.method)});
    }
    write_shift_gain_csv(cfg.output / "eval" / "shift_gain.csv",
                         shift_gain_matrix(labeled, cfg.baseline_method, cfg.shift_gain_n));
  }
  return status;
}

int cmd_synth(const PipelineConfig& cfg, const CommandOptions&) {
  if (!cfg.synth) throw ConfigError(cfg.config_path.string() + ": synth section is required");
  SynthRecipe recipe = *cfg.synth;
  recipe.seed = cfg.seed;
  recipe.validate();
  const fs::path out = cfg.output;
  fs::create_directories(out / "poses");
  fs::create_directories(out / "images");

  const std::vector<OrientedCamera> truth = synth_cameras(recipe);
  const bool perturbed = recipe.perturb_rotation_deg > 0.0 || recipe.perturb_translation_m > 0.0;
  const std::vector<OrientedCamera> written =
      perturbed ? perturb_cameras(truth, recipe.perturb_rotation_deg, recipe.perturb_translation_m, recipe.seed)
          : truth;
  std::vector<std::string> ids;
  for (std::size_t k = 0; k < truth.size(); ++k) {
    char buf[16];
    std::snprintf(buf, sizeof(buf), "c%02zu", k);
    ids.emplace_back(buf);
  }

  const PointCloud cloud = synth_cloud(recipe);
  write_ply(out / "cloud.ply", cloud, PlyEncoding::kBinaryLittleEndian);
  write_mesh_ply(out / "scene_mesh.ply", scene_mesh(recipe));
  write_tiepoints(out / "tiepoints.json", synth_tiepoints(recipe, cloud, truth));
  parallel_for(truth.size(), workers_of(cfg), [&](std::size_t begin, std::size_t end) {
    for (std::size_t k = begin; k < end; ++k) {
      write_png8(out / "images" / (ids[k] + ".png"), render_view(recipe, truth[k]));
      write_pose(out / "poses" / (ids[k] + ".json"), written[k]);
    }
  });
  if (perturbed) {
    fs::create_directories(out / "poses_true");
    for (std::size_t k = 0; k < truth.size(); ++k) write_pose(out / "poses_true" / (ids[k] + ".json"), truth[k]);
  }

  json config = read_json_file(cfg.config_path);
  config.erase("synth");
  config["output"] = ".";
  config["seed"] = cfg.seed;
  json cams = json::array();
  for (const std::string& id : ids)
    cams.push_back({{"id", id}, {"pose", "poses/" + id + ".json"}, {"image", "images/" + id + ".png"}});
  config["dataset"] = {{"cloud", "cloud.ply"}, {"cameras", cams}, {"tiepoints", "tiepoints.json"}};
  write_json_file(out / "config.json", config);
  return 0;
}

int cmd_report(const PipelineConfig& cfg, const CommandOptions& opts) {
  const PairManifest manifest = read_manifest(manifest_path(cfg, opts));
  std::map<std::string, int> by_status;
  std::map<std::string, int> by_bin;
  std::vector<BinnedPair> binned;
  std::size_t samples = 0, seen = 0, occ = 0;
  json pairs = json::array();
  for (const PairEntry& p : manifest.pairs()) {
    ++by_status[to_string(p.status)];
    const char* bin = p.bin ? to_string(*p.bin) : "none";
    json row = {{"pair_id", p.pair_id}, {"status", to_string(p.status)}, {"bh_bin", bin}};
    if (p.status == PairStatus::kActive) {
      ++by_bin[bin];
      if (p.bin) binned.push_back({p.pair_id, *p.bin});
      const fs::path gt = gt_path(cfg, p.pair_id);
      if (fs::exists(gt)) {
        const SparseDisparityMap map = read_gt(gt);
        samples += map.size();
        seen += map.count(Visibility::kSeen);
        occ += map.count(Visibility::kOccludedRight);
        row["samples"] = map.size();
      }
    }
    pairs.push_back(row);
  }
  json compositions = json::object();
  for (const char* name : {"small", "middle", "large", "fusion", "ave", "random", "all", "full"})
    compositions[name] = compose_training_set(binned, name, cfg.seed, cfg.training_cap);
  const json report = {{"pairs", pairs},
                       {"status_counts", by_status},
                       {"active_bin_counts", by_bin},
                       {"gt_samples", {{"total", samples}, {"seen", seen}, {"occ", occ}}},
                       {"training_sets", compositions},
                       {"training_cap", cfg.training_cap},
                       {"seed", cfg.seed}};
  fs::create_directories(cfg.output);
  write_json_file(cfg.output / "report.json", report);
  return 0;
}

}  // namespace gtforge
