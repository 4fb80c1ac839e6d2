// SPDX-License-Identifier: Apache-2.0
#include "pcsot/synthdata.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <sstream>

#include "pcsot/rng.hpp"

#include <json.hpp>

namespace fs = std::filesystem;

namespace pcsot {

void CategorySpec::validate() const {
  if (name.empty()) throw ConfigError("CategorySpec: name required");
  if (w_min > w_max || l_min > l_max || h_min > h_max)
    throw ConfigError("CategorySpec: min must not exceed max");
  if (w_min <= 0 || l_min <= 0 || h_min <= 0)
    throw ConfigError("CategorySpec: sizes must be positive");
  if (density <= 0) throw ConfigError("CategorySpec: density must be positive");
  if (noise_sigma < 0) throw ConfigError("CategorySpec: sigma must be >= 0");
  if (dropout < 0 || dropout >= 1)
    throw ConfigError("CategorySpec: dropout must be in [0, 1)");
  if (speed_min < 0 || speed_min > speed_max)
    throw ConfigError("CategorySpec: bad speed range");
}

namespace {

// One surface point in the unit box [-1/2, 1/2]^3 of the object, scaled to
// (w, l, h) by the caller.
Vec3 sample_shape_point(ShapeKind shape, double w, double l, double h, Rng& rng,
                        double articulation_rad) {
  switch (shape) {
    case ShapeKind::kCuboidShell:
    case ShapeKind::kThinSlab: {
      // sides + top, area weighted
      const double a_top = w * l;
      const double a_front = l * h;  // two faces at x = +-w/2
      const double a_side = w * h;   // two faces at y = +-l/2
      const double total = a_top + 2 * a_front + 2 * a_side;
      double pick = rng.uniform(0, total);
      if (pick < a_top)
        return {rng.uniform(-w / 2, w / 2), rng.uniform(-l / 2, l / 2), h / 2};
      pick -= a_top;
      if (pick < 2 * a_front) {
        const double sign = pick < a_front ? 1.0 : -1.0;
        return {sign * w / 2, rng.uniform(-l / 2, l / 2), rng.uniform(-h / 2, h / 2)};
      }
      pick -= 2 * a_front;
      const double sign = pick < a_side ? 1.0 : -1.0;
      return {rng.uniform(-w / 2, w / 2), sign * l / 2, rng.uniform(-h / 2, h / 2)};
    }
    case ShapeKind::kCylinderSphere: {
      // body cylinder up to 0.7h, head sphere on top
      const double r_body = 0.45 * std::min(w, l);
      const double r_head = 0.14 * h;
      const double body_h = 0.7 * h;
      const double a_body = 2 * M_PI * r_body * body_h;
      const double a_head = 4 * M_PI * r_head * r_head;
      if (rng.uniform() < a_body / (a_body + a_head)) {
        const double ang = rng.uniform(0, 2 * M_PI);
        const double z = rng.uniform(-h / 2, -h / 2 + body_h);
        return {r_body * std::cos(ang), r_body * std::sin(ang), z};
      }
      // uniform on the head sphere
      const double u = rng.uniform(-1, 1);
      const double ang = rng.uniform(0, 2 * M_PI);
      const double rr = std::sqrt(1 - u * u);
      const double cz = h / 2 - r_head;  // head center below the box top
      return {r_head * rr * std::cos(ang), r_head * rr * std::sin(ang),
              cz + r_head * u};
    }
    case ShapeKind::kLBracket: {
      // horizontal deck plus a rear wall that tilts inward about its base
      const double deck_h = 0.45 * h;
      const double wall_w = 0.3 * w;
      const double a_deck = w * l;
      const double a_wall = wall_w * l + l * h + wall_w * h;
      if (rng.uniform() < a_deck / (a_deck + a_wall)) {
        return {rng.uniform(-w / 2, w / 2), rng.uniform(-l / 2, l / 2),
                -h / 2 + deck_h};
      }
      // wall occupies x in [-w/2, -w/2 + wall_w], full height
      Vec3 p{rng.uniform(-w / 2, -w / 2 + wall_w), rng.uniform(-l / 2, l / 2),
             rng.uniform(-h / 2, h / 2)};
      if (articulation_rad > 0) {
        // rotate about the y-axis line (x = -w/2, z = -h/2), leaning +x
        const double c = std::cos(articulation_rad), s = std::sin(articulation_rad);
        const double dx = p.x + w / 2, dz = p.z + h / 2;
        p.x = -w / 2 + c * dx + s * dz;
        p.z = -h / 2 - s * dx + c * dz;
        // keep the articulated geometry inside the nominal box
        p.x = std::clamp(p.x, -w / 2, w / 2);
        p.z = std::clamp(p.z, -h / 2, h / 2);
      }
      return p;
    }
  }
  return {};
}

struct Trajectory {
  MotionKind kind;
  Vec3 start;
  double speed = 0;
  double heading = 0;  // base direction
  double weave_amp = 0, weave_omega = 0;
  int go_frames = 3, stop_frames = 2;

  // center and yaw at frame t (t = 0, 1, ...)
  void pose(int t, Vec3* center, double* yaw) const {
    const double dx = std::cos(heading), dy = std::sin(heading);
    switch (kind) {
      case MotionKind::kConstantVelocity: {
        *center = {start.x + speed * t * dx, start.y + speed * t * dy, start.z};
        *yaw = heading;
        return;
      }
      case MotionKind::kStopAndGo: {
        const int cycle = go_frames + stop_frames;
        const int full = t / cycle;
        const int rem = t % cycle;
        const double moved = full * go_frames + std::min(rem, go_frames);
        *center = {start.x + speed * moved * dx, start.y + speed * moved * dy,
                   start.z};
        *yaw = heading;
        return;
      }
      case MotionKind::kWeaving: {
        const double px = -dy, py = dx;  // unit lateral
        const double s = speed * t;
        const double off = weave_amp * std::sin(weave_omega * t);
        *center = {start.x + s * dx + off * px, start.y + s * dy + off * py, start.z};
        // heading of the instantaneous velocity
        const double doff = weave_amp * weave_omega * std::cos(weave_omega * t);
        *yaw = std::atan2(speed * dy + doff * py, speed * dx + doff * px);
        return;
      }
    }
  }
};

}  // namespace

Sequence generate_sequence(const CategorySpec& spec, int length, std::uint64_t seed) {
  spec.validate();
  if (length < 2) throw ConfigError("generate_sequence: length must be >= 2");

  Rng rng(splitmix64(seed ^ 0x5eedf00dull));
  Sequence seq;
  seq.category = spec.name;
  seq.seed = seed;

  const double w = rng.uniform(spec.w_min, spec.w_max);
  const double l = rng.uniform(spec.l_min, spec.l_max);
  const double h = rng.uniform(spec.h_min, spec.h_max);

  Trajectory traj;
  traj.kind = spec.motion;
  traj.start = {rng.uniform(-2, 2), rng.uniform(-2, 2), 0.0};
  traj.speed = rng.uniform(spec.speed_min, spec.speed_max);
  traj.heading = rng.uniform(-M_PI, M_PI);
  traj.go_frames = spec.go_frames;
  traj.stop_frames = spec.stop_frames;
  if (spec.motion == MotionKind::kWeaving) {
    traj.weave_amp = rng.uniform(spec.weave_amp_min, spec.weave_amp_max);
    const double period = rng.uniform(spec.weave_period_min, spec.weave_period_max);
    traj.weave_omega = 2 * M_PI / period;
  }

  // a fixed surface pattern unless the category is deformable-ish
  std::vector<Vec3> pattern;
  Rng pattern_rng = rng.fork(1);
  for (int i = 0; i < spec.density; ++i)
    pattern.push_back(sample_shape_point(spec.shape, w, l, h, pattern_rng, 0.0));

  Rng frame_rng = rng.fork(2);
  for (int t = 0; t < length; ++t) {
    Vec3 center;
    double yaw = 0;
    traj.pose(t, &center, &yaw);
    Box3D gt(center, yaw, w, l, h);

    Frame frame;
    frame.gt = gt;

    std::vector<Vec3> local;
    if (spec.resample_pattern || spec.articulation_deg > 0) {
      const double art =
          spec.articulation_deg * M_PI / 180.0 *
          (0.5 + 0.5 * std::sin(0.9 * t));  // slow inward flex over time
      Rng shape_rng = frame_rng.fork(static_cast<std::uint64_t>(t) * 2 + 1);
      for (int i = 0; i < spec.density; ++i)
        local.push_back(sample_shape_point(spec.shape, w, l, h, shape_rng,
                                           spec.articulation_deg > 0 ? art : 0.0));
    } else {
      local = pattern;
    }

    Rng noise_rng = frame_rng.fork(static_cast<std::uint64_t>(t) * 2);
    for (const Vec3& p : local) {
      if (noise_rng.uniform() < spec.dropout) continue;
      // pull face points a hair inside so the world/local round trip
      // cannot flip their containment
      Vec3 noisy = p * (1.0 - 1e-9);
      if (spec.noise_sigma > 0) {
        noisy.x += noise_rng.normal() * spec.noise_sigma;
        noisy.y += noise_rng.normal() * spec.noise_sigma;
        noisy.z += noise_rng.normal() * spec.noise_sigma;
      }
      frame.cloud.points.push_back(from_box_frame(noisy, gt));
    }
    for (int i = 0; i < spec.clutter_points; ++i) {
      frame.cloud.points.push_back(
          {noise_rng.uniform(-spec.clutter_extent, spec.clutter_extent),
           noise_rng.uniform(-spec.clutter_extent, spec.clutter_extent),
           noise_rng.uniform(-spec.clutter_extent, spec.clutter_extent)});
    }
    seq.frames.push_back(std::move(frame));
  }
  return seq;
}

// ---- on-disk format -----------------------------------------------------------

namespace {

std::string fmt9(double v) {
  char buf[40];
  std::snprintf(buf, sizeof(buf), "%.9f", v);
  return buf;
}

double parse_double(const std::string& tok, const fs::path& file, int line) {
  try {
    std::size_t used = 0;
    const double v = std::stod(tok, &used);
    if (used != tok.size()) throw std::invalid_argument("trailing");
    return v;
  } catch (const std::exception&) {
    throw FormatError("bad number '" + tok + "' in " + file.string() + " line " +
                      std::to_string(line));
  }
}

std::vector<double> split_csv_line(const std::string& line, int expect,
                                   const fs::path& file, int lineno) {
  std::vector<double> out;
  std::stringstream ss(line);
  std::string tok;
  while (std::getline(ss, tok, ',')) out.push_back(parse_double(tok, file, lineno));
  if (static_cast<int>(out.size()) != expect)
    throw FormatError("expected " + std::to_string(expect) + " fields in " +
                      file.string() + " line " + std::to_string(lineno));
  return out;
}

}  // namespace

void write_sequence(const Sequence& seq, const fs::path& dir) {
  std::error_code ec;
  fs::create_directories(dir, ec);
  if (ec) throw IoError("cannot create " + dir.string() + ": " + ec.message());

  nlohmann::json meta;
  meta["category"] = seq.category;
  meta["num_frames"] = seq.frames.size();
  meta["seed"] = seq.seed;
  {
    std::ofstream out(dir / "meta.json");
    if (!out) throw IoError("cannot write " + (dir / "meta.json").string());
    out << meta.dump() << "\n";
  }
  {
    std::ofstream out(dir / "gt.csv");
    if (!out) throw IoError("cannot write " + (dir / "gt.csv").string());
    for (const Frame& f : seq.frames) {
      out << fmt9(f.gt.center.x) << "," << fmt9(f.gt.center.y) << ","
          << fmt9(f.gt.center.z) << "," << fmt9(f.gt.yaw) << "," << fmt9(f.gt.w)
          << "," << fmt9(f.gt.l) << "," << fmt9(f.gt.h) << "\n";
    }
  }
  for (std::size_t t = 0; t < seq.frames.size(); ++t) {
    char name[32];
    std::snprintf(name, sizeof(name), "frame_%04zu.csv", t);
    std::ofstream out(dir / name);
    if (!out) throw IoError("cannot write " + (dir / name).string());
    for (const Vec3& p : seq.frames[t].cloud.points)
      out << fmt9(p.x) << "," << fmt9(p.y) << "," << fmt9(p.z) << "\n";
  }
}

Sequence read_sequence(const fs::path& dir) {
  const fs::path meta_path = dir / "meta.json";
  std::ifstream meta_in(meta_path);
  if (!meta_in) throw IoError("missing " + meta_path.string());
  nlohmann::json meta;
  try {
    meta_in >> meta;
  } catch (const nlohmann::json::exception& e) {
    throw FormatError("bad json in " + meta_path.string() + ": " + e.what());
  }
  Sequence seq;
  try {
    seq.category = meta.at("category").get<std::string>();
    seq.seed = meta.at("seed").get<std::uint64_t>();
  } catch (const nlohmann::json::exception& e) {
    throw FormatError("bad meta in " + meta_path.string() + ": " + e.what());
  }
  const auto num_frames = meta.at("num_frames").get<std::size_t>();
  seq.name = dir.filename().string();

  const fs::path gt_path = dir / "gt.csv";
  std::ifstream gt_in(gt_path);
  if (!gt_in) throw IoError("missing " + gt_path.string());
  std::vector<Box3D> boxes;
  std::string line;
  int lineno = 0;
  while (std::getline(gt_in, line)) {
    ++lineno;
    if (line.empty()) continue;
    const auto v = split_csv_line(line, 7, gt_path, lineno);
    boxes.emplace_back(Vec3{v[0], v[1], v[2]}, v[3], v[4], v[5], v[6]);
  }
  if (boxes.size() != num_frames)
    throw FormatError(gt_path.string() + ": expected " + std::to_string(num_frames) +
                      " rows, found " + std::to_string(boxes.size()));

  for (std::size_t t = 0; t < num_frames; ++t) {
    char name[32];
    std::snprintf(name, sizeof(name), "frame_%04zu.csv", t);
    const fs::path fpath = dir / name;
    std::ifstream fin(fpath);
    if (!fin) throw IoError("missing " + fpath.string());
    Frame frame;
    frame.gt = boxes[t];
    lineno = 0;
    while (std::getline(fin, line)) {
      ++lineno;
      if (line.empty()) continue;  // empty frame files are valid
      const auto v = split_csv_line(line, 3, fpath, lineno);
      frame.cloud.points.push_back({v[0], v[1], v[2]});
    }
    seq.frames.push_back(std::move(frame));
  }
  return seq;
}

std::vector<CategorySpec> desk_category_specs() {
  std::vector<CategorySpec> specs(4);

  specs[0].name = "boxcar";  // large rigid shell, straight mover
  specs[0].shape = ShapeKind::kCuboidShell;
  specs[0].motion = MotionKind::kConstantVelocity;
  specs[0].w_min = 3.6;
  specs[0].w_max = 4.4;
  specs[0].l_min = 1.6;
  specs[0].l_max = 2.0;
  specs[0].h_min = 1.4;
  specs[0].h_max = 1.7;
  specs[0].speed_min = 0.35;
  specs[0].speed_max = 0.7;
  specs[0].density = 110;
  specs[0].dropout = 0.08;
  specs[0].noise_sigma = 0.012;

  specs[1].name = "walker";  // small, deformable-ish, stop-and-go
  specs[1].shape = ShapeKind::kCylinderSphere;
  specs[1].motion = MotionKind::kStopAndGo;
  specs[1].w_min = 0.55;
  specs[1].w_max = 0.8;
  specs[1].l_min = 0.55;
  specs[1].l_max = 0.8;
  specs[1].h_min = 1.5;
  specs[1].h_max = 1.9;
  specs[1].speed_min = 0.25;
  specs[1].speed_max = 0.45;
  specs[1].density = 60;
  specs[1].dropout = 0.15;
  specs[1].noise_sigma = 0.02;
  specs[1].resample_pattern = true;

  specs[2].name = "slab";  // thin elongated profile, weaving mover
  specs[2].shape = ShapeKind::kThinSlab;
  specs[2].motion = MotionKind::kWeaving;
  specs[2].w_min = 2.2;
  specs[2].w_max = 3.0;
  specs[2].l_min = 0.25;
  specs[2].l_max = 0.45;
  specs[2].h_min = 1.1;
  specs[2].h_max = 1.5;
  specs[2].speed_min = 0.3;
  specs[2].speed_max = 0.55;
  specs[2].density = 70;
  specs[2].dropout = 0.1;
  specs[2].noise_sigma = 0.015;

  specs[3].name = "bracket";  // articulated L profile, long and boxy
  specs[3].shape = ShapeKind::kLBracket;
  specs[3].motion = MotionKind::kConstantVelocity;
  specs[3].w_min = 4.4;
  specs[3].w_max = 5.4;
  specs[3].l_min = 1.9;
  specs[3].l_max = 2.3;
  specs[3].h_min = 1.7;
  specs[3].h_max = 2.1;
  specs[3].speed_min = 0.3;
  specs[3].speed_max = 0.6;
  specs[3].density = 100;
  specs[3].dropout = 0.1;
  specs[3].noise_sigma = 0.015;
  specs[3].articulation_deg = 8.0;

  return specs;
}

DeskDataset make_desk_dataset(std::uint64_t seed, int train_per_category,
                              int heldout_per_category, int length) {
  DeskDataset ds;
  const auto specs = desk_category_specs();
  for (std::size_t c = 0; c < specs.size(); ++c) {
    for (int i = 0; i < train_per_category + heldout_per_category; ++i) {
      const std::uint64_t seq_seed =
          splitmix64(seed + 1000003ull * c + static_cast<std::uint64_t>(i));
      Sequence seq = generate_sequence(specs[c], length, seq_seed);
      char buf[64];
      std::snprintf(buf, sizeof(buf), "%s_%04d", specs[c].name.c_str(), i);
      seq.name = buf;
      (i < train_per_category ? ds.train : ds.heldout).push_back(std::move(seq));
    }
  }
  return ds;
}

void write_dataset(const DeskDataset& ds, const fs::path& dir) {
  for (const Sequence& s : ds.train) write_sequence(s, dir / "train" / s.name);
  for (const Sequence& s : ds.heldout) write_sequence(s, dir / "heldout" / s.name);
}

std::vector<Sequence> read_dataset_split(const fs::path& split_dir) {
  if (!fs::exists(split_dir)) throw IoError("missing directory " + split_dir.string());
  std::vector<fs::path> dirs;
  for (const auto& entry : fs::directory_iterator(split_dir))
    if (entry.is_directory()) dirs.push_back(entry.path());
  std::sort(dirs.begin(), dirs.end());
  std::vector<Sequence> out;
  for (const auto& d : dirs) out.push_back(read_sequence(d));
  return out;
}

}  // namespace pcsot
