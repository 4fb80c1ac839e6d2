// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <cstdint>
#include <filesystem>
#include <string>
#include <vector>

#include "pcsot/geometry.hpp"

namespace pcsot {

enum class ShapeKind { kCuboidShell, kCylinderSphere, kThinSlab, kLBracket };
enum class MotionKind { kConstantVelocity, kStopAndGo, kWeaving };

// Generator recipe for one object category. Sizes follow the box
// convention: w along heading, l lateral, h vertical.
struct CategorySpec {
  std::string name;
  ShapeKind shape = ShapeKind::kCuboidShell;
  MotionKind motion = MotionKind::kConstantVelocity;
  double w_min = 1, w_max = 1;
  double l_min = 1, l_max = 1;
  double h_min = 1, h_max = 1;
  double speed_min = 0.3, speed_max = 0.6;  // meters per frame
  int density = 80;          // object surface points per frame
  double dropout = 0.1;      // per-point drop probability
  double noise_sigma = 0.01;  // meters
  int clutter_points = 40;   // uniform distractors per frame
  double clutter_extent = 10.0;  // half-size of the clutter cube
  bool resample_pattern = false;  // redraw the surface pattern every frame
  double articulation_deg = 0.0;  // L-bracket wall tilt amplitude
  // weaving
  double weave_amp_min = 0.3, weave_amp_max = 0.6;
  double weave_period_min = 5, weave_period_max = 9;  // frames
  // stop-and-go
  int go_frames = 3, stop_frames = 2;

  void validate() const;
};

struct Frame {
  PointCloud cloud;
  Box3D gt;
};

struct Sequence {
  std::string category;
  std::string name;
  std::vector<Frame> frames;
  std::uint64_t seed = 0;
};

// Pure function of (spec, length, seed).
Sequence generate_sequence(const CategorySpec& spec, int length, std::uint64_t seed);

// Directory layout: meta.json, frame_%04d.csv ("x,y,z" per point, 9
// decimal digits), gt.csv ("x,y,z,yaw,w,l,h" per frame).
void write_sequence(const Sequence& seq, const std::filesystem::path& dir);
Sequence read_sequence(const std::filesystem::path& dir);

std::vector<CategorySpec> desk_category_specs();

struct DeskDataset {
  std::vector<Sequence> train;
  std::vector<Sequence> heldout;
};

DeskDataset make_desk_dataset(std::uint64_t seed, int train_per_category = 64,
                              int heldout_per_category = 16, int length = 10);

// dir/train/<name>/ and dir/heldout/<name>/
void write_dataset(const DeskDataset& ds, const std::filesystem::path& dir);
std::vector<Sequence> read_dataset_split(const std::filesystem::path& split_dir);

}  // namespace pcsot
