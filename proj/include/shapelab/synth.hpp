#pragma once

#include <array>
#include <cstdint>
#include <vector>

#include "shapelab/boxassoc.hpp"
#include "shapelab/metrics.hpp"
#include "shapelab/rng.hpp"

namespace shapelab {

// Labeled synthetic point cloud. Instance id -1 marks clutter; every other
// instance id owns exactly one ground-truth box, the min/max hull of its
// points.
struct Scene {
  int num_points = 0;
  int channels = 3;  // xyz, optionally +3 color
  int num_classes = 3;
  std::vector<double> points;     // N x channels, row-major
  std::vector<int> instance_ids;  // -1 = clutter
  std::vector<int> semantic_ids;
  std::vector<BBox> gt_boxes;  // indexed by instance id

  int num_instances() const { return static_cast<int>(gt_boxes.size()); }
  Tensor xyz_tensor() const;       // N x 3
  Tensor features_tensor() const;  // N x channels
  std::array<double, 3> point(int i) const;
  // Binary point membership per instance.
  std::vector<std::vector<double>> instance_masks() const;
  void validate() const;
};

struct SynthConfig {
  std::uint64_t seed = 1;

  // Multi-view side.
  int grid_dim = 8;           // D, latent occupancy grid
  int samples = 64;           // dataset size
  int views_per_sample = 8;   // V
  int view_dim = 48;          // width of each projected view
  double noise_sigma = 0.1;

  // Scene side.
  double extent_x = 4.0, extent_y = 4.0, extent_z = 2.0;  // meters
  int min_objects = 2, max_objects = 5;
  int points_per_scene = 512;
  double clutter_fraction = 0.1;
  int scenes = 64;
  // Class-correlated appearance channels; semantic labels are not learnable
  // from coordinates alone.
  bool with_color = false;

  void validate() const;
  std::array<double, 6> extent() const { return {0, 0, 0, extent_x, extent_y, extent_z}; }
};

// One multi-view training item: V noisy linear projections of a latent
// binary shape, plus the shape itself as the target.
struct MultiViewSample {
  int view_count = 0;
  int view_dim = 0;
  int grid_dim = 0;
  std::vector<double> views;   // V x view_dim, row-major
  std::vector<double> target;  // grid_dim^3 binary occupancy

  Tensor view_rows(int n) const;  // first n views as an n x view_dim tensor
};

struct MultiViewDataset {
  SynthConfig config;
  std::vector<MultiViewSample> samples;
};

// Random solid cuboid, at least 2 cells per side, interior filled.
VoxelGrid make_voxel_shape(const SynthConfig& cfg, Rng& rng);

// One fixed random projection matrix per view index, shared by every sample
// of a dataset.
std::vector<std::vector<double>> make_projection_bank(const SynthConfig& cfg, Rng& rng);

MultiViewSample make_view_set(const VoxelGrid& shape, const SynthConfig& cfg,
                              const std::vector<std::vector<double>>& projections, Rng& rng);

// 2-5 axis-aligned boxes and ellipsoids dropped into the extent with points
// sampled on them, plus uniform clutter.
Scene make_scene(const SynthConfig& cfg, Rng& rng);

// Occupancy binning. Cells are open below and closed above, so points on a
// shared face land in the lower-index cell; the extreme faces of the extent
// are closed.
VoxelGrid voxelize_points(const std::vector<double>& points_xyz, int dim,
                          const std::array<double, 6>& extent);
int voxel_cell_index(double v, double lo, double hi, int dim);

// Depth-style culling: keep, per transverse column, only the points of the
// frontmost occupied cell along a random axis direction. Returns retained
// point indices in ascending order.
std::vector<int> partial_view(const std::vector<double>& points_xyz,
                              const std::array<double, 6>& extent, Rng& rng, int columns = 32);

// Whole datasets, derived deterministically from cfg.seed.
MultiViewDataset make_multiview_dataset(const SynthConfig& cfg);
std::vector<Scene> make_scene_dataset(const SynthConfig& cfg);

}  // namespace shapelab
