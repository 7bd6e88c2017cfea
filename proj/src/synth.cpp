#include "shapelab/synth.hpp"

#include <algorithm>
#include <cmath>
#include <stdexcept>
#include <string>

namespace shapelab {

namespace {

[[noreturn]] void fail(const std::string& msg) { throw std::invalid_argument(msg); }

}  // namespace

Tensor Scene::xyz_tensor() const {
  std::vector<double> xyz(static_cast<std::size_t>(num_points) * 3);
  for (int i = 0; i < num_points; ++i)
    for (int a = 0; a < 3; ++a)
      xyz[static_cast<std::size_t>(i) * 3 + a] = points[static_cast<std::size_t>(i) * channels + a];
  return Tensor::matrix(num_points, 3, std::move(xyz));
}

Tensor Scene::features_tensor() const {
  return Tensor::matrix(num_points, channels, points);
}

std::array<double, 3> Scene::point(int i) const {
  return {points[static_cast<std::size_t>(i) * channels],
          points[static_cast<std::size_t>(i) * channels + 1],
          points[static_cast<std::size_t>(i) * channels + 2]};
}

std::vector<std::vector<double>> Scene::instance_masks() const {
  std::vector<std::vector<double>> masks(gt_boxes.size(), std::vector<double>(num_points, 0.0));
  for (int i = 0; i < num_points; ++i)
    if (instance_ids[i] >= 0) masks[instance_ids[i]][i] = 1.0;
  return masks;
}

void Scene::validate() const {
  if (num_points < 1) fail("Scene: no points");
  if (points.size() != static_cast<std::size_t>(num_points) * channels)
    fail("Scene: point buffer size mismatch");
  if (instance_ids.size() != static_cast<std::size_t>(num_points) ||
      semantic_ids.size() != static_cast<std::size_t>(num_points))
    fail("Scene: label size mismatch");
  std::vector<std::vector<double>> hulls(gt_boxes.size());
  for (int i = 0; i < num_points; ++i) {
    const int inst = instance_ids[i];
    if (inst < -1 || inst >= num_instances()) fail("Scene: instance id out of range");
    if (semantic_ids[i] < 0 || semantic_ids[i] >= num_classes)
      fail("Scene: semantic id out of range");
    if (inst >= 0) {
      const auto p = point(i);
      hulls[inst].insert(hulls[inst].end(), p.begin(), p.end());
    }
  }
  for (int k = 0; k < num_instances(); ++k) {
    if (hulls[k].empty()) fail("Scene: instance " + std::to_string(k) + " has no points");
    const BBox hull = BBox::of_points(hulls[k]);
    for (int a = 0; a < 3; ++a)
      if (hull.vmin[a] != gt_boxes[k].vmin[a] || hull.vmax[a] != gt_boxes[k].vmax[a])
        fail("Scene: gt box " + std::to_string(k) + " is not the hull of its points");
  }
}

void SynthConfig::validate() const {
  if (grid_dim < 2) fail("SynthConfig: grid_dim must be >= 2");
  if (samples < 1 || views_per_sample < 1 || view_dim < 1) fail("SynthConfig: bad multi-view sizes");
  if (noise_sigma < 0) fail("SynthConfig: negative noise");
  if (extent_x <= 0 || extent_y <= 0 || extent_z <= 0) fail("SynthConfig: bad extent");
  if (min_objects < 1 || max_objects < min_objects) fail("SynthConfig: bad object range");
  if (points_per_scene < max_objects) fail("SynthConfig: too few points per scene");
  if (clutter_fraction < 0 || clutter_fraction >= 1) fail("SynthConfig: clutter fraction outside [0,1)");
  if (scenes < 1) fail("SynthConfig: scenes must be >= 1");
}

Tensor MultiViewSample::view_rows(int n) const {
  if (n < 1 || n > view_count)
    fail("MultiViewSample: requested " + std::to_string(n) + " of " + std::to_string(view_count) +
         " views");
  return Tensor::matrix(n, view_dim,
                        {views.begin(), views.begin() + static_cast<std::size_t>(n) * view_dim});
}

VoxelGrid make_voxel_shape(const SynthConfig& cfg, Rng& rng) {
  const int d = cfg.grid_dim;
  VoxelGrid g = VoxelGrid::zeros(d);
  int side[3], origin[3];
  for (int a = 0; a < 3; ++a) {
    side[a] = rng.uniform_int(2, d);
    origin[a] = rng.uniform_int(0, d - side[a]);
  }
  for (int x = origin[0]; x < origin[0] + side[0]; ++x)
    for (int y = origin[1]; y < origin[1] + side[1]; ++y)
      for (int z = origin[2]; z < origin[2] + side[2]; ++z) g.at(x, y, z) = 1.0;
  return g;
}

std::vector<std::vector<double>> make_projection_bank(const SynthConfig& cfg, Rng& rng) {
  const int cells = cfg.grid_dim * cfg.grid_dim * cfg.grid_dim;
  const double scale = 1.0 / std::sqrt(static_cast<double>(cells));
  std::vector<std::vector<double>> bank(cfg.views_per_sample);
  for (auto& p : bank) {
    p.resize(static_cast<std::size_t>(cfg.view_dim) * cells);
    for (auto& v : p) v = rng.normal(0.0, scale);
  }
  return bank;
}

MultiViewSample make_view_set(const VoxelGrid& shape, const SynthConfig& cfg,
                              const std::vector<std::vector<double>>& projections, Rng& rng) {
  if (static_cast<int>(projections.size()) != cfg.views_per_sample)
    fail("make_view_set: projection bank size mismatch");
  const int cells = shape.size();
  MultiViewSample s;
  s.view_count = cfg.views_per_sample;
  s.view_dim = cfg.view_dim;
  s.grid_dim = shape.dim;
  s.target = shape.values;
  s.views.resize(static_cast<std::size_t>(s.view_count) * s.view_dim);
  for (int v = 0; v < s.view_count; ++v) {
    const auto& p = projections[v];
    for (int r = 0; r < s.view_dim; ++r) {
      double acc = 0.0;
      const double* row = &p[static_cast<std::size_t>(r) * cells];
      for (int c = 0; c < cells; ++c) acc += row[c] * shape.values[c];
      s.views[static_cast<std::size_t>(v) * s.view_dim + r] = acc + rng.normal(0.0, cfg.noise_sigma);
    }
  }
  return s;
}

namespace {

struct ProtoObject {
  int semantic = 0;  // 0 box, 1 ellipsoid
  std::array<double, 3> center{};
  std::array<double, 3> half{};
};

bool cores_overlap(const ProtoObject& a, const ProtoObject& b) {
  // Cores shrunk to 60%: mild surface overlap allowed, heavy overlap is not.
  for (int ax = 0; ax < 3; ++ax)
    if (std::abs(a.center[ax] - b.center[ax]) >= 0.6 * (a.half[ax] + b.half[ax])) return false;
  return true;
}

}  // namespace

Scene make_scene(const SynthConfig& cfg, Rng& rng) {
  cfg.validate();
  const std::array<double, 3> ext{cfg.extent_x, cfg.extent_y, cfg.extent_z};
  const int num_objects = rng.uniform_int(cfg.min_objects, cfg.max_objects);

  std::vector<ProtoObject> objects;
  for (int k = 0; k < num_objects; ++k) {
    bool placed = false;
    for (int attempt = 0; attempt < 100 && !placed; ++attempt) {
      ProtoObject o;
      o.semantic = rng.uniform_int(0, 1);
      for (int a = 0; a < 3; ++a) {
        const double max_half = std::min(0.6, ext[a] * 0.3);
        o.half[a] = rng.uniform(0.25, max_half);
        o.center[a] = rng.uniform(o.half[a], ext[a] - o.half[a]);
      }
      placed = true;
      for (const auto& other : objects)
        if (cores_overlap(o, other)) placed = false;
      if (placed) objects.push_back(o);
    }
    if (!placed)
      throw std::runtime_error("make_scene: failed to place object " + std::to_string(k) +
                               " after 100 attempts (seed state exhausted)");
  }

  const int clutter = static_cast<int>(std::lround(cfg.points_per_scene * cfg.clutter_fraction));
  const int object_points = cfg.points_per_scene - clutter;

  struct RawPoint {
    std::array<double, 3> p;
    std::array<double, 3> color;
    int inst;
    int sem;
  };
  std::vector<RawPoint> raw;
  raw.reserve(cfg.points_per_scene);

  // One palette entry per semantic class, jittered per object and per point.
  const std::array<std::array<double, 3>, 3> palette{{{0.8, 0.2, 0.2}, {0.2, 0.8, 0.2}, {0.5, 0.5, 0.8}}};
  std::vector<std::array<double, 3>> object_color(objects.size());
  for (std::size_t k = 0; k < objects.size(); ++k)
    for (int a = 0; a < 3; ++a)
      object_color[k][a] = std::clamp(palette[objects[k].semantic][a] + rng.uniform(-0.1, 0.1), 0.0, 1.0);
  auto point_color = [&](int inst, int sem) {
    std::array<double, 3> base = inst >= 0 ? object_color[inst] : palette[sem];
    for (int a = 0; a < 3; ++a) base[a] = std::clamp(base[a] + rng.uniform(-0.05, 0.05), 0.0, 1.0);
    return base;
  };

  for (int k = 0; k < num_objects; ++k) {
    const auto& o = objects[k];
    const int count = object_points / num_objects + (k < object_points % num_objects ? 1 : 0);
    for (int i = 0; i < count; ++i) {
      std::array<double, 3> p{};
      if (o.semantic == 0) {
        for (int a = 0; a < 3; ++a) p[a] = o.center[a] + rng.uniform(-o.half[a], o.half[a]);
      } else {
        // Interior of the ellipsoid by rejection.
        double r2 = 2.0;
        while (r2 > 1.0) {
          r2 = 0.0;
          for (int a = 0; a < 3; ++a) {
            const double u = rng.uniform(-1.0, 1.0);
            p[a] = o.center[a] + u * o.half[a];
            r2 += u * u;
          }
        }
      }
      raw.push_back({p, cfg.with_color ? point_color(k, o.semantic) : std::array<double, 3>{}, k, o.semantic});
    }
  }
  for (int i = 0; i < clutter; ++i) {
    std::array<double, 3> p{};
    for (int a = 0; a < 3; ++a) p[a] = rng.uniform(0.0, ext[a]);
    raw.push_back({p, cfg.with_color ? point_color(-1, 2) : std::array<double, 3>{}, -1, 2});
  }
  rng.shuffle(raw);

  Scene scene;
  scene.num_points = static_cast<int>(raw.size());
  scene.channels = cfg.with_color ? 6 : 3;
  scene.num_classes = 3;
  scene.points.reserve(raw.size() * scene.channels);
  for (const auto& r : raw) {
    scene.points.insert(scene.points.end(), r.p.begin(), r.p.end());
    if (cfg.with_color) scene.points.insert(scene.points.end(), r.color.begin(), r.color.end());
    scene.instance_ids.push_back(r.inst);
    scene.semantic_ids.push_back(r.sem);
  }
  std::vector<std::vector<double>> hulls(num_objects);
  for (const auto& r : raw)
    if (r.inst >= 0) hulls[r.inst].insert(hulls[r.inst].end(), r.p.begin(), r.p.end());
  for (int k = 0; k < num_objects; ++k) scene.gt_boxes.push_back(BBox::of_points(hulls[k]));
  scene.validate();
  return scene;
}

int voxel_cell_index(double v, double lo, double hi, int dim) {
  const double cell = (hi - lo) / dim;
  int idx = static_cast<int>(std::ceil((v - lo) / cell)) - 1;
  return std::min(std::max(idx, 0), dim - 1);
}

VoxelGrid voxelize_points(const std::vector<double>& points_xyz, int dim,
                          const std::array<double, 6>& extent) {
  if (points_xyz.size() % 3 != 0) fail("voxelize_points: expected flat xyz triples");
  VoxelGrid g = VoxelGrid::zeros(dim);
  for (std::size_t i = 0; i < points_xyz.size(); i += 3) {
    const int x = voxel_cell_index(points_xyz[i], extent[0], extent[3], dim);
    const int y = voxel_cell_index(points_xyz[i + 1], extent[1], extent[4], dim);
    const int z = voxel_cell_index(points_xyz[i + 2], extent[2], extent[5], dim);
    g.at(x, y, z) = 1.0;
  }
  return g;
}

std::vector<int> partial_view(const std::vector<double>& points_xyz,
                              const std::array<double, 6>& extent, Rng& rng, int columns) {
  if (points_xyz.empty() || points_xyz.size() % 3 != 0)
    fail("partial_view: expected non-empty flat xyz triples");
  const int n = static_cast<int>(points_xyz.size() / 3);
  const int axis = rng.uniform_int(0, 2);
  const bool from_low = rng.uniform_int(0, 1) == 0;
  const int ta = (axis + 1) % 3, tb = (axis + 2) % 3;

  auto coord = [&](int i, int a) { return points_xyz[static_cast<std::size_t>(i) * 3 + a]; };
  auto cell = [&](int i, int a) {
    return voxel_cell_index(coord(i, a), extent[a], extent[a + 3], columns);
  };

  // Frontmost occupied depth cell per transverse column.
  std::vector<int> front(static_cast<std::size_t>(columns) * columns, -1);
  for (int i = 0; i < n; ++i) {
    const int col = cell(i, ta) * columns + cell(i, tb);
    const int depth = cell(i, axis);
    if (front[col] < 0 || (from_low ? depth < front[col] : depth > front[col])) front[col] = depth;
  }
  std::vector<int> keep;
  for (int i = 0; i < n; ++i) {
    const int col = cell(i, ta) * columns + cell(i, tb);
    if (cell(i, axis) == front[col]) keep.push_back(i);
  }
  return keep;
}

MultiViewDataset make_multiview_dataset(const SynthConfig& cfg) {
  cfg.validate();
  MultiViewDataset ds;
  ds.config = cfg;
  Rng bank_rng(Rng::derive(cfg.seed, 0));
  const auto bank = make_projection_bank(cfg, bank_rng);
  ds.samples.reserve(cfg.samples);
  for (int i = 0; i < cfg.samples; ++i) {
    Rng rng(Rng::derive(cfg.seed, 1 + static_cast<std::uint64_t>(i)));
    const VoxelGrid shape = make_voxel_shape(cfg, rng);
    ds.samples.push_back(make_view_set(shape, cfg, bank, rng));
  }
  return ds;
}

std::vector<Scene> make_scene_dataset(const SynthConfig& cfg) {
  cfg.validate();
  std::vector<Scene> scenes;
  scenes.reserve(cfg.scenes);
  for (int i = 0; i < cfg.scenes; ++i) {
    Rng rng(Rng::derive(cfg.seed, 0x5ce00000ULL + static_cast<std::uint64_t>(i)));
    scenes.push_back(make_scene(cfg, rng));
  }
  return scenes;
}

}  // namespace shapelab
