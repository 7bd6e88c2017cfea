#include "shapelab/bonet.hpp"

#include <algorithm>
#include <cmath>
#include <map>
#include <set>
#include <stdexcept>

#include "shapelab/metrics.hpp"

namespace shapelab {

namespace {

[[noreturn]] void fail(const std::string& msg) { throw std::invalid_argument(msg); }

Tensor layer_init(int rows, int cols, Rng& rng) {
  const double bound = std::sqrt(1.0 / rows);
  return random_uniform({rows, cols}, -bound, bound, rng, true);
}

Tensor dense(const Tensor& x, const Tensor& w, const Tensor& b) {
  return add_rowvec(matmul(x, w), b);
}

}  // namespace

BonetModel BonetModel::init(const BonetConfig& cfg, Rng& rng) {
  BonetModel m;
  m.config = cfg;
  const int k = cfg.feature_dim;
  m.bb_w1 = layer_init(cfg.input_channels, cfg.backbone_h1, rng);
  m.bb_b1 = Tensor::zeros({1, cfg.backbone_h1}, true);
  m.bb_w2 = layer_init(cfg.backbone_h1, cfg.backbone_h2, rng);
  m.bb_b2 = Tensor::zeros({1, cfg.backbone_h2}, true);
  m.bb_w3 = layer_init(cfg.backbone_h2, k, rng);
  m.bb_b3 = Tensor::zeros({1, k}, true);
  m.proj_w = layer_init(2 * k, k, rng);
  m.proj_b = Tensor::zeros({1, k}, true);

  m.box_w1 = layer_init(k, cfg.box_hidden, rng);
  m.box_b1 = Tensor::zeros({1, cfg.box_hidden}, true);
  m.box_w2 = layer_init(cfg.box_hidden, cfg.box_hidden, rng);
  m.box_b2 = Tensor::zeros({1, cfg.box_hidden}, true);
  // Small head weights keep early box outputs near the slot priors below.
  m.box_head_w = scale(layer_init(cfg.box_hidden, 6 * cfg.max_boxes, rng), 0.1);
  m.box_head_w = Tensor(m.box_head_w.shape(), m.box_head_w.value(), true);
  // Slot biases start as prior boxes on a lattice over the extent, which
  // breaks slot symmetry and keeps early assignments spatially stable.
  {
    // Objects spread mostly in the ground plane, so the priors tile x-y.
    std::vector<double> bias;
    const int grid = std::max(1, static_cast<int>(std::ceil(std::sqrt(static_cast<double>(cfg.max_boxes)))));
    for (int s = 0; s < cfg.max_boxes; ++s) {
      const int gx = s % grid, gy = (s / grid) % grid;
      const double cx = (gx + 0.5) / grid * cfg.extent[0];
      const double cy = (gy + 0.5) / grid * cfg.extent[1];
      const double cz = 0.5 * cfg.extent[2];
      const double hx = 0.35 * cfg.extent[0] / grid, hy = 0.35 * cfg.extent[1] / grid;
      const double hz = 0.25 * cfg.extent[2];
      for (double v : {cx - hx, cy - hy, cz - hz, cx + hx, cy + hy, cz + hz}) bias.push_back(v);
    }
    m.box_head_b = Tensor(Shape{1, 6 * cfg.max_boxes}, std::move(bias), true);
  }
  m.score_head_w = layer_init(cfg.box_hidden, cfg.max_boxes, rng);
  m.score_head_b = Tensor::zeros({1, cfg.max_boxes}, true);

  m.pm_local_w = layer_init(k, cfg.compress_dim, rng);
  m.pm_local_b = Tensor::zeros({1, cfg.compress_dim}, true);
  m.pm_global_w = layer_init(k, cfg.compress_dim, rng);
  m.pm_global_b = Tensor::zeros({1, cfg.compress_dim}, true);
  m.pm_fuse_w = layer_init(2 * cfg.compress_dim, cfg.compress_dim, rng);
  m.pm_fuse_b = Tensor::zeros({1, cfg.compress_dim}, true);
  m.pm_h1_w = layer_init(cfg.compress_dim + 7, cfg.mask_hidden, rng);
  m.pm_h1_b = Tensor::zeros({1, cfg.mask_hidden}, true);
  m.pm_out_w = layer_init(cfg.mask_hidden, 1, rng);
  m.pm_out_b = Tensor::zeros({1, 1}, true);

  m.sem_w1 = layer_init(k, cfg.semantic_hidden, rng);
  m.sem_b1 = Tensor::zeros({1, cfg.semantic_hidden}, true);
  m.sem_w2 = layer_init(cfg.semantic_hidden, cfg.classes, rng);
  m.sem_b2 = Tensor::zeros({1, cfg.classes}, true);
  return m;
}

std::vector<Tensor> BonetModel::parameters() const {
  return {bb_w1, bb_b1, bb_w2, bb_b2, bb_w3,      bb_b3,      proj_w,       proj_b,
          box_w1, box_b1, box_w2, box_b2, box_head_w, box_head_b, score_head_w, score_head_b,
          pm_local_w, pm_local_b, pm_global_w, pm_global_b, pm_fuse_w, pm_fuse_b,
          pm_h1_w, pm_h1_b, pm_out_w, pm_out_b, sem_w1, sem_b1, sem_w2, sem_b2};
}

BonetModel BonetModel::clone() const {
  BonetModel m = *this;
  const auto src = parameters();
  BonetModel fresh;
  fresh.config = config;
  Tensor* dst[] = {&fresh.bb_w1, &fresh.bb_b1, &fresh.bb_w2, &fresh.bb_b2, &fresh.bb_w3,
                   &fresh.bb_b3, &fresh.proj_w, &fresh.proj_b, &fresh.box_w1, &fresh.box_b1,
                   &fresh.box_w2, &fresh.box_b2, &fresh.box_head_w, &fresh.box_head_b,
                   &fresh.score_head_w, &fresh.score_head_b, &fresh.pm_local_w, &fresh.pm_local_b,
                   &fresh.pm_global_w, &fresh.pm_global_b, &fresh.pm_fuse_w, &fresh.pm_fuse_b,
                   &fresh.pm_h1_w, &fresh.pm_h1_b, &fresh.pm_out_w, &fresh.pm_out_b,
                   &fresh.sem_w1, &fresh.sem_b1, &fresh.sem_w2, &fresh.sem_b2};
  for (std::size_t i = 0; i < src.size(); ++i) *dst[i] = src[i].clone();
  return fresh;
}

BackboneOutput backbone_forward(const BonetModel& m, const Tensor& features) {
  if (features.rank() != 2 || features.shape()[1] != m.config.input_channels)
    fail("backbone_forward: expected N x " + std::to_string(m.config.input_channels) +
         " features, got " + shape_str(features.shape()));
  const double s = m.config.leaky_slope;
  // Coordinates are normalized to [-1, 1] over the configured extent before
  // entering the shared layers; color channels are already unit scale.
  std::vector<double> scaled = features.value();
  const int cols = features.shape()[1];
  for (int i = 0; i < features.shape()[0]; ++i)
    for (int a = 0; a < 3; ++a)
      scaled[static_cast<std::size_t>(i) * cols + a] =
          2.0 * scaled[static_cast<std::size_t>(i) * cols + a] / m.config.extent[a] - 1.0;
  Tensor norm(features.shape(), std::move(scaled));
  Tensor h1 = leaky_relu(dense(norm, m.bb_w1, m.bb_b1), s);
  Tensor h2 = leaky_relu(dense(h1, m.bb_w2, m.bb_b2), s);
  Tensor h3 = leaky_relu(dense(h2, m.bb_w3, m.bb_b3), s);
  Tensor global = max_axis(h3, 0);
  Tensor fused = concat_cols(h3, tile_rows(global, features.shape()[0]));
  Tensor local = dense(fused, m.proj_w, m.proj_b);
  return {local, global};
}

BoxPrediction bbox_branch(const BonetModel& m, const Tensor& global) {
  const double s = m.config.leaky_slope;
  Tensor t = leaky_relu(dense(global, m.box_w1, m.box_b1), s);
  t = leaky_relu(dense(t, m.box_w2, m.box_b2), s);
  Tensor boxes = reshape(dense(t, m.box_head_w, m.box_head_b), {m.config.max_boxes, 6});
  Tensor scores = reshape(sigmoid(dense(t, m.score_head_w, m.score_head_b)),
                          {m.config.max_boxes, 1});
  return {boxes, scores};
}

Tensor pmask_branch(const BonetModel& m, const BackboneOutput& features, const Tensor& box_row,
                    const Tensor& score) {
  if (box_row.rank() != 2 || box_row.shape()[0] != 1 || box_row.shape()[1] != 6)
    fail("pmask_branch: expected a 1 x 6 box row");
  if (!score.is_scalar()) fail("pmask_branch: expected a scalar score");
  const double s = m.config.leaky_slope;
  const int n = features.local.shape()[0];
  Tensor cl = leaky_relu(dense(features.local, m.pm_local_w, m.pm_local_b), s);
  Tensor cg = leaky_relu(dense(features.global, m.pm_global_w, m.pm_global_b), s);
  Tensor mixed = leaky_relu(dense(concat_cols(cl, tile_rows(cg, n)), m.pm_fuse_w, m.pm_fuse_b), s);
  // Box coordinates are brought to the same normalized scale the point
  // features were built from.
  std::vector<double> inv_scale(6), shift(6);
  for (int a = 0; a < 6; ++a) {
    inv_scale[a] = 2.0 / m.config.extent[a % 3];
    shift[a] = -1.0;
  }
  Tensor norm_box = add_rowvec(mul(box_row, Tensor::row(inv_scale)), Tensor::row(shift));
  Tensor box_vals = concat_cols(norm_box, reshape(score, {1, 1}));  // 1 x 7
  Tensor fused = concat_cols(mixed, tile_rows(box_vals, n));
  Tensor h = leaky_relu(dense(fused, m.pm_h1_w, m.pm_h1_b), s);
  return sigmoid(dense(h, m.pm_out_w, m.pm_out_b));
}

Tensor semantic_branch(const BonetModel& m, const Tensor& local) {
  Tensor h = leaky_relu(dense(local, m.sem_w1, m.sem_b1), m.config.leaky_slope);
  return softmax_rows(dense(h, m.sem_w2, m.sem_b2));
}

Tensor semantic_loss(const Tensor& probs, const std::vector<int>& labels) {
  const int n = probs.shape()[0], s = probs.shape()[1];
  if (labels.size() != static_cast<std::size_t>(n)) fail("semantic_loss: label count mismatch");
  std::vector<double> onehot(static_cast<std::size_t>(n) * s, 0.0);
  for (int i = 0; i < n; ++i) {
    if (labels[i] < 0 || labels[i] >= s)
      fail("semantic_loss: unknown label id " + std::to_string(labels[i]));
    onehot[static_cast<std::size_t>(i) * s + labels[i]] = 1.0;
  }
  Tensor t(probs.shape(), onehot);
  Tensor picked = mul(t, log(clamp(probs, kLogEps, 1.0)));
  return scale(sum(picked), -1.0 / n);
}

namespace {

// All H mask rows in one pass: one stacked input matrix and two shared
// dense layers. Row blocks match per-box pmask_branch calls bit for bit.
std::vector<Tensor> pmask_all(const BonetModel& m, const BackboneOutput& features,
                              const Tensor& boxes, const Tensor& scores) {
  const double s = m.config.leaky_slope;
  const int n = features.local.shape()[0];
  const int h = boxes.shape()[0];
  Tensor cl = leaky_relu(dense(features.local, m.pm_local_w, m.pm_local_b), s);
  Tensor cg = leaky_relu(dense(features.global, m.pm_global_w, m.pm_global_b), s);
  Tensor mixed = leaky_relu(dense(concat_cols(cl, tile_rows(cg, n)), m.pm_fuse_w, m.pm_fuse_b), s);

  std::vector<double> inv_scale(6), shift(6);
  for (int a = 0; a < 6; ++a) {
    inv_scale[a] = 2.0 / m.config.extent[a % 3];
    shift[a] = -1.0;
  }
  Tensor norm_boxes = add(mul(boxes, tile_rows(Tensor::row(inv_scale), h)),
                          tile_rows(Tensor::row(shift), h));
  Tensor box_vals = concat_cols(norm_boxes, scores);  // h x 7

  Tensor stacked_mixed = mixed;
  Tensor stacked_box = tile_rows(slice_rows(box_vals, 0, 1), n);
  for (int b = 1; b < h; ++b) {
    stacked_mixed = concat_rows(stacked_mixed, mixed);
    stacked_box = concat_rows(stacked_box, tile_rows(slice_rows(box_vals, b, b + 1), n));
  }
  Tensor fused = concat_cols(stacked_mixed, stacked_box);
  Tensor hidden = leaky_relu(dense(fused, m.pm_h1_w, m.pm_h1_b), s);
  Tensor all = sigmoid(dense(hidden, m.pm_out_w, m.pm_out_b));  // (h*n) x 1
  std::vector<Tensor> masks;
  masks.reserve(h);
  for (int b = 0; b < h; ++b) masks.push_back(slice_rows(all, b * n, (b + 1) * n));
  return masks;
}

}  // namespace

ScenePrediction predict_scene(const BonetModel& m, const Tensor& features_in) {
  ScenePrediction pred;
  const BackboneOutput features = backbone_forward(m, features_in);
  const BoxPrediction boxes = bbox_branch(m, features.global);
  pred.boxes = boxes.boxes;
  pred.scores = boxes.scores;
  pred.masks = pmask_all(m, features, pred.boxes, pred.scores);
  pred.semantics = semantic_branch(m, features.local);
  return pred;
}

CombinedLoss combined_loss(const Scene& scene, const ScenePrediction& pred,
                           const BonetConfig& cfg) {
  if (scene.num_instances() < 1) fail("combined_loss: scene has no instances");
  Tensor points = scene.xyz_tensor();
  CombinedLoss out;
  BoxLosses box_losses =
      assoc_and_losses(pred.boxes, pred.scores, scene.gt_boxes, points, cfg.criteria,
                       cfg.assignment_grad, cfg.theta1, cfg.theta2);
  out.bbox = box_losses.bbox;
  out.score = box_losses.score;
  out.assignment = box_losses.assignment;

  // Matched masks, reordered by the association.
  const auto gt_masks = scene.instance_masks();
  const int t = scene.num_instances();
  Tensor matched;
  for (int j = 0; j < t; ++j) {
    Tensor row = reshape(pred.masks[out.assignment.pred_for_gt[j]], {1, scene.num_points});
    matched = j == 0 ? row : concat_rows(matched, row);
  }
  if (cfg.use_focal) {
    out.mask = focal_mask_loss(matched, gt_masks, cfg.focal_alpha, cfg.focal_gamma);
  } else {
    std::vector<double> flat;
    for (const auto& r : gt_masks) flat.insert(flat.end(), r.begin(), r.end());
    out.mask = bce_loss(matched, flat);
  }

  out.semantic = semantic_loss(pred.semantics, scene.semantic_ids);

  out.total = add(add(out.semantic, out.bbox), out.mask);
  if (cfg.use_score_branch) out.total = add(out.total, out.score);
  return out;
}

InstanceLabeling infer_from_prediction(const ScenePrediction& pred, const BonetConfig& cfg) {
  const int h = pred.boxes.shape()[0];
  const int n = pred.masks.empty() ? 0 : pred.masks[0].shape()[0];
  std::vector<int> kept;
  for (int i = 0; i < h; ++i)
    if (!cfg.use_score_branch || pred.scores[i] >= cfg.score_threshold) kept.push_back(i);

  // Highest mask probability among the kept boxes that claim the point; ties
  // go to the lower instance index.
  std::vector<int> owner(n, -1);
  std::vector<double> best(n, -1.0);
  for (std::size_t slot = 0; slot < kept.size(); ++slot) {
    const auto& mask = pred.masks[kept[slot]];
    for (int p = 0; p < n; ++p) {
      const double prob = mask[p];
      if (prob >= cfg.mask_threshold && prob > best[p]) {
        best[p] = prob;
        owner[p] = static_cast<int>(slot);
      }
    }
  }

  // Majority semantic label per claimed instance; drop empty ones.
  std::vector<int> point_class(n, 0);
  for (int p = 0; p < n; ++p) {
    int arg = 0;
    for (int c = 1; c < pred.semantics.shape()[1]; ++c)
      if (pred.semantics(p, c) > pred.semantics(p, arg)) arg = c;
    point_class[p] = arg;
  }
  InstanceLabeling out;
  out.instance_of_point.assign(n, -1);
  std::vector<int> remap(kept.size(), -1);
  for (std::size_t slot = 0; slot < kept.size(); ++slot) {
    std::vector<int> votes(pred.semantics.shape()[1], 0);
    int members = 0;
    for (int p = 0; p < n; ++p)
      if (owner[p] == static_cast<int>(slot)) {
        ++votes[point_class[p]];
        ++members;
      }
    if (members < std::max(1, cfg.min_instance_points)) continue;
    remap[slot] = out.num_instances++;
    int cls = 0;
    for (int c = 1; c < static_cast<int>(votes.size()); ++c)
      if (votes[c] > votes[cls]) cls = c;
    out.instance_semantics.push_back(cls);
  }
  for (int p = 0; p < n; ++p)
    if (owner[p] >= 0) out.instance_of_point[p] = remap[owner[p]];
  return out;
}

InstanceLabeling infer_scene(const BonetModel& model, const Scene& scene) {
  NoGradGuard guard;
  return infer_from_prediction(predict_scene(model, scene.features_tensor()), model.config);
}

std::vector<SceneBlock> block_partition(const Scene& scene, double block_size, double overlap) {
  if (scene.num_points < 1) fail("block_partition: empty scene");
  if (!(block_size > 0) || overlap < 0 || overlap >= block_size)
    fail("block_partition: need 0 <= overlap < block_size");
  double min_x = scene.point(0)[0], max_x = min_x;
  double min_y = scene.point(0)[1], max_y = min_y;
  for (int i = 1; i < scene.num_points; ++i) {
    const auto p = scene.point(i);
    min_x = std::min(min_x, p[0]);
    max_x = std::max(max_x, p[0]);
    min_y = std::min(min_y, p[1]);
    max_y = std::max(max_y, p[1]);
  }
  const double stride = block_size - overlap;
  std::vector<SceneBlock> blocks;
  for (double ox = min_x;; ox += stride) {
    for (double oy = min_y;; oy += stride) {
      SceneBlock b;
      b.origin_x = ox;
      b.origin_y = oy;
      for (int i = 0; i < scene.num_points; ++i) {
        const auto p = scene.point(i);
        if (p[0] >= ox && p[0] <= ox + block_size && p[1] >= oy && p[1] <= oy + block_size)
          b.point_indices.push_back(i);
      }
      if (!b.point_indices.empty()) blocks.push_back(std::move(b));
      if (oy + block_size >= max_y) break;
    }
    if (ox + block_size >= max_x) break;
  }
  return blocks;
}

std::vector<int> block_merge(const Scene& scene, const std::vector<SceneBlock>& blocks,
                             const std::vector<std::vector<int>>& block_labels, double cell_size) {
  if (blocks.size() != block_labels.size()) fail("block_merge: label list size mismatch");
  // Coarse global grid over the scene hull.
  std::array<double, 3> lo = scene.point(0);
  for (int i = 1; i < scene.num_points; ++i) {
    const auto p = scene.point(i);
    for (int a = 0; a < 3; ++a) lo[a] = std::min(lo[a], p[a]);
  }
  auto cell_of = [&](int point_idx) {
    const auto p = scene.point(point_idx);
    long long key = 0;
    for (int a = 0; a < 3; ++a) {
      const long long c = static_cast<long long>(std::floor((p[a] - lo[a]) / cell_size));
      key = key * 100003 + c;
    }
    return key;
  };

  std::map<long long, std::map<int, int>> votes;  // cell -> global id -> count
  auto cell_leader = [&](long long cell) {
    auto it = votes.find(cell);
    if (it == votes.end()) return -1;
    int leader = -1, best = 0;
    for (const auto& [gid, count] : it->second)
      if (count > best || (count == best && (leader < 0 || gid < leader))) {
        leader = gid;
        best = count;
      }
    return leader;
  };

  int next_gid = 0;
  for (std::size_t b = 0; b < blocks.size(); ++b) {
    const auto& idx = blocks[b].point_indices;
    if (block_labels[b].size() != idx.size()) fail("block_merge: block label length mismatch");
    int max_local = -1;
    for (int l : block_labels[b]) max_local = std::max(max_local, l);
    for (int local = 0; local <= max_local; ++local) {
      // Cells of this block instance and the existing labels leading there.
      std::vector<long long> cells;
      std::map<int, int> leader_votes;
      for (std::size_t k = 0; k < idx.size(); ++k) {
        if (block_labels[b][k] != local) continue;
        const long long cell = cell_of(idx[k]);
        cells.push_back(cell);
        const int leader = cell_leader(cell);
        if (leader >= 0) ++leader_votes[leader];
      }
      if (cells.empty()) continue;
      int gid = -1, best = 0;
      for (const auto& [g, count] : leader_votes)
        if (count > best) {
          gid = g;
          best = count;
        }
      // Adopt only on a real overlap; otherwise this is a new instance.
      if (gid < 0 || static_cast<std::size_t>(best) < std::max<std::size_t>(1, cells.size() / 4))
        gid = next_gid++;
      for (long long cell : cells) ++votes[cell][gid];
    }
  }

  std::vector<int> labels(scene.num_points, -1);
  for (int i = 0; i < scene.num_points; ++i) {
    const int leader = cell_leader(cell_of(i));
    labels[i] = leader;
  }
  // Points in cells that only ever saw clutter keep -1; compact the ids.
  std::map<int, int> compact;
  for (int& l : labels) {
    if (l < 0) continue;
    const auto it = compact.try_emplace(l, static_cast<int>(compact.size())).first;
    l = it->second;
  }
  return labels;
}

InstanceEval eval_mprec_mrec(const std::vector<int>& pred_instance_of_point,
                             const std::vector<int>& pred_instance_semantics, const Scene& scene,
                             double iou_threshold) {
  if (scene.num_instances() < 1)
    fail("eval_mprec_mrec: recall undefined with zero ground-truth instances");
  if (pred_instance_of_point.size() != static_cast<std::size_t>(scene.num_points))
    fail("eval_mprec_mrec: label count mismatch");

  const int num_pred = static_cast<int>(pred_instance_semantics.size());
  std::vector<std::vector<int>> pred_points(num_pred), gt_points(scene.num_instances());
  for (int i = 0; i < scene.num_points; ++i) {
    const int p = pred_instance_of_point[i];
    if (p >= 0) {
      if (p >= num_pred) fail("eval_mprec_mrec: point labeled with unknown instance");
      pred_points[p].push_back(i);
    }
    if (scene.instance_ids[i] >= 0) gt_points[scene.instance_ids[i]].push_back(i);
  }
  std::vector<int> gt_class(scene.num_instances(), 0);
  for (int g = 0; g < scene.num_instances(); ++g) {
    std::vector<int> votes(scene.num_classes, 0);
    for (int i : gt_points[g]) ++votes[scene.semantic_ids[i]];
    gt_class[g] = static_cast<int>(std::max_element(votes.begin(), votes.end()) - votes.begin());
  }

  auto point_iou = [](const std::vector<int>& a, const std::vector<int>& b) {
    std::size_t i = 0, j = 0, inter = 0;
    while (i < a.size() && j < b.size()) {
      if (a[i] == b[j]) {
        ++inter;
        ++i;
        ++j;
      } else if (a[i] < b[j]) {
        ++i;
      } else {
        ++j;
      }
    }
    const std::size_t uni = a.size() + b.size() - inter;
    return uni == 0 ? 0.0 : static_cast<double>(inter) / uni;
  };

  std::set<int> classes;
  for (int g = 0; g < scene.num_instances(); ++g) classes.insert(gt_class[g]);
  for (int p = 0; p < num_pred; ++p) classes.insert(pred_instance_semantics[p]);

  InstanceEval out;
  out.predicted_instances = num_pred;
  out.gt_instances = scene.num_instances();
  double prec_sum = 0.0, rec_sum = 0.0;
  for (int cls : classes) {
    std::vector<int> preds, gts;
    for (int p = 0; p < num_pred; ++p)
      if (pred_instance_semantics[p] == cls) preds.push_back(p);
    for (int g = 0; g < scene.num_instances(); ++g)
      if (gt_class[g] == cls) gts.push_back(g);

    struct Pair {
      double iou;
      int p, g;
    };
    std::vector<Pair> pairs;
    for (int p : preds)
      for (int g : gts) {
        const double iou = point_iou(pred_points[p], gt_points[g]);
        if (iou >= iou_threshold) pairs.push_back({iou, p, g});
      }
    std::sort(pairs.begin(), pairs.end(), [](const Pair& a, const Pair& b) {
      if (a.iou != b.iou) return a.iou > b.iou;
      if (a.p != b.p) return a.p < b.p;
      return a.g < b.g;
    });
    std::set<int> used_p, used_g;
    int tp = 0;
    for (const auto& pair : pairs) {
      if (used_p.count(pair.p) || used_g.count(pair.g)) continue;
      used_p.insert(pair.p);
      used_g.insert(pair.g);
      ++tp;
    }
    out.true_positives += tp;
    prec_sum += preds.empty() ? 0.0 : static_cast<double>(tp) / preds.size();
    rec_sum += gts.empty() ? 0.0 : static_cast<double>(tp) / gts.size();
  }
  out.mean_precision = prec_sum / static_cast<double>(classes.size());
  out.mean_recall = rec_sum / static_cast<double>(classes.size());
  return out;
}

BonetTrainResult train_bonet(const BonetTrainConfig& cfg, const std::vector<Scene>& train_scenes) {
  if (train_scenes.empty()) fail("train_bonet: no training scenes");
  Rng rng(Rng::derive(cfg.seed, 11));
  BonetTrainResult result;
  result.model = BonetModel::init(cfg.model, rng);
  AdamConfig adam;
  adam.learning_rate = cfg.learning_rate;
  AdamState opt(result.model.parameters(), adam);

  for (int step = 0; step < cfg.steps; ++step) {
    // Halve the rate twice late in training to settle the assignments.
    if (step == cfg.steps / 2 || step == cfg.steps * 3 / 4)
      opt.set_learning_rate(opt.config().learning_rate * 0.5);
    const Scene& scene = train_scenes[rng.uniform_int(0, static_cast<int>(train_scenes.size()) - 1)];
    Tape tape;
    ScenePrediction pred = predict_scene(result.model, scene.features_tensor());
    CombinedLoss loss = combined_loss(scene, pred, cfg.model);
    tape.backward(loss.total);
    opt.step();
    if (step % cfg.log_every == 0 || step + 1 == cfg.steps) {
      result.curves.step.push_back(step);
      result.curves.semantic.push_back(loss.semantic.item());
      result.curves.bbox.push_back(loss.bbox.item());
      result.curves.score.push_back(loss.score.item());
      result.curves.mask.push_back(loss.mask.item());
      result.curves.total.push_back(loss.total.item());
    }
  }
  return result;
}

InstanceEval evaluate_bonet(const BonetModel& model, const std::vector<Scene>& scenes) {
  if (scenes.empty()) fail("evaluate_bonet: no scenes");
  InstanceEval total;
  for (const auto& scene : scenes) {
    const InstanceLabeling labeling = infer_scene(model, scene);
    const InstanceEval e =
        eval_mprec_mrec(labeling.instance_of_point, labeling.instance_semantics, scene);
    total.mean_precision += e.mean_precision;
    total.mean_recall += e.mean_recall;
    total.true_positives += e.true_positives;
    total.predicted_instances += e.predicted_instances;
    total.gt_instances += e.gt_instances;
  }
  total.mean_precision /= static_cast<double>(scenes.size());
  total.mean_recall /= static_cast<double>(scenes.size());
  return total;
}

}  // namespace shapelab
