#pragma once

#include <array>
#include <cstdint>
#include <string>
#include <vector>

#include "shapelab/boxassoc.hpp"
#include "shapelab/synth.hpp"
#include "shapelab/tensor.hpp"

namespace shapelab {

struct BonetConfig {
  int max_boxes = 8;  // H
  int classes = 3;
  int input_channels = 3;  // xyz, or xyz+rgb
  int backbone_h1 = 32;
  int backbone_h2 = 64;
  int feature_dim = 64;   // k, width of local and global features
  int box_hidden = 64;
  int compress_dim = 32;  // pmask compression width
  int mask_hidden = 32;
  int semantic_hidden = 32;
  double leaky_slope = 0.1;
  double theta1 = kDefaultTheta1;
  double theta2 = kDefaultTheta2;
  double focal_alpha = 0.75;
  double focal_gamma = 2.0;
  BoxCriteria criteria = BoxCriteria::kCombined;
  AssignmentGrad assignment_grad = AssignmentGrad::kConstant;
  bool use_score_branch = true;  // ablation: drop the score loss and keep all boxes at inference
  bool use_focal = true;         // ablation: plain cross-entropy mask loss
  double score_threshold = 0.5;
  double mask_threshold = 0.5;
  // Instances claiming fewer points than this are dropped at inference.
  int min_instance_points = 1;
  // Scene extent used to normalize backbone inputs and to spread the
  // initial per-slot prior boxes.
  std::array<double, 3> extent{4.0, 4.0, 2.0};
};

// Shared per-point backbone plus the box, mask, and semantic branches.
struct BonetModel {
  BonetConfig config;
  // backbone: shared per-point layers, global feature by column max.
  Tensor bb_w1, bb_b1, bb_w2, bb_b2, bb_w3, bb_b3;
  Tensor proj_w, proj_b;  // [local | global] -> k
  // box branch: shared trunk, then parallel box and score heads.
  Tensor box_w1, box_b1, box_w2, box_b2;
  Tensor box_head_w, box_head_b;      // -> 6H
  Tensor score_head_w, score_head_b;  // -> H
  // point mask branch.
  Tensor pm_local_w, pm_local_b, pm_global_w, pm_global_b;
  Tensor pm_fuse_w, pm_fuse_b;
  Tensor pm_h1_w, pm_h1_b, pm_out_w, pm_out_b;
  // semantic branch.
  Tensor sem_w1, sem_b1, sem_w2, sem_b2;

  static BonetModel init(const BonetConfig& cfg, Rng& rng);
  std::vector<Tensor> parameters() const;
  BonetModel clone() const;
};

struct BackboneOutput {
  Tensor local;   // N x k
  Tensor global;  // 1 x k
};

BackboneOutput backbone_forward(const BonetModel& model, const Tensor& points);

struct BoxPrediction {
  Tensor boxes;   // H x 6 rows [min xyz, max xyz]
  Tensor scores;  // H x 1 in (0, 1)
};

BoxPrediction bbox_branch(const BonetModel& model, const Tensor& global);

// Point mask for one box; returns N x 1 probabilities.
Tensor pmask_branch(const BonetModel& model, const BackboneOutput& features,
                    const Tensor& box_row, const Tensor& score);

Tensor semantic_branch(const BonetModel& model, const Tensor& local);  // N x S, rows sum to 1

// Mean cross-entropy of per-point class probabilities against labels.
Tensor semantic_loss(const Tensor& probs, const std::vector<int>& labels);

struct ScenePrediction {
  Tensor boxes;                // H x 6
  Tensor scores;               // H x 1
  std::vector<Tensor> masks;   // H masks of N x 1
  Tensor semantics;            // N x S
};

// features holds one row per point with input_channels columns; the first
// three are xyz.
ScenePrediction predict_scene(const BonetModel& model, const Tensor& features);

struct CombinedLoss {
  Tensor semantic;
  Tensor bbox;
  Tensor score;
  Tensor mask;
  Tensor total;
  Assignment assignment;
};

// l_total = l_sem + l_bbox (+ l_bbs) + l_pmask over the associated pairs.
CombinedLoss combined_loss(const Scene& scene, const ScenePrediction& pred,
                           const BonetConfig& cfg);

struct InstanceLabeling {
  std::vector<int> instance_of_point;   // -1 = clutter
  std::vector<int> instance_semantics;  // per emitted instance
  int num_instances = 0;
};

InstanceLabeling infer_scene(const BonetModel& model, const Scene& scene);
// Inference from precomputed predictions (used by block mode and tests).
InstanceLabeling infer_from_prediction(const ScenePrediction& pred, const BonetConfig& cfg);

// ---- block partitioning / merging ----

struct SceneBlock {
  double origin_x = 0.0, origin_y = 0.0;
  std::vector<int> point_indices;  // into the parent scene
};

// Ground-plane tiling with the given block edge and overlap; points on block
// borders belong to every touching block.
std::vector<SceneBlock> block_partition(const Scene& scene, double block_size = 1.0,
                                        double overlap = 0.5);

// Assembles per-block instance labels into scene-wide ids through a coarse
// voxel grid: each block instance adopts the existing grid label its cells
// already vote for, or a fresh id; points read their label back from cells.
std::vector<int> block_merge(const Scene& scene, const std::vector<SceneBlock>& blocks,
                             const std::vector<std::vector<int>>& block_labels,
                             double cell_size = 0.1);

// ---- evaluation ----

struct InstanceEval {
  double mean_precision = 0.0;
  double mean_recall = 0.0;
  int true_positives = 0;
  int predicted_instances = 0;
  int gt_instances = 0;
};

// Greedy IoU matching per semantic class at the given point-set IoU
// threshold; precision of a class without predictions counts as 0.
InstanceEval eval_mprec_mrec(const std::vector<int>& pred_instance_of_point,
                             const std::vector<int>& pred_instance_semantics, const Scene& scene,
                             double iou_threshold = 0.5);

// ---- training driver ----

struct BonetTrainConfig {
  BonetTrainConfig() {
    data.points_per_scene = 512;
    data.min_objects = 2;
    data.max_objects = 5;
    data.clutter_fraction = 0.05;
    data.scenes = 48;
    data.with_color = true;
    model.input_channels = 6;
  }

  SynthConfig data;  // train split; the test split derives its own seed
  int test_scenes = 16;
  int steps = 1500;
  double learning_rate = 5e-4;
  std::uint64_t seed = 1;
  BonetConfig model;
  int log_every = 10;
};

struct LossCurves {
  std::vector<int> step;
  std::vector<double> semantic, bbox, score, mask, total;
};

struct BonetTrainResult {
  BonetModel model;
  LossCurves curves;
};

BonetTrainResult train_bonet(const BonetTrainConfig& cfg, const std::vector<Scene>& train_scenes);

InstanceEval evaluate_bonet(const BonetModel& model, const std::vector<Scene>& scenes);

}  // namespace shapelab
