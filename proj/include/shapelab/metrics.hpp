#pragma once

#include <functional>
#include <vector>

#include "shapelab/rng.hpp"
#include "shapelab/tensor.hpp"

namespace shapelab {

// Probabilities are clamped to [kLogEps, 1 - kLogEps] before every logarithm.
inline constexpr double kLogEps = 1e-7;

// Cubic occupancy grid, row-major with z fastest. Holds probabilities in
// [0, 1] for predictions or {0, 1} for ground truth.
struct VoxelGrid {
  int dim = 0;
  std::vector<double> values;

  static VoxelGrid zeros(int d);
  int size() const { return static_cast<int>(values.size()); }
  double& at(int x, int y, int z);
  double at(int x, int y, int z) const;
  bool is_binary() const;
  int occupied_count(double threshold = 0.5) const;
};

// Intersection-over-union of {pred > threshold} against a binary ground
// truth. An empty union is rejected.
double voxel_iou(const VoxelGrid& pred, const VoxelGrid& gt, double threshold);
double voxel_iou(const std::vector<double>& pred, const std::vector<double>& gt, double threshold);

// Mean binary cross-entropy between a probability grid and binary targets.
double voxel_ce(const VoxelGrid& pred, const VoxelGrid& gt);
double voxel_ce(const std::vector<double>& pred, const std::vector<double>& gt);

// Differentiable mean binary cross-entropy against constant targets.
Tensor bce_loss(const Tensor& pred, const std::vector<double>& target);

// False positives weighted by alpha, false negatives by 1 - alpha.
Tensor weighted_bce(const Tensor& pred, const std::vector<double>& target, double alpha = 0.85);

// Scalar mean of a critic's feature vector, used as its output.
Tensor mean_feature(const Tensor& features);

// Critic maps (sample row, condition row) to a scalar tensor.
using Critic = std::function<Tensor(const Tensor& sample, const Tensor& cond)>;

struct WganGpLosses {
  Tensor generator;       // -E[D(fake|cond)]
  Tensor discriminator;   // E[D(fake)] - E[D(real)] + lambda * penalty
  double wasserstein = 0.0;  // E[D(real)] - E[D(fake)], diagnostic
  double penalty = 0.0;      // E[(|grad| - 1)^2], diagnostic
};

// Adversarial losses with a gradient penalty on per-sample interpolates.
// The input-gradient norm is computed by central finite differences over the
// interpolate's coordinates, so the penalty stays differentiable with
// respect to the critic parameters through the difference quotients.
WganGpLosses wgan_gp_losses(const Critic& critic, const Tensor& cond, const Tensor& fake,
                            const Tensor& real, Rng& rng, double lambda = 10.0,
                            double fd_step = 1e-4);

// beta-weighted combination of the reconstruction and adversarial terms.
Tensor joint_gen_loss(const Tensor& recon_loss, const Tensor& gen_gan_loss, double beta = 0.2);

struct ThresholdSearchResult {
  double threshold = 0.0;
  double mean_iou = 0.0;
  std::vector<double> grid;      // candidate thresholds
  std::vector<double> grid_iou;  // mean IoU per candidate
};

// Exhaustive sweep over [0.1, 0.9] in steps of 0.05, maximizing mean IoU
// over the validation pairs; ties resolve toward the smaller threshold.
ThresholdSearchResult threshold_search(const std::vector<VoxelGrid>& preds,
                                       const std::vector<VoxelGrid>& gts);

}  // namespace shapelab
