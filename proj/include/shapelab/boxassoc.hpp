#pragma once

#include <array>
#include <vector>

#include "shapelab/tensor.hpp"

namespace shapelab {

// Axis-aligned box given by its two extreme vertices. Ground-truth boxes
// satisfy vmin <= vmax componentwise; predicted boxes may violate that early
// in training and every operation stays finite on such inputs.
struct BBox {
  std::array<double, 3> vmin{};
  std::array<double, 3> vmax{};

  static BBox of_points(const std::vector<double>& points_xyz);  // min/max hull
  bool contains(double x, double y, double z) const;             // closed box
  std::array<double, 6> flat() const;
};

inline constexpr double kDefaultTheta1 = 100.0;
inline constexpr double kDefaultTheta2 = 20.0;

// Differentiable membership probability of every point in a predicted box:
// delta = (vmin - p) * (p - vmax) per axis, scaled by theta1, clamped to
// [-theta2, theta2], squashed by sigmoid, then the per-axis minimum. Returns
// an N x 1 tensor in (0, 1).
Tensor soft_point_in_box(const Tensor& points, const Tensor& box, double theta1 = kDefaultTheta1,
                         double theta2 = kDefaultTheta2);

// Hard membership {0,1} of every point in a closed box.
std::vector<double> hard_point_in_box(const Tensor& points, const BBox& box);

// Mean squared distance over the six box coordinates.
Tensor cost_euclidean(const Tensor& pred_box, const BBox& gt_box);

// Negated soft intersection-over-union between a soft and a hard mask;
// lies in [-1, 0]. Rejected when both masks are identically zero.
Tensor cost_siou(const Tensor& soft_mask, const std::vector<double>& hard_mask);

// Mean binary cross-entropy between a soft and a hard mask.
Tensor cost_ces(const Tensor& soft_mask, const std::vector<double>& hard_mask);

enum class BoxCriteria { kCombined, kEuclideanOnly, kSiouOnly, kCesOnly };

struct CostMatrix {
  int preds = 0;  // H
  int gts = 0;    // T
  std::vector<double> total;      // H x T, per the active criteria
  std::vector<double> euclidean;  // component matrices kept for ablations
  std::vector<double> siou;
  std::vector<double> ces;

  double at(int i, int j) const { return total[static_cast<std::size_t>(i) * gts + j]; }
};

// Evaluates every (predicted, ground-truth) pair. Forward-only: nothing is
// recorded on the tape.
CostMatrix cost_matrix(const Tensor& pred_boxes, const std::vector<BBox>& gt_boxes,
                       const Tensor& points, BoxCriteria criteria = BoxCriteria::kCombined,
                       double theta1 = kDefaultTheta1, double theta2 = kDefaultTheta2);

struct Assignment {
  std::vector<int> pred_for_gt;  // injective map, one prediction per ground truth
  double total_cost = 0.0;
};

// Minimum-cost injective assignment of ground truths to predictions.
// Requires H >= T and finite costs.
Assignment hungarian(const CostMatrix& costs);
Assignment hungarian(int preds, int gts, const std::vector<double>& cost);

enum class AssignmentGrad {
  kConstant,         // assignment treated as a constant in backward
  kStraightThrough,  // additionally lets gradients flow through all cost entries
};

struct BoxLosses {
  Tensor bbox;   // mean matched-pair cost
  Tensor score;  // binary cross-entropy on box validity
  Assignment assignment;
};

// Associates predictions to ground truths via the cost matrix and Hungarian
// solver, then builds the differentiable box and score losses on the matched
// pairs. pred_scores is H x 1 with entries in (0, 1).
BoxLosses assoc_and_losses(const Tensor& pred_boxes, const Tensor& pred_scores,
                           const std::vector<BBox>& gt_boxes, const Tensor& points,
                           BoxCriteria criteria = BoxCriteria::kCombined,
                           AssignmentGrad agrad = AssignmentGrad::kConstant,
                           double theta1 = kDefaultTheta1, double theta2 = kDefaultTheta2);

// Focal loss over matched point masks; pred is T x N in (0, 1), gt holds T
// binary rows. alpha weights the positive term, gamma focuses on hard points.
Tensor focal_mask_loss(const Tensor& pred, const std::vector<std::vector<double>>& gt,
                       double alpha = 0.75, double gamma = 2.0);

}  // namespace shapelab
