#include "shapelab/boxassoc.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <stdexcept>

#include "shapelab/metrics.hpp"

namespace shapelab {

namespace {

[[noreturn]] void fail(const std::string& msg) { throw std::invalid_argument(msg); }

void check_points(const Tensor& points, const char* op) {
  if (points.rank() != 2 || points.shape()[1] != 3)
    fail(std::string(op) + ": expected N x 3 points, got " + shape_str(points.shape()));
}

void check_box_row(const Tensor& box, const char* op) {
  if (box.rank() != 2 || box.shape()[0] != 1 || box.shape()[1] != 6)
    fail(std::string(op) + ": expected a 1 x 6 box row, got " + shape_str(box.shape()));
}

Tensor mask_target(const Tensor& soft_mask, const std::vector<double>& hard_mask, const char* op) {
  if (soft_mask.rank() != 2 || soft_mask.shape()[1] != 1)
    fail(std::string(op) + ": expected an N x 1 soft mask, got " + shape_str(soft_mask.shape()));
  if (static_cast<std::size_t>(soft_mask.shape()[0]) != hard_mask.size())
    fail(std::string(op) + ": mask lengths disagree");
  return Tensor(soft_mask.shape(), hard_mask);
}

}  // namespace

BBox BBox::of_points(const std::vector<double>& points_xyz) {
  if (points_xyz.empty() || points_xyz.size() % 3 != 0)
    fail("BBox::of_points: expected a non-empty flat xyz list");
  BBox b;
  b.vmin = {points_xyz[0], points_xyz[1], points_xyz[2]};
  b.vmax = b.vmin;
  for (std::size_t i = 0; i < points_xyz.size(); i += 3)
    for (int a = 0; a < 3; ++a) {
      b.vmin[a] = std::min(b.vmin[a], points_xyz[i + a]);
      b.vmax[a] = std::max(b.vmax[a], points_xyz[i + a]);
    }
  return b;
}

bool BBox::contains(double x, double y, double z) const {
  return x >= vmin[0] && x <= vmax[0] && y >= vmin[1] && y <= vmax[1] && z >= vmin[2] &&
         z <= vmax[2];
}

std::array<double, 6> BBox::flat() const {
  return {vmin[0], vmin[1], vmin[2], vmax[0], vmax[1], vmax[2]};
}

Tensor soft_point_in_box(const Tensor& points, const Tensor& box, double theta1, double theta2) {
  check_points(points, "soft_point_in_box");
  check_box_row(box, "soft_point_in_box");
  const int n = points.shape()[0];
  Tensor vmin = tile_rows(slice_cols(box, 0, 3), n);
  Tensor vmax = tile_rows(slice_cols(box, 3, 6), n);
  Tensor delta = mul(sub(vmin, points), sub(points, vmax));
  Tensor squashed = sigmoid(clamp(scale(delta, theta1), -theta2, theta2));
  return min_axis(squashed, 1);
}

std::vector<double> hard_point_in_box(const Tensor& points, const BBox& box) {
  check_points(points, "hard_point_in_box");
  const int n = points.shape()[0];
  std::vector<double> mask(n);
  for (int i = 0; i < n; ++i)
    mask[i] = box.contains(points(i, 0), points(i, 1), points(i, 2)) ? 1.0 : 0.0;
  return mask;
}

Tensor cost_euclidean(const Tensor& pred_box, const BBox& gt_box) {
  check_box_row(pred_box, "cost_euclidean");
  const auto g = gt_box.flat();
  Tensor gt = Tensor::row({g.begin(), g.end()});
  Tensor d = sub(pred_box, gt);
  return scale(sum(mul(d, d)), 1.0 / 6.0);
}

Tensor cost_siou(const Tensor& soft_mask, const std::vector<double>& hard_mask) {
  Tensor target = mask_target(soft_mask, hard_mask, "cost_siou");
  double hard_sum = 0.0;
  for (double v : hard_mask) hard_sum += v;
  double soft_sum_v = 0.0;
  for (double v : soft_mask.value()) soft_sum_v += v;
  if (soft_sum_v + hard_sum <= 0.0) fail("cost_siou: both masks are identically zero");
  Tensor inter = sum(mul(soft_mask, target));
  Tensor uni = sub(add(sum(soft_mask), Tensor::scalar(hard_sum)), inter);
  return neg(div(inter, uni));
}

Tensor cost_ces(const Tensor& soft_mask, const std::vector<double>& hard_mask) {
  mask_target(soft_mask, hard_mask, "cost_ces");
  return bce_loss(soft_mask, hard_mask);
}

CostMatrix cost_matrix(const Tensor& pred_boxes, const std::vector<BBox>& gt_boxes,
                       const Tensor& points, BoxCriteria criteria, double theta1, double theta2) {
  if (pred_boxes.rank() != 2 || pred_boxes.shape()[1] != 6)
    fail("cost_matrix: expected H x 6 predicted boxes, got " + shape_str(pred_boxes.shape()));
  check_points(points, "cost_matrix");
  const int h = pred_boxes.shape()[0];
  const int t = static_cast<int>(gt_boxes.size());
  if (h < t)
    fail("cost_matrix: more ground truths (" + std::to_string(t) + ") than predictions (" +
         std::to_string(h) + ")");

  NoGradGuard guard;  // forward values only
  CostMatrix m;
  m.preds = h;
  m.gts = t;
  m.total.assign(static_cast<std::size_t>(h) * t, 0.0);
  m.euclidean = m.total;
  m.siou = m.total;
  m.ces = m.total;

  std::vector<std::vector<double>> hard(t);
  for (int j = 0; j < t; ++j) hard[j] = hard_point_in_box(points, gt_boxes[j]);

  for (int i = 0; i < h; ++i) {
    Tensor box = slice_rows(pred_boxes, i, i + 1);
    Tensor soft = soft_point_in_box(points, box, theta1, theta2);
    for (int j = 0; j < t; ++j) {
      const std::size_t idx = static_cast<std::size_t>(i) * t + j;
      m.euclidean[idx] = cost_euclidean(box, gt_boxes[j]).item();
      m.siou[idx] = cost_siou(soft, hard[j]).item();
      m.ces[idx] = cost_ces(soft, hard[j]).item();
      switch (criteria) {
        case BoxCriteria::kCombined:
          m.total[idx] = m.euclidean[idx] + m.siou[idx] + m.ces[idx];
          break;
        case BoxCriteria::kEuclideanOnly: m.total[idx] = m.euclidean[idx]; break;
        case BoxCriteria::kSiouOnly: m.total[idx] = m.siou[idx]; break;
        case BoxCriteria::kCesOnly: m.total[idx] = m.ces[idx]; break;
      }
    }
  }
  return m;
}

Assignment hungarian(int preds, int gts, const std::vector<double>& cost) {
  if (gts < 1) fail("hungarian: need at least one ground truth");
  if (preds < gts)
    fail("hungarian: more ground truths (" + std::to_string(gts) + ") than predictions (" +
         std::to_string(preds) + ")");
  if (cost.size() != static_cast<std::size_t>(preds) * gts)
    fail("hungarian: cost size does not match dimensions");
  for (double c : cost)
    if (!std::isfinite(c)) fail("hungarian: non-finite cost entry");

  // Potentials-based assignment over rows = ground truths, columns =
  // predictions (T <= H). Indices are 1-based inside the solver.
  const int n = gts, m = preds;
  auto c = [&](int j, int i) {  // ground truth j, prediction i (1-based)
    return cost[static_cast<std::size_t>(i - 1) * gts + (j - 1)];
  };
  const double kInf = std::numeric_limits<double>::infinity();
  std::vector<double> u(n + 1, 0.0), v(m + 1, 0.0);
  std::vector<int> match(m + 1, 0);  // prediction -> ground truth
  std::vector<int> way(m + 1, 0);
  for (int j = 1; j <= n; ++j) {
    match[0] = j;
    int i0 = 0;
    std::vector<double> minv(m + 1, kInf);
    std::vector<char> used(m + 1, 0);
    do {
      used[i0] = 1;
      const int j0 = match[i0];
      double delta = kInf;
      int i1 = -1;
      for (int i = 1; i <= m; ++i) {
        if (used[i]) continue;
        const double cur = c(j0, i) - u[j0] - v[i];
        if (cur < minv[i]) {
          minv[i] = cur;
          way[i] = i0;
        }
        if (minv[i] < delta) {
          delta = minv[i];
          i1 = i;
        }
      }
      for (int i = 0; i <= m; ++i) {
        if (used[i]) {
          u[match[i]] += delta;
          v[i] -= delta;
        } else {
          minv[i] -= delta;
        }
      }
      i0 = i1;
    } while (match[i0] != 0);
    do {
      const int i1 = way[i0];
      match[i0] = match[i1];
      i0 = i1;
    } while (i0);
  }

  Assignment out;
  out.pred_for_gt.assign(n, -1);
  for (int i = 1; i <= m; ++i)
    if (match[i] != 0) out.pred_for_gt[match[i] - 1] = i - 1;
  for (int j = 0; j < n; ++j)
    out.total_cost += cost[static_cast<std::size_t>(out.pred_for_gt[j]) * gts + j];
  return out;
}

Assignment hungarian(const CostMatrix& costs) {
  return hungarian(costs.preds, costs.gts, costs.total);
}

BoxLosses assoc_and_losses(const Tensor& pred_boxes, const Tensor& pred_scores,
                           const std::vector<BBox>& gt_boxes, const Tensor& points,
                           BoxCriteria criteria, AssignmentGrad agrad, double theta1,
                           double theta2) {
  if (pred_scores.rank() != 2 || pred_scores.shape()[1] != 1 ||
      pred_scores.shape()[0] != pred_boxes.shape()[0])
    fail("assoc_and_losses: scores must be H x 1 aligned with boxes");
  const int h = pred_boxes.shape()[0];
  const int t = static_cast<int>(gt_boxes.size());

  const CostMatrix costs = cost_matrix(pred_boxes, gt_boxes, points, criteria, theta1, theta2);
  Assignment assignment = hungarian(costs);

  std::vector<std::vector<double>> hard(t);
  for (int j = 0; j < t; ++j) hard[j] = hard_point_in_box(points, gt_boxes[j]);

  // Matched-pair costs, recomputed on the tape. The assignment itself is a
  // constant of the backward pass.
  auto pair_cost = [&](int pred_idx, int gt_idx) {
    Tensor box = slice_rows(pred_boxes, pred_idx, pred_idx + 1);
    switch (criteria) {
      case BoxCriteria::kEuclideanOnly: return cost_euclidean(box, gt_boxes[gt_idx]);
      case BoxCriteria::kSiouOnly:
        return cost_siou(soft_point_in_box(points, box, theta1, theta2), hard[gt_idx]);
      case BoxCriteria::kCesOnly:
        return cost_ces(soft_point_in_box(points, box, theta1, theta2), hard[gt_idx]);
      case BoxCriteria::kCombined: break;
    }
    Tensor soft = soft_point_in_box(points, box, theta1, theta2);
    return add(add(cost_euclidean(box, gt_boxes[gt_idx]), cost_siou(soft, hard[gt_idx])),
               cost_ces(soft, hard[gt_idx]));
  };

  Tensor bbox_sum = Tensor::scalar(0.0);
  for (int j = 0; j < t; ++j) bbox_sum = add(bbox_sum, pair_cost(assignment.pred_for_gt[j], j));
  Tensor bbox = scale(bbox_sum, 1.0 / t);

  if (agrad == AssignmentGrad::kStraightThrough) {
    // Experimental estimator: keep the forward value but let gradients flow
    // through every cost entry, as if the assignment reacted to the costs.
    Tensor all_sum = Tensor::scalar(0.0);
    for (int i = 0; i < h; ++i)
      for (int j = 0; j < t; ++j) all_sum = add(all_sum, pair_cost(i, j));
    Tensor st = scale(all_sum, 1.0 / (static_cast<double>(h) * t));
    bbox = add(bbox, sub(st, detach(st)));
  }

  // Validity targets: matched predictions are 1, the rest 0.
  std::vector<double> target(h, 0.0);
  for (int j = 0; j < t; ++j) target[assignment.pred_for_gt[j]] = 1.0;
  Tensor score = bce_loss(pred_scores, target);

  return BoxLosses{bbox, score, std::move(assignment)};
}

Tensor focal_mask_loss(const Tensor& pred, const std::vector<std::vector<double>>& gt,
                       double alpha, double gamma) {
  if (pred.rank() != 2) fail("focal_mask_loss: expected T x N predictions");
  const int t = pred.shape()[0];
  const int n = pred.shape()[1];
  if (static_cast<std::size_t>(t) != gt.size()) fail("focal_mask_loss: row counts disagree");
  std::vector<double> flat;
  flat.reserve(pred.size());
  for (const auto& row : gt) {
    if (static_cast<int>(row.size()) != n) fail("focal_mask_loss: mask lengths disagree");
    flat.insert(flat.end(), row.begin(), row.end());
  }
  Tensor target(pred.shape(), flat);
  Tensor m = clamp(pred, kLogEps, 1.0 - kLogEps);
  Tensor one_minus = add_const(scale(m, -1.0), 1.0);
  Tensor pos = mul(mul(pow_const(one_minus, gamma), target), log(m));
  Tensor negt = mul(mul(pow_const(m, gamma), add_const(scale(target, -1.0), 1.0)), log(one_minus));
  return neg(mean(add(scale(pos, alpha), scale(negt, 1.0 - alpha))));
}

}  // namespace shapelab
