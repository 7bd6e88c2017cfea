#include "shapelab/metrics.hpp"

#include <cmath>
#include <stdexcept>

namespace shapelab {

namespace {

[[noreturn]] void fail(const std::string& msg) { throw std::invalid_argument(msg); }

void check_same_size(const std::vector<double>& a, const std::vector<double>& b, const char* op) {
  if (a.size() != b.size())
    fail(std::string(op) + ": sizes disagree: " + std::to_string(a.size()) + " vs " +
         std::to_string(b.size()));
}

void check_binary(const std::vector<double>& gt, const char* op) {
  for (double v : gt)
    if (v != 0.0 && v != 1.0) fail(std::string(op) + ": ground truth is not binary");
}

}  // namespace

VoxelGrid VoxelGrid::zeros(int d) {
  if (d <= 0) fail("VoxelGrid: dimension must be positive");
  VoxelGrid g;
  g.dim = d;
  g.values.assign(static_cast<std::size_t>(d) * d * d, 0.0);
  return g;
}

double& VoxelGrid::at(int x, int y, int z) {
  return values[(static_cast<std::size_t>(x) * dim + y) * dim + z];
}

double VoxelGrid::at(int x, int y, int z) const {
  return values[(static_cast<std::size_t>(x) * dim + y) * dim + z];
}

bool VoxelGrid::is_binary() const {
  for (double v : values)
    if (v != 0.0 && v != 1.0) return false;
  return true;
}

int VoxelGrid::occupied_count(double threshold) const {
  int n = 0;
  for (double v : values) n += v > threshold;
  return n;
}

double voxel_iou(const std::vector<double>& pred, const std::vector<double>& gt, double threshold) {
  check_same_size(pred, gt, "voxel_iou");
  check_binary(gt, "voxel_iou");
  int inter = 0, uni = 0;
  for (std::size_t i = 0; i < pred.size(); ++i) {
    const bool p = pred[i] > threshold;
    const bool g = gt[i] == 1.0;
    inter += p && g;
    uni += p || g;
  }
  if (uni == 0) fail("voxel_iou: empty union");
  return static_cast<double>(inter) / uni;
}

double voxel_iou(const VoxelGrid& pred, const VoxelGrid& gt, double threshold) {
  if (pred.dim != gt.dim) fail("voxel_iou: grid dimensions disagree");
  return voxel_iou(pred.values, gt.values, threshold);
}

double voxel_ce(const std::vector<double>& pred, const std::vector<double>& gt) {
  check_same_size(pred, gt, "voxel_ce");
  check_binary(gt, "voxel_ce");
  double acc = 0.0;
  for (std::size_t i = 0; i < pred.size(); ++i) {
    const double y = std::min(std::max(pred[i], kLogEps), 1.0 - kLogEps);
    acc += -(gt[i] * std::log(y) + (1.0 - gt[i]) * std::log(1.0 - y));
  }
  return acc / static_cast<double>(pred.size());
}

double voxel_ce(const VoxelGrid& pred, const VoxelGrid& gt) {
  if (pred.dim != gt.dim) fail("voxel_ce: grid dimensions disagree");
  return voxel_ce(pred.values, gt.values);
}

Tensor bce_loss(const Tensor& pred, const std::vector<double>& target) {
  if (static_cast<std::size_t>(pred.size()) != target.size())
    fail("bce_loss: prediction and target sizes disagree");
  check_binary(target, "bce_loss");
  Tensor y = clamp(pred, kLogEps, 1.0 - kLogEps);
  Tensor t(pred.shape(), target);
  Tensor pos = mul(t, log(y));
  Tensor negt = mul(add_const(scale(t, -1.0), 1.0), log(add_const(scale(y, -1.0), 1.0)));
  return neg(mean(add(pos, negt)));
}

Tensor weighted_bce(const Tensor& pred, const std::vector<double>& target, double alpha) {
  if (static_cast<std::size_t>(pred.size()) != target.size())
    fail("weighted_bce: prediction and target sizes disagree");
  check_binary(target, "weighted_bce");
  Tensor y = clamp(pred, kLogEps, 1.0 - kLogEps);
  Tensor t(pred.shape(), target);
  Tensor pos = mul(t, log(y));
  Tensor negt = mul(add_const(scale(t, -1.0), 1.0), log(add_const(scale(y, -1.0), 1.0)));
  Tensor weighted = add(scale(pos, -alpha), scale(negt, -(1.0 - alpha)));
  return mean(weighted);
}

Tensor mean_feature(const Tensor& features) { return mean(features); }

WganGpLosses wgan_gp_losses(const Critic& critic, const Tensor& cond, const Tensor& fake,
                            const Tensor& real, Rng& rng, double lambda, double fd_step) {
  if (fake.rank() != 2 || real.rank() != 2 || cond.rank() != 2)
    fail("wgan_gp_losses: expected 2-D batches");
  const int m = fake.shape()[0];
  if (real.shape()[0] != m || cond.shape()[0] != m)
    fail("wgan_gp_losses: batch sizes disagree");
  const int k = fake.shape()[1];

  auto eval = [&](const Tensor& sample, int row) {
    Tensor out = critic(sample, slice_rows(cond, row, row + 1));
    if (!out.is_scalar()) fail("wgan_gp_losses: critic output is not a scalar");
    return out;
  };

  Tensor fake_sum = Tensor::scalar(0.0);
  Tensor real_sum = Tensor::scalar(0.0);
  Tensor gp_sum = Tensor::scalar(0.0);
  double fake_mean = 0.0, real_mean = 0.0;

  for (int i = 0; i < m; ++i) {
    Tensor d_fake = eval(slice_rows(fake, i, i + 1), i);
    Tensor d_real = eval(slice_rows(real, i, i + 1), i);
    fake_sum = add(fake_sum, d_fake);
    real_sum = add(real_sum, d_real);
    fake_mean += d_fake.item();
    real_mean += d_real.item();

    // Interpolate y^ = eps*real + (1-eps)*fake with per-sample eps.
    const double eps = rng.uniform();
    std::vector<double> mix(k);
    for (int j = 0; j < k; ++j)
      mix[j] = eps * real(i, j) + (1.0 - eps) * fake(i, j);

    // Central differences over each coordinate of the interpolate; each
    // difference quotient is a tape tensor, so the penalty trains the critic.
    Tensor sq_norm = Tensor::scalar(0.0);
    for (int j = 0; j < k; ++j) {
      std::vector<double> up = mix, down = mix;
      up[j] += fd_step;
      down[j] -= fd_step;
      Tensor d_up = eval(Tensor::row(up), i);
      Tensor d_down = eval(Tensor::row(down), i);
      Tensor slope = scale(sub(d_up, d_down), 1.0 / (2.0 * fd_step));
      sq_norm = add(sq_norm, mul(slope, slope));
    }
    Tensor gp = add_const(sqrt(add_const(sq_norm, 1e-18)), -1.0);
    gp_sum = add(gp_sum, mul(gp, gp));
  }

  WganGpLosses out;
  Tensor e_fake = scale(fake_sum, 1.0 / m);
  Tensor e_real = scale(real_sum, 1.0 / m);
  Tensor e_gp = scale(gp_sum, 1.0 / m);
  out.generator = neg(e_fake);
  out.discriminator = add(sub(e_fake, e_real), scale(e_gp, lambda));
  out.wasserstein = real_mean / m - fake_mean / m;
  out.penalty = e_gp.item();
  return out;
}

Tensor joint_gen_loss(const Tensor& recon_loss, const Tensor& gen_gan_loss, double beta) {
  return add(scale(recon_loss, beta), scale(gen_gan_loss, 1.0 - beta));
}

ThresholdSearchResult threshold_search(const std::vector<VoxelGrid>& preds,
                                       const std::vector<VoxelGrid>& gts) {
  if (preds.empty() || preds.size() != gts.size())
    fail("threshold_search: need matching non-empty prediction/target lists");
  ThresholdSearchResult result;
  for (int step = 0; step <= 16; ++step) {
    const double p = 0.1 + 0.05 * step;
    double acc = 0.0;
    for (std::size_t i = 0; i < preds.size(); ++i) acc += voxel_iou(preds[i], gts[i], p);
    const double mean_iou = acc / static_cast<double>(preds.size());
    result.grid.push_back(p);
    result.grid_iou.push_back(mean_iou);
    // Strict improvement keeps ties at the smaller threshold.
    if (result.grid.size() == 1 || mean_iou > result.mean_iou) {
      result.threshold = p;
      result.mean_iou = mean_iou;
    }
  }
  return result;
}

}  // namespace shapelab
