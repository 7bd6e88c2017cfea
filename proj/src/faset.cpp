#include "shapelab/faset.hpp"

#include <algorithm>
#include <cmath>
#include <stdexcept>
#include <mutex>
#include <thread>

#include "shapelab/metrics.hpp"

namespace shapelab {

namespace {

[[noreturn]] void fail(const std::string& msg) { throw std::invalid_argument(msg); }

Tensor layer_init(int rows, int cols, Rng& rng) {
  const double bound = std::sqrt(1.0 / rows);
  return random_uniform({rows, cols}, -bound, bound, rng, true);
}

}  // namespace

BaseModel BaseModel::init(int input_dim, int enc_hidden, int feature_dim, int dec_hidden,
                          int output_dim, AggregatorKind kind, Rng& rng) {
  BaseModel m;
  m.aggregator = kind;
  m.enc_w1 = layer_init(input_dim, enc_hidden, rng);
  m.enc_b1 = Tensor::zeros({1, enc_hidden}, true);
  m.enc_w2 = layer_init(enc_hidden, feature_dim, rng);
  m.enc_b2 = Tensor::zeros({1, feature_dim}, true);
  m.dec_w1 = layer_init(feature_dim, dec_hidden, rng);
  m.dec_b1 = Tensor::zeros({1, dec_hidden}, true);
  m.dec_w2 = layer_init(dec_hidden, output_dim, rng);
  m.dec_b2 = Tensor::zeros({1, output_dim}, true);
  if (kind == AggregatorKind::kAttSetsFeature) {
    const double bound = std::sqrt(1.0 / feature_dim);
    m.attention =
        AttentionParams::feature_wise(random_uniform({feature_dim, feature_dim}, -bound, bound, rng, true));
  } else if (kind == AggregatorKind::kAttSetsElement) {
    const double bound = std::sqrt(1.0 / feature_dim);
    m.attention =
        AttentionParams::element_wise(random_uniform({feature_dim, 1}, -bound, bound, rng, true));
  }
  return m;
}

std::vector<Tensor> BaseModel::theta_base() const {
  return {enc_w1, enc_b1, enc_w2, enc_b2, dec_w1, dec_b1, dec_w2, dec_b2};
}

std::vector<Tensor> BaseModel::theta_att() const {
  if (!has_attention()) return {};
  return {attention.weight};
}

bool BaseModel::has_attention() const {
  return aggregator == AggregatorKind::kAttSetsFeature ||
         aggregator == AggregatorKind::kAttSetsElement;
}

Tensor BaseModel::encode(const Tensor& views) const {
  Tensor h = leaky_relu(add_rowvec(matmul(views, enc_w1), enc_b1), leaky_slope);
  return add_rowvec(matmul(h, enc_w2), enc_b2);
}

Tensor BaseModel::aggregate_features(const Tensor& features) const {
  FeatureSet set(features);
  return aggregate(aggregator, set, has_attention() ? &attention : nullptr);
}

Tensor BaseModel::decode(const Tensor& aggregated) const {
  Tensor h = leaky_relu(add_rowvec(matmul(aggregated, dec_w1), dec_b1), leaky_slope);
  return sigmoid(add_rowvec(matmul(h, dec_w2), dec_b2));
}

Tensor BaseModel::forward(const Tensor& views) const {
  return decode(aggregate_features(encode(views)));
}

BaseModel BaseModel::clone() const {
  BaseModel m;
  m.aggregator = aggregator;
  m.leaky_slope = leaky_slope;
  m.enc_w1 = enc_w1.clone();
  m.enc_b1 = enc_b1.clone();
  m.enc_w2 = enc_w2.clone();
  m.enc_b2 = enc_b2.clone();
  m.dec_w1 = dec_w1.clone();
  m.dec_b1 = dec_b1.clone();
  m.dec_w2 = dec_w2.clone();
  m.dec_b2 = dec_b2.clone();
  if (has_attention()) {
    m.attention.mode = attention.mode;
    m.attention.weight = attention.weight.clone();
  }
  return m;
}

void BaseModel::copy_base_from(const BaseModel& other) {
  const auto src = other.theta_base();
  const auto dst = theta_base();
  for (std::size_t i = 0; i < src.size(); ++i) {
    if (src[i].shape() != dst[i].shape()) fail("copy_base_from: parameter shapes disagree");
    Tensor d = dst[i];
    d.mutable_value() = src[i].value();
  }
}

namespace {

void check_data(const std::vector<MultiViewSample>& data, const char* op) {
  if (data.empty()) fail(std::string(op) + ": empty dataset");
}

// One optimization pass shared by the three regimes; they differ only in the
// parameter subset handed to Adam and in how many views each set uses.
TrainLog run_training(BaseModel& model, const std::vector<MultiViewSample>& data,
                      const FasetConfig& cfg, const std::vector<Tensor>& params) {
  check_data(data, "train");
  if (params.empty()) fail("train: no parameters to optimize");
  AdamConfig adam;
  adam.learning_rate = cfg.learning_rate;
  AdamState opt(params, adam);
  Rng rng(cfg.seed);
  TrainLog log;
  log.loss.reserve(cfg.iterations);
  const int available = data[0].view_count;

  for (int it = 0; it < cfg.iterations; ++it) {
    Tape tape;
    Tensor batch_sum = Tensor::scalar(0.0);
    for (int b = 0; b < cfg.batch_size; ++b) {
      const auto& sample = data[rng.uniform_int(0, static_cast<int>(data.size()) - 1)];
      int n = cfg.sample_view_count ? rng.uniform_int(1, std::min(cfg.views_max, available))
                                    : cfg.views_per_set;
      if (n > available) fail("train: views_per_set exceeds available views");
      // A random subset of the sample's views, without replacement.
      auto perm = rng.permutation(available);
      std::vector<double> rows(static_cast<std::size_t>(n) * sample.view_dim);
      for (int v = 0; v < n; ++v)
        std::copy(sample.views.begin() + static_cast<std::size_t>(perm[v]) * sample.view_dim,
                  sample.views.begin() + static_cast<std::size_t>(perm[v] + 1) * sample.view_dim,
                  rows.begin() + static_cast<std::size_t>(v) * sample.view_dim);
      Tensor views = Tensor::matrix(n, sample.view_dim, std::move(rows));
      Tensor pred = model.forward(views);
      batch_sum = add(batch_sum, bce_loss(pred, sample.target));
    }
    Tensor loss = scale(batch_sum, 1.0 / cfg.batch_size);
    tape.backward(loss);
    opt.step();
    log.loss.push_back(loss.item());
  }
  return log;
}

}  // namespace

TrainLog train_stage1(BaseModel& model, const std::vector<MultiViewSample>& data,
                      const FasetConfig& cfg) {
  if (cfg.views_per_set != 1 || cfg.sample_view_count)
    fail("train_stage1: stage 1 requires exactly one view per set");
  return run_training(model, data, cfg, model.theta_base());
}

TrainLog train_stage2(BaseModel& model, const std::vector<MultiViewSample>& data,
                      const FasetConfig& cfg) {
  const auto att = model.theta_att();
  return run_training(model, data, cfg, att.empty() ? model.theta_base() : att);
}

TrainLog train_joint(BaseModel& model, const std::vector<MultiViewSample>& data,
                     const FasetConfig& cfg) {
  auto params = model.theta_base();
  const auto att = model.theta_att();
  params.insert(params.end(), att.begin(), att.end());
  return run_training(model, data, cfg, params);
}

std::vector<double> evaluate_over_view_counts(const GridPredictor& predictor,
                                              const std::vector<MultiViewSample>& samples,
                                              const std::vector<int>& view_counts,
                                              double threshold) {
  check_data(samples, "evaluate_over_view_counts");
  if (view_counts.empty()) fail("evaluate_over_view_counts: no view counts");
  for (int n : view_counts)
    if (n < 1 || n > samples[0].view_count)
      fail("evaluate_over_view_counts: view count " + std::to_string(n) + " exceeds available " +
           std::to_string(samples[0].view_count));
  std::vector<double> out;
  out.reserve(view_counts.size());
  for (int n : view_counts) {
    double acc = 0.0;
    for (const auto& s : samples)
      acc += voxel_iou(predictor(s, n), s.target, threshold);
    out.push_back(acc / static_cast<double>(samples.size()));
  }
  return out;
}

std::vector<double> evaluate_over_view_counts(const BaseModel& model,
                                              const std::vector<MultiViewSample>& samples,
                                              const std::vector<int>& view_counts,
                                              double threshold) {
  GridPredictor predictor = [&model](const MultiViewSample& s, int n) {
    NoGradGuard guard;
    return model.forward(s.view_rows(n)).value();
  };
  return evaluate_over_view_counts(predictor, samples, view_counts, threshold);
}

namespace {

struct SeedResult {
  std::vector<FasetRecord> records;
};

SeedResult run_benchmark_seed(const FasetBenchmarkConfig& cfg, std::uint64_t seed) {
  // Independent data, initialization, and batching streams per seed.
  SynthConfig train_cfg = cfg.data;
  train_cfg.seed = Rng::derive(seed, 101);
  SynthConfig test_cfg = cfg.data;
  test_cfg.samples = cfg.test_samples;
  test_cfg.seed = Rng::derive(seed, 202);
  const auto train = make_multiview_dataset(train_cfg).samples;
  const auto test = make_multiview_dataset(test_cfg).samples;

  const int input_dim = cfg.data.view_dim;
  const int output_dim = cfg.data.grid_dim * cfg.data.grid_dim * cfg.data.grid_dim;
  Rng init_rng(Rng::derive(seed, 303));
  BaseModel faset_model = BaseModel::init(input_dim, cfg.enc_hidden, cfg.feature_dim,
                                          cfg.dec_hidden, output_dim,
                                          AggregatorKind::kAttSetsFeature, init_rng);
  BaseModel joint_model = faset_model.clone();

  FasetConfig stage1;
  stage1.iterations = cfg.stage1_iterations;
  stage1.batch_size = cfg.batch_size;
  stage1.views_per_set = 1;
  stage1.learning_rate = cfg.stage_lr;
  stage1.seed = Rng::derive(seed, 404);
  train_stage1(faset_model, train, stage1);

  FasetConfig stage2 = stage1;
  stage2.iterations = cfg.stage2_iterations;
  stage2.views_per_set = cfg.train_views;
  stage2.seed = Rng::derive(seed, 505);
  train_stage2(faset_model, train, stage2);

  // Joint baseline: identical initialization and total budget, single loss.
  FasetConfig joint = stage1;
  joint.iterations = cfg.stage1_iterations + cfg.stage2_iterations;
  joint.views_per_set = cfg.train_views;
  joint.seed = Rng::derive(seed, 606);
  train_joint(joint_model, train, joint);

  // Pooling baselines share the stage-1 base and are then fine-tuned at the
  // smaller learning rate, as the comparison protocol prescribes.
  const std::vector<AggregatorKind> baselines = {AggregatorKind::kMax, AggregatorKind::kMean,
                                                 AggregatorKind::kSum};
  SeedResult result;
  auto emit = [&](const BaseModel& m, const std::string& name, const std::string& regime) {
    const auto ious = evaluate_over_view_counts(m, test, cfg.eval_views);
    for (std::size_t i = 0; i < cfg.eval_views.size(); ++i)
      result.records.push_back({name, regime, cfg.eval_views[i], ious[i], seed});
  };
  emit(faset_model, "attsets-faset", "faset");
  emit(joint_model, "attsets-joint", "joint");

  for (auto kind : baselines) {
    Rng pool_rng(Rng::derive(seed, 707));
    BaseModel pool = BaseModel::init(input_dim, cfg.enc_hidden, cfg.feature_dim, cfg.dec_hidden,
                                     output_dim, kind, pool_rng);
    pool.copy_base_from(faset_model);  // stage-1 result; stage 2 left it untouched
    FasetConfig ft = stage2;
    ft.learning_rate = cfg.finetune_lr;
    ft.seed = Rng::derive(seed, 808);
    train_stage2(pool, train, ft);
    emit(pool, aggregator_name(kind), "finetune");
  }
  return result;
}

}  // namespace

std::vector<FasetRecord> run_faset_benchmark(const FasetBenchmarkConfig& cfg) {
  std::vector<SeedResult> results(cfg.seeds.size());
  const int jobs = std::max(1, cfg.jobs);
  if (jobs == 1 || cfg.seeds.size() == 1) {
    for (std::size_t i = 0; i < cfg.seeds.size(); ++i)
      results[i] = run_benchmark_seed(cfg, cfg.seeds[i]);
  } else {
    // Seeds are independent runs; fan out, then assemble in seed order.
    std::vector<std::thread> workers;
    std::size_t next = 0;
    std::mutex mu;
    for (std::size_t w = 0; w < std::min<std::size_t>(jobs, cfg.seeds.size()); ++w) {
      workers.emplace_back([&]() {
        while (true) {
          std::size_t idx;
          {
            std::lock_guard<std::mutex> lock(mu);
            if (next >= cfg.seeds.size()) return;
            idx = next++;
          }
          results[idx] = run_benchmark_seed(cfg, cfg.seeds[idx]);
        }
      });
    }
    for (auto& t : workers) t.join();
  }
  std::vector<FasetRecord> records;
  for (const auto& r : results)
    records.insert(records.end(), r.records.begin(), r.records.end());
  return records;
}

double mean_record_iou(const std::vector<FasetRecord>& records, const std::string& model,
                       int views) {
  double acc = 0.0;
  int count = 0;
  for (const auto& r : records)
    if (r.model == model && r.views == views) {
      acc += r.iou;
      ++count;
    }
  if (count == 0) fail("mean_record_iou: no records for " + model);
  return acc / count;
}

}  // namespace shapelab
