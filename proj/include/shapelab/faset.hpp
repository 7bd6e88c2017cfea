#pragma once

#include <cstdint>
#include <functional>
#include <string>
#include <vector>

#include "shapelab/aggregators.hpp"
#include "shapelab/synth.hpp"
#include "shapelab/tensor.hpp"

namespace shapelab {

// Toy multi-view encoder/decoder. The encoder and decoder parameters form
// theta_base; the aggregator weights form theta_att. The two sets are
// disjoint and together cover every trainable tensor.
struct BaseModel {
  AggregatorKind aggregator = AggregatorKind::kAttSetsFeature;
  AttentionParams attention;  // defined only for the attention kinds
  double leaky_slope = 0.1;
  Tensor enc_w1, enc_b1, enc_w2, enc_b2;
  Tensor dec_w1, dec_b1, dec_w2, dec_b2;

  static BaseModel init(int input_dim, int enc_hidden, int feature_dim, int dec_hidden,
                        int output_dim, AggregatorKind kind, Rng& rng);

  std::vector<Tensor> theta_base() const;
  std::vector<Tensor> theta_att() const;
  bool has_attention() const;

  Tensor encode(const Tensor& views) const;     // n x D_in -> n x D
  Tensor aggregate_features(const Tensor& features) const;  // n x D -> 1 x D
  Tensor decode(const Tensor& aggregated) const;            // 1 x D -> 1 x out
  Tensor forward(const Tensor& views) const;

  // Deep copy; shares no parameter storage with the source.
  BaseModel clone() const;
  // Copies base parameter values from another model (shapes must match).
  void copy_base_from(const BaseModel& other);
};

struct FasetConfig {
  int iterations = 1000;
  int batch_size = 16;       // M
  int views_per_set = 1;     // N, fixed unless sample_view_count
  bool sample_view_count = false;
  int views_max = 8;         // upper bound when sampling N
  double learning_rate = 1e-3;
  std::uint64_t seed = 0;
};

struct TrainLog {
  std::vector<double> loss;  // one entry per iteration
};

// Stage 1: only theta_base is optimized, at set size 1.
TrainLog train_stage1(BaseModel& model, const std::vector<MultiViewSample>& data,
                      const FasetConfig& cfg);

// Stage 2: only theta_att is optimized on the aggregated prediction per set.
// Models without attention parameters fall back to fine-tuning theta_base,
// which is how the pooling baselines are handled in the comparison protocol.
TrainLog train_stage2(BaseModel& model, const std::vector<MultiViewSample>& data,
                      const FasetConfig& cfg);

// Joint baseline: every parameter updated each step with a single loss.
TrainLog train_joint(BaseModel& model, const std::vector<MultiViewSample>& data,
                     const FasetConfig& cfg);

using GridPredictor =
    std::function<std::vector<double>(const MultiViewSample& sample, int n_views)>;

// Mean voxel IoU over the samples for each requested view count, always
// aggregating the first n views so compared models see identical inputs.
std::vector<double> evaluate_over_view_counts(const GridPredictor& predictor,
                                              const std::vector<MultiViewSample>& samples,
                                              const std::vector<int>& view_counts,
                                              double threshold = 0.35);
std::vector<double> evaluate_over_view_counts(const BaseModel& model,
                                              const std::vector<MultiViewSample>& samples,
                                              const std::vector<int>& view_counts,
                                              double threshold = 0.35);

// ---- comparison protocol ----

struct FasetBenchmarkConfig {
  FasetBenchmarkConfig() {
    data.samples = 1024;
    data.views_per_sample = 48;  // view diversity drives generalization here
    data.view_dim = 48;
    data.grid_dim = 8;
  }

  SynthConfig data;            // train split size = data.samples
  int test_samples = 256;
  int stage1_iterations = 5000;
  int stage2_iterations = 1500;
  int batch_size = 16;
  int train_views = 8;         // N for stage 2 and the joint baseline
  double stage_lr = 1e-3;
  double finetune_lr = 1e-5;   // pooling baselines in stage 2
  std::vector<int> eval_views = {1, 2, 4, 8};
  std::vector<std::uint64_t> seeds = {1, 2, 3};
  int enc_hidden = 64;
  int feature_dim = 32;
  int dec_hidden = 128;
  int jobs = 1;
};

struct FasetRecord {
  std::string model;   // attsets-faset, attsets-joint, max, mean, sum
  std::string regime;  // faset | joint | finetune
  int views = 0;
  double iou = 0.0;
  std::uint64_t seed = 0;
};

// Trains AttSets under FASet, AttSets under joint training, and the three
// pooling baselines under the identical two-stage budget, then evaluates
// all of them over the requested view counts.
std::vector<FasetRecord> run_faset_benchmark(const FasetBenchmarkConfig& cfg);

double mean_record_iou(const std::vector<FasetRecord>& records, const std::string& model,
                       int views);

}  // namespace shapelab
