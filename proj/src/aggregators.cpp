#include "shapelab/aggregators.hpp"

#include <stdexcept>

namespace shapelab {

FeatureSet::FeatureSet(Tensor v) : values(std::move(v)) {
  if (values.rank() != 2)
    throw std::invalid_argument("FeatureSet: expected N x D values, got " + shape_str(values.shape()));
  if (!values.all_finite()) throw std::invalid_argument("FeatureSet: non-finite entry");
}

AttentionParams AttentionParams::feature_wise(Tensor w) {
  if (w.rank() != 2 || w.shape()[0] != w.shape()[1])
    throw std::invalid_argument("AttentionParams: feature-wise weight must be square, got " +
                                shape_str(w.shape()));
  return AttentionParams{AttentionMode::kFeatureWise, std::move(w)};
}

AttentionParams AttentionParams::element_wise(Tensor w) {
  if (w.rank() != 2 || w.shape()[1] != 1)
    throw std::invalid_argument("AttentionParams: element-wise weight must be D x 1, got " +
                                shape_str(w.shape()));
  return AttentionParams{AttentionMode::kElementWise, std::move(w)};
}

namespace {

void check_width(const FeatureSet& set, int expected, const char* op) {
  if (set.width() != expected)
    throw std::invalid_argument(std::string(op) + ": set width " + std::to_string(set.width()) +
                                " does not match weight dimension " + std::to_string(expected));
}

}  // namespace

Tensor attsets_feature(const FeatureSet& set, const AttentionParams& params) {
  if (params.mode != AttentionMode::kFeatureWise)
    throw std::invalid_argument("attsets_feature: params are not in feature-wise mode");
  check_width(set, params.weight.shape()[0], "attsets_feature");
  Tensor activations = matmul(set.values, params.weight);     // c_n = x_n W
  Tensor scores = softmax_over_set(activations);              // per-feature softmax over n
  Tensor weighted = mul(set.values, scores);                  // o_n = x_n * s_n
  return sum_axis(weighted, 0);                               // y = sum_n o_n
}

Tensor attsets_element(const FeatureSet& set, const AttentionParams& params) {
  if (params.mode != AttentionMode::kElementWise)
    throw std::invalid_argument("attsets_element: params are not in element-wise mode");
  check_width(set, params.weight.shape()[0], "attsets_element");
  Tensor activations = matmul(set.values, params.weight);  // N x 1, one scalar per row
  Tensor scores = softmax_over_set(activations);           // softmax over the set
  Tensor weighted = mul_colvec(set.values, scores);        // shared score scales the row
  return sum_axis(weighted, 0);
}

Tensor pool_max(const FeatureSet& set) { return max_axis(set.values, 0); }

Tensor pool_mean(const FeatureSet& set) {
  return scale(sum_axis(set.values, 0), 1.0 / set.count());
}

Tensor pool_sum(const FeatureSet& set) { return sum_axis(set.values, 0); }

std::string aggregator_name(AggregatorKind kind) {
  switch (kind) {
    case AggregatorKind::kAttSetsFeature: return "attsets";
    case AggregatorKind::kAttSetsElement: return "attsets-element";
    case AggregatorKind::kMax: return "max";
    case AggregatorKind::kMean: return "mean";
    case AggregatorKind::kSum: return "sum";
  }
  return "?";
}

Tensor aggregate(AggregatorKind kind, const FeatureSet& set, const AttentionParams* params) {
  switch (kind) {
    case AggregatorKind::kAttSetsFeature:
      if (!params) throw std::invalid_argument("aggregate: attention params required");
      return attsets_feature(set, *params);
    case AggregatorKind::kAttSetsElement:
      if (!params) throw std::invalid_argument("aggregate: attention params required");
      return attsets_element(set, *params);
    case AggregatorKind::kMax: return pool_max(set);
    case AggregatorKind::kMean: return pool_mean(set);
    case AggregatorKind::kSum: return pool_sum(set);
  }
  throw std::invalid_argument("aggregate: unknown kind");
}

}  // namespace shapelab
