#pragma once

#include <string>

#include "shapelab/tensor.hpp"

namespace shapelab {

// A set of N row features of fixed width D. Aggregators reduce it to a single
// 1xD row regardless of N or element order.
struct FeatureSet {
  Tensor values;  // N x D

  explicit FeatureSet(Tensor v);
  int count() const { return values.shape()[0]; }
  int width() const { return values.shape()[1]; }
};

enum class AttentionMode { kFeatureWise, kElementWise };

// Weights of the attention activation g(x) = x * W. Feature-wise mode carries
// a square DxD matrix (one score per latent feature), element-wise mode a
// Dx1 column (one shared score per set element). No bias term.
struct AttentionParams {
  AttentionMode mode = AttentionMode::kFeatureWise;
  Tensor weight;

  static AttentionParams feature_wise(Tensor w);
  static AttentionParams element_wise(Tensor w);
};

// Feature-wise attentional aggregation: per-column softmax over the set of
// attention activations, then a weighted sum across elements.
Tensor attsets_feature(const FeatureSet& set, const AttentionParams& params);

// Element-wise variant: one scalar activation per row weights the whole row.
Tensor attsets_element(const FeatureSet& set, const AttentionParams& params);

Tensor pool_max(const FeatureSet& set);
Tensor pool_mean(const FeatureSet& set);
Tensor pool_sum(const FeatureSet& set);

enum class AggregatorKind { kAttSetsFeature, kAttSetsElement, kMax, kMean, kSum };

std::string aggregator_name(AggregatorKind kind);

// Dispatch helper; params may be null for the pooling kinds.
Tensor aggregate(AggregatorKind kind, const FeatureSet& set, const AttentionParams* params);

}  // namespace shapelab
