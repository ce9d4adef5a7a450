#pragma once

// Random-forest classifier over fused feature vectors (deep CNN features
// concatenated with the 9 quantization coefficients).  Classic CART/Gini
// trees with bootstrap resampling by default; an extra-trees mode (random
// thresholds, no bootstrap) is available behind a flag.

#include <cstdint>
#include <string>
#include <vector>

#include "smsi/jpeg_meta.hpp"

namespace smsi {

struct FeatureVector {
    std::vector<double> deep;  // stage-1 logits, length = num_classes (>= 2)
    QFeature quant;            // 9 luma quantization coefficients

    // deep entries first, then the quant coefficients cast to reals.
    std::vector<double> fused() const;
    std::int64_t fused_length() const { return static_cast<std::int64_t>(deep.size()) + 9; }
};

// Validates deep.size() >= 2 (stage-1 taxonomies have at least two classes).
FeatureVector fuse(std::vector<double> deep, const QFeature& q);

struct ForestHyper {
    int tree_count = 100;
    int max_features = 0;  // per-split subset size; 0 means ceil(sqrt(d))
    int min_samples_leaf = 1;
    bool bootstrap = true;
    bool extra_trees = false;  // random thresholds, no bootstrap
    std::uint64_t seed = 0;

    void validate() const;
};

struct TreeNode {
    std::int32_t feature = -1;  // -1 marks a leaf
    double threshold = 0;       // internal: go left when x[feature] <= threshold
    std::int32_t left = -1;
    std::int32_t right = -1;
    std::vector<std::int64_t> histogram;  // leaf class counts
};

struct Tree {
    std::vector<TreeNode> nodes;  // node 0 is the root
};

struct ForestModel {
    ForestHyper hyper;
    int num_classes = 0;
    std::int64_t feature_length = 0;
    bool degenerate = false;  // single-class training set -> constant classifier
    std::string warning;
    std::vector<Tree> trees;
};

// Grows hyper.tree_count trees; tree t draws every random decision from an
// engine seeded with (seed XOR t), so scheduling across workers cannot
// change the result.  A single-class training set yields a constant
// classifier with a warning recorded on the model (not an error).
// Throws RaggedFeatures when vectors disagree in length.
ForestModel train_forest(const std::vector<FeatureVector>& samples,
                         const std::vector<int>& labels, const ForestHyper& hyper,
                         int workers = 1);

struct ForestPrediction {
    int class_index = 0;
    std::vector<std::int64_t> votes;  // per class; sums to tree_count
};

// Majority vote over trees; ties break to the lowest class index.
// Throws LengthMismatch when fv's fused length differs from training.
ForestPrediction predict(const ForestModel& model, const FeatureVector& fv);
ForestPrediction predict_fused(const ForestModel& model, const std::vector<double>& fused);

}  // namespace smsi
