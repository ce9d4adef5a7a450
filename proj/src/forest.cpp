#include "smsi/forest.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>
#include <random>
#include <thread>

#include "smsi/errors.hpp"

namespace smsi {

std::vector<double> FeatureVector::fused() const {
    std::vector<double> out;
    out.reserve(deep.size() + 9);
    out.insert(out.end(), deep.begin(), deep.end());
    for (int c : quant.coefficients) out.push_back(static_cast<double>(c));
    return out;
}

FeatureVector fuse(std::vector<double> deep, const QFeature& q) {
    if (deep.size() < 2) {
        throw ForestError("deep feature vector must have >= 2 entries (one per stage-1 class), got " +
                          std::to_string(deep.size()));
    }
    FeatureVector fv;
    fv.deep = std::move(deep);
    fv.quant = q;
    return fv;
}

void ForestHyper::validate() const {
    if (tree_count < 1) throw ForestError("tree_count must be >= 1");
    if (max_features < 0) throw ForestError("max_features must be >= 0 (0 = ceil(sqrt(d)))");
    if (min_samples_leaf < 1) throw ForestError("min_samples_leaf must be >= 1");
}

namespace {

// Every random decision for tree t comes from mt19937_64(seed ^ t) in a
// documented draw order (bootstrap indices, then per-node feature subsets in
// depth-first left-before-right order, then extra-trees thresholds).  The
// test suite's reference implementation reproduces this protocol.
std::mt19937_64 tree_engine(std::uint64_t seed, int tree_index) {
    return std::mt19937_64(seed ^ static_cast<std::uint64_t>(tree_index));
}

double gini_from_counts(const std::vector<std::int64_t>& counts, std::int64_t n) {
    double ssq = 0;
    for (std::int64_t c : counts) ssq += static_cast<double>(c) * static_cast<double>(c);
    return 1.0 - ssq / (static_cast<double>(n) * static_cast<double>(n));
}

struct TreeBuilder {
    const std::vector<double>& x;  // row-major n x d
    const std::vector<int>& y;
    std::int64_t d;
    int num_classes;
    const ForestHyper& hyper;
    int max_features;
    std::mt19937_64 rng;
    Tree tree;

    double value(std::int64_t sample, std::int64_t feature) const {
        return x[static_cast<std::size_t>(sample * d + feature)];
    }

    std::vector<std::int64_t> histogram(const std::vector<std::int64_t>& idx) const {
        std::vector<std::int64_t> h(static_cast<std::size_t>(num_classes), 0);
        for (std::int64_t i : idx) ++h[static_cast<std::size_t>(y[static_cast<std::size_t>(i)])];
        return h;
    }

    // Partial Fisher-Yates over [0,d), first k entries, returned sorted so
    // candidate features are always evaluated in ascending order.
    std::vector<std::int64_t> sample_features() {
        std::vector<std::int64_t> pool(static_cast<std::size_t>(d));
        std::iota(pool.begin(), pool.end(), 0);
        const std::int64_t k = std::min<std::int64_t>(max_features, d);
        for (std::int64_t i = 0; i < k; ++i) {
            std::uniform_int_distribution<std::int64_t> pick(i, d - 1);
            std::swap(pool[static_cast<std::size_t>(i)], pool[static_cast<std::size_t>(pick(rng))]);
        }
        std::vector<std::int64_t> subset(pool.begin(), pool.begin() + k);
        std::sort(subset.begin(), subset.end());
        return subset;
    }

    struct Split {
        bool found = false;
        std::int64_t feature = -1;
        double threshold = 0;
        double weighted_gini = 0;
    };

    // Best CART split over the sampled features: thresholds are midpoints
    // between consecutive distinct values; strict < comparisons mean the
    // lowest feature index and lowest threshold win ties.
    Split best_cart_split(const std::vector<std::int64_t>& idx,
                          const std::vector<std::int64_t>& features) const {
        const std::int64_t n = static_cast<std::int64_t>(idx.size());
        Split best;
        best.weighted_gini = std::numeric_limits<double>::infinity();
        std::vector<std::pair<double, int>> pairs;
        pairs.reserve(idx.size());
        for (std::int64_t f : features) {
            pairs.clear();
            for (std::int64_t i : idx) {
                pairs.emplace_back(value(i, f), y[static_cast<std::size_t>(i)]);
            }
            std::sort(pairs.begin(), pairs.end(),
                      [](const auto& a, const auto& b) { return a.first < b.first; });
            if (pairs.front().first == pairs.back().first) continue;  // constant feature

            std::vector<std::int64_t> left(static_cast<std::size_t>(num_classes), 0);
            std::vector<std::int64_t> right = histogram(idx);
            std::int64_t nl = 0;
            std::size_t i = 0;
            while (i < pairs.size()) {
                // Move one group of equal values to the left side.
                const double v = pairs[i].first;
                std::size_t j = i;
                while (j < pairs.size() && pairs[j].first == v) {
                    ++left[static_cast<std::size_t>(pairs[j].second)];
                    --right[static_cast<std::size_t>(pairs[j].second)];
                    ++nl;
                    ++j;
                }
                i = j;
                if (i == pairs.size()) break;  // no boundary after the last group
                const std::int64_t nr = n - nl;
                if (nl < hyper.min_samples_leaf || nr < hyper.min_samples_leaf) continue;
                const double weighted =
                    (static_cast<double>(nl) * gini_from_counts(left, nl) +
                     static_cast<double>(nr) * gini_from_counts(right, nr)) /
                    static_cast<double>(n);
                if (weighted < best.weighted_gini) {
                    best.found = true;
                    best.feature = f;
                    best.threshold = (v + pairs[i].first) / 2.0;
                    best.weighted_gini = weighted;
                }
            }
        }
        return best;
    }

    // Extra-trees: one uniform threshold per non-constant candidate feature.
    Split best_random_split(const std::vector<std::int64_t>& idx,
                            const std::vector<std::int64_t>& features) {
        const std::int64_t n = static_cast<std::int64_t>(idx.size());
        Split best;
        best.weighted_gini = std::numeric_limits<double>::infinity();
        for (std::int64_t f : features) {
            double lo = std::numeric_limits<double>::infinity();
            double hi = -std::numeric_limits<double>::infinity();
            for (std::int64_t i : idx) {
                lo = std::min(lo, value(i, f));
                hi = std::max(hi, value(i, f));
            }
            if (!(lo < hi)) continue;  // constant feature: no rng draw
            std::uniform_real_distribution<double> dist(lo, hi);
            const double thr = dist(rng);
            std::vector<std::int64_t> left(static_cast<std::size_t>(num_classes), 0);
            std::vector<std::int64_t> right(static_cast<std::size_t>(num_classes), 0);
            std::int64_t nl = 0;
            for (std::int64_t i : idx) {
                if (value(i, f) <= thr) {
                    ++left[static_cast<std::size_t>(y[static_cast<std::size_t>(i)])];
                    ++nl;
                } else {
                    ++right[static_cast<std::size_t>(y[static_cast<std::size_t>(i)])];
                }
            }
            const std::int64_t nr = n - nl;
            if (nl < hyper.min_samples_leaf || nr < hyper.min_samples_leaf) continue;
            const double weighted = (static_cast<double>(nl) * gini_from_counts(left, nl) +
                                     static_cast<double>(nr) * gini_from_counts(right, nr)) /
                                    static_cast<double>(n);
            if (weighted < best.weighted_gini) {
                best.found = true;
                best.feature = f;
                best.threshold = thr;
                best.weighted_gini = weighted;
            }
        }
        return best;
    }

    std::int32_t build(std::vector<std::int64_t>& idx) {
        const std::int32_t id = static_cast<std::int32_t>(tree.nodes.size());
        tree.nodes.emplace_back();
        std::vector<std::int64_t> hist = histogram(idx);
        const std::int64_t nonzero =
            std::count_if(hist.begin(), hist.end(), [](std::int64_t c) { return c > 0; });
        if (idx.size() < 2 || nonzero <= 1) {
            tree.nodes[static_cast<std::size_t>(id)].histogram = std::move(hist);
            return id;
        }
        const std::vector<std::int64_t> features = sample_features();
        const Split split = hyper.extra_trees ? best_random_split(idx, features)
                                              : best_cart_split(idx, features);
        if (!split.found) {
            tree.nodes[static_cast<std::size_t>(id)].histogram = std::move(hist);
            return id;
        }
        std::vector<std::int64_t> left_idx;
        std::vector<std::int64_t> right_idx;
        for (std::int64_t i : idx) {
            if (value(i, split.feature) <= split.threshold) {
                left_idx.push_back(i);
            } else {
                right_idx.push_back(i);
            }
        }
        idx.clear();
        idx.shrink_to_fit();
        const std::int32_t left = build(left_idx);
        const std::int32_t right = build(right_idx);
        TreeNode& node = tree.nodes[static_cast<std::size_t>(id)];
        node.feature = static_cast<std::int32_t>(split.feature);
        node.threshold = split.threshold;
        node.left = left;
        node.right = right;
        return id;
    }
};

Tree grow_tree(const std::vector<double>& x, const std::vector<int>& y, std::int64_t n,
               std::int64_t d, int num_classes, const ForestHyper& hyper, int max_features,
               int tree_index) {
    TreeBuilder builder{x, y, d, num_classes, hyper, max_features,
                        tree_engine(hyper.seed, tree_index), Tree{}};
    std::vector<std::int64_t> idx;
    idx.reserve(static_cast<std::size_t>(n));
    if (hyper.bootstrap && !hyper.extra_trees) {
        std::uniform_int_distribution<std::int64_t> pick(0, n - 1);
        for (std::int64_t i = 0; i < n; ++i) idx.push_back(pick(builder.rng));
    } else {
        idx.resize(static_cast<std::size_t>(n));
        std::iota(idx.begin(), idx.end(), 0);
    }
    builder.build(idx);
    return std::move(builder.tree);
}

}  // namespace

ForestModel train_forest(const std::vector<FeatureVector>& samples, const std::vector<int>& labels,
                         const ForestHyper& hyper, int workers) {
    hyper.validate();
    if (samples.empty()) throw ForestError("cannot train a forest on zero samples");
    if (samples.size() != labels.size()) {
        throw ForestError("sample/label count mismatch: " + std::to_string(samples.size()) +
                          " vs " + std::to_string(labels.size()));
    }
    const std::int64_t n = static_cast<std::int64_t>(samples.size());
    const std::int64_t d = samples.front().fused_length();
    for (std::size_t i = 0; i < samples.size(); ++i) {
        if (samples[i].fused_length() != d) {
            throw RaggedFeatures("feature vector " + std::to_string(i) + " has length " +
                                 std::to_string(samples[i].fused_length()) + ", expected " +
                                 std::to_string(d));
        }
    }
    int num_classes = 0;
    for (int label : labels) {
        if (label < 0) throw ForestError("negative class label " + std::to_string(label));
        num_classes = std::max(num_classes, label + 1);
    }

    ForestModel model;
    model.hyper = hyper;
    model.feature_length = d;
    model.num_classes = num_classes;

    const bool single_class =
        std::all_of(labels.begin(), labels.end(), [&](int l) { return l == labels.front(); });
    if (single_class) {
        model.degenerate = true;
        model.warning = "training set contains a single class (" +
                        std::to_string(labels.front()) + "); constant classifier";
        Tree constant;
        constant.nodes.emplace_back();
        constant.nodes.back().histogram.assign(static_cast<std::size_t>(num_classes), 0);
        constant.nodes.back().histogram[static_cast<std::size_t>(labels.front())] = n;
        model.trees.assign(static_cast<std::size_t>(hyper.tree_count), constant);
        return model;
    }

    std::vector<double> x(static_cast<std::size_t>(n * d));
    for (std::int64_t i = 0; i < n; ++i) {
        const std::vector<double> fv = samples[static_cast<std::size_t>(i)].fused();
        std::copy(fv.begin(), fv.end(), x.begin() + static_cast<std::ptrdiff_t>(i * d));
    }

    const int max_features =
        hyper.max_features > 0
            ? std::min<int>(hyper.max_features, static_cast<int>(d))
            : static_cast<int>(std::ceil(std::sqrt(static_cast<double>(d))));

    model.trees.resize(static_cast<std::size_t>(hyper.tree_count));
    const auto grow_range = [&](int first, int step) {
        for (int t = first; t < hyper.tree_count; t += step) {
            model.trees[static_cast<std::size_t>(t)] =
                grow_tree(x, labels, n, d, num_classes, hyper, max_features, t);
        }
    };
    const int thread_count = std::max(1, std::min(workers, hyper.tree_count));
    if (thread_count == 1) {
        grow_range(0, 1);
    } else {
        std::vector<std::thread> pool;
        pool.reserve(static_cast<std::size_t>(thread_count));
        for (int w = 0; w < thread_count; ++w) pool.emplace_back(grow_range, w, thread_count);
        for (auto& th : pool) th.join();
    }
    return model;
}

ForestPrediction predict_fused(const ForestModel& model, const std::vector<double>& fused) {
    if (static_cast<std::int64_t>(fused.size()) != model.feature_length) {
        throw LengthMismatch("feature vector length " + std::to_string(fused.size()) +
                             " does not match trained length " +
                             std::to_string(model.feature_length));
    }
    ForestPrediction pred;
    pred.votes.assign(static_cast<std::size_t>(model.num_classes), 0);
    for (const Tree& tree : model.trees) {
        std::int32_t node = 0;
        while (tree.nodes[static_cast<std::size_t>(node)].feature >= 0) {
            const TreeNode& cur = tree.nodes[static_cast<std::size_t>(node)];
            node = fused[static_cast<std::size_t>(cur.feature)] <= cur.threshold ? cur.left
                                                                                 : cur.right;
        }
        const auto& hist = tree.nodes[static_cast<std::size_t>(node)].histogram;
        std::size_t vote = 0;
        for (std::size_t k = 1; k < hist.size(); ++k) {
            if (hist[k] > hist[vote]) vote = k;  // ties keep the lowest class
        }
        ++pred.votes[vote];
    }
    std::size_t arg = 0;
    for (std::size_t k = 1; k < pred.votes.size(); ++k) {
        if (pred.votes[k] > pred.votes[arg]) arg = k;
    }
    pred.class_index = static_cast<int>(arg);
    return pred;
}

ForestPrediction predict(const ForestModel& model, const FeatureVector& fv) {
    return predict_fused(model, fv.fused());
}

}  // namespace smsi
