#pragma once

// The two-stage decision system: stage 1 names the most recent platform
// (primary label) from fused CNN + quantization features, stage 2 routes the
// patch to that primary's own CNN head to name the platform before it
// (secondary label).  Primaries with a single valid secondary have no head;
// their secondary is deterministic.

#include <cstdint>
#include <map>
#include <span>
#include <string>
#include <vector>

#include "smsi/cnn_model.hpp"
#include "smsi/forest.hpp"
#include "smsi/jpeg_meta.hpp"
#include "smsi/taxonomy.hpp"
#include "smsi/tensor.hpp"

namespace smsi {

struct CascadeModel {
    Taxonomy taxonomy;
    CnnModel stage1_cnn;
    ForestModel stage1_forest;
    std::map<std::string, CnnModel> stage2;  // primary code -> head

    // Structural checks: taxonomy self-consistent, class counts line up with
    // the taxonomy, heads exist exactly for primaries with >= 2 valid
    // secondaries, and all CNNs share one patch size.  Throws BadTaxonomy /
    // NnError.  Immutable after validation; classify calls are const.
    // With require_all_heads = false, heads may be missing (a stage-1-only
    // model, as persisted between train-stage1 and train-stage2) but any head
    // that is present must still be consistent.
    void validate(bool require_all_heads = true) const;
};

// Records which classifiers ran for one classify_chain call, so tests can
// assert that a stage-2 head is only ever invoked with its own primary.
struct CascadeTrace {
    int stage1_class = -1;
    std::string primary;
    bool head_invoked = false;
    std::string head_primary;  // set only when head_invoked
};

// Eq. 1: forest prediction over fuse(deep_features(stage1_cnn, patch), q).
// Returns the primary code.  Shape/length errors propagate.
std::string stage1_classify(const CascadeModel& model, const Tensor<float>& patch,
                            const QFeature& q);

// The routed head's argmax mapped onto secondaries_for(primary); without a
// head, the sole valid secondary with no CNN evaluated.  Throws
// UnknownPrimary for labels outside the taxonomy.
std::string stage2_classify(const CascadeModel& model, const Tensor<float>& patch,
                            const std::string& primary);

// Pure composition of the two stages; the result is always a valid chain.
ChainLabel classify_chain(const CascadeModel& model, const Tensor<float>& patch,
                          const QFeature& q, CascadeTrace* trace = nullptr);

// Convenience overload: reads the quantization feature from a JPEG stream
// (parse errors such as NoDqt propagate).
ChainLabel classify_chain(const CascadeModel& model, const Tensor<float>& patch,
                          std::span<const std::uint8_t> jpeg_stream,
                          CascadeTrace* trace = nullptr);

struct AggregateResult {
    ChainLabel chain;
    double confidence = 0;  // fraction of patches voting for `chain`
    int patches = 0;
};

// Majority vote over the per-patch chains of one image; ties break to the
// lexicographically smallest chain code.  Throws EmptyInput.
AggregateResult aggregate_image(const std::vector<ChainLabel>& chains);

}  // namespace smsi
