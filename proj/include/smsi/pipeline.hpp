#pragma once

// Training and evaluation orchestration shared by the CLI and the acceptance
// suite: stage-1 CNN -> fused-feature forest, per-primary stage-2 heads, and
// the cascade evaluation reports.

#include <cstdint>
#include <iosfwd>
#include <string>
#include <vector>

#include "smsi/cascade.hpp"
#include "smsi/confusion.hpp"
#include "smsi/dataset.hpp"

namespace smsi {

// Deterministic content fingerprint of a patch cache (size, count, CRC32 of
// records and pixels); stored in TrainingMeta so bundles record their data.
std::string patch_set_fingerprint(const PatchSet& set);

// Trains the stage-1 CNN on primary labels.  Per-epoch stats go to `log`
// when given.  Deterministic under (data, schedule, seed).
CnnModel train_stage1_cnn(const PatchSet& train, const Taxonomy& taxonomy,
                          const SgdSchedule& schedule, std::uint64_t seed,
                          std::ostream* log = nullptr);

// Deep features for every patch in the set, batched for throughput.
std::vector<std::vector<double>> deep_features_for_set(const CnnModel& cnn, const PatchSet& set,
                                                       int batch_size = 64);

// Extracts fused deep+quantization features for every training patch and
// grows the stage-1 forest.  hyper.seed is used as given.
ForestModel train_stage1_forest(const CnnModel& cnn, const PatchSet& train,
                                const std::vector<ManifestEntry>& entries,
                                const Taxonomy& taxonomy, const ForestHyper& hyper,
                                std::ostream* log = nullptr, int workers = 1);

// Trains the stage-2 head for one primary on the patches that share it.
// Throws NoSuchHead when the primary has fewer than two valid secondaries.
CnnModel train_stage2_head(const PatchSet& train, const Taxonomy& taxonomy,
                           const std::string& primary, const SgdSchedule& schedule,
                           std::uint64_t seed, std::ostream* log = nullptr);

struct EvaluateReport {
    ConfusionMatrix stage1;           // true primary x predicted primary
    ConfusionMatrix stage1_by_chain;  // true chain x predicted primary (Table IV layout)
    ConfusionMatrix chains;           // true chain x predicted chain (full cascade)
    double chain_accuracy = 0;        // chains.accuracy()
    double weighted_recall_check = 0; // chains.weighted_recall(); cross-check route
    double stage1_accuracy = 0;
    double balanced_by_chain = 0;     // unweighted mean per-chain recall
    double balanced_by_primary = 0;   // unweighted mean per-primary stage-1 recall

    std::string summary_json() const;
};

// Runs the full cascade over every test patch.  Throws SizeMismatch when the
// cache patch size differs from the bundle input size.
EvaluateReport evaluate_cascade(const CascadeModel& model, const PatchSet& test,
                                const std::vector<ManifestEntry>& entries,
                                std::ostream* log = nullptr);

}  // namespace smsi
