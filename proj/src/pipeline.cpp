#include "smsi/pipeline.hpp"

#include <zlib.h>

#include <json.hpp>

#include <algorithm>
#include <cstdio>
#include <cstring>
#include <ostream>

#include "smsi/errors.hpp"
#include "smsi/rng.hpp"

namespace smsi {

namespace {

// Seed streams for derived randomness (see rng.hpp for the mixing contract).
constexpr std::uint64_t kEpochStream = 11;

void log_epoch(std::ostream* log, const char* what, int epoch, int total,
               const EpochStats& stats) {
    if (!log) return;
    (*log) << what << " epoch " << (epoch + 1) << "/" << total << "  lr " << stats.lr
           << "  loss " << stats.mean_loss << "  acc " << stats.accuracy << "\n";
    log->flush();
}

CnnModel train_cnn(const SampleSet<float>& samples, const CnnConfig& config,
                   const SgdSchedule& schedule, std::uint64_t seed, const char* what,
                   const std::string& fingerprint, std::ostream* log) {
    schedule.validate();
    CnnModel model = build_cnn(config, seed);
    model.meta.schedule = schedule;
    model.meta.dataset_fingerprint = fingerprint;

    SgdState<float> state;
    const std::uint64_t epoch_seed_base = mix_seed(seed, kEpochStream);
    for (int epoch = 0; epoch < schedule.total_epochs; ++epoch) {
        const EpochStats stats = sgd_epoch(model.net, samples, state, schedule, epoch,
                                           mix_seed(epoch_seed_base,
                                                    static_cast<std::uint64_t>(epoch)));
        log_epoch(log, what, epoch, schedule.total_epochs, stats);
    }
    model.meta.epochs_trained = schedule.total_epochs;
    return model;
}

ChainLabel checked_chain(const Taxonomy& taxonomy, const std::string& chain) {
    const ChainLabel label = parse_chain_code(chain);
    if (!taxonomy.is_valid_chain(label))
        throw DataError("patch chain '" + chain + "' is not in the taxonomy");
    return label;
}

int primary_label(const Taxonomy& taxonomy, const std::string& chain) {
    return static_cast<int>(taxonomy.primary_index(checked_chain(taxonomy, chain).primary));
}

}  // namespace

std::string patch_set_fingerprint(const PatchSet& set) {
    std::uint32_t crc = static_cast<std::uint32_t>(::crc32_z(0, Z_NULL, 0));
    auto mix = [&crc](const void* data, std::size_t size) {
        crc = static_cast<std::uint32_t>(
            ::crc32_z(crc, static_cast<const Bytef*>(data), size));
    };
    for (const auto& record : set.records) {
        mix(record.chain.data(), record.chain.size());
        mix(record.parent_id.data(), record.parent_id.size());
        mix(&record.offset_x, sizeof record.offset_x);
        mix(&record.offset_y, sizeof record.offset_y);
    }
    if (!set.pixels.empty()) mix(set.pixels.data(), set.pixels.size() * sizeof(float));
    char text[64];
    std::snprintf(text, sizeof text, "pset:size=%d,count=%lld,crc32=%08x", set.patch_size,
                  static_cast<long long>(set.count()), crc);
    return text;
}

CnnModel train_stage1_cnn(const PatchSet& train, const Taxonomy& taxonomy,
                          const SgdSchedule& schedule, std::uint64_t seed, std::ostream* log) {
    taxonomy.validate();
    const SampleSet<float> samples = stage1_samples(train, taxonomy);
    CnnConfig config;
    config.input_size = train.patch_size;
    config.channels = 1;
    config.num_classes = static_cast<int>(taxonomy.primaries.size());
    return train_cnn(samples, config, schedule, seed, "stage1", patch_set_fingerprint(train),
                     log);
}

std::vector<std::vector<double>> deep_features_for_set(const CnnModel& cnn, const PatchSet& set,
                                                       int batch_size) {
    if (batch_size < 1) batch_size = 1;
    const int s = set.patch_size;
    const std::int64_t n = set.count();
    std::vector<std::vector<double>> features;
    features.reserve(static_cast<std::size_t>(n));
    for (std::int64_t begin = 0; begin < n; begin += batch_size) {
        const std::int64_t count = std::min<std::int64_t>(batch_size, n - begin);
        Tensor<float> batch({count, 1, s, s});
        std::memcpy(batch.data(), set.patch(begin),
                    static_cast<std::size_t>(count) * s * s * sizeof(float));
        const Tensor<float> logits = deep_features_batch(cnn, batch);
        const std::int64_t k = logits.shape()[1];
        for (std::int64_t i = 0; i < count; ++i) {
            std::vector<double> row(static_cast<std::size_t>(k));
            for (std::int64_t j = 0; j < k; ++j)
                row[static_cast<std::size_t>(j)] = logits.data()[i * k + j];
            features.push_back(std::move(row));
        }
    }
    return features;
}

ForestModel train_stage1_forest(const CnnModel& cnn, const PatchSet& train,
                                const std::vector<ManifestEntry>& entries,
                                const Taxonomy& taxonomy, const ForestHyper& hyper,
                                std::ostream* log, int workers) {
    taxonomy.validate();
    if (train.count() == 0) throw EmptyDataset("no patches to train the forest on");
    if (train.patch_size != cnn.config.input_size)
        throw SizeMismatch("patch cache size " + std::to_string(train.patch_size) +
                           " does not match the stage-1 CNN input size " +
                           std::to_string(cnn.config.input_size));

    if (log) (*log) << "extracting fused features for " << train.count() << " patches\n";
    const std::vector<std::vector<double>> deep = deep_features_for_set(cnn, train);
    const std::vector<QFeature> q = patch_q_features(train, entries);

    std::vector<FeatureVector> samples;
    std::vector<int> labels;
    samples.reserve(deep.size());
    labels.reserve(deep.size());
    for (std::size_t i = 0; i < deep.size(); ++i) {
        samples.push_back(fuse(deep[i], q[i]));
        labels.push_back(primary_label(taxonomy, train.records[i].chain));
    }
    // The forest derives its class count from the labels it sees, so a cache
    // that lacks a whole primary would yield a model the cascade rejects with
    // a confusing message much later; fail here with the real cause.
    std::vector<bool> seen(taxonomy.primaries.size(), false);
    for (int label : labels) seen[static_cast<std::size_t>(label)] = true;
    for (std::size_t c = 0; c < seen.size(); ++c)
        if (!seen[c])
            throw DataError("training cache has no patches for primary '" +
                            taxonomy.primaries[c] + "'");
    if (log) (*log) << "growing " << hyper.tree_count << " trees\n";
    return train_forest(samples, labels, hyper, workers);
}

CnnModel train_stage2_head(const PatchSet& train, const Taxonomy& taxonomy,
                           const std::string& primary, const SgdSchedule& schedule,
                           std::uint64_t seed, std::ostream* log) {
    taxonomy.validate();
    const std::vector<std::string> valid = taxonomy.secondaries_for(primary);
    if (valid.size() < 2)
        throw NoSuchHead("primary '" + primary + "' has a single valid secondary ('" +
                         (valid.empty() ? std::string("?") : valid.front()) +
                         "'); no stage-2 head exists for it");
    const SampleSet<float> samples = stage2_samples(train, taxonomy, primary);
    CnnConfig config;
    config.input_size = train.patch_size;
    config.channels = 1;
    config.num_classes = static_cast<int>(valid.size());
    return train_cnn(samples, config, schedule, seed, ("stage2." + primary).c_str(),
                     patch_set_fingerprint(train), log);
}

std::string EvaluateReport::summary_json() const {
    nlohmann::json root;
    root["patches"] = chains.total();
    root["chain_accuracy"] = chain_accuracy;
    root["weighted_recall_check"] = weighted_recall_check;
    root["stage1_accuracy"] = stage1_accuracy;
    root["balanced_by_chain"] = balanced_by_chain;
    root["balanced_by_primary"] = balanced_by_primary;
    nlohmann::json per_chain;
    for (std::size_t r = 0; r < chains.row_labels.size(); ++r)
        per_chain[chains.row_labels[r]] = chains.recall(r);
    root["per_chain_recall"] = per_chain;
    nlohmann::json per_primary;
    for (std::size_t r = 0; r < stage1.row_labels.size(); ++r)
        per_primary[stage1.row_labels[r]] = stage1.recall(r);
    root["per_primary_stage1_recall"] = per_primary;
    return root.dump(2) + "\n";
}

EvaluateReport evaluate_cascade(const CascadeModel& model, const PatchSet& test,
                                const std::vector<ManifestEntry>& entries, std::ostream* log) {
    model.validate();
    if (test.patch_size != model.stage1_cnn.config.input_size)
        throw SizeMismatch("test cache patch size " + std::to_string(test.patch_size) +
                           " does not match the bundle input size " +
                           std::to_string(model.stage1_cnn.config.input_size));
    if (test.count() == 0) throw EmptyDataset("test cache is empty");

    const Taxonomy& taxonomy = model.taxonomy;
    const std::vector<QFeature> q = patch_q_features(test, entries);

    EvaluateReport report;
    report.stage1 = ConfusionMatrix::make(taxonomy.primaries, taxonomy.primaries);
    report.stage1_by_chain = ConfusionMatrix::make(taxonomy.chains, taxonomy.primaries);
    for (const auto& chain : taxonomy.chains)
        report.stage1_by_chain.set_correct(chain, parse_chain_code(chain).primary);
    report.chains = ConfusionMatrix::make(taxonomy.chains, taxonomy.chains);

    const int s = test.patch_size;
    Tensor<float> patch({1, s, s});
    for (std::int64_t i = 0; i < test.count(); ++i) {
        const std::string& true_chain = test.records[static_cast<std::size_t>(i)].chain;
        const ChainLabel true_label = checked_chain(taxonomy, true_chain);
        std::memcpy(patch.data(), test.patch(i),
                    static_cast<std::size_t>(s) * s * sizeof(float));
        CascadeTrace trace;
        const ChainLabel predicted =
            classify_chain(model, patch, q[static_cast<std::size_t>(i)], &trace);
        report.stage1.add(true_label.primary, trace.primary);
        report.stage1_by_chain.add(true_chain, trace.primary);
        report.chains.add(true_chain, predicted.code());
        if (log && (i + 1) % 500 == 0) {
            (*log) << "evaluated " << (i + 1) << "/" << test.count() << " patches\n";
            log->flush();
        }
    }

    report.chain_accuracy = report.chains.accuracy();
    report.weighted_recall_check = report.chains.weighted_recall();
    report.stage1_accuracy = report.stage1.accuracy();
    report.balanced_by_chain = report.chains.macro_recall();
    report.balanced_by_primary = report.stage1.macro_recall();
    return report;
}

}  // namespace smsi
