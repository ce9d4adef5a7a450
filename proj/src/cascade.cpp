#include "smsi/cascade.hpp"

#include <algorithm>
#include <map>

#include "smsi/errors.hpp"

namespace smsi {

void CascadeModel::validate(bool require_all_heads) const {
    taxonomy.validate();
    const int num_primaries = static_cast<int>(taxonomy.primaries.size());
    if (stage1_cnn.config.num_classes != num_primaries) {
        throw BadTaxonomy("stage-1 CNN has " + std::to_string(stage1_cnn.config.num_classes) +
                          " classes but the taxonomy has " + std::to_string(num_primaries) +
                          " primaries");
    }
    if (stage1_forest.num_classes != num_primaries) {
        throw BadTaxonomy("stage-1 forest has " + std::to_string(stage1_forest.num_classes) +
                          " classes but the taxonomy has " + std::to_string(num_primaries) +
                          " primaries");
    }
    const std::int64_t fused_length = num_primaries + 9;
    if (stage1_forest.feature_length != fused_length) {
        throw BadTaxonomy("stage-1 forest expects feature length " +
                          std::to_string(stage1_forest.feature_length) + ", fused vectors have " +
                          std::to_string(fused_length));
    }
    for (const std::string& primary : taxonomy.primaries) {
        const auto valid = taxonomy.secondaries_for(primary);
        const auto it = stage2.find(primary);
        if (it == stage2.end()) {
            if (valid.size() != 1 && require_all_heads) {
                throw BadTaxonomy("primary '" + primary + "' has " +
                                  std::to_string(valid.size()) +
                                  " valid secondaries but no stage-2 head");
            }
            continue;
        }
        if (valid.size() < 2) {
            throw BadTaxonomy("primary '" + primary +
                              "' has a stage-2 head but only one valid secondary");
        }
        const CnnModel& head = it->second;
        if (head.config.num_classes != static_cast<int>(valid.size())) {
            throw BadTaxonomy("stage-2 head for '" + primary + "' has " +
                              std::to_string(head.config.num_classes) + " classes, expected " +
                              std::to_string(valid.size()));
        }
        if (head.config.input_size != stage1_cnn.config.input_size ||
            head.config.channels != stage1_cnn.config.channels) {
            throw NnError("stage-2 head for '" + primary +
                          "' disagrees with stage 1 on patch shape");
        }
    }
    for (const auto& [primary, head] : stage2) {
        (void)head;
        if (!taxonomy.has_primary(primary)) {
            throw UnknownPrimary("stage-2 head primary '" + primary +
                                 "' is not in the taxonomy");
        }
    }
}

std::string stage1_classify(const CascadeModel& model, const Tensor<float>& patch,
                            const QFeature& q) {
    const std::vector<float> deep = deep_features(model.stage1_cnn, patch);
    std::vector<double> deep_d(deep.begin(), deep.end());
    const ForestPrediction pred = predict(model.stage1_forest, fuse(std::move(deep_d), q));
    return model.taxonomy.primaries.at(static_cast<std::size_t>(pred.class_index));
}

std::string stage2_classify(const CascadeModel& model, const Tensor<float>& patch,
                            const std::string& primary) {
    const std::vector<std::string> valid = model.taxonomy.secondaries_for(primary);
    const auto it = model.stage2.find(primary);
    if (it == model.stage2.end()) {
        return valid.front();  // sole valid secondary; no CNN evaluated
    }
    const Classification c = classify(it->second, patch);
    return valid.at(static_cast<std::size_t>(c.class_index));
}

ChainLabel classify_chain(const CascadeModel& model, const Tensor<float>& patch,
                          const QFeature& q, CascadeTrace* trace) {
    const std::string primary = stage1_classify(model, patch, q);
    if (trace != nullptr) {
        trace->stage1_class = model.taxonomy.primary_index(primary);
        trace->primary = primary;
        trace->head_invoked = model.stage2.count(primary) > 0;
        trace->head_primary = trace->head_invoked ? primary : std::string{};
    }
    return ChainLabel{stage2_classify(model, patch, primary), primary};
}

ChainLabel classify_chain(const CascadeModel& model, const Tensor<float>& patch,
                          std::span<const std::uint8_t> jpeg_stream, CascadeTrace* trace) {
    const LumaSelection luma = select_luma_table(extract_dqt(jpeg_stream));
    return classify_chain(model, patch, q_feature(luma.table), trace);
}

AggregateResult aggregate_image(const std::vector<ChainLabel>& chains) {
    if (chains.empty()) throw EmptyInput("aggregate_image needs at least one patch chain");
    std::map<std::string, int> votes;
    for (const ChainLabel& chain : chains) ++votes[chain.code()];
    const auto best = std::max_element(
        votes.begin(), votes.end(),
        [](const auto& a, const auto& b) { return a.second < b.second; });
    // std::max_element keeps the first maximum; std::map iterates codes in
    // lexicographic order, so ties already break to the smallest code.
    AggregateResult out;
    out.chain = parse_chain_code(best->first);
    out.patches = static_cast<int>(chains.size());
    out.confidence = static_cast<double>(best->second) / static_cast<double>(chains.size());
    return out;
}

}  // namespace smsi
