#include "smsi/cnn_model.hpp"

#include <algorithm>

#include "smsi/errors.hpp"

namespace smsi {

void CnnConfig::validate() const {
    if (channels != 1 && channels != 3) {
        throw NnError("channels must be 1 (luminance) or 3, got " + std::to_string(channels));
    }
    if (num_classes < 2) {
        throw NnError("num_classes must be >= 2, got " + std::to_string(num_classes));
    }
    const bool supported = input_size == 64 || input_size == 128 || input_size == 256;
    if (!supported && !allow_any_size) {
        throw UnsupportedInputSize("input size " + std::to_string(input_size) +
                                   " not in {64,128,256}; set allow_any_size to override");
    }
    if (input_size < 16) {
        // Four 2x2 pooling stages must keep the feature map non-empty.
        throw UnsupportedInputSize("input size " + std::to_string(input_size) +
                                   " collapses under four pooling stages");
    }
}

std::vector<LayerSpec> cnn_layer_stack(int num_classes) {
    std::vector<LayerSpec> specs;
    specs.push_back(LayerSpec::conv(6, 3));
    const int block_filters[4] = {96, 64, 64, 128};
    const int block_kernels[4] = {7, 5, 5, 1};
    for (int b = 0; b < 4; ++b) {
        specs.push_back(LayerSpec::conv(block_filters[b], block_kernels[b]));
        specs.push_back(LayerSpec::batch_norm());
        specs.push_back(LayerSpec::tanh());
        specs.push_back(LayerSpec::max_pool());
    }
    specs.push_back(LayerSpec::dense(200));
    specs.push_back(LayerSpec::tanh());
    specs.push_back(LayerSpec::dense(200));
    specs.push_back(LayerSpec::tanh());
    specs.push_back(LayerSpec::dense(num_classes));
    return specs;
}

CnnModel build_cnn(const CnnConfig& config, std::uint64_t seed) {
    config.validate();
    CnnModel model;
    model.config = config;
    model.net = Net<float>::build(cnn_layer_stack(config.num_classes),
                                  {config.channels, config.input_size, config.input_size}, seed);
    return model;
}

std::vector<std::int64_t> cnn_parameter_counts(const CnnConfig& config) {
    config.validate();
    const std::int64_t c = config.channels;
    const std::int64_t spatial = config.input_size / 16;  // after four 2x2 pools
    const std::int64_t flat = 128 * spatial * spatial;
    const std::int64_t k = config.num_classes;
    return {
        6 * c * 3 * 3 + 6,        // conv 6@3x3
        96L * 6 * 7 * 7 + 96,     // conv 96@7x7
        2 * 96,                   // batch norm (gamma, beta)
        0,                        // tanh
        0,                        // max pool
        64L * 96 * 5 * 5 + 64,    // conv 64@5x5
        2 * 64,                   //
        0,
        0,
        64L * 64 * 5 * 5 + 64,    // conv 64@5x5
        2 * 64,
        0,
        0,
        128L * 64 * 1 * 1 + 128,  // conv 128@1x1
        2 * 128,
        0,
        0,
        200 * flat + 200,         // dense 200
        0,
        200L * 200 + 200,         // dense 200
        0,
        k * 200 + k,              // dense num_classes
    };
}

namespace {

void check_patch(const CnnModel& model, const Tensor<float>& patch) {
    const Shape want{model.config.channels, model.config.input_size, model.config.input_size};
    if (patch.shape() != want) {
        throw ShapeMismatch("patch: expected " + shape_to_string(want) + ", got " +
                            shape_to_string(patch.shape()));
    }
}

}  // namespace

std::vector<float> deep_features(const CnnModel& model, const Tensor<float>& patch) {
    check_patch(model, patch);
    Shape batched{1};
    batched.insert(batched.end(), patch.shape().begin(), patch.shape().end());
    const Tensor<float> logits = model.net.infer(patch.reshaped(batched));
    return logits.vec();
}

Tensor<float> deep_features_batch(const CnnModel& model, const Tensor<float>& patches) {
    if (patches.rank() != 4) {
        throw ShapeMismatch("patch batch must be rank 4 [N,C,H,W], got " +
                            shape_to_string(patches.shape()));
    }
    return model.net.infer(patches);
}

Classification classify(const CnnModel& model, const Tensor<float>& patch) {
    Classification result;
    result.probabilities = softmax(deep_features(model, patch));
    result.class_index = static_cast<int>(std::distance(
        result.probabilities.begin(),
        std::max_element(result.probabilities.begin(), result.probabilities.end())));
    return result;
}

}  // namespace smsi
