#pragma once

// The patch classification network: a single 3x3 convolution, four
// conv/batch-norm/tanh/max-pool blocks (96@7x7, 64@5x5, 64@5x5, 128@1x1),
// two 200-neuron fully connected layers, and a num_classes output layer.
// "Deep features" are that output layer's pre-softmax activations.

#include <cstdint>
#include <string>
#include <vector>

#include "smsi/layers.hpp"
#include "smsi/sgd.hpp"
#include "smsi/tensor.hpp"

namespace smsi {

struct CnnConfig {
    int input_size = 64;  // square patches; {64,128,256} unless allow_any_size
    int channels = 1;     // luminance by default, 3 supported
    int num_classes = 5;
    bool allow_any_size = false;

    void validate() const;  // throws UnsupportedInputSize / NnError
};

struct TrainingMeta {
    int epochs_trained = 0;
    SgdSchedule schedule;
    std::string dataset_fingerprint;
};

struct CnnModel {
    CnnConfig config;
    Net<float> net;
    TrainingMeta meta;
};

// The fixed layer stack; exposed so tests and docs can assert against it.
std::vector<LayerSpec> cnn_layer_stack(int num_classes);

// Freshly initialized model; deterministic for a given seed.
CnnModel build_cnn(const CnnConfig& config, std::uint64_t seed);

// Expected per-layer trainable parameter counts for a config (layer order
// matches cnn_layer_stack; activation/pool layers contribute 0).
std::vector<std::int64_t> cnn_parameter_counts(const CnnConfig& config);

// Output-layer activations before softmax; patch is {C,H,W}.
std::vector<float> deep_features(const CnnModel& model, const Tensor<float>& patch);

// Batched variant: [N,C,H,W] -> [N,num_classes].
Tensor<float> deep_features_batch(const CnnModel& model, const Tensor<float>& patches);

struct Classification {
    int class_index = 0;
    std::vector<float> probabilities;
};

// argmax + softmax over deep_features (exactly that composition).
Classification classify(const CnnModel& model, const Tensor<float>& patch);

}  // namespace smsi
