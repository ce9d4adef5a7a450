// cnn_model: architecture constants, parameter counts, classify /
// deep-feature consistency, determinism, input-size guards.

#include <cmath>
#include <cstring>
#include <random>

#include <doctest.h>

#include "smsi/cnn_model.hpp"
#include "smsi/errors.hpp"
#include "smsi/rng.hpp"

using namespace smsi;

namespace {

Tensor<float> random_patch(int size, std::uint64_t seed) {
    Tensor<float> p({1, size, size});
    auto rng = make_engine(seed);
    std::uniform_real_distribution<float> dist(0.0f, 1.0f);
    for (std::int64_t i = 0; i < p.numel(); ++i) p[i] = dist(rng);
    return p;
}

}  // namespace

TEST_CASE("layer stack matches the published architecture") {
    const auto specs = cnn_layer_stack(5);
    REQUIRE(specs.size() == 22);
    CHECK(specs[0].kind == LayerKind::Conv);
    CHECK(specs[0].filters == 6);
    CHECK(specs[0].kernel == 3);
    const int filters[4] = {96, 64, 64, 128};
    const int kernels[4] = {7, 5, 5, 1};
    for (int b = 0; b < 4; ++b) {
        const std::size_t base = 1 + 4 * static_cast<std::size_t>(b);
        CHECK(specs[base].kind == LayerKind::Conv);
        CHECK(specs[base].filters == filters[b]);
        CHECK(specs[base].kernel == kernels[b]);
        CHECK(specs[base + 1].kind == LayerKind::BatchNorm);
        CHECK(specs[base + 2].kind == LayerKind::Tanh);
        CHECK(specs[base + 3].kind == LayerKind::MaxPool);
    }
    CHECK(specs[17].kind == LayerKind::Dense);
    CHECK(specs[17].neurons == 200);
    CHECK(specs[19].kind == LayerKind::Dense);
    CHECK(specs[19].neurons == 200);
    CHECK(specs[21].kind == LayerKind::Dense);
    CHECK(specs[21].neurons == 5);
}

TEST_CASE("output layer width follows num_classes") {
    CnnConfig five;
    five.num_classes = 5;  // stage-1 primary labels
    const CnnModel m5 = build_cnn(five, 1);
    CHECK(m5.net.output_shape() == Shape{5});

    CnnConfig four;
    four.num_classes = 4;  // a stage-2 head
    const CnnModel m4 = build_cnn(four, 1);
    CHECK(m4.net.output_shape() == Shape{4});
}

TEST_CASE("feature maps stay positive through all four pooling stages") {
    for (int size : {64, 128, 256}) {
        CnnConfig cfg;
        cfg.input_size = size;
        const CnnModel model = build_cnn(cfg, 2);
        // Layer 16 is the last max pool; spatial size must be size/16.
        const Shape after_pools = model.net.layer(16).output_shape();
        CHECK(after_pools == Shape{128, size / 16, size / 16});
    }
}

TEST_CASE("per-layer parameter counts match the documented closed forms") {
    CnnConfig cfg;  // 64, 1 channel, 5 classes
    const CnnModel model = build_cnn(cfg, 3);
    const auto expected = cnn_parameter_counts(cfg);
    REQUIRE(expected.size() == model.net.num_layers());

    // Documented values for the 64-pixel, 5-class stage-1 network.
    CHECK(expected[0] == 60);
    CHECK(expected[1] == 28320);
    CHECK(expected[2] == 192);
    CHECK(expected[5] == 153664);
    CHECK(expected[9] == 102464);
    CHECK(expected[13] == 8320);
    CHECK(expected[17] == 409800);
    CHECK(expected[19] == 40200);
    CHECK(expected[21] == 1005);

    std::int64_t total = 0;
    for (std::size_t i = 0; i < expected.size(); ++i) {
        std::int64_t actual = 0;
        const Layer<float>& layer = model.net.layer(i);
        for (const Tensor<float>* p : layer.params()) actual += p->numel();
        CHECK(actual == expected[i]);
        total += actual;
    }
    CHECK(total == model.net.parameter_count());
    CHECK(total == 744537);
}

TEST_CASE("same seed builds bit-identical models") {
    CnnConfig cfg;
    CnnModel a = build_cnn(cfg, 77);
    CnnModel b = build_cnn(cfg, 77);
    CnnModel c = build_cnn(cfg, 78);
    auto sa = a.net.state();
    auto sb = b.net.state();
    auto sc = c.net.state();
    REQUIRE(sa.size() == sb.size());
    bool same = true;
    bool differ = false;
    for (std::size_t i = 0; i < sa.size(); ++i) {
        same = same && std::memcmp(sa[i].second->data(), sb[i].second->data(),
                                   sizeof(float) * static_cast<std::size_t>(
                                                       sa[i].second->numel())) == 0;
        differ = differ || std::memcmp(sa[i].second->data(), sc[i].second->data(),
                                       sizeof(float) * static_cast<std::size_t>(
                                                           sa[i].second->numel())) != 0;
    }
    CHECK(same);
    CHECK(differ);
}

TEST_CASE("unsupported input sizes require the override flag") {
    CnnConfig cfg;
    cfg.input_size = 96;
    CHECK_THROWS_AS((void)build_cnn(cfg, 1), UnsupportedInputSize);
    cfg.allow_any_size = true;
    const CnnModel model = build_cnn(cfg, 1);
    CHECK(model.net.layer(16).output_shape() == Shape{128, 6, 6});
    cfg.input_size = 8;  // collapses under four pools even with the override
    CHECK_THROWS_AS((void)build_cnn(cfg, 1), UnsupportedInputSize);
}

TEST_CASE("classify equals argmax of softmax of deep_features, exactly") {
    CnnConfig cfg;
    cfg.allow_any_size = true;
    cfg.input_size = 32;  // keep the test fast; identity holds at any size
    const CnnModel model = build_cnn(cfg, 5);
    const Tensor<float> patch = random_patch(32, 6);

    const std::vector<float> feats = deep_features(model, patch);
    REQUIRE(static_cast<int>(feats.size()) == cfg.num_classes);
    const std::vector<float> probs = softmax(feats);
    const Classification cls = classify(model, patch);
    REQUIRE(cls.probabilities.size() == probs.size());
    for (std::size_t i = 0; i < probs.size(); ++i) CHECK(cls.probabilities[i] == probs[i]);
    int arg = 0;
    for (std::size_t i = 1; i < probs.size(); ++i) {
        if (probs[i] > probs[static_cast<std::size_t>(arg)]) arg = static_cast<int>(i);
    }
    CHECK(cls.class_index == arg);

    double sum = 0;
    for (float p : cls.probabilities) sum += p;
    CHECK(std::abs(sum - 1.0) < 1e-6);
}

TEST_CASE("classification is pure: identical outputs on repeat calls") {
    CnnConfig cfg;
    cfg.allow_any_size = true;
    cfg.input_size = 32;
    const CnnModel model = build_cnn(cfg, 7);
    const Tensor<float> patch = random_patch(32, 8);
    const Classification a = classify(model, patch);
    const Classification b = classify(model, patch);
    CHECK(a.class_index == b.class_index);
    for (std::size_t i = 0; i < a.probabilities.size(); ++i) {
        CHECK(a.probabilities[i] == b.probabilities[i]);
    }

    const Tensor<float> zero({1, 32, 32});
    const Classification z1 = classify(model, zero);
    const Classification z2 = classify(model, zero);
    for (std::size_t i = 0; i < z1.probabilities.size(); ++i) {
        CHECK(z1.probabilities[i] == z2.probabilities[i]);
    }
}

TEST_CASE("untrained model probabilities are near uniform over random patches") {
    CnnConfig cfg;  // full 64-pixel geometry
    const CnnModel model = build_cnn(cfg, 9);
    const float uniform = 1.0f / static_cast<float>(cfg.num_classes);

    // Batch the 100 patches through one inference call.
    Tensor<float> batch({100, 1, 64, 64});
    auto rng = make_engine(10);
    std::uniform_real_distribution<float> dist(0.0f, 1.0f);
    for (std::int64_t i = 0; i < batch.numel(); ++i) batch[i] = dist(rng);
    const Tensor<float> logits = deep_features_batch(model, batch);
    REQUIRE(logits.shape() == Shape{100, 5});
    for (std::int64_t n = 0; n < 100; ++n) {
        std::vector<float> row(logits.data() + n * 5, logits.data() + (n + 1) * 5);
        for (float p : softmax(row)) CHECK(std::abs(p - uniform) < 0.2f);
    }
}

TEST_CASE("wrong patch shapes raise ShapeMismatch") {
    CnnConfig cfg;
    const CnnModel model = build_cnn(cfg, 11);
    CHECK_THROWS_AS((void)deep_features(model, Tensor<float>({1, 32, 32})), ShapeMismatch);
    CHECK_THROWS_AS((void)deep_features(model, Tensor<float>({3, 64, 64})), ShapeMismatch);
    CHECK_THROWS_AS((void)deep_features(model, Tensor<float>({64, 64})), ShapeMismatch);
    CHECK_THROWS_AS((void)deep_features_batch(model, Tensor<float>({1, 32, 32})), ShapeMismatch);
}
