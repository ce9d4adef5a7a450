#include <doctest.h>

#include <algorithm>
#include <cstdint>
#include <filesystem>
#include <fstream>
#include <random>
#include <string>
#include <vector>

#include "smsi/bundle.hpp"
#include "smsi/cascade.hpp"
#include "smsi/cnn_model.hpp"
#include "smsi/errors.hpp"
#include "smsi/forest.hpp"
#include "smsi/taxonomy.hpp"

using namespace smsi;

namespace {

namespace fs = std::filesystem;

struct TempDir {
    fs::path dir;

    explicit TempDir(const std::string& name)
        : dir(fs::temp_directory_path() / ("smsi_bundle_" + name)) {
        fs::remove_all(dir);
        fs::create_directories(dir);
    }
    ~TempDir() { fs::remove_all(dir); }

    std::string path(const std::string& leaf) const { return (dir / leaf).string(); }
};

std::vector<std::uint8_t> read_bytes(const std::string& path) {
    std::ifstream in(path, std::ios::binary);
    REQUIRE(in);
    return std::vector<std::uint8_t>(std::istreambuf_iterator<char>(in),
                                     std::istreambuf_iterator<char>());
}

void write_bytes(const std::string& path, const std::vector<std::uint8_t>& bytes) {
    std::ofstream out(path, std::ios::binary | std::ios::trunc);
    REQUIRE(out);
    out.write(reinterpret_cast<const char*>(bytes.data()),
              static_cast<std::streamsize>(bytes.size()));
}

constexpr int kPatchSize = 16;  // tiny heads keep the suite fast

CnnModel tiny_cnn(int num_classes, std::uint64_t seed) {
    CnnConfig config;
    config.input_size = kPatchSize;
    config.channels = 1;
    config.num_classes = num_classes;
    config.allow_any_size = true;
    return build_cnn(config, seed);
}

// A real (trained) forest so thresholds, votes and histograms all have
// non-trivial content to round-trip: 4 classes over 13-long fused vectors.
ForestModel trained_forest(std::uint64_t seed) {
    std::vector<FeatureVector> samples;
    std::vector<int> labels;
    std::mt19937_64 rng(seed);
    std::uniform_real_distribution<double> dist(-2.0, 2.0);
    std::uniform_int_distribution<int> qdist(1, 60);
    for (int i = 0; i < 48; ++i) {
        const int label = i % 4;
        std::vector<double> deep(4);
        for (auto& v : deep) v = dist(rng) + label;  // classes are separable-ish
        QFeature q{};
        for (auto& v : q.coefficients) v = qdist(rng) + 10 * label;
        samples.push_back(fuse(deep, q));
        labels.push_back(label);
    }
    ForestHyper hyper;
    hyper.tree_count = 5;
    hyper.seed = seed;
    return train_forest(samples, labels, hyper);
}

// Desk-taxonomy cascade with one stage-2 head (primary C).
CascadeModel desk_model() {
    CascadeModel model;
    model.taxonomy = Taxonomy::desk();
    model.stage1_cnn = tiny_cnn(4, 11);
    model.stage1_cnn.meta.epochs_trained = 7;
    model.stage1_cnn.meta.schedule = SgdSchedule::stage1();
    model.stage1_cnn.meta.dataset_fingerprint = "pset:size=16,count=48,crc32=0badcafe";
    model.stage1_forest = trained_forest(77);
    model.stage2.emplace("C", tiny_cnn(3, 22));
    model.validate();
    return model;
}

FeatureVector random_fused(std::uint64_t seed) {
    std::mt19937_64 rng(seed);
    std::uniform_real_distribution<double> dist(-3.0, 3.0);
    std::vector<double> deep(4);
    for (auto& v : deep) v = dist(rng);
    QFeature q{};
    std::uniform_int_distribution<int> qdist(1, 80);
    for (auto& v : q.coefficients) v = qdist(rng);
    return fuse(deep, q);
}

Tensor<float> random_patch(std::uint64_t seed) {
    Tensor<float> patch({1, kPatchSize, kPatchSize});
    std::mt19937_64 rng(seed);
    std::uniform_real_distribution<float> dist(0.0f, 1.0f);
    for (auto& v : patch.vec()) v = dist(rng);
    return patch;
}

}  // namespace

TEST_SUITE("bundle.roundtrip") {
    TEST_CASE("save -> load -> save is byte-identical") {
        // [TRIVIAL] the stated bundle invariant: saving is a pure function of
        // model state, so a loaded copy re-saves to the same bytes.
        TempDir dir("identity");
        const CascadeModel model = desk_model();
        save_bundle(dir.path("a.pmsi"), model);
        const CascadeModel loaded = load_bundle(dir.path("a.pmsi"));
        save_bundle(dir.path("b.pmsi"), loaded);

        const auto a = read_bytes(dir.path("a.pmsi"));
        const auto b = read_bytes(dir.path("b.pmsi"));
        CHECK(a.size() > 100u);
        CHECK(a == b);
        CHECK(file_crc32(dir.path("a.pmsi")) == file_crc32(dir.path("b.pmsi")));
    }

    TEST_CASE("loaded model reproduces taxonomy, meta, tensors and forest exactly") {
        TempDir dir("fields");
        CascadeModel model = desk_model();
        // Poke one weight so the round-trip has a value we planted ourselves.
        auto state = model.stage1_cnn.net.state();
        REQUIRE(!state.empty());
        state.front().second->data()[0] = -0.123456789f;
        save_bundle(dir.path("m.pmsi"), model);
        CascadeModel loaded = load_bundle(dir.path("m.pmsi"));

        // [TRIVIAL] taxonomy and CNN metadata survive verbatim.
        CHECK(loaded.taxonomy.to_json() == model.taxonomy.to_json());
        CHECK(loaded.stage1_cnn.config.input_size == kPatchSize);
        CHECK(loaded.stage1_cnn.config.allow_any_size);
        CHECK(loaded.stage1_cnn.meta.epochs_trained == 7);
        CHECK(loaded.stage1_cnn.meta.schedule.initial_lr == 0.001);
        CHECK(loaded.stage1_cnn.meta.schedule.total_epochs == 50);
        CHECK(loaded.stage1_cnn.meta.dataset_fingerprint ==
              "pset:size=16,count=48,crc32=0badcafe");

        // [TRIVIAL] every persistent tensor is bit-equal, including the value
        // planted above.
        auto expected = model.stage1_cnn.net.state();
        auto actual = loaded.stage1_cnn.net.state();
        REQUIRE(actual.size() == expected.size());
        for (std::size_t i = 0; i < expected.size(); ++i) {
            CHECK(actual[i].first == expected[i].first);
            REQUIRE(actual[i].second->shape() == expected[i].second->shape());
            for (std::int64_t j = 0; j < expected[i].second->numel(); ++j)
                CHECK(actual[i].second->data()[j] == expected[i].second->data()[j]);
        }
        CHECK(actual.front().second->data()[0] == -0.123456789f);

        // [TRIVIAL] forest structure survives node-for-node.
        const ForestModel& f0 = model.stage1_forest;
        const ForestModel& f1 = loaded.stage1_forest;
        CHECK(f1.hyper.tree_count == f0.hyper.tree_count);
        CHECK(f1.hyper.seed == f0.hyper.seed);
        CHECK(f1.num_classes == f0.num_classes);
        CHECK(f1.feature_length == f0.feature_length);
        CHECK(f1.degenerate == f0.degenerate);
        REQUIRE(f1.trees.size() == f0.trees.size());
        for (std::size_t t = 0; t < f0.trees.size(); ++t) {
            REQUIRE(f1.trees[t].nodes.size() == f0.trees[t].nodes.size());
            for (std::size_t n = 0; n < f0.trees[t].nodes.size(); ++n) {
                const TreeNode& a = f0.trees[t].nodes[n];
                const TreeNode& b = f1.trees[t].nodes[n];
                CHECK(b.feature == a.feature);
                CHECK(b.threshold == a.threshold);
                CHECK(b.left == a.left);
                CHECK(b.right == a.right);
                CHECK(b.histogram == a.histogram);
            }
        }

        // [DERIVED] behavioural equivalence: identical predictions on fresh
        // inputs, identical deep features on a fresh patch.
        for (std::uint64_t s = 0; s < 8; ++s) {
            const FeatureVector fv = random_fused(1000 + s);
            const ForestPrediction pa = predict_fused(f0, fv.fused());
            const ForestPrediction pb = predict_fused(f1, fv.fused());
            CHECK(pa.class_index == pb.class_index);
            CHECK(pa.votes == pb.votes);
        }
        const Tensor<float> patch = random_patch(5);
        const auto da = deep_features(model.stage1_cnn, patch);
        const auto db = deep_features(loaded.stage1_cnn, patch);
        REQUIRE(da.size() == db.size());
        for (std::size_t i = 0; i < da.size(); ++i) CHECK(da[i] == db[i]);
    }

    TEST_CASE("degenerate forest flags and warning text survive") {
        // [TRIVIAL] the warning channel is part of the model, not a log line.
        TempDir dir("degenerate");
        CascadeModel model = desk_model();
        ForestModel constant;
        constant.hyper.tree_count = 3;
        constant.num_classes = 4;
        constant.feature_length = 13;
        constant.degenerate = true;
        constant.warning = "single-class training set; constant classifier";
        Tree tree;
        tree.nodes.emplace_back();
        tree.nodes.back().histogram = {10, 0, 0, 0};
        constant.trees.assign(3, tree);
        model.stage1_forest = constant;
        model.validate();

        save_bundle(dir.path("m.pmsi"), model);
        const CascadeModel loaded = load_bundle(dir.path("m.pmsi"));
        CHECK(loaded.stage1_forest.degenerate);
        CHECK(loaded.stage1_forest.warning ==
              "single-class training set; constant classifier");
        CHECK(loaded.stage1_forest.trees.size() == 3u);
        CHECK(loaded.stage1_forest.trees[0].nodes.at(0).histogram ==
              std::vector<std::int64_t>{10, 0, 0, 0});
    }
}

TEST_SUITE("bundle.layout") {
    TEST_CASE("section table is deterministic: taxonomy, stage-1, sorted heads") {
        TempDir dir("layout");
        CascadeModel model = desk_model();
        save_bundle(dir.path("m.pmsi"), model);
        const auto sections = read_bundle_sections(dir.path("m.pmsi"));

        // [TRIVIAL] fixed order; heads sorted by primary.
        REQUIRE(sections.size() == 4u);
        CHECK(sections[0].name == "taxonomy");
        CHECK(sections[1].name == "stage1.cnn");
        CHECK(sections[2].name == "stage1.forest");
        CHECK(sections[3].name == "stage2.C");
        for (std::size_t i = 1; i < sections.size(); ++i) {
            CHECK(sections[i].offset == sections[i - 1].offset + sections[i - 1].length);
            CHECK(sections[i].length > 0u);
        }

        // [TRIVIAL] the taxonomy payload is the canonical JSON text itself.
        const auto bytes = read_bytes(dir.path("m.pmsi"));
        const std::string json(
            bytes.begin() + static_cast<std::ptrdiff_t>(sections[0].offset),
            bytes.begin() + static_cast<std::ptrdiff_t>(sections[0].offset +
                                                        sections[0].length));
        CHECK(json == model.taxonomy.to_json());

        // [TRIVIAL] the file starts with the PMSI magic and version 1.
        REQUIRE(bytes.size() > 6u);
        CHECK(bytes[0] == 'P');
        CHECK(bytes[1] == 'M');
        CHECK(bytes[2] == 'S');
        CHECK(bytes[3] == 'I');
        CHECK(bytes[4] == 1);
        CHECK(bytes[5] == 0);
    }

    TEST_CASE("distinct models produce distinct checksums") {
        // [TRIVIAL] the checksum actually depends on the payload.
        TempDir dir("checksum");
        CascadeModel model = desk_model();
        save_bundle(dir.path("a.pmsi"), model);
        auto state = model.stage1_cnn.net.state();
        state.front().second->data()[0] += 1.0f;
        save_bundle(dir.path("b.pmsi"), model);
        CHECK(file_crc32(dir.path("a.pmsi")) != file_crc32(dir.path("b.pmsi")));
    }
}

TEST_SUITE("bundle.corruption") {
    TEST_CASE("corrupted or malformed files are rejected with ModelError") {
        TempDir dir("corrupt");
        const CascadeModel model = desk_model();
        const std::string pristine = dir.path("m.pmsi");
        save_bundle(pristine, model);
        const auto bytes = read_bytes(pristine);
        const auto sections = read_bundle_sections(pristine);

        SUBCASE("wrong magic") {
            auto bad = bytes;
            bad[0] = 'X';
            write_bytes(dir.path("bad.pmsi"), bad);
            CHECK_THROWS_WITH_AS(load_bundle(dir.path("bad.pmsi")),
                                 doctest::Contains("not a model bundle"), ModelError);
        }

        SUBCASE("unsupported version") {
            auto bad = bytes;
            bad[4] = 2;
            write_bytes(dir.path("bad.pmsi"), bad);
            CHECK_THROWS_WITH_AS(load_bundle(dir.path("bad.pmsi")),
                                 doctest::Contains("version"), ModelError);
        }

        SUBCASE("payload byte flip fails the section CRC") {
            auto bad = bytes;
            const std::size_t victim =
                static_cast<std::size_t>(sections.back().offset + sections.back().length / 2);
            bad[victim] ^= 0x40;
            write_bytes(dir.path("bad.pmsi"), bad);
            CHECK_THROWS_WITH_AS(load_bundle(dir.path("bad.pmsi")),
                                 doctest::Contains("CRC mismatch"), ModelError);
            CHECK_THROWS_AS(read_bundle_sections(dir.path("bad.pmsi")), ModelError);
        }

        SUBCASE("truncated file") {
            auto bad = bytes;
            bad.resize(bad.size() - 10);
            write_bytes(dir.path("bad.pmsi"), bad);
            CHECK_THROWS_AS(load_bundle(dir.path("bad.pmsi")), ModelError);
        }

        SUBCASE("renamed section is reported as missing") {
            auto bad = bytes;
            const std::string needle = "stage1.forest";
            auto it = std::search(bad.begin(), bad.end(), needle.begin(), needle.end());
            REQUIRE(it != bad.end());
            *(it + static_cast<std::ptrdiff_t>(needle.size()) - 1) = 'x';
            write_bytes(dir.path("bad.pmsi"), bad);
            CHECK_THROWS_WITH_AS(load_bundle(dir.path("bad.pmsi")),
                                 doctest::Contains("missing section 'stage1.forest'"),
                                 ModelError);
        }

        SUBCASE("missing file") {
            CHECK_THROWS_AS(load_bundle(dir.path("nope.pmsi")), ModelError);
            CHECK_THROWS_AS(file_crc32(dir.path("nope.pmsi")), ModelError);
        }
    }

    TEST_CASE("saving an invalid model is refused") {
        // [TRIVIAL] a bundle must never contain a model the loader rejects:
        // a head for a single-secondary primary is invalid in any mode.
        TempDir dir("invalid");
        CascadeModel model = desk_model();
        model.stage2.emplace("NAT", tiny_cnn(2, 44));
        CHECK_THROWS_WITH_AS(save_bundle(dir.path("m.pmsi"), model),
                             doctest::Contains("refusing to save"), ModelError);
    }

    TEST_CASE("a stage-1-only bundle round-trips; inference validation still demands heads") {
        // train-stage1 persists before any head exists; the bundle accepts
        // that, while the strict (inference-time) validation does not.
        TempDir dir("partial");
        CascadeModel model = desk_model();
        model.stage2.clear();
        save_bundle(dir.path("m.pmsi"), model);

        const auto sections = read_bundle_sections(dir.path("m.pmsi"));
        REQUIRE(sections.size() == 3u);
        CHECK(sections[2].name == "stage1.forest");

        const CascadeModel loaded = load_bundle(dir.path("m.pmsi"));
        CHECK(loaded.stage2.empty());
        CHECK_NOTHROW(loaded.validate(false));
        CHECK_THROWS_WITH_AS(loaded.validate(),
                             doctest::Contains("no stage-2 head"), BadTaxonomy);

        save_bundle(dir.path("n.pmsi"), loaded);
        CHECK(read_bytes(dir.path("m.pmsi")) == read_bytes(dir.path("n.pmsi")));
    }
}
