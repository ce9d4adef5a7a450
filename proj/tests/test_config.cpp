#include <doctest.h>

#include <filesystem>
#include <fstream>
#include <string>

#include "smsi/config.hpp"
#include "smsi/errors.hpp"
#include "smsi/taxonomy.hpp"

using namespace smsi;

namespace {

namespace fs = std::filesystem;

}  // namespace

TEST_SUITE("config.defaults") {
    TEST_CASE("an empty config reproduces the published settings") {
        const RunConfig config = RunConfig::from_json("{}");

        // [PAPER: §III-B] stage-1 SGD: lr 0.001 halved every 3 epochs, 50 epochs.
        CHECK(config.stage1.initial_lr == 0.001);
        CHECK(config.stage1.decay_factor == 0.5);
        CHECK(config.stage1.decay_every == 3);
        CHECK(config.stage1.total_epochs == 50);
        CHECK(config.stage1.momentum == 0.9);
        CHECK(config.stage1.batch_size == 32);

        // [PAPER: §III-C] stage-2 SGD: lr 0.005 decayed by 0.7 every 3 epochs, 60 epochs.
        CHECK(config.stage2.initial_lr == 0.005);
        CHECK(config.stage2.decay_factor == 0.7);
        CHECK(config.stage2.decay_every == 3);
        CHECK(config.stage2.total_epochs == 60);

        // [PAPER: §II-B] the published five-platform taxonomy and 64px patches.
        CHECK(config.taxonomy.to_json() == Taxonomy::paper().to_json());
        CHECK(config.patch_size == 64);

        CHECK(config.forest.tree_count == 100);
        CHECK(config.forest.max_features == 0);
        CHECK(config.forest.bootstrap);
        CHECK(!config.forest.extra_trees);
        CHECK(config.seed == 0);
        CHECK(config.paths.bundle.empty());
    }

    TEST_CASE("stage-2 learning-rate schedule matches the hand computation") {
        const RunConfig config = RunConfig::from_json("{}");
        // [PAPER: §III-C] "factor of 0.7 every 3 epochs": epoch 6 sits in the
        // third step, 0.005 * 0.7^2 = 0.00245.
        CHECK(config.stage2.lr_at(0) == doctest::Approx(0.005).epsilon(1e-12));
        CHECK(config.stage2.lr_at(5) == doctest::Approx(0.005 * 0.7).epsilon(1e-12));
        CHECK(config.stage2.lr_at(6) == doctest::Approx(0.00245).epsilon(1e-12));
        // [PAPER: §III-B] stage-1 halves: epoch 3 -> 0.0005.
        CHECK(config.stage1.lr_at(3) == doctest::Approx(0.0005).epsilon(1e-12));
    }
}

TEST_SUITE("config.parsing") {
    TEST_CASE("partial overrides keep the remaining defaults") {
        const RunConfig config = RunConfig::from_json(
            R"({"seed": 42, "stage1": {"total_epochs": 2}, "forest": {"tree_count": 25}})");
        CHECK(config.seed == 42);
        CHECK(config.stage1.total_epochs == 2);
        CHECK(config.stage1.initial_lr == 0.001);  // untouched default
        CHECK(config.forest.tree_count == 25);
        CHECK(config.forest.min_samples_leaf == 1);
        CHECK(config.stage2.total_epochs == 60);
    }

    TEST_CASE("taxonomy and paths can be overridden") {
        const std::string desk_taxonomy = Taxonomy::desk().to_json();
        const RunConfig config = RunConfig::from_json(
            R"({"taxonomy": )" + desk_taxonomy +
            R"(, "paths": {"bundle": "model.pmsi", "report_dir": "reports"}})");
        CHECK(config.taxonomy.to_json() == desk_taxonomy);
        CHECK(config.paths.bundle == "model.pmsi");
        CHECK(config.paths.report_dir == "reports");
        CHECK(config.paths.manifest.empty());
    }

    TEST_CASE("to_json -> from_json round-trips a customized config") {
        RunConfig config;
        config.taxonomy = Taxonomy::desk();
        config.seed = 1234;
        config.patches_per_image = 7;
        config.stage1.total_epochs = 4;
        config.forest.tree_count = 31;
        config.paths.train_cache = "train.pset";

        const RunConfig back = RunConfig::from_json(config.to_json());
        CHECK(back.taxonomy.to_json() == config.taxonomy.to_json());
        CHECK(back.seed == 1234);
        CHECK(back.patches_per_image == 7);
        CHECK(back.stage1.total_epochs == 4);
        CHECK(back.forest.tree_count == 31);
        CHECK(back.paths.train_cache == "train.pset");
        // Re-serialization is stable.
        CHECK(back.to_json() == config.to_json());
    }

    TEST_CASE("from_file reads a config and reports a missing one") {
        const fs::path path = fs::temp_directory_path() / "smsi_config_test.json";
        {
            std::ofstream out(path);
            out << R"({"seed": 9})";
        }
        CHECK(RunConfig::from_file(path.string()).seed == 9);
        fs::remove(path);
        CHECK_THROWS_AS(RunConfig::from_file(path.string()), ConfigInvalid);
    }
}

TEST_SUITE("config.rejection") {
    TEST_CASE("unknown keys are errors, not silent no-ops") {
        // [TRIVIAL] a typoed experiment knob must not silently fall back.
        CHECK_THROWS_WITH_AS(RunConfig::from_json(R"({"sede": 1})"),
                             doctest::Contains("unknown config key 'sede'"), ConfigInvalid);
        CHECK_THROWS_WITH_AS(RunConfig::from_json(R"({"stage1": {"lr": 0.1}})"),
                             doctest::Contains("unknown config key 'lr'"), ConfigInvalid);
        CHECK_THROWS_AS(RunConfig::from_json(R"({"forest": {"trees": 5}})"), ConfigInvalid);
        CHECK_THROWS_AS(RunConfig::from_json(R"({"paths": {"bundel": "x"}})"), ConfigInvalid);
    }

    TEST_CASE("malformed JSON and wrong shapes are rejected") {
        CHECK_THROWS_AS(RunConfig::from_json("not json"), ConfigInvalid);
        CHECK_THROWS_AS(RunConfig::from_json("[1,2]"), ConfigInvalid);
        CHECK_THROWS_AS(RunConfig::from_json(R"({"stage1": 3})"), ConfigInvalid);
        CHECK_THROWS_AS(RunConfig::from_json(R"({"patch_size": "big"})"), ConfigInvalid);
        CHECK_THROWS_AS(RunConfig::from_json(R"({"seed": -1})"), ConfigInvalid);
    }

    TEST_CASE("validation failures surface as ConfigInvalid") {
        // patch sizes are restricted to the supported square inputs
        CHECK_THROWS_WITH_AS(RunConfig::from_json(R"({"patch_size": 100})"),
                             doctest::Contains("patch_size"), ConfigInvalid);
        CHECK_THROWS_AS(RunConfig::from_json(R"({"patches_per_image": 0})"), ConfigInvalid);
        // schedule invariants propagate
        CHECK_THROWS_AS(RunConfig::from_json(R"({"stage1": {"initial_lr": -1.0}})"),
                        ConfigInvalid);
        CHECK_THROWS_AS(RunConfig::from_json(R"({"forest": {"tree_count": 0}})"),
                        ConfigInvalid);
        // a taxonomy whose chain references an unknown primary
        CHECK_THROWS_AS(RunConfig::from_json(
                            R"({"taxonomy": {"primaries": ["NAT"], "secondaries": ["nat"],
                                "chains": ["natZZ"]}})"),
                        ConfigInvalid);
    }
}
