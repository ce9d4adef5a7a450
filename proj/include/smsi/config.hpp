#pragma once

// Run configuration: a human-readable JSON file in which every default is a
// paper default, so an empty config ({}) reproduces the published settings.
// Unknown keys are rejected rather than ignored — silent typos in experiment
// configs are worse than a hard error.

#include <cstdint>
#include <string>

#include "smsi/forest.hpp"
#include "smsi/sgd.hpp"
#include "smsi/taxonomy.hpp"

namespace smsi {

struct RunPaths {
    std::string manifest;    // dataset manifest CSV
    std::string train_cache; // PSET patch cache (training split)
    std::string test_cache;  // PSET patch cache (test split)
    std::string bundle;      // model bundle file
    std::string report_dir;  // evaluation report output directory
};

struct RunConfig {
    Taxonomy taxonomy = Taxonomy::paper();
    int patch_size = 64;
    int patches_per_image = 25;  // classify-time sampling
    SgdSchedule stage1 = SgdSchedule::stage1();
    SgdSchedule stage2 = SgdSchedule::stage2();
    ForestHyper forest;  // forest.seed is derived from `seed` at training time
    std::uint64_t seed = 0;
    RunPaths paths;

    void validate() const;  // throws ConfigInvalid

    // Parses JSON text; absent keys keep their defaults, unknown keys and
    // type mismatches throw ConfigInvalid.  validate() runs on the result.
    static RunConfig from_json(const std::string& text);
    static RunConfig from_file(const std::string& path);

    std::string to_json() const;
};

}  // namespace smsi
