#include "smsi/config.hpp"

#include <json.hpp>

#include <fstream>
#include <set>
#include <sstream>

#include "smsi/errors.hpp"

namespace smsi {

namespace {

using nlohmann::json;

void reject_unknown_keys(const json& obj, const std::set<std::string>& known,
                         const std::string& where) {
    for (const auto& [key, value] : obj.items())
        if (!known.contains(key))
            throw ConfigInvalid("unknown config key '" + key + "' in " + where);
}

template <typename T>
void read_field(const json& obj, const char* key, T& out, const std::string& where) {
    if (!obj.contains(key)) return;
    try {
        out = obj.at(key).get<T>();
    } catch (const json::exception& e) {
        throw ConfigInvalid("bad value for '" + std::string(key) + "' in " + where + ": " +
                            e.what());
    }
}

void read_schedule(const json& obj, const char* key, SgdSchedule& out) {
    if (!obj.contains(key)) return;
    const json& sub = obj.at(key);
    if (!sub.is_object()) throw ConfigInvalid(std::string("'") + key + "' must be an object");
    const std::string where = key;
    reject_unknown_keys(sub,
                        {"initial_lr", "decay_factor", "decay_every", "total_epochs", "momentum",
                         "batch_size"},
                        where);
    read_field(sub, "initial_lr", out.initial_lr, where);
    read_field(sub, "decay_factor", out.decay_factor, where);
    read_field(sub, "decay_every", out.decay_every, where);
    read_field(sub, "total_epochs", out.total_epochs, where);
    read_field(sub, "momentum", out.momentum, where);
    read_field(sub, "batch_size", out.batch_size, where);
}

json schedule_to_json(const SgdSchedule& s) {
    return json{{"initial_lr", s.initial_lr},   {"decay_factor", s.decay_factor},
                {"decay_every", s.decay_every}, {"total_epochs", s.total_epochs},
                {"momentum", s.momentum},       {"batch_size", s.batch_size}};
}

}  // namespace

void RunConfig::validate() const {
    try {
        taxonomy.validate();
    } catch (const Error& e) {
        throw ConfigInvalid(std::string("taxonomy: ") + e.what());
    }
    if (patch_size != 64 && patch_size != 128 && patch_size != 256)
        throw ConfigInvalid("patch_size must be 64, 128 or 256, got " +
                            std::to_string(patch_size));
    if (patches_per_image < 1)
        throw ConfigInvalid("patches_per_image must be >= 1, got " +
                            std::to_string(patches_per_image));
    try {
        stage1.validate();
        stage2.validate();
    } catch (const Error& e) {
        throw ConfigInvalid(std::string("schedule: ") + e.what());
    }
    try {
        forest.validate();
    } catch (const Error& e) {
        throw ConfigInvalid(std::string("forest: ") + e.what());
    }
}

RunConfig RunConfig::from_json(const std::string& text) {
    json root;
    try {
        root = json::parse(text);
    } catch (const json::exception& e) {
        throw ConfigInvalid(std::string("config is not valid JSON: ") + e.what());
    }
    if (!root.is_object()) throw ConfigInvalid("config root must be a JSON object");

    RunConfig config;
    reject_unknown_keys(root,
                        {"taxonomy", "patch_size", "patches_per_image", "stage1", "stage2",
                         "forest", "seed", "paths"},
                        "config root");

    if (root.contains("taxonomy")) {
        try {
            config.taxonomy = Taxonomy::from_json(root.at("taxonomy").dump());
        } catch (const Error& e) {
            throw ConfigInvalid(std::string("taxonomy: ") + e.what());
        }
    }
    read_field(root, "patch_size", config.patch_size, "config root");
    read_field(root, "patches_per_image", config.patches_per_image, "config root");
    read_schedule(root, "stage1", config.stage1);
    read_schedule(root, "stage2", config.stage2);
    if (root.contains("forest")) {
        const json& sub = root.at("forest");
        if (!sub.is_object()) throw ConfigInvalid("'forest' must be an object");
        reject_unknown_keys(
            sub, {"tree_count", "max_features", "min_samples_leaf", "bootstrap", "extra_trees"},
            "forest");
        read_field(sub, "tree_count", config.forest.tree_count, "forest");
        read_field(sub, "max_features", config.forest.max_features, "forest");
        read_field(sub, "min_samples_leaf", config.forest.min_samples_leaf, "forest");
        read_field(sub, "bootstrap", config.forest.bootstrap, "forest");
        read_field(sub, "extra_trees", config.forest.extra_trees, "forest");
    }
    if (root.contains("seed")) {
        // nlohmann would silently wrap a negative integer into uint64.
        const json& v = root.at("seed");
        if (!v.is_number_unsigned())
            throw ConfigInvalid("'seed' must be a non-negative integer");
        config.seed = v.get<std::uint64_t>();
    }
    if (root.contains("paths")) {
        const json& sub = root.at("paths");
        if (!sub.is_object()) throw ConfigInvalid("'paths' must be an object");
        reject_unknown_keys(sub, {"manifest", "train_cache", "test_cache", "bundle", "report_dir"},
                            "paths");
        read_field(sub, "manifest", config.paths.manifest, "paths");
        read_field(sub, "train_cache", config.paths.train_cache, "paths");
        read_field(sub, "test_cache", config.paths.test_cache, "paths");
        read_field(sub, "bundle", config.paths.bundle, "paths");
        read_field(sub, "report_dir", config.paths.report_dir, "paths");
    }

    config.validate();
    return config;
}

RunConfig RunConfig::from_file(const std::string& path) {
    std::ifstream in(path);
    if (!in) throw ConfigInvalid("cannot open config file: " + path);
    std::ostringstream text;
    text << in.rdbuf();
    return from_json(text.str());
}

std::string RunConfig::to_json() const {
    json root;
    root["taxonomy"] = json::parse(taxonomy.to_json());
    root["patch_size"] = patch_size;
    root["patches_per_image"] = patches_per_image;
    root["stage1"] = schedule_to_json(stage1);
    root["stage2"] = schedule_to_json(stage2);
    root["forest"] = json{{"tree_count", forest.tree_count},
                          {"max_features", forest.max_features},
                          {"min_samples_leaf", forest.min_samples_leaf},
                          {"bootstrap", forest.bootstrap},
                          {"extra_trees", forest.extra_trees}};
    root["seed"] = seed;
    root["paths"] = json{{"manifest", paths.manifest},
                         {"train_cache", paths.train_cache},
                         {"test_cache", paths.test_cache},
                         {"bundle", paths.bundle},
                         {"report_dir", paths.report_dir}};
    return root.dump(2) + "\n";
}

}  // namespace smsi
