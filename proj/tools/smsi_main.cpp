// smsi — command-line front end for the social-media source identification
// toolkit.  Subcommands are thin wrappers over the library; all heavy lifting
// lives in src/ so the same code paths are exercised by the test suite.
//
// Exit codes: 0 success, 1 usage/config, 2 data, 3 model.

#include <cstdio>
#include <exception>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <random>
#include <string>
#include <vector>

#include <CLI11.hpp>
#include <json.hpp>

#include "smsi/bundle.hpp"
#include "smsi/cascade.hpp"
#include "smsi/chain_sim.hpp"
#include "smsi/config.hpp"
#include "smsi/dataset.hpp"
#include "smsi/errors.hpp"
#include "smsi/jpeg_meta.hpp"
#include "smsi/pipeline.hpp"
#include "smsi/rng.hpp"

namespace {

namespace fs = std::filesystem;
using nlohmann::json;

// Seed streams that derive each command's randomness from the single config
// seed (see rng.hpp): identical config + seed reproduces every artifact.
constexpr std::uint64_t kSplitStream = 21;
constexpr std::uint64_t kTrainPatchStream = 22;
constexpr std::uint64_t kTestPatchStream = 23;
constexpr std::uint64_t kClassifyStream = 24;
constexpr std::uint64_t kForestStream = 25;
constexpr std::uint64_t kStage1Stream = 26;
constexpr std::uint64_t kStage2Stream = 27;

std::vector<std::uint8_t> read_file_bytes(const std::string& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) {
        throw smsi::DataError("cannot open file: " + path);
    }
    return std::vector<std::uint8_t>(std::istreambuf_iterator<char>(in),
                                     std::istreambuf_iterator<char>());
}

void write_text_file(const std::string& path, const std::string& text) {
    std::ofstream out(path, std::ios::binary | std::ios::trunc);
    if (!out) throw smsi::DataError("cannot open for writing: " + path);
    out << text;
    if (!out) throw smsi::DataError("write failed: " + path);
}

smsi::RunConfig load_config(const std::string& path) {
    if (path.empty()) return smsi::RunConfig{};  // paper defaults
    return smsi::RunConfig::from_file(path);
}

// Flags override config-file paths; either source may supply a value.
std::string resolve(const std::string& flag, const std::string& from_config,
                    const char* what) {
    if (!flag.empty()) return flag;
    if (!from_config.empty()) return from_config;
    throw smsi::ConfigInvalid(std::string("no ") + what +
                              " given (flag or config paths entry required)");
}

char hex_digit(unsigned v) { return "0123456789abcdef"[v & 0xF]; }

std::string crc_hex(std::uint32_t crc) {
    std::string text(8, '0');
    for (int i = 7; i >= 0; --i, crc >>= 4) text[static_cast<std::size_t>(i)] = hex_digit(crc);
    return text;
}

// --- parse-dqt ---------------------------------------------------------------

int run_parse_dqt(const std::string& path) {
    const auto bytes = read_file_bytes(path);
    const auto tables = smsi::extract_dqt(bytes);
    const auto luma = smsi::select_luma_table(tables);
    const auto feature = smsi::q_feature(luma.table);

    json out;
    out["file"] = path;
    out["tables"] = json::array();
    for (const auto& t : tables) {
        json jt;
        jt["table_id"] = t.table_id;
        jt["precision_bits"] = t.precision == smsi::TablePrecision::Bits8 ? 8 : 16;
        jt["values"] = t.values;  // natural (row-major) order
        out["tables"].push_back(jt);
    }
    out["luma_table_id"] = luma.table.table_id;
    out["luma_fallback"] = luma.fallback;
    out["q_feature"] = feature.coefficients;
    std::cout << out.dump(2) << "\n";
    return 0;
}

// --- simulate ----------------------------------------------------------------

int run_simulate(const std::string& out_dir, int images, int size, std::uint64_t seed) {
    smsi::SimulateConfig config;
    config.image_count = images;
    config.image_size = size;
    config.seed = seed;
    config.chains = smsi::Taxonomy::desk().chains;
    config.profiles = smsi::default_profiles();
    config.camera = smsi::camera_profile();
    config.output_dir = out_dir;
    fs::create_directories(out_dir);
    const auto entries = smsi::generate_dataset(config);

    json out;
    out["images"] = images;
    out["variants"] = entries.size();
    out["chains"] = config.chains;
    out["manifest"] = (fs::path(out_dir) / "manifest.csv").string();
    std::cout << out.dump(2) << "\n";
    return 0;
}

// --- make-patches ------------------------------------------------------------

int run_make_patches(const smsi::RunConfig& config, const std::string& manifest_flag,
                     const std::string& train_flag, const std::string& test_flag,
                     std::int64_t train_per_class, std::int64_t test_per_class,
                     double test_fraction) {
    const std::string manifest_path =
        resolve(manifest_flag, config.paths.manifest, "manifest");
    const std::string train_path = resolve(train_flag, config.paths.train_cache, "train cache");
    const std::string test_path = resolve(test_flag, config.paths.test_cache, "test cache");

    const auto entries = smsi::load_manifest(manifest_path);
    const auto parts = smsi::split(entries, test_fraction, smsi::mix_seed(config.seed, kSplitStream));
    for (const auto& w : parts.warnings) std::cerr << "warning: " << w << "\n";

    const auto train = smsi::extract_patches(parts.train, config.patch_size, train_per_class,
                                             smsi::mix_seed(config.seed, kTrainPatchStream), "train");
    const auto test = smsi::extract_patches(parts.test, config.patch_size, test_per_class,
                                            smsi::mix_seed(config.seed, kTestPatchStream), "test");
    smsi::check_no_leakage(train, test);
    for (const auto& set : {&train, &test}) {
        for (const auto& w : set->warnings) std::cerr << "warning: " << w << "\n";
        for (const auto& [chain, missing] : set->shortfall)
            std::cerr << "warning: class " << chain << " is short " << missing << " " << set->split_tag
                      << " patches\n";
    }
    smsi::save_patch_cache(train_path, train);
    smsi::save_patch_cache(test_path, test);

    json out;
    out["train_cache"] = train_path;
    out["train_patches"] = train.count();
    out["test_cache"] = test_path;
    out["test_patches"] = test.count();
    out["patch_size"] = config.patch_size;
    out["train_images"] = parts.train.size();
    out["test_images"] = parts.test.size();
    std::cout << out.dump(2) << "\n";
    return 0;
}

// --- train-stage1 / train-stage2 ----------------------------------------------

smsi::PatchSet load_cache_checked(const std::string& path, const smsi::RunConfig& config,
                                  const std::string& tag) {
    if (!fs::exists(path))
        throw smsi::MissingCache("patch cache not found: " + path +
                                 " (run make-patches first)");
    smsi::PatchSet set = smsi::load_patch_cache(path, tag);
    if (set.patch_size != config.patch_size)
        throw smsi::SizeMismatch("cache " + path + " holds " +
                                 std::to_string(set.patch_size) +
                                 "px patches but the config says " +
                                 std::to_string(config.patch_size));
    return set;
}

json bundle_summary(const std::string& path) {
    json out;
    out["bundle"] = path;
    out["crc32"] = crc_hex(smsi::file_crc32(path));
    json sections = json::array();
    for (const auto& s : smsi::read_bundle_sections(path)) sections.push_back(s.name);
    out["sections"] = sections;
    return out;
}

int run_train_stage1(const smsi::RunConfig& config, const std::string& cache_flag,
                     const std::string& manifest_flag, const std::string& bundle_flag) {
    const std::string cache_path = resolve(cache_flag, config.paths.train_cache, "train cache");
    const std::string manifest_path =
        resolve(manifest_flag, config.paths.manifest, "manifest");
    const std::string bundle_path = resolve(bundle_flag, config.paths.bundle, "bundle path");

    const smsi::PatchSet train = load_cache_checked(cache_path, config, "train");
    const auto entries = smsi::load_manifest(manifest_path);

    smsi::CascadeModel model;
    model.taxonomy = config.taxonomy;
    model.stage1_cnn = smsi::train_stage1_cnn(train, config.taxonomy, config.stage1,
                                              smsi::mix_seed(config.seed, kStage1Stream), &std::cerr);
    smsi::ForestHyper hyper = config.forest;
    hyper.seed = smsi::mix_seed(config.seed, kForestStream);
    model.stage1_forest = smsi::train_stage1_forest(model.stage1_cnn, train, entries,
                                                    config.taxonomy, hyper, &std::cerr);
    smsi::save_bundle(bundle_path, model);
    std::cout << bundle_summary(bundle_path).dump(2) << "\n";
    return 0;
}

int run_train_stage2(const smsi::RunConfig& config, const std::string& cache_flag,
                     const std::string& bundle_flag, const std::string& primary) {
    const std::string cache_path = resolve(cache_flag, config.paths.train_cache, "train cache");
    const std::string bundle_path = resolve(bundle_flag, config.paths.bundle, "bundle path");
    if (!fs::exists(bundle_path))
        throw smsi::ModelError("bundle not found: " + bundle_path +
                               " (run train-stage1 first)");

    const smsi::PatchSet train = load_cache_checked(cache_path, config, "train");
    smsi::CascadeModel model = smsi::load_bundle(bundle_path);
    smsi::CnnModel head = smsi::train_stage2_head(
        train, model.taxonomy, primary, config.stage2,
        smsi::mix_seed(smsi::mix_seed(config.seed, kStage2Stream),
                 model.taxonomy.primary_index(primary)),
        &std::cerr);
    model.stage2.insert_or_assign(primary, std::move(head));
    smsi::save_bundle(bundle_path, model);
    std::cout << bundle_summary(bundle_path).dump(2) << "\n";
    return 0;
}

// --- classify ------------------------------------------------------------------

// The pixels file (PGM/PPM) is the argument; JPEG metadata is read from the
// sidecar with the same stem and a .jpg extension, as the simulator writes.
int run_classify(const smsi::RunConfig& config, const std::string& bundle_flag,
                 const std::vector<std::string>& images, int patches_flag) {
    const std::string bundle_path = resolve(bundle_flag, config.paths.bundle, "bundle path");
    const smsi::CascadeModel model = smsi::load_bundle(bundle_path);
    model.validate();  // inference needs every stage-2 head

    const int patch_size = model.stage1_cnn.config.input_size;
    const int per_image = patches_flag > 0 ? patches_flag : config.patches_per_image;
    int metadata_misses = 0;

    for (std::size_t index = 0; index < images.size(); ++index) {
        const std::string& path = images[index];
        const smsi::GrayImage image = smsi::read_image_gray(path);
        if (image.width < patch_size || image.height < patch_size)
            throw smsi::ImageTooSmall("image " + path + " is smaller than a " +
                                      std::to_string(patch_size) + "px patch");

        // Quantization feature from the sidecar; a missing or DQT-less sidecar
        // downgrades to the flagged zero-vector fallback rather than failing.
        smsi::QFeature q{};
        bool have_metadata = false;
        const fs::path sidecar = fs::path(path).replace_extension(".jpg");
        if (fs::exists(sidecar)) {
            try {
                const auto bytes = read_file_bytes(sidecar.string());
                q = smsi::q_feature(smsi::select_luma_table(smsi::extract_dqt(bytes)).table);
                have_metadata = true;
            } catch (const smsi::NoDqt&) {
            }
        }
        if (!have_metadata) ++metadata_misses;

        // Deterministic patch draw per image position in the argument list.
        auto engine = smsi::make_engine(
            smsi::mix_seed(smsi::mix_seed(config.seed, kClassifyStream), index));
        std::uniform_int_distribution<int> dx(0, image.width - patch_size);
        std::uniform_int_distribution<int> dy(0, image.height - patch_size);
        std::vector<smsi::ChainLabel> votes;
        smsi::Tensor<float> patch({1, patch_size, patch_size});
        for (int p = 0; p < per_image; ++p) {
            const int x = dx(engine);
            const int y = dy(engine);
            for (int r = 0; r < patch_size; ++r)
                for (int c = 0; c < patch_size; ++c)
                    patch.data()[r * patch_size + c] =
                        static_cast<float>(image.at(y + r, x + c) / 255.0);
            votes.push_back(smsi::classify_chain(model, patch, q));
        }
        const smsi::AggregateResult result = smsi::aggregate_image(votes);

        json line;
        line["id"] = path;
        line["chain"] = result.chain.code();
        line["confidence"] = result.confidence;
        line["patches"] = result.patches;
        if (!have_metadata) line["status"] = "no-metadata";
        std::cout << line.dump() << "\n";
    }
    if (metadata_misses > 0)
        std::cerr << "warning: " << metadata_misses
                  << " image(s) lacked quantization metadata; stage-1 used a zero Q vector, "
                     "which degrades accuracy\n";
    return 0;
}

// --- evaluate --------------------------------------------------------------------

int run_evaluate(const smsi::RunConfig& config, const std::string& bundle_flag,
                 const std::string& cache_flag, const std::string& manifest_flag,
                 const std::string& out_flag) {
    const std::string bundle_path = resolve(bundle_flag, config.paths.bundle, "bundle path");
    const std::string cache_path = resolve(cache_flag, config.paths.test_cache, "test cache");
    const std::string manifest_path =
        resolve(manifest_flag, config.paths.manifest, "manifest");
    const std::string out_dir = resolve(out_flag, config.paths.report_dir, "report directory");

    if (!fs::exists(cache_path))
        throw smsi::MissingCache("patch cache not found: " + cache_path);
    const smsi::PatchSet test = smsi::load_patch_cache(cache_path, "test");
    const auto entries = smsi::load_manifest(manifest_path);
    const smsi::CascadeModel model = smsi::load_bundle(bundle_path);

    const smsi::EvaluateReport report =
        smsi::evaluate_cascade(model, test, entries, &std::cerr);

    fs::create_directories(out_dir);
    const fs::path dir(out_dir);
    write_text_file((dir / "stage1.csv").string(), report.stage1.to_csv());
    write_text_file((dir / "stage1_percent.csv").string(), report.stage1.to_csv(true));
    write_text_file((dir / "stage1_by_chain.csv").string(), report.stage1_by_chain.to_csv());
    write_text_file((dir / "stage1_by_chain_percent.csv").string(),
                    report.stage1_by_chain.to_csv(true));
    write_text_file((dir / "chains.csv").string(), report.chains.to_csv());
    write_text_file((dir / "chains_percent.csv").string(), report.chains.to_csv(true));
    write_text_file((dir / "summary.json").string(), report.summary_json());

    std::cout << report.summary_json();
    return 0;
}

}  // namespace

int main(int argc, char** argv) {
    CLI::App app{"smsi — two-stage social media source identification"};
    app.require_subcommand(1);

    std::string config_path;
    app.add_option("--config", config_path,
                   "Run configuration JSON ({} or absent = published defaults)");

    std::string dqt_file;
    auto* parse_dqt = app.add_subcommand(
        "parse-dqt", "Print quantization tables and the 9-coefficient feature as JSON");
    parse_dqt->add_option("file", dqt_file, "JPEG file to inspect")->required();

    std::string sim_out;
    int sim_images = 200;
    int sim_size = 256;
    std::uint64_t sim_seed = 0;
    auto* simulate = app.add_subcommand(
        "simulate", "Generate a synthetic corpus (textures x the 6 desk chains)");
    simulate->add_option("--out", sim_out, "Output directory")->required();
    simulate->add_option("--images", sim_images, "Base image count (default 200)");
    simulate->add_option("--size", sim_size, "Base image side in pixels (default 256)");
    simulate->add_option("--seed", sim_seed, "Generator seed (default 0)");

    std::string mp_manifest, mp_train, mp_test;
    std::int64_t mp_train_n = 2000, mp_test_n = 400;
    double mp_fraction = 0.2;
    auto* make_patches = app.add_subcommand(
        "make-patches", "Split a manifest by source group and build patch caches");
    make_patches->add_option("--manifest", mp_manifest, "Manifest CSV");
    make_patches->add_option("--train-out", mp_train, "Training cache path (.pset)");
    make_patches->add_option("--test-out", mp_test, "Test cache path (.pset)");
    make_patches->add_option("--train-per-class", mp_train_n,
                             "Training patches per chain class (default 2000)");
    make_patches->add_option("--test-per-class", mp_test_n,
                             "Test patches per chain class (default 400)");
    make_patches->add_option("--test-fraction", mp_fraction,
                             "Image share held out for testing (default 0.2)");

    std::string t1_cache, t1_manifest, t1_bundle;
    auto* train_stage1 = app.add_subcommand(
        "train-stage1", "Train the stage-1 CNN and fused-feature forest, write the bundle");
    train_stage1->add_option("--cache", t1_cache, "Training patch cache");
    train_stage1->add_option("--manifest", t1_manifest, "Manifest CSV (for JPEG headers)");
    train_stage1->add_option("--bundle", t1_bundle, "Bundle file to write");

    std::string t2_cache, t2_bundle, t2_primary;
    auto* train_stage2 = app.add_subcommand(
        "train-stage2", "Train one primary's stage-2 head and update the bundle");
    train_stage2->add_option("--cache", t2_cache, "Training patch cache");
    train_stage2->add_option("--bundle", t2_bundle, "Existing stage-1 bundle");
    train_stage2->add_option("--primary", t2_primary, "Primary label, e.g. GOG")->required();

    std::string cl_bundle;
    int cl_patches = 0;
    std::vector<std::string> cl_images;
    auto* classify = app.add_subcommand(
        "classify", "Classify images (pixels file per argument; .jpg sidecar for metadata)");
    classify->add_option("--bundle", cl_bundle, "Model bundle");
    classify->add_option("--patches", cl_patches,
                         "Patches sampled per image (default from config)");
    classify->add_option("images", cl_images, "PGM/PPM images to classify")
        ->required()
        ->expected(-1);

    std::string ev_bundle, ev_cache, ev_manifest, ev_out;
    auto* evaluate = app.add_subcommand(
        "evaluate", "Evaluate a bundle on a test cache; write confusion matrices + summary");
    evaluate->add_option("--bundle", ev_bundle, "Model bundle");
    evaluate->add_option("--cache", ev_cache, "Test patch cache");
    evaluate->add_option("--manifest", ev_manifest, "Manifest CSV (for JPEG headers)");
    evaluate->add_option("--out", ev_out, "Report directory");

    for (auto* sub : app.get_subcommands([](const CLI::App*) { return true; }))
        sub->fallthrough();

    try {
        app.parse(argc, argv);
    } catch (const CLI::ParseError& e) {
        const int rc = app.exit(e);
        return rc == 0 ? 0 : 1;  // usage problems -> 1
    }

    try {
        if (parse_dqt->parsed()) return run_parse_dqt(dqt_file);
        if (simulate->parsed()) return run_simulate(sim_out, sim_images, sim_size, sim_seed);

        const smsi::RunConfig config = load_config(config_path);
        if (make_patches->parsed())
            return run_make_patches(config, mp_manifest, mp_train, mp_test, mp_train_n,
                                    mp_test_n, mp_fraction);
        if (train_stage1->parsed())
            return run_train_stage1(config, t1_cache, t1_manifest, t1_bundle);
        if (train_stage2->parsed())
            return run_train_stage2(config, t2_cache, t2_bundle, t2_primary);
        if (classify->parsed()) return run_classify(config, cl_bundle, cl_images, cl_patches);
        if (evaluate->parsed())
            return run_evaluate(config, ev_bundle, ev_cache, ev_manifest, ev_out);

        std::cerr << "error: no subcommand selected\n";
        return 1;
    } catch (const smsi::ConfigInvalid& e) {
        std::cerr << "config error: " << e.what() << "\n";
        return 1;
    } catch (const smsi::NoSuchHead& e) {
        std::cerr << "usage error: " << e.what() << "\n";
        return 1;
    } catch (const smsi::UnknownPrimary& e) {
        std::cerr << "usage error: " << e.what() << "\n";
        return 1;
    } catch (const smsi::CliError& e) {  // MissingCache, SizeMismatch
        std::cerr << "data error: " << e.what() << "\n";
        return 2;
    } catch (const smsi::JpegError& e) {
        std::cerr << "jpeg error: " << e.what() << "\n";
        return 2;
    } catch (const smsi::DataError& e) {
        std::cerr << "data error: " << e.what() << "\n";
        return 2;
    } catch (const smsi::SimError& e) {
        std::cerr << "data error: " << e.what() << "\n";
        return 2;
    } catch (const smsi::Error& e) {
        std::cerr << "error: " << e.what() << "\n";
        return 3;
    } catch (const std::exception& e) {
        std::cerr << "internal error: " << e.what() << "\n";
        return 3;
    }
}
