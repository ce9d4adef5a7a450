#pragma once

// Dataset plumbing: manifest ingestion, leakage-safe stratified splitting,
// balanced patch extraction, the flat PSET patch cache, and adapters that
// turn patch sets into training samples for the two stages.

#include <cstdint>
#include <map>
#include <string>
#include <vector>

#include "smsi/chain_sim.hpp"
#include "smsi/jpeg_meta.hpp"
#include "smsi/sgd.hpp"
#include "smsi/taxonomy.hpp"
#include "smsi/tensor.hpp"

namespace smsi {

struct ManifestEntry {
    std::string id;      // unique per row
    std::string pixels;  // PGM/PPM path
    std::string jpeg;    // JPEG path (full file or simulator stub)
    std::string chain;   // chain label code, e.g. "fblGOG"
    std::string group;   // camera/source group for leakage-safe splits

    bool operator==(const ManifestEntry& other) const = default;
};

// CSV with the exact header `id,pixels,jpeg,chain,group`; no quoting.  Chain
// codes must parse; ids must be unique; with check_paths both referenced
// files must exist.  Throws BadManifest.
std::vector<ManifestEntry> load_manifest(const std::string& path, bool check_paths = true);
void save_manifest(const std::string& path, const std::vector<ManifestEntry>& entries);

struct SplitResult {
    std::vector<ManifestEntry> train;
    std::vector<ManifestEntry> test;
    std::vector<std::string> warnings;
};

// Per-class stratified split at image level (never patch level): each class
// contributes round(test_fraction * class size) test images.  Whole source
// groups stay on one side, so same-source images can never straddle the
// boundary.  Deterministic under seed.  Throws ClassTooSmall when a class
// has fewer than two images, DataError for a fraction outside [0, 1].
SplitResult split(const std::vector<ManifestEntry>& entries, double test_fraction,
                  std::uint64_t seed);

struct PatchRecord {
    std::string chain;
    std::string parent_id;
    std::uint32_t offset_x = 0;  // top-left corner in the parent image
    std::uint32_t offset_y = 0;

    bool operator==(const PatchRecord& other) const = default;
};

struct PatchSet {
    int patch_size = 64;
    std::string split_tag;  // "train"/"test"; carried beside, not inside, the cache
    std::vector<PatchRecord> records;
    std::vector<float> pixels;  // count * size * size luma floats in [0,1], row-major
    std::map<std::string, std::int64_t> shortfall;  // class -> patches short of target
    std::vector<std::string> warnings;

    std::int64_t count() const { return static_cast<std::int64_t>(records.size()); }
    const float* patch(std::int64_t i) const {
        return pixels.data() + i * patch_size * patch_size;
    }
    void validate() const;  // internal consistency; throws BadCache
};

// Balanced sampling of `count_per_class` patches per chain class: images are
// drawn uniformly with replacement within their class, top-left offsets
// uniformly inside each image (overlap allowed within an image).  Too-small
// images are skipped with a warning; a class with no usable image lands in
// `shortfall` instead of failing.  Deterministic: image draws and per-image
// offsets come from seeds derived per class and per image.
PatchSet extract_patches(const std::vector<ManifestEntry>& entries, int size,
                         std::int64_t count_per_class, std::uint64_t seed,
                         const std::string& split_tag);

// Flat binary cache: magic PSET, version u16, patch size u32, count u64,
// then per-patch records (chain code, parent id, offsets, raw little-endian
// f32 pixels).  Throws BadCache on malformed input.
void save_patch_cache(const std::string& path, const PatchSet& set);
PatchSet load_patch_cache(const std::string& path, const std::string& split_tag = "");

// No-leakage invariant: throws DataError when any parent image id appears in
// both sets.
void check_no_leakage(const PatchSet& train, const PatchSet& test);

// Stage-1 view: inputs [N,1,S,S], labels = taxonomy primary index (all
// chains sharing a primary feed the same class).  Throws DataError when a
// patch's chain is not in the taxonomy, EmptyDataset on an empty set.
SampleSet<float> stage1_samples(const PatchSet& set, const Taxonomy& taxonomy);

// Stage-2 view for one primary: only patches whose chain ends at `primary`,
// labels indexed into secondaries_for(primary).  Throws UnknownPrimary,
// EmptyDataset when no patch matches.
SampleSet<float> stage2_samples(const PatchSet& set, const Taxonomy& taxonomy,
                                const std::string& primary);

// Per-patch quantization features read from each parent's JPEG header (each
// distinct parent is parsed once).  Throws BadManifest for unknown parents;
// JPEG parse errors propagate.
std::vector<QFeature> patch_q_features(const PatchSet& set,
                                       const std::vector<ManifestEntry>& entries);

struct SimulateConfig {
    int image_count = 200;
    int image_size = 256;
    std::uint64_t seed = 0;
    std::vector<std::string> chains;        // chain codes to generate per base image
    std::vector<PlatformProfile> profiles;  // available platforms
    PlatformProfile camera;                 // in-camera compression for every base image
    std::string output_dir;
};

// Desk-scale corpus generation: seeded procedural textures are camera-
// compressed, pushed through every configured chain, and written as
// PGM + JPEG-stub pairs plus `manifest.csv` under output_dir.  The group id
// of every variant is its base image, so splits can never leak a source
// image across the boundary.  Returns the manifest rows.
std::vector<ManifestEntry> generate_dataset(const SimulateConfig& config);

}  // namespace smsi
