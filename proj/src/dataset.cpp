#include "smsi/dataset.hpp"

#include <algorithm>
#include <bit>
#include <cmath>
#include <cstring>
#include <filesystem>
#include <fstream>
#include <iterator>
#include <random>
#include <set>
#include <sstream>
#include <unordered_map>
#include <unordered_set>

#include "smsi/errors.hpp"
#include "smsi/rng.hpp"

namespace smsi {

namespace {

// Distinct sub-streams of the extraction seed (see rng.hpp).
constexpr std::uint64_t kImageDrawStream = 1;
constexpr std::uint64_t kOffsetStream = 2;
constexpr std::uint64_t kTextureStream = 3;
constexpr std::uint64_t kChainStream = 4;

std::vector<std::string> split_csv_line(const std::string& line) {
    std::vector<std::string> fields;
    std::string field;
    for (const char c : line) {
        if (c == ',') {
            fields.push_back(field);
            field.clear();
        } else {
            field.push_back(c);
        }
    }
    fields.push_back(field);
    return fields;
}

void write_u16(std::ostream& out, std::uint16_t v) {
    const unsigned char bytes[2] = {static_cast<unsigned char>(v & 0xFF),
                                    static_cast<unsigned char>(v >> 8)};
    out.write(reinterpret_cast<const char*>(bytes), 2);
}

void write_u32(std::ostream& out, std::uint32_t v) {
    unsigned char bytes[4];
    for (int i = 0; i < 4; ++i) bytes[i] = static_cast<unsigned char>((v >> (8 * i)) & 0xFF);
    out.write(reinterpret_cast<const char*>(bytes), 4);
}

void write_u64(std::ostream& out, std::uint64_t v) {
    unsigned char bytes[8];
    for (int i = 0; i < 8; ++i) bytes[i] = static_cast<unsigned char>((v >> (8 * i)) & 0xFF);
    out.write(reinterpret_cast<const char*>(bytes), 8);
}

class CacheReader {
public:
    CacheReader(std::istream& in, const std::string& path) : in_(in), path_(path) {}

    void bytes(void* dst, std::size_t n) {
        in_.read(static_cast<char*>(dst), static_cast<std::streamsize>(n));
        if (static_cast<std::size_t>(in_.gcount()) != n) {
            throw BadCache("'" + path_ + "' is truncated");
        }
    }

    std::uint16_t u16() {
        unsigned char b[2];
        bytes(b, 2);
        return static_cast<std::uint16_t>(b[0] | (b[1] << 8));
    }

    std::uint32_t u32() {
        unsigned char b[4];
        bytes(b, 4);
        std::uint32_t v = 0;
        for (int i = 3; i >= 0; --i) v = (v << 8) | b[i];
        return v;
    }

    std::uint64_t u64() {
        unsigned char b[8];
        bytes(b, 8);
        std::uint64_t v = 0;
        for (int i = 7; i >= 0; --i) v = (v << 8) | b[i];
        return v;
    }

    std::string str(std::size_t n) {
        std::string s(n, '\0');
        bytes(s.data(), n);
        return s;
    }

private:
    std::istream& in_;
    const std::string& path_;
};

}  // namespace

std::vector<ManifestEntry> load_manifest(const std::string& path, bool check_paths) {
    std::ifstream in(path);
    if (!in) throw BadManifest("cannot open manifest '" + path + "'");
    std::string line;
    if (!std::getline(in, line)) throw BadManifest("manifest '" + path + "' is empty");
    if (!line.empty() && line.back() == '\r') line.pop_back();
    if (line != "id,pixels,jpeg,chain,group") {
        throw BadManifest("manifest '" + path + "' must start with header "
                          "'id,pixels,jpeg,chain,group', got '" + line + "'");
    }
    std::vector<ManifestEntry> entries;
    std::set<std::string> ids;
    int line_no = 1;
    while (std::getline(in, line)) {
        ++line_no;
        if (!line.empty() && line.back() == '\r') line.pop_back();
        if (line.empty()) continue;
        const auto fields = split_csv_line(line);
        if (fields.size() != 5) {
            throw BadManifest("manifest line " + std::to_string(line_no) + " has " +
                              std::to_string(fields.size()) + " fields, expected 5");
        }
        ManifestEntry entry{fields[0], fields[1], fields[2], fields[3], fields[4]};
        if (entry.id.empty() || entry.group.empty()) {
            throw BadManifest("manifest line " + std::to_string(line_no) +
                              " has an empty id or group");
        }
        if (!ids.insert(entry.id).second) {
            throw BadManifest("manifest line " + std::to_string(line_no) + " repeats id '" +
                              entry.id + "'");
        }
        try {
            (void)parse_chain_code(entry.chain);
        } catch (const Error& e) {
            throw BadManifest("manifest line " + std::to_string(line_no) + ": " + e.what());
        }
        if (check_paths) {
            for (const std::string* p : {&entry.pixels, &entry.jpeg}) {
                if (!std::filesystem::exists(*p)) {
                    throw BadManifest("manifest line " + std::to_string(line_no) +
                                      " references missing file '" + *p + "'");
                }
            }
        }
        entries.push_back(std::move(entry));
    }
    return entries;
}

void save_manifest(const std::string& path, const std::vector<ManifestEntry>& entries) {
    std::ofstream out(path);
    if (!out) throw BadManifest("cannot write manifest '" + path + "'");
    out << "id,pixels,jpeg,chain,group\n";
    for (const ManifestEntry& e : entries) {
        for (const std::string* field : {&e.id, &e.pixels, &e.jpeg, &e.chain, &e.group}) {
            if (field->find_first_of(",\n\r") != std::string::npos) {
                throw BadManifest("manifest field '" + *field + "' contains a delimiter");
            }
        }
        out << e.id << ',' << e.pixels << ',' << e.jpeg << ',' << e.chain << ',' << e.group
            << '\n';
    }
    if (!out) throw BadManifest("short write to manifest '" + path + "'");
}

SplitResult split(const std::vector<ManifestEntry>& entries, double test_fraction,
                  std::uint64_t seed) {
    if (!(test_fraction >= 0.0) || test_fraction > 1.0) {
        throw DataError("test fraction must lie in [0, 1], got " + std::to_string(test_fraction));
    }
    std::map<std::string, std::int64_t> class_sizes;
    for (const ManifestEntry& e : entries) ++class_sizes[e.chain];
    for (const auto& [chain, size] : class_sizes) {
        if (size < 2) {
            throw ClassTooSmall("class '" + chain + "' has " + std::to_string(size) +
                                " image(s); need at least 2 to split");
        }
    }
    std::map<std::string, std::int64_t> targets;
    for (const auto& [chain, size] : class_sizes) {
        targets[chain] = std::llround(test_fraction * static_cast<double>(size));
    }

    // Whole groups are assigned to one side.  Groups are visited in seeded
    // random order and accepted into the test side while no class overshoots
    // its target, which reproduces exact per-class stratification whenever
    // groups are class-balanced (one image per class, or unique per image).
    std::map<std::string, std::vector<std::size_t>> group_members;
    for (std::size_t i = 0; i < entries.size(); ++i) {
        group_members[entries[i].group].push_back(i);
    }
    std::vector<std::string> group_order;
    group_order.reserve(group_members.size());
    for (const auto& [group, members] : group_members) {
        (void)members;
        group_order.push_back(group);
    }
    auto rng = make_engine(seed);
    std::shuffle(group_order.begin(), group_order.end(), rng);

    std::map<std::string, std::int64_t> assigned;
    std::vector<bool> in_test(entries.size(), false);
    for (const std::string& group : group_order) {
        const auto& members = group_members[group];
        std::map<std::string, std::int64_t> contribution;
        for (const std::size_t i : members) ++contribution[entries[i].chain];
        const bool fits = std::all_of(contribution.begin(), contribution.end(),
                                      [&](const auto& kv) {
                                          return assigned[kv.first] + kv.second <=
                                                 targets[kv.first];
                                      });
        if (!fits) continue;
        for (const std::size_t i : members) in_test[i] = true;
        for (const auto& [chain, n] : contribution) assigned[chain] += n;
    }

    SplitResult result;
    for (std::size_t i = 0; i < entries.size(); ++i) {
        (in_test[i] ? result.test : result.train).push_back(entries[i]);
    }
    if (test_fraction == 0.0) {
        result.warnings.push_back("test fraction is 0: the test set is empty");
    }
    for (const auto& [chain, target] : targets) {
        if (assigned[chain] < target) {
            result.warnings.push_back("class '" + chain + "' reached only " +
                                      std::to_string(assigned[chain]) + " of " +
                                      std::to_string(target) +
                                      " test images (group constraints)");
        }
    }
    return result;
}

void PatchSet::validate() const {
    if (patch_size < 1) throw BadCache("patch size must be positive");
    const std::size_t expected = records.size() * static_cast<std::size_t>(patch_size) *
                                 static_cast<std::size_t>(patch_size);
    if (pixels.size() != expected) {
        throw BadCache("patch set holds " + std::to_string(pixels.size()) + " floats, expected " +
                       std::to_string(expected));
    }
    for (const PatchRecord& r : records) {
        if (r.chain.empty()) throw BadCache("patch record with an empty chain code");
    }
}

PatchSet extract_patches(const std::vector<ManifestEntry>& entries, int size,
                         std::int64_t count_per_class, std::uint64_t seed,
                         const std::string& split_tag) {
    if (size < 1) throw DataError("patch size must be positive, got " + std::to_string(size));
    if (count_per_class < 0) throw DataError("count_per_class must be non-negative");

    PatchSet set;
    set.patch_size = size;
    set.split_tag = split_tag;

    std::map<std::string, std::vector<std::size_t>> classes;  // chain -> entry indices
    for (std::size_t i = 0; i < entries.size(); ++i) classes[entries[i].chain].push_back(i);

    std::size_t class_pos = 0;
    for (const auto& [chain, members] : classes) {
        // Usable images: at least size x size (probed from the header only).
        std::vector<std::size_t> usable;
        for (const std::size_t i : members) {
            const auto [w, h] = read_image_size(entries[i].pixels);
            if (w < size || h < size) {
                set.warnings.push_back("image '" + entries[i].id + "' is " + std::to_string(w) +
                                       "x" + std::to_string(h) + ", smaller than " +
                                       std::to_string(size) + "; skipped");
                continue;
            }
            usable.push_back(i);
        }
        if (usable.empty()) {
            set.shortfall[chain] = count_per_class;
            set.warnings.push_back("class '" + chain + "' has no image of at least " +
                                   std::to_string(size) + "x" + std::to_string(size) +
                                   "; short by " + std::to_string(count_per_class) + " patches");
            ++class_pos;
            continue;
        }

        // Draw parent images uniformly with replacement, then emit patches
        // image by image so per-image offset streams are scheduling-free.
        std::map<std::size_t, std::int64_t> allocation;  // entry index -> patches
        auto pick_rng = make_engine(mix_seed(mix_seed(seed, kImageDrawStream), class_pos));
        std::uniform_int_distribution<std::size_t> pick(0, usable.size() - 1);
        for (std::int64_t k = 0; k < count_per_class; ++k) ++allocation[usable[pick(pick_rng)]];

        for (const auto& [entry_index, patches] : allocation) {
            const ManifestEntry& entry = entries[entry_index];
            const GrayImage image = read_image_gray(entry.pixels);
            auto offset_rng = make_engine(mix_seed(mix_seed(seed, kOffsetStream), entry_index));
            std::uniform_int_distribution<int> ox_dist(0, image.width - size);
            std::uniform_int_distribution<int> oy_dist(0, image.height - size);
            for (std::int64_t p = 0; p < patches; ++p) {
                const int ox = ox_dist(offset_rng);
                const int oy = oy_dist(offset_rng);
                set.records.push_back(PatchRecord{entry.chain, entry.id,
                                                  static_cast<std::uint32_t>(ox),
                                                  static_cast<std::uint32_t>(oy)});
                for (int y = 0; y < size; ++y) {
                    for (int x = 0; x < size; ++x) {
                        set.pixels.push_back(
                            static_cast<float>(image.at(oy + y, ox + x) / 255.0));
                    }
                }
            }
        }
        ++class_pos;
    }
    set.validate();
    return set;
}

void save_patch_cache(const std::string& path, const PatchSet& set) {
    set.validate();
    std::ofstream out(path, std::ios::binary);
    if (!out) throw BadCache("cannot open '" + path + "' for writing");
    out.write("PSET", 4);
    write_u16(out, 1);  // version
    write_u32(out, static_cast<std::uint32_t>(set.patch_size));
    write_u64(out, static_cast<std::uint64_t>(set.records.size()));
    const std::size_t patch_floats =
        static_cast<std::size_t>(set.patch_size) * static_cast<std::size_t>(set.patch_size);
    for (std::size_t i = 0; i < set.records.size(); ++i) {
        const PatchRecord& r = set.records[i];
        if (r.chain.size() > 0xFF) throw BadCache("chain code too long for the cache format");
        if (r.parent_id.size() > 0xFFFF) throw BadCache("parent id too long for the cache format");
        out.put(static_cast<char>(r.chain.size()));
        out.write(r.chain.data(), static_cast<std::streamsize>(r.chain.size()));
        write_u16(out, static_cast<std::uint16_t>(r.parent_id.size()));
        out.write(r.parent_id.data(), static_cast<std::streamsize>(r.parent_id.size()));
        write_u32(out, r.offset_x);
        write_u32(out, r.offset_y);
        for (std::size_t k = 0; k < patch_floats; ++k) {
            write_u32(out, std::bit_cast<std::uint32_t>(set.pixels[i * patch_floats + k]));
        }
    }
    if (!out) throw BadCache("short write to '" + path + "'");
}

PatchSet load_patch_cache(const std::string& path, const std::string& split_tag) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw BadCache("cannot open '" + path + "' for reading");
    CacheReader reader(in, path);
    if (reader.str(4) != "PSET") throw BadCache("'" + path + "' is not a PSET cache");
    const std::uint16_t version = reader.u16();
    if (version != 1) {
        throw BadCache("'" + path + "' has unsupported cache version " + std::to_string(version));
    }
    PatchSet set;
    set.split_tag = split_tag;
    const std::uint32_t size = reader.u32();
    if (size < 1 || size > 4096) {
        throw BadCache("'" + path + "' declares an implausible patch size " +
                       std::to_string(size));
    }
    set.patch_size = static_cast<int>(size);
    const std::uint64_t count = reader.u64();
    const std::size_t patch_floats = static_cast<std::size_t>(size) * size;
    set.records.reserve(count);
    set.pixels.reserve(count * patch_floats);
    for (std::uint64_t i = 0; i < count; ++i) {
        PatchRecord record;
        unsigned char chain_len = 0;
        reader.bytes(&chain_len, 1);
        record.chain = reader.str(chain_len);
        record.parent_id = reader.str(reader.u16());
        record.offset_x = reader.u32();
        record.offset_y = reader.u32();
        set.records.push_back(std::move(record));
        for (std::size_t k = 0; k < patch_floats; ++k) {
            set.pixels.push_back(std::bit_cast<float>(reader.u32()));
        }
    }
    if (in.peek() != EOF) throw BadCache("'" + path + "' has trailing data");
    set.validate();
    return set;
}

void check_no_leakage(const PatchSet& train, const PatchSet& test) {
    std::unordered_set<std::string> train_parents;
    for (const PatchRecord& r : train.records) train_parents.insert(r.parent_id);
    for (const PatchRecord& r : test.records) {
        if (train_parents.count(r.parent_id) != 0) {
            throw DataError("parent image '" + r.parent_id +
                            "' appears in both train and test patch sets");
        }
    }
}

namespace {

SampleSet<float> samples_from(const PatchSet& set, const std::vector<std::int64_t>& indices,
                              const std::vector<int>& labels) {
    if (indices.empty()) throw EmptyDataset("no patches selected");
    const std::int64_t s = set.patch_size;
    SampleSet<float> out;
    out.inputs = Tensor<float>({static_cast<std::int64_t>(indices.size()), 1, s, s});
    for (std::size_t k = 0; k < indices.size(); ++k) {
        std::memcpy(out.inputs.data() + static_cast<std::int64_t>(k) * s * s,
                    set.patch(indices[k]), static_cast<std::size_t>(s * s) * sizeof(float));
    }
    out.labels = labels;
    out.validate();
    return out;
}

}  // namespace

SampleSet<float> stage1_samples(const PatchSet& set, const Taxonomy& taxonomy) {
    std::vector<std::int64_t> indices;
    std::vector<int> labels;
    for (std::int64_t i = 0; i < set.count(); ++i) {
        const ChainLabel chain = parse_chain_code(set.records[static_cast<std::size_t>(i)].chain);
        if (!taxonomy.is_valid_chain(chain)) {
            throw DataError("patch chain '" + chain.code() + "' is not in the taxonomy");
        }
        indices.push_back(i);
        labels.push_back(taxonomy.primary_index(chain.primary));
    }
    return samples_from(set, indices, labels);
}

SampleSet<float> stage2_samples(const PatchSet& set, const Taxonomy& taxonomy,
                                const std::string& primary) {
    const std::vector<std::string> secondaries = taxonomy.secondaries_for(primary);
    std::vector<std::int64_t> indices;
    std::vector<int> labels;
    for (std::int64_t i = 0; i < set.count(); ++i) {
        const ChainLabel chain = parse_chain_code(set.records[static_cast<std::size_t>(i)].chain);
        if (!taxonomy.is_valid_chain(chain)) {
            throw DataError("patch chain '" + chain.code() + "' is not in the taxonomy");
        }
        if (chain.primary != primary) continue;
        const auto it = std::find(secondaries.begin(), secondaries.end(), chain.secondary);
        indices.push_back(i);
        labels.push_back(static_cast<int>(it - secondaries.begin()));
    }
    if (indices.empty()) {
        throw EmptyDataset("no patches with primary '" + primary + "' in the set");
    }
    return samples_from(set, indices, labels);
}

std::vector<QFeature> patch_q_features(const PatchSet& set,
                                       const std::vector<ManifestEntry>& entries) {
    std::unordered_map<std::string, const ManifestEntry*> by_id;
    for (const ManifestEntry& e : entries) by_id.emplace(e.id, &e);
    std::unordered_map<std::string, QFeature> cache;
    std::vector<QFeature> out;
    out.reserve(set.records.size());
    for (const PatchRecord& r : set.records) {
        const auto cached = cache.find(r.parent_id);
        if (cached != cache.end()) {
            out.push_back(cached->second);
            continue;
        }
        const auto it = by_id.find(r.parent_id);
        if (it == by_id.end()) {
            throw BadManifest("patch parent '" + r.parent_id + "' is not in the manifest");
        }
        std::ifstream in(it->second->jpeg, std::ios::binary);
        if (!in) throw BadManifest("cannot open JPEG '" + it->second->jpeg + "'");
        std::vector<std::uint8_t> bytes((std::istreambuf_iterator<char>(in)),
                                        std::istreambuf_iterator<char>());
        const QFeature q = q_feature(select_luma_table(extract_dqt(bytes)).table);
        cache.emplace(r.parent_id, q);
        out.push_back(q);
    }
    return out;
}

std::vector<ManifestEntry> generate_dataset(const SimulateConfig& config) {
    if (config.image_count < 1) throw DataError("image_count must be positive");
    if (config.image_size < 8) throw DataError("image_size must be at least 8");
    if (config.chains.empty()) throw DataError("no chains configured");
    config.camera.validate();
    for (const PlatformProfile& p : config.profiles) p.validate();
    std::vector<ChainLabel> labels;
    for (const std::string& code : config.chains) labels.push_back(parse_chain_code(code));

    const std::filesystem::path dir(config.output_dir);
    std::filesystem::create_directories(dir);

    const int id_width = static_cast<int>(std::to_string(config.image_count - 1).size());
    std::vector<ManifestEntry> entries;
    for (int i = 0; i < config.image_count; ++i) {
        std::string number = std::to_string(i);
        number.insert(0, static_cast<std::size_t>(id_width) - number.size(), '0');
        const std::string base_id = "img" + number;

        const GrayImage texture = make_texture(config.image_size, config.image_size,
                                               mix_seed(mix_seed(config.seed, kTextureStream),
                                                        static_cast<std::uint64_t>(i)));
        const GrayImage base = apply_platform(texture, config.camera, 0);

        for (std::size_t ci = 0; ci < labels.size(); ++ci) {
            const std::uint64_t chain_seed =
                mix_seed(mix_seed(config.seed, kChainStream),
                         static_cast<std::uint64_t>(i) * labels.size() + ci);
            const SimulatedChain sim = simulate_chain(
                base, chain_profiles(labels[ci], config.profiles),
                config.camera.luma_qtable, chain_seed);

            ManifestEntry entry;
            entry.id = base_id + "_" + labels[ci].code();
            entry.chain = labels[ci].code();
            entry.group = base_id;
            entry.pixels = (dir / (entry.id + ".pgm")).string();
            entry.jpeg = (dir / (entry.id + ".jpg")).string();
            write_pgm(entry.pixels, sim.image);
            const auto stub = emit_jpeg_stub(sim.image, sim.record);
            std::ofstream out(entry.jpeg, std::ios::binary);
            if (!out) throw DataError("cannot write '" + entry.jpeg + "'");
            out.write(reinterpret_cast<const char*>(stub.data()),
                      static_cast<std::streamsize>(stub.size()));
            entries.push_back(std::move(entry));
        }
    }
    save_manifest((dir / "manifest.csv").string(), entries);
    return entries;
}

}  // namespace smsi
