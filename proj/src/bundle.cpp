#include "smsi/bundle.hpp"

#include <zlib.h>

#include <bit>
#include <cstring>
#include <fstream>
#include <map>
#include <utility>

#include "smsi/errors.hpp"

namespace smsi {

namespace {

constexpr char kMagic[4] = {'P', 'M', 'S', 'I'};
constexpr std::uint16_t kVersion = 1;
constexpr std::uint8_t kDtypeF32 = 0;

using Bytes = std::vector<std::uint8_t>;

// --- writers -------------------------------------------------------------

void put_u8(Bytes& out, std::uint8_t v) { out.push_back(v); }

void put_u16(Bytes& out, std::uint16_t v) {
    out.push_back(static_cast<std::uint8_t>(v & 0xFF));
    out.push_back(static_cast<std::uint8_t>(v >> 8));
}

void put_u32(Bytes& out, std::uint32_t v) {
    for (int i = 0; i < 4; ++i) out.push_back(static_cast<std::uint8_t>(v >> (8 * i)));
}

void put_u64(Bytes& out, std::uint64_t v) {
    for (int i = 0; i < 8; ++i) out.push_back(static_cast<std::uint8_t>(v >> (8 * i)));
}

void put_i32(Bytes& out, std::int32_t v) { put_u32(out, static_cast<std::uint32_t>(v)); }
void put_f32(Bytes& out, float v) { put_u32(out, std::bit_cast<std::uint32_t>(v)); }
void put_f64(Bytes& out, double v) { put_u64(out, std::bit_cast<std::uint64_t>(v)); }

void put_short_str(Bytes& out, const std::string& s) {
    if (s.size() > 0xFFFF) throw ModelError("string too long for bundle: " + s.substr(0, 32));
    put_u16(out, static_cast<std::uint16_t>(s.size()));
    out.insert(out.end(), s.begin(), s.end());
}

void put_long_str(Bytes& out, const std::string& s) {
    if (s.size() > 0xFFFFFFFFull) throw ModelError("string too long for bundle");
    put_u32(out, static_cast<std::uint32_t>(s.size()));
    out.insert(out.end(), s.begin(), s.end());
}

// --- bounds-checked reader ------------------------------------------------

class Cursor {
  public:
    Cursor(const Bytes& bytes, std::size_t begin, std::size_t length, std::string context)
        : bytes_(bytes), pos_(begin), end_(begin + length), context_(std::move(context)) {}

    std::uint8_t u8() {
        need(1);
        return bytes_[pos_++];
    }

    std::uint16_t u16() {
        need(2);
        std::uint16_t v = static_cast<std::uint16_t>(bytes_[pos_]) |
                          static_cast<std::uint16_t>(bytes_[pos_ + 1]) << 8;
        pos_ += 2;
        return v;
    }

    std::uint32_t u32() {
        need(4);
        std::uint32_t v = 0;
        for (int i = 0; i < 4; ++i) v |= static_cast<std::uint32_t>(bytes_[pos_ + i]) << (8 * i);
        pos_ += 4;
        return v;
    }

    std::uint64_t u64() {
        need(8);
        std::uint64_t v = 0;
        for (int i = 0; i < 8; ++i) v |= static_cast<std::uint64_t>(bytes_[pos_ + i]) << (8 * i);
        pos_ += 8;
        return v;
    }

    std::int32_t i32() { return static_cast<std::int32_t>(u32()); }
    float f32() { return std::bit_cast<float>(u32()); }
    double f64() { return std::bit_cast<double>(u64()); }

    std::string short_str() { return str(u16()); }
    std::string long_str() { return str(u32()); }

    std::size_t remaining() const { return end_ - pos_; }

    void expect_exhausted() const {
        if (pos_ != end_)
            throw ModelError("bundle: trailing bytes in " + context_);
    }

  private:
    std::string str(std::size_t n) {
        need(n);
        std::string s(bytes_.begin() + static_cast<std::ptrdiff_t>(pos_),
                      bytes_.begin() + static_cast<std::ptrdiff_t>(pos_ + n));
        pos_ += n;
        return s;
    }

    void need(std::size_t n) const {
        if (end_ - pos_ < n) throw ModelError("bundle: truncated " + context_);
    }

    const Bytes& bytes_;
    std::size_t pos_;
    std::size_t end_;
    std::string context_;
};

std::uint32_t crc_of(const Bytes& bytes) {
    return static_cast<std::uint32_t>(
        ::crc32_z(0, bytes.empty() ? Z_NULL : bytes.data(), bytes.size()));
}

// --- CNN section ------------------------------------------------------------

Bytes encode_cnn(const CnnModel& model) {
    Bytes out;
    put_u32(out, static_cast<std::uint32_t>(model.config.input_size));
    put_u32(out, static_cast<std::uint32_t>(model.config.channels));
    put_u32(out, static_cast<std::uint32_t>(model.config.num_classes));
    put_u8(out, model.config.allow_any_size ? 1 : 0);

    put_u32(out, static_cast<std::uint32_t>(model.meta.epochs_trained));
    put_f64(out, model.meta.schedule.initial_lr);
    put_f64(out, model.meta.schedule.decay_factor);
    put_f64(out, model.meta.schedule.momentum);
    put_u32(out, static_cast<std::uint32_t>(model.meta.schedule.decay_every));
    put_u32(out, static_cast<std::uint32_t>(model.meta.schedule.total_epochs));
    put_u32(out, static_cast<std::uint32_t>(model.meta.schedule.batch_size));
    put_long_str(out, model.meta.dataset_fingerprint);

    // Net::state() yields tensors in serialization order with stable names.
    auto state = const_cast<Net<float>&>(model.net).state();
    put_u32(out, static_cast<std::uint32_t>(state.size()));
    for (const auto& [name, tensor] : state) {
        put_short_str(out, name);
        put_u8(out, kDtypeF32);
        const auto& shape = tensor->shape();
        put_u8(out, static_cast<std::uint8_t>(shape.size()));
        for (auto d : shape) put_u64(out, static_cast<std::uint64_t>(d));
        for (std::int64_t i = 0; i < tensor->numel(); ++i) put_f32(out, tensor->data()[i]);
    }
    return out;
}

CnnModel decode_cnn(Cursor& in, const std::string& section) {
    CnnConfig config;
    config.input_size = static_cast<int>(in.u32());
    config.channels = static_cast<int>(in.u32());
    config.num_classes = static_cast<int>(in.u32());
    config.allow_any_size = in.u8() != 0;

    TrainingMeta meta;
    meta.epochs_trained = static_cast<int>(in.u32());
    meta.schedule.initial_lr = in.f64();
    meta.schedule.decay_factor = in.f64();
    meta.schedule.momentum = in.f64();
    meta.schedule.decay_every = static_cast<int>(in.u32());
    meta.schedule.total_epochs = static_cast<int>(in.u32());
    meta.schedule.batch_size = static_cast<int>(in.u32());
    meta.dataset_fingerprint = in.long_str();

    CnnModel model;
    try {
        model = build_cnn(config, 0);
    } catch (const Error& e) {
        throw ModelError("bundle: " + section + ": bad CNN config: " + e.what());
    }
    model.meta = meta;

    auto state = model.net.state();
    const std::uint32_t tensor_count = in.u32();
    if (tensor_count != state.size())
        throw ModelError("bundle: " + section + ": expected " + std::to_string(state.size()) +
                         " tensors, found " + std::to_string(tensor_count));
    for (auto& [name, tensor] : state) {
        const std::string stored_name = in.short_str();
        if (stored_name != name)
            throw ModelError("bundle: " + section + ": tensor name mismatch: expected '" + name +
                             "', found '" + stored_name + "'");
        if (in.u8() != kDtypeF32)
            throw ModelError("bundle: " + section + ": unsupported dtype for " + name);
        const int rank = in.u8();
        Shape shape(static_cast<std::size_t>(rank));
        for (auto& d : shape) d = static_cast<std::int64_t>(in.u64());
        if (shape != tensor->shape())
            throw ModelError("bundle: " + section + ": shape mismatch for " + name);
        for (std::int64_t i = 0; i < tensor->numel(); ++i) tensor->data()[i] = in.f32();
    }
    in.expect_exhausted();
    return model;
}

// --- forest section ---------------------------------------------------------

Bytes encode_forest(const ForestModel& model) {
    Bytes out;
    put_u32(out, static_cast<std::uint32_t>(model.hyper.tree_count));
    put_u32(out, static_cast<std::uint32_t>(model.hyper.max_features));
    put_u32(out, static_cast<std::uint32_t>(model.hyper.min_samples_leaf));
    put_u8(out, model.hyper.bootstrap ? 1 : 0);
    put_u8(out, model.hyper.extra_trees ? 1 : 0);
    put_u64(out, model.hyper.seed);

    put_u32(out, static_cast<std::uint32_t>(model.num_classes));
    put_u64(out, static_cast<std::uint64_t>(model.feature_length));
    put_u8(out, model.degenerate ? 1 : 0);
    put_long_str(out, model.warning);

    put_u32(out, static_cast<std::uint32_t>(model.trees.size()));
    for (const auto& tree : model.trees) {
        put_u32(out, static_cast<std::uint32_t>(tree.nodes.size()));
        for (const auto& node : tree.nodes) {
            put_i32(out, node.feature);
            put_f64(out, node.threshold);
            put_i32(out, node.left);
            put_i32(out, node.right);
            put_u32(out, static_cast<std::uint32_t>(node.histogram.size()));
            for (auto count : node.histogram) put_u64(out, static_cast<std::uint64_t>(count));
        }
    }
    return out;
}

ForestModel decode_forest(Cursor& in, const std::string& section) {
    ForestModel model;
    model.hyper.tree_count = static_cast<int>(in.u32());
    model.hyper.max_features = static_cast<int>(in.u32());
    model.hyper.min_samples_leaf = static_cast<int>(in.u32());
    model.hyper.bootstrap = in.u8() != 0;
    model.hyper.extra_trees = in.u8() != 0;
    model.hyper.seed = in.u64();

    model.num_classes = static_cast<int>(in.u32());
    model.feature_length = static_cast<std::int64_t>(in.u64());
    model.degenerate = in.u8() != 0;
    model.warning = in.long_str();

    const std::uint32_t tree_count = in.u32();
    // Sanity bound: every tree needs at least its node-count field.
    if (static_cast<std::size_t>(tree_count) * 4 > in.remaining() + 4)
        throw ModelError("bundle: " + section + ": implausible tree count");
    model.trees.resize(tree_count);
    for (auto& tree : model.trees) {
        const std::uint32_t node_count = in.u32();
        if (static_cast<std::size_t>(node_count) * 24 > in.remaining() + 24)
            throw ModelError("bundle: " + section + ": implausible node count");
        tree.nodes.resize(node_count);
        for (auto& node : tree.nodes) {
            node.feature = in.i32();
            node.threshold = in.f64();
            node.left = in.i32();
            node.right = in.i32();
            const std::uint32_t hist = in.u32();
            node.histogram.resize(hist);
            for (auto& count : node.histogram) count = static_cast<std::int64_t>(in.u64());
        }
    }
    in.expect_exhausted();
    return model;
}

// --- container ---------------------------------------------------------------

struct RawBundle {
    std::vector<BundleSection> sections;
    Bytes bytes;

    const BundleSection& find(const std::string& name) const {
        for (const auto& s : sections)
            if (s.name == name) return s;
        throw ModelError("bundle: missing section '" + name + "'");
    }

    Cursor cursor(const BundleSection& s) const {
        return Cursor(bytes, static_cast<std::size_t>(s.offset),
                      static_cast<std::size_t>(s.length), "section '" + s.name + "'");
    }
};

Bytes read_file(const std::string& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw ModelError("cannot open bundle: " + path);
    Bytes bytes{std::istreambuf_iterator<char>(in), std::istreambuf_iterator<char>()};
    if (in.bad()) throw ModelError("cannot read bundle: " + path);
    return bytes;
}

RawBundle parse_container(const std::string& path) {
    RawBundle raw;
    raw.bytes = read_file(path);
    const auto& bytes = raw.bytes;
    if (bytes.size() < 10 || std::memcmp(bytes.data(), kMagic, 4) != 0)
        throw ModelError("not a model bundle: " + path);

    Cursor head(bytes, 4, bytes.size() - 4, "header");
    const std::uint16_t version = head.u16();
    if (version != kVersion)
        throw ModelError("unsupported bundle version " + std::to_string(version));
    const std::uint32_t count = head.u32();
    for (std::uint32_t i = 0; i < count; ++i) {
        BundleSection s;
        s.name = head.short_str();
        s.offset = head.u64();
        s.length = head.u64();
        s.crc32 = head.u32();
        if (s.offset > bytes.size() || bytes.size() - s.offset < s.length)
            throw ModelError("bundle: section '" + s.name + "' extends past end of file");
        raw.sections.push_back(std::move(s));
    }
    for (const auto& s : raw.sections) {
        Bytes payload(bytes.begin() + static_cast<std::ptrdiff_t>(s.offset),
                      bytes.begin() + static_cast<std::ptrdiff_t>(s.offset + s.length));
        if (crc_of(payload) != s.crc32)
            throw ModelError("bundle: CRC mismatch in section '" + s.name + "'");
    }
    return raw;
}

}  // namespace

void save_bundle(const std::string& path, const CascadeModel& model) {
    // A bundle may legitimately hold a stage-1-only model (between the two
    // training commands), so heads may be absent; present sections must be
    // consistent with the taxonomy.
    try {
        model.validate(false);
    } catch (const Error& e) {
        throw ModelError(std::string("refusing to save invalid model: ") + e.what());
    }

    // Deterministic section order: taxonomy, stage-1, then heads sorted by
    // primary (stage2 is a std::map, so iteration is already sorted).
    std::vector<std::pair<std::string, Bytes>> sections;
    const std::string taxonomy_json = model.taxonomy.to_json();
    sections.emplace_back("taxonomy", Bytes(taxonomy_json.begin(), taxonomy_json.end()));
    sections.emplace_back("stage1.cnn", encode_cnn(model.stage1_cnn));
    sections.emplace_back("stage1.forest", encode_forest(model.stage1_forest));
    for (const auto& [primary, head] : model.stage2)
        sections.emplace_back("stage2." + primary, encode_cnn(head));

    std::size_t header_size = 4 + 2 + 4;
    for (const auto& [name, payload] : sections) header_size += 2 + name.size() + 8 + 8 + 4;

    Bytes out;
    out.insert(out.end(), kMagic, kMagic + 4);
    put_u16(out, kVersion);
    put_u32(out, static_cast<std::uint32_t>(sections.size()));
    std::uint64_t offset = header_size;
    for (const auto& [name, payload] : sections) {
        put_short_str(out, name);
        put_u64(out, offset);
        put_u64(out, payload.size());
        put_u32(out, crc_of(payload));
        offset += payload.size();
    }
    for (const auto& [name, payload] : sections) out.insert(out.end(), payload.begin(), payload.end());

    std::ofstream file(path, std::ios::binary | std::ios::trunc);
    if (!file) throw ModelError("cannot open for writing: " + path);
    file.write(reinterpret_cast<const char*>(out.data()),
               static_cast<std::streamsize>(out.size()));
    if (!file) throw ModelError("write failed: " + path);
}

CascadeModel load_bundle(const std::string& path) {
    RawBundle raw = parse_container(path);

    CascadeModel model;
    {
        const auto& s = raw.find("taxonomy");
        std::string json(raw.bytes.begin() + static_cast<std::ptrdiff_t>(s.offset),
                         raw.bytes.begin() + static_cast<std::ptrdiff_t>(s.offset + s.length));
        try {
            model.taxonomy = Taxonomy::from_json(json);
        } catch (const Error& e) {
            throw ModelError(std::string("bundle: bad taxonomy section: ") + e.what());
        }
    }
    {
        auto cur = raw.cursor(raw.find("stage1.cnn"));
        model.stage1_cnn = decode_cnn(cur, "stage1.cnn");
    }
    {
        auto cur = raw.cursor(raw.find("stage1.forest"));
        model.stage1_forest = decode_forest(cur, "stage1.forest");
    }
    for (const auto& s : raw.sections) {
        if (!s.name.starts_with("stage2.")) continue;
        auto cur = raw.cursor(s);
        model.stage2.emplace(s.name.substr(7), decode_cnn(cur, s.name));
    }

    try {
        model.validate(false);
    } catch (const Error& e) {
        throw ModelError(std::string("bundle contains an invalid model: ") + e.what());
    }
    return model;
}

std::vector<BundleSection> read_bundle_sections(const std::string& path) {
    return parse_container(path).sections;
}

std::uint32_t file_crc32(const std::string& path) {
    return crc_of(read_file(path));
}

}  // namespace smsi
