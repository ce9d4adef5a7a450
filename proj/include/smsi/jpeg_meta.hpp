#pragma once

#include <array>
#include <cstdint>
#include <span>
#include <vector>

#include "smsi/errors.hpp"

namespace smsi {

// ITU-T T.81 marker codes used here. Everything else is handled generically.
namespace markers {
constexpr std::uint16_t TEM = 0xFF01;
constexpr std::uint16_t SOF0 = 0xFFC0;
constexpr std::uint16_t SOF2 = 0xFFC2;
constexpr std::uint16_t DHT = 0xFFC4;
constexpr std::uint16_t RST0 = 0xFFD0;
constexpr std::uint16_t RST7 = 0xFFD7;
constexpr std::uint16_t SOI = 0xFFD8;
constexpr std::uint16_t EOI = 0xFFD9;
constexpr std::uint16_t SOS = 0xFFDA;
constexpr std::uint16_t DQT = 0xFFDB;
constexpr std::uint16_t APP0 = 0xFFE0;
constexpr std::uint16_t COM = 0xFFFE;
} // namespace markers

// Zig-zag scan order of T.81 Figure 5: entry k is the raster (row-major)
// index holding the k-th coefficient of the scan.
extern const std::array<int, 64> zigzag_index;

bool is_standalone_marker(std::uint16_t marker);

struct MarkerSegment {
    std::uint16_t marker = 0;
    std::size_t offset = 0; // byte index of the 0xFF in the stream
    std::vector<std::uint8_t> payload; // excludes the 2-byte length field

    bool has_length() const { return !is_standalone_marker(marker); }

    // Reconstructs the exact bytes this segment was parsed from.
    std::vector<std::uint8_t> serialize() const;
};

enum class TablePrecision : std::uint8_t {
    Bits8 = 0,
    Bits16 = 1,
};

// One 8x8 quantization table, values in natural (row-major) order.
struct QuantTable {
    int table_id = 0;
    TablePrecision precision = TablePrecision::Bits8;
    std::array<std::uint16_t, 64> values{};

    // Enforces: id in 0..3, every value >= 1, 8-bit values <= 255.
    void validate() const;
};

// The first 9 AC coefficients of the luma table in zig-zag scan order
// (zig-zag positions 1..9; position 0 is the DC term).
struct QFeature {
    std::array<int, 9> coefficients{};
};

// Walks the marker structure up to and including the first SOS; scan data is
// only searched for the trailing EOI. Throws MissingSoi, TruncatedSegment,
// UnexpectedEof or BadMarker.
std::vector<MarkerSegment> parse_markers(std::span<const std::uint8_t> stream);

// Every table of every DQT segment before SOS, de-zig-zagged into natural
// order. Throws NoDqt, BadTableId, BadTableValue on top of parse errors.
std::vector<QuantTable> extract_dqt(std::span<const std::uint8_t> stream);

struct LumaSelection {
    QuantTable table;
    // True when no id-0 table existed and the lowest id was used instead.
    bool fallback = false;
};

// Decoder semantics: the last id-0 table wins; without one, the last table
// of the lowest id is used and flagged.
LumaSelection select_luma_table(const std::vector<QuantTable>& tables);

QFeature q_feature(const QuantTable& table);

// Builds a DQT segment (marker + length + tables re-zig-zagged) suitable for
// embedding in a stream.
std::vector<std::uint8_t> serialize_dqt_segment(const std::vector<QuantTable>& tables);

// The example luminance table of T.81 Annex K.1.
const QuantTable& annex_k_luma_table();

} // namespace smsi
