#include "smsi/jpeg_meta.hpp"

#include <string>

namespace smsi {

const std::array<int, 64> zigzag_index = {
    0,  1,  8,  16, 9,  2,  3,  10,
    17, 24, 32, 25, 18, 11, 4,  5,
    12, 19, 26, 33, 40, 48, 41, 34,
    27, 20, 13, 6,  7,  14, 21, 28,
    35, 42, 49, 56, 57, 50, 43, 36,
    29, 22, 15, 23, 30, 37, 44, 51,
    58, 59, 52, 45, 38, 31, 39, 46,
    53, 60, 61, 54, 47, 55, 62, 63,
};

bool is_standalone_marker(std::uint16_t marker) {
    if (marker == markers::SOI || marker == markers::EOI || marker == markers::TEM)
        return true;
    return marker >= markers::RST0 && marker <= markers::RST7;
}

std::vector<std::uint8_t> MarkerSegment::serialize() const {
    std::vector<std::uint8_t> out;
    out.push_back(0xFF);
    out.push_back(static_cast<std::uint8_t>(marker & 0xFF));
    if (has_length()) {
        const std::size_t len = payload.size() + 2;
        out.push_back(static_cast<std::uint8_t>(len >> 8));
        out.push_back(static_cast<std::uint8_t>(len & 0xFF));
        out.insert(out.end(), payload.begin(), payload.end());
    }
    return out;
}

void QuantTable::validate() const {
    if (table_id < 0 || table_id > 3)
        throw BadTableId("quantization table id " + std::to_string(table_id) + " out of range 0..3");
    for (int i = 0; i < 64; ++i) {
        if (values[i] < 1)
            throw BadTableValue("quantization value at position " + std::to_string(i) + " is zero");
        if (precision == TablePrecision::Bits8 && values[i] > 255)
            throw BadTableValue("8-bit table holds value " + std::to_string(values[i]));
    }
}

namespace {

std::uint16_t be16(std::uint8_t hi, std::uint8_t lo) {
    return static_cast<std::uint16_t>((hi << 8) | lo);
}

} // namespace

std::vector<MarkerSegment> parse_markers(std::span<const std::uint8_t> stream) {
    const std::size_t n = stream.size();
    if (n < 2 || stream[0] != 0xFF || stream[1] != (markers::SOI & 0xFF))
        throw MissingSoi();

    std::vector<MarkerSegment> segments;
    segments.push_back({markers::SOI, 0, {}});

    std::size_t pos = 2;
    bool in_scan = false;
    while (true) {
        if (!in_scan) {
            if (pos >= n)
                throw UnexpectedEof("stream ended without EOI at offset " + std::to_string(pos));
            if (stream[pos] != 0xFF)
                throw BadMarker("expected marker at offset " + std::to_string(pos));
            // B.1.1.2: any marker may be preceded by fill bytes (0xFF).
            while (pos + 1 < n && stream[pos + 1] == 0xFF)
                ++pos;
            if (pos + 1 >= n)
                throw UnexpectedEof("stream ends inside a marker");
            const std::uint8_t code = stream[pos + 1];
            if (code == 0x00)
                throw BadMarker("stuffed 0xFF00 outside entropy-coded data at offset " + std::to_string(pos));
            const std::uint16_t marker = 0xFF00 | code;
            const std::size_t marker_offset = pos;
            pos += 2;

            if (marker == markers::EOI) {
                segments.push_back({marker, marker_offset, {}});
                return segments;
            }
            if (is_standalone_marker(marker)) {
                segments.push_back({marker, marker_offset, {}});
                continue;
            }
            if (pos + 2 > n)
                throw UnexpectedEof("segment at offset " + std::to_string(marker_offset) + " is missing its length field");
            const std::uint16_t length = be16(stream[pos], stream[pos + 1]);
            if (length < 2)
                throw BadMarker("segment length below 2 at offset " + std::to_string(marker_offset));
            if (pos + length > n)
                throw TruncatedSegment("segment at offset " + std::to_string(marker_offset) + " declares "
                                       + std::to_string(length) + " bytes but only "
                                       + std::to_string(n - pos) + " remain");
            MarkerSegment seg{marker, marker_offset,
                              {stream.begin() + pos + 2, stream.begin() + pos + length}};
            pos += length;
            segments.push_back(std::move(seg));
            if (marker == markers::SOS)
                in_scan = true;
        } else {
            // Entropy-coded data. Stuffed 0xFF00, fill bytes and restart
            // markers pass through; later header segments (multi-scan
            // streams) are skipped without being collected; stop at EOI.
            if (pos >= n)
                throw UnexpectedEof("no EOI after scan data");
            if (stream[pos] != 0xFF) {
                ++pos;
                continue;
            }
            if (pos + 1 >= n)
                throw UnexpectedEof("stream ends inside a marker");
            const std::uint8_t code = stream[pos + 1];
            if (code == 0x00 || (0xFF00 | code) == markers::TEM) {
                pos += 2;
                continue;
            }
            if (code == 0xFF) {
                ++pos;
                continue;
            }
            const std::uint16_t marker = 0xFF00 | code;
            if (marker >= markers::RST0 && marker <= markers::RST7) {
                pos += 2;
                continue;
            }
            if (marker == markers::EOI) {
                segments.push_back({marker, pos, {}});
                return segments;
            }
            if (marker == markers::SOI) { // bogus, but tolerated in scan data
                pos += 2;
                continue;
            }
            pos += 2;
            if (pos + 2 > n)
                throw UnexpectedEof("segment in scan data is missing its length field");
            const std::uint16_t length = be16(stream[pos], stream[pos + 1]);
            if (length < 2)
                throw BadMarker("segment length below 2 in scan data");
            if (pos + length > n)
                throw TruncatedSegment("segment in scan data declares " + std::to_string(length)
                                       + " bytes but only " + std::to_string(n - pos) + " remain");
            pos += length;
        }
    }
}

std::vector<QuantTable> extract_dqt(std::span<const std::uint8_t> stream) {
    const auto segments = parse_markers(stream);

    std::vector<QuantTable> tables;
    bool saw_dqt = false;
    for (const auto& seg : segments) {
        if (seg.marker != markers::DQT)
            continue;
        saw_dqt = true;
        const auto& p = seg.payload;
        std::size_t i = 0;
        if (p.empty())
            throw TruncatedSegment("DQT segment at offset " + std::to_string(seg.offset) + " is empty");
        // B.2.4.1: each table is Pq/Tq followed by 64 elements in zig-zag
        // order; a segment may carry several tables back-to-back.
        while (i < p.size()) {
            const std::uint8_t pqtq = p[i++];
            const int pq = pqtq >> 4;
            const int tq = pqtq & 0x0F;
            if (tq > 3)
                throw BadTableId("DQT table id " + std::to_string(tq) + " out of range 0..3");
            if (pq > 1)
                throw BadTableValue("DQT precision " + std::to_string(pq) + " is not 0 (8-bit) or 1 (16-bit)");
            const std::size_t needed = pq ? 128 : 64;
            if (i + needed > p.size())
                throw TruncatedSegment("DQT table data is short: need " + std::to_string(needed)
                                       + " bytes, have " + std::to_string(p.size() - i));
            QuantTable t;
            t.table_id = tq;
            t.precision = pq ? TablePrecision::Bits16 : TablePrecision::Bits8;
            for (int k = 0; k < 64; ++k) {
                std::uint16_t v;
                if (pq) {
                    v = be16(p[i], p[i + 1]);
                    i += 2;
                } else {
                    v = p[i++];
                }
                t.values[static_cast<std::size_t>(zigzag_index[k])] = v;
            }
            t.validate();
            tables.push_back(t);
        }
    }
    if (!saw_dqt || tables.empty())
        throw NoDqt();
    return tables;
}

LumaSelection select_luma_table(const std::vector<QuantTable>& tables) {
    if (tables.empty())
        throw NoDqt();
    // Last definition of an id wins, matching decoder semantics.
    const QuantTable* best = nullptr;
    for (const auto& t : tables)
        if (t.table_id == 0)
            best = &t;
    if (best)
        return {*best, false};
    int lowest = 4;
    for (const auto& t : tables)
        if (t.table_id < lowest) {
            lowest = t.table_id;
        }
    for (const auto& t : tables)
        if (t.table_id == lowest)
            best = &t;
    return {*best, true};
}

QFeature q_feature(const QuantTable& table) {
    QFeature f;
    for (int k = 1; k <= 9; ++k)
        f.coefficients[static_cast<std::size_t>(k - 1)] =
            table.values[static_cast<std::size_t>(zigzag_index[k])];
    return f;
}

std::vector<std::uint8_t> serialize_dqt_segment(const std::vector<QuantTable>& tables) {
    MarkerSegment seg;
    seg.marker = markers::DQT;
    for (const auto& t : tables) {
        t.validate();
        const bool wide = t.precision == TablePrecision::Bits16;
        seg.payload.push_back(static_cast<std::uint8_t>((wide ? 0x10 : 0x00) | t.table_id));
        for (int k = 0; k < 64; ++k) {
            const std::uint16_t v = t.values[static_cast<std::size_t>(zigzag_index[k])];
            if (wide) {
                seg.payload.push_back(static_cast<std::uint8_t>(v >> 8));
                seg.payload.push_back(static_cast<std::uint8_t>(v & 0xFF));
            } else {
                seg.payload.push_back(static_cast<std::uint8_t>(v));
            }
        }
    }
    return seg.serialize();
}

const QuantTable& annex_k_luma_table() {
    static const QuantTable table = [] {
        QuantTable t;
        t.table_id = 0;
        t.precision = TablePrecision::Bits8;
        t.values = {
            16, 11, 10, 16, 24,  40,  51,  61,
            12, 12, 14, 19, 26,  58,  60,  55,
            14, 13, 16, 24, 40,  57,  69,  56,
            14, 17, 22, 29, 51,  87,  80,  62,
            18, 22, 37, 56, 68,  109, 103, 77,
            24, 35, 55, 64, 81,  104, 113, 92,
            49, 64, 78, 87, 103, 121, 120, 101,
            72, 92, 95, 98, 112, 100, 103, 99,
        };
        return t;
    }();
    return table;
}

} // namespace smsi
