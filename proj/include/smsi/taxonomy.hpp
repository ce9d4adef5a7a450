#pragma once

// Platform taxonomy as data: primary codes (upper-case), secondary codes
// (lower-case, including "nat" for none), and the valid-chain set.  The
// two-stage classifier derives its class sets and stage-2 head map from
// this structure, so alternative corpora run unmodified.

#include <map>
#include <string>
#include <vector>

namespace smsi {

struct ChainLabel {
    std::string secondary;  // lower-case code, e.g. "nat"
    std::string primary;    // upper-case code, e.g. "GOG"

    std::string code() const { return secondary + primary; }
    bool operator==(const ChainLabel& other) const = default;
};

// Splits a chain code into its lower-case prefix and upper-case suffix
// ("fbhGOG" -> {fbh, GOG}).  Throws BadTaxonomy on malformed codes.
ChainLabel parse_chain_code(const std::string& code);

struct Taxonomy {
    std::vector<std::string> primaries;    // e.g. NAT GOG FBH FBL WA
    std::vector<std::string> secondaries;  // e.g. nat gog fbh fbl wa
    std::vector<std::string> chains;       // valid chain codes, e.g. natGOG

    // Structural checks: code casing, uniqueness, membership of every chain's
    // parts, every primary reachable.  Throws BadTaxonomy.
    void validate() const;

    bool has_primary(const std::string& primary) const;
    bool is_valid_chain(const ChainLabel& chain) const;

    // Index of a primary in `primaries` (the stage-1 class index).
    int primary_index(const std::string& primary) const;  // throws UnknownPrimary

    // Valid secondaries for a primary, in `secondaries` order (the stage-2
    // head's class indexing).
    std::vector<std::string> secondaries_for(const std::string& primary) const;

    // Primaries needing a stage-2 head: those with >= 2 valid secondaries.
    std::vector<std::string> heads() const;

    // JSON round-trip ({"primaries": [...], "secondaries": [...], "chains": [...]}).
    std::string to_json() const;            // canonical (sorted keys, 2-space indent)
    static Taxonomy from_json(const std::string& text);

    // The published 5-platform taxonomy with its 11 valid chains.
    static Taxonomy paper();

    // Small synthetic taxonomy for desk-scale runs: camera originals plus
    // platforms A, B and C, where C also hosts reposts from A and B.
    static Taxonomy desk();

    bool operator==(const Taxonomy& other) const = default;
};

}  // namespace smsi
