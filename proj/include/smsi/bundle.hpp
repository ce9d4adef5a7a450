#pragma once

// Single-file model bundle: magic PMSI, version, a named section table
// (offset, length, CRC32), then the payloads — taxonomy JSON, stage-1 CNN
// tensors, the forest, and one section per stage-2 head.  Saving is a pure
// function of model state, so save -> load -> save is byte-identical.

#include <cstdint>
#include <string>
#include <vector>

#include "smsi/cascade.hpp"

namespace smsi {

struct BundleSection {
    std::string name;
    std::uint64_t offset = 0;
    std::uint64_t length = 0;
    std::uint32_t crc32 = 0;
};

// Throws ModelError on I/O failure.
void save_bundle(const std::string& path, const CascadeModel& model);

// Validates magic, version and every section CRC.  Throws ModelError on any
// structural problem; the loaded model passes the partial-model validation
// (stage-2 heads may be absent until train-stage2 runs; inference commands
// re-validate with all heads required).
CascadeModel load_bundle(const std::string& path);

// The section table alone (no payload decoding beyond CRC verification).
std::vector<BundleSection> read_bundle_sections(const std::string& path);

// CRC32 of an entire file, for reproducibility checks.
std::uint32_t file_crc32(const std::string& path);

}  // namespace smsi
