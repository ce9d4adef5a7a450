#pragma once

// Synthetic social-platform emulator.  A platform is modeled as an optional
// resample followed by JPEG-style luma requantization: per 8x8 block,
// level-shift, 2-D DCT, divide by the platform's quantization table and
// round, multiply back, inverse DCT, clamp.  The quantization fingerprint
// therefore lives in the pixels without any entropy coding; the observable
// JPEG header is synthesized separately and always carries the most recent
// platform's table.

#include <array>
#include <cstdint>
#include <string>
#include <utility>
#include <vector>

#include "smsi/jpeg_meta.hpp"
#include "smsi/taxonomy.hpp"

namespace smsi {

// 8-bit-range grayscale image held as doubles so repeated requantization is
// exact (integerization happens only at PGM boundaries).
struct GrayImage {
    int width = 0;
    int height = 0;
    std::vector<double> pixels;  // row-major, values in [0, 255]

    double& at(int y, int x) { return pixels[static_cast<std::size_t>(y) * width + x]; }
    double at(int y, int x) const { return pixels[static_cast<std::size_t>(y) * width + x]; }
};

GrayImage make_gray(int width, int height, double fill = 0.0);

enum class ResampleKernel { Bilinear, Nearest };

struct PlatformProfile {
    std::string name;  // upper-case primary code, e.g. "C"
    QuantTable luma_qtable;
    double resize_factor = 1.0;  // in (0, 2]; 1.0 means no resample
    ResampleKernel resample_kernel = ResampleKernel::Bilinear;

    void validate() const;  // throws InvalidProfile
};

struct ChainRecord {
    std::vector<std::string> applied;  // profile names in application order
    QuantTable final_luma_qtable;      // the observable header table
    ChainLabel label{"nat", "NAT"};
};

// IJG-style quality scaling ("standard quality scaling formula"): with
// s = quality < 50 ? 5000/quality : 200 - 2*quality, each entry becomes
// clamp((v*s + 50) / 100, 1, 255) in integer arithmetic.  quality in 1..100.
QuantTable quality_scaled_table(const QuantTable& base, int quality);

// Orthonormal 2-D DCT-II of one 8x8 block and its inverse (no level shift).
std::array<double, 64> dct8x8(const std::array<double, 64>& block);
std::array<double, 64> idct8x8(const std::array<double, 64>& coefficients);

// Resizes by `factor` (output dims = round(dim * factor), floor 1) with
// pixel-center sampling and edge replication.  factor 1.0 is the identity.
GrayImage resample(const GrayImage& image, double factor, ResampleKernel kernel);

// Embeds a table's quantization fingerprint in the pixels.  Ragged edges are
// padded by edge replication for the transform and cropped back afterwards.
GrayImage requantize(const GrayImage& image, const QuantTable& table);

// One platform hop: resample (if factor != 1), then requantize.  The seed is
// reserved for stochastic platform behaviors and does not affect the current
// deterministic pipeline.  Throws InvalidProfile, and TooSmall when the
// image is smaller than 8x8 after the resample.
GrayImage apply_platform(const GrayImage& image, const PlatformProfile& profile,
                         std::uint64_t seed);

struct SimulatedChain {
    GrayImage image;
    ChainRecord record;
};

// Applies at most two platforms in order (paper scope; ChainTooLong beyond).
// The record's label maps profile names to taxonomy codes: [] -> natNAT,
// [X] -> natX, [X, Y] -> xY.  `initial_table` is the in-camera table that
// remains observable when no platform reprocessed the image.
SimulatedChain simulate_chain(const GrayImage& image,
                              const std::vector<PlatformProfile>& profiles,
                              const QuantTable& initial_table, std::uint64_t seed);

// Looks up the profiles a chain label requires, in application order
// (secondary first).  Primary NAT means no platforms.  Throws InvalidProfile
// when a named platform is missing from `available`.
std::vector<PlatformProfile> chain_profiles(const ChainLabel& label,
                                            const std::vector<PlatformProfile>& available);

// Minimal JPEG container so jpeg_meta can read the simulated metadata:
// SOI, DQT with the record's final table, SOF0 with the image dimensions,
// SOS, EOI — no entropy-coded data (pixels travel in the PGM sidecar).
std::vector<std::uint8_t> emit_jpeg_stub(const GrayImage& image, const ChainRecord& record);

// PGM (P5, maxval 255) sidecar writer; pixels are rounded and clamped.
void write_pgm(const std::string& path, const GrayImage& image);

// Reads binary PGM (P5) or PPM (P6, converted to luma with BT.601 weights).
// Throws DataError on malformed or non-8-bit files.
GrayImage read_image_gray(const std::string& path);

// Header-only probe: {width, height} without loading the raster.
std::pair<int, int> read_image_size(const std::string& path);

// Seeded procedural texture (multi-octave value noise normalized into
// [16, 239]), deterministic for a given seed.
GrayImage make_texture(int width, int height, std::uint64_t seed);

// The in-camera compression all simulated images start from: Annex-K table
// at quality 95, no resize.
PlatformProfile camera_profile();

// Default synthetic platform set: A = quality 60, B = quality 30 with 0.75
// resize, C = quality 90.  C plays the rehoster role in the desk taxonomy.
std::vector<PlatformProfile> default_profiles();

// Mean squared pixel difference between two same-sized images.
double mean_squared_difference(const GrayImage& a, const GrayImage& b);

}  // namespace smsi
