#include "smsi/chain_sim.hpp"

#include <algorithm>
#include <cctype>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <numbers>
#include <random>
#include <sstream>

#include "smsi/errors.hpp"
#include "smsi/rng.hpp"

namespace smsi {

namespace {

double clamp255(double v) { return std::clamp(v, 0.0, 255.0); }

// Row u of the orthonormal 1-D DCT-II basis: M[u][x] = c(u) cos((2x+1)u pi / 16).
const std::array<std::array<double, 8>, 8>& dct_basis() {
    static const auto m = [] {
        std::array<std::array<double, 8>, 8> basis{};
        for (int u = 0; u < 8; ++u) {
            const double c = u == 0 ? std::sqrt(1.0 / 8.0) : 0.5;
            for (int x = 0; x < 8; ++x) {
                basis[u][x] = c * std::cos((2 * x + 1) * u * std::numbers::pi / 16.0);
            }
        }
        return basis;
    }();
    return m;
}

bool is_primary_code(const std::string& s) {
    if (s.empty() || !std::isupper(static_cast<unsigned char>(s.front()))) return false;
    return std::all_of(s.begin(), s.end(), [](unsigned char c) {
        return std::isupper(c) || std::isdigit(c);
    });
}

std::string lower_code(const std::string& s) {
    std::string out = s;
    for (char& c : out) c = static_cast<char>(std::tolower(static_cast<unsigned char>(c)));
    return out;
}

void push_u16(std::vector<std::uint8_t>& bytes, std::uint16_t value) {
    bytes.push_back(static_cast<std::uint8_t>(value >> 8));
    bytes.push_back(static_cast<std::uint8_t>(value & 0xFF));
}

// Reads one whitespace/comment-delimited header token of a PNM file.
std::string pnm_token(std::istream& in) {
    std::string token;
    int c = in.get();
    while (c != EOF) {
        if (c == '#') {
            while (c != EOF && c != '\n') c = in.get();
        } else if (std::isspace(c)) {
            c = in.get();
        } else {
            break;
        }
    }
    while (c != EOF && !std::isspace(c) && c != '#') {
        token.push_back(static_cast<char>(c));
        c = in.get();
    }
    // Leave the terminator in the stream: the caller owns the single
    // whitespace byte that separates the header from the raster.
    if (c != EOF) in.unget();
    return token;
}

int pnm_int(std::istream& in, const std::string& what) {
    const std::string token = pnm_token(in);
    try {
        std::size_t pos = 0;
        const int value = std::stoi(token, &pos);
        if (pos != token.size()) throw std::invalid_argument(token);
        return value;
    } catch (const std::exception&) {
        throw DataError("PNM header: bad " + what + " token '" + token + "'");
    }
}

}  // namespace

GrayImage make_gray(int width, int height, double fill) {
    if (width < 1 || height < 1) {
        throw TooSmall("image dimensions must be positive, got " + std::to_string(width) + "x" +
                       std::to_string(height));
    }
    GrayImage image;
    image.width = width;
    image.height = height;
    image.pixels.assign(static_cast<std::size_t>(width) * height, fill);
    return image;
}

void PlatformProfile::validate() const {
    if (!is_primary_code(name)) {
        throw InvalidProfile("profile name '" + name + "' must be an upper-case primary code");
    }
    if (!(resize_factor > 0.0) || resize_factor > 2.0) {
        throw InvalidProfile("resize factor must lie in (0, 2], got " +
                             std::to_string(resize_factor));
    }
    try {
        luma_qtable.validate();
    } catch (const Error& e) {
        throw InvalidProfile("profile '" + name + "' has an invalid table: " + e.what());
    }
}

QuantTable quality_scaled_table(const QuantTable& base, int quality) {
    if (quality < 1 || quality > 100) {
        throw InvalidProfile("quality must lie in 1..100, got " + std::to_string(quality));
    }
    const int s = quality < 50 ? 5000 / quality : 200 - 2 * quality;
    QuantTable out = base;
    for (auto& v : out.values) {
        const int scaled = (static_cast<int>(v) * s + 50) / 100;
        v = static_cast<std::uint16_t>(std::clamp(scaled, 1, 255));
    }
    return out;
}

std::array<double, 64> dct8x8(const std::array<double, 64>& block) {
    const auto& m = dct_basis();
    std::array<double, 64> rows{};  // 1-D transform of every row
    for (int y = 0; y < 8; ++y) {
        for (int u = 0; u < 8; ++u) {
            double acc = 0;
            for (int x = 0; x < 8; ++x) acc += m[u][x] * block[y * 8 + x];
            rows[y * 8 + u] = acc;
        }
    }
    std::array<double, 64> out{};
    for (int u = 0; u < 8; ++u) {
        for (int v = 0; v < 8; ++v) {
            double acc = 0;
            for (int y = 0; y < 8; ++y) acc += m[v][y] * rows[y * 8 + u];
            out[v * 8 + u] = acc;
        }
    }
    return out;
}

std::array<double, 64> idct8x8(const std::array<double, 64>& coefficients) {
    const auto& m = dct_basis();
    std::array<double, 64> cols{};  // inverse 1-D transform of every column
    for (int u = 0; u < 8; ++u) {
        for (int y = 0; y < 8; ++y) {
            double acc = 0;
            for (int v = 0; v < 8; ++v) acc += m[v][y] * coefficients[v * 8 + u];
            cols[y * 8 + u] = acc;
        }
    }
    std::array<double, 64> out{};
    for (int y = 0; y < 8; ++y) {
        for (int x = 0; x < 8; ++x) {
            double acc = 0;
            for (int u = 0; u < 8; ++u) acc += m[u][x] * cols[y * 8 + u];
            out[y * 8 + x] = acc;
        }
    }
    return out;
}

GrayImage resample(const GrayImage& image, double factor, ResampleKernel kernel) {
    if (factor == 1.0) return image;
    const int out_w = std::max<int>(1, static_cast<int>(std::llround(image.width * factor)));
    const int out_h = std::max<int>(1, static_cast<int>(std::llround(image.height * factor)));
    GrayImage out = make_gray(out_w, out_h);
    const auto clamp_x = [&](long long x) {
        return static_cast<int>(std::clamp<long long>(x, 0, image.width - 1));
    };
    const auto clamp_y = [&](long long y) {
        return static_cast<int>(std::clamp<long long>(y, 0, image.height - 1));
    };
    for (int y = 0; y < out_h; ++y) {
        const double sy = (y + 0.5) / factor - 0.5;
        for (int x = 0; x < out_w; ++x) {
            const double sx = (x + 0.5) / factor - 0.5;
            if (kernel == ResampleKernel::Nearest) {
                out.at(y, x) = image.at(clamp_y(std::llround(sy)), clamp_x(std::llround(sx)));
                continue;
            }
            const long long x0 = static_cast<long long>(std::floor(sx));
            const long long y0 = static_cast<long long>(std::floor(sy));
            const double fx = sx - static_cast<double>(x0);
            const double fy = sy - static_cast<double>(y0);
            const double top = (1 - fx) * image.at(clamp_y(y0), clamp_x(x0)) +
                               fx * image.at(clamp_y(y0), clamp_x(x0 + 1));
            const double bottom = (1 - fx) * image.at(clamp_y(y0 + 1), clamp_x(x0)) +
                                  fx * image.at(clamp_y(y0 + 1), clamp_x(x0 + 1));
            out.at(y, x) = (1 - fy) * top + fy * bottom;
        }
    }
    return out;
}

GrayImage requantize(const GrayImage& image, const QuantTable& table) {
    GrayImage out = image;
    const int blocks_x = (image.width + 7) / 8;
    const int blocks_y = (image.height + 7) / 8;
    for (int by = 0; by < blocks_y; ++by) {
        for (int bx = 0; bx < blocks_x; ++bx) {
            std::array<double, 64> block{};
            for (int y = 0; y < 8; ++y) {
                const int sy = std::min(by * 8 + y, image.height - 1);  // edge replication
                for (int x = 0; x < 8; ++x) {
                    const int sx = std::min(bx * 8 + x, image.width - 1);
                    block[y * 8 + x] = image.at(sy, sx) - 128.0;
                }
            }
            std::array<double, 64> coeffs = dct8x8(block);
            for (int k = 0; k < 64; ++k) {
                const double q = static_cast<double>(table.values[static_cast<std::size_t>(k)]);
                coeffs[static_cast<std::size_t>(k)] =
                    static_cast<double>(std::llround(coeffs[static_cast<std::size_t>(k)] / q)) * q;
            }
            const std::array<double, 64> rebuilt = idct8x8(coeffs);
            for (int y = 0; y < 8 && by * 8 + y < image.height; ++y) {
                for (int x = 0; x < 8 && bx * 8 + x < image.width; ++x) {
                    out.at(by * 8 + y, bx * 8 + x) = clamp255(rebuilt[y * 8 + x] + 128.0);
                }
            }
        }
    }
    return out;
}

GrayImage apply_platform(const GrayImage& image, const PlatformProfile& profile,
                         std::uint64_t seed) {
    (void)seed;  // reserved for stochastic platform behaviors
    profile.validate();
    GrayImage current = resample(image, profile.resize_factor, profile.resample_kernel);
    if (current.width < 8 || current.height < 8) {
        throw TooSmall("image is " + std::to_string(current.width) + "x" +
                       std::to_string(current.height) + " after resize; need at least 8x8");
    }
    return requantize(current, profile.luma_qtable);
}

SimulatedChain simulate_chain(const GrayImage& image,
                              const std::vector<PlatformProfile>& profiles,
                              const QuantTable& initial_table, std::uint64_t seed) {
    if (profiles.size() > 2) {
        throw ChainTooLong("chains are limited to two platforms, got " +
                           std::to_string(profiles.size()));
    }
    SimulatedChain result;
    result.image = image;
    result.record.final_luma_qtable = initial_table;
    for (std::size_t i = 0; i < profiles.size(); ++i) {
        result.image = apply_platform(result.image, profiles[i], mix_seed(seed, i));
        result.record.applied.push_back(profiles[i].name);
        result.record.final_luma_qtable = profiles[i].luma_qtable;
    }
    result.record.label.primary = profiles.empty() ? "NAT" : profiles.back().name;
    result.record.label.secondary =
        profiles.size() == 2 ? lower_code(profiles.front().name) : "nat";
    return result;
}

std::vector<PlatformProfile> chain_profiles(const ChainLabel& label,
                                            const std::vector<PlatformProfile>& available) {
    const auto find = [&](const std::string& name) -> const PlatformProfile& {
        const auto it = std::find_if(available.begin(), available.end(),
                                     [&](const PlatformProfile& p) { return p.name == name; });
        if (it == available.end()) {
            throw InvalidProfile("no platform profile named '" + name + "' is available");
        }
        return *it;
    };
    std::vector<PlatformProfile> out;
    if (label.primary == "NAT") {
        if (label.secondary != "nat") {
            throw InvalidProfile("chain '" + label.code() + "' reposts onto primary NAT");
        }
        return out;
    }
    if (label.secondary != "nat") {
        std::string first = label.secondary;
        for (char& c : first) c = static_cast<char>(std::toupper(static_cast<unsigned char>(c)));
        out.push_back(find(first));
    }
    out.push_back(find(label.primary));
    return out;
}

std::vector<std::uint8_t> emit_jpeg_stub(const GrayImage& image, const ChainRecord& record) {
    if (image.width > 0xFFFF || image.height > 0xFFFF) {
        throw DataError("image dimensions exceed the JPEG 16-bit limit");
    }
    std::vector<std::uint8_t> bytes;
    push_u16(bytes, markers::SOI);
    const std::vector<std::uint8_t> dqt = serialize_dqt_segment({record.final_luma_qtable});
    bytes.insert(bytes.end(), dqt.begin(), dqt.end());
    push_u16(bytes, markers::SOF0);
    push_u16(bytes, 2 + 9);  // length field + one grayscale component
    bytes.push_back(8);      // sample precision
    push_u16(bytes, static_cast<std::uint16_t>(image.height));
    push_u16(bytes, static_cast<std::uint16_t>(image.width));
    bytes.push_back(1);     // components
    bytes.push_back(1);     // component id
    bytes.push_back(0x11);  // 1x1 sampling
    bytes.push_back(static_cast<std::uint8_t>(record.final_luma_qtable.table_id));
    push_u16(bytes, markers::SOS);
    push_u16(bytes, 2 + 6);
    bytes.push_back(1);     // components in scan
    bytes.push_back(1);     // component id
    bytes.push_back(0x00);  // DC/AC table selectors
    bytes.push_back(0x00);  // spectral start
    bytes.push_back(0x3F);  // spectral end
    bytes.push_back(0x00);  // successive approximation
    push_u16(bytes, markers::EOI);
    return bytes;
}

void write_pgm(const std::string& path, const GrayImage& image) {
    std::ofstream out(path, std::ios::binary);
    if (!out) throw DataError("cannot open '" + path + "' for writing");
    out << "P5\n" << image.width << " " << image.height << "\n255\n";
    std::vector<unsigned char> row(static_cast<std::size_t>(image.width));
    for (int y = 0; y < image.height; ++y) {
        for (int x = 0; x < image.width; ++x) {
            row[static_cast<std::size_t>(x)] =
                static_cast<unsigned char>(std::llround(clamp255(image.at(y, x))));
        }
        out.write(reinterpret_cast<const char*>(row.data()), image.width);
    }
    if (!out) throw DataError("short write to '" + path + "'");
}

GrayImage read_image_gray(const std::string& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw DataError("cannot open '" + path + "' for reading");
    const std::string magic = pnm_token(in);
    if (magic != "P5" && magic != "P6") {
        throw DataError("'" + path + "' is not a binary PGM/PPM (magic '" + magic + "')");
    }
    const int width = pnm_int(in, "width");
    const int height = pnm_int(in, "height");
    const int maxval = pnm_int(in, "maxval");
    if (width < 1 || height < 1) throw DataError("'" + path + "' has non-positive dimensions");
    if (maxval < 1 || maxval > 255) {
        throw DataError("'" + path + "' has unsupported maxval " + std::to_string(maxval) +
                        " (8-bit only)");
    }
    // Exactly one whitespace byte separates the header from the raster.
    const int sep = in.get();
    if (sep == EOF || !std::isspace(sep)) throw DataError("'" + path + "' has a malformed header");

    const int channels = magic == "P6" ? 3 : 1;
    const std::size_t count = static_cast<std::size_t>(width) * height * channels;
    std::vector<unsigned char> raw(count);
    in.read(reinterpret_cast<char*>(raw.data()), static_cast<std::streamsize>(count));
    if (static_cast<std::size_t>(in.gcount()) != count) {
        throw DataError("'" + path + "' raster is truncated");
    }
    GrayImage image = make_gray(width, height);
    for (std::size_t i = 0; i < static_cast<std::size_t>(width) * height; ++i) {
        if (channels == 1) {
            image.pixels[i] = raw[i];
        } else {
            // BT.601 luma, matching JPEG's Y channel.
            image.pixels[i] =
                0.299 * raw[3 * i] + 0.587 * raw[3 * i + 1] + 0.114 * raw[3 * i + 2];
        }
    }
    return image;
}

std::pair<int, int> read_image_size(const std::string& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw DataError("cannot open '" + path + "' for reading");
    const std::string magic = pnm_token(in);
    if (magic != "P5" && magic != "P6") {
        throw DataError("'" + path + "' is not a binary PGM/PPM (magic '" + magic + "')");
    }
    const int width = pnm_int(in, "width");
    const int height = pnm_int(in, "height");
    if (width < 1 || height < 1) throw DataError("'" + path + "' has non-positive dimensions");
    return {width, height};
}

GrayImage make_texture(int width, int height, std::uint64_t seed) {
    GrayImage sum = make_gray(width, height);
    const int cells[] = {32, 16, 8, 4, 2};
    double amplitude = 1.0;
    for (std::size_t octave = 0; octave < std::size(cells); ++octave, amplitude *= 0.5) {
        const int cell = cells[octave];
        const int nx = width / cell + 2;
        const int ny = height / cell + 2;
        std::mt19937_64 rng(mix_seed(seed, octave));
        std::uniform_real_distribution<double> dist(0.0, 1.0);
        std::vector<double> lattice(static_cast<std::size_t>(nx) * ny);
        for (auto& v : lattice) v = dist(rng);
        const auto node = [&](int gy, int gx) {
            return lattice[static_cast<std::size_t>(gy) * nx + gx];
        };
        for (int y = 0; y < height; ++y) {
            const double gy = static_cast<double>(y) / cell;
            const int y0 = static_cast<int>(gy);
            double ty = gy - y0;
            ty = ty * ty * (3 - 2 * ty);  // smoothstep for C1 continuity
            for (int x = 0; x < width; ++x) {
                const double gx = static_cast<double>(x) / cell;
                const int x0 = static_cast<int>(gx);
                double tx = gx - x0;
                tx = tx * tx * (3 - 2 * tx);
                const double top = (1 - tx) * node(y0, x0) + tx * node(y0, x0 + 1);
                const double bottom = (1 - tx) * node(y0 + 1, x0) + tx * node(y0 + 1, x0 + 1);
                sum.at(y, x) += amplitude * ((1 - ty) * top + ty * bottom);
            }
        }
    }
    const auto [lo_it, hi_it] = std::minmax_element(sum.pixels.begin(), sum.pixels.end());
    const double lo = *lo_it;
    const double span = *hi_it - lo;
    for (auto& v : sum.pixels) {
        v = span > 0 ? 16.0 + (v - lo) / span * (239.0 - 16.0) : 128.0;
    }
    return sum;
}

PlatformProfile camera_profile() {
    PlatformProfile p;
    p.name = "NAT";
    p.luma_qtable = quality_scaled_table(annex_k_luma_table(), 95);
    p.resize_factor = 1.0;
    return p;
}

std::vector<PlatformProfile> default_profiles() {
    PlatformProfile a;
    a.name = "A";
    a.luma_qtable = quality_scaled_table(annex_k_luma_table(), 60);
    PlatformProfile b;
    b.name = "B";
    b.luma_qtable = quality_scaled_table(annex_k_luma_table(), 30);
    b.resize_factor = 0.75;
    PlatformProfile c;
    c.name = "C";
    c.luma_qtable = quality_scaled_table(annex_k_luma_table(), 90);
    return {a, b, c};
}

double mean_squared_difference(const GrayImage& a, const GrayImage& b) {
    if (a.width != b.width || a.height != b.height) {
        throw DataError("mean_squared_difference needs same-sized images");
    }
    double acc = 0;
    for (std::size_t i = 0; i < a.pixels.size(); ++i) {
        const double d = a.pixels[i] - b.pixels[i];
        acc += d * d;
    }
    return acc / static_cast<double>(a.pixels.size());
}

}  // namespace smsi
