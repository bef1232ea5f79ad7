#pragma once

// Dataset ingestion and persistence:
//   - binary PPM (P6) images and the `path,label,split` manifest
//   - a synthetic fine-grained dataset generator
//   - checkpoint files (magic FPH1) and code files (magic FPHC),
//     little-endian, layouts documented on the writers below.

#include <algorithm>
#include <array>
#include <bit>
#include <charconv>
#include <cmath>
#include <cstdint>
#include <cstring>
#include <filesystem>
#include <fstream>
#include <iterator>
#include <limits>
#include <optional>
#include <random>
#include <set>
#include <sstream>
#include <string>
#include <string_view>
#include <vector>

#include "fph/dataset.hpp"
#include "fph/errors.hpp"
#include "fph/parameters.hpp"
#include "fph/retrieval.hpp"
#include "fph/tensor.hpp"
#include "fph/training.hpp"

namespace fph {

namespace fs = std::filesystem;

// ---------------------------------------------------------------------------
// Images
// ---------------------------------------------------------------------------

/// 8-bit interleaved RGB raster.
struct RgbImage {
    std::size_t width = 0;
    std::size_t height = 0;
    std::vector<std::uint8_t> pixels; // row-major, 3 bytes per pixel

    friend bool operator==(const RgbImage&, const RgbImage&) = default;
};

inline std::vector<char> read_file(const fs::path& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw IoError("cannot open '" + path.string() + "'");
    return std::vector<char>(std::istreambuf_iterator<char>(in), std::istreambuf_iterator<char>());
}

inline void write_file(const fs::path& path, std::string_view bytes) {
    std::ofstream out(path, std::ios::binary | std::ios::trunc);
    if (!out) throw IoError("cannot open '" + path.string() + "' for writing");
    out.write(bytes.data(), static_cast<std::streamsize>(bytes.size()));
    if (!out) throw IoError("write to '" + path.string() + "' failed");
}

inline void write_ppm(const fs::path& path, const RgbImage& img) {
    std::string bytes = "P6\n" + std::to_string(img.width) + " " + std::to_string(img.height) + "\n255\n";
    bytes.append(reinterpret_cast<const char*>(img.pixels.data()), img.pixels.size());
    write_file(path, bytes);
}

inline RgbImage decode_ppm(std::string_view bytes, const std::string& where) {
    std::size_t pos = 0;
    auto fail = [&](const std::string& what) -> IoError { return IoError("malformed PPM '" + where + "': " + what); };
    auto skip_space = [&] {
        while (pos < bytes.size()) {
            if (bytes[pos] == '#') {
                while (pos < bytes.size() && bytes[pos] != '\n') ++pos;
            } else if (std::isspace(static_cast<unsigned char>(bytes[pos]))) {
                ++pos;
            } else {
                break;
            }
        }
    };
    auto read_uint = [&](const char* field) {
        skip_space();
        std::size_t value = 0;
        auto [ptr, ec] = std::from_chars(bytes.data() + pos, bytes.data() + bytes.size(), value);
        if (ec != std::errc{} || ptr == bytes.data() + pos) throw fail(std::string("bad ") + field);
        pos = static_cast<std::size_t>(ptr - bytes.data());
        return value;
    };
    if (bytes.size() < 2 || bytes[0] != 'P' || bytes[1] != '6') throw fail("missing P6 magic");
    pos = 2;
    RgbImage img;
    img.width = read_uint("width");
    img.height = read_uint("height");
    const std::size_t maxval = read_uint("maxval");
    if (img.width == 0 || img.height == 0) throw fail("zero dimension");
    if (maxval == 0 || maxval > 255) throw fail("only 8-bit maxval is supported");
    if (pos >= bytes.size() || !std::isspace(static_cast<unsigned char>(bytes[pos]))) throw fail("bad header end");
    ++pos;
    const std::size_t n = img.width * img.height * 3;
    if (bytes.size() - pos < n) throw fail("truncated pixel data");
    img.pixels.resize(n);
    for (std::size_t i = 0; i < n; ++i) {
        const auto v = static_cast<std::uint8_t>(bytes[pos + i]);
        img.pixels[i] = maxval == 255 ? v : static_cast<std::uint8_t>(std::lround(255.0 * v / maxval));
    }
    return img;
}

inline RgbImage read_ppm(const fs::path& path) {
    auto bytes = read_file(path);
    return decode_ppm(std::string_view(bytes.data(), bytes.size()), path.string());
}

/// Bilinear resampling with half-pixel centers.
inline Tensor resize_bilinear(const Tensor& chw, std::size_t out_h, std::size_t out_w) {
    const std::size_t C = chw.dim(0), H = chw.dim(1), W = chw.dim(2);
    if (H == out_h && W == out_w) return Tensor::from(chw.shape(), {chw.data().begin(), chw.data().end()});
    std::vector<double> out(C * out_h * out_w);
    const double sy = static_cast<double>(H) / static_cast<double>(out_h);
    const double sx = static_cast<double>(W) / static_cast<double>(out_w);
    for (std::size_t y = 0; y < out_h; ++y) {
        const double fy = std::clamp((static_cast<double>(y) + 0.5) * sy - 0.5, 0.0, static_cast<double>(H - 1));
        const auto y0 = static_cast<std::size_t>(fy);
        const std::size_t y1 = std::min(y0 + 1, H - 1);
        const double wy = fy - static_cast<double>(y0);
        for (std::size_t x = 0; x < out_w; ++x) {
            const double fx = std::clamp((static_cast<double>(x) + 0.5) * sx - 0.5, 0.0, static_cast<double>(W - 1));
            const auto x0 = static_cast<std::size_t>(fx);
            const std::size_t x1 = std::min(x0 + 1, W - 1);
            const double wx = fx - static_cast<double>(x0);
            for (std::size_t c = 0; c < C; ++c) {
                auto at = [&](std::size_t yy, std::size_t xx) { return chw[(c * H + yy) * W + xx]; };
                const double top = (1 - wx) * at(y0, x0) + wx * at(y0, x1);
                const double bot = (1 - wx) * at(y1, x0) + wx * at(y1, x1);
                out[(c * out_h + y) * out_w + x] = (1 - wy) * top + wy * bot;
            }
        }
    }
    return Tensor::from({C, out_h, out_w}, std::move(out));
}

/// 3 x H x W tensor with values pixel / 255, resized to `size` x `size` if needed.
inline Tensor image_to_tensor(const RgbImage& img, std::size_t size) {
    const std::size_t H = img.height, W = img.width;
    std::vector<double> data(3 * H * W);
    for (std::size_t y = 0; y < H; ++y) {
        for (std::size_t x = 0; x < W; ++x) {
            for (std::size_t c = 0; c < 3; ++c) {
                data[(c * H + y) * W + x] = img.pixels[(y * W + x) * 3 + c] / 255.0;
            }
        }
    }
    auto t = Tensor::from({3, H, W}, std::move(data));
    return size == 0 ? t : resize_bilinear(t, size, size);
}

// ---------------------------------------------------------------------------
// Manifest
// ---------------------------------------------------------------------------

enum class Split { train, query };

inline std::string_view split_name(Split s) { return s == Split::train ? "train" : "query"; }

struct ManifestEntry {
    std::string path; // relative to the manifest's directory
    std::uint32_t label = 0;
    Split split = Split::train;

    friend bool operator==(const ManifestEntry&, const ManifestEntry&) = default;
};

struct DatasetManifest {
    std::vector<ManifestEntry> entries;
    fs::path root; // directory the relative paths resolve against

    std::vector<ManifestEntry> filter(Split split) const {
        std::vector<ManifestEntry> out;
        for (const auto& e : entries) {
            if (e.split == split) out.push_back(e);
        }
        return out;
    }
};

inline void write_manifest(const fs::path& path, const std::vector<ManifestEntry>& entries) {
    std::string text = "path,label,split\n";
    for (const auto& e : entries) {
        text += e.path + "," + std::to_string(e.label) + "," + std::string(split_name(e.split)) + "\n";
    }
    write_file(path, text);
}

inline DatasetManifest read_manifest(const fs::path& path) {
    auto bytes = read_file(path);
    std::istringstream in(std::string(bytes.begin(), bytes.end()));
    std::string line;
    auto where = [&](std::size_t n) { return "'" + path.string() + "' line " + std::to_string(n); };
    if (!std::getline(in, line)) throw IoError("empty manifest " + where(1));
    if (!line.empty() && line.back() == '\r') line.pop_back();
    if (line != "path,label,split") throw IoError("manifest " + where(1) + ": expected header path,label,split");

    DatasetManifest m;
    m.root = path.parent_path();
    std::set<std::string> seen;
    std::size_t n = 1;
    while (std::getline(in, line)) {
        ++n;
        if (!line.empty() && line.back() == '\r') line.pop_back();
        if (line.empty()) continue;
        const auto c1 = line.find(',');
        const auto c2 = c1 == std::string::npos ? c1 : line.find(',', c1 + 1);
        if (c2 == std::string::npos || line.find(',', c2 + 1) != std::string::npos) {
            throw IoError("manifest " + where(n) + ": expected three fields");
        }
        ManifestEntry e;
        e.path = line.substr(0, c1);
        const std::string label = line.substr(c1 + 1, c2 - c1 - 1);
        const std::string split = line.substr(c2 + 1);
        if (e.path.empty()) throw IoError("manifest " + where(n) + ": empty path");
        std::uint64_t value = 0;
        auto [ptr, ec] = std::from_chars(label.data(), label.data() + label.size(), value);
        if (ec != std::errc{} || ptr != label.data() + label.size() || label.empty() ||
            value > std::numeric_limits<std::uint32_t>::max()) {
            throw IoError("manifest " + where(n) + ": invalid label '" + label + "' for " + e.path);
        }
        e.label = static_cast<std::uint32_t>(value);
        if (split == "train") e.split = Split::train;
        else if (split == "query") e.split = Split::query;
        else throw IoError("manifest " + where(n) + ": split must be train or query, got '" + split + "'");
        if (!seen.insert(e.path).second) throw IoError("manifest " + where(n) + ": duplicate path " + e.path);
        m.entries.push_back(std::move(e));
    }
    return m;
}

/// Decodes the given entries into tensors of side `input_size`.
inline LabeledImages load_images(const DatasetManifest& manifest, const std::vector<ManifestEntry>& entries,
                                 std::size_t input_size) {
    LabeledImages out;
    for (const auto& e : entries) {
        const fs::path file = manifest.root / e.path;
        out.images.push_back(image_to_tensor(read_ppm(file), input_size));
        out.labels.push_back(e.label);
    }
    return out;
}

inline LabeledImages load_dataset(const fs::path& manifest_path, std::size_t input_size,
                                  std::optional<Split> split = std::nullopt) {
    auto m = read_manifest(manifest_path);
    return load_images(m, split ? m.filter(*split) : m.entries, input_size);
}

// ---------------------------------------------------------------------------
// Synthetic fine-grained data
// ---------------------------------------------------------------------------

struct SyntheticSpec {
    std::size_t groups = 2;
    std::size_t classes_per_group = 4;
    std::size_t images_per_class = 40;
    std::size_t image_size = 64;
    std::size_t detail_size = 15;
    double position_jitter = 1.0;    // pixels, glyph offset
    double brightness_jitter = 0.03; // relative, whole image
    double pixel_noise = 0.02;       // uniform per-pixel amplitude
    double group_contrast = 0.3;     // 0: all groups share colours, 1: independent colours
    double query_fraction = 0.25;
    std::uint64_t seed = 1;

    void validate() const {
        if (groups < 1 || classes_per_group < 1 || images_per_class < 1) {
            throw ConfigError("synthetic spec needs positive groups, classes_per_group and images_per_class");
        }
        if (image_size < 16) throw ConfigError("synthetic image_size must be at least 16");
        if (detail_size < 4 || 4 * detail_size >= image_size) {
            throw ConfigError("detail_size must satisfy 4 <= detail_size < image_size / 4");
        }
        if (!(query_fraction >= 0 && query_fraction < 1)) throw ConfigError("query_fraction must lie in [0, 1)");
        if (!(group_contrast > 0 && group_contrast <= 1)) throw ConfigError("group_contrast must lie in (0, 1]");
        if (position_jitter < 0 || brightness_jitter < 0 || brightness_jitter >= 1 || pixel_noise < 0) {
            throw ConfigError("jitter amplitudes must be non-negative and brightness_jitter < 1");
        }
    }
};

namespace detail {

struct GroupStyle {
    std::array<double, 3> background_a{}, background_b{}, body{}, stripe{};
    double cx = 0, cy = 0, rx = 0, ry = 0; // body ellipse, relative units
    double stripe_freq = 0, stripe_angle = 0;
    double glyph_x = 0, glyph_y = 0;       // glyph top-left, relative units
};

inline constexpr std::size_t kGlyphCells = 4;

// Distinct cells x cells masks with a balanced number of lit cells, pairwise
// differing in at least `cells` cells.
inline std::vector<std::uint32_t> glyph_masks(std::size_t count, std::size_t cells, std::mt19937_64& rng) {
    const std::size_t bits = cells * cells;
    std::vector<std::uint32_t> masks;
    std::uniform_int_distribution<std::uint32_t> dist(0, (std::uint32_t{1} << bits) - 1);
    for (std::size_t attempt = 0; masks.size() < count; ++attempt) {
        if (attempt > 1000000) throw ConfigError("too many classes per group for distinct glyphs");
        const auto m = dist(rng);
        const auto on = static_cast<std::size_t>(std::popcount(m));
        if (3 * on < bits || 3 * on > 2 * bits) continue;
        bool ok = true;
        for (auto other : masks) ok = ok && static_cast<std::size_t>(std::popcount(m ^ other)) >= cells;
        if (ok) masks.push_back(m);
    }
    return masks;
}

inline GroupStyle make_group_style(std::mt19937_64& rng) {
    std::uniform_real_distribution<double> u(0.0, 1.0);
    GroupStyle g;
    for (std::size_t c = 0; c < 3; ++c) {
        g.background_a[c] = 0.15 + 0.5 * u(rng);
        g.background_b[c] = 0.15 + 0.5 * u(rng);
        g.body[c] = 0.2 + 0.6 * u(rng);
        g.stripe[c] = 0.2 + 0.6 * u(rng);
    }
    g.cx = 0.4 + 0.2 * u(rng);
    g.cy = 0.4 + 0.2 * u(rng);
    g.rx = 0.25 + 0.1 * u(rng);
    g.ry = 0.2 + 0.1 * u(rng);
    g.stripe_freq = 3.0 + 4.0 * u(rng);
    g.stripe_angle = 3.14159265358979 * u(rng);
    g.glyph_x = 0.25 + 0.3 * u(rng);
    g.glyph_y = 0.25 + 0.3 * u(rng);
    return g;
}

} // namespace detail

/// Writes one PPM per image plus `manifest.csv` into out_dir. Classes of the
/// same group share background, body and texture; they differ only by a small
/// glyph drawn at a shared nominal position. Labels are group * K + class.
/// The last round(query_fraction * images_per_class) images of every class go
/// to the query split.
inline DatasetManifest gen_synthetic(const SyntheticSpec& spec, const fs::path& out_dir) {
    spec.validate();
    std::error_code ec;
    fs::create_directories(out_dir, ec);
    if (ec || !fs::is_directory(out_dir)) throw IoError("cannot create directory '" + out_dir.string() + "'");

    std::mt19937_64 rng(spec.seed);
    std::vector<detail::GroupStyle> styles;
    {
        // colours are pulled toward a shared anchor style by group_contrast
        const auto anchor = detail::make_group_style(rng);
        auto mix = [&](double a, double b) { return a + spec.group_contrast * (b - a); };
        for (std::size_t g = 0; g < spec.groups; ++g) {
            auto st = detail::make_group_style(rng);
            for (std::size_t c = 0; c < 3; ++c) {
                st.background_a[c] = mix(anchor.background_a[c], st.background_a[c]);
                st.background_b[c] = mix(anchor.background_b[c], st.background_b[c]);
                st.body[c] = mix(anchor.body[c], st.body[c]);
                st.stripe[c] = mix(anchor.stripe[c], st.stripe[c]);
            }
            styles.push_back(st);
        }
    }
    const std::size_t cells = detail::kGlyphCells;
    const auto masks = detail::glyph_masks(spec.classes_per_group, cells, rng);
    const std::array<double, 3> glyph_on{0.95, 0.9, 0.1};
    const std::array<double, 3> glyph_off{0.05, 0.05, 0.3};

    const std::size_t S = spec.image_size;
    const std::size_t queries_per_class =
        static_cast<std::size_t>(std::lround(spec.query_fraction * static_cast<double>(spec.images_per_class)));
    std::uniform_real_distribution<double> u(-1.0, 1.0);

    DatasetManifest manifest;
    manifest.root = out_dir;
    for (std::size_t g = 0; g < spec.groups; ++g) {
        const auto& st = styles[g];
        for (std::size_t k = 0; k < spec.classes_per_group; ++k) {
            const auto label = static_cast<std::uint32_t>(g * spec.classes_per_group + k);
            for (std::size_t n = 0; n < spec.images_per_class; ++n) {
                const double gx = st.glyph_x * S + spec.position_jitter * u(rng);
                const double gy = st.glyph_y * S + spec.position_jitter * u(rng);
                const double gain = 1.0 + spec.brightness_jitter * u(rng);
                const double cell = static_cast<double>(spec.detail_size) / static_cast<double>(cells);
                RgbImage img{S, S, std::vector<std::uint8_t>(S * S * 3)};
                for (std::size_t y = 0; y < S; ++y) {
                    for (std::size_t x = 0; x < S; ++x) {
                        const double fx = (x + 0.5) / S, fy = (y + 0.5) / S;
                        std::array<double, 3> px{};
                        for (std::size_t c = 0; c < 3; ++c) {
                            px[c] = st.background_a[c] * (1 - fy) + st.background_b[c] * fy;
                        }
                        const double ex = (fx - st.cx) / st.rx, ey = (fy - st.cy) / st.ry;
                        if (ex * ex + ey * ey <= 1.0) {
                            const double phase = std::cos(st.stripe_angle) * fx + std::sin(st.stripe_angle) * fy;
                            const bool stripe = std::sin(2 * 3.14159265358979 * st.stripe_freq * phase) > 0.3;
                            px = stripe ? st.stripe : st.body;
                        }
                        const double lx = (x + 0.5 - gx) / cell, ly = (y + 0.5 - gy) / cell;
                        if (lx >= 0 && ly >= 0 && lx < static_cast<double>(cells) && ly < static_cast<double>(cells)) {
                            const auto bit = static_cast<std::size_t>(ly) * cells +
                                             static_cast<std::size_t>(lx);
                            px = ((masks[k] >> bit) & 1u) ? glyph_on : glyph_off;
                        }
                        for (std::size_t c = 0; c < 3; ++c) {
                            const double v = px[c] * gain + spec.pixel_noise * u(rng);
                            img.pixels[(y * S + x) * 3 + c] =
                                static_cast<std::uint8_t>(std::lround(std::clamp(v, 0.0, 1.0) * 255.0));
                        }
                    }
                }
                char name[64];
                std::snprintf(name, sizeof name, "g%zu_c%zu_%04zu.ppm", g, k, n);
                write_ppm(out_dir / name, img);
                const Split split = n >= spec.images_per_class - queries_per_class ? Split::query : Split::train;
                manifest.entries.push_back({name, label, split});
            }
        }
    }
    write_manifest(out_dir / "manifest.csv", manifest.entries);
    return manifest;
}

// ---------------------------------------------------------------------------
// Binary formats
// ---------------------------------------------------------------------------

namespace detail {

class ByteWriter {
public:
    template <class T>
    void put(T value) {
        static_assert(std::is_integral_v<T>);
        using U = std::make_unsigned_t<T>;
        auto u = static_cast<U>(value);
        for (std::size_t i = 0; i < sizeof(T); ++i) {
            bytes_.push_back(static_cast<char>(u & 0xFF));
            if constexpr (sizeof(T) > 1) u >>= 8;
        }
    }
    void put_f64(double v) { put(std::bit_cast<std::uint64_t>(v)); }
    void put_bytes(std::string_view s) { bytes_.append(s); }
    const std::string& bytes() const { return bytes_; }

private:
    std::string bytes_;
};

class ByteReader {
public:
    ByteReader(std::string_view bytes, std::string where) : bytes_(bytes), where_(std::move(where)) {}

    template <class T>
    T get(const char* field) {
        static_assert(std::is_integral_v<T>);
        need(sizeof(T), field);
        std::make_unsigned_t<T> u = 0;
        for (std::size_t i = 0; i < sizeof(T); ++i) {
            u |= static_cast<std::make_unsigned_t<T>>(static_cast<unsigned char>(bytes_[pos_ + i])) << (8 * i);
        }
        pos_ += sizeof(T);
        return static_cast<T>(u);
    }
    double get_f64(const char* field) { return std::bit_cast<double>(get<std::uint64_t>(field)); }
    std::string_view get_bytes(std::size_t n, const char* field) {
        need(n, field);
        auto s = bytes_.substr(pos_, n);
        pos_ += n;
        return s;
    }
    std::size_t remaining() const { return bytes_.size() - pos_; }
    FormatError error(const std::string& what) const {
        return FormatError("'" + where_ + "' at byte " + std::to_string(pos_) + ": " + what);
    }

private:
    void need(std::size_t n, const char* field) {
        if (remaining() < n) throw error(std::string("truncated while reading ") + field);
    }
    std::string_view bytes_;
    std::string where_;
    std::size_t pos_ = 0;
};

} // namespace detail

inline constexpr std::uint32_t kFormatVersion = 1;

/// "FPH1" | u32 version | u32 count | per tensor: u32 name length, name bytes,
/// u8 rank, rank x u64 dims, f64 data row-major.
inline std::string encode_checkpoint(const ParameterList& params) {
    require_unique_names(params);
    detail::ByteWriter w;
    w.put_bytes("FPH1");
    w.put<std::uint32_t>(kFormatVersion);
    w.put<std::uint32_t>(static_cast<std::uint32_t>(params.size()));
    for (const auto& p : params) {
        w.put<std::uint32_t>(static_cast<std::uint32_t>(p.name.size()));
        w.put_bytes(p.name);
        w.put<std::uint8_t>(static_cast<std::uint8_t>(p.tensor.rank()));
        for (auto d : p.tensor.shape()) w.put<std::uint64_t>(d);
        for (double v : p.tensor.data()) w.put_f64(v);
    }
    return w.bytes();
}

inline ParameterList decode_checkpoint(std::string_view bytes, const std::string& where) {
    detail::ByteReader r(bytes, where);
    if (r.get_bytes(4, "magic") != "FPH1") throw r.error("bad magic, expected FPH1");
    if (r.get<std::uint32_t>("version") != kFormatVersion) throw r.error("unsupported version");
    const auto count = r.get<std::uint32_t>("tensor count");
    ParameterList params;
    std::set<std::string> names;
    for (std::uint32_t t = 0; t < count; ++t) {
        const auto len = r.get<std::uint32_t>("name length");
        std::string name(r.get_bytes(len, "name"));
        if (!names.insert(name).second) throw r.error("duplicate tensor name '" + name + "'");
        const auto rank = r.get<std::uint8_t>("rank");
        Shape shape;
        std::size_t elements = 1;
        for (std::uint8_t d = 0; d < rank; ++d) {
            const auto dim = r.get<std::uint64_t>("dimension");
            if (dim == 0) throw r.error("zero dimension in '" + name + "'");
            if (dim > r.remaining() / 8 || elements > r.remaining() / 8 / dim) {
                throw r.error("dimensions of '" + name + "' exceed file size");
            }
            elements *= static_cast<std::size_t>(dim);
            shape.push_back(static_cast<std::size_t>(dim));
        }
        if (elements > r.remaining() / 8) throw r.error("data of '" + name + "' exceeds file size");
        std::vector<double> data(elements);
        for (auto& v : data) v = r.get_f64("tensor data");
        params.push_back({std::move(name), Tensor::from(std::move(shape), std::move(data), true)});
    }
    if (r.remaining() != 0) throw r.error("trailing bytes after last tensor");
    return params;
}

inline void save_checkpoint(const ParameterList& params, const fs::path& path) {
    write_file(path, encode_checkpoint(params));
}

inline ParameterList load_checkpoint(const fs::path& path) {
    auto bytes = read_file(path);
    return decode_checkpoint(std::string_view(bytes.data(), bytes.size()), path.string());
}

/// "FPHC" | u32 version | u32 q | u64 count | per item: u32 label,
/// ceil(q/64) x u64 words.
inline std::string encode_codes(const BinaryCodeSet& set) {
    detail::ByteWriter w;
    w.put_bytes("FPHC");
    w.put<std::uint32_t>(kFormatVersion);
    w.put<std::uint32_t>(static_cast<std::uint32_t>(set.q()));
    w.put<std::uint64_t>(set.count());
    for (std::size_t i = 0; i < set.count(); ++i) {
        w.put<std::uint32_t>(set.label(i));
        for (auto word : set.words(i)) w.put<std::uint64_t>(word);
    }
    return w.bytes();
}

inline BinaryCodeSet decode_codes(std::string_view bytes, const std::string& where) {
    detail::ByteReader r(bytes, where);
    if (r.get_bytes(4, "magic") != "FPHC") throw r.error("bad magic, expected FPHC");
    if (r.get<std::uint32_t>("version") != kFormatVersion) throw r.error("unsupported version");
    const auto q = r.get<std::uint32_t>("q");
    if (q == 0) throw r.error("code length q must be positive");
    const auto count = r.get<std::uint64_t>("count");
    const std::size_t words = words_for_bits(q);
    const std::size_t item_bytes = 4 + 8 * words;
    if (count > r.remaining() / item_bytes || count * item_bytes != r.remaining()) {
        throw r.error("item count " + std::to_string(count) + " does not match file size");
    }
    BinaryCodeSet set(q);
    std::vector<std::uint64_t> buf(words);
    for (std::uint64_t i = 0; i < count; ++i) {
        const auto label = r.get<std::uint32_t>("label");
        for (auto& word : buf) word = r.get<std::uint64_t>("code word");
        if (q % 64 != 0 && (buf.back() >> (q % 64)) != 0) throw r.error("nonzero padding bits");
        set.push_back(BinaryCode(q, buf), label);
    }
    return set;
}

inline void save_codes(const BinaryCodeSet& set, const fs::path& path) { write_file(path, encode_codes(set)); }

inline BinaryCodeSet load_codes(const fs::path& path) {
    auto bytes = read_file(path);
    return decode_codes(std::string_view(bytes.data(), bytes.size()), path.string());
}

// ---------------------------------------------------------------------------
// CSV outputs
// ---------------------------------------------------------------------------

/// Shortest decimal text that round-trips to the same double.
inline std::string format_real(double v) {
    char buf[32];
    auto [ptr, ec] = std::to_chars(buf, buf + sizeof buf, v);
    return std::string(buf, ptr);
}

inline std::string loss_trace_csv(const std::vector<EpochRecord>& trace) {
    std::string out = "epoch,iter,loss_vertical,loss_consensus,loss_combined,lr\n";
    for (const auto& r : trace) {
        out += std::to_string(r.epoch) + "," + std::to_string(r.iter) + "," + format_real(r.loss_vertical) + "," +
               format_real(r.loss_consensus) + "," + format_real(r.loss_combined) + "," + format_real(r.lr) + "\n";
    }
    return out;
}

/// Writes map.csv, pr_curve.csv, topn.csv and radius.csv into dir.
inline void write_metric_report(const MetricReport& report, const fs::path& dir) {
    std::error_code ec;
    fs::create_directories(dir, ec);
    if (ec || !fs::is_directory(dir)) throw IoError("cannot create directory '" + dir.string() + "'");
    write_file(dir / "map.csv", "map\n" + format_real(report.map) + "\n");
    std::string pr = "recall,precision\n";
    for (auto [r, p] : report.pr.points) pr += format_real(r) + "," + format_real(p) + "\n";
    write_file(dir / "pr_curve.csv", pr);
    std::string topn = "N,precision\n";
    for (auto [n, p] : report.topn) topn += std::to_string(n) + "," + format_real(p) + "\n";
    write_file(dir / "topn.csv", topn);
    write_file(dir / "radius.csv",
               "r,precision\n" + std::to_string(report.radius) + "," + format_real(report.precision_at_radius) + "\n");
}

} // namespace fph
