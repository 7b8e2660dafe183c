#ifndef ADVCL_DATA_HPP
#define ADVCL_DATA_HPP

#include <algorithm>
#include <array>
#include <cmath>
#include <cstdint>
#include <filesystem>
#include <fstream>
#include <numbers>
#include <optional>
#include <string>
#include <vector>

#include "errors.hpp"
#include "random.hpp"
#include "tensor.hpp"

namespace advcl {

enum class Split { train, test };

[[nodiscard]] inline const char* to_string(Split s) { return s == Split::train ? "train" : "test"; }

// Checks the ImageBatch contract: [B, C, H, W], B >= 1, C in {1, 3}, H == W,
// every value finite and in [0, 1].
inline void validate_image_batch(const Tensor& x, const std::string& what = "image batch")
{
    const auto& s = x.shape();
    if (s.size() != 4 || s[0] == 0 || (s[1] != 1 && s[1] != 3) || s[2] != s[3] || s[2] == 0) {
        throw ValidationError(what + ": expected [B, C in {1,3}, H, H], got " + shape_str(s));
    }
    for (Real v : x.values()) {
        if (!std::isfinite(v) || v < 0 || v > 1) {
            throw ValidationError(what + ": pixel value outside [0,1] or non-finite");
        }
    }
}

struct Batch {
    Tensor images;                     // [B, C, H, W]
    std::vector<int> labels;           // [B]
    std::vector<std::size_t> indices;  // positions in the source dataset

    [[nodiscard]] std::size_t size() const noexcept { return labels.size(); }
};

struct Dataset {
    std::string name;
    Tensor images;  // [N, C, H, W]
    std::vector<int> labels;
    std::size_t num_classes = 0;

    [[nodiscard]] std::size_t size() const noexcept { return labels.size(); }
    [[nodiscard]] std::size_t channels() const { return images.dim(1); }
    [[nodiscard]] std::size_t resolution() const { return images.dim(2); }

    [[nodiscard]] Batch batch(std::span<const std::size_t> idx) const
    {
        Batch b;
        b.images = images.gather_rows(idx);
        b.indices.assign(idx.begin(), idx.end());
        b.labels.reserve(idx.size());
        for (auto i : idx) {
            b.labels.push_back(labels[i]);
        }
        return b;
    }

    [[nodiscard]] Batch all() const
    {
        std::vector<std::size_t> idx(size());
        std::iota(idx.begin(), idx.end(), std::size_t{0});
        return batch(idx);
    }

    [[nodiscard]] Dataset subset(std::span<const std::size_t> idx) const
    {
        Dataset d;
        d.name = name;
        d.num_classes = num_classes;
        d.images = images.gather_rows(idx);
        for (auto i : idx) {
            d.labels.push_back(labels[i]);
        }
        return d;
    }
};

struct SyntheticConfig {
    std::size_t n = 256;
    std::size_t classes = 2;
    std::size_t image_size = 16;
    std::size_t channels = 1;
    std::uint64_t seed = 0;
    Real noise = 0.0;  // stddev of i.i.d. pixel noise added after rendering
};

struct DatasetSpec {
    std::string name = "synthetic";  // synthetic | cifar10 | cifar100 | stl10
    Split split = Split::train;
    std::string root;
    SyntheticConfig synthetic;
    std::vector<int> class_subset;  // keep only these classes, relabelled 0..k-1 in listed order
    std::size_t max_samples = 0;    // 0 = no cap; applied after class filtering, in file order
};

namespace detail {

// Each sample is a latent 2-D point drawn from its class's Gaussian blob,
// rendered as a smooth bump whose position follows the latent point.
[[nodiscard]] inline Dataset make_synthetic(const SyntheticConfig& cfg, Split split)
{
    if (cfg.classes < 2 || cfg.n == 0 || cfg.image_size < 4 || (cfg.channels != 1 && cfg.channels != 3)) {
        throw ConfigError("synthetic dataset: need n >= 1, classes >= 2, image_size >= 4, channels in {1,3}");
    }
    Dataset d;
    d.name = "synthetic";
    d.num_classes = cfg.classes;
    const std::size_t S = cfg.image_size, C = cfg.channels;
    d.images = Tensor(Shape{cfg.n, C, S, S});
    Rng rng = make_rng(cfg.seed, {split == Split::train ? 1u : 2u});
    std::normal_distribution<Real> gauss(0.0, 1.0);
    const Real size = static_cast<Real>(S);
    const Real radius = 0.22 * size, spread = 0.06 * size, width = 0.12 * size;
    const Real mid = 0.5 * (size - 1);
    for (std::size_t i = 0; i < cfg.n; ++i) {
        const auto k = static_cast<int>(i % cfg.classes);
        d.labels.push_back(k);
        const Real angle = 2 * std::numbers::pi * static_cast<Real>(k) / static_cast<Real>(cfg.classes);
        const Real ch = mid + radius * std::sin(angle) + spread * gauss(rng);
        const Real cw = mid + radius * std::cos(angle) + spread * gauss(rng);
        for (std::size_t c = 0; c < C; ++c) {
            // colour channels share the bump but differ in gain
            const Real gain = C == 1 ? 0.8 : 0.5 + 0.15 * static_cast<Real>((c + static_cast<std::size_t>(k)) % 3);
            for (std::size_t h = 0; h < S; ++h) {
                for (std::size_t w = 0; w < S; ++w) {
                    const Real dh = static_cast<Real>(h) - ch, dw = static_cast<Real>(w) - cw;
                    Real v = 0.1 + gain * std::exp(-(dh * dh + dw * dw) / (2 * width * width));
                    if (cfg.noise > 0) {
                        v += cfg.noise * gauss(rng);
                    }
                    d.images.at(i, c, h, w) = std::clamp(v, Real{0}, Real{1});
                }
            }
        }
    }
    return d;
}

[[nodiscard]] inline std::vector<unsigned char> read_file(const std::filesystem::path& p)
{
    std::ifstream in(p, std::ios::binary);
    if (!in) {
        throw IoError("cannot open dataset file " + p.string());
    }
    return {std::istreambuf_iterator<char>(in), std::istreambuf_iterator<char>()};
}

[[nodiscard]] inline std::filesystem::path find_dir(const std::string& root, std::initializer_list<const char*> subdirs,
                                                    const std::string& probe)
{
    namespace fs = std::filesystem;
    if (root.empty()) {
        throw IoError("dataset root not set");
    }
    if (fs::exists(fs::path(root) / probe)) {
        return root;
    }
    for (const char* s : subdirs) {
        if (fs::exists(fs::path(root) / s / probe)) {
            return fs::path(root) / s;
        }
    }
    throw IoError("dataset file " + probe + " not found under " + root);
}

// CIFAR binary records: [label bytes][3072 bytes R,G,B planes of 32x32].
inline void read_cifar_records(const std::filesystem::path& file, std::size_t label_bytes, std::size_t label_pos,
                               std::vector<Real>& pixels, std::vector<int>& labels)
{
    const auto raw = read_file(file);
    const std::size_t rec = label_bytes + 3072;
    if (raw.size() % rec != 0) {
        throw IoError("truncated CIFAR file " + file.string());
    }
    for (std::size_t off = 0; off < raw.size(); off += rec) {
        labels.push_back(raw[off + label_pos]);
        for (std::size_t i = 0; i < 3072; ++i) {
            pixels.push_back(static_cast<Real>(raw[off + label_bytes + i]) / 255.0);
        }
    }
}

[[nodiscard]] inline Dataset load_cifar(const DatasetSpec& spec, bool hundred)
{
    Dataset d;
    d.name = hundred ? "cifar100" : "cifar10";
    d.num_classes = hundred ? 100 : 10;
    std::vector<Real> pixels;
    if (hundred) {
        const char* file = spec.split == Split::train ? "train.bin" : "test.bin";
        const auto dir = find_dir(spec.root, {"cifar-100-binary"}, file);
        read_cifar_records(dir / file, 2, 1, pixels, d.labels);
    } else if (spec.split == Split::train) {
        const auto dir = find_dir(spec.root, {"cifar-10-batches-bin"}, "data_batch_1.bin");
        for (int i = 1; i <= 5; ++i) {
            read_cifar_records(dir / ("data_batch_" + std::to_string(i) + ".bin"), 1, 0, pixels, d.labels);
        }
    } else {
        const auto dir = find_dir(spec.root, {"cifar-10-batches-bin"}, "test_batch.bin");
        read_cifar_records(dir / "test_batch.bin", 1, 0, pixels, d.labels);
    }
    d.images = Tensor(Shape{d.labels.size(), 3, 32, 32}, std::move(pixels));
    return d;
}

// STL-10 binaries store each image channel-major with column-major pixels and
// labels 1..10.
[[nodiscard]] inline Dataset load_stl10(const DatasetSpec& spec)
{
    const std::string prefix = spec.split == Split::train ? "train" : "test";
    const auto dir = find_dir(spec.root, {"stl10_binary"}, prefix + "_X.bin");
    const auto xs = read_file(dir / (prefix + "_X.bin"));
    const auto ys = read_file(dir / (prefix + "_y.bin"));
    constexpr std::size_t S = 96, img = 3 * S * S;
    if (xs.size() % img != 0 || xs.size() / img != ys.size()) {
        throw IoError("STL-10 image/label count mismatch in " + dir.string());
    }
    Dataset d;
    d.name = "stl10";
    d.num_classes = 10;
    d.images = Tensor(Shape{ys.size(), 3, S, S});
    for (std::size_t n = 0; n < ys.size(); ++n) {
        d.labels.push_back(static_cast<int>(ys[n]) - 1);
        for (std::size_t c = 0; c < 3; ++c) {
            for (std::size_t col = 0; col < S; ++col) {
                for (std::size_t row = 0; row < S; ++row) {
                    d.images.at(n, c, row, col) = static_cast<Real>(xs[n * img + c * S * S + col * S + row]) / 255.0;
                }
            }
        }
    }
    return d;
}

} // namespace detail

// Loads a whole split into memory. Iteration order is the file order; use
// epoch_batches() for seeded shuffling.
[[nodiscard]] inline Dataset load_dataset(const DatasetSpec& spec)
{
    Dataset d;
    if (spec.name == "synthetic") {
        d = detail::make_synthetic(spec.synthetic, spec.split);
    } else if (spec.name == "cifar10") {
        d = detail::load_cifar(spec, false);
    } else if (spec.name == "cifar100") {
        d = detail::load_cifar(spec, true);
    } else if (spec.name == "stl10") {
        d = detail::load_stl10(spec);
    } else {
        throw ConfigError("unknown dataset '" + spec.name + "' (expected synthetic, cifar10, cifar100 or stl10)");
    }
    if (!spec.class_subset.empty() || spec.max_samples > 0) {
        std::vector<std::size_t> keep;
        std::vector<int> relabel(d.num_classes, -1);
        for (std::size_t k = 0; k < spec.class_subset.size(); ++k) {
            const int c = spec.class_subset[k];
            if (c < 0 || static_cast<std::size_t>(c) >= d.num_classes) {
                throw ConfigError("class_subset entry " + std::to_string(c) + " out of range");
            }
            relabel[static_cast<std::size_t>(c)] = static_cast<int>(k);
        }
        for (std::size_t i = 0; i < d.size(); ++i) {
            if (spec.class_subset.empty() || relabel[static_cast<std::size_t>(d.labels[i])] >= 0) {
                keep.push_back(i);
            }
            if (spec.max_samples > 0 && keep.size() == spec.max_samples) {
                break;
            }
        }
        Dataset sub = d.subset(keep);
        if (!spec.class_subset.empty()) {
            for (int& l : sub.labels) {
                l = relabel[static_cast<std::size_t>(l)];
            }
            sub.num_classes = spec.class_subset.size();
        }
        d = std::move(sub);
    }
    for (int l : d.labels) {
        if (l < 0 || static_cast<std::size_t>(l) >= d.num_classes) {
            throw IoError("label " + std::to_string(l) + " outside declared class range");
        }
    }
    return d;
}

// Index lists of one epoch. With shuffle, the order is a pure function of
// (seed, epoch); the last partial batch is kept.
[[nodiscard]] inline std::vector<std::vector<std::size_t>> epoch_batches(std::size_t n, std::size_t batch_size,
                                                                         bool shuffle, std::uint64_t seed,
                                                                         std::uint64_t epoch)
{
    if (batch_size == 0) {
        throw ConfigError("batch_size must be positive");
    }
    std::vector<std::size_t> order(n);
    std::iota(order.begin(), order.end(), std::size_t{0});
    if (shuffle) {
        Rng rng = make_rng(seed, {0x5348u, epoch});
        std::shuffle(order.begin(), order.end(), rng);
    }
    std::vector<std::vector<std::size_t>> out;
    for (std::size_t b = 0; b < n; b += batch_size) {
        out.emplace_back(order.begin() + static_cast<std::ptrdiff_t>(b),
                         order.begin() + static_cast<std::ptrdiff_t>(std::min(n, b + batch_size)));
    }
    return out;
}

// ------------------------------------------------------------------ augmentation

struct AugmentConfig {
    Real crop_scale_min = 0.2;
    Real crop_scale_max = 1.0;
    Real hflip_prob = 0.5;
    std::array<Real, 4> jitter_strengths{0.4, 0.4, 0.4, 0.1};  // brightness, contrast, saturation, hue
    Real jitter_prob = 0.8;
    Real grayscale_prob = 0.2;
    std::uint64_t seed = 0;

    void validate() const
    {
        auto prob = [](Real p) { return p >= 0 && p <= 1; };
        if (!prob(hflip_prob) || !prob(jitter_prob) || !prob(grayscale_prob)) {
            throw ConfigError("augment probabilities must lie in [0,1]");
        }
        if (!(crop_scale_min > 0 && crop_scale_min <= crop_scale_max && crop_scale_max <= 1)) {
            throw ConfigError("augment crop scale must satisfy 0 < min <= max <= 1");
        }
        if (jitter_strengths[3] < 0 || jitter_strengths[3] > 0.5) {
            throw ConfigError("hue jitter strength must lie in [0, 0.5]");
        }
        for (std::size_t i = 0; i < 3; ++i) {
            if (jitter_strengths[i] < 0) {
                throw ConfigError("jitter strengths must be non-negative");
            }
        }
    }

    [[nodiscard]] static AugmentConfig identity()
    {
        AugmentConfig c;
        c.crop_scale_min = c.crop_scale_max = 1.0;
        c.hflip_prob = c.jitter_prob = c.grayscale_prob = 0.0;
        return c;
    }
};

namespace detail {

// One image: [C, S, S] stored contiguously.
struct ImageView {
    Real* data;
    std::size_t C, S;
    Real& at(std::size_t c, std::size_t h, std::size_t w) { return data[(c * S + h) * S + w]; }
};

// Bilinear resample of crop (top, left, h, w) back to S x S, half-pixel centres.
inline void resized_crop(ImageView img, std::size_t top, std::size_t left, std::size_t ch, std::size_t cw)
{
    const std::size_t S = img.S;
    std::vector<Real> src(img.data, img.data + img.C * S * S);
    const Real sy = static_cast<Real>(ch) / static_cast<Real>(S);
    const Real sx = static_cast<Real>(cw) / static_cast<Real>(S);
    for (std::size_t c = 0; c < img.C; ++c) {
        const Real* plane = src.data() + c * S * S;
        for (std::size_t h = 0; h < S; ++h) {
            Real fy = std::clamp((static_cast<Real>(h) + 0.5) * sy - 0.5, Real{0}, static_cast<Real>(ch - 1));
            const auto y0 = static_cast<std::size_t>(fy);
            const std::size_t y1 = std::min(y0 + 1, ch - 1);
            const Real wy = fy - static_cast<Real>(y0);
            for (std::size_t w = 0; w < S; ++w) {
                Real fx = std::clamp((static_cast<Real>(w) + 0.5) * sx - 0.5, Real{0}, static_cast<Real>(cw - 1));
                const auto x0 = static_cast<std::size_t>(fx);
                const std::size_t x1 = std::min(x0 + 1, cw - 1);
                const Real wx = fx - static_cast<Real>(x0);
                auto px = [&](std::size_t y, std::size_t x) { return plane[(top + y) * S + left + x]; };
                img.at(c, h, w) = (1 - wy) * ((1 - wx) * px(y0, x0) + wx * px(y0, x1)) +
                                  wy * ((1 - wx) * px(y1, x0) + wx * px(y1, x1));
            }
        }
    }
}

inline void random_resized_crop(ImageView img, Real smin, Real smax, Rng& rng)
{
    const std::size_t S = img.S;
    const Real area = static_cast<Real>(S * S);
    std::uniform_real_distribution<Real> scale_dist(smin, smax);
    std::uniform_real_distribution<Real> logr(std::log(3.0 / 4.0), std::log(4.0 / 3.0));
    for (int attempt = 0; attempt < 10; ++attempt) {
        const Real target = area * scale_dist(rng);
        const Real aspect = std::exp(logr(rng));
        const auto w = static_cast<long>(std::lround(std::sqrt(target * aspect)));
        const auto h = static_cast<long>(std::lround(std::sqrt(target / aspect)));
        if (w > 0 && h > 0 && w <= static_cast<long>(S) && h <= static_cast<long>(S)) {
            const auto hh = static_cast<std::size_t>(h), ww = static_cast<std::size_t>(w);
            const std::size_t top = std::uniform_int_distribution<std::size_t>(0, S - hh)(rng);
            const std::size_t left = std::uniform_int_distribution<std::size_t>(0, S - ww)(rng);
            if (hh == S && ww == S) {
                return;
            }
            resized_crop(img, top, left, hh, ww);
            return;
        }
    }
    // square images always fall back to the full frame
}

inline void hflip(ImageView img)
{
    for (std::size_t c = 0; c < img.C; ++c) {
        for (std::size_t h = 0; h < img.S; ++h) {
            Real* row = &img.at(c, h, 0);
            std::reverse(row, row + img.S);
        }
    }
}

[[nodiscard]] inline Real luma(ImageView img, std::size_t h, std::size_t w)
{
    if (img.C == 1) {
        return img.at(0, h, w);
    }
    return 0.299 * img.at(0, h, w) + 0.587 * img.at(1, h, w) + 0.114 * img.at(2, h, w);
}

inline void to_grayscale(ImageView img)
{
    if (img.C == 1) {
        return;
    }
    for (std::size_t h = 0; h < img.S; ++h) {
        for (std::size_t w = 0; w < img.S; ++w) {
            const Real g = luma(img, h, w);
            for (std::size_t c = 0; c < img.C; ++c) {
                img.at(c, h, w) = g;
            }
        }
    }
}

inline void clamp01(ImageView img)
{
    for (std::size_t i = 0; i < img.C * img.S * img.S; ++i) {
        img.data[i] = std::clamp(img.data[i], Real{0}, Real{1});
    }
}

inline void adjust_brightness(ImageView img, Real f)
{
    for (std::size_t i = 0; i < img.C * img.S * img.S; ++i) {
        img.data[i] *= f;
    }
    clamp01(img);
}

inline void adjust_contrast(ImageView img, Real f)
{
    Real mean = 0;
    for (std::size_t h = 0; h < img.S; ++h) {
        for (std::size_t w = 0; w < img.S; ++w) {
            mean += luma(img, h, w);
        }
    }
    mean /= static_cast<Real>(img.S * img.S);
    for (std::size_t i = 0; i < img.C * img.S * img.S; ++i) {
        img.data[i] = f * img.data[i] + (1 - f) * mean;
    }
    clamp01(img);
}

inline void adjust_saturation(ImageView img, Real f)
{
    if (img.C == 1) {
        return;
    }
    for (std::size_t h = 0; h < img.S; ++h) {
        for (std::size_t w = 0; w < img.S; ++w) {
            const Real g = luma(img, h, w);
            for (std::size_t c = 0; c < 3; ++c) {
                img.at(c, h, w) = f * img.at(c, h, w) + (1 - f) * g;
            }
        }
    }
    clamp01(img);
}

inline void adjust_hue(ImageView img, Real shift)
{
    if (img.C == 1) {
        return;
    }
    for (std::size_t h = 0; h < img.S; ++h) {
        for (std::size_t w = 0; w < img.S; ++w) {
            const Real r = img.at(0, h, w), g = img.at(1, h, w), b = img.at(2, h, w);
            const Real mx = std::max({r, g, b}), mn = std::min({r, g, b});
            const Real v = mx, delta = mx - mn;
            const Real s = mx > 0 ? delta / mx : 0;
            Real hue = 0;
            if (delta > 0) {
                if (mx == r) {
                    hue = (g - b) / delta;
                } else if (mx == g) {
                    hue = 2 + (b - r) / delta;
                } else {
                    hue = 4 + (r - g) / delta;
                }
                hue /= 6;
            }
            hue = hue + shift;
            hue -= std::floor(hue);
            const Real h6 = hue * 6;
            const auto sector = static_cast<int>(std::floor(h6)) % 6;
            const Real frac = h6 - std::floor(h6);
            const Real p = v * (1 - s), q = v * (1 - s * frac), t = v * (1 - s * (1 - frac));
            Real rr = v, gg = t, bb = p;
            switch (sector) {
            case 0: rr = v; gg = t; bb = p; break;
            case 1: rr = q; gg = v; bb = p; break;
            case 2: rr = p; gg = v; bb = t; break;
            case 3: rr = p; gg = q; bb = v; break;
            case 4: rr = t; gg = p; bb = v; break;
            default: rr = v; gg = p; bb = q; break;
            }
            img.at(0, h, w) = rr;
            img.at(1, h, w) = gg;
            img.at(2, h, w) = bb;
        }
    }
    clamp01(img);
}

inline void color_jitter(ImageView img, const std::array<Real, 4>& s, Rng& rng)
{
    std::array<int, 4> order{0, 1, 2, 3};
    std::shuffle(order.begin(), order.end(), rng);
    auto factor = [&](Real strength) {
        return std::uniform_real_distribution<Real>(std::max(Real{0}, 1 - strength), 1 + strength)(rng);
    };
    for (int op : order) {
        switch (op) {
        case 0:
            if (s[0] > 0) adjust_brightness(img, factor(s[0]));
            break;
        case 1:
            if (s[1] > 0) adjust_contrast(img, factor(s[1]));
            break;
        case 2:
            if (s[2] > 0) adjust_saturation(img, factor(s[2]));
            break;
        default:
            if (s[3] > 0) adjust_hue(img, std::uniform_real_distribution<Real>(-s[3], s[3])(rng));
            break;
        }
    }
}

} // namespace detail

// Per-sample random crop, flip, colour jitter and grayscale, consuming `rng`
// sequentially. Pure in (x, cfg, rng state).
[[nodiscard]] inline Tensor augment(const Tensor& x, const AugmentConfig& cfg, Rng& rng)
{
    validate_image_batch(x, "augment input");
    cfg.validate();
    Tensor out = x;
    const std::size_t B = x.dim(0), C = x.dim(1), S = x.dim(2);
    for (std::size_t b = 0; b < B; ++b) {
        detail::ImageView img{out.data() + b * C * S * S, C, S};
        detail::random_resized_crop(img, cfg.crop_scale_min, cfg.crop_scale_max, rng);
        if (uniform01(rng) < cfg.hflip_prob) {
            detail::hflip(img);
        }
        if (uniform01(rng) < cfg.jitter_prob) {
            detail::color_jitter(img, cfg.jitter_strengths, rng);
        }
        if (uniform01(rng) < cfg.grayscale_prob) {
            detail::to_grayscale(img);
        }
        detail::clamp01(img);
    }
    return out;
}

// Bilinear resize of a whole batch to `size` x `size`; used when a
// downstream dataset resolution differs from the encoder's input resolution.
[[nodiscard]] inline Tensor resize_batch(const Tensor& x, std::size_t size)
{
    const std::size_t B = x.dim(0), C = x.dim(1), H = x.dim(2), W = x.dim(3);
    if (H == size && W == size) {
        return x;
    }
    Tensor out(Shape{B, C, size, size});
    const Real sy = static_cast<Real>(H) / static_cast<Real>(size), sx = static_cast<Real>(W) / static_cast<Real>(size);
    for (std::size_t bc = 0; bc < B * C; ++bc) {
        const Real* plane = x.data() + bc * H * W;
        for (std::size_t h = 0; h < size; ++h) {
            const Real fy = std::clamp((static_cast<Real>(h) + 0.5) * sy - 0.5, Real{0}, static_cast<Real>(H - 1));
            const auto y0 = static_cast<std::size_t>(fy);
            const std::size_t y1 = std::min(y0 + 1, H - 1);
            const Real wy = fy - static_cast<Real>(y0);
            for (std::size_t w = 0; w < size; ++w) {
                const Real fx = std::clamp((static_cast<Real>(w) + 0.5) * sx - 0.5, Real{0}, static_cast<Real>(W - 1));
                const auto x0 = static_cast<std::size_t>(fx);
                const std::size_t x1 = std::min(x0 + 1, W - 1);
                const Real wx = fx - static_cast<Real>(x0);
                out[(bc * size + h) * size + w] =
                    (1 - wy) * ((1 - wx) * plane[y0 * W + x0] + wx * plane[y0 * W + x1]) +
                    wy * ((1 - wx) * plane[y1 * W + x0] + wx * plane[y1 * W + x1]);
            }
        }
    }
    return out;
}

} // namespace advcl

#endif // ADVCL_DATA_HPP
