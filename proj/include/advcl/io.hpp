#ifndef ADVCL_IO_HPP
#define ADVCL_IO_HPP

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <filesystem>
#include <fstream>
#include <sstream>
#include <string>
#include <vector>

#include "errors.hpp"
#include "tensor.hpp"

namespace advcl {

namespace detail {

inline std::ofstream open_out(const std::filesystem::path& path, std::ios::openmode mode = std::ios::out)
{
    if (path.has_parent_path()) {
        std::filesystem::create_directories(path.parent_path());
    }
    std::ofstream out(path, mode);
    if (!out) {
        throw IoError("cannot write " + path.string());
    }
    return out;
}

} // namespace detail

inline void write_text(const std::filesystem::path& path, const std::string& text)
{
    auto out = detail::open_out(path);
    out << text;
}

[[nodiscard]] inline std::string read_text(const std::filesystem::path& path)
{
    std::ifstream in(path);
    if (!in) {
        throw IoError("cannot read " + path.string());
    }
    std::ostringstream ss;
    ss << in.rdbuf();
    return ss.str();
}

// NumPy .npy (format 1.0, little-endian float64, C order).
inline void write_npy(const std::filesystem::path& path, const Tensor& t)
{
    std::string shape = "(";
    for (auto d : t.shape()) {
        shape += std::to_string(d) + ",";
    }
    if (t.rank() > 1) {
        shape.pop_back();
    }
    shape += ")";
    std::string header = "{'descr': '<f8', 'fortran_order': False, 'shape': " + shape + ", }";
    const std::size_t total = 10 + header.size() + 1;
    header.append((64 - total % 64) % 64, ' ');
    header += '\n';
    auto out = detail::open_out(path, std::ios::binary);
    out.write("\x93NUMPY\x01\x00", 8);
    const auto len = static_cast<std::uint16_t>(header.size());
    out.write(reinterpret_cast<const char*>(&len), 2);
    out.write(header.data(), static_cast<std::streamsize>(header.size()));
    out.write(reinterpret_cast<const char*>(t.data()), static_cast<std::streamsize>(t.numel() * sizeof(Real)));
}

// Writes one [C, H, W] image (C = 1 -> PGM, C = 3 -> PPM). Values are mapped
// linearly from [lo, hi] to 0..255; pass lo == hi to auto-scale.
inline void write_image(const std::filesystem::path& path, const Tensor& img, Real lo = 0, Real hi = 1)
{
    if (img.rank() != 3 || (img.dim(0) != 1 && img.dim(0) != 3)) {
        throw ValidationError("write_image expects a [1|3, H, W] array, got " + shape_str(img.shape()));
    }
    const std::size_t C = img.dim(0), H = img.dim(1), W = img.dim(2);
    if (lo == hi) {
        lo = *std::min_element(img.values().begin(), img.values().end());
        hi = *std::max_element(img.values().begin(), img.values().end());
        if (hi - lo < 1e-12) {
            hi = lo + 1;
        }
    }
    auto out = detail::open_out(path, std::ios::binary);
    out << (C == 1 ? "P5" : "P6") << '\n' << W << ' ' << H << "\n255\n";
    for (std::size_t h = 0; h < H; ++h) {
        for (std::size_t w = 0; w < W; ++w) {
            for (std::size_t c = 0; c < C; ++c) {
                const Real v = (img[(c * H + h) * W + w] - lo) / (hi - lo);
                out.put(static_cast<char>(static_cast<unsigned char>(std::lround(std::clamp(v, 0.0, 1.0) * 255))));
            }
        }
    }
}

struct Series {
    std::string label;
    std::vector<Real> x;
    std::vector<Real> y;
};

// Minimal line chart, enough to eyeball sweep curves.
inline void write_svg_plot(const std::filesystem::path& path, const std::string& title, const std::string& xlabel,
                           const std::string& ylabel, const std::vector<Series>& series)
{
    const Real W = 640, H = 420, L = 70, R = 150, T = 40, B = 60;
    Real x0 = 1e300, x1 = -1e300, y0 = 0, y1 = 1;
    for (const auto& s : series) {
        for (Real v : s.x) {
            x0 = std::min(x0, v);
            x1 = std::max(x1, v);
        }
        for (Real v : s.y) {
            if (std::isfinite(v)) {
                y0 = std::min(y0, v);
                y1 = std::max(y1, v);
            }
        }
    }
    if (!(x1 > x0)) {
        x0 -= 0.5;
        x1 += 0.5;
    }
    auto px = [&](Real v) { return L + (v - x0) / (x1 - x0) * (W - L - R); };
    auto py = [&](Real v) { return H - B - (v - y0) / (y1 - y0) * (H - T - B); };
    static const char* colors[] = {"#1f77b4", "#d62728", "#2ca02c", "#ff7f0e", "#9467bd", "#8c564b", "#e377c2"};
    std::ostringstream o;
    o << "<svg xmlns=\"http://www.w3.org/2000/svg\" width=\"" << W << "\" height=\"" << H << "\" font-family=\"sans-serif\" font-size=\"12\">\n";
    o << "<rect width=\"100%\" height=\"100%\" fill=\"white\"/>\n";
    o << "<text x=\"" << W / 2 << "\" y=\"24\" text-anchor=\"middle\" font-size=\"15\">" << title << "</text>\n";
    o << "<line x1=\"" << L << "\" y1=\"" << H - B << "\" x2=\"" << W - R << "\" y2=\"" << H - B << "\" stroke=\"black\"/>\n";
    o << "<line x1=\"" << L << "\" y1=\"" << T << "\" x2=\"" << L << "\" y2=\"" << H - B << "\" stroke=\"black\"/>\n";
    for (int i = 0; i <= 4; ++i) {
        const Real yv = y0 + (y1 - y0) * i / 4.0, xv = x0 + (x1 - x0) * i / 4.0;
        o << "<text x=\"" << L - 8 << "\" y=\"" << py(yv) + 4 << "\" text-anchor=\"end\">" << std::round(yv * 1000) / 1000 << "</text>\n";
        o << "<text x=\"" << px(xv) << "\" y=\"" << H - B + 18 << "\" text-anchor=\"middle\">" << std::round(xv * 10000) / 10000 << "</text>\n";
    }
    o << "<text x=\"" << (L + W - R) / 2 << "\" y=\"" << H - 15 << "\" text-anchor=\"middle\">" << xlabel << "</text>\n";
    o << "<text x=\"18\" y=\"" << (T + H - B) / 2 << "\" transform=\"rotate(-90 18 " << (T + H - B) / 2 << ")\" text-anchor=\"middle\">" << ylabel << "</text>\n";
    for (std::size_t s = 0; s < series.size(); ++s) {
        const char* c = colors[s % 7];
        o << "<polyline fill=\"none\" stroke=\"" << c << "\" stroke-width=\"2\" points=\"";
        for (std::size_t i = 0; i < series[s].x.size(); ++i) {
            if (std::isfinite(series[s].y[i])) {
                o << px(series[s].x[i]) << "," << py(series[s].y[i]) << " ";
            }
        }
        o << "\"/>\n";
        for (std::size_t i = 0; i < series[s].x.size(); ++i) {
            if (std::isfinite(series[s].y[i])) {
                o << "<circle cx=\"" << px(series[s].x[i]) << "\" cy=\"" << py(series[s].y[i]) << "\" r=\"3\" fill=\"" << c << "\"/>\n";
            }
        }
        o << "<text x=\"" << W - R + 10 << "\" y=\"" << T + 16 * (s + 1) << "\" fill=\"" << c << "\">" << series[s].label << "</text>\n";
    }
    o << "</svg>\n";
    write_text(path, o.str());
}

} // namespace advcl

#endif // ADVCL_IO_HPP
