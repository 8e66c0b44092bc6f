#include "iocnn/svg.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <sstream>
#include <stdexcept>

namespace iocnn {
namespace svg {

namespace {

constexpr double kWidth = 640, kHeight = 480;
constexpr double kMarginL = 64, kMarginR = 16, kMarginT = 24, kMarginB = 48;

const char* kPalette[] = {"#4878cf", "#ee854a", "#6acc65", "#d65f5f", "#956cb4",
                          "#8c613c", "#dc7ec0", "#797979", "#d5bb67", "#82c6e2"};
constexpr std::size_t kPaletteSize = sizeof(kPalette) / sizeof(kPalette[0]);

std::string num(double v) {
    if (v == 0.0) return "0";
    std::ostringstream os;
    os.imbue(std::locale::classic());
    os.precision(6);
    os << v;
    return os.str();
}

void write_file(const std::string& path, const std::string& content) {
    std::ofstream out(path, std::ios::binary);
    if (!out) throw std::runtime_error("cannot open for writing: " + path);
    out << content;
}

std::string header() {
    std::ostringstream os;
    os << "<svg xmlns=\"http://www.w3.org/2000/svg\" width=\"" << num(kWidth) << "\" height=\""
       << num(kHeight) << "\" viewBox=\"0 0 " << num(kWidth) << " " << num(kHeight) << "\">\n"
       << "<rect width=\"100%\" height=\"100%\" fill=\"white\"/>\n";
    return os.str();
}

struct Frame {
    double x_lo, x_hi, y_lo, y_hi;

    double px(double x) const {
        return kMarginL + (x - x_lo) / (x_hi - x_lo) * (kWidth - kMarginL - kMarginR);
    }
    double py(double y) const {
        return kHeight - kMarginB - (y - y_lo) / (y_hi - y_lo) * (kHeight - kMarginT - kMarginB);
    }
};

void draw_axes(std::ostringstream& os, const Frame& f, const std::string& x_label,
               const std::string& y_label) {
    os << "<g stroke=\"#333\" stroke-width=\"1\" fill=\"none\">\n"
       << "<line x1=\"" << num(f.px(f.x_lo)) << "\" y1=\"" << num(f.py(f.y_lo)) << "\" x2=\""
       << num(f.px(f.x_hi)) << "\" y2=\"" << num(f.py(f.y_lo)) << "\"/>\n"
       << "<line x1=\"" << num(f.px(f.x_lo)) << "\" y1=\"" << num(f.py(f.y_lo)) << "\" x2=\""
       << num(f.px(f.x_lo)) << "\" y2=\"" << num(f.py(f.y_hi)) << "\"/>\n</g>\n";
    os << "<g font-family=\"sans-serif\" font-size=\"12\" fill=\"#333\">\n";
    for (int t = 0; t <= 4; ++t) {
        double xv = f.x_lo + (f.x_hi - f.x_lo) * t / 4.0;
        double yv = f.y_lo + (f.y_hi - f.y_lo) * t / 4.0;
        os << "<text x=\"" << num(f.px(xv)) << "\" y=\"" << num(f.py(f.y_lo) + 16)
           << "\" text-anchor=\"middle\">" << num(xv) << "</text>\n";
        os << "<text x=\"" << num(f.px(f.x_lo) - 6) << "\" y=\"" << num(f.py(yv) + 4)
           << "\" text-anchor=\"end\">" << num(yv) << "</text>\n";
    }
    os << "<text x=\"" << num((kMarginL + kWidth - kMarginR) / 2) << "\" y=\""
       << num(kHeight - 10) << "\" text-anchor=\"middle\">" << x_label << "</text>\n";
    os << "<text x=\"14\" y=\"" << num((kMarginT + kHeight - kMarginB) / 2)
       << "\" text-anchor=\"middle\" transform=\"rotate(-90 14 "
       << num((kMarginT + kHeight - kMarginB) / 2) << ")\">" << y_label << "</text>\n";
    os << "</g>\n";
}

void draw_legend(std::ostringstream& os, const std::vector<std::string>& labels) {
    os << "<g font-family=\"sans-serif\" font-size=\"12\">\n";
    double y = kMarginT + 6;
    for (std::size_t i = 0; i < labels.size(); ++i) {
        const char* color = kPalette[i % kPaletteSize];
        os << "<line x1=\"" << num(kWidth - 170) << "\" y1=\"" << num(y) << "\" x2=\""
           << num(kWidth - 150) << "\" y2=\"" << num(y) << "\" stroke=\"" << color
           << "\" stroke-width=\"2\"/>\n";
        os << "<text x=\"" << num(kWidth - 144) << "\" y=\"" << num(y + 4) << "\" fill=\"#333\">"
           << labels[i] << "</text>\n";
        y += 16;
    }
    os << "</g>\n";
}

}  // namespace

void curves(const std::vector<Series>& series, const std::string& y_label,
            const std::string& path) {
    if (series.empty()) throw std::invalid_argument("svg curves: no series");
    const std::size_t n = series[0].values.size();
    for (const Series& s : series)
        if (s.values.size() != n)
            throw std::invalid_argument("svg curves: inconsistent series lengths");
    if (n == 0) throw std::invalid_argument("svg curves: empty series");

    double y_lo = series[0].values[0], y_hi = y_lo;
    for (const Series& s : series)
        for (double v : s.values) {
            y_lo = std::min(y_lo, v);
            y_hi = std::max(y_hi, v);
        }
    if (y_hi == y_lo) y_hi = y_lo + 1.0;
    Frame f{1.0, static_cast<double>(std::max<std::size_t>(n, 2)), y_lo, y_hi};

    std::ostringstream os;
    os << header();
    draw_axes(os, f, "epoch", y_label);
    for (std::size_t si = 0; si < series.size(); ++si) {
        os << "<polyline fill=\"none\" stroke=\"" << kPalette[si % kPaletteSize]
           << "\" stroke-width=\"1.5\" points=\"";
        for (std::size_t i = 0; i < n; ++i) {
            if (i) os << ' ';
            os << num(f.px(static_cast<double>(i + 1))) << ',' << num(f.py(series[si].values[i]));
        }
        os << "\"/>\n";
    }
    std::vector<std::string> labels;
    for (const Series& s : series) labels.push_back(s.label);
    draw_legend(os, labels);
    os << "</svg>\n";
    write_file(path, os.str());
}

void label_grid(const std::vector<int>& labels, std::size_t nx, std::size_t ny, double x_lo,
                double x_hi, double y_lo, double y_hi, const std::string& path) {
    if (labels.size() != nx * ny)
        throw std::invalid_argument("svg label_grid: label count does not match grid");
    Frame f{x_lo, x_hi, y_lo, y_hi};
    const double cw = (f.px(x_hi) - f.px(x_lo)) / static_cast<double>(nx);
    const double ch = (f.py(y_lo) - f.py(y_hi)) / static_cast<double>(ny);

    std::ostringstream os;
    os << header();
    for (std::size_t iy = 0; iy < ny; ++iy)
        for (std::size_t ix = 0; ix < nx; ++ix) {
            int lab = labels[iy * nx + ix];
            os << "<rect x=\"" << num(f.px(x_lo) + cw * static_cast<double>(ix)) << "\" y=\""
               << num(f.py(y_hi) + ch * static_cast<double>(ny - 1 - iy)) << "\" width=\""
               << num(cw) << "\" height=\"" << num(ch) << "\" fill=\""
               << kPalette[static_cast<std::size_t>(lab) % kPaletteSize] << "\"/>\n";
        }
    draw_axes(os, f, "x0", "x1");
    os << "</svg>\n";
    write_file(path, os.str());
}

void boundary_map(const BoundaryGrid& grid, const std::string& path) {
    label_grid(grid.labels, grid.grid.nx, grid.grid.ny, grid.grid.x_lo, grid.grid.x_hi,
               grid.grid.y_lo, grid.grid.y_hi, path);
}

void reliability_diagram(const ReliabilityBins& bins, const std::string& path) {
    Frame f{0.0, 1.0, 0.0, 1.0};
    std::ostringstream os;
    os << header();
    draw_axes(os, f, "confidence", "accuracy");
    const double bw = (f.px(1.0) - f.px(0.0)) / static_cast<double>(bins.n_bins);
    for (std::size_t b = 0; b < bins.bins.size(); ++b) {
        const ReliabilityBin& bin = bins.bins[b];
        const double x = f.px(bin.confidence_lo);
        // confidence bar behind, accuracy bar in front
        os << "<rect x=\"" << num(x + 1) << "\" y=\"" << num(f.py(bin.mean_confidence))
           << "\" width=\"" << num(bw - 2) << "\" height=\""
           << num(f.py(0.0) - f.py(bin.mean_confidence)) << "\" fill=\"" << kPalette[0]
           << "\" fill-opacity=\"0.7\"/>\n";
        os << "<rect x=\"" << num(x + 1 + bw * 0.2) << "\" y=\""
           << num(f.py(bin.empirical_accuracy)) << "\" width=\"" << num(bw * 0.6 - 2)
           << "\" height=\"" << num(f.py(0.0) - f.py(bin.empirical_accuracy)) << "\" fill=\""
           << kPalette[1] << "\"/>\n";
    }
    os << "<line x1=\"" << num(f.px(0.0)) << "\" y1=\"" << num(f.py(0.0)) << "\" x2=\""
       << num(f.px(1.0)) << "\" y2=\"" << num(f.py(1.0))
       << "\" stroke=\"#555\" stroke-dasharray=\"4 3\"/>\n";
    draw_legend(os, {"confidence", "accuracy"});
    os << "</svg>\n";
    write_file(path, os.str());
}

}  // namespace svg
}  // namespace iocnn
