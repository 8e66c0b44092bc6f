#pragma once

#include <string>
#include <vector>

#include "iocnn/metrics.hpp"
#include "iocnn/verifier.hpp"

namespace iocnn {
namespace svg {

// All writers emit standalone SVG with axes and a legend, deterministic
// element order, and locale-independent number formatting, so identical
// data produces byte-identical files.

struct Series {
    std::string label;
    std::vector<double> values;  // y per epoch (x = 1..n)
};

// Polyline chart; throws if series lengths differ.
void curves(const std::vector<Series>& series, const std::string& y_label,
            const std::string& path);

inline void loss_curves(const std::vector<Series>& s, const std::string& path) {
    curves(s, "loss", path);
}
inline void accuracy_curves(const std::vector<Series>& s, const std::string& path) {
    curves(s, "accuracy", path);
}

// One filled cell per grid point, color per class label.
void boundary_map(const BoundaryGrid& grid, const std::string& path);

// Same rendering over an arbitrary integer grid (used for gate partitions).
void label_grid(const std::vector<int>& labels, std::size_t nx, std::size_t ny, double x_lo,
                double x_hi, double y_lo, double y_hi, const std::string& path);

// Paired bars per bin: mean confidence and empirical accuracy, plus the
// identity diagonal.
void reliability_diagram(const ReliabilityBins& bins, const std::string& path);

}  // namespace svg
}  // namespace iocnn
