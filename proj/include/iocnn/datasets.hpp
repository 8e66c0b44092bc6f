#pragma once

#include <array>
#include <cstdint>
#include <string>
#include <vector>

#include "iocnn/tensor.hpp"

namespace iocnn {

struct Dataset {
    Tensor inputs;              // [n x d]
    std::vector<int> labels;    // [n]
    int num_classes = 0;
    Shape sample_shape;         // per-sample shape, e.g. {2} or {1,28,28}
    std::string provenance;     // generator name + seed, or source file + transform chain

    std::size_t size() const { return inputs.rows(); }
    std::size_t dim() const { return inputs.cols(); }
};

// Two classes: class 0 uniform over the unit disk, class 1 uniform over the
// annulus with radii [1.5, 2.5]; balanced counts.
Dataset gen_disk_ring(std::size_t n, std::uint64_t seed);

// Uniform square [-2,2]^2; class 1 inside a V-shaped band built from two
// segments of total width 0.3 leaving the origin at +-45 degrees.
Dataset gen_vshape(std::size_t n, std::uint64_t seed);

// IDX (MNIST-style) ingestion: big-endian magic 0x00000803 for images and
// 0x00000801 for labels; pixel bytes scaled to [0,1].
Dataset load_idx(const std::string& images_path, const std::string& labels_path);

// Writes a dataset back out as an IDX pair; values are quantized to bytes.
// Requires a rank-3 sample shape.
void save_idx(const Dataset& data, const std::string& images_path,
              const std::string& labels_path);

struct WhiteningTransform {
    std::vector<double> mean;       // [d]
    Tensor matrix;                  // [d x d], symmetric (ZCA)
    double variance_floor = 1e-5;
};

// ZCA whitening: center, rotate by covariance eigenvectors, scale by
// 1/sqrt(lambda + floor), rotate back.
WhiteningTransform whiten_fit(const Dataset& data, double variance_floor = 1e-5);
Dataset whiten_apply(const WhiteningTransform& t, const Dataset& data);

// Replaces the labels of round(p*n) distinct samples by uniform draws over
// all classes (a draw may repeat the true label).
Dataset randomize_labels(const Dataset& data, double fraction, std::uint64_t seed);

struct SplitResult {
    Dataset train, val, test;
};

// Seeded, class-stratified, disjoint and exhaustive partition.
SplitResult split(const Dataset& data, const std::array<double, 3>& fractions,
                  std::uint64_t seed);

Dataset subset(const Dataset& data, const std::vector<std::size_t>& indices);

// CSV export with header x0..x{d-1},label.
void dataset_to_csv(const Dataset& data, const std::string& path);

// Axis-aligned bounding box inflated by a relative margin per side.
struct Box {
    std::vector<double> lo, hi;
};
Box bounding_box(const Dataset& data, double inflate = 0.2);

}  // namespace iocnn
