#include "iocnn/datasets.hpp"

#include <algorithm>
#include <cmath>
#include <cstring>
#include <fstream>
#include <stdexcept>

#include <Eigen/Dense>

#include "iocnn/rng.hpp"
#include "iocnn/serialize.hpp"

namespace iocnn {

Dataset gen_disk_ring(std::size_t n, std::uint64_t seed) {
    if (n < 2) throw std::invalid_argument("gen_disk_ring: n must be >= 2");
    Rng rng(seed);
    const std::size_t n0 = n / 2, n1 = n - n0;
    Dataset d;
    d.inputs = Tensor(n, 2);
    d.labels.resize(n);
    d.num_classes = 2;
    d.sample_shape = Shape{2};
    d.provenance = "gen_disk_ring(n=" + std::to_string(n) + ",seed=" + std::to_string(seed) + ")";
    const double two_pi = 6.283185307179586476925286766559;
    for (std::size_t i = 0; i < n0; ++i) {
        double r = std::sqrt(rng.uniform());        // area-uniform in the unit disk
        double a = two_pi * rng.uniform();
        d.inputs(i, 0) = r * std::cos(a);
        d.inputs(i, 1) = r * std::sin(a);
        d.labels[i] = 0;
    }
    const double r0 = 1.5, r1 = 2.5;
    for (std::size_t i = 0; i < n1; ++i) {
        double u = rng.uniform();
        double r = std::sqrt(r0 * r0 + u * (r1 * r1 - r0 * r0));  // area-uniform in the annulus
        double a = two_pi * rng.uniform();
        d.inputs(n0 + i, 0) = r * std::cos(a);
        d.inputs(n0 + i, 1) = r * std::sin(a);
        d.labels[n0 + i] = 1;
    }
    return d;
}

namespace {

double dist_to_segment(double px, double py, double ux, double uy, double len) {
    // Segment from the origin along unit direction (ux, uy) with length len.
    double t = std::clamp(px * ux + py * uy, 0.0, len);
    double dx = px - t * ux, dy = py - t * uy;
    return std::sqrt(dx * dx + dy * dy);
}

}  // namespace

Dataset gen_vshape(std::size_t n, std::uint64_t seed) {
    if (n < 2) throw std::invalid_argument("gen_vshape: n must be >= 2");
    Rng rng(seed);
    Dataset d;
    d.inputs = Tensor(n, 2);
    d.labels.resize(n);
    d.num_classes = 2;
    d.sample_shape = Shape{2};
    d.provenance = "gen_vshape(n=" + std::to_string(n) + ",seed=" + std::to_string(seed) + ")";
    const double inv_sqrt2 = 0.70710678118654752440;
    const double arm_len = 2.0 / inv_sqrt2;  // reaches the square boundary
    const double half_width = 0.15;
    for (std::size_t i = 0; i < n; ++i) {
        double x = rng.uniform(-2.0, 2.0);
        double y = rng.uniform(-2.0, 2.0);
        d.inputs(i, 0) = x;
        d.inputs(i, 1) = y;
        double da = dist_to_segment(x, y, inv_sqrt2, inv_sqrt2, arm_len);
        double db = dist_to_segment(x, y, -inv_sqrt2, inv_sqrt2, arm_len);
        d.labels[i] = (std::min(da, db) <= half_width) ? 1 : 0;
    }
    return d;
}

namespace {

std::uint32_t read_be32(std::istream& in, const std::string& path) {
    unsigned char b[4];
    in.read(reinterpret_cast<char*>(b), 4);
    if (!in) throw std::runtime_error("truncated IDX file: " + path);
    return (std::uint32_t(b[0]) << 24) | (std::uint32_t(b[1]) << 16) |
           (std::uint32_t(b[2]) << 8) | std::uint32_t(b[3]);
}

void write_be32(std::ostream& out, std::uint32_t v) {
    unsigned char b[4] = {static_cast<unsigned char>(v >> 24),
                          static_cast<unsigned char>(v >> 16),
                          static_cast<unsigned char>(v >> 8), static_cast<unsigned char>(v)};
    out.write(reinterpret_cast<char*>(b), 4);
}

}  // namespace

Dataset load_idx(const std::string& images_path, const std::string& labels_path) {
    std::ifstream img(images_path, std::ios::binary);
    if (!img) throw std::runtime_error("cannot open IDX images: " + images_path);
    if (read_be32(img, images_path) != 0x00000803u)
        throw std::runtime_error("bad IDX image magic in " + images_path);
    const std::uint32_t n = read_be32(img, images_path);
    const std::uint32_t rows = read_be32(img, images_path);
    const std::uint32_t cols = read_be32(img, images_path);

    std::ifstream lab(labels_path, std::ios::binary);
    if (!lab) throw std::runtime_error("cannot open IDX labels: " + labels_path);
    if (read_be32(lab, labels_path) != 0x00000801u)
        throw std::runtime_error("bad IDX label magic in " + labels_path);
    const std::uint32_t nl = read_be32(lab, labels_path);
    if (n != nl)
        throw std::runtime_error("IDX image/label count mismatch: " + std::to_string(n) +
                                 " images vs " + std::to_string(nl) + " labels");

    Dataset d;
    d.inputs = Tensor(n, std::size_t(rows) * cols);
    d.labels.resize(n);
    d.sample_shape = Shape{1, rows, cols};
    d.provenance = "load_idx(" + images_path + "," + labels_path + ")";
    std::vector<unsigned char> buf(std::size_t(rows) * cols);
    int max_label = 0;
    for (std::uint32_t i = 0; i < n; ++i) {
        img.read(reinterpret_cast<char*>(buf.data()), static_cast<std::streamsize>(buf.size()));
        if (!img) throw std::runtime_error("truncated IDX file: " + images_path);
        double* row = d.inputs.row_ptr(i);
        for (std::size_t k = 0; k < buf.size(); ++k) row[k] = buf[k] / 255.0;
        char lb;
        lab.read(&lb, 1);
        if (!lab) throw std::runtime_error("truncated IDX file: " + labels_path);
        d.labels[i] = static_cast<unsigned char>(lb);
        max_label = std::max(max_label, d.labels[i]);
    }
    d.num_classes = max_label + 1;
    return d;
}

void save_idx(const Dataset& data, const std::string& images_path,
              const std::string& labels_path) {
    if (data.sample_shape.rank() != 3)
        throw std::invalid_argument("save_idx: needs a rank-3 sample shape");
    const std::size_t rows = data.sample_shape.dims[1], cols = data.sample_shape.dims[2];
    std::ofstream img(images_path, std::ios::binary);
    if (!img) throw std::runtime_error("cannot open for writing: " + images_path);
    write_be32(img, 0x00000803u);
    write_be32(img, static_cast<std::uint32_t>(data.size()));
    write_be32(img, static_cast<std::uint32_t>(rows));
    write_be32(img, static_cast<std::uint32_t>(cols));
    std::vector<unsigned char> buf(rows * cols);
    for (std::size_t i = 0; i < data.size(); ++i) {
        const double* row = data.inputs.row_ptr(i);
        for (std::size_t k = 0; k < buf.size(); ++k) {
            double v = std::clamp(row[k], 0.0, 1.0) * 255.0;
            buf[k] = static_cast<unsigned char>(std::lround(v));
        }
        img.write(reinterpret_cast<char*>(buf.data()), static_cast<std::streamsize>(buf.size()));
    }
    std::ofstream lab(labels_path, std::ios::binary);
    if (!lab) throw std::runtime_error("cannot open for writing: " + labels_path);
    write_be32(lab, 0x00000801u);
    write_be32(lab, static_cast<std::uint32_t>(data.size()));
    for (std::size_t i = 0; i < data.size(); ++i) {
        char lb = static_cast<char>(data.labels[i]);
        lab.write(&lb, 1);
    }
}

WhiteningTransform whiten_fit(const Dataset& data, double variance_floor) {
    if (variance_floor <= 0.0)
        throw std::invalid_argument("whiten_fit: variance_floor must be > 0");
    const std::size_t n = data.size(), d = data.dim();
    if (n == 0) throw std::invalid_argument("whiten_fit: empty dataset");

    WhiteningTransform t;
    t.variance_floor = variance_floor;
    t.mean.assign(d, 0.0);
    for (std::size_t i = 0; i < n; ++i) {
        const double* row = data.inputs.row_ptr(i);
        for (std::size_t j = 0; j < d; ++j) t.mean[j] += row[j];
    }
    for (std::size_t j = 0; j < d; ++j) t.mean[j] /= static_cast<double>(n);

    Eigen::MatrixXd cov = Eigen::MatrixXd::Zero(d, d);
    Eigen::VectorXd centered(d);
    for (std::size_t i = 0; i < n; ++i) {
        const double* row = data.inputs.row_ptr(i);
        for (std::size_t j = 0; j < d; ++j) centered(j) = row[j] - t.mean[j];
        cov.selfadjointView<Eigen::Lower>().rankUpdate(centered, 1.0);
    }
    cov = cov.selfadjointView<Eigen::Lower>();
    cov /= static_cast<double>(n);
    if (!cov.allFinite()) throw std::runtime_error("whiten_fit: non-finite covariance");

    Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd> eig(cov);
    if (eig.info() != Eigen::Success)
        throw std::runtime_error("whiten_fit: eigendecomposition failed");
    Eigen::VectorXd scale = (eig.eigenvalues().array() + variance_floor).rsqrt();
    Eigen::MatrixXd zca =
        eig.eigenvectors() * scale.asDiagonal() * eig.eigenvectors().transpose();

    t.matrix = Tensor(d, d);
    for (std::size_t r = 0; r < d; ++r)
        for (std::size_t c = 0; c < d; ++c) t.matrix(r, c) = zca(r, c);
    return t;
}

Dataset whiten_apply(const WhiteningTransform& t, const Dataset& data) {
    const std::size_t n = data.size(), d = data.dim();
    if (t.mean.size() != d) throw std::invalid_argument("whiten_apply: dimension mismatch");
    Dataset out = data;
    out.provenance = data.provenance + "|whitened";
    std::vector<double> centered(d);
    for (std::size_t i = 0; i < n; ++i) {
        const double* row = data.inputs.row_ptr(i);
        for (std::size_t j = 0; j < d; ++j) centered[j] = row[j] - t.mean[j];
        double* dst = out.inputs.row_ptr(i);
        for (std::size_t r = 0; r < d; ++r) {
            const double* m = t.matrix.row_ptr(r);
            double acc = 0.0;
            for (std::size_t j = 0; j < d; ++j) acc += m[j] * centered[j];
            dst[r] = acc;
        }
    }
    return out;
}

Dataset randomize_labels(const Dataset& data, double fraction, std::uint64_t seed) {
    if (fraction < 0.0 || fraction > 1.0)
        throw std::invalid_argument("randomize_labels: fraction must be in [0,1]");
    Dataset out = data;
    out.provenance = data.provenance + "|randomize_labels(p=" + format_shortest(fraction) +
                     ",seed=" + std::to_string(seed) + ")";
    const std::size_t n = data.size();
    const std::size_t k = static_cast<std::size_t>(std::llround(fraction * static_cast<double>(n)));
    if (k == 0) return out;
    Rng rng(seed);
    std::vector<std::size_t> idx = rng.permutation(n);
    for (std::size_t i = 0; i < k; ++i)
        out.labels[idx[i]] =
            static_cast<int>(rng.uniform_int(static_cast<std::uint64_t>(data.num_classes)));
    return out;
}

Dataset subset(const Dataset& data, const std::vector<std::size_t>& indices) {
    Dataset out;
    out.inputs = Tensor(indices.size(), data.dim());
    out.labels.resize(indices.size());
    out.num_classes = data.num_classes;
    out.sample_shape = data.sample_shape;
    out.provenance = data.provenance + "|subset(n=" + std::to_string(indices.size()) + ")";
    for (std::size_t i = 0; i < indices.size(); ++i) {
        const double* from = data.inputs.row_ptr(indices[i]);
        std::copy(from, from + data.dim(), out.inputs.row_ptr(i));
        out.labels[i] = data.labels[indices[i]];
    }
    return out;
}

SplitResult split(const Dataset& data, const std::array<double, 3>& fractions,
                  std::uint64_t seed) {
    double sum = fractions[0] + fractions[1] + fractions[2];
    if (fractions[0] <= 0.0 || fractions[1] <= 0.0 || fractions[2] <= 0.0 ||
        std::fabs(sum - 1.0) > 1e-9)
        throw std::invalid_argument("split: fractions must be positive and sum to 1");

    // Class-stratified: shuffle within each class, then apportion by
    // largest remainder so the partition is exhaustive.
    std::vector<std::vector<std::size_t>> by_class(data.num_classes);
    for (std::size_t i = 0; i < data.size(); ++i) by_class[data.labels[i]].push_back(i);
    Rng rng(seed);
    std::array<std::vector<std::size_t>, 3> buckets;
    for (auto& cls : by_class) {
        rng.shuffle(cls);
        const std::size_t m = cls.size();
        std::array<std::size_t, 3> want{};
        std::array<double, 3> frac_part{};
        std::size_t assigned = 0;
        for (int s = 0; s < 3; ++s) {
            double exact = fractions[s] * static_cast<double>(m);
            want[s] = static_cast<std::size_t>(exact);
            frac_part[s] = exact - static_cast<double>(want[s]);
            assigned += want[s];
        }
        while (assigned < m) {
            int best = 0;
            for (int s = 1; s < 3; ++s)
                if (frac_part[s] > frac_part[best]) best = s;
            ++want[best];
            frac_part[best] = -1.0;
            ++assigned;
        }
        std::size_t pos = 0;
        for (int s = 0; s < 3; ++s)
            for (std::size_t i = 0; i < want[s]; ++i) buckets[s].push_back(cls[pos++]);
    }
    for (int s = 0; s < 3; ++s) {
        if (buckets[s].empty())
            throw std::invalid_argument("split: a split received 0 samples");
        std::sort(buckets[s].begin(), buckets[s].end());
    }
    return {subset(data, buckets[0]), subset(data, buckets[1]), subset(data, buckets[2])};
}

void dataset_to_csv(const Dataset& data, const std::string& path) {
    std::ofstream out(path, std::ios::binary);
    if (!out) throw std::runtime_error("cannot open for writing: " + path);
    for (std::size_t j = 0; j < data.dim(); ++j) out << 'x' << j << ',';
    out << "label\n";
    for (std::size_t i = 0; i < data.size(); ++i) {
        const double* row = data.inputs.row_ptr(i);
        for (std::size_t j = 0; j < data.dim(); ++j) out << format_shortest(row[j]) << ',';
        out << data.labels[i] << '\n';
    }
}

Box bounding_box(const Dataset& data, double inflate) {
    if (data.size() == 0) throw std::invalid_argument("bounding_box: empty dataset");
    const std::size_t d = data.dim();
    Box box;
    box.lo.assign(d, std::numeric_limits<double>::infinity());
    box.hi.assign(d, -std::numeric_limits<double>::infinity());
    for (std::size_t i = 0; i < data.size(); ++i) {
        const double* row = data.inputs.row_ptr(i);
        for (std::size_t j = 0; j < d; ++j) {
            box.lo[j] = std::min(box.lo[j], row[j]);
            box.hi[j] = std::max(box.hi[j], row[j]);
        }
    }
    for (std::size_t j = 0; j < d; ++j) {
        double margin = (box.hi[j] - box.lo[j]) * inflate * 0.5;
        box.lo[j] -= margin;
        box.hi[j] += margin;
    }
    return box;
}

}  // namespace iocnn
