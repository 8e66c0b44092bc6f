#pragma once

#include <string>
#include <vector>

namespace iocnn {

// Fraction of equal entries; throws on empty or mismatched input.
double accuracy(const std::vector<int>& predictions, const std::vector<int>& labels);

// train - test; negative means test exceeded train.
double generalization_gap(double train_acc, double test_acc);

struct ReliabilityBin {
    double confidence_lo, confidence_hi;
    double mean_confidence;     // 0 when empty
    double empirical_accuracy;  // 0 when empty
    std::size_t sample_count;
};

struct ReliabilityBins {
    std::size_t n_bins;
    std::vector<ReliabilityBin> bins;
    std::size_t total;
};

struct EceResult {
    double ece;
    ReliabilityBins bins;
};

// Equal-width bins over confidence. A confidence exactly on a boundary goes
// to the upper bin; the last bin is closed at 1. Empty bins contribute 0.
EceResult ece(const std::vector<double>& confidences, const std::vector<bool>& correct_flags,
              std::size_t n_bins);

// One row per result variant of an experiment run.
struct RunReport {
    std::string variant;        // "unconstrained" | "ioc"
    std::string phase;          // "peak" | "convergence"
    double noise_fraction = 0.0;
    double train_acc = 0.0;
    double test_acc = 0.0;
    double gen_gap = 0.0;
};

void write_reports_csv(const std::vector<RunReport>& reports, const std::string& path);
void write_bins_csv(const ReliabilityBins& bins, const std::string& path);

}  // namespace iocnn
