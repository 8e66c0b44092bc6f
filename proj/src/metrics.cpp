#include "iocnn/metrics.hpp"

#include <cmath>
#include <fstream>
#include <stdexcept>

#include "iocnn/serialize.hpp"

namespace iocnn {

double accuracy(const std::vector<int>& predictions, const std::vector<int>& labels) {
    if (predictions.empty()) throw std::invalid_argument("accuracy: empty input");
    if (predictions.size() != labels.size())
        throw std::invalid_argument("accuracy: length mismatch");
    std::size_t correct = 0;
    for (std::size_t i = 0; i < predictions.size(); ++i)
        if (predictions[i] == labels[i]) ++correct;
    return static_cast<double>(correct) / static_cast<double>(predictions.size());
}

double generalization_gap(double train_acc, double test_acc) { return train_acc - test_acc; }

EceResult ece(const std::vector<double>& confidences, const std::vector<bool>& correct_flags,
              std::size_t n_bins) {
    if (n_bins < 1) throw std::invalid_argument("ece: n_bins must be >= 1");
    if (confidences.size() != correct_flags.size())
        throw std::invalid_argument("ece: length mismatch");

    EceResult out;
    out.bins.n_bins = n_bins;
    out.bins.total = confidences.size();
    out.bins.bins.resize(n_bins);
    std::vector<double> conf_sum(n_bins, 0.0);
    std::vector<std::size_t> hits(n_bins, 0), counts(n_bins, 0);

    for (std::size_t b = 0; b < n_bins; ++b) {
        out.bins.bins[b].confidence_lo = static_cast<double>(b) / static_cast<double>(n_bins);
        out.bins.bins[b].confidence_hi =
            static_cast<double>(b + 1) / static_cast<double>(n_bins);
    }
    for (std::size_t i = 0; i < confidences.size(); ++i) {
        double c = confidences[i];
        if (!(c > 0.0) || c > 1.0)
            throw std::invalid_argument("ece: confidences must lie in (0,1]");
        std::size_t b = static_cast<std::size_t>(c * static_cast<double>(n_bins));
        if (b >= n_bins) b = n_bins - 1;  // c == 1.0
        conf_sum[b] += c;
        counts[b] += 1;
        if (correct_flags[i]) hits[b] += 1;
    }

    out.ece = 0.0;
    const double n = static_cast<double>(confidences.size());
    for (std::size_t b = 0; b < n_bins; ++b) {
        ReliabilityBin& bin = out.bins.bins[b];
        bin.sample_count = counts[b];
        if (counts[b] == 0) {
            bin.mean_confidence = 0.0;
            bin.empirical_accuracy = 0.0;
            continue;
        }
        bin.mean_confidence = conf_sum[b] / static_cast<double>(counts[b]);
        bin.empirical_accuracy = static_cast<double>(hits[b]) / static_cast<double>(counts[b]);
        out.ece += (static_cast<double>(counts[b]) / n) *
                   std::fabs(bin.empirical_accuracy - bin.mean_confidence);
    }
    return out;
}

void write_reports_csv(const std::vector<RunReport>& reports, const std::string& path) {
    std::ofstream out(path, std::ios::binary);
    if (!out) throw std::runtime_error("cannot open for writing: " + path);
    out << "variant,phase,noise_fraction,train_acc,test_acc,gen_gap\n";
    for (const RunReport& r : reports)
        out << r.variant << ',' << r.phase << ',' << format_shortest(r.noise_fraction) << ','
            << format_shortest(r.train_acc) << ',' << format_shortest(r.test_acc) << ','
            << format_shortest(r.gen_gap) << '\n';
}

void write_bins_csv(const ReliabilityBins& bins, const std::string& path) {
    std::ofstream out(path, std::ios::binary);
    if (!out) throw std::runtime_error("cannot open for writing: " + path);
    out << "confidence_lo,confidence_hi,mean_confidence,empirical_accuracy,sample_count\n";
    for (const ReliabilityBin& b : bins.bins)
        out << format_shortest(b.confidence_lo) << ',' << format_shortest(b.confidence_hi) << ','
            << format_shortest(b.mean_confidence) << ',' << format_shortest(b.empirical_accuracy)
            << ',' << b.sample_count << '\n';
}

}  // namespace iocnn
