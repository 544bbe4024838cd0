#pragma once

// Paired removed-vs-retained comparisons with percentile-bootstrap intervals,
// empirical CDFs and the self-consistency report.

#include <cstdint>
#include <map>
#include <optional>
#include <span>
#include <string>
#include <utility>
#include <vector>

#include "hcc/corpus.hpp"

namespace hcc {

inline constexpr int kDefaultResamples = 10000;
inline constexpr double kDefaultLevel = 0.95;

/// Per-trace group means of one metric; absent groups exclude the trace.
struct MetricPairs {
    std::string metric;
    std::vector<std::pair<std::optional<double>, std::optional<double>>> removed_retained;
};

struct PairedRow {
    std::string metric;
    double removed_mean = 0.0;
    double retained_mean = 0.0;
    double delta_mean = 0.0;
    double frac_removed_lower = 0.0;
    double frac_removed_higher = 0.0;
    double ci_low = 0.0;
    double ci_high = 0.0;
    long eligible = 0;
    long excluded = 0;
};

struct BootstrapOptions {
    int resamples = kDefaultResamples;
    std::uint64_t seed = 0;
    double level = kDefaultLevel;
};

/// Linear-interpolation sample quantile of sorted data, q in [0, 1].
double quantile_sorted(std::span<const double> sorted, double q);

/// Bootstrap distribution of the mean of `values`. Resample b draws its
/// indices from Ctr64(seed, b), so results do not depend on thread count.
std::vector<double> bootstrap_means(std::span<const double> values, int resamples, std::uint64_t seed);
/// Single-threaded reference for bootstrap_means.
std::vector<double> bootstrap_means_serial(std::span<const double> values, int resamples, std::uint64_t seed);

/// Percentile interval [q(alpha/2), q(1 - alpha/2)] of the bootstrap means.
std::pair<double, double> percentile_interval(std::span<const double> values, const BootstrapOptions& options);

PairedRow paired_row(const MetricPairs& pairs, const BootstrapOptions& options);
std::vector<PairedRow> paired_table(std::span<const MetricPairs> metrics, const BootstrapOptions& options);

struct EcdfPoint {
    double x = 0.0;
    double fraction = 0.0;
};

std::vector<EcdfPoint> ecdf(std::span<const double> values);

struct CutPrediction {
    int boundary = 0;
    std::vector<int> delete_flags;
};

struct SelfConsistencyReport {
    double phase_rate = 0.0;
    double sentence_ratio = 0.0;
    double avg_len = 0.0;
    long traces = 0;
};

SelfConsistencyReport self_consistency(const std::map<std::string, CutPrediction>& predictions,
                                       const Corpus& corpus);

}  // namespace hcc
