#include "hcc/stats.hpp"

#include <algorithm>
#include <cmath>

#include "hcc/error.hpp"
#include "hcc/rng.hpp"

namespace hcc {

namespace {

double resample_mean(std::span<const double> values, std::uint64_t seed, int b) {
    const Ctr64 gen(seed, static_cast<std::uint64_t>(b));
    const std::uint64_t n = values.size();
    double sum = 0.0;
    for (std::uint64_t i = 0; i < n; ++i) sum += values[gen.below(i, n)];
    return sum / static_cast<double>(n);
}

}  // namespace

double quantile_sorted(std::span<const double> sorted, double q) {
    if (sorted.empty()) throw DataError("quantile of empty sample");
    const double pos = q * static_cast<double>(sorted.size() - 1);
    const auto lo = static_cast<std::size_t>(std::floor(pos));
    const auto hi = std::min(lo + 1, sorted.size() - 1);
    const double frac = pos - static_cast<double>(lo);
    return sorted[lo] + frac * (sorted[hi] - sorted[lo]);
}

std::vector<double> bootstrap_means(std::span<const double> values, int resamples, std::uint64_t seed) {
    std::vector<double> out(resamples);
#pragma omp parallel for schedule(static)
    for (int b = 0; b < resamples; ++b) out[b] = resample_mean(values, seed, b);
    return out;
}

std::vector<double> bootstrap_means_serial(std::span<const double> values, int resamples, std::uint64_t seed) {
    std::vector<double> out(resamples);
    for (int b = 0; b < resamples; ++b) out[b] = resample_mean(values, seed, b);
    return out;
}

std::pair<double, double> percentile_interval(std::span<const double> values, const BootstrapOptions& options) {
    if (options.resamples < 100) throw DataError("bootstrap needs at least 100 resamples");
    if (!(options.level > 0.0 && options.level < 1.0)) throw DataError("confidence level must lie in (0, 1)");
    if (values.empty()) throw DataError("bootstrap of empty sample");
    auto means = bootstrap_means(values, options.resamples, options.seed);
    std::sort(means.begin(), means.end());
    const double alpha = 1.0 - options.level;
    return {quantile_sorted(means, alpha / 2.0), quantile_sorted(means, 1.0 - alpha / 2.0)};
}

PairedRow paired_row(const MetricPairs& pairs, const BootstrapOptions& options) {
    PairedRow row;
    row.metric = pairs.metric;
    std::vector<double> deltas;
    double removed_sum = 0.0;
    double retained_sum = 0.0;
    long lower = 0;
    long higher = 0;
    for (const auto& [removed, retained] : pairs.removed_retained) {
        if (!removed || !retained) {
            ++row.excluded;
            continue;
        }
        removed_sum += *removed;
        retained_sum += *retained;
        deltas.push_back(*removed - *retained);
        if (*removed < *retained) ++lower;
        if (*removed > *retained) ++higher;
    }
    row.eligible = static_cast<long>(deltas.size());
    if (row.eligible < 2) {
        throw DataError("paired comparison of " + pairs.metric + " needs at least 2 eligible traces, got " +
                        std::to_string(row.eligible));
    }
    const double n = static_cast<double>(row.eligible);
    row.removed_mean = removed_sum / n;
    row.retained_mean = retained_sum / n;
    double delta_sum = 0.0;
    for (double d : deltas) delta_sum += d;
    row.delta_mean = delta_sum / n;
    row.frac_removed_lower = static_cast<double>(lower) / n;
    row.frac_removed_higher = static_cast<double>(higher) / n;
    std::tie(row.ci_low, row.ci_high) = percentile_interval(deltas, options);
    return row;
}

std::vector<PairedRow> paired_table(std::span<const MetricPairs> metrics, const BootstrapOptions& options) {
    std::vector<PairedRow> rows;
    rows.reserve(metrics.size());
    for (const auto& m : metrics) rows.push_back(paired_row(m, options));
    return rows;
}

std::vector<EcdfPoint> ecdf(std::span<const double> values) {
    if (values.empty()) throw DataError("ECDF of empty sample");
    std::vector<double> sorted(values.begin(), values.end());
    std::sort(sorted.begin(), sorted.end());
    std::vector<EcdfPoint> out;
    const double n = static_cast<double>(sorted.size());
    for (std::size_t i = 0; i < sorted.size(); ++i) {
        if (i + 1 < sorted.size() && sorted[i + 1] == sorted[i]) continue;
        out.push_back({sorted[i], static_cast<double>(i + 1) / n});
    }
    return out;
}

SelfConsistencyReport self_consistency(const std::map<std::string, CutPrediction>& predictions,
                                       const Corpus& corpus) {
    if (corpus.traces.empty()) throw DataError("self-consistency of an empty corpus");
    SelfConsistencyReport r;
    long phase = 0;
    double ratio_sum = 0.0;
    double len_sum = 0.0;
    for (const auto& tr : corpus.traces) {
        auto it = predictions.find(tr.id);
        if (it == predictions.end()) throw DataError("no prediction for trace " + tr.id);
        const int T = tr.num_sentences();
        const int c = it->second.boundary;
        if (c < 0 || c > T) throw DataError("predicted boundary out of range for trace " + tr.id);
        if (c < T) ++phase;
        ratio_sum += static_cast<double>(T - c) / static_cast<double>(T);
        len_sum += static_cast<double>(tr.total_tokens());
    }
    r.traces = static_cast<long>(corpus.traces.size());
    const double n = static_cast<double>(r.traces);
    r.phase_rate = static_cast<double>(phase) / n;
    r.sentence_ratio = ratio_sum / n;
    r.avg_len = len_sum / n;
    return r;
}

}  // namespace hcc
