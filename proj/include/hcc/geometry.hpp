#pragma once

// Hidden-state trajectory metrics at sentence boundaries.

#include <array>
#include <optional>
#include <string_view>
#include <vector>

#include "hcc/corpus.hpp"

namespace hcc {

inline constexpr double kDefaultEpsilon = 1e-8;

/// Per-sentence metrics, index t-1 for sentence t. curvature[0] is absent.
struct GeometrySeries {
    std::vector<double> displacement;
    std::vector<double> forward_progress;
    std::vector<double> efficiency;
    std::vector<double> disp_per_token;
    std::vector<double> prog_per_token;
    std::vector<std::optional<double>> curvature;
    double epsilon = kDefaultEpsilon;

    std::size_t size() const { return displacement.size(); }
};

enum class GeometryMetric {
    displacement = 0,
    forward_progress,
    efficiency,
    disp_per_token,
    prog_per_token,
    curvature,
};
inline constexpr int kGeometryMetricCount = 6;
inline constexpr std::array<GeometryMetric, kGeometryMetricCount> kGeometryMetrics = {
    GeometryMetric::displacement,   GeometryMetric::forward_progress, GeometryMetric::efficiency,
    GeometryMetric::disp_per_token, GeometryMetric::prog_per_token,   GeometryMetric::curvature,
};

std::string_view metric_name(GeometryMetric m);

/// Metric value at sentence t (1-based); absent only for curvature at t = 1.
std::optional<double> metric_value(const GeometrySeries& s, GeometryMetric m, int t);

/// Rows t = 1..T of h_t - h_{t-1}.
RowMatrix state_updates(const HiddenTrack& hidden);

GeometrySeries geometry_series(const TraceRecord& trace, double epsilon = kDefaultEpsilon);

std::vector<GeometrySeries> corpus_geometry(const Corpus& corpus, double epsilon = kDefaultEpsilon);
/// Single-threaded reference for corpus_geometry.
std::vector<GeometrySeries> corpus_geometry_serial(const Corpus& corpus, double epsilon = kDefaultEpsilon);

struct GroupMean {
    std::optional<double> retained;
    std::optional<double> removed;
};

struct GroupGeometryMeans {
    std::array<GroupMean, kGeometryMetricCount> metrics{};

    const GroupMean& operator[](GeometryMetric m) const { return metrics[static_cast<int>(m)]; }
};

/// Means over retained (t <= c*) and removed (t > c*) sentences.
GroupGeometryMeans group_means(const GeometrySeries& series, const EditorAnnotation& annotation);

}  // namespace hcc
