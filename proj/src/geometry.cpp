#include "hcc/geometry.hpp"

#include <algorithm>

namespace hcc {

std::string_view metric_name(GeometryMetric m) {
    switch (m) {
        case GeometryMetric::displacement: return "displacement";
        case GeometryMetric::forward_progress: return "forward_progress";
        case GeometryMetric::efficiency: return "efficiency";
        case GeometryMetric::disp_per_token: return "disp_per_token";
        case GeometryMetric::prog_per_token: return "prog_per_token";
        case GeometryMetric::curvature: return "curvature";
    }
    return "?";
}

std::optional<double> metric_value(const GeometrySeries& s, GeometryMetric m, int t) {
    const auto i = static_cast<std::size_t>(t - 1);
    switch (m) {
        case GeometryMetric::displacement: return s.displacement[i];
        case GeometryMetric::forward_progress: return s.forward_progress[i];
        case GeometryMetric::efficiency: return s.efficiency[i];
        case GeometryMetric::disp_per_token: return s.disp_per_token[i];
        case GeometryMetric::prog_per_token: return s.prog_per_token[i];
        case GeometryMetric::curvature: return s.curvature[i];
    }
    return std::nullopt;
}

RowMatrix state_updates(const HiddenTrack& hidden) {
    const Eigen::Index T = hidden.rows() - 1;
    if (T < 1) return RowMatrix(0, hidden.dim());
    return hidden.states.bottomRows(T) - hidden.states.topRows(T);
}

GeometrySeries geometry_series(const TraceRecord& trace, double epsilon) {
    const RowMatrix delta = state_updates(trace.hidden);
    const Eigen::Index T = delta.rows();
    GeometrySeries s;
    s.epsilon = epsilon;
    s.displacement.resize(T);
    s.forward_progress.resize(T);
    s.efficiency.resize(T);
    s.disp_per_token.resize(T);
    s.prog_per_token.resize(T);
    s.curvature.assign(T, std::nullopt);

    const auto terminal = trace.hidden.row(T);
    for (Eigen::Index i = 0; i < T; ++i) {
        const auto step = delta.row(i);
        const Eigen::RowVectorXd remaining = terminal - trace.hidden.row(i);
        const double disp = step.norm();
        // Rounding can push |G| a few ulps past D when the update is parallel to
        // the remaining direction.
        const double prog = std::clamp(step.dot(remaining) / (remaining.norm() + epsilon), -disp, disp);
        const double n = static_cast<double>(trace.sentences[i].token_count);
        s.displacement[i] = disp;
        s.forward_progress[i] = prog;
        s.efficiency[i] = prog / (disp + epsilon);
        s.disp_per_token[i] = disp / n;
        s.prog_per_token[i] = prog / n;
        if (i > 0) {
            const auto prev = delta.row(i - 1);
            s.curvature[i] = std::clamp(1.0 - prev.dot(step) / (prev.norm() * disp + epsilon), 0.0, 2.0);
        }
    }
    return s;
}

std::vector<GeometrySeries> corpus_geometry(const Corpus& corpus, double epsilon) {
    std::vector<GeometrySeries> out(corpus.traces.size());
    const long n = static_cast<long>(corpus.traces.size());
#pragma omp parallel for schedule(dynamic)
    for (long i = 0; i < n; ++i) out[i] = geometry_series(corpus.traces[i], epsilon);
    return out;
}

std::vector<GeometrySeries> corpus_geometry_serial(const Corpus& corpus, double epsilon) {
    std::vector<GeometrySeries> out;
    out.reserve(corpus.traces.size());
    for (const auto& tr : corpus.traces) out.push_back(geometry_series(tr, epsilon));
    return out;
}

GroupGeometryMeans group_means(const GeometrySeries& series, const EditorAnnotation& annotation) {
    GroupGeometryMeans out;
    const int T = static_cast<int>(series.size());
    for (GeometryMetric m : kGeometryMetrics) {
        double sum[2] = {0.0, 0.0};
        int count[2] = {0, 0};
        for (int t = 1; t <= T; ++t) {
            const auto v = metric_value(series, m, t);
            if (!v) continue;
            const int g = annotation.retained(t) ? 0 : 1;
            sum[g] += *v;
            ++count[g];
        }
        auto& gm = out.metrics[static_cast<int>(m)];
        if (count[0] > 0) gm.retained = sum[0] / count[0];
        if (count[1] > 0) gm.removed = sum[1] / count[1];
    }
    return out;
}

}  // namespace hcc
