#pragma once

// CSV, aligned-text and JSON renderings of diagnostics, tables and model
// outputs. Column names are fixed; see README.md for the full list.

#include <map>
#include <ostream>
#include <span>
#include <string>
#include <vector>

#include <json.hpp>

#include "hcc/cutter.hpp"
#include "hcc/geometry.hpp"
#include "hcc/model.hpp"
#include "hcc/stats.hpp"
#include "hcc/train.hpp"
#include "hcc/uncertainty.hpp"

namespace hcc {

using Json = nlohmann::ordered_json;

/// Shortest round-trip text for a double; "" for absent values.
std::string csv_real(double v);
std::string csv_real(const std::optional<double>& v);

// Uncertainty
void write_uncertainty_csv(std::ostream& out, const Corpus& corpus, std::span<const UncertaintySeries> series);
Json uncertainty_json(const Corpus& corpus, std::span<const UncertaintySeries> series);
void write_curves_csv(std::ostream& out, const ProgressiveCurves& curves);
Json curves_json(const ProgressiveCurves& curves);
void write_quadruple_csv(std::ostream& out, const BoundaryQuadruple& q);
Json quadruple_json(const BoundaryQuadruple& q);
void write_perturbation_csv(std::ostream& out, const PerturbationStats& p);
Json perturbation_json(const PerturbationStats& p);

// Geometry
void write_geometry_csv(std::ostream& out, const Corpus& corpus, std::span<const GeometrySeries> series);
Json geometry_json(const Corpus& corpus, std::span<const GeometrySeries> series);
/// One row per (trace, metric) for annotated traces.
void write_group_means_csv(std::ostream& out, const Corpus& corpus, std::span<const GeometrySeries> series);
Json group_means_json(const Corpus& corpus, std::span<const GeometrySeries> series);

/// Per-trace (removed, retained) group means of every geometry metric, in
/// metric order, for annotated traces.
std::vector<MetricPairs> geometry_pairs(const Corpus& corpus, std::span<const GeometrySeries> series);

// Stats
void write_paired_csv(std::ostream& out, std::span<const PairedRow> rows);
void write_paired_text(std::ostream& out, std::span<const PairedRow> rows);
Json paired_json(std::span<const PairedRow> rows, const BootstrapOptions& options);
void write_ecdf_csv(std::ostream& out, const std::string& name, std::span<const EcdfPoint> points);
void write_self_consistency_csv(std::ostream& out, const SelfConsistencyReport& r);
Json self_consistency_json(const SelfConsistencyReport& r);

// Model
void write_history_csv(std::ostream& out, std::span<const EpochStats> history);
Json history_json(std::span<const EpochStats> history);

struct NamedPrediction {
    std::string id;
    Prediction prediction;
};

/// Columns: id, boundary, sentences, delete_probs (';'-separated).
void write_predictions_csv(std::ostream& out, std::span<const NamedPrediction> predictions);
Json predictions_json(std::span<const NamedPrediction> predictions);
/// Reads the CSV written by write_predictions_csv.
std::map<std::string, CutPrediction> read_predictions_csv(std::istream& in);

// Cuts
void write_cuts_csv(std::ostream& out, const std::map<std::string, CutResult>& cuts);
Json cuts_json(const std::map<std::string, CutResult>& cuts);
/// Reads id/boundary pairs from a cut-summary CSV.
std::map<std::string, int> read_cut_boundaries(std::istream& in);

}  // namespace hcc
