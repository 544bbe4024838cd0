#pragma once

#include <cstdint>
#include <span>
#include <string>
#include <vector>

#include "hcc/corpus.hpp"
#include "hcc/model.hpp"

namespace hcc {

/// Features and targets of every annotated trace, in corpus order.
struct TrainingSet {
    std::vector<std::string> ids;
    std::vector<TraceFeatures> features;
    std::vector<TraceTargets> targets;

    std::size_t size() const { return ids.size(); }
};

TrainingSet make_training_set(const Corpus& corpus, const FeatureScaler& scaler, const HccConfig& config);

struct EpochStats {
    int epoch = 0;
    LossBreakdown mean;
};

struct TrainResult {
    HccModel model;
    std::vector<EpochStats> history;
};

/// Sampling seed of trace `index` within `epoch`.
std::uint64_t trace_seed(std::uint64_t seed, int epoch, std::size_t index);

/// Sum of per-trace losses and gradients over `indices`. Each trace is
/// differentiated independently (OpenMP when `parallel`) and the results are
/// reduced in index order, so the sum is independent of thread count.
LossBreakdown batch_gradients(const HccConfig& config, const HccParameters& params, const TrainingSet& set,
                              std::span<const std::size_t> indices, int epoch, HccParameters& grad,
                              bool parallel = true);

/// Adam on the mean batch loss with global-norm clipping. Deterministic given
/// config.seed: fixed shuffles, fixed noise, fixed reduction order.
TrainResult train(const Corpus& corpus, const HccConfig& config);

struct BoundaryAccuracy {
    double exact = 0.0;
    double within_one = 0.0;
    long traces = 0;
};

/// Compares predicted boundaries with annotations (annotated traces only).
BoundaryAccuracy evaluate_boundaries(const HccModel& model, const Corpus& corpus);

}  // namespace hcc
