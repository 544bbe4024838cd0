#include "hcc/train.hpp"

#include <cmath>
#include <numeric>

#include "hcc/error.hpp"
#include "hcc/rng.hpp"

namespace hcc {

TrainingSet make_training_set(const Corpus& corpus, const FeatureScaler& scaler, const HccConfig& config) {
    TrainingSet set;
    for (const auto& tr : corpus.traces) {
        const auto* ann = corpus.annotation_for(tr.id);
        if (ann == nullptr) throw DataError("training trace " + tr.id + " has no editor labels");
        set.ids.push_back(tr.id);
        set.features.push_back(make_features(tr, scaler));
        set.targets.push_back(make_targets(tr, *ann, scaler, config));
    }
    return set;
}

std::uint64_t trace_seed(std::uint64_t seed, int epoch, std::size_t index) {
    return derive_seed(seed, static_cast<std::uint64_t>(epoch) + 1, index);
}

LossBreakdown batch_gradients(const HccConfig& config, const HccParameters& params, const TrainingSet& set,
                              std::span<const std::size_t> indices, int epoch, HccParameters& grad,
                              bool parallel) {
    const long n = static_cast<long>(indices.size());
    std::vector<HccParameters> parts(n);
    std::vector<LossBreakdown> losses(n);
    std::vector<std::string> errors(n);

#pragma omp parallel for schedule(dynamic) if (parallel)
    for (long k = 0; k < n; ++k) {
        const std::size_t idx = indices[k];
        try {
            parts[k] = params.zeros_like();
            losses[k] = gradients(config, params, set.features[idx], set.targets[idx],
                                  ForwardMode::train(trace_seed(config.seed, epoch, idx)), parts[k]);
            if (!std::isfinite(losses[k].total)) throw DataError("non-finite loss");
        } catch (const std::exception& e) {
            errors[k] = e.what();
        }
    }

    LossBreakdown sum;
    for (long k = 0; k < n; ++k) {
        if (!errors[k].empty()) {
            throw DataError("epoch " + std::to_string(epoch) + ", trace " + set.ids[indices[k]] + ": " + errors[k]);
        }
        grad += parts[k];
        sum += losses[k];
    }
    return sum;
}

namespace {

struct Adam {
    HccParameters m, v;
    double beta1 = 0.9;
    double beta2 = 0.999;
    double eps = 1e-8;
    long step = 0;

    explicit Adam(const HccParameters& like) : m(like.zeros_like()), v(like.zeros_like()) {}

    void update(HccParameters& params, const HccParameters& grad, double lr) {
        ++step;
        const double c1 = 1.0 - std::pow(beta1, static_cast<double>(step));
        const double c2 = 1.0 - std::pow(beta2, static_cast<double>(step));
        auto p = params.spans();
        const auto g = grad.spans();
        auto ms = m.spans();
        auto vs = v.spans();
        for (std::size_t k = 0; k < p.size(); ++k) {
            for (std::size_t i = 0; i < p[k].size(); ++i) {
                ms[k][i] = beta1 * ms[k][i] + (1.0 - beta1) * g[k][i];
                vs[k][i] = beta2 * vs[k][i] + (1.0 - beta2) * g[k][i] * g[k][i];
                p[k][i] -= lr * (ms[k][i] / c1) / (std::sqrt(vs[k][i] / c2) + eps);
            }
        }
    }
};

double global_norm(const HccParameters& g) {
    double s = 0.0;
    for (const auto& span : g.spans()) {
        for (double x : span) s += x * x;
    }
    return std::sqrt(s);
}

}  // namespace

TrainResult train(const Corpus& corpus, const HccConfig& config) {
    config.validate();
    if (corpus.traces.empty()) throw DataError("cannot train on an empty corpus");

    TrainResult result;
    result.model.config = config;
    result.model.scaler = fit_scaler(corpus, config);
    result.model.params = init_params(config, config.seed);
    const TrainingSet set = make_training_set(corpus, result.model.scaler, config);

    HccParameters& params = result.model.params;
    Adam adam(params);
    HccParameters grad = params.zeros_like();
    std::vector<std::size_t> order(set.size());

    for (int epoch = 0; epoch < config.epochs; ++epoch) {
        std::iota(order.begin(), order.end(), std::size_t{0});
        Ctr64Stream shuffle(derive_seed(config.seed, 0x5348554646ULL, static_cast<std::uint64_t>(epoch)), 0);
        for (std::size_t i = order.size(); i > 1; --i) {
            std::swap(order[i - 1], order[shuffle.below(i)]);
        }

        LossBreakdown epoch_sum;
        for (std::size_t start = 0; start < order.size(); start += static_cast<std::size_t>(config.batch_size)) {
            const std::size_t end = std::min(order.size(), start + static_cast<std::size_t>(config.batch_size));
            const std::span<const std::size_t> batch(order.data() + start, end - start);
            grad.set_zero();
            epoch_sum += batch_gradients(config, params, set, batch, epoch, grad);
            grad *= 1.0 / static_cast<double>(batch.size());
            if (config.grad_clip > 0.0) {
                const double norm = global_norm(grad);
                if (norm > config.grad_clip) grad *= config.grad_clip / norm;
            }
            adam.update(params, grad, config.learning_rate);
        }
        epoch_sum *= 1.0 / static_cast<double>(set.size());
        result.history.push_back({epoch + 1, epoch_sum});
    }
    return result;
}

BoundaryAccuracy evaluate_boundaries(const HccModel& model, const Corpus& corpus) {
    BoundaryAccuracy acc;
    long exact = 0;
    long near = 0;
    for (const auto& tr : corpus.traces) {
        const auto* ann = corpus.annotation_for(tr.id);
        if (ann == nullptr) continue;
        const int predicted = predict(model, tr).boundary;
        ++acc.traces;
        if (predicted == ann->boundary) ++exact;
        if (std::abs(predicted - ann->boundary) <= 1) ++near;
    }
    if (acc.traces > 0) {
        acc.exact = static_cast<double>(exact) / static_cast<double>(acc.traces);
        acc.within_one = static_cast<double>(near) / static_cast<double>(acc.traces);
    }
    return acc;
}

}  // namespace hcc
