#include "hcc/synth.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>

#include "hcc/error.hpp"
#include "hcc/rng.hpp"

namespace hcc {

namespace {

constexpr double kAnswerFloor = 0.01;

Eigen::VectorXd normal_vector(Ctr64Stream& rng, int dim) {
    Eigen::VectorXd v(dim);
    for (int d = 0; d < dim; ++d) v(d) = rng.normal();
    return v;
}

// Positive score with the given mean and log-normal spread.
double lognormal(Ctr64Stream& rng, double mean, double spread) {
    return mean * std::exp(spread * rng.normal() - 0.5 * spread * spread);
}

TraceRecord generate_trace(const SynthConfig& c, const Eigen::VectorXd& corpus_direction, int index,
                           int& boundary) {
    Ctr64Stream rng(derive_seed(c.seed, static_cast<std::uint64_t>(index) + 1), 0);
    TraceRecord tr;
    char id[32];
    std::snprintf(id, sizeof(id), "synth-%05d", index);
    tr.id = id;
    tr.question = "Synthetic question " + std::to_string(index) + ".";
    tr.final_answer = "\\boxed{" + std::to_string(index % 97) + "}";
    tr.answer_token_count = 4;

    const int T = c.t_min + static_cast<int>(rng.below(static_cast<std::uint64_t>(c.t_max - c.t_min + 1)));
    const double frac = rng.uniform(c.boundary_frac_lo, c.boundary_frac_hi);
    boundary = std::clamp(static_cast<int>(std::lround(frac * T)), 1, T - 1);

    for (int t = 1; t <= T; ++t) {
        const bool kept = t <= boundary;
        SentenceRecord s;
        s.text = "Step " + std::to_string(t) + " of synthetic trace " + std::to_string(index) + ".";
        s.token_count = c.tokens_min + static_cast<int>(rng.below(static_cast<std::uint64_t>(c.tokens_max - c.tokens_min + 1)));
        const double nll_level = kept ? c.retained_nll : c.removed_nll;
        const double ent_level = kept ? c.retained_entropy : c.removed_entropy;
        for (int k = 0; k < s.token_count; ++k) {
            const double nll = lognormal(rng, nll_level, c.token_noise);
            const double ent = lognormal(rng, ent_level, c.token_noise);
            s.tokens.push_back({-nll, ent});
        }
        tr.sentences.push_back(std::move(s));
    }

    double nll = c.answer_nll_start + c.answer_noise * rng.normal();
    nll = std::max(nll, kAnswerFloor);
    auto answer_entropy = [&](double v) {
        return std::max(0.0, c.answer_entropy_ratio * v + c.answer_noise * rng.normal());
    };
    tr.answer_scores.push_back({0, nll, answer_entropy(nll)});
    for (int t = 1; t <= T; ++t) {
        const double step = t <= boundary ? -c.answer_nll_decrease : c.answer_nll_increase;
        nll = std::max(kAnswerFloor, nll + step + c.answer_noise * rng.normal());
        tr.answer_scores.push_back({t, nll, answer_entropy(nll)});
    }

    Eigen::VectorXd u = corpus_direction + (c.direction_jitter / std::sqrt(static_cast<double>(c.dim))) *
                                               normal_vector(rng, c.dim);
    u.normalize();
    tr.hidden.states.resize(T + 1, c.dim);
    // Stored at 4-byte precision so the sidecar round-trip is exact.
    Eigen::VectorXd h = (c.origin_scale * normal_vector(rng, c.dim)).cast<float>().cast<double>();
    tr.hidden.states.row(0) = h.transpose();
    for (int t = 1; t <= T; ++t) {
        const bool kept = t <= boundary;
        const double a = kept ? c.drift : c.drift * c.removed_attenuation;
        const double sigma = kept ? c.noise : c.removed_noise;
        h = (h + a * u + sigma * normal_vector(rng, c.dim)).cast<float>().cast<double>();
        tr.hidden.states.row(t) = h.transpose();
    }
    return tr;
}

}  // namespace

void SynthConfig::validate() const {
    auto fail = [](const std::string& what) { throw DataError("infeasible synth config: " + what); };
    if (trace_count < 0) fail("trace_count must be >= 0");
    if (t_min < 4) fail("t_min must be >= 4");
    if (t_min > t_max) fail("t_min exceeds t_max");
    if (dim < 1) fail("dim must be positive");
    if (!(boundary_frac_lo > 0.0 && boundary_frac_lo <= boundary_frac_hi && boundary_frac_hi < 1.0)) {
        fail("boundary fractions must satisfy 0 < lo <= hi < 1");
    }
    if (!(removed_attenuation > 0.0 && removed_attenuation < 1.0)) fail("removed_attenuation must lie in (0, 1)");
    if (!(removed_nll > retained_nll)) fail("removed_nll must exceed retained_nll");
    if (!(removed_entropy > retained_entropy)) fail("removed_entropy must exceed retained_entropy");
    if (!(retained_nll > 0.0 && retained_entropy > 0.0)) fail("score levels must be positive");
    if (drift <= 0.0 || noise < 0.0 || removed_noise < 0.0 || token_noise < 0.0 || answer_noise < 0.0) {
        fail("drift must be positive and noise scales non-negative");
    }
    if (tokens_min < 1 || tokens_min > tokens_max) fail("token range must satisfy 1 <= min <= max");
    if (answer_nll_start <= 0.0) fail("answer_nll_start must be positive");
}

Corpus generate(const SynthConfig& config) {
    config.validate();
    Corpus corpus;
    corpus.metadata.dim = config.dim;
    corpus.metadata.source = config.source;

    Ctr64Stream shared(config.seed, 0x44495245ULL);
    Eigen::VectorXd direction = normal_vector(shared, config.dim);
    direction.normalize();

    const int n = config.trace_count;
    std::vector<TraceRecord> traces(n);
    std::vector<int> boundaries(n);
#pragma omp parallel for schedule(dynamic)
    for (int i = 0; i < n; ++i) traces[i] = generate_trace(config, direction, i, boundaries[i]);

    for (int i = 0; i < n; ++i) {
        corpus.annotations[traces[i].id] = annotation_from_boundary(traces[i].num_sentences(), boundaries[i]);
        corpus.traces.push_back(std::move(traces[i]));
    }
    return corpus;
}

}  // namespace hcc
