#pragma once

// Synthetic corpora with planted post-conclusion boundaries.
//
// Retained sentences move the hidden state along a trace direction u with
// isotropic noise; removed sentences move along u with attenuated drift and
// larger noise. Removed sentences carry higher token NLL/entropy, and the
// answer NLL falls across retained prefixes and rises across removed ones.
// All signatures hold in expectation only.

#include <cstdint>
#include <string>
#include <utility>
#include <vector>

#include "hcc/corpus.hpp"
#include "hcc/kv_config.hpp"

namespace hcc {

struct SynthConfig {
    int trace_count = 200;
    int t_min = 12;
    int t_max = 40;
    int dim = 32;
    double boundary_frac_lo = 0.5;
    double boundary_frac_hi = 0.9;

    double drift = 1.0;
    double noise = 0.1;
    double removed_attenuation = 0.3;
    double removed_noise = 0.12;
    double direction_jitter = 0.25;  // per-trace deviation of u from the corpus direction
    double origin_scale = 1.0;

    double retained_nll = 1.0;
    double removed_nll = 1.6;
    double retained_entropy = 1.2;
    double removed_entropy = 1.8;
    double token_noise = 0.5;  // log-normal spread of per-token scores

    double answer_nll_start = 2.5;
    double answer_nll_decrease = 0.05;
    double answer_nll_increase = 0.03;
    double answer_noise = 0.02;
    double answer_entropy_ratio = 0.9;

    int tokens_min = 8;
    int tokens_max = 40;
    std::uint64_t seed = 0;
    std::string source = "synthetic";

    /// Throws DataError for infeasible settings.
    void validate() const;

    bool operator==(const SynthConfig&) const = default;
};

void apply_key_values(SynthConfig& config, const KeyValues& kv);
std::vector<std::pair<std::string, std::string>> to_key_values(const SynthConfig& config);

/// One key=value line per field, in declaration order; parse_key_values of
/// the result reproduces the config.
std::string describe(const SynthConfig& config);

/// Deterministic given config.seed; traces are generated in parallel from
/// per-trace seeds and stored in index order. Every trace is annotated.
Corpus generate(const SynthConfig& config);

}  // namespace hcc
