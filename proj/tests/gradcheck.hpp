#pragma once

// Central finite differences against the analytic gradient.

#include <cmath>
#include <random>
#include <string>

#include "hcc/model.hpp"
#include "model_fixtures.hpp"

namespace testing {

// Below this magnitude the difference quotient is dominated by roundoff in the
// loss (about 1e-10 for h = 1e-5), so entries are compared to 1e-9 absolute.
inline constexpr double kFloor = 1e-5;

struct GradCheck {
    double worst_rel = 0.0;
    std::string worst_name;
    long checked = 0;
    long below_floor = 0;
};

/// Relative error |a - n| / max(kFloor, |a| + |n|) over `per_tensor` randomly
/// chosen entries of every tensor, or over all entries when per_tensor <= 0.
inline GradCheck check_gradients(const hcc::HccConfig& c, const hcc::HccParameters& params,
                                 const hcc::TraceFeatures& f, const hcc::TraceTargets& t,
                                 const hcc::ForwardMode& mode, std::mt19937_64& rng, int per_tensor = 4,
                                 double h = 1e-5) {
    hcc::HccParameters grad = params.zeros_like();
    hcc::gradients(c, params, f, t, mode, grad);
    GradCheck out;
    hcc::HccParameters probe = params;
    auto probe_spans = probe.spans();
    const auto grad_spans = grad.spans();
    std::vector<std::string> names;
    params.visit([&](const std::string& name, const auto&) { names.push_back(name); });
    for (std::size_t k = 0; k < probe_spans.size(); ++k) {
        auto s = probe_spans[k];
        if (s.empty()) continue;
        std::uniform_int_distribution<std::size_t> pick(0, s.size() - 1);
        const std::size_t count = per_tensor > 0 ? static_cast<std::size_t>(per_tensor) : s.size();
        for (std::size_t rep = 0; rep < count; ++rep) {
            const std::size_t j = per_tensor > 0 ? pick(rng) : rep;
            const double saved = s[j];
            s[j] = saved + h;
            const double up = hcc::loss(hcc::forward(c, probe, f, mode), t, c).total;
            s[j] = saved - h;
            const double down = hcc::loss(hcc::forward(c, probe, f, mode), t, c).total;
            s[j] = saved;
            const double numeric = (up - down) / (2.0 * h);
            const double analytic = grad_spans[k][j];
            const double rel = std::abs(analytic - numeric) / std::max(kFloor, std::abs(analytic) + std::abs(numeric));
            ++out.checked;
            if (std::abs(analytic) + std::abs(numeric) < kFloor) ++out.below_floor;
            if (rel > out.worst_rel) {
                out.worst_rel = rel;
                out.worst_name = names[k] + "[" + std::to_string(j) + "]";
            }
        }
    }
    return out;
}

/// Small random model configuration for gradient checks.
inline hcc::HccConfig random_small_config(std::mt19937_64& rng, int index) {
    auto c = tiny_config(static_cast<std::uint64_t>(index));
    std::uniform_real_distribution<double> u(0.05, 1.5);
    c.bidirectional = index % 4 != 3;
    c.lambda_del = u(rng);
    c.lambda_kl = u(rng);
    c.lambda_ent = u(rng);
    c.lambda_geo = u(rng);
    c.huber_delta = index % 2 == 0 ? 1.0 : 0.3;
    return c;
}

}  // namespace testing
