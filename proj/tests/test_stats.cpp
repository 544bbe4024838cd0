#include <doctest.h>

#include <algorithm>
#include <random>

#include "hcc/error.hpp"
#include "hcc/rng.hpp"
#include "hcc/stats.hpp"
#include "oracles.hpp"

using namespace hcc;

namespace {

MetricPairs pairs_of(std::vector<std::pair<double, double>> v) {
    MetricPairs m{"m", {}};
    for (auto [a, b] : v) m.removed_retained.emplace_back(a, b);
    return m;
}

}  // namespace

TEST_SUITE("stats") {

TEST_CASE("paired row by hand") {
    BootstrapOptions opt;
    opt.resamples = 1000;
    const auto r = paired_row(pairs_of({{1, 3}, {2, 4}}), opt);
    CHECK(r.removed_mean == 1.5);
    CHECK(r.retained_mean == 3.5);
    CHECK(r.frac_removed_lower == 1.0);
    CHECK(r.frac_removed_higher == 0.0);
    CHECK(r.delta_mean == -2.0);
    CHECK(r.ci_low == -2.0);
    CHECK(r.ci_high == -2.0);
}

TEST_CASE("equal pairs give zero fractions and a zero interval") {
    BootstrapOptions opt;
    opt.resamples = 500;
    const auto r = paired_row(pairs_of({{1, 1}, {2, 2}, {5, 5}}), opt);
    CHECK(r.frac_removed_lower == 0.0);
    CHECK(r.frac_removed_higher == 0.0);
    CHECK(r.ci_low == 0.0);
    CHECK(r.ci_high == 0.0);
}

TEST_CASE("ties count in neither fraction and absent groups are excluded") {
    MetricPairs m = pairs_of({{1, 2}, {3, 3}, {5, 4}, {0, 1}});
    m.removed_retained.emplace_back(std::nullopt, 1.0);
    m.removed_retained.emplace_back(2.0, std::nullopt);
    BootstrapOptions opt;
    opt.resamples = 100;
    const auto r = paired_row(m, opt);
    CHECK(r.eligible == 4);
    CHECK(r.excluded == 2);
    CHECK(r.frac_removed_lower == 0.5);
    CHECK(r.frac_removed_higher == 0.25);
    CHECK(r.frac_removed_lower + r.frac_removed_higher <= 1.0);
}

TEST_CASE("paired row preconditions") {
    BootstrapOptions opt;
    CHECK_THROWS_AS(paired_row(pairs_of({{1, 2}}), opt), DataError);
    opt.resamples = 99;
    CHECK_THROWS_AS(paired_row(pairs_of({{1, 2}, {2, 3}}), opt), DataError);
}

TEST_CASE("bootstrap is deterministic and its interval lies within the sample range") {
    std::mt19937_64 rng(17);
    std::normal_distribution<double> g(-1.0, 2.0);
    for (int rep = 0; rep < 20; ++rep) {
        std::vector<std::pair<double, double>> v;
        for (int i = 0; i < 5 + rep * 3; ++i) v.emplace_back(g(rng), g(rng));
        BootstrapOptions opt;
        opt.resamples = 2000;
        opt.seed = static_cast<std::uint64_t>(rep);
        const auto a = paired_row(pairs_of(v), opt);
        const auto b = paired_row(pairs_of(v), opt);
        CHECK(a.ci_low == b.ci_low);
        CHECK(a.ci_high == b.ci_high);
        double lo = 1e300, hi = -1e300;
        for (auto [x, y] : v) {
            lo = std::min(lo, x - y);
            hi = std::max(hi, x - y);
        }
        CHECK(a.ci_low <= a.ci_high);
        CHECK(a.ci_low >= lo);
        CHECK(a.ci_high <= hi);
    }
}

TEST_CASE("bootstrap resamples follow the documented generator") {
    const std::vector<double> values = {3.0, -1.0, 4.0, 1.5, 9.0};
    const auto means = bootstrap_means(values, 50, 123);
    for (int b = 0; b < 50; ++b) {
        // Resample b draws index i from counter i of ctr64(seed, stream b).
        const Ctr64 gen(123, static_cast<std::uint64_t>(b));
        double sum = 0.0;
        for (std::uint64_t i = 0; i < values.size(); ++i) {
            const auto wide = static_cast<unsigned __int128>(gen.bits(i)) * values.size();
            sum += values[static_cast<std::size_t>(wide >> 64)];
        }
        CHECK(means[b] == sum / 5.0);
    }
}

TEST_CASE("percentile interval of a known sample") {
    std::vector<double> sorted(101);
    for (int i = 0; i <= 100; ++i) sorted[i] = i;
    CHECK(quantile_sorted(sorted, 0.025) == doctest::Approx(2.5));
    CHECK(quantile_sorted(sorted, 0.975) == doctest::Approx(97.5));
    CHECK(quantile_sorted(sorted, 0.0) == 0.0);
    CHECK(quantile_sorted(sorted, 1.0) == 100.0);
    const std::vector<double> two = {1.0, 2.0};
    CHECK(quantile_sorted(two, 0.5) == 1.5);
}

TEST_CASE("bootstrap interval covers the mean of a normal sample") {
    std::mt19937_64 rng(2);
    std::normal_distribution<double> g(0.5, 1.0);
    std::vector<double> v(400);
    for (auto& x : v) x = g(rng);
    BootstrapOptions opt;
    const auto [lo, hi] = percentile_interval(v, opt);
    double mean = 0.0;
    for (double x : v) mean += x;
    mean /= static_cast<double>(v.size());
    CHECK(lo < mean);
    CHECK(hi > mean);
    // Half-width close to 1.96 * sd / sqrt(n).
    CHECK((hi - lo) / 2.0 == doctest::Approx(1.96 / 20.0).epsilon(0.15));
}

TEST_CASE("ecdf") {
    const std::vector<double> v = {2, 1, 2};
    const auto e = ecdf(v);
    REQUIRE(e.size() == 2);
    CHECK(e[0].x == 1.0);
    CHECK(e[0].fraction == doctest::Approx(1.0 / 3.0));
    CHECK(e[1].x == 2.0);
    CHECK(e[1].fraction == 1.0);

    const std::vector<double> one = {4.5};
    CHECK(ecdf(one).size() == 1);
    CHECK(ecdf(one)[0].fraction == 1.0);
    CHECK_THROWS_AS(ecdf(std::vector<double>{}), DataError);

    std::mt19937_64 rng(1);
    std::uniform_int_distribution<int> d(0, 20);
    for (int rep = 0; rep < 50; ++rep) {
        std::vector<double> w(1 + rep);
        for (auto& x : w) x = d(rng);
        const auto pts = ecdf(w);
        for (std::size_t i = 1; i < pts.size(); ++i) {
            CHECK(pts[i].x > pts[i - 1].x);
            CHECK(pts[i].fraction >= pts[i - 1].fraction);
        }
        CHECK(pts.back().fraction == 1.0);
        // Each step equals the share of values <= x.
        for (const auto& p : pts) {
            const auto le = std::count_if(w.begin(), w.end(), [&](double x) { return x <= p.x; });
            CHECK(p.fraction == doctest::Approx(static_cast<double>(le) / w.size()));
        }
    }
}

TEST_CASE("self-consistency arithmetic") {
    std::mt19937_64 rng(3);
    Corpus c;
    auto a = testing::random_trace(rng, 4, 2, "a");
    for (auto& s : a.sentences) {
        s.token_count = 2;
        s.tokens.assign(2, TokenScore{-1.0, 1.0});
    }
    c.traces.push_back(a);  // 8 tokens
    std::map<std::string, CutPrediction> p;
    p["a"] = {3, {0, 0, 0, 1}};
    auto r = self_consistency(p, c);
    CHECK(r.phase_rate == 1.0);
    CHECK(r.sentence_ratio == 0.25);
    CHECK(r.avg_len == 8.0);

    p["a"].boundary = 4;
    r = self_consistency(p, c);
    CHECK(r.phase_rate == 0.0);
    CHECK(r.sentence_ratio == 0.0);

    auto b = testing::random_trace(rng, 2, 2, "b");
    for (auto& s : b.sentences) {
        s.token_count = 5;
        s.tokens.assign(5, TokenScore{-1.0, 1.0});
    }
    auto a2 = a;
    a2.sentences.resize(1);
    a2.sentences[0].token_count = 10;
    a2.sentences[0].tokens.assign(10, TokenScore{-1.0, 1.0});
    Corpus two;
    two.traces = {a2, b};
    two.traces[1].sentences[1].token_count = 15;
    two.traces[1].sentences[1].tokens.assign(15, TokenScore{-1.0, 1.0});
    std::map<std::string, CutPrediction> q;
    q["a"] = {1, {0}};
    q["b"] = {0, {1, 1}};
    r = self_consistency(q, two);
    CHECK(r.avg_len == 15.0);
    CHECK(r.phase_rate == 0.5);
    CHECK(r.sentence_ratio == 0.5);

    q.erase("b");
    CHECK_THROWS_AS(self_consistency(q, two), DataError);
    CHECK_THROWS_AS(self_consistency(q, Corpus{}), DataError);
}

}
