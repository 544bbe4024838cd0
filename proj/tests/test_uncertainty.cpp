#include <doctest.h>

#include <algorithm>
#include <random>

#include "hcc/error.hpp"
#include "hcc/uncertainty.hpp"
#include "oracles.hpp"

using namespace hcc;

namespace {

SentenceRecord sentence(std::vector<double> logprobs, std::vector<double> entropies) {
    SentenceRecord s;
    s.text = "s";
    s.token_count = static_cast<int>(logprobs.size());
    for (std::size_t i = 0; i < logprobs.size(); ++i) s.tokens.push_back({logprobs[i], entropies[i]});
    return s;
}

// A trace whose answer NLLs over prefixes P_0..P_T are given.
TraceRecord with_answer_nll(const std::vector<double>& nll) {
    std::mt19937_64 rng(1);
    auto tr = testing::random_trace(rng, static_cast<int>(nll.size()) - 1, 2, "x");
    for (std::size_t t = 0; t < nll.size(); ++t) tr.answer_scores[t].nll = nll[t];
    return tr;
}

}  // namespace

TEST_SUITE("uncertainty") {

TEST_CASE("sentence_uncertainty examples") {
    const auto a = sentence_uncertainty(sentence({-1.0, -3.0}, {0.5, 1.5}));
    CHECK(a.nll == 2.0);
    CHECK(a.entropy == 1.0);
    const auto z = sentence_uncertainty(sentence({0.0}, {0.0}));
    CHECK(z.nll == 0.0);
    CHECK(z.entropy == 0.0);
}

TEST_CASE("sentence_uncertainty is permutation invariant and scale equivariant") {
    std::mt19937_64 rng(9);
    std::uniform_real_distribution<double> u(0.0, 4.0);
    for (int rep = 0; rep < 100; ++rep) {
        std::vector<double> lp(1 + rep % 11), en(lp.size());
        for (std::size_t i = 0; i < lp.size(); ++i) {
            lp[i] = -u(rng);
            en[i] = u(rng);
        }
        const auto base = sentence_uncertainty(sentence(lp, en));
        auto lp2 = lp, en2 = en;
        std::shuffle(lp2.begin(), lp2.end(), rng);
        std::shuffle(en2.begin(), en2.end(), rng);
        const auto perm = sentence_uncertainty(sentence(lp2, en2));
        CHECK(perm.nll == doctest::Approx(base.nll).epsilon(1e-14));
        CHECK(perm.entropy == doctest::Approx(base.entropy).epsilon(1e-14));
        const double k = 0.5 + u(rng);
        for (auto& v : lp) v *= k;
        CHECK(sentence_uncertainty(sentence(lp, en)).nll == doctest::Approx(k * base.nll).epsilon(1e-13));
    }
}

TEST_CASE("delta_ans differencing") {
    const auto s = uncertainty_series(with_answer_nll({3.0, 2.0, 2.5}));
    CHECK(s.delta_ans == std::vector<double>{1.0, -0.5});
    CHECK(s.answer_nll == std::vector<double>{2.0, 2.5});
    CHECK(s.answer_nll_p0 == 3.0);
    const auto flat = uncertainty_series(with_answer_nll({1.25, 1.25, 1.25, 1.25}));
    for (double d : flat.delta_ans) CHECK(d == 0.0);
}

TEST_CASE("series matches the brute-force oracle and telescopes") {
    std::mt19937_64 rng(31);
    const Corpus c = testing::random_corpus(rng, 100, 3, false, 1, 30);
    const auto series = corpus_uncertainty(c);
    for (std::size_t i = 0; i < c.traces.size(); ++i) {
        const auto& tr = c.traces[i];
        const auto& s = series[i];
        const int T = tr.num_sentences();
        REQUIRE(static_cast<int>(s.size()) == T);
        double sum = 0.0;
        for (int t = 1; t <= T; ++t) {
            const auto o = testing::oracle_sentence(tr.sentences[t - 1]);
            CHECK(std::abs(s.sent_nll[t - 1] - o.nll) <= 1e-12);
            CHECK(std::abs(s.sent_entropy[t - 1] - o.entropy) <= 1e-12);
            CHECK(s.delta_ans[t - 1] == tr.answer_scores[t - 1].nll - tr.answer_scores[t].nll);
            CHECK(s.answer_entropy[t - 1] == tr.answer_scores[t].entropy);
            sum += s.delta_ans[t - 1];
        }
        CHECK(std::abs(sum - (tr.answer_scores[0].nll - tr.answer_scores[T].nll)) <= 1e-12);
    }
}

TEST_CASE("position bins") {
    CHECK(position_bin(1, 3, 2) == 0);
    CHECK(position_bin(2, 3, 2) == 1);
    CHECK(position_bin(3, 3, 2) == 1);
    CHECK(position_bin(1, 1, 5) == 0);
    // Final bin is right-closed.
    CHECK(position_bin(10, 10, 4) == 3);
}

TEST_CASE("progressive curves: hand binning and partition") {
    Corpus c;
    auto tr = with_answer_nll({5.0, 1.0, 2.0, 3.0, 7.0});  // T = 4
    c.traces.push_back(tr);
    c.annotations["x"] = annotation_from_boundary(4, 3);
    const auto curves = progressive_curves(c, 2);
    // Retained ranks 1..3 -> positions {0, .5, 1} -> bins {0, 1, 1}.
    CHECK(curves.answer_nll[0][0].count == 1);
    CHECK(curves.answer_nll[0][0].mean == 1.0);
    CHECK(curves.answer_nll[0][1].count == 2);
    CHECK(curves.answer_nll[0][1].mean == 2.5);
    // Removed segment of length 1 lands in bin 0.
    CHECK(curves.answer_nll[1][0].count == 1);
    CHECK(curves.answer_nll[1][0].mean == 7.0);
    CHECK(curves.answer_nll[1][1].empty());
    CHECK(curves.answer_nll[0][0].stderr_ == 0.0);
    CHECK(curves.answer_nll[0][1].stderr_ == doctest::Approx(0.5));  // sd 0.7071 / sqrt 2

    std::mt19937_64 rng(4);
    const Corpus r = testing::random_corpus(rng, 50, 2, true, 1, 20);
    for (int bins : {2, 3, 7, 10}) {
        const auto cv = progressive_curves(r, bins);
        long total = 0;
        for (int s = 0; s < 2; ++s) {
            for (const auto& b : cv.answer_entropy[s]) total += b.count;
        }
        long expected = 0;
        for (const auto& t : r.traces) expected += t.num_sentences();
        CHECK(total == expected);
        CHECK(cv.contributing_sentences == expected);
    }
}

TEST_CASE("progressive curves errors") {
    std::mt19937_64 rng(4);
    Corpus c = testing::random_corpus(rng, 3, 2, false);
    CHECK_THROWS_AS(progressive_curves(c, 4), DataError);
    c.annotations[c.traces[0].id] = annotation_from_boundary(c.traces[0].num_sentences(), 0);
    CHECK_THROWS_AS(progressive_curves(c, 1), DataError);
}

TEST_CASE("boundary quadruple") {
    SUBCASE("single eligible trace reproduces its values") {
        std::mt19937_64 rng(8);
        auto tr = testing::random_trace(rng, 6, 2, "a");
        Corpus c;
        c.traces.push_back(tr);
        c.annotations["a"] = annotation_from_boundary(6, 3);
        const auto q = boundary_quadruple(c);
        const auto s = uncertainty_series(tr);
        CHECK(q.eligible_traces == 1);
        CHECK(*q.at(BoundaryPosition::K1, BoundaryCell::entropy).mean == s.sent_entropy[0]);
        CHECK(*q.at(BoundaryPosition::KT, BoundaryCell::nll).mean == s.sent_nll[2]);
        CHECK(*q.at(BoundaryPosition::C1, BoundaryCell::entropy_change).mean ==
              s.sent_entropy[3] - s.sent_entropy[2]);
        CHECK(*q.at(BoundaryPosition::CT, BoundaryCell::delta_ans_change).mean == s.delta_ans[5] - s.delta_ans[4]);
        CHECK(q.at(BoundaryPosition::CT, BoundaryCell::nll).stderr_ == 0.0);
        // No sentence precedes K1.
        CHECK_FALSE(q.at(BoundaryPosition::K1, BoundaryCell::entropy_change).mean.has_value());
        CHECK(q.at(BoundaryPosition::K1, BoundaryCell::entropy_change).skipped == 1);
    }
    SUBCASE("c* = T and c* = 0 are excluded") {
        std::mt19937_64 rng(8);
        Corpus c;
        c.traces.push_back(testing::random_trace(rng, 5, 2, "a"));
        c.traces.push_back(testing::random_trace(rng, 5, 2, "b"));
        c.traces.push_back(testing::random_trace(rng, 5, 2, "z"));
        c.annotations["a"] = annotation_from_boundary(5, 2);
        c.annotations["b"] = annotation_from_boundary(5, 5);
        c.annotations["z"] = annotation_from_boundary(5, 0);
        const auto q = boundary_quadruple(c);
        CHECK(q.eligible_traces == 1);
        CHECK(q.excluded_traces == 2);
    }
    SUBCASE("two traces average by hand") {
        Corpus c;
        auto a = with_answer_nll({4.0, 3.0, 1.0, 1.5});
        a.id = "a";
        auto b = with_answer_nll({2.0, 2.0, 2.5, 3.5, 3.0});
        b.id = "b";
        a.sentences[0] = sentence({-1.0}, {1.0});
        a.sentences[1] = sentence({-2.0}, {3.0});
        a.sentences[2] = sentence({-4.0}, {2.0});
        b.sentences[0] = sentence({-1.0, -1.0}, {0.5, 0.5});
        b.sentences[1] = sentence({-3.0}, {1.0});
        b.sentences[2] = sentence({-5.0}, {4.0});
        b.sentences[3] = sentence({-2.0}, {2.0});
        c.traces = {a, b};
        c.annotations["a"] = annotation_from_boundary(3, 2);
        c.annotations["b"] = annotation_from_boundary(4, 2);
        const auto q = boundary_quadruple(c);
        // K_T is sentence 2 in both; C_1 sentence 3; C_T sentence 3 (a) and 4 (b).
        CHECK(*q.at(BoundaryPosition::KT, BoundaryCell::entropy).mean == doctest::Approx((3.0 + 1.0) / 2));
        CHECK(*q.at(BoundaryPosition::KT, BoundaryCell::entropy_change).mean ==
              doctest::Approx((2.0 + 0.5) / 2));
        CHECK(*q.at(BoundaryPosition::C1, BoundaryCell::nll).mean == doctest::Approx((4.0 + 5.0) / 2));
        // delta_ans: a = [1, 2, -0.5]; b = [0, -0.5, -1, 0.5].
        CHECK(*q.at(BoundaryPosition::C1, BoundaryCell::delta_ans_change).mean ==
              doctest::Approx((-2.5 + -0.5) / 2));
        CHECK(*q.at(BoundaryPosition::CT, BoundaryCell::delta_ans_change).mean ==
              doctest::Approx((-2.5 + 1.5) / 2));
        CHECK(*q.at(BoundaryPosition::K1, BoundaryCell::nll).mean == doctest::Approx(1.0));
        CHECK(q.at(BoundaryPosition::CT, BoundaryCell::delta_ans_change).stderr_ == doctest::Approx(2.0));
    }
    SUBCASE("no eligible trace") {
        std::mt19937_64 rng(8);
        Corpus c;
        c.traces.push_back(testing::random_trace(rng, 3, 2, "a"));
        c.annotations["a"] = annotation_from_boundary(3, 3);
        CHECK_THROWS_AS(boundary_quadruple(c), DataError);
    }
}

TEST_CASE("perturbation statistics") {
    Corpus c;
    c.traces.push_back(with_answer_nll({3.0, 2.0, 2.5}));
    c.annotations["x"] = annotation_from_boundary(2, 1);
    const auto p = perturbation_stats(c);
    CHECK(p.nll[0] == std::vector<double>{1.0});
    CHECK(p.nll[1] == std::vector<double>{0.5});

    Corpus flat;
    flat.traces.push_back(with_answer_nll({1.0, 1.0, 1.0, 1.0}));
    flat.annotations["x"] = annotation_from_boundary(3, 2);
    const auto pf = perturbation_stats(flat);
    for (int s = 0; s < 2; ++s) {
        for (double v : pf.nll[s]) CHECK(v == 0.0);
    }

    std::mt19937_64 rng(6);
    const Corpus r = testing::random_corpus(rng, 40, 2, true);
    const auto pr = perturbation_stats(r);
    std::size_t total = 0;
    for (const auto& t : r.traces) total += t.sentences.size();
    CHECK(pr.nll[0].size() + pr.nll[1].size() == total);
    for (int s = 0; s < 2; ++s) {
        for (double v : pr.nll[s]) CHECK(v >= 0.0);
        CHECK(pr.logprob[s] == pr.nll[s]);
    }
}

}
