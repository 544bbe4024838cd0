#include <doctest.h>

#include <cmath>
#include <limits>
#include <random>

#include "hcc/error.hpp"
#include "hcc/model.hpp"
#include "hcc/synth.hpp"
#include "model_fixtures.hpp"

using namespace hcc;
using Eigen::VectorXd;

TEST_SUITE("model") {

TEST_CASE("init is deterministic, seed-dependent and shaped by the config") {
    const auto c = testing::tiny_config();
    const auto a = init_params(c, 5);
    const auto b = init_params(c, 5);
    const auto d = init_params(c, 6);
    CHECK(a == b);
    CHECK_FALSE(a == d);

    const int H = c.encoder_dim, E = c.encoded_dim(), Z = c.latent_dim, C = c.context_dim, D = c.input_dim;
    CHECK(a.enc_fwd.wz.rows() == H);
    CHECK(a.enc_fwd.wz.cols() == D);
    CHECK(a.enc_bwd.un.rows() == H);
    CHECK(a.enc_bwd.un.cols() == H);
    CHECK(a.post_mu_w.rows() == Z);
    CHECK(a.post_mu_w.cols() == E);
    CHECK(a.prior_lv_w.cols() == E);
    CHECK(a.prior_init_mu.size() == Z);
    CHECK(a.lat_w.rows() == C);
    CHECK(a.lat_w.cols() == Z);
    CHECK(a.ent_w.rows() == C);
    CHECK(a.ent_w.cols() == E);
    CHECK(a.start_state.size() == C);
    CHECK(a.cut_w.size() == C);
    CHECK(a.del_b.size() == 1);
    CHECK(a.alpha_geo(0) == 1.0);
    CHECK(a.alpha_ent(0) == 1.0);
    CHECK(a.norm_scale == VectorXd::Ones(C));
    CHECK(a.norm_shift == VectorXd::Zero(C));

    const std::size_t gru = 3 * (H * D + H * H + H);
    const std::size_t expected = 2 * gru + 2 * (Z * E + Z) + 2 * (Z * E + Z) + 2 * Z + (C * Z + C) +
                                 2 * (C * E + C + C + 1) + 2 + 2 * C + C + 2 * (C + 1);
    CHECK(a.size() == expected);

    // Weights lie within the documented uniform bound.
    CHECK(a.enc_fwd.wz.cwiseAbs().maxCoeff() <= 1.0 / std::sqrt(D));
    CHECK(a.enc_fwd.uz.cwiseAbs().maxCoeff() <= 1.0 / std::sqrt(H));

    auto causal = c;
    causal.bidirectional = false;
    const auto p = init_params(causal, 1);
    CHECK(p.enc_bwd.wz.size() == 0);
    CHECK(p.post_mu_w.cols() == H);
}

TEST_CASE("forward shapes and invariants") {
    std::mt19937_64 rng(1);
    const auto c = testing::tiny_config();
    auto p = init_params(c, 2);
    testing::jitter(p, rng, 0.3);
    for (int T : {1, 2, 7}) {
        const auto f = testing::random_features(rng, T, c.input_dim);
        const auto o = forward(c, p, f, ForwardMode::train(9));
        CHECK(o.cut_logits.size() == static_cast<std::size_t>(T + 1));
        CHECK(o.delete_probs.size() == static_cast<std::size_t>(T));
        CHECK(o.m.size() == static_cast<std::size_t>(T + 1));
        double total = 0.0;
        for (double q : o.cut_probabilities()) total += q;
        CHECK(std::abs(total - 1.0) <= 1e-9);
        for (double y : o.delete_probs) {
            CHECK(y > 0.0);
            CHECK(y < 1.0);
        }
        for (double k : o.kl) CHECK(k >= 0.0);
    }
}

TEST_CASE("infer mode is deterministic and uses the posterior mean") {
    std::mt19937_64 rng(4);
    const auto c = testing::tiny_config();
    const auto p = init_params(c, 3);
    const auto f = testing::random_features(rng, 5, c.input_dim);
    const auto a = forward(c, p, f, ForwardMode::infer());
    const auto b = forward(c, p, f, ForwardMode::infer());
    CHECK(a.cut_logits == b.cut_logits);
    CHECK(a.delete_probs == b.delete_probs);
    for (int i = 0; i < 5; ++i) CHECK(a.latent[i] == a.mu[i]);

    const auto s1 = forward(c, p, f, ForwardMode::train(1));
    const auto s2 = forward(c, p, f, ForwardMode::train(1));
    const auto s3 = forward(c, p, f, ForwardMode::train(2));
    CHECK(s1.cut_logits == s2.cut_logits);
    CHECK(s1.latent[0] != s3.latent[0]);
}

TEST_CASE("posterior equal to prior gives zero KL") {
    std::mt19937_64 rng(5);
    const auto c = testing::tiny_config();
    auto p = init_params(c, 4);
    testing::jitter(p, rng, 0.2);
    p.post_mu_w.setZero();
    p.post_lv_w.setZero();
    p.prior_mu_w.setZero();
    p.prior_lv_w.setZero();
    p.prior_mu_b = p.post_mu_b;
    p.prior_lv_b = p.post_lv_b;
    p.prior_init_mu = p.post_mu_b;
    p.prior_init_lv = p.post_lv_b;
    const auto o = forward(c, p, testing::random_features(rng, 6, c.input_dim), ForwardMode::train(3));
    for (double k : o.kl) CHECK(k == 0.0);
}

TEST_CASE("closed-form KL") {
    const VectorXd z = VectorXd::Zero(1), one = VectorXd::Ones(1);
    CHECK(kl_gaussians(z, z, z, z) == 0.0);
    CHECK(kl_gaussians(one, z, z, z) == doctest::Approx(0.5));
    CHECK(kl_gaussians(VectorXd::Constant(3, 0.3), VectorXd::Constant(3, -1.0), VectorXd::Constant(3, 0.3),
                       VectorXd::Constant(3, -1.0)) == 0.0);
}

TEST_CASE("KL matches a Monte Carlo estimate") {
    std::mt19937_64 rng(2026);
    std::normal_distribution<double> g;
    VectorXd mq(3), lq(3), mp(3), lp(3);
    mq << 0.5, -1.0, 0.2;
    lq << -0.5, 0.3, 0.0;
    mp << 0.0, -0.4, 1.0;
    lp << 0.2, -0.1, 0.5;
    const int n = 1000000;
    double acc = 0.0;
    for (int s = 0; s < n; ++s) {
        double log_ratio = 0.0;
        for (int d = 0; d < 3; ++d) {
            const double x = mq(d) + std::exp(0.5 * lq(d)) * g(rng);
            const double lq_x = -0.5 * (lq(d) + (x - mq(d)) * (x - mq(d)) / std::exp(lq(d)));
            const double lp_x = -0.5 * (lp(d) + (x - mp(d)) * (x - mp(d)) / std::exp(lp(d)));
            log_ratio += lq_x - lp_x;
        }
        acc += log_ratio;
    }
    CHECK(std::abs(acc / n - kl_gaussians(mq, lq, mp, lp)) <= 1e-2);
}

TEST_CASE("huber branches") {
    CHECK(huber(0.5, 1.0) == 0.125);
    CHECK(huber(2.0, 1.0) == 1.5);
    CHECK(huber(-2.0, 1.0) == 1.5);
    CHECK(huber(1.0, 1.0) == 0.5);
}

TEST_CASE("loss components") {
    const auto c = testing::tiny_config();
    ForwardOutput o;
    o.cut_logits = {0.7, 0.7, 0.7, 0.7};
    o.delete_probs = {0.0, 1.0, 1.0};
    o.kl = {0.0, 0.0, 0.0};
    o.uncertainty_hat = {0.0, 0.5, 2.0};
    o.progress_hat = {0.0, 0.0, 0.0};
    TraceTargets t;
    t.boundary = 1;
    t.labels = {0, 1, 1};
    t.uncertainty = {0.0, 0.0, 0.0};
    t.progress = {0.0, 0.0, 0.0};
    const auto l = loss(o, t, c);
    CHECK(l.cut == doctest::Approx(std::log(4.0)));
    // Probabilities are clamped, so exact labels cost -3 log(1 - 1e-7).
    CHECK(l.del == doctest::Approx(-3.0 * std::log1p(-kProbClamp)));
    CHECK(l.del < 1e-6);
    CHECK(l.ent == doctest::Approx(0.125 + 1.5));
    CHECK(l.geo == 0.0);
    CHECK(l.total == LossBreakdown::compose(l, c));

    t.boundary = 4;
    CHECK_THROWS_AS(loss(o, t, c), DataError);
    t.boundary = 1;
    t.labels.pop_back();
    CHECK_THROWS_AS(loss(o, t, c), DataError);
}

TEST_CASE("loss recomposition identity on random models") {
    std::mt19937_64 rng(8);
    for (int rep = 0; rep < 10; ++rep) {
        auto c = testing::tiny_config();
        c.lambda_del = 0.1 * rep;
        c.lambda_kl = 0.37;
        c.lambda_geo = 2.0;
        auto p = init_params(c, rep);
        testing::jitter(p, rng, 0.2);
        const auto f = testing::random_features(rng, 4, c.input_dim);
        const auto t = testing::random_targets(rng, 4);
        const auto l = loss(forward(c, p, f, ForwardMode::train(rep)), t, c);
        CHECK(l.total == l.cut + c.lambda_del * l.del + c.lambda_kl * l.kl + c.lambda_ent * l.ent +
                             c.lambda_geo * l.geo);
        CHECK(l.cut >= 0.0);
        CHECK(l.del >= 0.0);
        CHECK(l.kl >= 0.0);
        CHECK(l.ent >= 0.0);
        CHECK(l.geo >= 0.0);
    }
}

TEST_CASE("argmax and prediction") {
    const std::vector<double> a = {0, 3, 1};
    CHECK(argmax_first(a) == 1);
    const std::vector<double> tie = {0, 1, 5, 2, 5};
    CHECK(argmax_first(tie) == 2);

    std::mt19937_64 rng(3);
    std::normal_distribution<double> g;
    for (int rep = 0; rep < 100; ++rep) {
        std::vector<double> v(1 + rep % 9);
        for (auto& x : v) x = std::round(2.0 * g(rng));
        const int k = argmax_first(v);
        for (auto& x : v) x += 17.25;
        CHECK(argmax_first(v) == k);
    }
}

TEST_CASE("predict is deterministic and reports target units") {
    SynthConfig sc;
    sc.trace_count = 6;
    sc.dim = 6;
    const Corpus corpus = generate(sc);
    HccModel m;
    m.config = testing::tiny_config();
    m.params = init_params(m.config, 1);
    m.scaler = fit_scaler(corpus, m.config);
    for (const auto& tr : corpus.traces) {
        const auto a = predict(m, tr);
        const auto b = predict(m, tr);
        CHECK(a.boundary == b.boundary);
        CHECK(a.boundary == argmax_first(a.cut_logits));
        CHECK(a.delete_probs.size() == tr.sentences.size());
        const auto o = forward(m.config, m.params, make_features(tr, m.scaler), ForwardMode::infer());
        CHECK(a.uncertainty[0] == doctest::Approx(o.uncertainty_hat[0] * m.scaler.uncertainty_std +
                                                  m.scaler.uncertainty_mean));
        CHECK(a.progress[0] ==
              doctest::Approx(o.progress_hat[0] * m.scaler.progress_std + m.scaler.progress_mean));
    }
}

TEST_CASE("scaler standardizes inputs and targets over the corpus") {
    SynthConfig sc;
    sc.trace_count = 30;
    sc.dim = 6;
    const Corpus corpus = generate(sc);
    auto c = testing::tiny_config();
    const auto s = fit_scaler(corpus, c);
    VectorXd sum = VectorXd::Zero(6);
    double n = 0, u = 0;
    for (const auto& tr : corpus.traces) {
        const auto f = make_features(tr, s);
        for (Eigen::Index t = 0; t < f.inputs.rows(); ++t) sum += f.inputs.row(t).transpose();
        n += static_cast<double>(f.inputs.rows());
        const auto tt = make_targets(tr, corpus.annotations.at(tr.id), s, c);
        for (double v : tt.uncertainty) u += v;
        // Inputs are differences from h_0.
        const Eigen::RowVectorXd x1 =
            (tr.hidden.row(1) - tr.hidden.row(0)).cwiseQuotient(s.input_std.transpose()) -
            s.input_mean.cwiseQuotient(s.input_std).transpose();
        CHECK((f.inputs.row(0) - x1).cwiseAbs().maxCoeff() <= 1e-12);
    }
    CHECK((sum / n).cwiseAbs().maxCoeff() <= 1e-9);
    CHECK(std::abs(u / n) <= 1e-9);
}

TEST_CASE("config validation") {
    auto c = testing::tiny_config();
    CHECK_NOTHROW(c.validate());
    c.logvar_lo = 9.0;
    CHECK_THROWS_AS(c.validate(), DataError);
    c = testing::tiny_config();
    c.lambda_kl = -1.0;
    CHECK_THROWS_AS(c.validate(), DataError);
    c = testing::tiny_config();
    c.context_dim = 0;
    CHECK_THROWS_AS(init_params(c, 0), DataError);
}

TEST_CASE("non-finite intermediates name the step and head") {
    std::mt19937_64 rng(1);
    const auto c = testing::tiny_config();
    auto p = init_params(c, 1);
    auto f = testing::random_features(rng, 3, c.input_dim);
    p.ent_out_b(0) = std::numeric_limits<double>::infinity();
    CHECK_THROWS_WITH_AS(forward(c, p, f, ForwardMode::infer()), doctest::Contains("step 1 in uncertainty head"),
                         DataError);
}

}
