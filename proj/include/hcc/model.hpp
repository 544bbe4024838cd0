#pragma once

// Boundary proxy: a gated recurrent sentence encoder, a sequential diagonal
// Gaussian latent with a learned prior, uncertainty and progress regression
// heads, gated fusion with layer normalization, and cut/deletion heads.
//
// Gradients are computed by hand-written reverse-mode differentiation of the
// full objective (see gradients()).

#include <cstdint>
#include <span>
#include <string>
#include <string_view>
#include <vector>

#include <Eigen/Core>

#include "hcc/corpus.hpp"

namespace hcc {

enum class UncertaintyTarget { sentence_nll, sentence_entropy };
enum class ProgressTarget { prog_per_token, forward_progress, efficiency };

std::string_view to_string(UncertaintyTarget t);
std::string_view to_string(ProgressTarget t);

struct HccConfig {
    int input_dim = 32;
    int encoder_dim = 256;  // per direction
    int latent_dim = 32;
    int context_dim = 64;
    bool bidirectional = false;  // true adds a reverse-direction encoder

    double lambda_del = 1.0;
    double lambda_kl = 0.01;
    double lambda_ent = 0.1;
    double lambda_geo = 0.1;
    double huber_delta = 1.0;
    double logvar_lo = -8.0;
    double logvar_hi = 8.0;

    double learning_rate = 2e-3;
    int epochs = 40;
    int batch_size = 8;
    std::uint64_t seed = 0;
    double grad_clip = 5.0;  // global-norm clip; <= 0 disables

    UncertaintyTarget uncertainty_target = UncertaintyTarget::sentence_nll;
    ProgressTarget progress_target = ProgressTarget::prog_per_token;
    double epsilon = 1e-8;  // geometry guard for progress targets

    int encoded_dim() const { return bidirectional ? 2 * encoder_dim : encoder_dim; }

    /// Throws DataError naming the first invalid field.
    void validate() const;

    bool operator==(const HccConfig&) const = default;
};

struct GruParams {
    Eigen::MatrixXd wz, wr, wn;  // hidden x input
    Eigen::MatrixXd uz, ur, un;  // hidden x hidden
    Eigen::VectorXd bz, br, bn;
};

struct HccParameters {
    GruParams enc_fwd;
    GruParams enc_bwd;  // empty when the encoder is causal

    Eigen::MatrixXd post_mu_w, post_lv_w;  // latent x encoded
    Eigen::VectorXd post_mu_b, post_lv_b;
    Eigen::MatrixXd prior_mu_w, prior_lv_w;  // latent x encoded, consumes previous state
    Eigen::VectorXd prior_mu_b, prior_lv_b;
    Eigen::VectorXd prior_init_mu, prior_init_lv;  // prior for the first sentence

    Eigen::MatrixXd lat_w;  // context x latent
    Eigen::VectorXd lat_b;

    Eigen::MatrixXd ent_w;  // context x encoded
    Eigen::VectorXd ent_b, ent_out_w, ent_out_b;
    Eigen::MatrixXd geo_w;
    Eigen::VectorXd geo_b, geo_out_w, geo_out_b;

    Eigen::VectorXd alpha_geo, alpha_ent;  // scalar gates, size 1
    Eigen::VectorXd norm_scale, norm_shift;
    Eigen::VectorXd start_state;  // m_0
    Eigen::VectorXd cut_w, cut_b;
    Eigen::VectorXd del_w, del_b;

    /// Calls f(name, tensor) for every parameter tensor in a fixed order.
    template <typename F>
    void visit(F&& f);
    template <typename F>
    void visit(F&& f) const;

    std::vector<std::span<double>> spans();
    std::vector<std::span<const double>> spans() const;
    std::size_t size() const;

    /// Same shapes, all zeros.
    HccParameters zeros_like() const;
    void set_zero();
    HccParameters& operator+=(const HccParameters& o);
    HccParameters& operator*=(double k);

    bool operator==(const HccParameters& o) const;
};

/// Deterministic scaled-uniform initialization: weights ~ U(-1/sqrt(fan_in),
/// 1/sqrt(fan_in)) drawn from Ctr64(seed, tensor index); biases zero except
/// the GRU update-gate bias; gates 1; normalization scale 1, shift 0.
HccParameters init_params(const HccConfig& config, std::uint64_t seed);

/// Corpus statistics used to standardize encoder inputs and regression targets.
struct FeatureScaler {
    Eigen::VectorXd input_mean;
    Eigen::VectorXd input_std;
    double uncertainty_mean = 0.0;
    double uncertainty_std = 1.0;
    double progress_mean = 0.0;
    double progress_std = 1.0;

    bool operator==(const FeatureScaler& o) const;
};

struct TraceFeatures {
    RowMatrix inputs;  // T x input_dim, standardized h_t - h_0
    int num_sentences() const { return static_cast<int>(inputs.rows()); }
};

struct TraceTargets {
    int boundary = 0;
    std::vector<int> labels;
    std::vector<double> uncertainty;  // standardized
    std::vector<double> progress;     // standardized
};

/// Raw (unstandardized) regression targets of one trace.
std::vector<double> raw_uncertainty_target(const TraceRecord& trace, const HccConfig& config);
std::vector<double> raw_progress_target(const TraceRecord& trace, const HccConfig& config);

FeatureScaler fit_scaler(const Corpus& corpus, const HccConfig& config);
TraceFeatures make_features(const TraceRecord& trace, const FeatureScaler& scaler);
TraceTargets make_targets(const TraceRecord& trace, const EditorAnnotation& annotation,
                          const FeatureScaler& scaler, const HccConfig& config);

struct ForwardMode {
    bool sample = false;  // train mode: z = mu + sigma * eta
    std::uint64_t seed = 0;

    static ForwardMode infer() { return {}; }
    static ForwardMode train(std::uint64_t seed) { return {true, seed}; }
};

/// Cached per-step state of one recurrent direction.
struct GruTrace {
    std::vector<Eigen::VectorXd> prev, z, r, n, out;  // indexed by sentence t-1
};

struct ForwardOutput {
    GruTrace fwd, bwd;
    std::vector<Eigen::VectorXd> encoded;  // h~_t
    std::vector<Eigen::VectorXd> mu, logvar, logvar_raw;
    std::vector<Eigen::VectorXd> prior_mu, prior_logvar, prior_logvar_raw;
    std::vector<Eigen::VectorXd> noise, latent;
    std::vector<Eigen::VectorXd> lat_out;  // b_t
    std::vector<Eigen::VectorXd> s_ent, s_geo;
    std::vector<double> uncertainty_hat, progress_hat;
    std::vector<Eigen::VectorXd> fused;  // pre-normalization sum
    std::vector<Eigen::VectorXd> normalized;  // x_hat
    std::vector<double> norm_std;
    std::vector<Eigen::VectorXd> m;  // m_0..m_T
    std::vector<double> cut_logits;  // pi_0..pi_T
    std::vector<double> delete_logits;
    std::vector<double> delete_probs;  // y_hat_1..y_hat_T
    std::vector<double> kl;

    int num_sentences() const { return static_cast<int>(delete_probs.size()); }
    std::vector<double> cut_probabilities() const;
};

ForwardOutput forward(const HccConfig& config, const HccParameters& params, const TraceFeatures& features,
                      const ForwardMode& mode);

/// KL(N(mu_q, diag e^lv_q) || N(mu_p, diag e^lv_p)), summed over dimensions.
double kl_gaussians(const Eigen::VectorXd& mu_q, const Eigen::VectorXd& logvar_q, const Eigen::VectorXd& mu_p,
                    const Eigen::VectorXd& logvar_p);

double huber(double residual, double delta);

inline constexpr double kProbClamp = 1e-7;

struct LossBreakdown {
    double cut = 0.0;
    double del = 0.0;
    double kl = 0.0;
    double ent = 0.0;
    double geo = 0.0;
    double total = 0.0;

    static double compose(const LossBreakdown& l, const HccConfig& c) {
        return l.cut + c.lambda_del * l.del + c.lambda_kl * l.kl + c.lambda_ent * l.ent + c.lambda_geo * l.geo;
    }
    LossBreakdown& operator+=(const LossBreakdown& o);
    LossBreakdown& operator*=(double k);
};

LossBreakdown loss(const ForwardOutput& out, const TraceTargets& targets, const HccConfig& config);

/// Loss and exact gradient of the total loss for one trace. In sampling mode
/// the noise is held fixed, giving the pathwise derivative.
LossBreakdown gradients(const HccConfig& config, const HccParameters& params, const TraceFeatures& features,
                        const TraceTargets& targets, const ForwardMode& mode, HccParameters& grad);

struct Prediction {
    int boundary = 0;
    std::vector<double> delete_probs;
    std::vector<double> uncertainty;  // target units
    std::vector<double> progress;     // target units
    std::vector<double> cut_logits;
};

/// Index of the largest logit; ties resolve to the smallest index.
int argmax_first(std::span<const double> logits);

struct HccModel {
    HccConfig config;
    HccParameters params;
    FeatureScaler scaler;
};

Prediction predict(const HccModel& model, const TraceRecord& trace);

// ---------------------------------------------------------------------------

namespace detail {

template <typename Gru, typename F>
void visit_gru(const std::string& p, Gru& g, F& f) {
    f(p + ".wz", g.wz);
    f(p + ".wr", g.wr);
    f(p + ".wn", g.wn);
    f(p + ".uz", g.uz);
    f(p + ".ur", g.ur);
    f(p + ".un", g.un);
    f(p + ".bz", g.bz);
    f(p + ".br", g.br);
    f(p + ".bn", g.bn);
}

// Shared by the const and mutable visitors; Self is (const) HccParameters.
template <typename Self, typename F>
void visit_params(Self& p, F& f) {
    visit_gru("enc.fwd", p.enc_fwd, f);
    visit_gru("enc.bwd", p.enc_bwd, f);
    f(std::string("post.mu.w"), p.post_mu_w);
    f(std::string("post.mu.b"), p.post_mu_b);
    f(std::string("post.lv.w"), p.post_lv_w);
    f(std::string("post.lv.b"), p.post_lv_b);
    f(std::string("prior.mu.w"), p.prior_mu_w);
    f(std::string("prior.mu.b"), p.prior_mu_b);
    f(std::string("prior.lv.w"), p.prior_lv_w);
    f(std::string("prior.lv.b"), p.prior_lv_b);
    f(std::string("prior.init_mu"), p.prior_init_mu);
    f(std::string("prior.init_lv"), p.prior_init_lv);
    f(std::string("lat.w"), p.lat_w);
    f(std::string("lat.b"), p.lat_b);
    f(std::string("ent.w"), p.ent_w);
    f(std::string("ent.b"), p.ent_b);
    f(std::string("ent.out.w"), p.ent_out_w);
    f(std::string("ent.out.b"), p.ent_out_b);
    f(std::string("geo.w"), p.geo_w);
    f(std::string("geo.b"), p.geo_b);
    f(std::string("geo.out.w"), p.geo_out_w);
    f(std::string("geo.out.b"), p.geo_out_b);
    f(std::string("gate.geo"), p.alpha_geo);
    f(std::string("gate.ent"), p.alpha_ent);
    f(std::string("norm.scale"), p.norm_scale);
    f(std::string("norm.shift"), p.norm_shift);
    f(std::string("start_state"), p.start_state);
    f(std::string("cut.w"), p.cut_w);
    f(std::string("cut.b"), p.cut_b);
    f(std::string("del.w"), p.del_w);
    f(std::string("del.b"), p.del_b);
}

}  // namespace detail

template <typename F>
void HccParameters::visit(F&& f) {
    detail::visit_params(*this, f);
}

template <typename F>
void HccParameters::visit(F&& f) const {
    detail::visit_params(*this, f);
}

}  // namespace hcc
