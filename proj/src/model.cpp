#include "hcc/model.hpp"

#include <algorithm>
#include <cmath>
#include <type_traits>

#include "hcc/error.hpp"
#include "hcc/geometry.hpp"
#include "hcc/rng.hpp"
#include "hcc/uncertainty.hpp"

namespace hcc {

namespace {

using Eigen::MatrixXd;
using Eigen::VectorXd;

constexpr double kNormEps = 1e-5;

VectorXd sigmoid(const VectorXd& x) { return (1.0 + (-x.array()).exp()).inverse().matrix(); }

double sigmoid(double x) { return 1.0 / (1.0 + std::exp(-x)); }

VectorXd clamp(const VectorXd& x, double lo, double hi) { return x.cwiseMax(lo).cwiseMin(hi); }

VectorXd clamp_mask(const VectorXd& raw, double lo, double hi) {
    return ((raw.array() >= lo) && (raw.array() <= hi)).cast<double>().matrix();
}

void check_finite(const VectorXd& v, int t, const char* head) {
    if (!v.allFinite()) {
        throw DataError("non-finite value at step " + std::to_string(t) + " in " + head);
    }
}

void check_finite(double v, int t, const char* head) {
    if (!std::isfinite(v)) {
        throw DataError("non-finite value at step " + std::to_string(t) + " in " + head);
    }
}

void shape_gru(GruParams& g, int hidden, int input) {
    g.wz = MatrixXd::Zero(hidden, input);
    g.wr = MatrixXd::Zero(hidden, input);
    g.wn = MatrixXd::Zero(hidden, input);
    g.uz = MatrixXd::Zero(hidden, hidden);
    g.ur = MatrixXd::Zero(hidden, hidden);
    g.un = MatrixXd::Zero(hidden, hidden);
    g.bz = VectorXd::Zero(hidden);
    g.br = VectorXd::Zero(hidden);
    g.bn = VectorXd::Zero(hidden);
}

HccParameters shaped_zeros(const HccConfig& c) {
    HccParameters p;
    const int E = c.encoded_dim();
    const int Z = c.latent_dim;
    const int C = c.context_dim;
    shape_gru(p.enc_fwd, c.encoder_dim, c.input_dim);
    shape_gru(p.enc_bwd, c.bidirectional ? c.encoder_dim : 0, c.bidirectional ? c.input_dim : 0);
    p.post_mu_w = MatrixXd::Zero(Z, E);
    p.post_lv_w = MatrixXd::Zero(Z, E);
    p.post_mu_b = VectorXd::Zero(Z);
    p.post_lv_b = VectorXd::Zero(Z);
    p.prior_mu_w = MatrixXd::Zero(Z, E);
    p.prior_lv_w = MatrixXd::Zero(Z, E);
    p.prior_mu_b = VectorXd::Zero(Z);
    p.prior_lv_b = VectorXd::Zero(Z);
    p.prior_init_mu = VectorXd::Zero(Z);
    p.prior_init_lv = VectorXd::Zero(Z);
    p.lat_w = MatrixXd::Zero(C, Z);
    p.lat_b = VectorXd::Zero(C);
    p.ent_w = MatrixXd::Zero(C, E);
    p.ent_b = VectorXd::Zero(C);
    p.ent_out_w = VectorXd::Zero(C);
    p.ent_out_b = VectorXd::Zero(1);
    p.geo_w = MatrixXd::Zero(C, E);
    p.geo_b = VectorXd::Zero(C);
    p.geo_out_w = VectorXd::Zero(C);
    p.geo_out_b = VectorXd::Zero(1);
    p.alpha_geo = VectorXd::Zero(1);
    p.alpha_ent = VectorXd::Zero(1);
    p.norm_scale = VectorXd::Zero(C);
    p.norm_shift = VectorXd::Zero(C);
    p.start_state = VectorXd::Zero(C);
    p.cut_w = VectorXd::Zero(C);
    p.cut_b = VectorXd::Zero(1);
    p.del_w = VectorXd::Zero(C);
    p.del_b = VectorXd::Zero(1);
    return p;
}

struct GruStep {
    VectorXd z, r, n, out;
};

GruStep gru_step(const GruParams& g, const VectorXd& x, const VectorXd& prev) {
    GruStep s;
    s.z = sigmoid(g.wz * x + g.uz * prev + g.bz);
    s.r = sigmoid(g.wr * x + g.ur * prev + g.br);
    const VectorXd gated = s.r.cwiseProduct(prev);
    s.n = (g.wn * x + g.un * gated + g.bn).array().tanh().matrix();
    s.out = (1.0 - s.z.array()).matrix().cwiseProduct(s.n) + s.z.cwiseProduct(prev);
    return s;
}

void run_gru(const GruParams& g, const TraceFeatures& f, bool reverse, GruTrace& tr) {
    const int T = f.num_sentences();
    const auto H = g.wz.rows();
    tr.prev.assign(T, VectorXd());
    tr.z.assign(T, VectorXd());
    tr.r.assign(T, VectorXd());
    tr.n.assign(T, VectorXd());
    tr.out.assign(T, VectorXd());
    VectorXd state = VectorXd::Zero(H);
    for (int k = 0; k < T; ++k) {
        const int i = reverse ? T - 1 - k : k;
        const VectorXd x = f.inputs.row(i).transpose();
        auto s = gru_step(g, x, state);
        check_finite(s.out, i + 1, reverse ? "encoder (backward)" : "encoder (forward)");
        tr.prev[i] = state;
        tr.z[i] = std::move(s.z);
        tr.r[i] = std::move(s.r);
        tr.n[i] = std::move(s.n);
        tr.out[i] = s.out;
        state = std::move(s.out);
    }
}

void gru_backward(const GruParams& g, const GruTrace& tr, const TraceFeatures& f, bool reverse,
                  const std::vector<VectorXd>& d_out, GruParams& grad) {
    const int T = f.num_sentences();
    const auto H = g.wz.rows();
    // Per-step pre-activation gradients and operands, one column per sentence;
    // weight gradients are formed with one product each after the sweep.
    MatrixXd da_n(H, T), da_z(H, T), da_r(H, T), gated(H, T), prev(H, T);
    VectorXd carry = VectorXd::Zero(H);
    // Visit steps in the opposite of processing order.
    for (int k = T - 1; k >= 0; --k) {
        const int i = reverse ? T - 1 - k : k;
        const VectorXd& z = tr.z[i];
        const VectorXd& r = tr.r[i];
        const VectorXd& n = tr.n[i];
        const VectorXd& h = tr.prev[i];
        const VectorXd ds = d_out[i] + carry;

        const VectorXd dn = ds.cwiseProduct((1.0 - z.array()).matrix());
        const VectorXd dz = ds.cwiseProduct(h - n);
        VectorXd dprev = ds.cwiseProduct(z);

        da_n.col(i) = dn.cwiseProduct((1.0 - n.array().square()).matrix());
        gated.col(i) = r.cwiseProduct(h);
        prev.col(i) = h;
        const VectorXd d_gated = g.un.transpose() * da_n.col(i);
        const VectorXd dr = d_gated.cwiseProduct(h);
        dprev += d_gated.cwiseProduct(r);

        da_z.col(i) = dz.cwiseProduct(z.cwiseProduct((1.0 - z.array()).matrix()));
        dprev.noalias() += g.uz.transpose() * da_z.col(i);

        da_r.col(i) = dr.cwiseProduct(r.cwiseProduct((1.0 - r.array()).matrix()));
        dprev.noalias() += g.ur.transpose() * da_r.col(i);

        carry = std::move(dprev);
    }
    const auto& x = f.inputs;  // T x input
    grad.wn.noalias() += da_n * x;
    grad.un.noalias() += da_n * gated.transpose();
    grad.bn += da_n.rowwise().sum();
    grad.wz.noalias() += da_z * x;
    grad.uz.noalias() += da_z * prev.transpose();
    grad.bz += da_z.rowwise().sum();
    grad.wr.noalias() += da_r * x;
    grad.ur.noalias() += da_r * prev.transpose();
    grad.br += da_r.rowwise().sum();
}

double huber_grad(double residual, double delta) {
    if (std::abs(residual) <= delta) return residual;
    return residual > 0 ? delta : -delta;
}

double logsumexp(std::span<const double> v) {
    const double mx = *std::max_element(v.begin(), v.end());
    double s = 0.0;
    for (double x : v) s += std::exp(x - mx);
    return mx + std::log(s);
}

}  // namespace

std::string_view to_string(UncertaintyTarget t) {
    return t == UncertaintyTarget::sentence_nll ? "sentence_nll" : "sentence_entropy";
}

std::string_view to_string(ProgressTarget t) {
    switch (t) {
        case ProgressTarget::prog_per_token: return "prog_per_token";
        case ProgressTarget::forward_progress: return "forward_progress";
        case ProgressTarget::efficiency: return "efficiency";
    }
    return "?";
}

void HccConfig::validate() const {
    auto fail = [](const std::string& what) { throw DataError("invalid model config: " + what); };
    if (input_dim < 1) fail("input_dim must be positive");
    if (encoder_dim < 1) fail("encoder_dim must be positive");
    if (latent_dim < 1) fail("latent_dim must be positive");
    if (context_dim < 1) fail("context_dim must be positive");
    if (lambda_del < 0 || lambda_kl < 0 || lambda_ent < 0 || lambda_geo < 0) fail("loss weights must be >= 0");
    if (!(huber_delta > 0)) fail("huber_delta must be positive");
    if (!(logvar_lo < logvar_hi)) fail("logvar_lo must be below logvar_hi");
    if (!(learning_rate > 0)) fail("learning_rate must be positive");
    if (epochs < 0) fail("epochs must be >= 0");
    if (batch_size < 1) fail("batch_size must be positive");
    if (!(epsilon > 0)) fail("epsilon must be positive");
}

std::vector<std::span<double>> HccParameters::spans() {
    std::vector<std::span<double>> out;
    visit([&](const std::string&, auto& t) { out.emplace_back(t.data(), static_cast<std::size_t>(t.size())); });
    return out;
}

std::vector<std::span<const double>> HccParameters::spans() const {
    std::vector<std::span<const double>> out;
    visit([&](const std::string&, const auto& t) {
        out.emplace_back(t.data(), static_cast<std::size_t>(t.size()));
    });
    return out;
}

std::size_t HccParameters::size() const {
    std::size_t n = 0;
    for (const auto& s : spans()) n += s.size();
    return n;
}

HccParameters HccParameters::zeros_like() const {
    HccParameters out = *this;
    out.set_zero();
    return out;
}

void HccParameters::set_zero() {
    visit([](const std::string&, auto& t) { t.setZero(); });
}

HccParameters& HccParameters::operator+=(const HccParameters& o) {
    auto a = spans();
    const auto b = o.spans();
    for (std::size_t k = 0; k < a.size(); ++k) {
        for (std::size_t i = 0; i < a[k].size(); ++i) a[k][i] += b[k][i];
    }
    return *this;
}

HccParameters& HccParameters::operator*=(double k) {
    visit([k](const std::string&, auto& t) { t *= k; });
    return *this;
}

bool HccParameters::operator==(const HccParameters& o) const {
    const auto a = spans();
    const auto b = o.spans();
    if (a.size() != b.size()) return false;
    for (std::size_t k = 0; k < a.size(); ++k) {
        if (a[k].size() != b[k].size() || !std::equal(a[k].begin(), a[k].end(), b[k].begin())) return false;
    }
    return true;
}

bool FeatureScaler::operator==(const FeatureScaler& o) const {
    return input_mean.size() == o.input_mean.size() && input_mean == o.input_mean &&
           input_std.size() == o.input_std.size() && input_std == o.input_std &&
           uncertainty_mean == o.uncertainty_mean && uncertainty_std == o.uncertainty_std &&
           progress_mean == o.progress_mean && progress_std == o.progress_std;
}

HccParameters init_params(const HccConfig& config, std::uint64_t seed) {
    config.validate();
    HccParameters p = shaped_zeros(config);
    std::uint64_t index = 0;
    p.visit([&](const std::string& name, auto& t) {
        const Ctr64 gen(seed, index++);
        using Tensor = std::decay_t<decltype(t)>;
        const bool is_matrix = std::is_same_v<Tensor, MatrixXd>;
        const bool is_readout = name == "ent.out.w" || name == "geo.out.w" || name == "cut.w" || name == "del.w";
        if (!is_matrix && !is_readout && name != "start_state") return;
        const double fan_in = is_matrix ? static_cast<double>(t.cols()) : static_cast<double>(t.size());
        const double bound = fan_in > 0 ? 1.0 / std::sqrt(fan_in) : 0.0;
        for (Eigen::Index i = 0; i < t.size(); ++i) {
            t.data()[i] = gen.uniform(static_cast<std::uint64_t>(i), -bound, bound);
        }
    });
    p.alpha_geo.setOnes();
    p.alpha_ent.setOnes();
    p.norm_scale.setOnes();
    return p;
}

std::vector<double> raw_uncertainty_target(const TraceRecord& trace, const HccConfig& config) {
    std::vector<double> out;
    out.reserve(trace.sentences.size());
    for (const auto& s : trace.sentences) {
        const auto u = sentence_uncertainty(s);
        out.push_back(config.uncertainty_target == UncertaintyTarget::sentence_nll ? u.nll : u.entropy);
    }
    return out;
}

std::vector<double> raw_progress_target(const TraceRecord& trace, const HccConfig& config) {
    const auto g = geometry_series(trace, config.epsilon);
    switch (config.progress_target) {
        case ProgressTarget::prog_per_token: return g.prog_per_token;
        case ProgressTarget::forward_progress: return g.forward_progress;
        case ProgressTarget::efficiency: return g.efficiency;
    }
    return g.prog_per_token;
}

FeatureScaler fit_scaler(const Corpus& corpus, const HccConfig& config) {
    FeatureScaler sc;
    const int D = config.input_dim;
    VectorXd sum = VectorXd::Zero(D);
    VectorXd sq = VectorXd::Zero(D);
    double n = 0.0;
    double u_sum = 0, u_sq = 0, g_sum = 0, g_sq = 0, m = 0;
    for (const auto& tr : corpus.traces) {
        if (tr.hidden.dim() != D) throw DataError("trace " + tr.id + " hidden dim differs from model input_dim");
        for (Eigen::Index t = 1; t < tr.hidden.rows(); ++t) {
            const VectorXd x = (tr.hidden.row(t) - tr.hidden.row(0)).transpose();
            sum += x;
            sq += x.cwiseProduct(x);
            n += 1.0;
        }
        for (double v : raw_uncertainty_target(tr, config)) {
            u_sum += v;
            u_sq += v * v;
        }
        for (double v : raw_progress_target(tr, config)) {
            g_sum += v;
            g_sq += v * v;
            m += 1.0;
        }
    }
    if (n == 0.0) throw DataError("cannot fit feature scaling on an empty corpus");
    auto finish_std = [](double var) {
        const double s = std::sqrt(std::max(var, 0.0));
        return s > 1e-12 ? s : 1.0;
    };
    sc.input_mean = sum / n;
    sc.input_std.resize(D);
    for (int d = 0; d < D; ++d) sc.input_std(d) = finish_std(sq(d) / n - sc.input_mean(d) * sc.input_mean(d));
    sc.uncertainty_mean = u_sum / m;
    sc.uncertainty_std = finish_std(u_sq / m - sc.uncertainty_mean * sc.uncertainty_mean);
    sc.progress_mean = g_sum / m;
    sc.progress_std = finish_std(g_sq / m - sc.progress_mean * sc.progress_mean);
    return sc;
}

TraceFeatures make_features(const TraceRecord& trace, const FeatureScaler& scaler) {
    const Eigen::Index T = trace.hidden.rows() - 1;
    const Eigen::Index D = trace.hidden.dim();
    if (scaler.input_mean.size() != D) throw DataError("trace " + trace.id + " hidden dim differs from model");
    TraceFeatures f;
    f.inputs.resize(T, D);
    for (Eigen::Index t = 0; t < T; ++t) {
        f.inputs.row(t) = ((trace.hidden.row(t + 1) - trace.hidden.row(0)).transpose() - scaler.input_mean)
                              .cwiseQuotient(scaler.input_std)
                              .transpose();
    }
    return f;
}

TraceTargets make_targets(const TraceRecord& trace, const EditorAnnotation& annotation,
                          const FeatureScaler& scaler, const HccConfig& config) {
    TraceTargets t;
    t.boundary = annotation.boundary;
    t.labels = annotation.labels;
    t.uncertainty = raw_uncertainty_target(trace, config);
    for (double& v : t.uncertainty) v = (v - scaler.uncertainty_mean) / scaler.uncertainty_std;
    t.progress = raw_progress_target(trace, config);
    for (double& v : t.progress) v = (v - scaler.progress_mean) / scaler.progress_std;
    return t;
}

std::vector<double> ForwardOutput::cut_probabilities() const {
    const double lse = logsumexp(cut_logits);
    std::vector<double> p(cut_logits.size());
    for (std::size_t i = 0; i < p.size(); ++i) p[i] = std::exp(cut_logits[i] - lse);
    return p;
}

ForwardOutput forward(const HccConfig& config, const HccParameters& params, const TraceFeatures& features,
                      const ForwardMode& mode) {
    const int T = features.num_sentences();
    if (T < 1) throw DataError("forward needs at least one sentence");
    if (features.inputs.cols() != config.input_dim) {
        throw DataError("feature dim " + std::to_string(features.inputs.cols()) + " != input_dim " +
                        std::to_string(config.input_dim));
    }
    ForwardOutput o;
    run_gru(params.enc_fwd, features, false, o.fwd);
    if (config.bidirectional) run_gru(params.enc_bwd, features, true, o.bwd);

    const int H = config.encoder_dim;
    const int Z = config.latent_dim;
    const int C = config.context_dim;
    o.encoded.resize(T);
    for (int i = 0; i < T; ++i) {
        VectorXd e(config.encoded_dim());
        e.head(H) = o.fwd.out[i];
        if (config.bidirectional) e.tail(H) = o.bwd.out[i];
        o.encoded[i] = std::move(e);
    }

    auto resize_all = [T](auto&... vs) { (vs.resize(T), ...); };
    resize_all(o.mu, o.logvar, o.logvar_raw, o.prior_mu, o.prior_logvar, o.prior_logvar_raw, o.noise, o.latent,
               o.lat_out, o.s_ent, o.s_geo, o.uncertainty_hat, o.progress_hat, o.fused, o.normalized, o.norm_std,
               o.delete_logits, o.delete_probs, o.kl);
    o.m.resize(T + 1);
    o.cut_logits.resize(T + 1);
    o.m[0] = params.start_state;
    o.cut_logits[0] = params.cut_w.dot(params.start_state) + params.cut_b(0);

    const double lo = config.logvar_lo;
    const double hi = config.logvar_hi;
    for (int i = 0; i < T; ++i) {
        const int t = i + 1;
        const VectorXd& e = o.encoded[i];
        o.mu[i] = params.post_mu_w * e + params.post_mu_b;
        o.logvar_raw[i] = params.post_lv_w * e + params.post_lv_b;
        o.logvar[i] = clamp(o.logvar_raw[i], lo, hi);
        check_finite(o.mu[i], t, "posterior");
        check_finite(o.logvar_raw[i], t, "posterior");
        if (i == 0) {
            o.prior_mu[i] = params.prior_init_mu;
            o.prior_logvar_raw[i] = params.prior_init_lv;
        } else {
            o.prior_mu[i] = params.prior_mu_w * o.encoded[i - 1] + params.prior_mu_b;
            o.prior_logvar_raw[i] = params.prior_lv_w * o.encoded[i - 1] + params.prior_lv_b;
        }
        o.prior_logvar[i] = clamp(o.prior_logvar_raw[i], lo, hi);
        check_finite(o.prior_mu[i], t, "prior");
        check_finite(o.prior_logvar_raw[i], t, "prior");
        o.kl[i] = kl_gaussians(o.mu[i], o.logvar[i], o.prior_mu[i], o.prior_logvar[i]);

        o.noise[i] = VectorXd::Zero(Z);
        if (mode.sample) {
            const Ctr64 gen(mode.seed, static_cast<std::uint64_t>(t));
            for (int k = 0; k < Z; ++k) o.noise[i](k) = gen.normal(static_cast<std::uint64_t>(k));
            o.latent[i] = o.mu[i] + (0.5 * o.logvar[i].array()).exp().matrix().cwiseProduct(o.noise[i]);
        } else {
            o.latent[i] = o.mu[i];
        }
        o.lat_out[i] = params.lat_w * o.latent[i] + params.lat_b;

        o.s_ent[i] = (params.ent_w * e + params.ent_b).array().tanh().matrix();
        o.uncertainty_hat[i] = params.ent_out_w.dot(o.s_ent[i]) + params.ent_out_b(0);
        o.s_geo[i] = (params.geo_w * e + params.geo_b).array().tanh().matrix();
        o.progress_hat[i] = params.geo_out_w.dot(o.s_geo[i]) + params.geo_out_b(0);
        check_finite(o.uncertainty_hat[i], t, "uncertainty head");
        check_finite(o.progress_hat[i], t, "progress head");

        o.fused[i] = o.lat_out[i] + params.alpha_geo(0) * o.s_geo[i] + params.alpha_ent(0) * o.s_ent[i];
        const VectorXd centered = (o.fused[i].array() - o.fused[i].mean()).matrix();
        o.norm_std[i] = std::sqrt(centered.squaredNorm() / C);
        o.normalized[i] = centered / (o.norm_std[i] + kNormEps);
        o.m[t] = params.norm_scale.cwiseProduct(o.normalized[i]) + params.norm_shift;
        check_finite(o.m[t], t, "fusion");

        o.cut_logits[t] = params.cut_w.dot(o.m[t]) + params.cut_b(0);
        o.delete_logits[i] = params.del_w.dot(o.m[t]) + params.del_b(0);
        o.delete_probs[i] = sigmoid(o.delete_logits[i]);
        check_finite(o.cut_logits[t], t, "cut head");
        check_finite(o.delete_logits[i], t, "deletion head");
    }
    return o;
}

double kl_gaussians(const VectorXd& mu_q, const VectorXd& logvar_q, const VectorXd& mu_p,
                    const VectorXd& logvar_p) {
    const auto diff = (mu_q - mu_p).array();
    const auto terms = logvar_p.array() - logvar_q.array() +
                       (logvar_q.array().exp() + diff.square()) * (-logvar_p.array()).exp() - 1.0;
    return 0.5 * terms.sum();
}

double huber(double residual, double delta) {
    const double a = std::abs(residual);
    return a <= delta ? 0.5 * residual * residual : delta * (a - 0.5 * delta);
}

LossBreakdown& LossBreakdown::operator+=(const LossBreakdown& o) {
    cut += o.cut;
    del += o.del;
    kl += o.kl;
    ent += o.ent;
    geo += o.geo;
    total += o.total;
    return *this;
}

LossBreakdown& LossBreakdown::operator*=(double k) {
    cut *= k;
    del *= k;
    kl *= k;
    ent *= k;
    geo *= k;
    total *= k;
    return *this;
}

LossBreakdown loss(const ForwardOutput& out, const TraceTargets& targets, const HccConfig& config) {
    const int T = out.num_sentences();
    if (targets.boundary < 0 || targets.boundary > T) {
        throw DataError("boundary " + std::to_string(targets.boundary) + " outside [0, " + std::to_string(T) + "]");
    }
    if (static_cast<int>(targets.labels.size()) != T || static_cast<int>(targets.uncertainty.size()) != T ||
        static_cast<int>(targets.progress.size()) != T) {
        throw DataError("targets are not length-consistent with the trace");
    }
    LossBreakdown l;
    l.cut = logsumexp(out.cut_logits) - out.cut_logits[targets.boundary];
    for (int i = 0; i < T; ++i) {
        const double p = std::clamp(out.delete_probs[i], kProbClamp, 1.0 - kProbClamp);
        const double y = targets.labels[i];
        l.del -= y * std::log(p) + (1.0 - y) * std::log(1.0 - p);
        l.kl += out.kl[i];
        l.ent += huber(out.uncertainty_hat[i] - targets.uncertainty[i], config.huber_delta);
        l.geo += huber(out.progress_hat[i] - targets.progress[i], config.huber_delta);
    }
    l.total = LossBreakdown::compose(l, config);
    return l;
}

LossBreakdown gradients(const HccConfig& config, const HccParameters& params, const TraceFeatures& features,
                        const TraceTargets& targets, const ForwardMode& mode, HccParameters& grad) {
    const ForwardOutput o = forward(config, params, features, mode);
    const LossBreakdown l = loss(o, targets, config);
    const int T = o.num_sentences();
    const int E = config.encoded_dim();
    const int H = config.encoder_dim;
    const int C = config.context_dim;
    const double lo = config.logvar_lo;
    const double hi = config.logvar_hi;

    std::vector<VectorXd> d_enc(T, VectorXd::Zero(E));

    const auto probs = o.cut_probabilities();
    auto cut_grad = [&](int t) { return probs[t] - (t == targets.boundary ? 1.0 : 0.0); };

    {
        const double dpi = cut_grad(0);
        grad.cut_w += dpi * o.m[0];
        grad.cut_b(0) += dpi;
        grad.start_state += dpi * params.cut_w;
    }

    for (int i = 0; i < T; ++i) {
        const int t = i + 1;
        const VectorXd& e = o.encoded[i];

        // Cut and deletion heads.
        const double dpi = cut_grad(t);
        const double p = o.delete_probs[i];
        const bool clamped = p < kProbClamp || p > 1.0 - kProbClamp;
        const double ddl = clamped ? 0.0 : config.lambda_del * (p - targets.labels[i]);
        VectorXd dm = dpi * params.cut_w + ddl * params.del_w;
        grad.cut_w += dpi * o.m[t];
        grad.cut_b(0) += dpi;
        grad.del_w += ddl * o.m[t];
        grad.del_b(0) += ddl;

        // Layer normalization with learned affine.
        grad.norm_scale += dm.cwiseProduct(o.normalized[i]);
        grad.norm_shift += dm;
        const VectorXd dxhat = dm.cwiseProduct(params.norm_scale);
        const double sd = o.norm_std[i];
        const double denom = sd + kNormEps;
        const VectorXd centered = o.normalized[i] * denom;
        const double ddenom = -dxhat.dot(centered) / (denom * denom);
        VectorXd dcentered = dxhat / denom;
        if (sd > 0.0) dcentered += (ddenom / (C * sd)) * centered;
        const VectorXd du = (dcentered.array() - dcentered.mean()).matrix();

        // Gated fusion.
        grad.alpha_geo(0) += du.dot(o.s_geo[i]);
        grad.alpha_ent(0) += du.dot(o.s_ent[i]);
        VectorXd ds_geo = params.alpha_geo(0) * du;
        VectorXd ds_ent = params.alpha_ent(0) * du;

        // Regression heads.
        const double dg_hat =
            config.lambda_geo * huber_grad(o.progress_hat[i] - targets.progress[i], config.huber_delta);
        grad.geo_out_w += dg_hat * o.s_geo[i];
        grad.geo_out_b(0) += dg_hat;
        ds_geo += dg_hat * params.geo_out_w;
        const double dt_hat =
            config.lambda_ent * huber_grad(o.uncertainty_hat[i] - targets.uncertainty[i], config.huber_delta);
        grad.ent_out_w += dt_hat * o.s_ent[i];
        grad.ent_out_b(0) += dt_hat;
        ds_ent += dt_hat * params.ent_out_w;

        const VectorXd dpre_geo = ds_geo.cwiseProduct((1.0 - o.s_geo[i].array().square()).matrix());
        grad.geo_w.noalias() += dpre_geo * e.transpose();
        grad.geo_b += dpre_geo;
        d_enc[i].noalias() += params.geo_w.transpose() * dpre_geo;
        const VectorXd dpre_ent = ds_ent.cwiseProduct((1.0 - o.s_ent[i].array().square()).matrix());
        grad.ent_w.noalias() += dpre_ent * e.transpose();
        grad.ent_b += dpre_ent;
        d_enc[i].noalias() += params.ent_w.transpose() * dpre_ent;

        // Latent projection and reparameterized sample.
        grad.lat_w.noalias() += du * o.latent[i].transpose();
        grad.lat_b += du;
        const VectorXd dz = params.lat_w.transpose() * du;
        VectorXd dmu = dz;
        VectorXd dlv = VectorXd::Zero(dz.size());
        if (mode.sample) {
            dlv = dz.cwiseProduct(o.noise[i]).cwiseProduct((0.5 * o.logvar[i].array()).exp().matrix()) * 0.5;
        }

        // KL between posterior and sequential prior.
        const double lk = config.lambda_kl;
        const VectorXd inv_vp = (-o.prior_logvar[i].array()).exp().matrix();
        const VectorXd diff = o.mu[i] - o.prior_mu[i];
        dmu += lk * diff.cwiseProduct(inv_vp);
        const VectorXd dmu_p = -lk * diff.cwiseProduct(inv_vp);
        dlv += lk * 0.5 * ((o.logvar[i] - o.prior_logvar[i]).array().exp() - 1.0).matrix();
        VectorXd dlv_p =
            lk * 0.5 *
            (1.0 - (o.logvar[i].array().exp() + diff.array().square()) * inv_vp.array()).matrix();

        const VectorXd dlv_raw = dlv.cwiseProduct(clamp_mask(o.logvar_raw[i], lo, hi));
        dlv_p = dlv_p.cwiseProduct(clamp_mask(o.prior_logvar_raw[i], lo, hi));

        grad.post_mu_w.noalias() += dmu * e.transpose();
        grad.post_mu_b += dmu;
        grad.post_lv_w.noalias() += dlv_raw * e.transpose();
        grad.post_lv_b += dlv_raw;
        d_enc[i].noalias() += params.post_mu_w.transpose() * dmu;
        d_enc[i].noalias() += params.post_lv_w.transpose() * dlv_raw;

        if (i == 0) {
            grad.prior_init_mu += dmu_p;
            grad.prior_init_lv += dlv_p;
        } else {
            const VectorXd& prev = o.encoded[i - 1];
            grad.prior_mu_w.noalias() += dmu_p * prev.transpose();
            grad.prior_mu_b += dmu_p;
            grad.prior_lv_w.noalias() += dlv_p * prev.transpose();
            grad.prior_lv_b += dlv_p;
            d_enc[i - 1].noalias() += params.prior_mu_w.transpose() * dmu_p;
            d_enc[i - 1].noalias() += params.prior_lv_w.transpose() * dlv_p;
        }
    }

    std::vector<VectorXd> d_fwd(T);
    for (int i = 0; i < T; ++i) d_fwd[i] = d_enc[i].head(H);
    gru_backward(params.enc_fwd, o.fwd, features, false, d_fwd, grad.enc_fwd);
    if (config.bidirectional) {
        std::vector<VectorXd> d_bwd(T);
        for (int i = 0; i < T; ++i) d_bwd[i] = d_enc[i].tail(H);
        gru_backward(params.enc_bwd, o.bwd, features, true, d_bwd, grad.enc_bwd);
    }
    return l;
}

int argmax_first(std::span<const double> logits) {
    int best = 0;
    for (int i = 1; i < static_cast<int>(logits.size()); ++i) {
        if (logits[i] > logits[best]) best = i;
    }
    return best;
}

Prediction predict(const HccModel& model, const TraceRecord& trace) {
    const auto features = make_features(trace, model.scaler);
    const auto out = forward(model.config, model.params, features, ForwardMode::infer());
    Prediction p;
    p.cut_logits = out.cut_logits;
    p.boundary = argmax_first(out.cut_logits);
    p.delete_probs = out.delete_probs;
    p.uncertainty.resize(out.uncertainty_hat.size());
    p.progress.resize(out.progress_hat.size());
    for (std::size_t i = 0; i < p.uncertainty.size(); ++i) {
        p.uncertainty[i] = out.uncertainty_hat[i] * model.scaler.uncertainty_std + model.scaler.uncertainty_mean;
        p.progress[i] = out.progress_hat[i] * model.scaler.progress_std + model.scaler.progress_mean;
    }
    return p;
}

}  // namespace hcc
