#include "hcc/kv_config.hpp"

#include <algorithm>
#include <charconv>
#include <fstream>
#include <functional>

#include "hcc/error.hpp"
#include "hcc/synth.hpp"

namespace hcc {

namespace {

std::string trim(const std::string& s) {
    const auto b = s.find_first_not_of(" \t\r");
    if (b == std::string::npos) return "";
    const auto e = s.find_last_not_of(" \t\r");
    return s.substr(b, e - b + 1);
}

template <typename T>
T parse_number(const std::string& key, const std::string& text) {
    T value{};
    const auto* first = text.data();
    const auto* last = text.data() + text.size();
    const auto [ptr, ec] = std::from_chars(first, last, value);
    if (ec != std::errc() || ptr != last) throw DataError("config key " + key + ": cannot parse \"" + text + "\"");
    return value;
}

bool parse_bool(const std::string& key, const std::string& text) {
    if (text == "true" || text == "1") return true;
    if (text == "false" || text == "0") return false;
    throw DataError("config key " + key + ": expected true/false, got \"" + text + "\"");
}

// A bound field: renders its current value and parses a new one.
struct Field {
    std::string key;
    std::function<std::string()> get;
    std::function<void(const std::string&)> set;
};

Field real(const char* key, double& v) {
    return {key, [&v] { return format_real(v); }, [&v, key](const std::string& s) { v = parse_number<double>(key, s); }};
}

Field integer(const char* key, int& v) {
    return {key, [&v] { return std::to_string(v); }, [&v, key](const std::string& s) { v = parse_number<int>(key, s); }};
}

Field unsigned64(const char* key, std::uint64_t& v) {
    return {key, [&v] { return std::to_string(v); },
            [&v, key](const std::string& s) { v = parse_number<std::uint64_t>(key, s); }};
}

Field boolean(const char* key, bool& v) {
    return {key, [&v] { return std::string(v ? "true" : "false"); },
            [&v, key](const std::string& s) { v = parse_bool(key, s); }};
}

Field text(const char* key, std::string& v) {
    return {key, [&v] { return v; }, [&v](const std::string& s) { v = s; }};
}

std::vector<Field> fields(HccConfig& c) {
    std::vector<Field> f = {
        integer("input_dim", c.input_dim),
        integer("encoder_dim", c.encoder_dim),
        integer("latent_dim", c.latent_dim),
        integer("context_dim", c.context_dim),
        boolean("bidirectional", c.bidirectional),
        real("lambda_del", c.lambda_del),
        real("lambda_kl", c.lambda_kl),
        real("lambda_ent", c.lambda_ent),
        real("lambda_geo", c.lambda_geo),
        real("huber_delta", c.huber_delta),
        real("logvar_lo", c.logvar_lo),
        real("logvar_hi", c.logvar_hi),
        real("learning_rate", c.learning_rate),
        integer("epochs", c.epochs),
        integer("batch_size", c.batch_size),
        unsigned64("seed", c.seed),
        real("grad_clip", c.grad_clip),
    };
    f.push_back({"uncertainty_target", [&c] { return std::string(to_string(c.uncertainty_target)); },
                 [&c](const std::string& s) {
                     if (s == "sentence_nll") c.uncertainty_target = UncertaintyTarget::sentence_nll;
                     else if (s == "sentence_entropy") c.uncertainty_target = UncertaintyTarget::sentence_entropy;
                     else throw DataError("config key uncertainty_target: unknown value \"" + s + "\"");
                 }});
    f.push_back({"progress_target", [&c] { return std::string(to_string(c.progress_target)); },
                 [&c](const std::string& s) {
                     if (s == "prog_per_token") c.progress_target = ProgressTarget::prog_per_token;
                     else if (s == "forward_progress") c.progress_target = ProgressTarget::forward_progress;
                     else if (s == "efficiency") c.progress_target = ProgressTarget::efficiency;
                     else throw DataError("config key progress_target: unknown value \"" + s + "\"");
                 }});
    f.push_back(real("epsilon", c.epsilon));
    return f;
}

std::vector<Field> fields(SynthConfig& c) {
    return {
        integer("trace_count", c.trace_count),
        integer("t_min", c.t_min),
        integer("t_max", c.t_max),
        integer("dim", c.dim),
        real("boundary_frac_lo", c.boundary_frac_lo),
        real("boundary_frac_hi", c.boundary_frac_hi),
        real("drift", c.drift),
        real("noise", c.noise),
        real("removed_attenuation", c.removed_attenuation),
        real("removed_noise", c.removed_noise),
        real("direction_jitter", c.direction_jitter),
        real("origin_scale", c.origin_scale),
        real("retained_nll", c.retained_nll),
        real("removed_nll", c.removed_nll),
        real("retained_entropy", c.retained_entropy),
        real("removed_entropy", c.removed_entropy),
        real("token_noise", c.token_noise),
        real("answer_nll_start", c.answer_nll_start),
        real("answer_nll_decrease", c.answer_nll_decrease),
        real("answer_nll_increase", c.answer_nll_increase),
        real("answer_noise", c.answer_noise),
        real("answer_entropy_ratio", c.answer_entropy_ratio),
        integer("tokens_min", c.tokens_min),
        integer("tokens_max", c.tokens_max),
        unsigned64("seed", c.seed),
        text("source", c.source),
    };
}

template <typename Config>
void apply(Config& config, const KeyValues& kv) {
    auto table = fields(config);
    for (const auto& [key, value] : kv) {
        auto it = std::find_if(table.begin(), table.end(), [&](const Field& f) { return f.key == key; });
        if (it == table.end()) throw DataError("unknown config key: " + key);
        it->set(value);
    }
}

template <typename Config>
std::vector<std::pair<std::string, std::string>> render(const Config& config) {
    Config copy = config;
    std::vector<std::pair<std::string, std::string>> out;
    for (const auto& f : fields(copy)) out.emplace_back(f.key, f.get());
    return out;
}

}  // namespace

KeyValues parse_key_values(std::istream& in) {
    KeyValues kv;
    std::string line;
    int lineno = 0;
    while (std::getline(in, line)) {
        ++lineno;
        if (const auto hash = line.find('#'); hash != std::string::npos) line.erase(hash);
        line = trim(line);
        if (line.empty()) continue;
        const auto eq = line.find('=');
        if (eq == std::string::npos) {
            throw DataError("config line " + std::to_string(lineno) + ": expected key=value");
        }
        kv[trim(line.substr(0, eq))] = trim(line.substr(eq + 1));
    }
    return kv;
}

KeyValues read_key_values(const std::filesystem::path& path) {
    std::ifstream in(path);
    if (!in) throw DataError("cannot open config file: " + path.string());
    return parse_key_values(in);
}

std::string format_real(double v) {
    char buf[64];
    const auto [ptr, ec] = std::to_chars(buf, buf + sizeof(buf), v);
    return std::string(buf, ptr);
}

void apply_key_values(HccConfig& config, const KeyValues& kv) { apply(config, kv); }

std::vector<std::pair<std::string, std::string>> to_key_values(const HccConfig& config) { return render(config); }

void apply_key_values(SynthConfig& config, const KeyValues& kv) { apply(config, kv); }

std::vector<std::pair<std::string, std::string>> to_key_values(const SynthConfig& config) {
    return render(config);
}

std::string describe(const SynthConfig& config) {
    std::string out;
    for (const auto& [k, v] : to_key_values(config)) out += k + "=" + v + "\n";
    return out;
}

}  // namespace hcc
