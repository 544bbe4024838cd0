#include "hcc/corpus.hpp"

#include <algorithm>
#include <bit>
#include <cmath>
#include <cstring>
#include <fstream>
#include <set>
#include <numeric>
#include <sstream>

#include <json.hpp>

#include "hcc/error.hpp"

namespace hcc {

namespace {

using nlohmann::json;
using nlohmann::ordered_json;

constexpr char kSidecarMagic[4] = {'H', 'C', 'C', '1'};
constexpr std::uint32_t kSidecarVersion = 1;
constexpr int kFormatVersion = 1;

void add(ValidationReport& report, std::string field, std::string message) {
    report.violations.push_back({std::move(field), std::move(message)});
}

template <typename T>
void put_le(std::ostream& out, T value) {
    static_assert(std::is_unsigned_v<T>);
    char bytes[sizeof(T)];
    for (std::size_t i = 0; i < sizeof(T); ++i) bytes[i] = static_cast<char>((value >> (8 * i)) & 0xFF);
    out.write(bytes, sizeof(T));
}

template <typename T>
T get_le(const unsigned char* p) {
    T value = 0;
    for (std::size_t i = 0; i < sizeof(T); ++i) value |= static_cast<T>(p[i]) << (8 * i);
    return value;
}

double require_real(const json& v, const char* what) {
    if (!v.is_number()) throw DataError(std::string("non-finite value in ") + what);
    const double x = v.get<double>();
    if (!std::isfinite(x)) throw DataError(std::string("non-finite value in ") + what);
    return x;
}

const json& field(const json& obj, const char* key) {
    auto it = obj.find(key);
    if (it == obj.end()) throw DataError(std::string("missing field \"") + key + "\"");
    return *it;
}

struct ParsedLine {
    TraceRecord trace;
    std::uint64_t hidden_offset = 0;
    std::optional<std::vector<int>> labels;
};

ParsedLine parse_trace_line(const std::string& line) {
    const json obj = json::parse(line);
    if (!obj.is_object()) throw DataError("trace line is not a JSON object");
    ParsedLine parsed;
    TraceRecord& tr = parsed.trace;
    tr.id = field(obj, "id").get<std::string>();
    tr.question = field(obj, "question").get<std::string>();
    tr.final_answer = field(obj, "final_answer").get<std::string>();
    tr.answer_token_count = field(obj, "answer_token_count").get<int>();

    for (const auto& s : field(obj, "sentences")) {
        SentenceRecord rec;
        rec.text = field(s, "text").get<std::string>();
        rec.token_count = field(s, "token_count").get<int>();
        const auto& lp = field(s, "logprobs");
        const auto& en = field(s, "entropies");
        if (lp.size() != en.size()) throw DataError("logprobs and entropies differ in length");
        rec.tokens.reserve(lp.size());
        for (std::size_t i = 0; i < lp.size(); ++i) {
            rec.tokens.push_back({require_real(lp[i], "logprobs"), require_real(en[i], "entropies")});
        }
        tr.sentences.push_back(std::move(rec));
    }
    for (const auto& a : field(obj, "answer_scores")) {
        tr.answer_scores.push_back({field(a, "t").get<int>(), require_real(field(a, "nll"), "answer nll"),
                                    require_real(field(a, "entropy"), "answer entropy")});
    }
    const auto& off = field(obj, "hidden_offset");
    if (!off.is_number_unsigned() && !(off.is_number_integer() && off.get<long long>() >= 0)) {
        throw DataError("hidden_offset must be a non-negative integer");
    }
    parsed.hidden_offset = off.get<std::uint64_t>();
    if (auto it = obj.find("labels"); it != obj.end() && !it->is_null()) {
        parsed.labels = it->get<std::vector<int>>();
    }
    return parsed;
}

struct Sidecar {
    std::uint32_t dim = 0;
    std::uint64_t rows = 0;
    std::vector<float> values;
};

Sidecar read_sidecar(const std::filesystem::path& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw DataError("missing hidden-state sidecar: " + path.string());
    std::vector<unsigned char> bytes((std::istreambuf_iterator<char>(in)), std::istreambuf_iterator<char>());
    constexpr std::size_t header = 4 + 4 + 4 + 8;
    if (bytes.size() < header) throw DataError("sidecar truncated header: " + path.string());
    if (std::memcmp(bytes.data(), kSidecarMagic, 4) != 0) throw DataError("sidecar bad magic: " + path.string());
    const auto version = get_le<std::uint32_t>(bytes.data() + 4);
    if (version != kSidecarVersion) {
        throw DataError("unsupported sidecar version " + std::to_string(version));
    }
    Sidecar sc;
    sc.dim = get_le<std::uint32_t>(bytes.data() + 8);
    sc.rows = get_le<std::uint64_t>(bytes.data() + 12);
    const std::uint64_t count = sc.rows * sc.dim;
    if (bytes.size() != header + 4 * count) {
        throw DataError("sidecar payload size does not match header (" + std::to_string(sc.rows) + " rows x " +
                        std::to_string(sc.dim) + ")");
    }
    sc.values.resize(count);
    for (std::uint64_t i = 0; i < count; ++i) {
        const auto raw = get_le<std::uint32_t>(bytes.data() + header + 4 * i);
        sc.values[i] = std::bit_cast<float>(raw);
    }
    return sc;
}

}  // namespace

long TraceRecord::total_tokens() const {
    long n = 0;
    for (const auto& s : sentences) n += s.token_count;
    return n;
}

ValidationReport validate_trace(const TraceRecord& trace) {
    ValidationReport report;
    const int T = trace.num_sentences();
    if (trace.id.empty()) add(report, "id", "empty id");
    if (trace.final_answer.empty()) add(report, "final_answer", "empty final answer");
    if (trace.answer_token_count < 1) add(report, "answer_token_count", "must be positive");
    if (T < 1) add(report, "sentences", "trace has no sentences");

    for (int t = 1; t <= T; ++t) {
        const auto& s = trace.sentences[t - 1];
        const std::string base = "sentences[" + std::to_string(t) + "]";
        if (s.text.empty()) add(report, base + ".text", "empty sentence text");
        if (s.token_count < 1) add(report, base + ".token_count", "must be positive");
        if (s.token_count != static_cast<int>(s.tokens.size())) {
            add(report, base + ".token_count",
                "token_count " + std::to_string(s.token_count) + " != " + std::to_string(s.tokens.size()) +
                    " token scores");
        }
        for (std::size_t i = 0; i < s.tokens.size(); ++i) {
            const auto& tok = s.tokens[i];
            const std::string where = "(" + std::to_string(t) + "," + std::to_string(i + 1) + ")";
            if (!std::isfinite(tok.logprob) || tok.logprob > 0.0) {
                add(report, base + ".tokens[" + std::to_string(i + 1) + "].logprob",
                    "logprob at " + where + " must be finite and <= 0");
            }
            if (!std::isfinite(tok.entropy) || tok.entropy < 0.0) {
                add(report, base + ".tokens[" + std::to_string(i + 1) + "].entropy",
                    "entropy at " + where + " must be finite and >= 0");
            }
        }
    }

    if (static_cast<int>(trace.answer_scores.size()) != T + 1) {
        add(report, "answer_scores", "answer score count must equal T+1");
    }
    for (std::size_t k = 0; k < trace.answer_scores.size(); ++k) {
        const auto& a = trace.answer_scores[k];
        const std::string base = "answer_scores[" + std::to_string(k) + "]";
        if (a.prefix_index != static_cast<int>(k)) add(report, base + ".t", "prefix indices must run 0..T");
        if (!std::isfinite(a.nll) || a.nll < 0.0) add(report, base + ".nll", "must be finite and >= 0");
        if (!std::isfinite(a.entropy) || a.entropy < 0.0) add(report, base + ".entropy", "must be finite and >= 0");
    }

    if (trace.hidden.dim() < 1) add(report, "hidden.dim", "must be positive");
    if (trace.hidden.rows() != T + 1) {
        add(report, "hidden.states",
            "row count " + std::to_string(trace.hidden.rows()) + " must equal T+1 = " + std::to_string(T + 1));
    }
    for (Eigen::Index r = 0; r < trace.hidden.rows(); ++r) {
        if (!trace.hidden.states.row(r).allFinite()) {
            add(report, "hidden.states[" + std::to_string(r) + "]", "hidden.states[" + std::to_string(r) + "] non-finite");
        }
    }
    return report;
}

ValidationReport validate_corpus(const Corpus& corpus) {
    ValidationReport report;
    for (const auto& trace : corpus.traces) {
        for (auto& v : validate_trace(trace).violations) {
            add(report, trace.id + ":" + v.field, std::move(v.message));
        }
        if (corpus.metadata.dim != 0 && trace.hidden.dim() != corpus.metadata.dim) {
            add(report, trace.id + ":hidden.dim", "dimension differs from corpus dim");
        }
    }
    for (const auto& [id, ann] : corpus.annotations) {
        auto it = std::find_if(corpus.traces.begin(), corpus.traces.end(),
                               [&](const TraceRecord& t) { return t.id == id; });
        if (it == corpus.traces.end()) {
            add(report, id + ":labels", "annotation for unknown trace id");
            continue;
        }
        const int T = it->num_sentences();
        if (static_cast<int>(ann.labels.size()) != T || ann.boundary < 0 || ann.boundary > T) {
            add(report, id + ":labels", "annotation length or boundary out of range");
            continue;
        }
        for (int t = 1; t <= T; ++t) {
            if ((ann.labels[t - 1] == 1) != (t > ann.boundary)) {
                add(report, id + ":labels", "labels not suffix-consistent with boundary");
                break;
            }
        }
    }
    return report;
}

EditorAnnotation annotation_from_boundary(int num_sentences, int boundary) {
    EditorAnnotation ann;
    ann.boundary = boundary;
    ann.labels.resize(num_sentences);
    for (int t = 1; t <= num_sentences; ++t) ann.labels[t - 1] = t > boundary ? 1 : 0;
    return ann;
}

ImportedLabels import_editor_labels(const TraceRecord& trace, std::span<const int> raw_labels, LabelMode mode) {
    const int T = trace.num_sentences();
    if (static_cast<int>(raw_labels.size()) != T) {
        throw DataError("label count " + std::to_string(raw_labels.size()) + " != sentence count " +
                        std::to_string(T));
    }
    int boundary = 0;
    for (int t = 1; t <= T; ++t) {
        const int y = raw_labels[t - 1];
        if (y != 0 && y != 1) throw DataError("label at sentence " + std::to_string(t) + " is not 0/1");
        if (y == 0) boundary = t;
    }
    ImportedLabels out;
    out.annotation = annotation_from_boundary(T, boundary);
    for (int t = 1; t <= T; ++t) {
        if (out.annotation.labels[t - 1] != raw_labels[t - 1]) {
            if (mode == LabelMode::strict) {
                throw DataError("labels not suffix-consistent: sentence " + std::to_string(t) +
                                " is retained after a deleted sentence");
            }
            ++out.flipped;
        }
    }
    return out;
}

std::filesystem::path sidecar_path_for(const std::filesystem::path& manifest) {
    auto p = manifest;
    p.replace_extension(".bin");
    return p;
}

Corpus parse_corpus(const std::filesystem::path& manifest, const ParseOptions& options) {
    std::ifstream in(manifest);
    if (!in) throw DataError("cannot open manifest: " + manifest.string());
    std::vector<std::string> lines;
    for (std::string line; std::getline(in, line);) lines.push_back(std::move(line));
    if (lines.empty()) throw DataError("line 1: missing manifest header");

    Corpus corpus;
    try {
        const json header = json::parse(lines[0]);
        if (header.value("format", "") != "hcc-corpus") throw DataError("not an hcc-corpus manifest");
        corpus.metadata.version = field(header, "version").get<int>();
        if (corpus.metadata.version != kFormatVersion) {
            throw DataError("unsupported manifest version " + std::to_string(corpus.metadata.version));
        }
        corpus.metadata.dim = field(header, "dim").get<int>();
        corpus.metadata.source = header.value("source", "");
    } catch (const json::exception& e) {
        throw DataError("line 1: malformed header: " + std::string(e.what()));
    } catch (const DataError& e) {
        throw DataError("line 1: " + std::string(e.what()));
    }

    const Sidecar sidecar = read_sidecar(sidecar_path_for(manifest));
    if (static_cast<int>(sidecar.dim) != corpus.metadata.dim) {
        throw DataError("dimension mismatch: manifest dim " + std::to_string(corpus.metadata.dim) +
                        ", sidecar dim " + std::to_string(sidecar.dim));
    }
    for (float v : sidecar.values) {
        if (!std::isfinite(v)) throw DataError("non-finite value in hidden-state sidecar");
    }

    // Blank trailing lines are tolerated.
    std::size_t n = lines.size();
    while (n > 1 && lines[n - 1].find_first_not_of(" \t\r") == std::string::npos) --n;
    const std::size_t count = n - 1;

    std::vector<ParsedLine> parsed(count);
    std::vector<std::string> errors(count);
    const int dim = corpus.metadata.dim;

#pragma omp parallel for schedule(dynamic)
    for (std::size_t i = 0; i < count; ++i) {
        try {
            parsed[i] = parse_trace_line(lines[i + 1]);
            auto& p = parsed[i];
            const std::uint64_t rows = p.trace.sentences.size() + 1;
            if (p.hidden_offset + rows > sidecar.rows) {
                throw DataError("hidden rows [" + std::to_string(p.hidden_offset) + ", " +
                                std::to_string(p.hidden_offset + rows) + ") exceed sidecar row count " +
                                std::to_string(sidecar.rows));
            }
            p.trace.hidden.states.resize(static_cast<Eigen::Index>(rows), dim);
            for (std::uint64_t r = 0; r < rows; ++r) {
                for (int d = 0; d < dim; ++d) {
                    p.trace.hidden.states(static_cast<Eigen::Index>(r), d) =
                        sidecar.values[(p.hidden_offset + r) * dim + d];
                }
            }
            const auto report = options.check_invariants ? validate_trace(p.trace) : ValidationReport{};
            if (!report.ok()) {
                throw DataError(report.violations.front().field + ": " + report.violations.front().message);
            }
        } catch (const json::exception& e) {
            errors[i] = "malformed JSON: " + std::string(e.what());
        } catch (const std::exception& e) {
            errors[i] = e.what();
        }
    }

    for (std::size_t i = 0; i < count; ++i) {
        if (!errors[i].empty()) throw DataError("line " + std::to_string(i + 2) + ": " + errors[i]);
    }
    corpus.traces.reserve(count);
    std::set<std::string> seen;
    for (std::size_t i = 0; i < count; ++i) {
        auto& p = parsed[i];
        if (!seen.insert(p.trace.id).second) {
            throw DataError("line " + std::to_string(i + 2) + ": duplicate trace id " + p.trace.id);
        }
        if (p.labels) {
            try {
                corpus.annotations[p.trace.id] =
                    import_editor_labels(p.trace, *p.labels, options.label_mode).annotation;
            } catch (const DataError& e) {
                throw DataError("line " + std::to_string(i + 2) + ": " + e.what());
            }
        }
        corpus.traces.push_back(std::move(p.trace));
    }
    return corpus;
}

WriteSummary write_corpus(const Corpus& corpus, const std::filesystem::path& manifest) {
    if (manifest.has_parent_path()) {
        std::error_code ec;
        std::filesystem::create_directories(manifest.parent_path(), ec);
    }
    std::ofstream out(manifest, std::ios::binary | std::ios::trunc);
    if (!out) throw DataError("cannot write manifest: " + manifest.string());
    const auto sidecar = sidecar_path_for(manifest);
    std::ofstream bin(sidecar, std::ios::binary | std::ios::trunc);
    if (!bin) throw DataError("cannot write sidecar: " + sidecar.string());

    const int dim = corpus.metadata.dim;
    ordered_json header;
    header["format"] = "hcc-corpus";
    header["version"] = kFormatVersion;
    header["dim"] = dim;
    header["source"] = corpus.metadata.source;
    out << header.dump() << '\n';

    std::uint64_t total_rows = 0;
    for (const auto& tr : corpus.traces) total_rows += static_cast<std::uint64_t>(tr.hidden.rows());
    bin.write(kSidecarMagic, 4);
    put_le<std::uint32_t>(bin, kSidecarVersion);
    put_le<std::uint32_t>(bin, static_cast<std::uint32_t>(dim));
    put_le<std::uint64_t>(bin, total_rows);

    std::uint64_t offset = 0;
    for (const auto& tr : corpus.traces) {
        if (tr.hidden.dim() != dim) throw DataError("trace " + tr.id + " hidden dim differs from corpus dim");
        ordered_json line;
        line["id"] = tr.id;
        line["question"] = tr.question;
        line["final_answer"] = tr.final_answer;
        line["answer_token_count"] = tr.answer_token_count;
        auto sentences = ordered_json::array();
        for (const auto& s : tr.sentences) {
            ordered_json js;
            js["text"] = s.text;
            js["token_count"] = s.token_count;
            auto lp = ordered_json::array();
            auto en = ordered_json::array();
            for (const auto& tok : s.tokens) {
                lp.push_back(tok.logprob);
                en.push_back(tok.entropy);
            }
            js["logprobs"] = std::move(lp);
            js["entropies"] = std::move(en);
            sentences.push_back(std::move(js));
        }
        line["sentences"] = std::move(sentences);
        auto scores = ordered_json::array();
        for (const auto& a : tr.answer_scores) {
            scores.push_back(ordered_json{{"t", a.prefix_index}, {"nll", a.nll}, {"entropy", a.entropy}});
        }
        line["answer_scores"] = std::move(scores);
        line["hidden_offset"] = offset;
        if (const auto* ann = corpus.annotation_for(tr.id)) line["labels"] = ann->labels;
        out << line.dump() << '\n';

        for (Eigen::Index r = 0; r < tr.hidden.rows(); ++r) {
            for (Eigen::Index d = 0; d < dim; ++d) {
                const float v = static_cast<float>(tr.hidden.states(r, d));
                put_le<std::uint32_t>(bin, std::bit_cast<std::uint32_t>(v));
            }
        }
        offset += static_cast<std::uint64_t>(tr.hidden.rows());
    }
    out.close();
    bin.close();
    if (!out || !bin) throw DataError("I/O failure while writing corpus " + manifest.string());

    WriteSummary summary;
    summary.trace_count = corpus.traces.size();
    summary.manifest_bytes = std::filesystem::file_size(manifest);
    summary.sidecar_bytes = std::filesystem::file_size(sidecar);
    return summary;
}

}  // namespace hcc
