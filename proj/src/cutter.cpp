#include "hcc/cutter.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <vector>

#include <json.hpp>

#include "hcc/error.hpp"

namespace hcc {

namespace {

void append_piece(std::string& out, const std::string& piece) {
    if (!out.empty() && out.back() != '\n') out += ' ';
    out += piece;
}

}  // namespace

std::string join_response(const TraceRecord& trace, int boundary) {
    std::string out;
    for (int t = 1; t <= boundary; ++t) append_piece(out, trace.sentences[t - 1].text);
    append_piece(out, trace.final_answer);
    return out;
}

long removed_token_count(const TraceRecord& trace, int boundary) {
    long n = 0;
    for (int t = boundary + 1; t <= trace.num_sentences(); ++t) n += trace.sentences[t - 1].token_count;
    return n;
}

CutResult apply_cut(const TraceRecord& trace, int boundary) {
    const int T = trace.num_sentences();
    if (boundary < 0 || boundary > T) {
        throw DataError("cut boundary " + std::to_string(boundary) + " outside [0, " + std::to_string(T) +
                        "] for trace " + trace.id);
    }
    CutResult r;
    r.id = trace.id;
    r.boundary = boundary;
    r.kept_sentences = boundary;
    r.removed_sentences = T - boundary;
    r.removed_tokens = removed_token_count(trace, boundary);
    r.text = join_response(trace, boundary);
    return r;
}

CutResult random_cut(const TraceRecord& trace, double target_removed_tokens, std::uint64_t /*seed*/) {
    if (!(target_removed_tokens >= 0.0)) throw DataError("random-cut target must be >= 0");
    const int T = trace.num_sentences();
    int best = T;
    double best_gap = target_removed_tokens;  // boundary T removes nothing
    long suffix = 0;
    for (int b = T - 1; b >= 0; --b) {
        suffix += trace.sentences[b].token_count;
        const double gap = std::abs(static_cast<double>(suffix) - target_removed_tokens);
        // Strict comparison keeps the larger boundary on ties.
        if (gap < best_gap) {
            best_gap = gap;
            best = b;
        }
    }
    return apply_cut(trace, best);
}

ExportSummary export_sft(const Corpus& corpus, const std::map<std::string, CutResult>& cuts,
                         const std::filesystem::path& path) {
    std::vector<const TraceRecord*> ordered;
    ordered.reserve(corpus.traces.size());
    for (const auto& tr : corpus.traces) {
        if (!cuts.contains(tr.id)) throw DataError("missing cut for trace " + tr.id);
        ordered.push_back(&tr);
    }
    std::sort(ordered.begin(), ordered.end(), [](const auto* a, const auto* b) { return a->id < b->id; });

    if (path.has_parent_path()) {
        std::error_code ec;
        std::filesystem::create_directories(path.parent_path(), ec);
    }
    std::ofstream out(path, std::ios::binary | std::ios::trunc);
    if (!out) throw DataError("cannot write SFT export: " + path.string());
    ExportSummary summary;
    double kept = 0.0;
    for (const auto* tr : ordered) {
        const auto& cut = cuts.at(tr->id);
        nlohmann::ordered_json line;
        line["id"] = tr->id;
        line["prompt"] = tr->question;
        line["response"] = cut.text;
        out << line.dump() << '\n';
        kept += cut.kept_sentences;
        ++summary.count;
    }
    if (!out) throw DataError("I/O failure writing SFT export: " + path.string());
    summary.mean_kept_sentences = summary.count == 0 ? 0.0 : kept / static_cast<double>(summary.count);
    return summary;
}

}  // namespace hcc
