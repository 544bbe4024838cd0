#include <doctest.h>

#include <fstream>
#include <iterator>
#include <random>
#include <sstream>

#include <json.hpp>

#include "hcc/cutter.hpp"
#include "hcc/error.hpp"
#include "oracles.hpp"

using namespace hcc;

namespace {

TraceRecord three_sentences() {
    TraceRecord tr;
    tr.id = "c1";
    tr.question = "What is 2+2?";
    tr.final_answer = "The answer is 4.";
    tr.answer_token_count = 5;
    const char* texts[] = {"First, add.", "So 4.\n", "Check again."};
    const int tokens[] = {3, 4, 5};
    for (int i = 0; i < 3; ++i) {
        SentenceRecord s;
        s.text = texts[i];
        s.token_count = tokens[i];
        for (int k = 0; k < tokens[i]; ++k) s.tokens.push_back({-0.5, 0.5});
        tr.sentences.push_back(s);
    }
    tr.hidden.states = RowMatrix::Zero(4, 2);
    return tr;
}

std::string slurp(const std::filesystem::path& p) {
    std::ifstream in(p, std::ios::binary);
    return {std::istreambuf_iterator<char>(in), {}};
}

}  // namespace

TEST_SUITE("cutter") {

TEST_CASE("cut text keeps the prefix and the answer") {
    const auto tr = three_sentences();
    CHECK(apply_cut(tr, 3).text == "First, add. So 4.\nCheck again. The answer is 4.");
    CHECK(apply_cut(tr, 2).text == "First, add. So 4.\nThe answer is 4.");
    CHECK(apply_cut(tr, 1).text == "First, add. The answer is 4.");
    CHECK(apply_cut(tr, 0).text == "The answer is 4.");

    const auto r = apply_cut(tr, 1);
    CHECK(r.kept_sentences == 1);
    CHECK(r.removed_sentences == 2);
    CHECK(r.removed_tokens == 9);
    CHECK(removed_token_count(tr, 3) == 0);
    CHECK(removed_token_count(tr, 0) == 12);

    CHECK_THROWS_AS(apply_cut(tr, 4), DataError);
    CHECK_THROWS_AS(apply_cut(tr, -1), DataError);
}

TEST_CASE("every cut preserves the answer and a prefix of sentences") {
    std::mt19937_64 rng(12);
    for (int rep = 0; rep < 50; ++rep) {
        const int T = 1 + rep % 10;
        const auto tr = testing::random_trace(rng, T, 2, "p" + std::to_string(rep));
        for (int b = 0; b <= T; ++b) {
            const auto r = apply_cut(tr, b);
            CHECK(r.text.size() >= tr.final_answer.size());
            CHECK(r.text.compare(r.text.size() - tr.final_answer.size(), std::string::npos, tr.final_answer) == 0);
            CHECK(r.text.rfind(apply_cut(tr, 0).text) == r.text.size() - tr.final_answer.size());
            if (b > 0) {
                // Each longer cut extends the shorter one's sentence prefix.
                const std::string shorter = join_response(tr, b - 1);
                const std::string prefix = shorter.substr(0, shorter.size() - tr.final_answer.size());
                CHECK(r.text.compare(0, prefix.size(), prefix) == 0);
            }
            CHECK(r.kept_sentences + r.removed_sentences == T);
        }
    }
}

TEST_CASE("random cut matches the removed-token target") {
    const auto tr = three_sentences();  // suffix tokens: b=3:0 b=2:5 b=1:9 b=0:12
    CHECK(random_cut(tr, 0.0).boundary == 3);
    CHECK(random_cut(tr, 5.0).boundary == 2);
    CHECK(random_cut(tr, 6.0).boundary == 2);
    CHECK(random_cut(tr, 7.0).boundary == 2);  // tie between 5 and 9 keeps more
    CHECK(random_cut(tr, 8.0).boundary == 1);
    CHECK(random_cut(tr, 100.0).boundary == 0);
    CHECK(random_cut(tr, 2.5).boundary == 3);  // tie between 0 and 5
    CHECK(random_cut(tr, 5.0, 1).boundary == random_cut(tr, 5.0, 2).boundary);
    CHECK_THROWS_AS(random_cut(tr, -1.0), DataError);

    std::mt19937_64 rng(4);
    for (int rep = 0; rep < 100; ++rep) {
        const auto t = testing::random_trace(rng, 1 + rep % 12, 2, "r");
        const double target = std::uniform_real_distribution<double>(0.0, 40.0)(rng);
        const auto r = random_cut(t, target);
        const double gap = std::abs(r.removed_tokens - target);
        for (int b = 0; b <= t.num_sentences(); ++b) {
            CHECK(gap <= std::abs(removed_token_count(t, b) - target));
        }
    }
}

TEST_CASE("SFT export is ordered by id and reproducible") {
    const auto dir = testing::tmp_dir("cutter_export");
    std::mt19937_64 rng(6);
    Corpus c;
    c.metadata.dim = 2;
    for (const char* id : {"zeta", "alpha", "mid"}) c.traces.push_back(testing::random_trace(rng, 4, 2, id));
    std::map<std::string, CutResult> cuts;
    for (const auto& tr : c.traces) cuts[tr.id] = apply_cut(tr, 2);
    const auto summary = export_sft(c, cuts, dir / "a.jsonl");
    CHECK(summary.count == 3);
    CHECK(summary.mean_kept_sentences == 2.0);

    std::ifstream in(dir / "a.jsonl");
    std::string line;
    std::vector<std::string> ids;
    while (std::getline(in, line)) {
        const auto j = nlohmann::json::parse(line);
        ids.push_back(j.at("id"));
        const auto& tr = *std::find_if(c.traces.begin(), c.traces.end(), [&](auto& t) { return t.id == ids.back(); });
        CHECK(j.at("prompt") == tr.question);
        CHECK(j.at("response") == cuts.at(tr.id).text);
        CHECK(j.size() == 3);
    }
    CHECK(ids == std::vector<std::string>{"alpha", "mid", "zeta"});

    export_sft(c, cuts, dir / "b.jsonl");
    CHECK(slurp(dir / "a.jsonl") == slurp(dir / "b.jsonl"));

    cuts.erase("mid");
    CHECK_THROWS_WITH_AS(export_sft(c, cuts, dir / "c.jsonl"), "missing cut for trace mid", DataError);
}

}
