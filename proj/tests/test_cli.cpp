#include <doctest.h>

#include <fstream>
#include <sstream>

#include <json.hpp>

#include "cli_pipeline.hpp"
#include "oracles.hpp"

using testing::run_cli;

TEST_SUITE("cli") {

TEST_CASE("help and usage errors") {
    auto r = run_cli({"--help"});
    CHECK(r.code == 0);
    CHECK(r.out.find("diagnose-geometry") != std::string::npos);
    CHECK(run_cli({"train", "--help"}).code == 0);
    CHECK(run_cli({}).code == 2);
    CHECK(run_cli({"frobnicate"}).code == 2);
    CHECK(run_cli({"validate", "x.jsonl", "--no-such-flag"}).code == 2);
    CHECK(run_cli({"paired-stats", "x.jsonl", "--resamples", "10"}).code == 2);
    CHECK(run_cli({"diagnose-uncertainty", "x.jsonl", "--bins", "1"}).code == 2);
    CHECK(run_cli({"cut", "x.jsonl", "--mode", "sideways"}).code == 2);
    // Missing required option.
    CHECK(run_cli({"predict", "x.jsonl"}).code == 2);
}

TEST_CASE("data errors exit 1") {
    const auto dir = testing::tmp_dir("cli_errors");
    auto r = run_cli({"validate", (dir / "absent.jsonl").string()});
    CHECK(r.code == 1);
    CHECK(r.err.find("error:") == 0);
    std::ofstream(dir / "bad.jsonl") << "{\"format\":\"nope\"}\n";
    CHECK(run_cli({"diagnose-geometry", (dir / "bad.jsonl").string(), "--output", (dir / "o").string()}).code == 1);
}

TEST_CASE("validate reports violations") {
    const auto dir = testing::tmp_dir("cli_validate");
    const std::string corpus = (dir / "c.jsonl").string();
    REQUIRE(run_cli({"synth", "--traces", "3", "--output", corpus}).code == 0);
    auto r = run_cli({"validate", "--input", corpus});
    CHECK(r.code == 0);
    CHECK(r.out == "0 violations\n");

    // Break one sentence's token count in the manifest.
    std::ifstream in(corpus);
    std::ostringstream fixed;
    std::string line;
    bool done = false;
    while (std::getline(in, line)) {
        const auto pos = line.find("\"token_count\":");
        if (!done && pos != std::string::npos && line.find("\"sentences\"") != std::string::npos) {
            auto j = nlohmann::ordered_json::parse(line);
            j["sentences"][0]["token_count"] = 999;
            line = j.dump();
            done = true;
        }
        fixed << line << '\n';
    }
    REQUIRE(done);
    in.close();
    std::ofstream(corpus, std::ios::trunc) << fixed.str();
    r = run_cli({"validate", corpus});
    CHECK(r.code == 1);
    CHECK(r.out.find("1 violations\n") != std::string::npos);
}

TEST_CASE("full pipeline is deterministic") {
    const auto base = testing::tmp_dir("cli_pipeline");
    const auto a = testing::run_pipeline(base / "a", 12, 2);
    INFO(a.first_failure());
    REQUIRE(a.ok());
    const auto b = testing::run_pipeline(base / "b", 12, 2);
    REQUIRE(b.ok());

    for (const char* f : {"corpus.jsonl", "corpus.bin", "corpus.synth.cfg", "unc/uncertainty_series.csv",
                          "unc/progressive_curves.csv", "unc/boundary_quadruple.csv", "unc/perturbation.csv",
                          "unc_json/uncertainty.json", "geo/geometry_series.csv", "geo/group_means.csv",
                          "geo/disp_per_token_ecdf.csv", "paired.csv", "paired.json", "model.ckpt",
                          "model.history.csv", "pred.csv", "cuts.csv", "label_cuts.csv", "random_cuts.csv",
                          "sft.jsonl", "consistency.csv"}) {
        INFO(f);
        REQUIRE(a.files.count(f) == 1);
        CHECK(a.files.at(f) == b.files.at(f));
    }

    std::istringstream sft(a.files.at("sft.jsonl"));
    std::string line;
    int lines = 0;
    while (std::getline(sft, line)) {
        const auto j = nlohmann::json::parse(line);
        CHECK(j.contains("prompt"));
        ++lines;
    }
    CHECK(lines == 12);

    const std::string paired = a.files.at("paired.csv");
    CHECK(paired.find("\ndisplacement,") != std::string::npos);
    CHECK(paired.find("\nsent_entropy,") != std::string::npos);
    CHECK(std::count(paired.begin(), paired.end(), '\n') == 9);
}

TEST_CASE("thread count does not change outputs") {
    const auto dir = testing::tmp_dir("cli_threads");
    const std::string corpus = (dir / "c.jsonl").string();
    REQUIRE(run_cli({"synth", "--traces", "20", "--output", corpus}).code == 0);
    REQUIRE(run_cli({"paired-stats", corpus, "--threads", "1", "--output", (dir / "p1.csv").string()}).code == 0);
    REQUIRE(run_cli({"paired-stats", corpus, "--threads", "3", "--output", (dir / "p3.csv").string()}).code == 0);
    CHECK(testing::slurp(dir / "p1.csv") == testing::slurp(dir / "p3.csv"));
}

}
