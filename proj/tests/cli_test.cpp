#include <gtest/gtest.h>

#include <atomic>
#include <sstream>

#include <json.hpp>

#include "ecn/cli.hpp"
#include "ecn/runner.hpp"
#include "http_fixture.hpp"
#include "test_support.hpp"

using namespace ecn;
using namespace ecn::testing;
using json = nlohmann::json;

namespace {

struct Result {
    int code;
    std::string out, err;
};

Result ecn_cli(const std::vector<std::string>& args, cli::EnvLookup env = [](const std::string&) {
    return std::optional<std::string>{};
}) {
    std::ostringstream out, err;
    int code = cli::run(args, out, err, env);
    return {code, out.str(), err.str()};
}

std::string sample_csv() { return std::string(ECN_DATA_DIR) + "/personae_sample.csv"; }

std::string count_lines(const std::string& text) {
    return std::to_string(std::count(text.begin(), text.end(), '\n'));
}

}  // namespace

TEST(CliValidate, CleanDatasetIsSilent) {
    auto r = ecn_cli({"validate", "--dataset", sample_csv()});
    EXPECT_EQ(r.code, 0) << r.err;
    EXPECT_EQ(r.out, "");
    EXPECT_EQ(ecn_cli({"validate", "--dataset", std::string(ECN_DATA_DIR) + "/personae_sample.jsonl"}).code,
              0);
}

TEST(CliValidate, DuplicateIdIsAFinding) {
    TempDir dir;
    write_text(dir / "d.csv",
               "id,demographics,difficulties,query\n"
               "a,x,y,z\n"
               "b,x,y,z\n"
               "a,x,y,z\n");
    auto r = ecn_cli({"validate", "--dataset", (dir / "d.csv").string()});
    EXPECT_EQ(r.code, 1);
    EXPECT_NE(r.out.find("a"), std::string::npos);
}

TEST(CliValidate, EmptyFieldIsAFinding) {
    TempDir dir;
    write_text(dir / "d.csv", "id,demographics,difficulties,query\na,x,,z\n");
    auto r = ecn_cli({"validate", "--dataset", (dir / "d.csv").string()});
    EXPECT_EQ(r.code, 1);
    EXPECT_NE(r.out.find("difficulties"), std::string::npos) << r.out;
}

TEST(CliValidate, MissingFileIsUsageError) {
    auto r = ecn_cli({"validate", "--dataset", "/nonexistent/d.csv"});
    EXPECT_EQ(r.code, 2);
    EXPECT_FALSE(r.err.empty());
}

TEST(CliUsage, UnknownFlagOrNoSubcommand) {
    EXPECT_EQ(ecn_cli({"run", "--bogus"}).code, 2);
    EXPECT_EQ(ecn_cli({}).code, 2);
    EXPECT_EQ(ecn_cli({"--help"}).code, 0);
}

TEST(CliRun, MockEcnRunWritesOneRecordPerEntryAndRun) {
    TempDir dir;
    auto store = (dir / "runs.jsonl").string();
    auto r = ecn_cli({"--mock", "--store", store, "run", "--dataset", sample_csv(), "--strategies",
                      "ecn", "--repetitions", "2"});
    ASSERT_EQ(r.code, 0) << r.err;
    EXPECT_EQ(r.out, "20 new records (20 completed, 0 failed); 0 already in " + store + "\n");
    auto records = RunStore(store).load();
    ASSERT_EQ(records.size(), 20u);
    for (const auto& rec : records) {
        EXPECT_EQ(rec.cascade.transcripts.size(), 4u);
        ASSERT_TRUE(rec.scores);
    }
    auto manifest = RunStore(store).read_manifest();
    ASSERT_TRUE(manifest);
    EXPECT_EQ((*manifest)["strategies"], json({"ecn"}));
    EXPECT_EQ((*manifest)["dataset"]["entries"], 10);

    auto again = ecn_cli({"--mock", "--store", store, "run", "--dataset", sample_csv(),
                          "--strategies", "ecn", "--repetitions", "2"});
    EXPECT_EQ(again.code, 0);
    EXPECT_EQ(again.out.rfind("0 new records", 0), 0u) << again.out;
}

TEST(CliRun, ChangedSamplingRefusesToResume) {
    TempDir dir;
    auto store = (dir / "runs.jsonl").string();
    ASSERT_EQ(ecn_cli({"--mock", "--store", store, "run", "--dataset", sample_csv(), "--strategies",
                       "standard", "--repetitions", "1"}).code,
              0);
    auto r = ecn_cli({"--mock", "--store", store, "run", "--dataset", sample_csv(), "--strategies",
                      "standard", "--repetitions", "1", "--temperature", "0.2"});
    EXPECT_EQ(r.code, 2);
    EXPECT_EQ(RunStore(store).load().size(), 10u);
}

TEST(CliRun, MissingCredentialsFailBeforeAnyRequest) {
    LocalServer server;
    std::atomic<int> hits{0};
    server.server().Post(".*", [&](const httplib::Request&, httplib::Response& res) {
        ++hits;
        res.status = 500;
    });
    server.start();
    TempDir dir;
    auto store = (dir / "runs.jsonl").string();
    auto r = ecn_cli({"--store", store, "run", "--dataset", sample_csv(), "--base-url",
                      server.url("/v1")});
    EXPECT_EQ(r.code, 2);
    EXPECT_NE(r.err.find("OPENAI_API_KEY"), std::string::npos) << r.err;
    EXPECT_EQ(hits.load(), 0);
    EXPECT_FALSE(std::filesystem::exists(store));
}

TEST(CliRun, UnknownStrategyIsUsageError) {
    TempDir dir;
    auto r = ecn_cli({"--mock", "--store", (dir / "s.jsonl").string(), "run", "--dataset",
                      sample_csv(), "--strategies", "telepathy"});
    EXPECT_EQ(r.code, 2);
    EXPECT_NE(r.err.find("telepathy"), std::string::npos);
}

// Whole pipeline over HTTP: chat completions and scorer both served locally.
TEST(CliRun, HttpBackendAndScorerEndToEnd) {
    LocalServer llm, scorer;
    std::atomic<int> chat_calls{0};
    llm.server().Post("/v1/chat/completions", [&](const httplib::Request& req, httplib::Response& res) {
        int n = ++chat_calls;
        auto body = json::parse(req.body);
        if (req.get_header_value("Authorization") != "Bearer sk-local") {
            res.status = 401;
            return;
        }
        json reply = {{"choices", {{{"message", {{"role", "assistant"},
                                                  {"content", "reply " + std::to_string(n)}}},
                                    {"finish_reason", "stop"}}}}};
        res.set_content(reply.dump(), "application/json");
    });
    llm.start();
    scorer.server().Get("/healthz", [](const httplib::Request&, httplib::Response& res) {
        res.set_content("{}", "application/json");
    });
    scorer.server().Post("/entailment", [](const httplib::Request&, httplib::Response& res) {
        res.set_content(R"({"probabilities":[0.9,0.9,0.9]})", "application/json");
    });
    scorer.server().Post("/sentiment", [](const httplib::Request&, httplib::Response& res) {
        res.set_content(R"({"positive":0.5,"neutral":0.5,"negative":0.0})", "application/json");
    });
    scorer.server().Post("/logprobs", [](const httplib::Request&, httplib::Response& res) {
        res.set_content(R"({"token_count":3,"mean_log_prob":-2.0})", "application/json");
    });
    scorer.start();

    TempDir dir;
    auto store = (dir / "runs.jsonl").string();
    auto env = [](const std::string& name) -> std::optional<std::string> {
        if (name == "OPENAI_API_KEY") return "sk-local";
        return std::nullopt;
    };
    auto r = ecn_cli({"--store", store, "run", "--dataset", sample_csv(), "--strategies",
                      "ecn,standard", "--repetitions", "1", "--base-url", llm.url("/v1"),
                      "--scorer-url", scorer.url()},
                     env);
    ASSERT_EQ(r.code, 0) << r.err;
    EXPECT_EQ(chat_calls.load(), 10 * 4 + 10);
    auto records = RunStore(store).load();
    ASSERT_EQ(records.size(), 20u);
    for (const auto& rec : records) {
        ASSERT_TRUE(rec.scores);
        EXPECT_NEAR(*rec.scores->eq.value, 0.9, 1e-12);
        EXPECT_NEAR(*rec.scores->regard.value, 0.5, 1e-12);
    }
}

TEST(CliScore, ScoresOnlyUnscoredRecords) {
    TempDir dir;
    auto store = (dir / "runs.jsonl").string();
    // Five unscored records: one entry set of five, one strategy, one run.
    write_text(dir / "five.csv",
               "id,demographics,difficulties,query\n"
               "a,d1,f1,q1\nb,d2,f2,q2\nc,d3,f3,q3\nd,d4,f4,q4\ne,d5,f5,q5\n");
    auto r = ecn_cli({"--mock", "--store", store, "run", "--dataset", (dir / "five.csv").string(),
                      "--strategies", "standard", "--repetitions", "1", "--no-score"});
    ASSERT_EQ(r.code, 0) << r.err;
    for (const auto& rec : RunStore(store).load()) EXPECT_FALSE(rec.scores);

    auto s = ecn_cli({"--mock", "--store", store, "score"});
    ASSERT_EQ(s.code, 0) << s.err;
    EXPECT_EQ(s.out, "5 records scored\n");
    auto records = RunStore(store).load();
    ASSERT_EQ(records.size(), 5u);
    for (const auto& rec : records) EXPECT_TRUE(rec.scores);
    auto manifest = RunStore(store).read_manifest();
    ASSERT_TRUE(manifest);
    EXPECT_EQ((*manifest)["run_means"].size(), 1u);

    auto hash = store_content_hash(records);
    auto again = ecn_cli({"--mock", "--store", store, "score"});
    EXPECT_EQ(again.code, 0);
    EXPECT_EQ(again.out, "0 records to score\n");
    EXPECT_EQ(store_content_hash(RunStore(store).load()), hash);
}

TEST(CliScore, UnreachableScorerLeavesStoreUnchanged) {
    TempDir dir;
    auto store = (dir / "runs.jsonl").string();
    ASSERT_EQ(ecn_cli({"--mock", "--store", store, "run", "--dataset", sample_csv(),
                       "--strategies", "standard", "--repetitions", "1", "--no-score"}).code,
              0);
    auto before = read_text(store);
    auto r = ecn_cli({"--store", store, "score", "--scorer-url", dead_url()});
    EXPECT_EQ(r.code, 3);
    EXPECT_NE(r.err.find("unreachable"), std::string::npos);
    EXPECT_EQ(read_text(store), before);
}

TEST(CliScore, ScorerDyingMidwayLeavesStoreUnchanged) {
    LocalServer scorer;
    scorer.server().Get("/healthz", [](const httplib::Request&, httplib::Response& res) {
        res.set_content("{}", "application/json");
    });
    scorer.server().Post(".*", [](const httplib::Request&, httplib::Response& res) {
        res.status = 503;
    });
    scorer.start();
    TempDir dir;
    auto store = (dir / "runs.jsonl").string();
    ASSERT_EQ(ecn_cli({"--mock", "--store", store, "run", "--dataset", sample_csv(),
                       "--strategies", "standard", "--repetitions", "1", "--no-score"}).code,
              0);
    auto before = read_text(store);
    auto r = ecn_cli({"--store", store, "score", "--scorer-url", scorer.url()});
    EXPECT_EQ(r.code, 3);
    EXPECT_EQ(read_text(store), before);
}

TEST(CliReport, MarkdownAndCsv) {
    TempDir dir;
    auto store = (dir / "runs.jsonl").string();
    ASSERT_EQ(ecn_cli({"--mock", "--seed", "7", "--store", store, "run", "--dataset", sample_csv(),
                       "--repetitions", "2"}).code,
              0);
    auto md = ecn_cli({"--store", store, "report"});
    ASSERT_EQ(md.code, 0) << md.err;
    EXPECT_NE(md.out.find("## gpt-3.5-turbo"), std::string::npos);
    for (const char* name : {"| Standard Prompt |", "| Basic Empathy Prompt |",
                             "| Diversity-Aware Prompt |", "| ECN |"}) {
        EXPECT_NE(md.out.find(name), std::string::npos) << name;
    }
    // Rows appear in the canonical order.
    EXPECT_LT(md.out.find("Standard Prompt"), md.out.find("| ECN |"));

    auto csv = ecn_cli({"--store", store, "report", "--format", "csv", "--reduction", "pooled"});
    ASSERT_EQ(csv.code, 0);
    EXPECT_EQ(count_lines(csv.out), "5");
    EXPECT_NE(csv.out.find(",pooled,"), std::string::npos);

    auto file = (dir / "table.md").string();
    ASSERT_EQ(ecn_cli({"--store", store, "report", "--output", file}).code, 0);
    EXPECT_EQ(read_text(file), md.out);
}

TEST(CliReport, EmptyStoreIsAnError) {
    TempDir dir;
    auto r = ecn_cli({"--store", (dir / "none.jsonl").string(), "report"});
    EXPECT_NE(r.code, 0);
    EXPECT_FALSE(r.err.empty());
    write_text(dir / "empty.jsonl", "");
    EXPECT_NE(ecn_cli({"--store", (dir / "empty.jsonl").string(), "report"}).code, 0);
}

TEST(CliConfig, FileLayeredUnderFlags) {
    TempDir dir;
    auto store = (dir / "runs.jsonl").string();
    json cfg = {{"dataset", sample_csv()}, {"strategies", {"standard", "ecn"}},
                {"repetitions", 3},        {"mock", true},
                {"store", store},          {"temperature", 0.5}};
    write_text(dir / "cfg.json", cfg.dump());
    auto r = ecn_cli({"--config", (dir / "cfg.json").string(), "run", "--repetitions", "1"});
    ASSERT_EQ(r.code, 0) << r.err;
    auto records = RunStore(store).load();
    EXPECT_EQ(records.size(), 20u);
    EXPECT_EQ(records.front().config.temperature, 0.5);

    write_text(dir / "bad.json", R"({"temprature": 0.5})");
    auto bad = ecn_cli({"--config", (dir / "bad.json").string(), "report"});
    EXPECT_EQ(bad.code, 2);
    EXPECT_NE(bad.err.find("temprature"), std::string::npos);
}
