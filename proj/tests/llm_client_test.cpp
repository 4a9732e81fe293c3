#include <gtest/gtest.h>

#include <random>

#include <json.hpp>

#include "ecn/hash.hpp"
#include "ecn/llm_client.hpp"
#include "http_fixture.hpp"
#include "test_support.hpp"

using namespace ecn;
using ecn::testing::LocalServer;
using ecn::testing::ScriptedBackend;
using json = nlohmann::json;

namespace {

ChatRequest ping() {
    ChatRequest r;
    r.model_name = "gpt-3.5-turbo";
    r.system_message = kDefaultSystemMessage;
    r.user_message = "ping";
    return r;
}

void no_sleep(std::chrono::milliseconds) {}

}  // namespace

TEST(RunConfig, DefaultsAreValid) {
    RunConfig cfg;
    EXPECT_NO_THROW(cfg.validate());
    EXPECT_DOUBLE_EQ(cfg.temperature, 0.7);
    EXPECT_EQ(cfg.max_tokens, 200);
    EXPECT_EQ(cfg.repetitions, 10);
    EXPECT_EQ(cfg.system_message, "You are a helpful assistant.");
}

TEST(RunConfig, RangesEnforced) {
    auto bad = [](auto mutate) {
        RunConfig c;
        mutate(c);
        return c;
    };
    EXPECT_THROW(bad([](RunConfig& c) { c.temperature = -0.1; }).validate(), std::invalid_argument);
    EXPECT_THROW(bad([](RunConfig& c) { c.temperature = 2.1; }).validate(), std::invalid_argument);
    EXPECT_THROW(bad([](RunConfig& c) { c.max_tokens = 0; }).validate(), std::invalid_argument);
    EXPECT_THROW(bad([](RunConfig& c) { c.repetitions = 0; }).validate(), std::invalid_argument);
    EXPECT_THROW(bad([](RunConfig& c) { c.retry.max_attempts = 0; }).validate(),
                 std::invalid_argument);
    EXPECT_NO_THROW(bad([](RunConfig& c) { c.temperature = 2.0; }).validate());
}

TEST(MockBackend, SameSeedSameText) {
    MockBackend a(7), b(7);
    auto first = a.complete(ping());
    for (int i = 0; i < 5; ++i) EXPECT_EQ(a.complete(ping()).text, first.text);
    EXPECT_EQ(b.complete(ping()).text, first.text);
    EXPECT_NE(MockBackend(8).complete(ping()).text, first.text);
}

// Pinned so a platform- or build-dependent change to the mock shows up here
// rather than as unexplained store-hash drift.
TEST(MockBackend, OutputIsStableAcrossProcesses) {
    auto text = MockBackend(7).complete(ping()).text;
    EXPECT_EQ(text,
              "[mock d59cb11b] re: \"ping\". Be patient with yourself while you try something "
              "new. Reaching out to a trusted community often helps more than expected. Asking "
              "for specific help is a strength, not a weakness. Small routines can make the "
              "hardest days more manageable.");
}

TEST(MockBackend, SampleIndexGivesIndependentSamples) {
    MockBackend m(7);
    auto r1 = ping();
    auto r2 = ping();
    r2.sample_index = 2;
    EXPECT_NE(m.complete(r1).text, m.complete(r2).text);
}

TEST(MockBackend, TagsStageAndRespectsMaxTokens) {
    MockBackend m(1);
    auto req = ping();
    req.user_message = "Imagine you are D. Describe things.\nOutput: x\nWhat universal human emotions might arise?";
    auto res = m.complete(req);
    EXPECT_NE(res.text.find("What universal human emotions might"), std::string::npos);
    EXPECT_EQ(res.finish_reason, FinishReason::Stop);

    req.max_tokens = 3;
    res = m.complete(req);
    EXPECT_EQ(res.finish_reason, FinishReason::Length);
    ASSERT_TRUE(res.token_usage);
    EXPECT_EQ(res.token_usage->completion_tokens, 3);
}

TEST(MockBackend, EmptyUserMessageRejected) {
    auto req = ping();
    req.user_message.clear();
    EXPECT_THROW(MockBackend(1).complete(req), LlmError);
}

TEST(Retry, AlwaysFailingRetryableStopsAtMaxAttempts) {
    auto inner = std::make_shared<ScriptedBackend>(std::vector<ScriptedBackend::Step>(
        5, {LlmError::Kind::RateLimited, ""}));
    auto backend = with_retry(inner, {3, std::chrono::milliseconds(1)}, no_sleep);
    try {
        backend->complete(ping());
        FAIL();
    } catch (const LlmError& e) {
        EXPECT_EQ(e.kind(), LlmError::Kind::RateLimited);
        EXPECT_EQ(e.attempts(), 3);
    }
    EXPECT_EQ(inner->calls(), 3);
}

TEST(Retry, SuccessFirstTryIsOneCall) {
    auto inner = std::make_shared<ScriptedBackend>(
        std::vector<ScriptedBackend::Step>{{std::nullopt, "ok"}});
    auto res = with_retry(inner, {3, {}}, no_sleep)->complete(ping());
    EXPECT_EQ(res.attempts, 1);
    EXPECT_EQ(inner->calls(), 1);
}

TEST(Retry, FailFailSucceed) {
    auto inner = std::make_shared<ScriptedBackend>(std::vector<ScriptedBackend::Step>{
        {LlmError::Kind::Timeout, ""}, {LlmError::Kind::Server, ""}, {std::nullopt, "third"}});
    std::vector<std::chrono::milliseconds> sleeps;
    auto backend = with_retry(inner, {3, std::chrono::milliseconds(100)},
                              [&](std::chrono::milliseconds d) { sleeps.push_back(d); });
    auto res = backend->complete(ping());
    EXPECT_EQ(res.text, "third");
    EXPECT_EQ(res.attempts, 3);
    ASSERT_EQ(sleeps.size(), 2u);
    EXPECT_EQ(sleeps[0].count(), 100);
    EXPECT_EQ(sleeps[1].count(), 200);
}

TEST(Retry, NonRetryableNotRetried) {
    auto inner = std::make_shared<ScriptedBackend>(std::vector<ScriptedBackend::Step>{
        {LlmError::Kind::Auth, ""}, {std::nullopt, "never"}});
    EXPECT_THROW(with_retry(inner, {5, {}}, no_sleep)->complete(ping()), LlmError);
    EXPECT_EQ(inner->calls(), 1);
}

// Call count for any fault script: stop at the first success or
// non-retryable error, never beyond max_attempts.
TEST(Retry, CallCountMatchesPolicyForRandomScripts) {
    std::mt19937 rng(2024);
    const LlmError::Kind kinds[] = {LlmError::Kind::Transport, LlmError::Kind::Timeout,
                                    LlmError::Kind::RateLimited, LlmError::Kind::Server,
                                    LlmError::Kind::Auth, LlmError::Kind::InvalidRequest};
    for (int trial = 0; trial < 500; ++trial) {
        int max_attempts = 1 + static_cast<int>(rng() % 6);
        std::vector<ScriptedBackend::Step> script;
        int len = 1 + static_cast<int>(rng() % 8);
        for (int i = 0; i < len; ++i) {
            if (rng() % 4 == 0) script.push_back({std::nullopt, "ok"});
            else script.push_back({kinds[rng() % 6], ""});
        }
        script.push_back({std::nullopt, "tail"});

        int expected_calls = 0;
        bool expected_ok = false;
        for (const auto& step : script) {
            ++expected_calls;
            if (!step.fail) { expected_ok = true; break; }
            bool retryable = *step.fail != LlmError::Kind::Auth &&
                             *step.fail != LlmError::Kind::InvalidRequest;
            if (!retryable || expected_calls == max_attempts) break;
        }

        auto inner = std::make_shared<ScriptedBackend>(script);
        auto backend = with_retry(inner, {max_attempts, {}}, no_sleep);
        bool ok = true;
        try {
            auto res = backend->complete(ping());
            EXPECT_EQ(res.attempts, expected_calls);
        } catch (const LlmError& e) {
            ok = false;
            EXPECT_EQ(e.attempts(), expected_calls);
        }
        ASSERT_EQ(ok, expected_ok) << "trial " << trial;
        ASSERT_EQ(inner->calls(), expected_calls) << "trial " << trial;
        ASSERT_LE(inner->calls(), max_attempts);
    }
}

TEST(EndpointUrl, SplitsHostAndPrefix) {
    auto u = parse_endpoint_url("https://api.openai.com/v1/");
    EXPECT_EQ(u.scheme_host_port, "https://api.openai.com");
    EXPECT_EQ(u.path_prefix, "/v1");
    EXPECT_EQ(parse_endpoint_url("http://localhost:8000").path_prefix, "");
    EXPECT_THROW(parse_endpoint_url("localhost:8000"), std::invalid_argument);
    EXPECT_THROW(parse_endpoint_url("ftp://x"), std::invalid_argument);
}

class OpenAiBackendTest : public ::testing::Test {
protected:
    std::shared_ptr<OpenAiBackend> backend(std::chrono::milliseconds timeout = std::chrono::seconds(5)) {
        OpenAiOptions o;
        o.base_url = server.url("/v1");
        o.api_key = "sk-test";
        o.timeout = timeout;
        return std::make_shared<OpenAiBackend>(o);
    }
    LocalServer server;
};

TEST_F(OpenAiBackendTest, SendsChatCompletionsBodyAndParsesReply) {
    json seen;
    std::string auth;
    server.server().Post("/v1/chat/completions", [&](const httplib::Request& req, httplib::Response& res) {
        seen = json::parse(req.body);
        auth = req.get_header_value("Authorization");
        res.set_content(R"({"choices":[{"message":{"role":"assistant","content":"Hello there."},
                            "finish_reason":"length"}],
                            "usage":{"prompt_tokens":12,"completion_tokens":200}})",
                        "application/json");
    });
    server.start();
    auto b = backend();
    auto res = b->complete(ping());
    EXPECT_EQ(res.text, "Hello there.");
    EXPECT_EQ(res.finish_reason, FinishReason::Length);
    ASSERT_TRUE(res.token_usage);
    EXPECT_EQ(res.token_usage->completion_tokens, 200);

    EXPECT_EQ(auth, "Bearer sk-test");
    EXPECT_EQ(seen["model"], "gpt-3.5-turbo");
    EXPECT_DOUBLE_EQ(seen["temperature"].get<double>(), 0.7);
    EXPECT_EQ(seen["max_tokens"], 200);
    ASSERT_EQ(seen["messages"].size(), 2u);
    EXPECT_EQ(seen["messages"][0]["role"], "system");
    EXPECT_EQ(seen["messages"][0]["content"], "You are a helpful assistant.");
    EXPECT_EQ(seen["messages"][1]["role"], "user");
    EXPECT_EQ(seen["messages"][1]["content"], "ping");
    EXPECT_FALSE(seen.contains("sample_index"));
}

TEST_F(OpenAiBackendTest, InvalidCredentialsAreNonRetryableAuthError) {
    int calls = 0;
    server.server().Post("/v1/chat/completions", [&](const httplib::Request&, httplib::Response& res) {
        ++calls;
        res.status = 401;
        res.set_content(R"({"error":{"message":"Incorrect API key provided"}})", "application/json");
    });
    server.start();
    auto inner = backend();
    try {
        with_retry(inner, {4, {}}, no_sleep)->complete(ping());
        FAIL();
    } catch (const LlmError& e) {
        EXPECT_EQ(e.kind(), LlmError::Kind::Auth);
        EXPECT_FALSE(e.retryable());
        EXPECT_EQ(e.http_status(), 401);
        EXPECT_NE(std::string(e.what()).find("Incorrect API key"), std::string::npos);
    }
    EXPECT_EQ(calls, 1);
}

TEST_F(OpenAiBackendTest, RateLimitThenSuccessRetriesOnce) {
    int calls = 0;
    server.server().Post("/v1/chat/completions", [&](const httplib::Request&, httplib::Response& res) {
        if (++calls == 1) {
            res.status = 429;
            res.set_content(R"({"error":{"message":"Rate limit reached"}})", "application/json");
            return;
        }
        res.set_content(R"({"choices":[{"message":{"content":"ok"},"finish_reason":"stop"}]})",
                        "application/json");
    });
    server.start();
    auto inner = backend();
    auto res = with_retry(inner, {3, {}}, no_sleep)->complete(ping());
    EXPECT_EQ(res.text, "ok");
    EXPECT_EQ(res.attempts, 2);
    EXPECT_EQ(calls, 2);
}

TEST_F(OpenAiBackendTest, ServerErrorBodySurfaced) {
    server.server().Post("/v1/chat/completions", [&](const httplib::Request&, httplib::Response& res) {
        res.status = 503;
        res.set_content("upstream overloaded", "text/plain");
    });
    server.start();
    try {
        backend()->complete(ping());
        FAIL();
    } catch (const LlmError& e) {
        EXPECT_EQ(e.kind(), LlmError::Kind::Server);
        EXPECT_TRUE(e.retryable());
        EXPECT_NE(std::string(e.what()).find("upstream overloaded"), std::string::npos);
    }
}

TEST_F(OpenAiBackendTest, BadRequestAndMalformedReply) {
    int calls = 0;
    server.server().Post("/v1/chat/completions", [&](const httplib::Request&, httplib::Response& res) {
        if (++calls == 1) {
            res.status = 400;
            res.set_content("bad", "text/plain");
        } else {
            res.set_content("{\"choices\":[]}", "application/json");
        }
    });
    server.start();
    auto b = backend();
    try {
        b->complete(ping());
        FAIL();
    } catch (const LlmError& e) {
        EXPECT_EQ(e.kind(), LlmError::Kind::InvalidRequest);
    }
    try {
        b->complete(ping());
        FAIL();
    } catch (const LlmError& e) {
        EXPECT_EQ(e.kind(), LlmError::Kind::BadResponse);
    }
}

TEST_F(OpenAiBackendTest, SlowServerTimesOut) {
    server.server().Post("/v1/chat/completions", [&](const httplib::Request&, httplib::Response& res) {
        std::this_thread::sleep_for(std::chrono::milliseconds(800));
        res.set_content("{}", "application/json");
    });
    server.start();
    try {
        backend(std::chrono::milliseconds(200))->complete(ping());
        FAIL();
    } catch (const LlmError& e) {
        EXPECT_EQ(e.kind(), LlmError::Kind::Timeout);
        EXPECT_TRUE(e.retryable());
    }
}

TEST(OpenAiBackend, UnreachableIsTransportError) {
    OpenAiOptions o;
    o.base_url = ecn::testing::dead_url();
    o.timeout = std::chrono::seconds(2);
    OpenAiBackend b(o);
    try {
        b.complete(ping());
        FAIL();
    } catch (const LlmError& e) {
        EXPECT_TRUE(e.kind() == LlmError::Kind::Transport || e.kind() == LlmError::Kind::Timeout);
        EXPECT_TRUE(e.retryable());
    }
}

TEST(Hash, Fnv1aKnownVector) {
    // Reference FNV-1a 64 value for "a".
    EXPECT_EQ(Fnv1a64().add("a").value(), 0xaf63dc4c8601ec8cULL);
    EXPECT_EQ(sha256_hex("abc"),
              "ba7816bf8f01cfea414140de5dae2223b00361a396177a9cb410ff61f20015ad");
}
