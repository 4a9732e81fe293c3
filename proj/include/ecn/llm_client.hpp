#pragma once

#include <chrono>
#include <cstdint>
#include <functional>
#include <memory>
#include <optional>
#include <semaphore>
#include <stdexcept>
#include <string>

namespace ecn {

inline constexpr const char* kDefaultSystemMessage = "You are a helpful assistant.";

struct RetryPolicy {
    int max_attempts = 3;
    std::chrono::milliseconds backoff_base{500};
};

/// Sampling and execution settings shared by every call of an experiment.
struct RunConfig {
    std::string model_name = "gpt-3.5-turbo";
    double temperature = 0.7;
    int max_tokens = 200;
    std::string system_message = kDefaultSystemMessage;
    int repetitions = 10;
    std::chrono::milliseconds request_timeout{60'000};
    RetryPolicy retry;

    /// Throws std::invalid_argument naming the first out-of-range field.
    void validate() const;
};

struct TokenUsage {
    int prompt_tokens = 0;
    int completion_tokens = 0;

    bool operator==(const TokenUsage&) const = default;
};

struct ChatRequest {
    std::string model_name;
    std::string system_message;
    std::string user_message;
    double temperature = 0.7;
    int max_tokens = 200;
    // Distinguishes independent samples of one prompt (the repetition index).
    // Only the mock backend looks at it; HTTP backends do not send it.
    std::uint64_t sample_index = 0;
};

enum class FinishReason { Stop, Length, Other };

const char* to_string(FinishReason reason);
FinishReason finish_reason_from_string(const std::string& text);

struct ChatResponse {
    std::string text;
    FinishReason finish_reason = FinishReason::Stop;
    std::optional<TokenUsage> token_usage;
    std::chrono::milliseconds latency{0};
    int attempts = 1;
};

/// A failed chat call. Only some kinds are worth retrying.
class LlmError : public std::runtime_error {
public:
    enum class Kind { Transport, Timeout, RateLimited, Server, Auth, InvalidRequest, BadResponse };

    LlmError(Kind kind, const std::string& what, int http_status = 0, int attempts = 1)
        : std::runtime_error(what), kind_(kind), http_status_(http_status), attempts_(attempts) {}

    Kind kind() const noexcept { return kind_; }
    int http_status() const noexcept { return http_status_; }
    int attempts() const noexcept { return attempts_; }
    bool retryable() const noexcept;

private:
    Kind kind_;
    int http_status_;
    int attempts_;
};

const char* to_string(LlmError::Kind kind);

class ChatBackend {
public:
    virtual ~ChatBackend() = default;
    virtual ChatResponse complete(const ChatRequest& request) = 0;
    virtual std::string name() const = 0;
};

/// Deterministic offline backend. The reply is a pure function of
/// (seed, request): a few filler sentences derived from a keyed hash,
/// tagged with the opening words of the prompt's last line.
class MockBackend : public ChatBackend {
public:
    explicit MockBackend(std::uint64_t seed) : seed_(seed) {}

    ChatResponse complete(const ChatRequest& request) override;
    std::string name() const override { return "mock"; }

private:
    std::uint64_t seed_;
};

struct OpenAiOptions {
    std::string base_url = "https://api.openai.com/v1";
    std::string api_key;
    std::chrono::milliseconds timeout{60'000};
    int max_in_flight = 4;
};

/// Client for any OpenAI-compatible `/chat/completions` endpoint.
class OpenAiBackend : public ChatBackend {
public:
    explicit OpenAiBackend(OpenAiOptions options);

    ChatResponse complete(const ChatRequest& request) override;
    std::string name() const override { return "openai-compatible:" + options_.base_url; }

private:
    OpenAiOptions options_;
    std::counting_semaphore<> in_flight_;
};

using Sleeper = std::function<void(std::chrono::milliseconds)>;

class RetryingBackend : public ChatBackend {
public:
    RetryingBackend(std::shared_ptr<ChatBackend> inner, RetryPolicy policy, Sleeper sleep = {});

    ChatResponse complete(const ChatRequest& request) override;
    std::string name() const override { return inner_->name(); }

private:
    std::shared_ptr<ChatBackend> inner_;
    RetryPolicy policy_;
    Sleeper sleep_;
};

/// Wraps `inner` so retryable failures are re-issued with exponential
/// backoff (base, 2*base, 4*base, ...), up to `policy.max_attempts` calls.
std::shared_ptr<ChatBackend> with_retry(std::shared_ptr<ChatBackend> inner, RetryPolicy policy,
                                        Sleeper sleep = {});

/// Splits `http[s]://host[:port][/prefix]` into its parts.
struct EndpointUrl {
    std::string scheme_host_port;
    std::string path_prefix;
};
EndpointUrl parse_endpoint_url(const std::string& url);

}  // namespace ecn
