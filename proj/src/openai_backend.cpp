#include <algorithm>

#include <json.hpp>

#include "ecn/llm_client.hpp"
#include "http.hpp"

namespace ecn {

namespace {

using json = nlohmann::json;

std::string excerpt(const std::string& body) {
    constexpr std::size_t kMax = 500;
    return body.size() <= kMax ? body : body.substr(0, kMax) + "...";
}

LlmError::Kind kind_for_status(int status) {
    if (status == 401 || status == 403) return LlmError::Kind::Auth;
    if (status == 429) return LlmError::Kind::RateLimited;
    if (status == 408) return LlmError::Kind::Timeout;
    if (status >= 500) return LlmError::Kind::Server;
    return LlmError::Kind::InvalidRequest;
}

// Releases a semaphore slot on scope exit.
struct SlotGuard {
    std::counting_semaphore<>& sem;
    explicit SlotGuard(std::counting_semaphore<>& s) : sem(s) { sem.acquire(); }
    ~SlotGuard() { sem.release(); }
    SlotGuard(const SlotGuard&) = delete;
    SlotGuard& operator=(const SlotGuard&) = delete;
};

}  // namespace

OpenAiBackend::OpenAiBackend(OpenAiOptions options)
    : options_(std::move(options)), in_flight_(std::max(1, options_.max_in_flight)) {
    parse_endpoint_url(options_.base_url);
}

ChatResponse OpenAiBackend::complete(const ChatRequest& request) {
    if (request.user_message.empty()) {
        throw LlmError(LlmError::Kind::InvalidRequest, "user message must not be empty");
    }
    json body = {
        {"model", request.model_name},
        {"messages",
         json::array({{{"role", "system"}, {"content", request.system_message}},
                      {{"role", "user"}, {"content", request.user_message}}})},
        {"temperature", request.temperature},
        {"max_tokens", request.max_tokens},
    };
    std::vector<std::pair<std::string, std::string>> headers;
    if (!options_.api_key.empty()) headers.emplace_back("Authorization", "Bearer " + options_.api_key);

    auto start = std::chrono::steady_clock::now();
    detail::HttpResult res;
    {
        SlotGuard slot(in_flight_);
        res = detail::post_json(options_.base_url, "/chat/completions", body.dump(), headers,
                                options_.timeout);
    }
    auto latency = std::chrono::duration_cast<std::chrono::milliseconds>(
        std::chrono::steady_clock::now() - start);

    using T = detail::HttpResult::Transport;
    if (res.transport == T::Timeout) {
        throw LlmError(LlmError::Kind::Timeout, "chat request timed out: " + res.error);
    }
    if (res.transport != T::Ok) {
        throw LlmError(LlmError::Kind::Transport, "chat request failed: " + res.error);
    }
    if (res.status < 200 || res.status >= 300) {
        throw LlmError(kind_for_status(res.status),
                       "chat endpoint returned HTTP " + std::to_string(res.status) + ": " +
                           excerpt(res.body),
                       res.status);
    }

    ChatResponse out;
    out.latency = latency;
    try {
        json doc = json::parse(res.body);
        const json& choice = doc.at("choices").at(0);
        if (choice.contains("finish_reason") && choice["finish_reason"].is_string()) {
            out.finish_reason = finish_reason_from_string(choice["finish_reason"].get<std::string>());
        } else {
            out.finish_reason = FinishReason::Other;
        }
        const json& content = choice.at("message").at("content");
        if (content.is_string()) {
            out.text = content.get<std::string>();
        } else if (out.finish_reason != FinishReason::Other) {
            throw LlmError(LlmError::Kind::BadResponse, "chat response has no message content",
                           res.status);
        }
        if (doc.contains("usage") && doc["usage"].is_object()) {
            const json& usage = doc["usage"];
            out.token_usage = TokenUsage{usage.value("prompt_tokens", 0),
                                         usage.value("completion_tokens", 0)};
        }
    } catch (const json::exception& e) {
        throw LlmError(LlmError::Kind::BadResponse,
                       std::string("unparseable chat response: ") + e.what() + ": " +
                           excerpt(res.body),
                       res.status);
    }
    return out;
}

}  // namespace ecn
