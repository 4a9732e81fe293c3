#include "ecn/llm_client.hpp"

#include <array>
#include <bit>
#include <random>
#include <sstream>
#include <thread>

#include "ecn/hash.hpp"

namespace ecn {

void RunConfig::validate() const {
    if (model_name.empty()) throw std::invalid_argument("model_name must not be empty");
    if (!(temperature >= 0.0 && temperature <= 2.0)) {
        throw std::invalid_argument("temperature must be within [0, 2]");
    }
    if (max_tokens < 1) throw std::invalid_argument("max_tokens must be >= 1");
    if (repetitions < 1) throw std::invalid_argument("repetitions must be >= 1");
    if (request_timeout.count() <= 0) throw std::invalid_argument("request_timeout must be > 0");
    if (retry.max_attempts < 1) throw std::invalid_argument("retry max_attempts must be >= 1");
    if (retry.backoff_base.count() < 0) throw std::invalid_argument("retry backoff must be >= 0");
}

const char* to_string(FinishReason reason) {
    switch (reason) {
    case FinishReason::Stop: return "stop";
    case FinishReason::Length: return "length";
    case FinishReason::Other: return "other";
    }
    return "other";
}

FinishReason finish_reason_from_string(const std::string& text) {
    if (text == "stop") return FinishReason::Stop;
    if (text == "length") return FinishReason::Length;
    return FinishReason::Other;
}

bool LlmError::retryable() const noexcept {
    switch (kind_) {
    case Kind::Transport:
    case Kind::Timeout:
    case Kind::RateLimited:
    case Kind::Server:
        return true;
    default:
        return false;
    }
}

const char* to_string(LlmError::Kind kind) {
    switch (kind) {
    case LlmError::Kind::Transport: return "transport";
    case LlmError::Kind::Timeout: return "timeout";
    case LlmError::Kind::RateLimited: return "rate_limited";
    case LlmError::Kind::Server: return "server";
    case LlmError::Kind::Auth: return "auth";
    case LlmError::Kind::InvalidRequest: return "invalid_request";
    case LlmError::Kind::BadResponse: return "bad_response";
    }
    return "unknown";
}

namespace {

constexpr std::array<const char*, 12> kFiller = {
    "It makes sense that this feels heavy right now.",
    "Many people in a similar position describe the same tension.",
    "There is no single right answer, but there are good next steps.",
    "Small routines can make the hardest days more manageable.",
    "Reaching out to a trusted community often helps more than expected.",
    "Your experience is valid, and it deserves to be taken seriously.",
    "Consider writing down what has worked before, even partially.",
    "Progress is rarely linear, and setbacks do not erase it.",
    "Local organizations sometimes offer support that is easy to miss.",
    "It can help to separate what you can change from what you cannot.",
    "Be patient with yourself while you try something new.",
    "Asking for specific help is a strength, not a weakness.",
};

std::size_t count_words(const std::string& text) {
    std::istringstream in(text);
    std::size_t n = 0;
    std::string w;
    while (in >> w) ++n;
    return n;
}

std::string stage_tag(const std::string& prompt) {
    // Opening words of the last non-empty line: the instruction this stage adds.
    std::string last;
    std::istringstream in(prompt);
    for (std::string line; std::getline(in, line);) {
        if (line.find_first_not_of(" \t\r") != std::string::npos) last = line;
    }
    std::istringstream words(last);
    std::string tag, w;
    for (int i = 0; i < 6 && words >> w; ++i) tag += (i ? " " : "") + w;
    return tag;
}

}  // namespace

ChatResponse MockBackend::complete(const ChatRequest& request) {
    if (request.user_message.empty()) {
        throw LlmError(LlmError::Kind::InvalidRequest, "user message must not be empty", 400);
    }
    Fnv1a64 key;
    key.add(seed_)
        .add_field(request.model_name)
        .add_field(request.system_message)
        .add_field(request.user_message)
        .add(std::bit_cast<std::uint64_t>(request.temperature))
        .add(static_cast<std::uint64_t>(request.max_tokens))
        .add(request.sample_index);
    std::mt19937_64 rng(key.value());

    std::ostringstream out;
    char id[17];
    std::snprintf(id, sizeof id, "%016llx", static_cast<unsigned long long>(key.value()));
    out << "[mock " << std::string(id, 8) << "] re: \"" << stage_tag(request.user_message) << "\".";
    // Partial Fisher-Yates so no sentence repeats within one reply.
    std::array<std::size_t, kFiller.size()> order;
    for (std::size_t i = 0; i < order.size(); ++i) order[i] = i;
    const std::size_t sentences = 2 + rng() % 3;
    for (std::size_t i = 0; i < sentences; ++i) {
        std::swap(order[i], order[i + rng() % (order.size() - i)]);
        out << ' ' << kFiller[order[i]];
    }

    ChatResponse response;
    response.text = out.str();
    std::size_t words = count_words(response.text);
    if (words > static_cast<std::size_t>(request.max_tokens)) {
        std::istringstream in(response.text);
        std::string truncated, w;
        for (int i = 0; i < request.max_tokens && in >> w; ++i) truncated += (i ? " " : "") + w;
        response.text = truncated;
        response.finish_reason = FinishReason::Length;
        words = static_cast<std::size_t>(request.max_tokens);
    }
    response.token_usage = TokenUsage{
        static_cast<int>(count_words(request.system_message) + count_words(request.user_message)),
        static_cast<int>(words)};
    return response;
}

RetryingBackend::RetryingBackend(std::shared_ptr<ChatBackend> inner, RetryPolicy policy,
                                 Sleeper sleep)
    : inner_(std::move(inner)), policy_(policy), sleep_(std::move(sleep)) {
    if (!inner_) throw std::invalid_argument("retry wrapper needs an inner backend");
    if (policy_.max_attempts < 1) throw std::invalid_argument("max_attempts must be >= 1");
    if (!sleep_) sleep_ = [](std::chrono::milliseconds d) { std::this_thread::sleep_for(d); };
}

ChatResponse RetryingBackend::complete(const ChatRequest& request) {
    auto delay = policy_.backoff_base;
    for (int attempt = 1;; ++attempt) {
        try {
            ChatResponse response = inner_->complete(request);
            response.attempts = attempt;
            return response;
        } catch (const LlmError& e) {
            if (!e.retryable() || attempt >= policy_.max_attempts) {
                throw LlmError(e.kind(), e.what(), e.http_status(), attempt);
            }
        }
        sleep_(delay);
        delay *= 2;
    }
}

std::shared_ptr<ChatBackend> with_retry(std::shared_ptr<ChatBackend> inner, RetryPolicy policy,
                                        Sleeper sleep) {
    return std::make_shared<RetryingBackend>(std::move(inner), policy, std::move(sleep));
}

EndpointUrl parse_endpoint_url(const std::string& url) {
    auto scheme_end = url.find("://");
    if (scheme_end == std::string::npos) {
        throw std::invalid_argument("endpoint URL needs an http:// or https:// scheme: " + url);
    }
    std::string scheme = url.substr(0, scheme_end);
    if (scheme != "http" && scheme != "https") {
        throw std::invalid_argument("unsupported URL scheme '" + scheme + "'");
    }
    auto path_start = url.find('/', scheme_end + 3);
    EndpointUrl out;
    out.scheme_host_port = url.substr(0, path_start);
    if (out.scheme_host_port.size() <= scheme_end + 3) {
        throw std::invalid_argument("endpoint URL has no host: " + url);
    }
    if (path_start != std::string::npos) {
        out.path_prefix = url.substr(path_start);
        while (!out.path_prefix.empty() && out.path_prefix.back() == '/') out.path_prefix.pop_back();
    }
    return out;
}

}  // namespace ecn
