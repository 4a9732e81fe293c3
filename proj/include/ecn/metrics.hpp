#pragma once

#include <array>
#include <chrono>
#include <cstdint>
#include <memory>
#include <optional>
#include <span>
#include <stdexcept>
#include <string>
#include <vector>

namespace ecn {

namespace detail {
struct HttpResult;
}

struct SentimentDistribution {
    double p_positive = 0.0;
    double p_neutral = 0.0;
    double p_negative = 0.0;

    /// Throws MetricError unless each probability is in [0,1] and they sum to 1 +- 1e-6.
    void validate() const;
};

struct TokenLogProbSummary {
    int token_count = 0;
    double mean_log_prob = 0.0;  // natural log, <= 0
};

/// The three hypotheses an empathetic response is tested against.
inline const std::array<std::string, 3> kEmpathyHypotheses = {
    "This response acknowledges the user's emotions.",
    "This response demonstrates understanding of the user's perspective.",
    "This response provides constructive and empathetic advice.",
};

class MetricError : public std::runtime_error {
public:
    using std::runtime_error::runtime_error;
};

/// The scoring backend could not be reached or did not answer. Distinct from
/// MetricError so callers can tell an outage from bad data.
class ScorerUnavailable : public MetricError {
public:
    using MetricError::MetricError;
};

class EntailmentScorer {
public:
    virtual ~EntailmentScorer() = default;
    /// Probability that each hypothesis is entailed by `text`, scored one at a time.
    virtual std::vector<double> entailment(const std::string& text,
                                           std::span<const std::string> hypotheses) = 0;
    virtual std::string name() const = 0;
};

class SentimentScorer {
public:
    virtual ~SentimentScorer() = default;
    /// Full three-class distribution, never just the top label.
    virtual SentimentDistribution sentiment(const std::string& text) = 0;
    virtual std::string name() const = 0;
};

class LogProbScorer {
public:
    virtual ~LogProbScorer() = default;
    virtual TokenLogProbSummary logprobs(const std::string& text) = 0;
    virtual std::string name() const = 0;
};

struct ScorerSet {
    std::shared_ptr<EntailmentScorer> entailment;
    std::shared_ptr<SentimentScorer> sentiment;
    std::shared_ptr<LogProbScorer> logprob;
};

// Formula layer: pure functions of scorer outputs.
double mean_entailment(std::span<const double> probabilities);
double regard_from_distribution(const SentimentDistribution& d);
/// exp(-mean_log_prob); nullopt when fewer than 2 tokens were scored.
std::optional<double> perplexity_from_summary(const TokenLogProbSummary& s);

double empathy_quotient(const std::string& response, EntailmentScorer& scorer);
double regard(const std::string& response, SentimentScorer& scorer);
std::optional<double> perplexity(const std::string& response, LogProbScorer& scorer);

enum class MetricStatus { Ok, Undefined, Missing };

const char* to_string(MetricStatus status);
MetricStatus metric_status_from_string(const std::string& text);

struct MetricValue {
    MetricStatus status = MetricStatus::Missing;
    std::optional<double> value;
    std::string scorer;
    std::string error;
    std::chrono::microseconds elapsed{0};
    bool scorer_unavailable = false;  // failed because the scorer could not be reached

    bool has_value() const noexcept { return status == MetricStatus::Ok && value.has_value(); }
};

struct MetricScores {
    MetricValue eq;
    MetricValue regard;
    MetricValue perplexity;
};

/// Scores one final response. A failing scorer marks only its metric missing;
/// an empty response throws MetricError before any scorer is called.
MetricScores score_response(const std::string& response, const ScorerSet& scorers);

/// Keyed-hash scorer for offline runs and tests. Scores depend only on
/// (seed, text[, hypothesis]).
class FakeScorer : public EntailmentScorer, public SentimentScorer, public LogProbScorer {
public:
    explicit FakeScorer(std::uint64_t seed) : seed_(seed) {}

    std::vector<double> entailment(const std::string& text,
                                   std::span<const std::string> hypotheses) override;
    SentimentDistribution sentiment(const std::string& text) override;
    TokenLogProbSummary logprobs(const std::string& text) override;
    std::string name() const override { return "fake"; }

private:
    std::uint64_t seed_;
};

/// Client for the scoring microservice: POST /entailment, /sentiment, /logprobs.
class HttpScorerClient : public EntailmentScorer, public SentimentScorer, public LogProbScorer {
public:
    explicit HttpScorerClient(std::string base_url,
                              std::chrono::milliseconds timeout = std::chrono::seconds(120));

    std::vector<double> entailment(const std::string& text,
                                   std::span<const std::string> hypotheses) override;
    SentimentDistribution sentiment(const std::string& text) override;
    TokenLogProbSummary logprobs(const std::string& text) override;
    std::string name() const override { return "http:" + base_url_; }

    /// True when GET /healthz answers 200.
    bool healthy() const;

private:
    std::string post(const std::string& path, const std::string& body) const;
    std::string checked_body(const detail::HttpResult& res, const std::string& path) const;

    std::string base_url_;
    std::chrono::milliseconds timeout_;
};

ScorerSet make_scorer_set(std::shared_ptr<FakeScorer> fake);
ScorerSet make_scorer_set(std::shared_ptr<HttpScorerClient> client);

}  // namespace ecn
