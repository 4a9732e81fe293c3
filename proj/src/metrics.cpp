#include "ecn/metrics.hpp"

#include <cmath>
#include <sstream>

#include <json.hpp>

#include "ecn/dataset.hpp"
#include "ecn/llm_client.hpp"
#include "ecn/hash.hpp"
#include "http.hpp"

namespace ecn {

namespace {

using json = nlohmann::json;

bool is_probability(double p) { return p >= 0.0 && p <= 1.0; }

void require_response(const std::string& response) {
    if (trim(response).empty()) throw MetricError("cannot score an empty response");
}

template <typename F>
MetricValue measure(const std::string& scorer_name, F&& compute) {
    MetricValue v;
    v.scorer = scorer_name;
    auto start = std::chrono::steady_clock::now();
    try {
        std::optional<double> result = compute();
        v.value = result;
        v.status = result ? MetricStatus::Ok : MetricStatus::Undefined;
    } catch (const ScorerUnavailable& e) {
        v.status = MetricStatus::Missing;
        v.value.reset();
        v.error = e.what();
        v.scorer_unavailable = true;
    } catch (const std::exception& e) {
        v.status = MetricStatus::Missing;
        v.value.reset();
        v.error = e.what();
    }
    v.elapsed = std::chrono::duration_cast<std::chrono::microseconds>(
        std::chrono::steady_clock::now() - start);
    return v;
}

MetricValue missing(const std::string& why) {
    MetricValue v;
    v.error = why;
    return v;
}

}  // namespace

void SentimentDistribution::validate() const {
    if (!is_probability(p_positive) || !is_probability(p_neutral) || !is_probability(p_negative)) {
        throw MetricError("sentiment probabilities must lie in [0, 1]");
    }
    double sum = p_positive + p_neutral + p_negative;
    if (std::abs(sum - 1.0) > 1e-6) {
        throw MetricError("sentiment probabilities sum to " + std::to_string(sum) + ", not 1");
    }
}

double mean_entailment(std::span<const double> probabilities) {
    if (probabilities.empty()) throw MetricError("no entailment probabilities");
    double sum = 0.0;
    for (double p : probabilities) {
        if (!is_probability(p)) throw MetricError("entailment probability outside [0, 1]");
        sum += p;
    }
    return sum / static_cast<double>(probabilities.size());
}

double regard_from_distribution(const SentimentDistribution& d) {
    d.validate();
    return d.p_positive - d.p_negative;
}

std::optional<double> perplexity_from_summary(const TokenLogProbSummary& s) {
    if (s.token_count < 1) throw MetricError("log-prob summary has no tokens");
    if (!(s.mean_log_prob <= 0.0)) throw MetricError("mean log-probability must be <= 0");
    if (s.token_count < 2) return std::nullopt;
    return std::exp(-s.mean_log_prob);
}

double empathy_quotient(const std::string& response, EntailmentScorer& scorer) {
    require_response(response);
    auto probs = scorer.entailment(response, kEmpathyHypotheses);
    if (probs.size() != kEmpathyHypotheses.size()) {
        throw MetricError("entailment scorer returned " + std::to_string(probs.size()) +
                          " probabilities for " + std::to_string(kEmpathyHypotheses.size()) +
                          " hypotheses");
    }
    return mean_entailment(probs);
}

double regard(const std::string& response, SentimentScorer& scorer) {
    require_response(response);
    return regard_from_distribution(scorer.sentiment(response));
}

std::optional<double> perplexity(const std::string& response, LogProbScorer& scorer) {
    require_response(response);
    return perplexity_from_summary(scorer.logprobs(response));
}

const char* to_string(MetricStatus status) {
    switch (status) {
    case MetricStatus::Ok: return "ok";
    case MetricStatus::Undefined: return "undefined";
    case MetricStatus::Missing: return "missing";
    }
    return "missing";
}

MetricStatus metric_status_from_string(const std::string& text) {
    if (text == "ok") return MetricStatus::Ok;
    if (text == "undefined") return MetricStatus::Undefined;
    return MetricStatus::Missing;
}

MetricScores score_response(const std::string& response, const ScorerSet& scorers) {
    require_response(response);
    MetricScores out;
    if (scorers.entailment) {
        out.eq = measure(scorers.entailment->name(), [&]() -> std::optional<double> {
            return empathy_quotient(response, *scorers.entailment);
        });
    } else {
        out.eq = missing("no entailment scorer configured");
    }
    if (scorers.sentiment) {
        out.regard = measure(scorers.sentiment->name(), [&]() -> std::optional<double> {
            return regard(response, *scorers.sentiment);
        });
    } else {
        out.regard = missing("no sentiment scorer configured");
    }
    if (scorers.logprob) {
        out.perplexity = measure(scorers.logprob->name(),
                                 [&] { return perplexity(response, *scorers.logprob); });
    } else {
        out.perplexity = missing("no log-prob scorer configured");
    }
    return out;
}

std::vector<double> FakeScorer::entailment(const std::string& text,
                                           std::span<const std::string> hypotheses) {
    std::vector<double> out;
    out.reserve(hypotheses.size());
    for (const auto& h : hypotheses) {
        out.push_back(unit_interval(Fnv1a64().add(seed_).add_field("entailment").add_field(text)
                                        .add_field(h).value()));
    }
    return out;
}

SentimentDistribution FakeScorer::sentiment(const std::string& text) {
    double w[3];
    for (std::uint64_t i = 0; i < 3; ++i) {
        w[i] = 0.05 + unit_interval(
                          Fnv1a64().add(seed_).add_field("sentiment").add_field(text).add(i).value());
    }
    double sum = w[0] + w[1] + w[2];
    return {w[2] / sum, w[1] / sum, w[0] / sum};
}

TokenLogProbSummary FakeScorer::logprobs(const std::string& text) {
    std::istringstream in(text);
    int words = 0;
    for (std::string w; in >> w;) ++words;
    double u = unit_interval(Fnv1a64().add(seed_).add_field("logprobs").add_field(text).value());
    // Perplexity lands in roughly [e^1.5, e^3.5], about where real LMs score chat replies.
    return {std::max(words, 1), -(1.5 + 2.0 * u)};
}

HttpScorerClient::HttpScorerClient(std::string base_url, std::chrono::milliseconds timeout)
    : base_url_(std::move(base_url)), timeout_(timeout) {
    parse_endpoint_url(base_url_);
}

std::string HttpScorerClient::post(const std::string& path, const std::string& body) const {
    return checked_body(detail::post_json(base_url_, path, body, {}, timeout_), path);
}

std::string HttpScorerClient::checked_body(const detail::HttpResult& res,
                                           const std::string& path) const {
    if (res.transport != detail::HttpResult::Transport::Ok) {
        throw ScorerUnavailable("scorer " + base_url_ + path + " unreachable: " + res.error);
    }
    if (res.status == 503) {
        throw ScorerUnavailable("scorer " + base_url_ + path + " not ready (503): " + res.body);
    }
    if (res.status != 200) {
        throw MetricError("scorer " + base_url_ + path + " returned HTTP " +
                          std::to_string(res.status) + ": " + res.body);
    }
    return res.body;
}

std::vector<double> HttpScorerClient::entailment(const std::string& text,
                                                 std::span<const std::string> hypotheses) {
    json req = {{"text", text}, {"hypotheses", std::vector<std::string>(hypotheses.begin(),
                                                                        hypotheses.end())}};
    try {
        auto probs = json::parse(post("/entailment", req.dump())).at("probabilities")
                         .get<std::vector<double>>();
        if (probs.size() != hypotheses.size()) {
            throw MetricError("scorer returned " + std::to_string(probs.size()) +
                              " probabilities for " + std::to_string(hypotheses.size()) +
                              " hypotheses");
        }
        for (double p : probs) {
            if (!is_probability(p)) throw MetricError("scorer entailment probability outside [0, 1]");
        }
        return probs;
    } catch (const json::exception& e) {
        throw MetricError(std::string("malformed /entailment response: ") + e.what());
    }
}

SentimentDistribution HttpScorerClient::sentiment(const std::string& text) {
    json req = {{"text", text}};
    try {
        json doc = json::parse(post("/sentiment", req.dump()));
        SentimentDistribution d{doc.at("positive").get<double>(), doc.at("neutral").get<double>(),
                                doc.at("negative").get<double>()};
        d.validate();
        return d;
    } catch (const json::exception& e) {
        throw MetricError(std::string("malformed /sentiment response: ") + e.what());
    }
}

TokenLogProbSummary HttpScorerClient::logprobs(const std::string& text) {
    json req = {{"text", text}};
    auto res = detail::post_json(base_url_, "/logprobs", req.dump(), {}, timeout_);
    // A 400 carrying token_count < 2 is the service refusing a text with no
    // scored positions; surface it as an undefined perplexity.
    if (res.transport == detail::HttpResult::Transport::Ok && res.status == 400) {
        json doc = json::parse(res.body, nullptr, false);
        if (doc.is_object() && doc.contains("token_count") && doc["token_count"].is_number_integer() &&
            doc["token_count"].get<int>() < 2) {
            return {1, 0.0};
        }
    }
    std::string body = checked_body(res, "/logprobs");
    try {
        json doc = json::parse(body);
        return {doc.at("token_count").get<int>(), doc.at("mean_log_prob").get<double>()};
    } catch (const json::exception& e) {
        throw MetricError(std::string("malformed /logprobs response: ") + e.what());
    }
}

bool HttpScorerClient::healthy() const {
    auto res = detail::get(base_url_, "/healthz", timeout_);
    return res.transport == detail::HttpResult::Transport::Ok && res.status == 200;
}

ScorerSet make_scorer_set(std::shared_ptr<FakeScorer> fake) { return {fake, fake, fake}; }

ScorerSet make_scorer_set(std::shared_ptr<HttpScorerClient> client) {
    return {client, client, client};
}

}  // namespace ecn
