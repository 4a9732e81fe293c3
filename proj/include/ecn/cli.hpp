#pragma once

#include <functional>
#include <iosfwd>
#include <optional>
#include <string>
#include <vector>

#include "ecn/llm_client.hpp"

namespace ecn::cli {

inline constexpr const char* kApiKeyVar = "OPENAI_API_KEY";
inline constexpr const char* kBaseUrlVar = "OPENAI_BASE_URL";
inline constexpr const char* kScorerUrlVar = "ECN_SCORER_URL";

enum ExitCode : int {
    kOk = 0,
    kFindings = 1,     // dataset violations, or records that failed
    kUsage = 2,        // bad flags, bad config, unreadable input
    kUnavailable = 3,  // scorer service unreachable
};

/// Everything a command needs, after layering defaults < config file < flags.
struct CliConfig {
    std::string dataset;
    std::string dataset_format;  // empty: infer from extension
    std::vector<std::string> strategies;
    std::string strategy_file;
    std::vector<std::string> models;
    RunConfig run;
    std::string base_url;
    std::string scorer_url;
    std::string api_key_env = kApiKeyVar;
    std::string store = "runs.jsonl";
    bool mock = false;
    std::uint64_t seed = 0;
    int concurrency = 4;
    bool score = true;
    std::string report_format = "markdown";
    std::string reduction = "run-means";
    std::string output;
};

using EnvLookup = std::function<std::optional<std::string>(const std::string&)>;

/// Reads the process environment.
std::optional<std::string> process_env(const std::string& name);

/// Entry point shared by the `ecn` binary and the tests.
int run(const std::vector<std::string>& args, std::ostream& out, std::ostream& err,
        const EnvLookup& env = process_env);

}  // namespace ecn::cli
