#pragma once

#include <filesystem>
#include <optional>
#include <stdexcept>
#include <string>
#include <vector>

#include "ecn/dataset.hpp"
#include "ecn/llm_client.hpp"

namespace ecn {

/// One stage's instruction. Placeholders are `{demographics}`,
/// `{difficulties}` and `{query}`; nothing else may appear in braces.
struct StageTemplate {
    std::string name;
    std::string instruction;
};

struct CascadeSpec {
    std::string strategy_name;
    std::vector<StageTemplate> stages;
    std::string system_message = kDefaultSystemMessage;

    /// Throws StrategyError when a stage is empty or uses an unknown placeholder.
    void validate() const;
};

struct StageTranscript {
    int stage_index = 0;  // 1-based
    std::string prompt;
    std::string response;
    FinishReason finish_reason = FinishReason::Stop;
    std::optional<TokenUsage> token_usage;
    int attempts = 1;
    std::chrono::milliseconds latency{0};
};

struct CascadeResult {
    std::string entry_id;
    std::string strategy_name;
    std::string model_name;
    int run_index = 1;
    std::vector<StageTranscript> transcripts;
    std::string final_response;
};

class StrategyError : public std::runtime_error {
public:
    using std::runtime_error::runtime_error;
};

/// A stage failed. Transcripts of the stages that completed before it are kept.
class CascadeError : public std::runtime_error {
public:
    CascadeError(int stage_index, LlmError cause, std::vector<StageTranscript> completed);

    int stage_index() const noexcept { return stage_index_; }
    const LlmError& cause() const noexcept { return cause_; }
    const std::vector<StageTranscript>& completed() const noexcept { return completed_; }

private:
    int stage_index_;
    LlmError cause_;
    std::vector<StageTranscript> completed_;
};

namespace strategy {
inline constexpr const char* kStandard = "standard";
inline constexpr const char* kBasicEmpathy = "basic_empathy";
inline constexpr const char* kDiversityAware = "diversity_aware";
inline constexpr const char* kEcn = "ecn";
}  // namespace strategy

/// Names of the embedded strategies, in report order.
const std::vector<std::string>& builtin_strategy_names();

CascadeSpec builtin_strategy(const std::string& name);

/// Human-readable row label for reports.
std::string strategy_display_name(const std::string& name);

/// Reads `{"strategies": [{"name", "system_message"?, "stages": [{"name", "instruction"}]}]}`.
std::vector<CascadeSpec> load_strategy_file(const std::filesystem::path& path);
std::vector<CascadeSpec> parse_strategy_json(const std::string& text);
std::string strategy_to_json(const CascadeSpec& spec);

/// Substitutes the entry's fields into `instruction`. Throws StrategyError on
/// an unknown placeholder.
std::string instantiate(const std::string& instruction, const PersonaEntry& entry);

/// Builds the user message for stage `stage_index` (1-based). Stage k > 1 is
/// the stage k-1 prompt, a newline, `Output: ` plus the stage k-1 response,
/// a newline, then the instantiated stage k instruction.
std::string render_stage_prompt(const CascadeSpec& spec, int stage_index, const PersonaEntry& entry,
                                const std::vector<StageTranscript>& prior);

/// Runs every stage in order, one single-turn chat request per stage.
CascadeResult run_cascade(const CascadeSpec& spec, const PersonaEntry& entry, ChatBackend& client,
                          const RunConfig& config, int run_index);

}  // namespace ecn
