#pragma once

#include <compare>
#include <filesystem>
#include <functional>
#include <memory>
#include <mutex>
#include <optional>
#include <string>
#include <vector>

#include <json.hpp>

#include "ecn/cascade.hpp"
#include "ecn/dataset.hpp"
#include "ecn/llm_client.hpp"
#include "ecn/metrics.hpp"

namespace ecn {

struct RunKey {
    std::string entry_id;
    std::string strategy_name;
    std::string model_name;
    int run_index = 1;

    auto operator<=>(const RunKey&) const = default;
    std::string to_string() const;
};

enum class RecordStatus { Completed, Failed };

/// Sampling settings that produced a record.
struct ConfigSnapshot {
    std::string model_name;
    double temperature = 0.0;
    int max_tokens = 0;
    std::string system_message;
};

struct RunRecord {
    RecordStatus status = RecordStatus::Completed;
    CascadeResult cascade;  // partial transcripts when failed
    std::string error;
    int failed_stage = 0;
    std::optional<MetricScores> scores;  // absent until scored
    ConfigSnapshot config;
    std::string started_at;  // ISO-8601 UTC
    std::string finished_at;

    RunKey key() const {
        return {cascade.entry_id, cascade.strategy_name, cascade.model_name, cascade.run_index};
    }
};

nlohmann::json record_to_json(const RunRecord& record);
RunRecord record_from_json(const nlohmann::json& j);

/// Hash over the deterministic content of a store: records sorted by key,
/// timestamps and latencies left out.
std::string store_content_hash(const std::vector<RunRecord>& records);

class StoreError : public std::runtime_error {
public:
    using std::runtime_error::runtime_error;
};

/// Append-only JSONL run store with a JSON sidecar manifest at
/// `<path>.manifest.json`. When a key appears more than once the last line
/// wins, so a retried failure supersedes the original attempt.
class RunStore {
public:
    explicit RunStore(std::filesystem::path path);

    const std::filesystem::path& path() const noexcept { return path_; }
    std::filesystem::path manifest_path() const;

    bool exists() const;
    /// Latest record per key, sorted by key.
    std::vector<RunRecord> load() const;
    /// Thread-safe; each record is written and flushed as one line.
    void append(const RunRecord& record);
    /// Atomically replaces the store contents (write to temp, then rename).
    void rewrite(const std::vector<RunRecord>& records);

    std::optional<nlohmann::json> read_manifest() const;
    void write_manifest(const nlohmann::json& manifest) const;

private:
    std::filesystem::path path_;
    std::mutex mutex_;
};

using BackendFactory = std::function<std::shared_ptr<ChatBackend>(const std::string& model_name)>;

struct ExperimentOptions {
    int concurrency = 4;
    /// Null leaves records unscored for a later `score` pass.
    const ScorerSet* scorers = nullptr;
    std::function<void(const std::string&)> log;
};

struct RunSummary {
    std::size_t planned = 0;
    std::size_t skipped = 0;  // already completed in the store
    std::size_t completed = 0;
    std::size_t failed = 0;

    std::size_t new_records() const { return completed + failed; }
};

/// Executes every (entry, strategy, model, run_index) not already completed in
/// `store`, scoring the final response when scorers are given. Per-record
/// failures become failed records; the experiment keeps going.
RunSummary run_experiment(const std::vector<PersonaEntry>& entries,
                          const std::vector<CascadeSpec>& strategies,
                          const std::vector<std::string>& models, const RunConfig& config,
                          const BackendFactory& backends, RunStore& store,
                          const ExperimentOptions& options = {});

/// Scores a record's final response, turning an empty response into three
/// missing metrics instead of an exception.
MetricScores score_record(const RunRecord& record, const ScorerSet& scorers);

std::string utc_timestamp();

}  // namespace ecn
