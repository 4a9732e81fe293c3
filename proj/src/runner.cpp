#include "ecn/runner.hpp"

#include <algorithm>
#include <atomic>
#include <ctime>
#include <fstream>
#include <map>
#include <set>
#include <sstream>
#include <thread>

#include "ecn/hash.hpp"

namespace ecn {

using json = nlohmann::json;

namespace {

json metric_to_json(const MetricValue& v) {
    json j = {{"status", to_string(v.status)},
              {"value", v.value ? json(*v.value) : json(nullptr)},
              {"scorer", v.scorer},
              {"elapsed_us", v.elapsed.count()}};
    if (!v.error.empty()) j["error"] = v.error;
    return j;
}

MetricValue metric_from_json(const json& j) {
    MetricValue v;
    v.status = metric_status_from_string(j.value("status", "missing"));
    if (j.contains("value") && j["value"].is_number()) v.value = j["value"].get<double>();
    v.scorer = j.value("scorer", "");
    v.error = j.value("error", "");
    v.elapsed = std::chrono::microseconds(j.value("elapsed_us", std::int64_t{0}));
    return v;
}

// Drops fields that vary between otherwise identical runs.
json strip_volatile(json j) {
    j.erase("started_at");
    j.erase("finished_at");
    for (auto& t : j["transcripts"]) t.erase("latency_ms");
    if (j["scores"].is_object()) {
        for (auto& [name, metric] : j["scores"].items()) metric.erase("elapsed_us");
    }
    return j;
}

// Cuts an unterminated last line (left by an interrupted append) so the next
// append starts on a fresh line.
void drop_torn_tail(const std::filesystem::path& path) {
    std::ifstream in(path, std::ios::binary | std::ios::ate);
    if (!in || in.tellg() <= 0) return;
    in.seekg(-1, std::ios::end);
    if (in.get() == '\n') return;
    in.seekg(0);
    std::string content((std::istreambuf_iterator<char>(in)), std::istreambuf_iterator<char>());
    if (content.empty() || content.back() == '\n') return;
    auto last_nl = content.rfind('\n');
    in.close();
    std::filesystem::resize_file(path, last_nl == std::string::npos ? 0 : last_nl + 1);
}

}  // namespace

std::string RunKey::to_string() const {
    return entry_id + "/" + strategy_name + "/" + model_name + "/run-" + std::to_string(run_index);
}

std::string utc_timestamp() {
    auto now = std::chrono::system_clock::now();
    std::time_t t = std::chrono::system_clock::to_time_t(now);
    std::tm tm{};
    gmtime_r(&t, &tm);
    char buf[32];
    std::strftime(buf, sizeof buf, "%Y-%m-%dT%H:%M:%SZ", &tm);
    return buf;
}

json record_to_json(const RunRecord& r) {
    json transcripts = json::array();
    for (const auto& t : r.cascade.transcripts) {
        json usage = nullptr;
        if (t.token_usage) {
            usage = {{"prompt_tokens", t.token_usage->prompt_tokens},
                     {"completion_tokens", t.token_usage->completion_tokens}};
        }
        transcripts.push_back({{"stage", t.stage_index},
                               {"prompt", t.prompt},
                               {"response", t.response},
                               {"finish_reason", to_string(t.finish_reason)},
                               {"usage", std::move(usage)},
                               {"attempts", t.attempts},
                               {"latency_ms", t.latency.count()}});
    }
    json scores = nullptr;
    if (r.scores) {
        scores = {{"eq", metric_to_json(r.scores->eq)},
                  {"regard", metric_to_json(r.scores->regard)},
                  {"perplexity", metric_to_json(r.scores->perplexity)}};
    }
    json j = {
        {"entry_id", r.cascade.entry_id},
        {"strategy", r.cascade.strategy_name},
        {"model", r.cascade.model_name},
        {"run_index", r.cascade.run_index},
        {"status", r.status == RecordStatus::Completed ? "completed" : "failed"},
        {"transcripts", std::move(transcripts)},
        {"final_response", r.cascade.final_response},
        {"scores", std::move(scores)},
        {"config",
         {{"model", r.config.model_name},
          {"temperature", r.config.temperature},
          {"max_tokens", r.config.max_tokens},
          {"system_message", r.config.system_message}}},
        {"started_at", r.started_at},
        {"finished_at", r.finished_at},
    };
    if (r.status == RecordStatus::Failed) {
        j["error"] = r.error;
        j["failed_stage"] = r.failed_stage;
    }
    return j;
}

RunRecord record_from_json(const json& j) {
    RunRecord r;
    r.cascade.entry_id = j.at("entry_id").get<std::string>();
    r.cascade.strategy_name = j.at("strategy").get<std::string>();
    r.cascade.model_name = j.at("model").get<std::string>();
    r.cascade.run_index = j.at("run_index").get<int>();
    r.status = j.at("status").get<std::string>() == "completed" ? RecordStatus::Completed
                                                                 : RecordStatus::Failed;
    for (const auto& t : j.at("transcripts")) {
        StageTranscript st;
        st.stage_index = t.at("stage").get<int>();
        st.prompt = t.at("prompt").get<std::string>();
        st.response = t.at("response").get<std::string>();
        st.finish_reason = finish_reason_from_string(t.value("finish_reason", "stop"));
        if (t.contains("usage") && t["usage"].is_object()) {
            st.token_usage = TokenUsage{t["usage"].value("prompt_tokens", 0),
                                        t["usage"].value("completion_tokens", 0)};
        }
        st.attempts = t.value("attempts", 1);
        st.latency = std::chrono::milliseconds(t.value("latency_ms", std::int64_t{0}));
        r.cascade.transcripts.push_back(std::move(st));
    }
    r.cascade.final_response = j.value("final_response", "");
    if (j.contains("scores") && j["scores"].is_object()) {
        const json& s = j["scores"];
        r.scores = MetricScores{metric_from_json(s.at("eq")), metric_from_json(s.at("regard")),
                                metric_from_json(s.at("perplexity"))};
    }
    if (j.contains("config") && j["config"].is_object()) {
        const json& c = j["config"];
        r.config = {c.value("model", ""), c.value("temperature", 0.0), c.value("max_tokens", 0),
                    c.value("system_message", "")};
    }
    r.error = j.value("error", "");
    r.failed_stage = j.value("failed_stage", 0);
    r.started_at = j.value("started_at", "");
    r.finished_at = j.value("finished_at", "");
    return r;
}

std::string store_content_hash(const std::vector<RunRecord>& records) {
    std::vector<const RunRecord*> sorted;
    for (const auto& r : records) sorted.push_back(&r);
    std::sort(sorted.begin(), sorted.end(),
              [](const RunRecord* a, const RunRecord* b) { return a->key() < b->key(); });
    std::string canonical;
    for (const RunRecord* r : sorted) canonical += strip_volatile(record_to_json(*r)).dump() + '\n';
    return sha256_hex(canonical);
}

RunStore::RunStore(std::filesystem::path path) : path_(std::move(path)) {}

std::filesystem::path RunStore::manifest_path() const {
    return std::filesystem::path(path_.string() + ".manifest.json");
}

bool RunStore::exists() const { return std::filesystem::exists(path_); }

std::vector<RunRecord> RunStore::load() const {
    std::map<RunKey, RunRecord> latest;
    std::ifstream in(path_);
    if (!in) return {};
    std::vector<std::string> lines;
    for (std::string line; std::getline(in, line);) lines.push_back(std::move(line));
    for (std::size_t i = 0; i < lines.size(); ++i) {
        if (trim(lines[i]).empty()) continue;
        json j = json::parse(lines[i], nullptr, false);
        if (j.is_discarded()) {
            // A torn final line is what an interrupted append leaves behind.
            if (i + 1 == lines.size()) break;
            throw StoreError(path_.string() + ": line " + std::to_string(i + 1) +
                             " is not valid JSON");
        }
        try {
            RunRecord r = record_from_json(j);
            latest.insert_or_assign(r.key(), std::move(r));
        } catch (const json::exception& e) {
            throw StoreError(path_.string() + ": line " + std::to_string(i + 1) + ": " + e.what());
        }
    }
    std::vector<RunRecord> out;
    out.reserve(latest.size());
    for (auto& [key, r] : latest) out.push_back(std::move(r));
    return out;
}

void RunStore::append(const RunRecord& record) {
    std::string line = record_to_json(record).dump() + '\n';
    std::lock_guard lock(mutex_);
    drop_torn_tail(path_);
    std::ofstream out(path_, std::ios::app | std::ios::binary);
    if (!out) throw StoreError("cannot open run store for append: " + path_.string());
    out << line;
    out.flush();
    if (!out) throw StoreError("failed writing run store: " + path_.string());
}

void RunStore::rewrite(const std::vector<RunRecord>& records) {
    std::lock_guard lock(mutex_);
    auto tmp = std::filesystem::path(path_.string() + ".tmp");
    {
        std::ofstream out(tmp, std::ios::trunc | std::ios::binary);
        if (!out) throw StoreError("cannot write " + tmp.string());
        for (const auto& r : records) out << record_to_json(r).dump() << '\n';
        out.flush();
        if (!out) throw StoreError("failed writing " + tmp.string());
    }
    std::filesystem::rename(tmp, path_);
}

std::optional<json> RunStore::read_manifest() const {
    std::ifstream in(manifest_path());
    if (!in) return std::nullopt;
    json j = json::parse(in, nullptr, false);
    if (j.is_discarded()) throw StoreError("manifest is not valid JSON: " + manifest_path().string());
    return j;
}

void RunStore::write_manifest(const json& manifest) const {
    auto target = manifest_path();
    auto tmp = std::filesystem::path(target.string() + ".tmp");
    {
        std::ofstream out(tmp, std::ios::trunc);
        if (!out) throw StoreError("cannot write " + tmp.string());
        out << manifest.dump(2) << '\n';
    }
    std::filesystem::rename(tmp, target);
}

MetricScores score_record(const RunRecord& record, const ScorerSet& scorers) {
    try {
        return score_response(record.cascade.final_response, scorers);
    } catch (const MetricError& e) {
        MetricScores s;
        for (MetricValue* v : {&s.eq, &s.regard, &s.perplexity}) v->error = e.what();
        return s;
    }
}

RunSummary run_experiment(const std::vector<PersonaEntry>& entries,
                          const std::vector<CascadeSpec>& strategies,
                          const std::vector<std::string>& models, const RunConfig& config,
                          const BackendFactory& backends, RunStore& store,
                          const ExperimentOptions& options) {
    config.validate();
    if (entries.empty()) throw std::invalid_argument("no dataset entries");
    if (strategies.empty()) throw std::invalid_argument("no strategies selected");
    if (models.empty()) throw std::invalid_argument("no models selected");
    for (const auto& s : strategies) s.validate();

    std::set<RunKey> done;
    for (const auto& r : store.load()) {
        if (r.status == RecordStatus::Completed) done.insert(r.key());
    }

    struct Task {
        const PersonaEntry* entry;
        const CascadeSpec* spec;
        std::size_t model;
        int run_index;
    };
    std::vector<std::shared_ptr<ChatBackend>> clients;
    for (const auto& m : models) {
        auto client = backends(m);
        if (!client) throw std::invalid_argument("no backend for model '" + m + "'");
        clients.push_back(std::move(client));
    }

    RunSummary summary;
    std::vector<Task> tasks;
    for (std::size_t m = 0; m < models.size(); ++m) {
        for (const auto& spec : strategies) {
            for (int run = 1; run <= config.repetitions; ++run) {
                for (const auto& entry : entries) {
                    ++summary.planned;
                    if (done.count({entry.id, spec.strategy_name, models[m], run})) {
                        ++summary.skipped;
                        continue;
                    }
                    tasks.push_back({&entry, &spec, m, run});
                }
            }
        }
    }

    std::atomic<std::size_t> next{0}, completed{0}, failed{0};
    std::mutex log_mutex;
    std::exception_ptr store_failure;
    auto log = [&](const std::string& msg) {
        if (!options.log) return;
        std::lock_guard lock(log_mutex);
        options.log(msg);
    };

    auto worker = [&] {
        for (std::size_t i; (i = next.fetch_add(1)) < tasks.size();) {
            const Task& task = tasks[i];
            RunConfig cfg = config;
            cfg.model_name = models[task.model];

            RunRecord record;
            record.config = {cfg.model_name, cfg.temperature, cfg.max_tokens,
                             task.spec->system_message};
            record.started_at = utc_timestamp();
            record.cascade.entry_id = task.entry->id;
            record.cascade.strategy_name = task.spec->strategy_name;
            record.cascade.model_name = cfg.model_name;
            record.cascade.run_index = task.run_index;
            try {
                record.cascade =
                    run_cascade(*task.spec, *task.entry, *clients[task.model], cfg, task.run_index);
                if (options.scorers) record.scores = score_record(record, *options.scorers);
                record.status = RecordStatus::Completed;
            } catch (const CascadeError& e) {
                record.status = RecordStatus::Failed;
                record.error = e.what();
                record.failed_stage = e.stage_index();
                record.cascade.transcripts = e.completed();
            } catch (const std::exception& e) {
                record.status = RecordStatus::Failed;
                record.error = e.what();
            }
            record.finished_at = utc_timestamp();
            if (record.status == RecordStatus::Failed) {
                log("failed " + record.key().to_string() + ": " + record.error);
                ++failed;
            } else {
                ++completed;
            }
            try {
                store.append(record);
            } catch (...) {
                std::lock_guard lock(log_mutex);
                if (!store_failure) store_failure = std::current_exception();
                next = tasks.size();
            }
        }
    };

    int n_threads = std::clamp(options.concurrency, 1, 64);
    n_threads = static_cast<int>(std::min<std::size_t>(n_threads, std::max<std::size_t>(tasks.size(), 1)));
    {
        std::vector<std::jthread> pool;
        for (int t = 0; t < n_threads; ++t) pool.emplace_back(worker);
    }
    if (store_failure) std::rethrow_exception(store_failure);
    summary.completed = completed;
    summary.failed = failed;
    return summary;
}

}  // namespace ecn
