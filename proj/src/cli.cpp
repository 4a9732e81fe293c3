#include "ecn/cli.hpp"

#include <algorithm>
#include <cstdlib>
#include <fstream>
#include <iostream>
#include <map>
#include <set>
#include <sstream>

#include <CLI11.hpp>
#include <json.hpp>

#include "ecn/cascade.hpp"
#include "ecn/dataset.hpp"
#include "ecn/hash.hpp"
#include "ecn/metrics.hpp"
#include "ecn/report.hpp"
#include "ecn/runner.hpp"

namespace ecn::cli {

namespace {

using json = nlohmann::json;

class UsageError : public std::runtime_error {
public:
    using std::runtime_error::runtime_error;
};

std::vector<std::string> split_list(const std::vector<std::string>& items) {
    std::vector<std::string> out;
    for (const auto& item : items) {
        std::stringstream ss(item);
        for (std::string part; std::getline(ss, part, ',');) {
            if (auto t = trim(part); !t.empty()) out.push_back(t);
        }
    }
    return out;
}

void apply_config_file(CliConfig& cfg, const std::string& path) {
    std::ifstream in(path);
    if (!in) throw UsageError("cannot open config file: " + path);
    json j = json::parse(in, nullptr, false);
    if (j.is_discarded() || !j.is_object()) throw UsageError("config file is not a JSON object: " + path);

    static const std::set<std::string> known = {
        "dataset", "dataset_format", "strategies", "strategy_file", "models", "model",
        "temperature", "max_tokens", "system_message", "repetitions", "request_timeout_ms",
        "retry", "base_url", "scorer_url", "api_key_env", "store", "mock", "seed",
        "concurrency", "score", "report_format", "reduction", "output"};
    for (auto it = j.begin(); it != j.end(); ++it) {
        if (!known.count(it.key())) throw UsageError("unknown config key '" + it.key() + "'");
    }
    try {
        auto str = [&](const char* key, std::string& target) {
            if (j.contains(key)) target = j[key].get<std::string>();
        };
        str("dataset", cfg.dataset);
        str("dataset_format", cfg.dataset_format);
        str("strategy_file", cfg.strategy_file);
        str("base_url", cfg.base_url);
        str("scorer_url", cfg.scorer_url);
        str("api_key_env", cfg.api_key_env);
        str("store", cfg.store);
        str("report_format", cfg.report_format);
        str("reduction", cfg.reduction);
        str("output", cfg.output);
        str("system_message", cfg.run.system_message);
        if (j.contains("strategies")) cfg.strategies = j["strategies"].get<std::vector<std::string>>();
        if (j.contains("models")) cfg.models = j["models"].get<std::vector<std::string>>();
        if (j.contains("model")) cfg.models = {j["model"].get<std::string>()};
        if (j.contains("temperature")) cfg.run.temperature = j["temperature"].get<double>();
        if (j.contains("max_tokens")) cfg.run.max_tokens = j["max_tokens"].get<int>();
        if (j.contains("repetitions")) cfg.run.repetitions = j["repetitions"].get<int>();
        if (j.contains("request_timeout_ms")) {
            cfg.run.request_timeout = std::chrono::milliseconds(j["request_timeout_ms"].get<long>());
        }
        if (j.contains("retry")) {
            const json& r = j["retry"];
            cfg.run.retry.max_attempts = r.value("max_attempts", cfg.run.retry.max_attempts);
            cfg.run.retry.backoff_base =
                std::chrono::milliseconds(r.value("backoff_ms", cfg.run.retry.backoff_base.count()));
        }
        if (j.contains("mock")) cfg.mock = j["mock"].get<bool>();
        if (j.contains("seed")) cfg.seed = j["seed"].get<std::uint64_t>();
        if (j.contains("concurrency")) cfg.concurrency = j["concurrency"].get<int>();
        if (j.contains("score")) cfg.score = j["score"].get<bool>();
    } catch (const json::exception& e) {
        throw UsageError("config file " + path + ": " + e.what());
    }
}

std::vector<PersonaEntry> load_entries(const CliConfig& cfg) {
    if (cfg.dataset.empty()) throw UsageError("no dataset given (--dataset)");
    DatasetFormat format;
    try {
        format = cfg.dataset_format.empty() ? format_from_path(cfg.dataset)
                                            : format_from_string(cfg.dataset_format);
    } catch (const DatasetError& e) {
        throw UsageError(e.what());
    }
    return load_dataset(cfg.dataset, format);
}

std::string file_sha256(const std::string& path) {
    std::ifstream in(path, std::ios::binary);
    std::ostringstream ss;
    ss << in.rdbuf();
    return sha256_hex(ss.str());
}

std::vector<CascadeSpec> resolve_strategies(const CliConfig& cfg) {
    std::map<std::string, CascadeSpec> custom;
    std::vector<std::string> custom_order;
    if (!cfg.strategy_file.empty()) {
        for (auto& spec : load_strategy_file(cfg.strategy_file)) {
            custom_order.push_back(spec.strategy_name);
            custom.emplace(spec.strategy_name, std::move(spec));
        }
    }
    std::vector<std::string> names = cfg.strategies;
    if (names.empty()) {
        names = builtin_strategy_names();
        names.insert(names.end(), custom_order.begin(), custom_order.end());
    }
    std::vector<CascadeSpec> specs;
    std::set<std::string> seen;
    for (const auto& name : names) {
        if (!seen.insert(name).second) continue;
        auto it = custom.find(name);
        specs.push_back(it != custom.end() ? it->second : builtin_strategy(name));
    }
    return specs;
}

json merged_list(const json& existing, const std::vector<std::string>& add) {
    std::vector<std::string> out;
    if (existing.is_array()) out = existing.get<std::vector<std::string>>();
    for (const auto& a : add) {
        if (std::find(out.begin(), out.end(), a) == out.end()) out.push_back(a);
    }
    return out;
}

json run_means_json(const std::vector<RunRecord>& records) {
    json arr = json::array();
    for (const auto& m : per_run_means(records)) {
        auto opt = [](const std::optional<double>& v) { return v ? json(*v) : json(nullptr); };
        arr.push_back({{"strategy", m.strategy_name},
                       {"model", m.model_name},
                       {"run_index", m.run_index},
                       {"eq", opt(m.eq)},
                       {"eq_n", m.eq_n},
                       {"regard", opt(m.regard)},
                       {"regard_n", m.regard_n},
                       {"perplexity", opt(m.perplexity)},
                       {"perplexity_n", m.perplexity_n}});
    }
    return arr;
}

std::string resolve_scorer_url(const CliConfig& cfg, const EnvLookup& env) {
    if (!cfg.scorer_url.empty()) return cfg.scorer_url;
    return env(kScorerUrlVar).value_or("");
}

int cmd_validate(const CliConfig& cfg, std::ostream& out, std::ostream& err) {
    std::vector<PersonaEntry> entries;
    try {
        entries = load_entries(cfg);
    } catch (const DatasetNotFound& e) {
        err << "error: " << e.what() << '\n';
        return kUsage;
    } catch (const DatasetError& e) {
        // A row that cannot be loaded is a finding about the data, not an I/O fault.
        out << e.what() << '\n';
        return kFindings;
    }
    auto violations = validate_dataset(entries);
    for (const auto& v : violations) out << v.message << '\n';
    return violations.empty() ? kOk : kFindings;
}

int cmd_run(const CliConfig& cfg, std::ostream& out, std::ostream& err, const EnvLookup& env) {
    RunConfig run = cfg.run;
    std::vector<std::string> models = cfg.models.empty() ? std::vector{run.model_name} : cfg.models;
    run.model_name = models.front();
    run.validate();
    if (cfg.concurrency < 1) throw UsageError("--concurrency must be >= 1");

    auto entries = load_entries(cfg);
    if (auto violations = validate_dataset(entries); !violations.empty()) {
        for (const auto& v : violations) err << v.message << '\n';
        throw UsageError("dataset failed validation");
    }
    auto specs = resolve_strategies(cfg);
    if (cfg.run.system_message != kDefaultSystemMessage) {
        for (auto& s : specs) s.system_message = cfg.run.system_message;
    }

    std::shared_ptr<ChatBackend> backend;
    if (cfg.mock) {
        backend = std::make_shared<MockBackend>(cfg.seed);
    } else {
        auto key = env(cfg.api_key_env);
        if (!key || key->empty()) {
            throw UsageError("missing credentials: set " + cfg.api_key_env + " or pass --mock");
        }
        OpenAiOptions opts;
        opts.api_key = *key;
        opts.base_url = !cfg.base_url.empty() ? cfg.base_url
                                              : env(kBaseUrlVar).value_or(opts.base_url);
        opts.timeout = run.request_timeout;
        opts.max_in_flight = cfg.concurrency;
        backend = std::make_shared<OpenAiBackend>(opts);
    }
    backend = with_retry(backend, run.retry);

    std::optional<ScorerSet> scorers;
    std::string scorer_name = "none";
    if (cfg.score) {
        if (cfg.mock) {
            scorers = make_scorer_set(std::make_shared<FakeScorer>(cfg.seed));
            scorer_name = "fake";
        } else if (auto url = resolve_scorer_url(cfg, env); !url.empty()) {
            scorers = make_scorer_set(std::make_shared<HttpScorerClient>(url));
            scorer_name = url;
        } else {
            err << "note: no scorer endpoint configured; records are stored unscored "
                   "(run `score` later)\n";
        }
    }

    RunStore store(cfg.store);
    const std::string dataset_hash = file_sha256(cfg.dataset);
    json manifest = store.read_manifest().value_or(json::object());
    json sampling = {{"temperature", run.temperature},
                     {"max_tokens", run.max_tokens},
                     {"repetitions", run.repetitions}};
    if (manifest.contains("dataset") && manifest["dataset"].value("sha256", "") != dataset_hash) {
        throw UsageError("store " + cfg.store + " was produced from a different dataset");
    }
    if (manifest.contains("config")) {
        const json& prev = manifest["config"];
        if (prev.value("temperature", run.temperature) != run.temperature ||
            prev.value("max_tokens", run.max_tokens) != run.max_tokens) {
            throw UsageError("store " + cfg.store + " was produced with different sampling settings");
        }
    }

    json strategy_hashes = manifest.value("strategy_hashes", json::object());
    for (const auto& s : specs) strategy_hashes[s.strategy_name] = sha256_hex(strategy_to_json(s));
    std::vector<std::string> strategy_names;
    for (const auto& s : specs) strategy_names.push_back(s.strategy_name);

    manifest["version"] = 1;
    manifest["dataset"] = {{"path", cfg.dataset}, {"sha256", dataset_hash}, {"entries", entries.size()}};
    manifest["config"] = {{"temperature", run.temperature},
                          {"max_tokens", run.max_tokens},
                          {"system_message", run.system_message},
                          {"repetitions", run.repetitions},
                          {"request_timeout_ms", run.request_timeout.count()},
                          {"retry", {{"max_attempts", run.retry.max_attempts},
                                     {"backoff_ms", run.retry.backoff_base.count()}}}};
    manifest["strategies"] = merged_list(manifest.value("strategies", json::array()), strategy_names);
    manifest["models"] = merged_list(manifest.value("models", json::array()), models);
    manifest["strategy_hashes"] = strategy_hashes;
    manifest["backend"] = backend->name();
    manifest["sampling"] = cfg.mock ? "deterministic mock, seed " + std::to_string(cfg.seed)
                                    : std::string("live API sampling (nondeterministic)");
    manifest["scorers"] = scorer_name;
    store.write_manifest(manifest);

    ExperimentOptions options;
    options.concurrency = cfg.concurrency;
    options.scorers = scorers ? &*scorers : nullptr;
    options.log = [&err](const std::string& msg) { err << msg << '\n'; };
    auto summary =
        run_experiment(entries, specs, models, run, [&](const std::string&) { return backend; },
                       store, options);

    auto records = store.load();
    manifest["run_means"] = run_means_json(records);
    store.write_manifest(manifest);

    out << summary.new_records() << " new records (" << summary.completed << " completed, "
        << summary.failed << " failed); " << summary.skipped << " already in " << cfg.store
        << '\n';
    return summary.failed == 0 ? kOk : kFindings;
}

int cmd_score(const CliConfig& cfg, std::ostream& out, std::ostream& err, const EnvLookup& env) {
    RunStore store(cfg.store);
    if (!store.exists()) throw UsageError("run store not found: " + cfg.store);
    auto records = store.load();

    std::vector<std::size_t> pending;
    for (std::size_t i = 0; i < records.size(); ++i) {
        if (records[i].status == RecordStatus::Completed && !records[i].scores) pending.push_back(i);
    }
    if (pending.empty()) {
        out << "0 records to score\n";
        return kOk;
    }

    ScorerSet scorers;
    if (cfg.mock) {
        scorers = make_scorer_set(std::make_shared<FakeScorer>(cfg.seed));
    } else {
        auto url = resolve_scorer_url(cfg, env);
        if (url.empty()) {
            throw UsageError(std::string("no scorer endpoint: pass --scorer-url or set ") +
                             kScorerUrlVar);
        }
        auto client = std::make_shared<HttpScorerClient>(url);
        if (!client->healthy()) {
            err << "error: scorer " << url << " is unreachable; store left unchanged\n";
            return kUnavailable;
        }
        scorers = make_scorer_set(client);
    }

    for (std::size_t i : pending) {
        MetricScores s = score_record(records[i], scorers);
        for (const MetricValue* v : {&s.eq, &s.regard, &s.perplexity}) {
            if (v->scorer_unavailable) {
                err << "error: " << v->error << "; store left unchanged\n";
                return kUnavailable;
            }
        }
        records[i].scores = std::move(s);
    }
    store.rewrite(records);
    if (auto manifest = store.read_manifest()) {
        (*manifest)["run_means"] = run_means_json(records);
        store.write_manifest(*manifest);
    }
    out << pending.size() << " records scored\n";
    return kOk;
}

int cmd_report(const CliConfig& cfg, std::ostream& out, std::ostream& err) {
    RunStore store(cfg.store);
    auto records = store.exists() ? store.load() : std::vector<RunRecord>{};
    if (records.empty()) {
        err << "error: run store " << cfg.store << " is empty or missing\n";
        return kUsage;
    }
    auto format = report_format_from_string(cfg.report_format);
    auto reduction = reduction_from_string(cfg.reduction);

    std::vector<std::string> strategy_order = builtin_strategy_names(), model_order;
    if (auto manifest = store.read_manifest()) {
        if (manifest->contains("strategies")) {
            strategy_order = (*manifest)["strategies"].get<std::vector<std::string>>();
        }
        if (manifest->contains("models")) {
            model_order = (*manifest)["models"].get<std::vector<std::string>>();
        }
    }
    std::string text = render_report(aggregate(records, reduction, strategy_order, model_order), format);
    if (cfg.output.empty()) {
        out << text;
    } else {
        std::ofstream file(cfg.output, std::ios::trunc | std::ios::binary);
        if (!file) throw UsageError("cannot write report to " + cfg.output);
        file << text;
    }
    return kOk;
}

}  // namespace

std::optional<std::string> process_env(const std::string& name) {
    if (const char* v = std::getenv(name.c_str())) return std::string(v);
    return std::nullopt;
}

int run(const std::vector<std::string>& args, std::ostream& out, std::ostream& err,
        const EnvLookup& env) {
    CLI::App app{"Run empathetic-cascade prompting experiments and score them.", "ecn"};
    app.fallthrough();
    app.require_subcommand(1);

    CliConfig cfg;
    std::string config_path;
    app.add_option("--config", config_path, "JSON config file (flags override it)");
    auto* store_opt = app.add_option("--store", cfg.store, "Run store (JSONL)");
    auto* mock_opt = app.add_flag("--mock", cfg.mock, "Use the deterministic mock backend and fake scorers");
    auto* seed_opt = app.add_option("--seed", cfg.seed, "Seed for mock backends");
    auto* conc_opt = app.add_option("--concurrency", cfg.concurrency, "Parallel cascades / in-flight requests");

    // Flag values land here first so they can be layered over the config file.
    CliConfig flags = cfg;
    std::vector<std::string> strategies_raw, models_raw;
    long timeout_ms = 0, backoff_ms = 0;
    bool no_score = false;

    auto* validate = app.add_subcommand("validate", "Check a dataset file");
    auto* run_cmd = app.add_subcommand("run", "Execute strategies over a dataset");
    auto* score = app.add_subcommand("score", "Score records stored without scores");
    auto* report = app.add_subcommand("report", "Aggregate the store into a results table");

    for (auto* sub : {validate, run_cmd}) {
        sub->add_option("--dataset", flags.dataset, "Dataset file (.csv or .jsonl)");
        sub->add_option("--format", flags.dataset_format, "csv or jsonl");
    }
    run_cmd->add_option("--strategies", strategies_raw, "Comma-separated strategy names");
    run_cmd->add_option("--strategy-file", flags.strategy_file, "JSON file of custom strategies");
    run_cmd->add_option("--models", models_raw, "Comma-separated model names");
    run_cmd->add_option("--repetitions", flags.run.repetitions, "Independent runs");
    run_cmd->add_option("--temperature", flags.run.temperature, "Sampling temperature");
    run_cmd->add_option("--max-tokens", flags.run.max_tokens, "Completion token cap");
    run_cmd->add_option("--system-message", flags.run.system_message, "System message");
    run_cmd->add_option("--timeout-ms", timeout_ms, "Per-request timeout");
    run_cmd->add_option("--max-attempts", flags.run.retry.max_attempts, "Retry attempts");
    run_cmd->add_option("--backoff-ms", backoff_ms, "Initial retry backoff");
    run_cmd->add_option("--base-url", flags.base_url, "OpenAI-compatible endpoint");
    run_cmd->add_option("--api-key-env", flags.api_key_env, "Env var holding the API key");
    run_cmd->add_flag("--no-score", no_score, "Store responses without scoring");
    for (auto* sub : {run_cmd, score}) {
        sub->add_option("--scorer-url", flags.scorer_url, "Scoring service base URL");
    }
    report->add_option("--format", flags.report_format, "markdown or csv");
    report->add_option("--reduction", flags.reduction, "run-means or pooled");
    report->add_option("--output", flags.output, "Write the report to a file");

    std::vector<std::string> reversed(args.rbegin(), args.rend());
    try {
        app.parse(std::move(reversed));
    } catch (const CLI::ParseError& e) {
        return app.exit(e, out, err) == 0 ? kOk : kUsage;
    }

    try {
        // Globals parsed straight into cfg; stash them so the config file
        // cannot override explicit flags.
        CliConfig globals = cfg;
        if (!config_path.empty()) apply_config_file(cfg, config_path);
        if (store_opt->count()) cfg.store = globals.store;
        if (mock_opt->count()) cfg.mock = globals.mock;
        if (seed_opt->count()) cfg.seed = globals.seed;
        if (conc_opt->count()) cfg.concurrency = globals.concurrency;

        auto given = [](CLI::Option* o) { return o->count() > 0; };
        auto* active = app.get_subcommands().front();
        auto sub_given = [&](const char* name) {
            try {
                return given(active->get_option(name));
            } catch (const CLI::OptionNotFound&) {
                return false;
            }
        };
        if (sub_given("--dataset")) cfg.dataset = flags.dataset;
        if (active != report && sub_given("--format")) cfg.dataset_format = flags.dataset_format;
        if (sub_given("--strategies")) cfg.strategies = split_list(strategies_raw);
        if (sub_given("--strategy-file")) cfg.strategy_file = flags.strategy_file;
        if (sub_given("--models")) cfg.models = split_list(models_raw);
        if (sub_given("--repetitions")) cfg.run.repetitions = flags.run.repetitions;
        if (sub_given("--temperature")) cfg.run.temperature = flags.run.temperature;
        if (sub_given("--max-tokens")) cfg.run.max_tokens = flags.run.max_tokens;
        if (sub_given("--system-message")) cfg.run.system_message = flags.run.system_message;
        if (sub_given("--timeout-ms")) cfg.run.request_timeout = std::chrono::milliseconds(timeout_ms);
        if (sub_given("--max-attempts")) cfg.run.retry.max_attempts = flags.run.retry.max_attempts;
        if (sub_given("--backoff-ms")) cfg.run.retry.backoff_base = std::chrono::milliseconds(backoff_ms);
        if (sub_given("--base-url")) cfg.base_url = flags.base_url;
        if (sub_given("--api-key-env")) cfg.api_key_env = flags.api_key_env;
        if (sub_given("--no-score")) cfg.score = !no_score;
        if (sub_given("--scorer-url")) cfg.scorer_url = flags.scorer_url;
        if (active == report && sub_given("--format")) cfg.report_format = flags.report_format;
        if (sub_given("--reduction")) cfg.reduction = flags.reduction;
        if (sub_given("--output")) cfg.output = flags.output;

        if (active == validate) return cmd_validate(cfg, out, err);
        if (active == run_cmd) return cmd_run(cfg, out, err, env);
        if (active == score) return cmd_score(cfg, out, err, env);
        return cmd_report(cfg, out, err);
    } catch (const std::exception& e) {
        err << "error: " << e.what() << '\n';
        return kUsage;
    }
}

}  // namespace ecn::cli
