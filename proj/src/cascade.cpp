#include "ecn/cascade.hpp"

#include <fstream>
#include <set>
#include <sstream>

#include <json.hpp>

namespace ecn {

namespace {

using json = nlohmann::json;

const std::string kEcnStage1 =
    "Imagine you are {demographics}. Describe your detailed daily experiences, struggles, and "
    "triumphs, highlighting both emotional and practical challenges.";
const std::string kEcnStage2 =
    "What universal human emotions, such as hope, frustration, or joy, might someone in this "
    "situation feel? Provide examples and reasons for these emotions.";
const std::string kEcnStage3 =
    "How might these experiences and emotions shape this person's worldview, their biases, and "
    "their specific needs for support?";
const std::string kEcnStage4 =
    "Using all the insights gained above, craft an empathetic, reflective, and constructive "
    "response to the original query: {query}. Ensure you address emotional acknowledgment, "
    "perspective-taking, and offer actionable advice. Focus on:\n"
    "1. Acknowledging the user's emotions.\n"
    "2. Deepening understanding of their perspective.\n"
    "3. Providing specific, actionable advice.";

// Every baseline sees the same entry information; only the leading
// instruction differs.
const std::string kContextBlock =
    "Demographics: {demographics}\nDifficulties: {difficulties}\nQuery: {query}";

bool is_ident_char(char c) {
    return (c >= 'a' && c <= 'z') || (c >= 'A' && c <= 'Z') || (c >= '0' && c <= '9') || c == '_';
}

// Calls `on_placeholder(name, begin, end)` for every `{identifier}` in `text`.
template <typename F>
void scan_placeholders(const std::string& text, F&& on_placeholder) {
    std::size_t pos = 0;
    while ((pos = text.find('{', pos)) != std::string::npos) {
        std::size_t end = pos + 1;
        while (end < text.size() && is_ident_char(text[end])) ++end;
        if (end < text.size() && text[end] == '}' && end > pos + 1) {
            on_placeholder(text.substr(pos + 1, end - pos - 1), pos, end + 1);
            pos = end + 1;
        } else {
            ++pos;
        }
    }
}

const std::string* field_for(const std::string& placeholder, const PersonaEntry& entry) {
    if (placeholder == "demographics") return &entry.demographics;
    if (placeholder == "difficulties") return &entry.difficulties;
    if (placeholder == "query") return &entry.query;
    return nullptr;
}

}  // namespace

void CascadeSpec::validate() const {
    if (strategy_name.empty()) throw StrategyError("strategy name must not be empty");
    if (stages.empty()) throw StrategyError("strategy '" + strategy_name + "' has no stages");
    static const PersonaEntry probe{"", "", "", ""};
    for (std::size_t i = 0; i < stages.size(); ++i) {
        if (stages[i].instruction.empty()) {
            throw StrategyError("strategy '" + strategy_name + "' stage " + std::to_string(i + 1) +
                                " has an empty instruction");
        }
        scan_placeholders(stages[i].instruction, [&](const std::string& name, auto, auto) {
            if (!field_for(name, probe)) {
                throw StrategyError("strategy '" + strategy_name + "' stage " +
                                    std::to_string(i + 1) + " uses unknown placeholder {" + name +
                                    "}");
            }
        });
    }
}

CascadeError::CascadeError(int stage_index, LlmError cause, std::vector<StageTranscript> completed)
    : std::runtime_error("stage " + std::to_string(stage_index) + " failed (" +
                         to_string(cause.kind()) + "): " + cause.what()),
      stage_index_(stage_index),
      cause_(std::move(cause)),
      completed_(std::move(completed)) {}

const std::vector<std::string>& builtin_strategy_names() {
    static const std::vector<std::string> names = {strategy::kStandard, strategy::kBasicEmpathy,
                                                   strategy::kDiversityAware, strategy::kEcn};
    return names;
}

CascadeSpec builtin_strategy(const std::string& name) {
    CascadeSpec spec;
    spec.strategy_name = name;
    if (name == strategy::kStandard) {
        spec.stages = {{"answer", kContextBlock}};
    } else if (name == strategy::kBasicEmpathy) {
        spec.stages = {{"answer", "Respond empathetically to the following:\n\n" + kContextBlock}};
    } else if (name == strategy::kDiversityAware) {
        spec.stages = {
            {"answer", "Consider diverse perspectives when responding:\n\n" + kContextBlock}};
    } else if (name == strategy::kEcn) {
        spec.stages = {
            {"perspective_adoption", kEcnStage1},
            {"emotional_resonance", kEcnStage2},
            {"reflective_understanding", kEcnStage3},
            {"integrative_synthesis", kEcnStage4},
        };
    } else {
        throw StrategyError("unknown strategy '" + name +
                            "' (expected standard, basic_empathy, diversity_aware or ecn)");
    }
    return spec;
}

std::string strategy_display_name(const std::string& name) {
    if (name == strategy::kStandard) return "Standard Prompt";
    if (name == strategy::kBasicEmpathy) return "Basic Empathy Prompt";
    if (name == strategy::kDiversityAware) return "Diversity-Aware Prompt";
    if (name == strategy::kEcn) return "ECN";
    return name;
}

std::vector<CascadeSpec> parse_strategy_json(const std::string& text) {
    json doc;
    try {
        doc = json::parse(text);
    } catch (const json::parse_error& e) {
        throw StrategyError(std::string("invalid strategy JSON: ") + e.what());
    }
    const json* list = &doc;
    if (doc.is_object()) {
        if (!doc.contains("strategies")) throw StrategyError("strategy file needs a 'strategies' array");
        list = &doc["strategies"];
    }
    if (!list->is_array()) throw StrategyError("'strategies' must be an array");

    std::vector<CascadeSpec> specs;
    std::set<std::string> names;
    try {
        for (const auto& item : *list) {
            CascadeSpec spec;
            spec.strategy_name = item.at("name").get<std::string>();
            spec.system_message = item.value("system_message", std::string(kDefaultSystemMessage));
            for (const auto& stage : item.at("stages")) {
                if (stage.is_string()) {
                    spec.stages.push_back({"stage" + std::to_string(spec.stages.size() + 1),
                                           stage.get<std::string>()});
                } else {
                    spec.stages.push_back(
                        {stage.value("name", "stage" + std::to_string(spec.stages.size() + 1)),
                         stage.at("instruction").get<std::string>()});
                }
            }
            spec.validate();
            if (!names.insert(spec.strategy_name).second) {
                throw StrategyError("duplicate strategy name '" + spec.strategy_name + "'");
            }
            specs.push_back(std::move(spec));
        }
    } catch (const json::exception& e) {
        throw StrategyError(std::string("malformed strategy definition: ") + e.what());
    }
    return specs;
}

std::vector<CascadeSpec> load_strategy_file(const std::filesystem::path& path) {
    std::ifstream in(path);
    if (!in) throw StrategyError("cannot open strategy file: " + path.string());
    std::ostringstream ss;
    ss << in.rdbuf();
    return parse_strategy_json(ss.str());
}

std::string strategy_to_json(const CascadeSpec& spec) {
    json stages = json::array();
    for (const auto& s : spec.stages) stages.push_back({{"name", s.name}, {"instruction", s.instruction}});
    json doc = {{"name", spec.strategy_name},
                {"system_message", spec.system_message},
                {"stages", std::move(stages)}};
    return doc.dump();
}

std::string instantiate(const std::string& instruction, const PersonaEntry& entry) {
    std::string out;
    std::size_t copied = 0;
    scan_placeholders(instruction, [&](const std::string& name, std::size_t begin, std::size_t end) {
        const std::string* value = field_for(name, entry);
        if (!value) throw StrategyError("unresolved placeholder {" + name + "}");
        out.append(instruction, copied, begin - copied);
        out += *value;
        copied = end;
    });
    out.append(instruction, copied, std::string::npos);
    return out;
}

std::string render_stage_prompt(const CascadeSpec& spec, int stage_index, const PersonaEntry& entry,
                                const std::vector<StageTranscript>& prior) {
    const int count = static_cast<int>(spec.stages.size());
    if (stage_index < 1 || stage_index > count) {
        throw std::out_of_range("stage index " + std::to_string(stage_index) + " outside 1.." +
                                std::to_string(count));
    }
    if (static_cast<int>(prior.size()) != stage_index - 1) {
        throw std::invalid_argument("stage " + std::to_string(stage_index) + " needs " +
                                    std::to_string(stage_index - 1) + " prior transcripts, got " +
                                    std::to_string(prior.size()));
    }
    std::string instruction = instantiate(spec.stages[stage_index - 1].instruction, entry);
    if (stage_index == 1) return instruction;
    const StageTranscript& previous = prior.back();
    return previous.prompt + "\nOutput: " + previous.response + "\n" + instruction;
}

CascadeResult run_cascade(const CascadeSpec& spec, const PersonaEntry& entry, ChatBackend& client,
                          const RunConfig& config, int run_index) {
    if (run_index < 1) throw std::invalid_argument("run_index must be >= 1");
    CascadeResult result;
    result.entry_id = entry.id;
    result.strategy_name = spec.strategy_name;
    result.model_name = config.model_name;
    result.run_index = run_index;

    for (int k = 1; k <= static_cast<int>(spec.stages.size()); ++k) {
        ChatRequest request;
        request.model_name = config.model_name;
        request.system_message = spec.system_message;
        request.user_message = render_stage_prompt(spec, k, entry, result.transcripts);
        request.temperature = config.temperature;
        request.max_tokens = config.max_tokens;
        request.sample_index = static_cast<std::uint64_t>(run_index);

        ChatResponse response;
        try {
            response = client.complete(request);
        } catch (const LlmError& e) {
            throw CascadeError(k, e, std::move(result.transcripts));
        }
        StageTranscript t;
        t.stage_index = k;
        t.prompt = std::move(request.user_message);
        t.response = std::move(response.text);
        t.finish_reason = response.finish_reason;
        t.token_usage = response.token_usage;
        t.attempts = response.attempts;
        t.latency = response.latency;
        result.transcripts.push_back(std::move(t));
    }
    result.final_response = result.transcripts.back().response;
    return result;
}

}  // namespace ecn
