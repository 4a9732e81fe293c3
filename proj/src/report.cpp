#include "ecn/report.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <map>
#include <set>
#include <tuple>
#include <utility>

namespace ecn {

namespace {

enum Column { kEq = 0, kRegard = 1, kPerplexity = 2 };

const MetricValue& metric_of(const MetricScores& s, int column) {
    switch (column) {
    case kEq: return s.eq;
    case kRegard: return s.regard;
    default: return s.perplexity;
    }
}

const MetricStats& stats_of(const AggregateResult& a, int column) {
    switch (column) {
    case kEq: return a.eq;
    case kRegard: return a.regard;
    default: return a.perplexity;
    }
}

MetricStats& stats_of(AggregateResult& a, int column) {
    return const_cast<MetricStats&>(stats_of(std::as_const(a), column));
}

bool nearly_equal(double a, double b) {
    return std::abs(a - b) <= 1e-12 * std::max({1.0, std::abs(a), std::abs(b)});
}

// Positions of names in `preferred` first, the rest sorted.
std::vector<std::string> ordered(const std::set<std::string>& present,
                                 const std::vector<std::string>& preferred) {
    std::vector<std::string> out;
    for (const auto& name : preferred) {
        if (present.count(name) && std::find(out.begin(), out.end(), name) == out.end()) {
            out.push_back(name);
        }
    }
    for (const auto& name : present) {
        if (std::find(out.begin(), out.end(), name) == out.end()) out.push_back(name);
    }
    return out;
}

std::string format_cell(const MetricStats& s) {
    if (s.missing()) return "n/a";
    char buf[64];
    std::snprintf(buf, sizeof buf, "%.2f ± %.2f", *s.mean, *s.std);
    std::string cell = buf;
    if (s.single_sample()) cell += " (n=1)";
    return cell;
}

std::string format_number(const std::optional<double>& v) {
    if (!v) return "";
    char buf[32];
    std::snprintf(buf, sizeof buf, "%.6f", *v);
    return buf;
}

}  // namespace

const char* to_string(Reduction reduction) {
    return reduction == Reduction::Pooled ? "pooled" : "run-means";
}

Reduction reduction_from_string(const std::string& text) {
    if (text == "pooled") return Reduction::Pooled;
    if (text == "run-means" || text == "runs") return Reduction::RunMeans;
    throw std::invalid_argument("unknown reduction '" + text + "' (expected run-means or pooled)");
}

ReportFormat report_format_from_string(const std::string& text) {
    if (text == "markdown" || text == "md") return ReportFormat::Markdown;
    if (text == "csv") return ReportFormat::Csv;
    throw std::invalid_argument("unknown report format '" + text + "' (expected markdown or csv)");
}

MetricStats summarize(const std::vector<double>& values) {
    // Welford's update keeps the variance accurate for long runs of similar values.
    MetricStats s;
    double mean = 0.0, m2 = 0.0;
    for (double x : values) {
        ++s.n;
        double delta = x - mean;
        mean += delta / static_cast<double>(s.n);
        m2 += delta * (x - mean);
    }
    if (s.n == 0) return s;
    s.mean = mean;
    s.std = s.n > 1 ? std::sqrt(m2 / static_cast<double>(s.n - 1)) : 0.0;
    return s;
}

std::vector<RunMean> per_run_means(const std::vector<RunRecord>& records) {
    std::map<std::tuple<std::string, std::string, int>, std::array<std::vector<double>, 3>> groups;
    for (const auto& r : records) {
        if (r.status != RecordStatus::Completed || !r.scores) continue;
        auto& g = groups[{r.cascade.strategy_name, r.cascade.model_name, r.cascade.run_index}];
        for (int c = 0; c < 3; ++c) {
            const MetricValue& v = metric_of(*r.scores, c);
            if (v.has_value()) g[c].push_back(*v.value);
        }
    }
    std::vector<RunMean> out;
    for (const auto& [key, values] : groups) {
        RunMean m;
        std::tie(m.strategy_name, m.model_name, m.run_index) = key;
        auto eq = summarize(values[kEq]);
        auto rg = summarize(values[kRegard]);
        auto pp = summarize(values[kPerplexity]);
        m.eq = eq.mean;
        m.eq_n = eq.n;
        m.regard = rg.mean;
        m.regard_n = rg.n;
        m.perplexity = pp.mean;
        m.perplexity_n = pp.n;
        out.push_back(std::move(m));
    }
    return out;
}

std::vector<AggregateResult> aggregate(const std::vector<RunRecord>& records, Reduction reduction,
                                       const std::vector<std::string>& strategy_order,
                                       const std::vector<std::string>& model_order) {
    // Sorted input makes the floating-point summation order independent of
    // the order records were appended in.
    std::vector<const RunRecord*> sorted;
    std::set<std::string> strategies, models;
    for (const auto& r : records) {
        sorted.push_back(&r);
        strategies.insert(r.cascade.strategy_name);
        models.insert(r.cascade.model_name);
    }
    std::sort(sorted.begin(), sorted.end(),
              [](const RunRecord* a, const RunRecord* b) { return a->key() < b->key(); });

    using Group = std::pair<std::string, std::string>;  // (strategy, model)
    std::map<Group, std::array<std::vector<double>, 3>> pooled;
    std::map<Group, std::array<std::vector<double>, 3>> run_level;
    std::set<Group> seen;
    for (const RunRecord* r : sorted) seen.insert({r->cascade.strategy_name, r->cascade.model_name});

    if (reduction == Reduction::Pooled) {
        for (const RunRecord* r : sorted) {
            if (r->status != RecordStatus::Completed || !r->scores) continue;
            auto& g = pooled[{r->cascade.strategy_name, r->cascade.model_name}];
            for (int c = 0; c < 3; ++c) {
                const MetricValue& v = metric_of(*r->scores, c);
                if (v.has_value()) g[c].push_back(*v.value);
            }
        }
    } else {
        std::vector<RunRecord> copy;
        copy.reserve(sorted.size());
        for (const RunRecord* r : sorted) copy.push_back(*r);
        for (const auto& m : per_run_means(copy)) {
            auto& g = run_level[{m.strategy_name, m.model_name}];
            if (m.eq) g[kEq].push_back(*m.eq);
            if (m.regard) g[kRegard].push_back(*m.regard);
            if (m.perplexity) g[kPerplexity].push_back(*m.perplexity);
        }
    }
    auto& source = reduction == Reduction::Pooled ? pooled : run_level;

    std::vector<AggregateResult> out;
    for (const auto& model : ordered(models, model_order)) {
        for (const auto& strategy : ordered(strategies, strategy_order)) {
            if (!seen.count({strategy, model})) continue;
            AggregateResult a;
            a.strategy_name = strategy;
            a.model_name = model;
            a.reduction = reduction;
            if (auto it = source.find({strategy, model}); it != source.end()) {
                for (int c = 0; c < 3; ++c) stats_of(a, c) = summarize(it->second[c]);
            }
            out.push_back(std::move(a));
        }
    }
    return out;
}

std::vector<std::array<bool, 3>> best_cells(const std::vector<const AggregateResult*>& rows) {
    std::vector<std::array<bool, 3>> flags(rows.size(), {false, false, false});
    for (int c = 0; c < 3; ++c) {
        const bool lower_is_better = c == kPerplexity;
        std::optional<double> best;
        for (const AggregateResult* row : rows) {
            const MetricStats& s = stats_of(*row, c);
            if (s.missing()) continue;
            if (!best || (lower_is_better ? *s.mean < *best : *s.mean > *best)) best = *s.mean;
        }
        if (!best) continue;
        for (std::size_t i = 0; i < rows.size(); ++i) {
            const MetricStats& s = stats_of(*rows[i], c);
            flags[i][c] = !s.missing() && nearly_equal(*s.mean, *best);
        }
    }
    return flags;
}

std::string render_report(const std::vector<AggregateResult>& aggregates, ReportFormat format) {
    std::vector<std::string> models;
    for (const auto& a : aggregates) {
        if (std::find(models.begin(), models.end(), a.model_name) == models.end()) {
            models.push_back(a.model_name);
        }
    }

    std::string out;
    if (format == ReportFormat::Csv) {
        out = "model,strategy,reduction,eq_mean,eq_std,eq_n,regard_mean,regard_std,regard_n,"
              "perplexity_mean,perplexity_std,perplexity_n\n";
        for (const auto& a : aggregates) {
            out += csv_escape(a.model_name) + ',' + csv_escape(a.strategy_name) + ',' +
                   to_string(a.reduction);
            for (int c = 0; c < 3; ++c) {
                const MetricStats& s = stats_of(a, c);
                out += ',' + format_number(s.mean) + ',' + format_number(s.std) + ',' +
                       std::to_string(s.n);
            }
            out += '\n';
        }
        return out;
    }

    if (aggregates.empty()) return out;
    out += aggregates.front().reduction == Reduction::Pooled
               ? "Scores are mean ± std over all scored (entry, run) pairs.\n"
               : "Scores are mean ± std across runs of each run's dataset mean.\n";
    for (const auto& model : models) {
        std::vector<const AggregateResult*> rows;
        for (const auto& a : aggregates) {
            if (a.model_name == model) rows.push_back(&a);
        }
        auto best = best_cells(rows);
        out += "\n## " + model + "\n\n";
        out += "| Method | Empathy Quotient ↑ | Regard ↑ | Perplexity ↓ |\n";
        out += "|---|---|---|---|\n";
        for (std::size_t i = 0; i < rows.size(); ++i) {
            out += "| " + strategy_display_name(rows[i]->strategy_name);
            for (int c = 0; c < 3; ++c) {
                std::string cell = format_cell(stats_of(*rows[i], c));
                out += " | " + (best[i][c] ? "**" + cell + "**" : cell);
            }
            out += " |\n";
        }
    }
    return out;
}

}  // namespace ecn
