#pragma once

#include <array>
#include <optional>
#include <stdexcept>
#include <string>
#include <vector>

#include "ecn/runner.hpp"

namespace ecn {

/// How per-record scores are reduced to one mean +- std per cell.
enum class Reduction {
    /// Every scored (entry, run) value pooled together.
    Pooled,
    /// Mean over entries within each run, then mean and std across runs.
    RunMeans,
};

const char* to_string(Reduction reduction);
Reduction reduction_from_string(const std::string& text);

struct MetricStats {
    std::optional<double> mean;
    std::optional<double> std;  // sample (n-1) std; 0 when n == 1
    std::size_t n = 0;

    bool missing() const noexcept { return n == 0; }
    bool single_sample() const noexcept { return n == 1; }
};

/// Mean and sample standard deviation (n-1) of `values`.
MetricStats summarize(const std::vector<double>& values);

struct AggregateResult {
    std::string strategy_name;
    std::string model_name;
    Reduction reduction = Reduction::RunMeans;
    MetricStats eq;
    MetricStats regard;
    MetricStats perplexity;
};

/// Dataset mean of each metric for one (strategy, model, run_index).
struct RunMean {
    std::string strategy_name;
    std::string model_name;
    int run_index = 0;
    std::optional<double> eq, regard, perplexity;
    std::size_t eq_n = 0, regard_n = 0, perplexity_n = 0;
};

std::vector<RunMean> per_run_means(const std::vector<RunRecord>& records);

/// Groups records by (strategy, model). Groups follow `strategy_order` and
/// `model_order`; names not listed there come after, sorted. Failed records
/// and missing or undefined metrics never contribute.
std::vector<AggregateResult> aggregate(const std::vector<RunRecord>& records, Reduction reduction,
                                       const std::vector<std::string>& strategy_order = {},
                                       const std::vector<std::string>& model_order = {});

enum class ReportFormat { Markdown, Csv };

ReportFormat report_format_from_string(const std::string& text);

/// One section per model, one row per strategy, columns EQ / Regard /
/// Perplexity as `m.xx ± s.xx`. Markdown bolds the best cell of each column
/// per model (max EQ, max Regard, min Perplexity), all of them on a tie.
std::string render_report(const std::vector<AggregateResult>& aggregates, ReportFormat format);

/// Best-cell flags per row for one model's rows, in the order given:
/// [row][0=EQ, 1=Regard, 2=Perplexity].
std::vector<std::array<bool, 3>> best_cells(const std::vector<const AggregateResult*>& rows);

}  // namespace ecn
