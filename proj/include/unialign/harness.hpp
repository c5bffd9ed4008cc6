#pragma once

#include <cstdint>
#include <optional>
#include <string>
#include <vector>

#include "unialign/data.hpp"
#include "unialign/nets.hpp"
#include "unialign/train.hpp"

namespace unialign {

enum class Method { kBaseline, kDann, kDannUnilateral };

std::string method_name(Method method);
Method method_from_name(const std::string& name);

struct ExperimentConfig {
    std::vector<Method> methods{Method::kBaseline, Method::kDann, Method::kDannUnilateral};
    std::vector<int> missing_counts{9, 8, 7, 6, 5, 2, 0};
    int replicates = 5;
    std::uint64_t base_seed = 1;
    SyntheticConfig synth;
    // Non-empty paths override the synthetic benchmark.
    std::string source_csv;
    std::string target_csv;
    std::string test_csv;
    ArchitectureSpec arch;
    HyperParams hp;
    std::string out_dir = "sweep_out";
    int jobs = 1;
    // Optional arbitrary present-class subset; when set it replaces the
    // {0..k-1} rule for every count (robustness probes).
    std::vector<int> custom_subset;

    void validate() const;
};

struct ResultRow {
    std::string method;
    int missing = 0;
    int replicate = 0;
    std::uint64_t seed = 0;
    double overall = 0.0;
    double balanced = 0.0;
    double present = 0.0;
    std::optional<double> missing_acc;
    double wall_seconds = 0.0;
    std::string error;  // non-empty marks a failed cell

    bool failed() const { return !error.empty(); }
};

struct AggregateRow {
    std::string method;
    int missing = 0;
    double mean_acc = 0.0;
    double std_acc = 0.0;  // population standard deviation
    double mean_present = 0.0;
    std::optional<double> mean_missing;
    int count = 0;
};

// Per-cell seed: hash of (global seed, method, missing count, replicate).
// Baseline ignores the target training set, so its seed ignores the count;
// that keeps baseline rows bitwise constant across missing counts.
std::uint64_t cell_seed(std::uint64_t base_seed, Method method, int missing, int replicate);

// baseline: stage 1 only. dann: stage 2 with lambda_cons forced to 0.
// dann_unilateral: the full two-stage pipeline. Same seed, same row.
ResultRow run_method(Method method, const Dataset& source_train, const Dataset& target_filtered,
                     const Dataset& test, const ArchitectureSpec& arch, HyperParams hp,
                     std::uint64_t seed);

// Cartesian product methods x missing-counts x replicates. Rows are
// journaled to <out_dir>/rows.csv as cells complete; a rerun over an
// existing journal skips finished cells. Failed cells get error markers and
// the sweep continues. Final artifacts: results.csv (sorted rows),
// report.csv and report.json (aggregates).
std::vector<ResultRow> sweep(const ExperimentConfig& config);

std::vector<AggregateRow> aggregate(const std::vector<ResultRow>& rows);

// format: "csv" or "json"; accuracies rendered with 4 decimal places.
void emit_report(const std::vector<AggregateRow>& aggregates, const std::string& format,
                 const std::string& path);

void write_rows_csv(const std::vector<ResultRow>& rows, const std::string& path);
std::vector<ResultRow> read_rows_csv(const std::string& path);

}  // namespace unialign
