#include "unialign/harness.hpp"

#include <algorithm>
#include <atomic>
#include <chrono>
#include <cmath>
#include <condition_variable>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <map>
#include <mutex>
#include <set>
#include <stdexcept>
#include <thread>
#include <tuple>

#include <nlohmann/json.hpp>

#include "unialign/rng.hpp"

namespace unialign {

namespace {

using json = nlohmann::ordered_json;
namespace fs = std::filesystem;

constexpr const char* kRowsHeader =
    "method,missing,replicate,seed,overall,balanced,present,missing_acc,seconds,error";

std::string format_acc(double v) {
    char buf[32];
    std::snprintf(buf, sizeof(buf), "%.6f", v);
    return buf;
}

std::string format_acc4(double v) {
    char buf[32];
    std::snprintf(buf, sizeof(buf), "%.4f", v);
    return buf;
}

std::string sanitize_error(std::string message) {
    for (char& c : message) {
        if (c == ',' || c == '\n' || c == '\r') c = ';';
    }
    return message;
}

std::string row_to_csv(const ResultRow& row) {
    std::string line = row.method + "," + std::to_string(row.missing) + "," +
                       std::to_string(row.replicate) + "," + std::to_string(row.seed) + "," +
                       format_acc(row.overall) + "," + format_acc(row.balanced) + "," +
                       format_acc(row.present) + ",";
    if (row.missing_acc) line += format_acc(*row.missing_acc);
    char buf[32];
    std::snprintf(buf, sizeof(buf), "%.3f", row.wall_seconds);
    line += std::string(",") + buf + "," + sanitize_error(row.error);
    return line;
}

std::vector<std::string> split_line(const std::string& line) {
    std::vector<std::string> fields;
    std::size_t start = 0;
    while (true) {
        const std::size_t comma = line.find(',', start);
        if (comma == std::string::npos) {
            fields.push_back(line.substr(start));
            break;
        }
        fields.push_back(line.substr(start, comma - start));
        start = comma + 1;
    }
    return fields;
}

bool row_order(const ResultRow& a, const ResultRow& b) {
    return std::tie(a.method, a.missing, a.replicate) < std::tie(b.method, b.missing, b.replicate);
}

// Memoizes the per-replicate baseline run so a sweep does not repeat it for
// every missing count.
class BaselineMemo {
  public:
    template <typename F>
    ResultRow get_or_compute(int replicate, F&& compute) {
        std::unique_lock<std::mutex> lock(mu_);
        while (true) {
            auto it = done_.find(replicate);
            if (it != done_.end()) return it->second;
            if (!in_flight_.count(replicate)) {
                in_flight_.insert(replicate);
                break;
            }
            cv_.wait(lock);
        }
        lock.unlock();
        ResultRow row = compute();
        lock.lock();
        done_.emplace(replicate, row);
        in_flight_.erase(replicate);
        cv_.notify_all();
        return row;
    }

  private:
    std::mutex mu_;
    std::condition_variable cv_;
    std::map<int, ResultRow> done_;
    std::set<int> in_flight_;
};

}  // namespace

std::string method_name(Method method) {
    switch (method) {
        case Method::kBaseline: return "baseline";
        case Method::kDann: return "dann";
        case Method::kDannUnilateral: return "dann_unilateral";
    }
    throw std::logic_error("unreachable method");
}

Method method_from_name(const std::string& name) {
    if (name == "baseline") return Method::kBaseline;
    if (name == "dann") return Method::kDann;
    if (name == "dann_unilateral") return Method::kDannUnilateral;
    throw std::invalid_argument("unknown method '" + name +
                                "' (baseline | dann | dann_unilateral)");
}

void ExperimentConfig::validate() const {
    if (methods.empty()) throw std::invalid_argument("sweep: method list is empty");
    if (missing_counts.empty()) throw std::invalid_argument("sweep: missing-count list is empty");
    if (replicates < 1) throw std::invalid_argument("sweep: need at least one seed");
    if (jobs < 1) throw std::invalid_argument("sweep: jobs must be >= 1");
    for (int m : missing_counts) {
        if (m < 0) throw std::invalid_argument("sweep: missing count must be >= 0");
    }
    hp.validate();
    arch.validate();
    const bool any_path = !source_csv.empty() || !target_csv.empty() || !test_csv.empty();
    const bool all_paths = !source_csv.empty() && !target_csv.empty() && !test_csv.empty();
    if (any_path && !all_paths) {
        throw std::invalid_argument(
            "sweep: dataset paths require source, target and test files together");
    }
}

std::uint64_t cell_seed(std::uint64_t base_seed, Method method, int missing, int replicate) {
    const std::uint64_t method_tag =
        method == Method::kBaseline ? 1 : (method == Method::kDann ? 2 : 3);
    const std::uint64_t count_tag =
        method == Method::kBaseline ? 0 : static_cast<std::uint64_t>(missing) + 1;
    return mix_seed(mix_seed(mix_seed(base_seed, method_tag), count_tag),
                    static_cast<std::uint64_t>(replicate) + 1);
}

ResultRow run_method(Method method, const Dataset& source_train, const Dataset& target_filtered,
                     const Dataset& test, const ArchitectureSpec& arch, HyperParams hp,
                     std::uint64_t seed) {
    const auto start = std::chrono::steady_clock::now();
    hp.seed = seed;
    if (method == Method::kDann) hp.lambda_cons = 0.0;  // the reduction identity

    ResultRow row;
    row.method = method_name(method);
    row.seed = seed;

    PretrainResult stage1 = stage1_pretrain(source_train, arch, hp);
    EvalMetrics metrics;
    if (method == Method::kBaseline) {
        // The baseline never sees a target training set, so its metrics are
        // split against the full class set and carry no missing-class view.
        metrics = evaluate(stage1.params, test, test.full_class_list());
        row.missing = 0;
    } else {
        AdaptResult stage2 =
            stage2_adapt(source_train, target_filtered, stage1.params, stage1.cache, arch, hp);
        const std::vector<int>& y_sub = target_filtered.present_classes;
        metrics = evaluate(stage2.params, test,
                           y_sub.empty() ? test.full_class_list() : y_sub);
        row.missing =
            source_train.num_classes - static_cast<int>(
                (y_sub.empty() ? test.full_class_list() : y_sub).size());
    }

    row.overall = metrics.overall;
    row.balanced = metrics.balanced;
    row.present = metrics.present_mean;
    row.missing_acc = metrics.missing_mean;
    row.wall_seconds =
        std::chrono::duration<double>(std::chrono::steady_clock::now() - start).count();
    return row;
}

std::vector<ResultRow> sweep(const ExperimentConfig& config) {
    config.validate();
    fs::create_directories(config.out_dir);

    Dataset source_train, target_full, test;
    if (!config.source_csv.empty()) {
        source_train = read_dataset_csv(config.source_csv, Domain::kSource);
        target_full = read_dataset_csv(config.target_csv, Domain::kTarget);
        test = read_dataset_csv(config.test_csv, Domain::kTarget);
    } else {
        SyntheticBenchmark bench = synth_generate(config.synth);
        source_train = std::move(bench.source_train);
        target_full = std::move(bench.target_train_full);
        test = std::move(bench.target_test);
    }

    struct Cell {
        Method method;
        int missing;
        int replicate;
    };
    std::vector<Cell> cells;
    for (Method method : config.methods) {
        for (int missing : config.missing_counts) {
            for (int replicate = 0; replicate < config.replicates; ++replicate) {
                cells.push_back({method, missing, replicate});
            }
        }
    }

    // Resume support: skip cells already journaled.
    const std::string journal_path = (fs::path(config.out_dir) / "rows.csv").string();
    std::vector<ResultRow> rows;
    std::set<std::tuple<std::string, int, int>> finished;
    if (fs::exists(journal_path)) {
        rows = read_rows_csv(journal_path);
        for (const ResultRow& row : rows) {
            finished.insert({row.method, row.missing, row.replicate});
        }
    }
    std::vector<Cell> pending;
    for (const Cell& cell : cells) {
        if (!finished.count({method_name(cell.method), cell.missing, cell.replicate})) {
            pending.push_back(cell);
        }
    }

    std::ofstream journal(journal_path, std::ios::app | std::ios::binary);
    if (!journal) throw std::runtime_error("cannot open journal " + journal_path);
    if (finished.empty() && rows.empty()) journal << kRowsHeader << "\n";

    std::mutex sink_mu;
    std::atomic<std::size_t> next_cell{0};
    std::atomic<std::size_t> done_count{0};
    BaselineMemo baseline_memo;

    const auto filtered_target = [&](int missing) {
        if (!config.custom_subset.empty()) {
            return filter_target_subset(target_full, config.custom_subset);
        }
        return filter_target_classes(target_full, target_full.num_classes - missing);
    };

    const auto run_cell = [&](const Cell& cell) {
        ResultRow row;
        row.method = method_name(cell.method);
        row.missing = cell.missing;
        row.replicate = cell.replicate;
        row.seed = cell_seed(config.base_seed, cell.method, cell.missing, cell.replicate);
        try {
            if (cell.method == Method::kBaseline) {
                ResultRow base = baseline_memo.get_or_compute(cell.replicate, [&] {
                    ResultRow r = run_method(Method::kBaseline, source_train, target_full, test,
                                             config.arch, config.hp, row.seed);
                    return r;
                });
                base.missing = cell.missing;
                base.replicate = cell.replicate;
                row = base;
            } else {
                const Dataset target = filtered_target(cell.missing);
                row = run_method(cell.method, source_train, target, test, config.arch, config.hp,
                                 row.seed);
                row.missing = cell.missing;
                row.replicate = cell.replicate;
            }
        } catch (const std::exception& e) {
            row.error = e.what();
        }

        std::lock_guard<std::mutex> lock(sink_mu);
        rows.push_back(row);
        journal << row_to_csv(row) << "\n";
        journal.flush();
        const std::size_t n = ++done_count;
        std::cout << "[" << n << "/" << cells.size() << "] " << row.method
                  << " missing=" << row.missing << " rep=" << row.replicate;
        if (row.failed()) std::cout << " ERROR: " << row.error;
        else std::cout << " overall=" << format_acc4(row.overall);
        std::cout << " (" << format_acc4(row.wall_seconds) << "s)" << std::endl;
    };

    done_count = cells.size() - pending.size();
    const int workers = std::max(1, std::min<int>(config.jobs, static_cast<int>(pending.size())));
    if (workers <= 1) {
        for (const Cell& cell : pending) run_cell(cell);
    } else {
        std::vector<std::thread> pool;
        pool.reserve(static_cast<std::size_t>(workers));
        for (int w = 0; w < workers; ++w) {
            pool.emplace_back([&] {
                while (true) {
                    const std::size_t i = next_cell.fetch_add(1);
                    if (i >= pending.size()) return;
                    run_cell(pending[i]);
                }
            });
        }
        for (std::thread& t : pool) t.join();
    }

    std::sort(rows.begin(), rows.end(), row_order);
    write_rows_csv(rows, (fs::path(config.out_dir) / "results.csv").string());
    const auto aggregates = aggregate(rows);
    emit_report(aggregates, "csv", (fs::path(config.out_dir) / "report.csv").string());
    emit_report(aggregates, "json", (fs::path(config.out_dir) / "report.json").string());
    return rows;
}

std::vector<AggregateRow> aggregate(const std::vector<ResultRow>& rows) {
    std::map<std::pair<std::string, int>, std::vector<const ResultRow*>> groups;
    for (const ResultRow& row : rows) {
        if (row.failed()) {
            std::cerr << "warning: skipping failed cell " << row.method << "/" << row.missing
                      << "/" << row.replicate << ": " << row.error << "\n";
            continue;
        }
        groups[{row.method, row.missing}].push_back(&row);
    }

    std::vector<AggregateRow> aggregates;
    for (const auto& [key, members] : groups) {
        if (members.empty()) {
            std::cerr << "warning: empty group " << key.first << "/" << key.second << "\n";
            continue;
        }
        AggregateRow agg;
        agg.method = key.first;
        agg.missing = key.second;
        agg.count = static_cast<int>(members.size());
        double sum = 0.0, present_sum = 0.0, missing_sum = 0.0;
        int missing_n = 0;
        for (const ResultRow* row : members) {
            sum += row->overall;
            present_sum += row->present;
            if (row->missing_acc) {
                missing_sum += *row->missing_acc;
                ++missing_n;
            }
        }
        const double n = static_cast<double>(members.size());
        agg.mean_acc = sum / n;
        double var = 0.0;
        for (const ResultRow* row : members) {
            const double d = row->overall - agg.mean_acc;
            var += d * d;
        }
        agg.std_acc = std::sqrt(var / n);
        agg.mean_present = present_sum / n;
        if (missing_n > 0) agg.mean_missing = missing_sum / missing_n;
        aggregates.push_back(std::move(agg));
    }
    return aggregates;
}

void emit_report(const std::vector<AggregateRow>& aggregates, const std::string& format,
                 const std::string& path) {
    if (format == "csv") {
        std::ofstream out(path, std::ios::binary);
        if (!out) throw std::runtime_error("cannot write report " + path);
        out << "method,missing,mean_acc,std_acc,mean_present,mean_missing\n";
        for (const AggregateRow& agg : aggregates) {
            out << agg.method << "," << agg.missing << "," << format_acc4(agg.mean_acc) << ","
                << format_acc4(agg.std_acc) << "," << format_acc4(agg.mean_present) << ",";
            if (agg.mean_missing) out << format_acc4(*agg.mean_missing);
            out << "\n";
        }
        if (!out) throw std::runtime_error("failed writing report " + path);
        return;
    }
    if (format == "json") {
        json arr = json::array();
        for (const AggregateRow& agg : aggregates) {
            json j;
            j["method"] = agg.method;
            j["missing"] = agg.missing;
            // Parse the 4-decimal rendering so json and csv carry the same
            // numeric content.
            j["mean_acc"] = json::parse(format_acc4(agg.mean_acc));
            j["std_acc"] = json::parse(format_acc4(agg.std_acc));
            j["mean_present"] = json::parse(format_acc4(agg.mean_present));
            if (agg.mean_missing) j["mean_missing"] = json::parse(format_acc4(*agg.mean_missing));
            else j["mean_missing"] = nullptr;
            arr.push_back(std::move(j));
        }
        std::ofstream out(path, std::ios::binary);
        if (!out) throw std::runtime_error("cannot write report " + path);
        out << arr.dump(2) << "\n";
        if (!out) throw std::runtime_error("failed writing report " + path);
        return;
    }
    throw std::invalid_argument("unknown report format '" + format + "' (csv | json)");
}

void write_rows_csv(const std::vector<ResultRow>& rows, const std::string& path) {
    std::ofstream out(path, std::ios::binary);
    if (!out) throw std::runtime_error("cannot write rows file " + path);
    out << kRowsHeader << "\n";
    for (const ResultRow& row : rows) out << row_to_csv(row) << "\n";
    if (!out) throw std::runtime_error("failed writing rows file " + path);
}

std::vector<ResultRow> read_rows_csv(const std::string& path) {
    std::ifstream in(path);
    if (!in) throw std::runtime_error("cannot read rows file " + path);
    std::string line;
    if (!std::getline(in, line)) throw std::runtime_error(path + ": missing header");
    if (!line.empty() && line.back() == '\r') line.pop_back();
    if (line != kRowsHeader) throw std::runtime_error(path + ": unexpected header");

    std::vector<ResultRow> rows;
    std::size_t line_no = 1;
    while (std::getline(in, line)) {
        ++line_no;
        if (!line.empty() && line.back() == '\r') line.pop_back();
        if (line.empty()) continue;
        const auto fields = split_line(line);
        if (fields.size() != 10) {
            throw std::runtime_error(path + ":" + std::to_string(line_no) +
                                     ": expected 10 fields");
        }
        ResultRow row;
        row.method = fields[0];
        row.missing = std::stoi(fields[1]);
        row.replicate = std::stoi(fields[2]);
        row.seed = std::stoull(fields[3]);
        row.overall = std::stod(fields[4]);
        row.balanced = std::stod(fields[5]);
        row.present = std::stod(fields[6]);
        if (!fields[7].empty()) row.missing_acc = std::stod(fields[7]);
        row.wall_seconds = std::stod(fields[8]);
        row.error = fields[9];
        rows.push_back(std::move(row));
    }
    return rows;
}

}  // namespace unialign
