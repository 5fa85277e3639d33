#pragma once

#include <cstdint>
#include <iosfwd>
#include <string>
#include <vector>

#include "numasim/topology.hpp"

namespace numasim {

struct CounterSet {
    Cycles total_cycles = 0;
    Cycles pagewalk_cycles = 0;
    Cycles stall_cycles = 0;
    std::uint64_t dtlb_misses = 0;
    std::uint64_t tlb_hits = 0;
    std::uint64_t llc_misses = 0;
    Cycles replica_update_cycles = 0;
    Cycles shootdown_cycles = 0;
    std::uint64_t data_migrations = 0;
    std::uint64_t table_pages_migrated = 0;
    std::uint64_t bandwidth_bytes = 0;
    std::uint64_t walk_accesses = 0;
    std::uint64_t remote_walk_accesses = 0;

    CounterSet& operator+=(const CounterSet& o);
    friend CounterSet operator-(CounterSet a, const CounterSet& b);
    friend bool operator==(const CounterSet&, const CounterSet&) = default;
};

// 0/0 is 0.
double ratio(std::uint64_t num, std::uint64_t den);
// Rounded to the 4 decimals the CSV carries, so a parsed report compares equal.
double round4(double x);

struct TaskCounters {
    int task_id = 0;
    int process_id = 0;
    std::string process;  // workload name
    CounterSet counters;
};

struct ProcessSummary {
    int process_id = 0;
    std::string name;
    std::size_t replica_count = 0;
    std::vector<int> replica_nodes;
};

struct PolicyEvent {
    int quantum = 0;
    std::string kind;  // expand, throttle, replicate, migrate_tables, thread_migration
    int process_id = -1;
    int task_id = -1;
    int node = -1;
    int target_process = -1;
    double cap = 0.0;

    friend bool operator==(const PolicyEvent&, const PolicyEvent&) = default;
};

struct TimeseriesPoint {
    int quantum = 0;
    int task_id = 0;
    CounterSet delta;

    friend bool operator==(const TimeseriesPoint&, const TimeseriesPoint&) = default;
};

// Everything the engine hands over at the end of a run.
struct RunCounters {
    std::string policy;
    std::string fingerprint;
    std::vector<TaskCounters> tasks;
    std::vector<CounterSet> nodes;  // by node id; bandwidth_bytes is traffic served by the node
    std::vector<ProcessSummary> processes;
    std::vector<PolicyEvent> events;
    std::vector<TimeseriesPoint> timeseries;
    std::uint64_t cross_node_migrations = 0;
};

// One CSV row. task_id is the numeric task id, "node:N", or "total".
struct ReportRow {
    std::string task_id;
    std::string process;
    std::string policy;
    Cycles total_cycles = 0;
    Cycles pagewalk_cycles = 0;
    Cycles stall_cycles = 0;
    std::uint64_t dtlb_misses = 0;
    std::uint64_t tlb_hits = 0;
    Cycles replica_update_cycles = 0;
    Cycles shootdown_cycles = 0;
    std::uint64_t data_migrations = 0;
    std::uint64_t replica_count = 0;
    double pw_ratio = 0.0;
    double remote_walk_fraction = 0.0;
    std::uint64_t bandwidth_bytes = 0;

    friend bool operator==(const ReportRow&, const ReportRow&) = default;
};

struct MetricsReport {
    std::string policy;
    std::string fingerprint;
    std::vector<ReportRow> rows;  // tasks by id, then nodes by id, then "total"
    std::vector<ProcessSummary> processes;
    std::vector<PolicyEvent> events;
    std::vector<TimeseriesPoint> timeseries;
    std::uint64_t cross_node_migrations = 0;

    const ReportRow& total() const { return rows.back(); }
    // Throws std::out_of_range.
    const ReportRow& task(int task_id) const;
    const ReportRow& node(int node_id) const;
    std::vector<const ReportRow*> task_rows() const;
    std::size_t count_events(const std::string& kind) const;
};

MetricsReport finalize(const RunCounters& counters);

inline const std::vector<std::string>& csv_columns() {
    static const std::vector<std::string> cols{
        "task_id",           "process",      "policy",           "total_cycles",   "pagewalk_cycles",
        "stall_cycles",      "dtlb_misses",  "tlb_hits",         "replica_update_cycles",
        "shootdown_cycles",  "data_migrations", "replica_count", "pw_ratio",       "remote_walk_fraction",
        "bandwidth_bytes"};
    return cols;
}

std::string to_csv(const std::vector<ReportRow>& rows);
// Throws ConfigError on a malformed document.
std::vector<ReportRow> parse_csv(const std::string& text);

std::string timeseries_csv(const std::vector<TimeseriesPoint>& points);
std::string events_csv(const std::vector<PolicyEvent>& events);

struct ComparisonRow {
    std::string policy;
    Cycles total_cycles = 0;
    Cycles pagewalk_cycles = 0;
    Cycles stall_cycles = 0;
    Cycles replica_update_cycles = 0;
    Cycles shootdown_cycles = 0;
    std::uint64_t dtlb_misses = 0;
    // candidate / baseline for each metric above (0/0 is 1)
    double norm_total_cycles = 1.0;
    double norm_pagewalk_cycles = 1.0;
    double norm_stall_cycles = 1.0;
    double norm_replica_update_cycles = 1.0;
    double norm_shootdown_cycles = 1.0;
    double norm_dtlb_misses = 1.0;
    double speedup = 1.0;  // baseline total / candidate total
};

// Throws ConfigError when fingerprints differ or the baseline index is out of range.
std::vector<ComparisonRow> compare(const std::vector<MetricsReport>& reports, std::size_t baseline = 0);
std::string comparison_csv(const std::vector<ComparisonRow>& rows);

}  // namespace numasim
