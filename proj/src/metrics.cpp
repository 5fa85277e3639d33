#include "numasim/metrics.hpp"

#include <cmath>
#include <algorithm>
#include <cstdio>
#include <limits>
#include <map>
#include <sstream>
#include <stdexcept>

#include "numasim/error.hpp"

namespace numasim {

CounterSet& CounterSet::operator+=(const CounterSet& o) {
    total_cycles += o.total_cycles;
    pagewalk_cycles += o.pagewalk_cycles;
    stall_cycles += o.stall_cycles;
    dtlb_misses += o.dtlb_misses;
    tlb_hits += o.tlb_hits;
    llc_misses += o.llc_misses;
    replica_update_cycles += o.replica_update_cycles;
    shootdown_cycles += o.shootdown_cycles;
    data_migrations += o.data_migrations;
    table_pages_migrated += o.table_pages_migrated;
    bandwidth_bytes += o.bandwidth_bytes;
    walk_accesses += o.walk_accesses;
    remote_walk_accesses += o.remote_walk_accesses;
    return *this;
}

CounterSet operator-(CounterSet a, const CounterSet& b) {
    a.total_cycles -= b.total_cycles;
    a.pagewalk_cycles -= b.pagewalk_cycles;
    a.stall_cycles -= b.stall_cycles;
    a.dtlb_misses -= b.dtlb_misses;
    a.tlb_hits -= b.tlb_hits;
    a.llc_misses -= b.llc_misses;
    a.replica_update_cycles -= b.replica_update_cycles;
    a.shootdown_cycles -= b.shootdown_cycles;
    a.data_migrations -= b.data_migrations;
    a.table_pages_migrated -= b.table_pages_migrated;
    a.bandwidth_bytes -= b.bandwidth_bytes;
    a.walk_accesses -= b.walk_accesses;
    a.remote_walk_accesses -= b.remote_walk_accesses;
    return a;
}

double ratio(std::uint64_t num, std::uint64_t den) {
    return den == 0 ? 0.0 : static_cast<double>(num) / static_cast<double>(den);
}

double round4(double x) { return std::round(x * 1e4) / 1e4; }

namespace {

ReportRow make_row(std::string id, std::string process, const std::string& policy, const CounterSet& c,
                   std::uint64_t replicas) {
    ReportRow r;
    r.task_id = std::move(id);
    r.process = std::move(process);
    r.policy = policy;
    r.total_cycles = c.total_cycles;
    r.pagewalk_cycles = c.pagewalk_cycles;
    r.stall_cycles = c.stall_cycles;
    r.dtlb_misses = c.dtlb_misses;
    r.tlb_hits = c.tlb_hits;
    r.replica_update_cycles = c.replica_update_cycles;
    r.shootdown_cycles = c.shootdown_cycles;
    r.data_migrations = c.data_migrations;
    r.replica_count = replicas;
    r.pw_ratio = round4(ratio(c.pagewalk_cycles, c.total_cycles));
    r.remote_walk_fraction = round4(ratio(c.remote_walk_accesses, c.walk_accesses));
    r.bandwidth_bytes = c.bandwidth_bytes;
    return r;
}

std::string fmt4(double x) {
    char buf[32];
    std::snprintf(buf, sizeof buf, "%.4f", x);
    return buf;
}

std::vector<std::string> split(const std::string& line, char sep) {
    std::vector<std::string> out;
    std::string cur;
    for (char ch : line) {
        if (ch == sep) {
            out.push_back(cur);
            cur.clear();
        } else if (ch != '\r') {
            cur += ch;
        }
    }
    out.push_back(cur);
    return out;
}

std::uint64_t parse_u64(const std::string& s, int line) {
    std::size_t used = 0;
    unsigned long long v = 0;
    try {
        v = std::stoull(s, &used);
    } catch (const std::exception&) {
        used = 0;
    }
    if (used == 0 || used != s.size() || s.front() == '-')
        throw ConfigError("line " + std::to_string(line) + ": expected an unsigned integer, got '" + s + "'");
    return v;
}

double parse_double(const std::string& s, int line) {
    std::size_t used = 0;
    double v = 0;
    try {
        v = std::stod(s, &used);
    } catch (const std::exception&) {
        used = 0;
    }
    if (used == 0 || used != s.size())
        throw ConfigError("line " + std::to_string(line) + ": expected a number, got '" + s + "'");
    return v;
}

double norm(std::uint64_t candidate, std::uint64_t baseline) {
    if (baseline == 0) return candidate == 0 ? 1.0 : std::numeric_limits<double>::infinity();
    return static_cast<double>(candidate) / static_cast<double>(baseline);
}

}  // namespace

const ReportRow& MetricsReport::task(int task_id) const {
    const std::string key = std::to_string(task_id);
    for (const auto& r : rows)
        if (r.task_id == key) return r;
    throw std::out_of_range("no task row " + key);
}

const ReportRow& MetricsReport::node(int node_id) const {
    const std::string key = "node:" + std::to_string(node_id);
    for (const auto& r : rows)
        if (r.task_id == key) return r;
    throw std::out_of_range("no node row " + key);
}

std::vector<const ReportRow*> MetricsReport::task_rows() const {
    std::vector<const ReportRow*> out;
    for (const auto& r : rows)
        if (r.task_id != "total" && r.task_id.rfind("node:", 0) != 0) out.push_back(&r);
    return out;
}

std::size_t MetricsReport::count_events(const std::string& kind) const {
    std::size_t n = 0;
    for (const auto& e : events)
        if (e.kind == kind) ++n;
    return n;
}

MetricsReport finalize(const RunCounters& rc) {
    MetricsReport rep;
    rep.policy = rc.policy;
    rep.fingerprint = rc.fingerprint;
    rep.processes = rc.processes;
    rep.events = rc.events;
    rep.timeseries = rc.timeseries;
    rep.cross_node_migrations = rc.cross_node_migrations;

    std::map<int, std::size_t> replicas;
    std::vector<std::uint64_t> node_replicas(rc.nodes.size(), 0);
    std::uint64_t total_replicas = 0;
    for (const auto& p : rc.processes) {
        replicas[p.process_id] = p.replica_count;
        total_replicas += p.replica_count;
        for (int n : p.replica_nodes)
            if (n >= 0 && static_cast<std::size_t>(n) < node_replicas.size()) ++node_replicas[static_cast<std::size_t>(n)];
    }

    std::vector<const TaskCounters*> tasks;
    for (const auto& t : rc.tasks) tasks.push_back(&t);
    std::sort(tasks.begin(), tasks.end(), [](auto* a, auto* b) { return a->task_id < b->task_id; });

    CounterSet total;
    for (const auto* t : tasks) {
        total += t->counters;
        const auto it = replicas.find(t->process_id);
        rep.rows.push_back(make_row(std::to_string(t->task_id), t->process, rc.policy, t->counters,
                                    it == replicas.end() ? 0 : it->second));
    }
    for (std::size_t n = 0; n < rc.nodes.size(); ++n)
        rep.rows.push_back(make_row("node:" + std::to_string(n), "", rc.policy, rc.nodes[n], node_replicas[n]));
    rep.rows.push_back(make_row("total", "", rc.policy, total, total_replicas));
    return rep;
}

std::string to_csv(const std::vector<ReportRow>& rows) {
    std::ostringstream os;
    const auto& cols = csv_columns();
    for (std::size_t i = 0; i < cols.size(); ++i) os << (i ? "," : "") << cols[i];
    os << '\n';
    for (const auto& r : rows) {
        os << r.task_id << ',' << r.process << ',' << r.policy << ',' << r.total_cycles << ',' << r.pagewalk_cycles << ','
           << r.stall_cycles << ',' << r.dtlb_misses << ',' << r.tlb_hits << ',' << r.replica_update_cycles << ','
           << r.shootdown_cycles << ',' << r.data_migrations << ',' << r.replica_count << ',' << fmt4(r.pw_ratio) << ','
           << fmt4(r.remote_walk_fraction) << ',' << r.bandwidth_bytes << '\n';
    }
    return os.str();
}

std::vector<ReportRow> parse_csv(const std::string& text) {
    std::istringstream is(text);
    std::string line;
    int lineno = 0;
    if (!std::getline(is, line)) throw ConfigError("line 1: empty report");
    ++lineno;
    if (split(line, ',') != csv_columns()) throw ConfigError("line 1: unexpected header");
    std::vector<ReportRow> rows;
    while (std::getline(is, line)) {
        ++lineno;
        if (line.empty() || line == "\r") continue;
        const auto f = split(line, ',');
        if (f.size() != csv_columns().size())
            throw ConfigError("line " + std::to_string(lineno) + ": expected " + std::to_string(csv_columns().size()) +
                              " fields, got " + std::to_string(f.size()));
        ReportRow r;
        r.task_id = f[0];
        r.process = f[1];
        r.policy = f[2];
        r.total_cycles = parse_u64(f[3], lineno);
        r.pagewalk_cycles = parse_u64(f[4], lineno);
        r.stall_cycles = parse_u64(f[5], lineno);
        r.dtlb_misses = parse_u64(f[6], lineno);
        r.tlb_hits = parse_u64(f[7], lineno);
        r.replica_update_cycles = parse_u64(f[8], lineno);
        r.shootdown_cycles = parse_u64(f[9], lineno);
        r.data_migrations = parse_u64(f[10], lineno);
        r.replica_count = parse_u64(f[11], lineno);
        r.pw_ratio = parse_double(f[12], lineno);
        r.remote_walk_fraction = parse_double(f[13], lineno);
        r.bandwidth_bytes = parse_u64(f[14], lineno);
        rows.push_back(std::move(r));
    }
    return rows;
}

std::string timeseries_csv(const std::vector<TimeseriesPoint>& points) {
    std::ostringstream os;
    os << "quantum,task_id,total_cycles,pagewalk_cycles,stall_cycles,dtlb_misses,tlb_hits,replica_update_cycles,"
          "shootdown_cycles,bandwidth_bytes\n";
    for (const auto& p : points) {
        const auto& d = p.delta;
        os << p.quantum << ',' << p.task_id << ',' << d.total_cycles << ',' << d.pagewalk_cycles << ',' << d.stall_cycles
           << ',' << d.dtlb_misses << ',' << d.tlb_hits << ',' << d.replica_update_cycles << ',' << d.shootdown_cycles
           << ',' << d.bandwidth_bytes << '\n';
    }
    return os.str();
}

std::string events_csv(const std::vector<PolicyEvent>& events) {
    std::ostringstream os;
    os << "quantum,kind,process,task_id,node,target_process,cap\n";
    for (const auto& e : events)
        os << e.quantum << ',' << e.kind << ',' << e.process_id << ',' << e.task_id << ',' << e.node << ','
           << e.target_process << ',' << fmt4(e.cap) << '\n';
    return os.str();
}

std::vector<ComparisonRow> compare(const std::vector<MetricsReport>& reports, std::size_t baseline) {
    if (baseline >= reports.size()) throw ConfigError("comparison baseline index out of range");
    for (const auto& r : reports)
        if (r.fingerprint != reports[baseline].fingerprint)
            throw ConfigError("cannot compare reports from different scenarios (fingerprint " + r.fingerprint +
                              " vs " + reports[baseline].fingerprint + ")");
    const ReportRow& b = reports[baseline].total();
    std::vector<ComparisonRow> out;
    for (const auto& rep : reports) {
        const ReportRow& c = rep.total();
        ComparisonRow row;
        row.policy = rep.policy;
        row.total_cycles = c.total_cycles;
        row.pagewalk_cycles = c.pagewalk_cycles;
        row.stall_cycles = c.stall_cycles;
        row.replica_update_cycles = c.replica_update_cycles;
        row.shootdown_cycles = c.shootdown_cycles;
        row.dtlb_misses = c.dtlb_misses;
        row.norm_total_cycles = norm(c.total_cycles, b.total_cycles);
        row.norm_pagewalk_cycles = norm(c.pagewalk_cycles, b.pagewalk_cycles);
        row.norm_stall_cycles = norm(c.stall_cycles, b.stall_cycles);
        row.norm_replica_update_cycles = norm(c.replica_update_cycles, b.replica_update_cycles);
        row.norm_shootdown_cycles = norm(c.shootdown_cycles, b.shootdown_cycles);
        row.norm_dtlb_misses = norm(c.dtlb_misses, b.dtlb_misses);
        row.speedup = c.total_cycles == 0 ? (b.total_cycles == 0 ? 1.0 : std::numeric_limits<double>::infinity())
                                          : static_cast<double>(b.total_cycles) / static_cast<double>(c.total_cycles);
        out.push_back(row);
    }
    return out;
}

std::string comparison_csv(const std::vector<ComparisonRow>& rows) {
    std::ostringstream os;
    os << "policy,total_cycles,pagewalk_cycles,stall_cycles,replica_update_cycles,shootdown_cycles,dtlb_misses,"
          "norm_total_cycles,norm_pagewalk_cycles,norm_stall_cycles,norm_replica_update_cycles,norm_shootdown_cycles,"
          "norm_dtlb_misses,speedup\n";
    for (const auto& r : rows)
        os << r.policy << ',' << r.total_cycles << ',' << r.pagewalk_cycles << ',' << r.stall_cycles << ','
           << r.replica_update_cycles << ',' << r.shootdown_cycles << ',' << r.dtlb_misses << ','
           << fmt4(r.norm_total_cycles) << ',' << fmt4(r.norm_pagewalk_cycles) << ',' << fmt4(r.norm_stall_cycles) << ','
           << fmt4(r.norm_replica_update_cycles) << ',' << fmt4(r.norm_shootdown_cycles) << ','
           << fmt4(r.norm_dtlb_misses) << ',' << fmt4(r.speedup) << '\n';
    return os.str();
}

}  // namespace numasim
