#include "numasim/sched.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <tuple>

#include "numasim/error.hpp"

namespace numasim {

const char* to_string(PolicyKind kind) {
    switch (kind) {
        case PolicyKind::Linux: return "linux";
        case PolicyKind::Mitosis: return "mitosis";
        case PolicyKind::Phoenix: return "phoenix";
    }
    return "?";
}

PolicyKind parse_policy_kind(const std::string& name) {
    if (name == "linux") return PolicyKind::Linux;
    if (name == "mitosis") return PolicyKind::Mitosis;
    if (name == "phoenix") return PolicyKind::Phoenix;
    throw ConfigError("unknown policy '" + name + "' (expected linux, mitosis or phoenix)");
}

const char* to_string(PhoenixAction::Kind kind) {
    switch (kind) {
        case PhoenixAction::Kind::None: return "none";
        case PhoenixAction::Kind::Throttle: return "throttle";
        case PhoenixAction::Kind::Replicate: return "replicate";
        case PhoenixAction::Kind::AlreadyHandled: return "already_handled";
    }
    return "?";
}

void PolicyConfig::validate() const {
    if (!(threshold_pw_ratio > 0.0 && threshold_pw_ratio < 1.0)) throw ConfigError("policy.threshold must be in (0, 1)");
    if (!(imbalance_tolerance >= 0.0 && imbalance_tolerance < 1.0))
        throw ConfigError("policy.tolerance must be in [0, 1)");
    if (window_ticks < 1) throw ConfigError("policy.window must be >= 1");
    if (rebalance_interval < 1) throw ConfigError("policy.rebalance_interval must be >= 1");
    if (autonuma_scan_period < 1) throw ConfigError("policy.autonuma.scan_period must be >= 1");
    if (autonuma_migrate_threshold < 1) throw ConfigError("policy.autonuma.migrate_threshold must be >= 1");
    if (mitosis_replicas < 0) throw ConfigError("policy.replicas must be >= 0");
    if (!(mba_min_cap >= 0.1 && mba_min_cap <= 1.0)) throw ConfigError("policy.mba.min_cap must be in [0.1, 1.0]");
}

SystemView SystemView::build(const Topology& topo, std::vector<int> core_tasks,
                             const std::vector<std::uint64_t>& node_bandwidth) {
    SystemView v;
    v.topo = &topo;
    v.core_tasks = std::move(core_tasks);
    v.core_tasks.resize(static_cast<std::size_t>(topo.core_count()), 0);
    for (int n = 0; n < topo.node_count(); ++n) {
        NodeLoad load;
        load.node_id = n;
        for (int c : topo.cores_of(n)) {
            load.running_tasks += v.core_tasks[static_cast<std::size_t>(c)];
            if (v.core_tasks[static_cast<std::size_t>(c)] == 0) ++load.idle_cores;
        }
        if (static_cast<std::size_t>(n) < node_bandwidth.size())
            load.bandwidth_bytes_this_epoch = node_bandwidth[static_cast<std::size_t>(n)];
        v.nodes.push_back(load);
    }
    return v;
}

void SystemView::add_task(int core) {
    auto& slot = core_tasks[static_cast<std::size_t>(core)];
    NodeLoad& load = nodes[static_cast<std::size_t>(topo->node_of(core))];
    if (slot == 0) --load.idle_cores;
    ++slot;
    ++load.running_tasks;
}

void SystemView::remove_task(int core) {
    auto& slot = core_tasks[static_cast<std::size_t>(core)];
    NodeLoad& load = nodes[static_cast<std::size_t>(topo->node_of(core))];
    --slot;
    --load.running_tasks;
    if (slot == 0) ++load.idle_cores;
}

TaskState on_fork(const TaskState* parent, ForkKind kind, int task_id, int process_id, int thread_index,
                  const PolicyConfig& policy) {
    TaskState t;
    t.task_id = task_id;
    t.process_id = process_id;
    t.thread_index = thread_index;
    t.phoenix_enabled = policy.kind == PolicyKind::Phoenix;
    if (kind == ForkKind::Thread && parent) {
        t.home_node = parent->home_node;
        t.allowed_nodes = parent->allowed_nodes;
    }
    return t;
}

int place_process(TaskState& task, const PolicyConfig& policy, std::span<const NodeLoad> loads) {
    if (loads.empty()) throw ConfigError("no nodes to place on");
    const NodeLoad* best = &loads[0];
    for (const auto& l : loads) {
        if (policy.kind == PolicyKind::Phoenix) {
            // least bandwidth, then most idle cores, then lowest id
            if (std::make_tuple(l.bandwidth_bytes_this_epoch, -l.idle_cores, l.node_id) <
                std::make_tuple(best->bandwidth_bytes_this_epoch, -best->idle_cores, best->node_id))
                best = &l;
        } else if (std::make_tuple(l.running_tasks, l.node_id) < std::make_tuple(best->running_tasks, best->node_id)) {
            best = &l;
        }
    }
    task.home_node = best->node_id;
    task.allowed_nodes = {best->node_id};
    return best->node_id;
}

namespace {

// Idle core on `node`, preferring one whose SMT sibling is idle too.
int pick_idle_core(const SystemView& view, int node) {
    int fallback = -1;
    for (int c : view.topo->cores_of(node)) {
        if (!view.core_idle(c)) continue;
        const auto sib = view.topo->smt_sibling(c);
        if (!sib || view.core_idle(*sib)) return c;
        if (fallback < 0) fallback = c;
    }
    return fallback;
}

int least_loaded_core(const SystemView& view, std::span<const int> nodes) {
    int best = -1;
    for (int n : nodes)
        for (int c : view.topo->cores_of(n))
            if (best < 0 || std::make_pair(view.core_tasks[static_cast<std::size_t>(c)], c) <
                                std::make_pair(view.core_tasks[static_cast<std::size_t>(best)], best))
                best = c;
    return best;
}

std::vector<int> all_nodes(const Topology& topo) {
    std::vector<int> v(static_cast<std::size_t>(topo.node_count()));
    for (int i = 0; i < topo.node_count(); ++i) v[static_cast<std::size_t>(i)] = i;
    return v;
}

}  // namespace

ThreadPlacement place_thread(TaskState& task, const PolicyConfig& policy, const SystemView& view) {
    const Topology& topo = *view.topo;
    ThreadPlacement out;
    if (policy.kind == PolicyKind::Phoenix) {
        if (task.home_node < 0) throw ConfigError("phoenix thread placement needs a home node");
        if (task.allowed_nodes.empty()) task.allowed_nodes = {task.home_node};
        for (int n : task.allowed_nodes) {
            const int c = pick_idle_core(view, n);
            if (c >= 0) {
                out.core = c;
                return out;
            }
        }
        // Oversubscribed: grow toward the closest node, then bandwidth, then idle cores.
        int best = -1;
        for (int n = 0; n < topo.node_count(); ++n) {
            if (std::find(task.allowed_nodes.begin(), task.allowed_nodes.end(), n) != task.allowed_nodes.end()) continue;
            if (view.nodes[static_cast<std::size_t>(n)].idle_cores == 0) continue;
            if (best < 0) {
                best = n;
                continue;
            }
            const auto& a = view.nodes[static_cast<std::size_t>(n)];
            const auto& b = view.nodes[static_cast<std::size_t>(best)];
            if (std::make_tuple(topo.latency_factor(task.home_node, n), a.bandwidth_bytes_this_epoch, -a.idle_cores) <
                std::make_tuple(topo.latency_factor(task.home_node, best), b.bandwidth_bytes_this_epoch, -b.idle_cores))
                best = n;
        }
        if (best >= 0) {
            task.allowed_nodes.push_back(best);
            out.core = pick_idle_core(view, best);
            out.expanded = true;
            return out;
        }
        out.core = least_loaded_core(view, task.allowed_nodes);
        out.queued = true;
        return out;
    }

    std::vector<int> order = all_nodes(topo);
    std::stable_sort(order.begin(), order.end(), [&](int a, int b) {
        return view.nodes[static_cast<std::size_t>(a)].running_tasks < view.nodes[static_cast<std::size_t>(b)].running_tasks;
    });
    for (int n : order) {
        const int c = pick_idle_core(view, n);
        if (c >= 0) {
            out.core = c;
            return out;
        }
    }
    out.core = least_loaded_core(view, order);
    out.queued = true;
    return out;
}

std::vector<TaskMove> rebalance(const PolicyConfig& policy, const SystemView& view_in, std::span<const TaskState> tasks) {
    SystemView view = view_in;
    const Topology& topo = *view.topo;
    std::vector<TaskMove> moves;
    std::vector<int> core_of(tasks.size());
    for (std::size_t i = 0; i < tasks.size(); ++i) core_of[i] = tasks[i].current_core;

    auto move = [&](std::size_t i, int to) {
        moves.push_back({tasks[i].task_id, core_of[i], to});
        view.remove_task(core_of[i]);
        view.add_task(to);
        core_of[i] = to;
    };

    // Highest task id first among the movable tasks matching `pred`.
    auto pick = [&](auto pred) -> std::optional<std::size_t> {
        std::optional<std::size_t> best;
        for (std::size_t i = 0; i < tasks.size(); ++i) {
            if (tasks[i].pinned || !pred(i)) continue;
            if (!best || tasks[i].task_id > tasks[*best].task_id) best = i;
        }
        return best;
    };

    if (policy.kind != PolicyKind::Phoenix && topo.node_count() > 1) {
        for (int guard = 0; guard < 4 * static_cast<int>(tasks.size()) + 4; ++guard) {
            int hi = 0, lo = 0;
            for (int n = 1; n < topo.node_count(); ++n) {
                if (view.nodes[static_cast<std::size_t>(n)].running_tasks > view.nodes[static_cast<std::size_t>(hi)].running_tasks) hi = n;
                if (view.nodes[static_cast<std::size_t>(n)].running_tasks < view.nodes[static_cast<std::size_t>(lo)].running_tasks) lo = n;
            }
            const int max = view.nodes[static_cast<std::size_t>(hi)].running_tasks;
            const int min = view.nodes[static_cast<std::size_t>(lo)].running_tasks;
            const int diff = max - min;
            if (diff <= 1 || static_cast<double>(diff) <= policy.imbalance_tolerance * static_cast<double>(max)) break;
            auto victim = pick([&](std::size_t i) { return topo.node_of(core_of[i]) == hi; });
            if (!victim) break;
            int target = pick_idle_core(view, lo);
            if (target < 0) {
                const int lo_nodes[] = {lo};
                target = least_loaded_core(view, lo_nodes);
            }
            move(*victim, target);
        }
    }

    // Within the nodes a task may use, spread stacked tasks onto idle cores.
    for (int c = 0; c < topo.core_count(); ++c) {
        while (view.core_tasks[static_cast<std::size_t>(c)] > 1) {
            auto victim = pick([&](std::size_t i) { return core_of[i] == c; });
            if (!victim) break;
            std::vector<int> nodes;
            if (policy.kind == PolicyKind::Phoenix) nodes = tasks[*victim].allowed_nodes;
            else nodes = {topo.node_of(c)};
            int target = -1;
            for (int n : nodes) {
                target = pick_idle_core(view, n);
                if (target >= 0) break;
            }
            if (target < 0) break;
            move(*victim, target);
        }
    }
    return moves;
}

bool on_tick_sample(PmcSample& pmc, const PmcDelta& delta, int window_ticks) {
    if (pmc.ticks_in_window >= window_ticks) pmc = PmcSample{};
    pmc.window_total_cycles += delta.total_cycles;
    pmc.window_pagewalk_cycles += delta.pagewalk_cycles;
    pmc.window_stall_cycles += delta.stall_cycles;
    pmc.window_dtlb_misses += delta.dtlb_misses;
    pmc.window_llc_misses += delta.llc_misses;
    ++pmc.ticks_in_window;
    return pmc.ticks_in_window == window_ticks;
}

std::uint64_t estimate_bandwidth(const PmcSample& pmc, std::uint64_t cacheline_size) {
    return pmc.window_llc_misses * cacheline_size;
}

PhoenixAction phoenix_evaluate(const PhoenixInput& in, const PolicyConfig& policy, double contention_knee) {
    PhoenixAction action;
    if (in.pw_ratio <= policy.threshold_pw_ratio) return action;

    if (policy.mba) {
        for (int n : in.allowed_nodes) {
            const auto& view = in.nodes.at(static_cast<std::size_t>(n));
            if (view.utilization <= contention_knee) continue;
            const ProcessBandwidth* antagonist = nullptr;
            for (const auto& p : view.processes) {
                if (p.process_id == in.process_id || p.priority != Priority::Low) continue;
                if (!antagonist || p.bandwidth_bytes > antagonist->bandwidth_bytes ||
                    (p.bandwidth_bytes == antagonist->bandwidth_bytes && p.process_id < antagonist->process_id))
                    antagonist = &p;
            }
            if (antagonist && antagonist->cap > policy.mba_min_cap + 1e-9) {
                action.kind = PhoenixAction::Kind::Throttle;
                action.node = n;
                action.target_process = antagonist->process_id;
                action.cap = policy.mba_min_cap;
                return action;
            }
        }
    }
    // Give the throttle one full window to take effect before replicating.
    if (in.throttled_last_window) return action;

    const bool allowed =
        std::find(in.allowed_nodes.begin(), in.allowed_nodes.end(), in.task_node) != in.allowed_nodes.end();
    if (allowed && !in.replica_on_node.at(static_cast<std::size_t>(in.task_node))) {
        action.kind = PhoenixAction::Kind::Replicate;
        action.node = in.task_node;
        return action;
    }
    action.kind = PhoenixAction::Kind::AlreadyHandled;
    return action;
}

NodeLoad& mba_set_throttle(std::vector<NodeLoad>& loads, int node, int process_id, double cap) {
    const double tenths = cap * 10.0;
    if (!(std::abs(tenths - std::round(tenths)) < 1e-9 && std::round(tenths) >= 1.0 && std::round(tenths) <= 10.0))
        throw ConfigError("MBA cap must be one of 0.1, 0.2, ..., 1.0");
    for (auto& l : loads) {
        if (l.node_id != node) continue;
        l.mba_caps[process_id] = std::round(tenths) / 10.0;
        return l;
    }
    throw ConfigError("MBA throttle on unknown node " + std::to_string(node));
}

MbaIssue apply_mba(std::uint64_t pending_events, std::uint64_t uncapped_volume, double cap) {
    if (cap >= 1.0) return {pending_events, 0};
    const auto budget = static_cast<std::uint64_t>(std::floor(cap * static_cast<double>(uncapped_volume) + 1e-9));
    const std::uint64_t issued = std::min(pending_events, budget);
    return {issued, pending_events - issued};
}

PageAccessStats::PageAccessStats(std::uint64_t pages, int nodes)
    : nodes_(nodes), counts_(static_cast<std::size_t>(pages) * static_cast<std::size_t>(nodes), 0),
      seen_(static_cast<std::size_t>(pages), false) {}

void PageAccessStats::record(Vpn vpn, int node) {
    const auto v = static_cast<std::size_t>(vpn);
    if (v >= seen_.size()) return;
    if (!seen_[v]) {
        seen_[v] = true;
        touched_.push_back(vpn);
    }
    auto& c = counts_[v * static_cast<std::size_t>(nodes_) + static_cast<std::size_t>(node)];
    if (c < std::numeric_limits<std::uint16_t>::max()) ++c;
}

std::uint32_t PageAccessStats::count(Vpn vpn, int node) const {
    const auto v = static_cast<std::size_t>(vpn);
    if (v >= seen_.size()) return 0;
    return counts_[v * static_cast<std::size_t>(nodes_) + static_cast<std::size_t>(node)];
}

void PageAccessStats::clear() {
    for (Vpn vpn : touched_) {
        const auto v = static_cast<std::size_t>(vpn);
        seen_[v] = false;
        for (int n = 0; n < nodes_; ++n) counts_[v * static_cast<std::size_t>(nodes_) + static_cast<std::size_t>(n)] = 0;
    }
    touched_.clear();
}

std::vector<DataMigration> autonuma_step(const ReplicatedAddressSpace& space, const PageAccessStats& stats,
                                         const PolicyConfig& policy) {
    std::vector<DataMigration> out;
    if (!policy.autonuma) return out;
    std::vector<Vpn> pages = stats.touched();
    std::sort(pages.begin(), pages.end());
    for (Vpn vpn : pages) {
        const auto m = space.lookup(vpn);
        if (!m) continue;
        std::uint32_t total = 0;
        int dominant = 0;
        for (int n = 0; n < stats.nodes(); ++n) {
            const std::uint32_t c = stats.count(vpn, n);
            total += c;
            if (c > stats.count(vpn, dominant)) dominant = n;
        }
        const std::uint32_t remote = total - stats.count(vpn, m->pfn_node);
        if (remote >= policy.autonuma_migrate_threshold && dominant != m->pfn_node)
            out.push_back({vpn, m->pfn_node, dominant});
    }
    return out;
}

std::optional<int> table_follow_target(std::span<const int> task_nodes, int home_node, std::size_t replica_count) {
    if (replica_count != 1 || task_nodes.empty()) return std::nullopt;
    const int n = task_nodes.front();
    for (int x : task_nodes)
        if (x != n) return std::nullopt;
    if (n == home_node) return std::nullopt;
    return n;
}

}  // namespace numasim
