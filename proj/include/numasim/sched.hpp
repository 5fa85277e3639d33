#pragma once

#include <cstdint>
#include <map>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "numasim/pagetable.hpp"
#include "numasim/topology.hpp"
#include "numasim/workload.hpp"

namespace numasim {

enum class PolicyKind { Linux, Mitosis, Phoenix };

const char* to_string(PolicyKind kind);
PolicyKind parse_policy_kind(const std::string& name);

struct PolicyConfig {
    PolicyKind kind = PolicyKind::Linux;
    double threshold_pw_ratio = 0.10;  // phoenix only
    double imbalance_tolerance = 0.25;
    int window_ticks = 10;
    int rebalance_interval = 4;
    bool autonuma = true;
    int autonuma_scan_period = 50;
    std::uint32_t autonuma_migrate_threshold = 4;
    bool mba = true;
    double mba_min_cap = 0.1;
    // Mitosis replica count: 0 replicates on every node, k on the home node
    // and the k-1 lowest other node ids.
    int mitosis_replicas = 0;

    void validate() const;
};

// Counter deltas for one tick, and the accumulating sampling window.
struct PmcDelta {
    Cycles total_cycles = 0;
    Cycles pagewalk_cycles = 0;
    Cycles stall_cycles = 0;
    std::uint64_t dtlb_misses = 0;
    std::uint64_t llc_misses = 0;
};

struct PmcSample {
    Cycles window_total_cycles = 0;
    Cycles window_pagewalk_cycles = 0;
    Cycles window_stall_cycles = 0;
    std::uint64_t window_dtlb_misses = 0;
    std::uint64_t window_llc_misses = 0;
    int ticks_in_window = 0;

    // 0 for an empty window.
    double pw_ratio() const {
        return window_total_cycles == 0 ? 0.0
                                        : static_cast<double>(window_pagewalk_cycles) / static_cast<double>(window_total_cycles);
    }
};

struct TaskState {
    int task_id = 0;
    int process_id = 0;
    int thread_index = 0;
    int home_node = -1;              // -1 until placed
    std::vector<int> allowed_nodes;  // [0] is the home node
    bool phoenix_enabled = false;
    bool pinned = false;
    PmcSample pmc;
    int current_core = -1;
};

struct NodeLoad {
    int node_id = 0;
    int running_tasks = 0;
    int idle_cores = 0;
    std::uint64_t bandwidth_bytes_this_epoch = 0;
    std::map<int, double> mba_caps;  // process id -> fraction of unthrottled volume
};

// What placement and rebalancing can see of the machine.
struct SystemView {
    const Topology* topo = nullptr;
    std::vector<int> core_tasks;  // runnable tasks queued per core
    std::vector<NodeLoad> nodes;

    static SystemView build(const Topology& topo, std::vector<int> core_tasks,
                            const std::vector<std::uint64_t>& node_bandwidth = {});
    bool core_idle(int core) const { return core_tasks[static_cast<std::size_t>(core)] == 0; }
    void add_task(int core);
    void remove_task(int core);
};

enum class ForkKind { Thread, Process };

TaskState on_fork(const TaskState* parent, ForkKind kind, int task_id, int process_id, int thread_index,
                  const PolicyConfig& policy);

int place_process(TaskState& task, const PolicyConfig& policy, std::span<const NodeLoad> loads);

struct ThreadPlacement {
    int core = -1;
    bool expanded = false;  // phoenix grew allowed_nodes
    bool queued = false;    // no idle core; time-shares
};

ThreadPlacement place_thread(TaskState& task, const PolicyConfig& policy, const SystemView& view);

struct TaskMove {
    int task_id = 0;
    int from_core = 0;
    int new_core = 0;
};

// `tasks` are the runnable tasks with their current cores.
std::vector<TaskMove> rebalance(const PolicyConfig& policy, const SystemView& view, std::span<const TaskState> tasks);

// Accumulates a tick; a full window restarts from the new delta. Returns true
// when the window has just reached `window_ticks`.
bool on_tick_sample(PmcSample& pmc, const PmcDelta& delta, int window_ticks);

std::uint64_t estimate_bandwidth(const PmcSample& pmc, std::uint64_t cacheline_size);

// Phoenix evaluation at window rollover.
struct ProcessBandwidth {
    int process_id = 0;
    Priority priority = Priority::High;
    std::uint64_t bandwidth_bytes = 0;
    double cap = 1.0;
};

struct NodeBandwidthView {
    int node_id = 0;
    double utilization = 0.0;
    std::vector<ProcessBandwidth> processes;  // co-resident processes on the node
};

struct PhoenixInput {
    int process_id = 0;
    double pw_ratio = 0.0;
    int task_node = 0;
    std::vector<int> allowed_nodes;
    std::vector<NodeBandwidthView> nodes;  // indexed by node id
    std::vector<bool> replica_on_node;     // indexed by node id
    bool throttled_last_window = false;     // this task's process throttled someone in the previous window
};

struct PhoenixAction {
    enum class Kind { None, Throttle, Replicate, AlreadyHandled };
    Kind kind = Kind::None;
    int node = -1;
    int target_process = -1;
    double cap = 1.0;
};

const char* to_string(PhoenixAction::Kind kind);

PhoenixAction phoenix_evaluate(const PhoenixInput& input, const PolicyConfig& policy, double contention_knee);

// Validates cap in {0.1, 0.2, ..., 1.0} and records it. Throws ConfigError.
NodeLoad& mba_set_throttle(std::vector<NodeLoad>& loads, int node, int process_id, double cap);

// Deferral of a capped process's issue volume.
struct MbaIssue {
    std::uint64_t issued = 0;
    std::uint64_t deferred = 0;
};
MbaIssue apply_mba(std::uint64_t pending_events, std::uint64_t uncapped_volume, double cap);

// Per-page, per-node access counts since the last AutoNUMA scan.
class PageAccessStats {
public:
    PageAccessStats(std::uint64_t pages, int nodes);

    void record(Vpn vpn, int node);
    std::uint32_t count(Vpn vpn, int node) const;
    const std::vector<Vpn>& touched() const noexcept { return touched_; }
    int nodes() const noexcept { return nodes_; }
    void clear();

private:
    int nodes_;
    std::vector<std::uint16_t> counts_;
    std::vector<bool> seen_;
    std::vector<Vpn> touched_;
};

struct DataMigration {
    Vpn vpn = 0;
    int from_node = 0;
    int to_node = 0;
};

// Pages with >= migrate_threshold remote accesses move to their dominant
// accessor node (ties to the lowest id). Ordered by vpn.
std::vector<DataMigration> autonuma_step(const ReplicatedAddressSpace& space, const PageAccessStats& stats,
                                         const PolicyConfig& policy);

// Phoenix moves a single-replica page table when every thread of the process
// runs on one node other than home. Returns that node.
std::optional<int> table_follow_target(std::span<const int> task_nodes, int home_node, std::size_t replica_count);

}  // namespace numasim
