#pragma once

#include <cstdint>
#include <memory>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "numasim/contention.hpp"
#include "numasim/metrics.hpp"
#include "numasim/mmu.hpp"
#include "numasim/sched.hpp"
#include "numasim/topology.hpp"
#include "numasim/workload.hpp"

namespace numasim {

struct WorkloadInstance {
    WorkloadSpec spec;
    int start_quantum = 0;
    std::optional<int> stop_quantum;  // exclusive
    // Thread i runs pinned on pin_cores[i] when non-empty (size must equal thread_count).
    std::vector<int> pin_cores;
    // Map the whole footprint at start, uncharged, each page first-touched by
    // the thread that would own it round-robin.
    bool prefault = false;
};

struct EngineCosts {
    Cycles page_fault = 500;
    Cycles syscall = 200;
    Cycles llc_hit = 40;
    std::uint64_t cacheline_bytes = 64;
    std::uint64_t page_bytes = 4096;
    Cycles context_switch = 2000;
};

struct Scenario {
    MachineConfig machine;
    std::vector<WorkloadInstance> workloads;
    PolicyConfig policy;
    MmuConfig mmu;
    ContentionParams contention;
    EngineCosts costs;
    int duration_quanta = 100;
    std::uint64_t seed = 1;
    Cycles quantum_cycles = 100000;
    bool timeseries = false;
    unsigned pt_arity = 512;
    // Hashed scenario identity, copied into the report; excludes the policy.
    std::string fingerprint;

    // Throws ConfigError (topology errors included).
    void validate() const;
};

// u = bytes / (capacity * quantum_cycles), clamped to [0, 1].
ContentionState compute_contention(const Topology& topo, const EpochTraffic& traffic, Cycles quantum_cycles,
                                   const ContentionParams& params);

// Snapshot of one task for inspection between quanta.
struct TaskView {
    int task_id = 0;
    int process_id = 0;
    int core = -1;
    int node = -1;
    int home_node = -1;
    std::vector<int> allowed_nodes;
    bool active = false;
    CounterSet counters;
    PmcSample pmc;
};

// Stepwise access to a run. run_scenario drives one of these to completion.
class Simulation {
public:
    explicit Simulation(const Scenario& scenario);
    ~Simulation();
    Simulation(const Simulation&) = delete;
    Simulation& operator=(const Simulation&) = delete;

    int quantum() const;
    bool done() const;
    void step_quantum();

    const Topology& topology() const;
    std::vector<TaskView> tasks() const;
    // nullptr once the process has exited or before it starts.
    const ReplicatedAddressSpace* address_space(int process_id) const;
    const ContentionState& contention() const;
    // Bytes per node and per link carried during the last completed quantum.
    const EpochTraffic& last_traffic() const;
    const std::vector<PolicyEvent>& events() const;
    const std::vector<NodeLoad>& node_loads() const;

    // Runs any remaining quanta and builds the report.
    MetricsReport finish();

private:
    struct Impl;
    std::unique_ptr<Impl> impl_;
};

// Deterministic: a pure function of the scenario.
MetricsReport run_scenario(const Scenario& scenario);

// Independent runs. The parallel version distributes runs over OpenMP threads
// and returns the same reports in the same order as the serial one.
std::vector<MetricsReport> run_batch_serial(std::span<const Scenario> scenarios);
std::vector<MetricsReport> run_batch_parallel(std::span<const Scenario> scenarios);

}  // namespace numasim
