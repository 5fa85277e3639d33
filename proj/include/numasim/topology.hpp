#pragma once

#include <cstdint>
#include <optional>
#include <vector>

#include "numasim/contention.hpp"

namespace numasim {

using Cycles = std::uint64_t;

struct NodeSpec {
    int node_id = 0;
    std::uint64_t memory_capacity_pages = 0;
    double bandwidth_capacity = 0.0;  // bytes per cycle
};

struct CoreSpec {
    int core_id = 0;
    int node_id = 0;
    int physical_core_id = 0;  // two logical cores with the same id are SMT siblings
};

struct LinkSpec {
    int from_node = 0;
    int to_node = 0;
    double latency_factor = 1.0;
    double bandwidth_capacity = 0.0;  // bytes per cycle, directional
};

// Declarative machine description. Cores are numbered node-major; with smt,
// logical cores 2k and 2k+1 of a node share a physical core.
struct MachineConfig {
    int nodes = 2;
    int cores_per_node = 16;
    bool smt = false;
    Cycles local_latency = 100;
    double remote_factor = 1.3;
    // Optional full nodes x nodes factor matrix; overrides remote_factor.
    std::vector<std::vector<double>> remote_factors;
    double node_bandwidth = 10.0;
    double link_bandwidth = 5.0;
    std::uint64_t memory_pages_per_node = std::uint64_t{1} << 22;

    // Explicit component lists. When non-empty they replace the generated ones.
    std::vector<CoreSpec> cores;
    std::vector<LinkSpec> links;
};

class Topology {
public:
    Topology(std::vector<NodeSpec> nodes, std::vector<CoreSpec> cores, std::vector<LinkSpec> links,
             Cycles local_mem_latency);

    int node_count() const noexcept { return static_cast<int>(nodes_.size()); }
    int core_count() const noexcept { return static_cast<int>(cores_.size()); }
    Cycles local_mem_latency() const noexcept { return local_mem_latency_; }

    const std::vector<NodeSpec>& nodes() const noexcept { return nodes_; }
    const std::vector<CoreSpec>& cores() const noexcept { return cores_; }
    const NodeSpec& node(int id) const { return nodes_.at(static_cast<std::size_t>(id)); }
    const CoreSpec& core(int id) const { return cores_.at(static_cast<std::size_t>(id)); }
    const LinkSpec& link(int from, int to) const;

    int node_of(int core) const { return core_node_[static_cast<std::size_t>(core)]; }
    std::optional<int> smt_sibling(int core) const;
    const std::vector<int>& cores_of(int node) const { return node_cores_.at(static_cast<std::size_t>(node)); }

    double latency_factor(int from, int to) const { return link(from, to).latency_factor; }

private:
    std::vector<NodeSpec> nodes_;
    std::vector<CoreSpec> cores_;
    std::vector<LinkSpec> links_;  // row-major
    Cycles local_mem_latency_;
    std::vector<int> core_node_;
    std::vector<int> sibling_;
    std::vector<std::vector<int>> node_cores_;
};

// Validates and builds a Topology. Throws ConfigError.
Topology build_topology(const MachineConfig& config);

// local latency x link factor x destination controller multiplier x link
// multiplier (1 when local), rounded half up to whole cycles.
Cycles access_latency(const Topology& topo, int from_node, int to_node,
                      const ContentionState& contention = ContentionState::none());

// Distinct node with the smallest latency factor from `node`; ties go to the
// lowest id. Throws TopologyError on a single-node machine.
int fastest_neighbor(const Topology& topo, int node);

}  // namespace numasim
