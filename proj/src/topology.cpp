#include "numasim/topology.hpp"

#include <algorithm>
#include <cmath>
#include <map>
#include <set>
#include <string>

#include "numasim/error.hpp"

namespace numasim {

namespace {

void check_factor(double f, int from, int to) {
    if (from == to && f != 1.0)
        throw ConfigError("self-link of node " + std::to_string(from) + " must have latency factor 1.0");
    if (!(f >= 1.0 && f <= 10.0))
        throw ConfigError("latency factor " + std::to_string(f) + " for link " + std::to_string(from) + "->" +
                          std::to_string(to) + " outside [1.0, 10.0]");
}

}  // namespace

Topology::Topology(std::vector<NodeSpec> nodes, std::vector<CoreSpec> cores, std::vector<LinkSpec> links,
                   Cycles local_mem_latency)
    : nodes_(std::move(nodes)), cores_(std::move(cores)), links_(std::move(links)),
      local_mem_latency_(local_mem_latency) {
    node_cores_.resize(nodes_.size());
    core_node_.resize(cores_.size());
    sibling_.assign(cores_.size(), -1);
    std::map<int, std::vector<int>> by_physical;
    for (const auto& c : cores_) {
        core_node_[static_cast<std::size_t>(c.core_id)] = c.node_id;
        node_cores_[static_cast<std::size_t>(c.node_id)].push_back(c.core_id);
        by_physical[c.physical_core_id].push_back(c.core_id);
    }
    for (const auto& [phys, ids] : by_physical) {
        if (ids.size() == 2) {
            sibling_[static_cast<std::size_t>(ids[0])] = ids[1];
            sibling_[static_cast<std::size_t>(ids[1])] = ids[0];
        }
    }
}

const LinkSpec& Topology::link(int from, int to) const {
    return links_.at(static_cast<std::size_t>(from) * nodes_.size() + static_cast<std::size_t>(to));
}

std::optional<int> Topology::smt_sibling(int core) const {
    const int s = sibling_.at(static_cast<std::size_t>(core));
    if (s < 0) return std::nullopt;
    return s;
}

Topology build_topology(const MachineConfig& config) {
    if (config.nodes < 1) throw ConfigError("machine needs at least one node");
    if (config.local_latency == 0) throw ConfigError("local_latency must be > 0");
    if (!(config.node_bandwidth > 0.0)) throw ConfigError("node_bandwidth must be > 0");
    if (!(config.link_bandwidth > 0.0)) throw ConfigError("link_bandwidth must be > 0");
    if (config.memory_pages_per_node == 0) throw ConfigError("memory_pages_per_node must be > 0");

    const auto n = static_cast<std::size_t>(config.nodes);
    std::vector<NodeSpec> nodes;
    for (int i = 0; i < config.nodes; ++i) nodes.push_back({i, config.memory_pages_per_node, config.node_bandwidth});

    std::vector<CoreSpec> cores = config.cores;
    if (cores.empty()) {
        if (config.cores_per_node < 1) throw ConfigError("cores_per_node must be >= 1");
        if (config.smt && config.cores_per_node % 2 != 0)
            throw ConfigError("cores_per_node must be even when smt is enabled");
        int id = 0;
        for (int node = 0; node < config.nodes; ++node) {
            for (int k = 0; k < config.cores_per_node; ++k, ++id) {
                const int phys = config.smt ? (node * config.cores_per_node + k) / 2 : id;
                cores.push_back({id, node, phys});
            }
        }
    }

    // Core ids must be dense 0..N-1 so they can index per-core state.
    std::set<int> seen;
    std::map<int, int> per_physical;
    std::vector<int> per_node(n, 0);
    for (const auto& c : cores) {
        if (!seen.insert(c.core_id).second) throw ConfigError("duplicate core id " + std::to_string(c.core_id));
        if (c.node_id < 0 || c.node_id >= config.nodes)
            throw ConfigError("core " + std::to_string(c.core_id) + " references unknown node " +
                              std::to_string(c.node_id));
        if (++per_physical[c.physical_core_id] > 2)
            throw ConfigError("physical core " + std::to_string(c.physical_core_id) + " has more than 2 logical cores");
        ++per_node[static_cast<std::size_t>(c.node_id)];
    }
    if (!seen.empty() && (*seen.begin() != 0 || *seen.rbegin() != static_cast<int>(cores.size()) - 1))
        throw ConfigError("core ids must be contiguous starting at 0");
    for (std::size_t i = 0; i < n; ++i)
        if (per_node[i] == 0) throw ConfigError("node " + std::to_string(i) + " has no cores");
    std::sort(cores.begin(), cores.end(), [](const CoreSpec& a, const CoreSpec& b) { return a.core_id < b.core_id; });
    for (const auto& c : cores) {
        // siblings must share a node
        for (const auto& d : cores)
            if (d.core_id != c.core_id && d.physical_core_id == c.physical_core_id && d.node_id != c.node_id)
                throw ConfigError("SMT siblings " + std::to_string(c.core_id) + " and " + std::to_string(d.core_id) +
                                  " are on different nodes");
    }

    std::vector<LinkSpec> links(n * n);
    if (!config.links.empty()) {
        std::vector<bool> have(n * n, false);
        for (const auto& l : config.links) {
            if (l.from_node < 0 || l.from_node >= config.nodes || l.to_node < 0 || l.to_node >= config.nodes)
                throw ConfigError("link references unknown node");
            check_factor(l.latency_factor, l.from_node, l.to_node);
            if (!(l.bandwidth_capacity > 0.0)) throw ConfigError("link bandwidth must be > 0");
            const auto idx = static_cast<std::size_t>(l.from_node) * n + static_cast<std::size_t>(l.to_node);
            links[idx] = l;
            have[idx] = true;
        }
        for (std::size_t i = 0; i < n * n; ++i)
            if (!have[i])
                throw ConfigError("missing link entry " + std::to_string(i / n) + "->" + std::to_string(i % n));
    } else {
        if (!config.remote_factors.empty()) {
            if (config.remote_factors.size() != n)
                throw ConfigError("remote_factors must have one row per node");
            for (const auto& row : config.remote_factors)
                if (row.size() != n) throw ConfigError("remote_factors row has wrong length (missing link entry)");
        }
        for (int a = 0; a < config.nodes; ++a) {
            for (int b = 0; b < config.nodes; ++b) {
                double f = a == b ? 1.0 : config.remote_factor;
                if (!config.remote_factors.empty())
                    f = config.remote_factors[static_cast<std::size_t>(a)][static_cast<std::size_t>(b)];
                check_factor(f, a, b);
                links[static_cast<std::size_t>(a) * n + static_cast<std::size_t>(b)] = {a, b, f, config.link_bandwidth};
            }
        }
    }
    return Topology(std::move(nodes), std::move(cores), std::move(links), config.local_latency);
}

Cycles access_latency(const Topology& topo, int from_node, int to_node, const ContentionState& contention) {
    const double raw = static_cast<double>(topo.local_mem_latency()) * topo.latency_factor(from_node, to_node) *
                       contention.node_multiplier(to_node) * contention.link_multiplier(from_node, to_node);
    // 1e-9 absorbs representation error such as 100 * 1.3 = 130.00000000000003
    return static_cast<Cycles>(std::floor(raw + 0.5 + 1e-9 * raw));
}

int fastest_neighbor(const Topology& topo, int node) {
    if (topo.node_count() < 2) throw TopologyError("single-node topology has no neighbor");
    int best = -1;
    double best_factor = 0.0;
    for (int other = 0; other < topo.node_count(); ++other) {
        if (other == node) continue;
        const double f = topo.latency_factor(node, other);
        if (best < 0 || f < best_factor) {
            best = other;
            best_factor = f;
        }
    }
    return best;
}

}  // namespace numasim
