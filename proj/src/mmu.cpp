#include "numasim/mmu.hpp"

#include <cmath>

namespace numasim {

TlbState::TlbState(int core_id, std::size_t capacity_entries)
    : core_id_(core_id), capacity_(capacity_entries), entries_(capacity_entries) {}

void TlbState::set_partition(bool active) {
    if (active == partition_active_) return;
    partition_active_ = active;
    entries_.set_capacity(effective_capacity());
}

PwcState::PwcState(int core_id, std::array<std::size_t, 3> capacities)
    : core_id_(core_id), capacities_(capacities),
      caches_{LruCache<std::uint64_t, char>(capacities[0]), LruCache<std::uint64_t, char>(capacities[1]),
              LruCache<std::uint64_t, char>(capacities[2])} {}

std::uint64_t PwcState::key(int process_id, Vpn vpn, unsigned bits, int level) {
    const unsigned shift = bits * static_cast<unsigned>(kLevels - 1 - level);
    return tlb_key(process_id, vpn >> shift);
}

int PwcState::levels_hit(int process_id, Vpn vpn, unsigned bits) {
    for (int level = 2; level >= 0; --level)
        if (caches_[static_cast<std::size_t>(level)].find(key(process_id, vpn, bits, level))) return level + 1;
    return 0;
}

void PwcState::fill(int process_id, Vpn vpn, unsigned bits) {
    for (int level = 0; level < 3; ++level) caches_[static_cast<std::size_t>(level)].insert(key(process_id, vpn, bits, level), 1);
}

void PwcState::invalidate(int process_id, Vpn vpn, unsigned bits) {
    for (int level = 0; level < 3; ++level) caches_[static_cast<std::size_t>(level)].erase(key(process_id, vpn, bits, level));
}

void PwcState::set_partition(bool active) {
    for (std::size_t i = 0; i < 3; ++i) caches_[i].set_capacity(active ? capacities_[i] / 2 : capacities_[i]);
}

Mmu::Mmu(const Topology& topo, MmuConfig config) : topo_(&topo), config_(config) {
    for (int c = 0; c < topo.core_count(); ++c) {
        tlbs_.emplace_back(c, config.tlb_entries);
        pwcs_.emplace_back(c, config.pwc_entries);
    }
}

WalkResult Mmu::page_walk(const ReplicatedAddressSpace& space, Vpn vpn, int core, const ContentionState& contention) {
    const int node = topo_->node_of(core);
    const unsigned bits = space.index_bits();
    const int pid = space.process_id();
    const Translation tr = space.translate(vpn, node);
    PwcState& cache = pwc(core);
    const int skipped = cache.levels_hit(pid, vpn, bits);

    WalkResult w;
    for (int l = skipped; l < tr.touch_count; ++l) {
        const int resident = tr.touches[static_cast<std::size_t>(l)].resident_node;
        w.cycles += access_latency(*topo_, node, resident, contention);
        w.access_nodes[static_cast<std::size_t>(w.mem_accesses)] = resident;
        ++w.mem_accesses;
        if (resident != node) ++w.remote_accesses;
    }
    if (tr.mapped) {
        w.mapped = true;
        w.pfn = tr.pfn;
        w.pfn_node = tr.pfn_node;
        tlb(core).insert(tlb_key(pid, vpn), TlbEntry{tr.pfn, tr.pfn_node});
        cache.fill(pid, vpn, bits);
    }
    return w;
}

AccessResult Mmu::translate(const ReplicatedAddressSpace& space, Vpn vpn, int core, const ContentionState& contention) {
    AccessResult r;
    if (auto hit = tlb_lookup(core, space.process_id(), vpn)) {
        r.tlb_hit = true;
        r.mapped = true;
        r.pfn = hit->pfn;
        r.pfn_node = hit->pfn_node;
        return r;
    }
    r.walk = page_walk(space, vpn, core, contention);
    r.mapped = r.walk.mapped;
    r.pfn = r.walk.pfn;
    r.pfn_node = r.walk.pfn_node;
    return r;
}

Cycles Mmu::ipi_cost(int initiator_core, std::span<const int> cores_affected) const {
    const int from = topo_->node_of(initiator_core);
    Cycles total = 0;
    for (int c : cores_affected) {
        const double f = topo_->latency_factor(from, topo_->node_of(c));
        total += static_cast<Cycles>(std::floor(static_cast<double>(config_.ipi_base_cycles) * f + 0.5));
    }
    return total;
}

Cycles Mmu::tlb_shootdown(int process_id, Vpn vpn, unsigned bits, int initiator_core, std::span<const int> cores_affected) {
    for (int c : cores_affected) {
        tlb(c).invalidate(tlb_key(process_id, vpn));
        pwc(c).invalidate(process_id, vpn, bits);
    }
    return ipi_cost(initiator_core, cores_affected);
}

void Mmu::invalidate_local(int core, int process_id, Vpn vpn, unsigned bits) {
    tlb(core).invalidate(tlb_key(process_id, vpn));
    pwc(core).invalidate(process_id, vpn, bits);
}

void Mmu::set_partition(int core, bool active) {
    tlb(core).set_partition(active);
    pwc(core).set_partition(active);
}

}  // namespace numasim
