#pragma once

#include <array>
#include <cstdint>
#include <optional>
#include <span>
#include <vector>

#include "numasim/lru.hpp"
#include "numasim/pagetable.hpp"
#include "numasim/topology.hpp"

namespace numasim {

struct MmuConfig {
    std::size_t tlb_entries = 64;
    std::array<std::size_t, 3> pwc_entries{4, 16, 32};  // PGD, PUD, PMD
    Cycles tlb_hit_cycles = 1;
    Cycles ipi_base_cycles = 400;
};

struct TlbEntry {
    Pfn pfn = 0;
    int pfn_node = 0;
};

// TLBs are tagged with the process id (PCID-style), so context switches do
// not flush them.
inline std::uint64_t tlb_key(int process_id, Vpn vpn) {
    return (static_cast<std::uint64_t>(static_cast<std::uint32_t>(process_id)) << 44) | vpn;
}

class TlbState {
public:
    TlbState(int core_id, std::size_t capacity_entries);

    int core_id() const noexcept { return core_id_; }
    std::size_t capacity_entries() const noexcept { return capacity_; }
    std::size_t effective_capacity() const noexcept { return partition_active_ ? capacity_ / 2 : capacity_; }
    bool partition_active() const noexcept { return partition_active_; }
    std::size_t size() const noexcept { return entries_.size(); }

    // A hit refreshes recency; a miss leaves the state unchanged.
    std::optional<TlbEntry> lookup(std::uint64_t key) {
        const TlbEntry* e = entries_.find(key);
        if (!e) return std::nullopt;
        return *e;
    }
    void insert(std::uint64_t key, TlbEntry entry) { entries_.insert(key, entry); }
    bool invalidate(std::uint64_t key) { return entries_.erase(key); }
    void set_partition(bool active);

private:
    int core_id_;
    std::size_t capacity_;
    bool partition_active_ = false;
    LruCache<std::uint64_t, TlbEntry> entries_;
};

// Page-walk cache for the three upper levels. PTE entries are never cached.
class PwcState {
public:
    PwcState(int core_id, std::array<std::size_t, 3> capacities);

    // Number of leading levels (0..3) whose entries are cached for this key set.
    int levels_hit(int process_id, Vpn vpn, unsigned bits);
    void fill(int process_id, Vpn vpn, unsigned bits);
    void invalidate(int process_id, Vpn vpn, unsigned bits);
    void set_partition(bool active);
    std::size_t capacity(Level level) const { return caches_.at(static_cast<std::size_t>(level)).capacity(); }

private:
    static std::uint64_t key(int process_id, Vpn vpn, unsigned bits, int level);

    int core_id_;
    std::array<std::size_t, 3> capacities_;
    std::array<LruCache<std::uint64_t, char>, 3> caches_;
};

struct WalkResult {
    bool mapped = false;
    Pfn pfn = 0;
    int pfn_node = 0;
    Cycles cycles = 0;
    int mem_accesses = 0;
    int remote_accesses = 0;
    std::array<int, kLevels> access_nodes{};  // node of each memory access, in walk order
};

struct AccessResult {
    bool tlb_hit = false;
    WalkResult walk;  // populated on a miss
    Pfn pfn = 0;
    int pfn_node = 0;
    bool mapped = false;
};

// Per-logical-core translation hardware for a whole machine.
class Mmu {
public:
    Mmu(const Topology& topo, MmuConfig config = {});

    const MmuConfig& config() const noexcept { return config_; }
    TlbState& tlb(int core) { return tlbs_.at(static_cast<std::size_t>(core)); }
    PwcState& pwc(int core) { return pwcs_.at(static_cast<std::size_t>(core)); }

    // Hit costs tlb_hit_cycles; the caller adds it.
    std::optional<TlbEntry> tlb_lookup(int core, int process_id, Vpn vpn) {
        return tlb(core).lookup(tlb_key(process_id, vpn));
    }

    // Called after a TLB miss. Consults the PWC top-down, prices each memory
    // access, and on success fills the TLB and PWC.
    WalkResult page_walk(const ReplicatedAddressSpace& space, Vpn vpn, int core,
                         const ContentionState& contention = ContentionState::none());

    // Lookup, then walk on a miss.
    AccessResult translate(const ReplicatedAddressSpace& space, Vpn vpn, int core,
                           const ContentionState& contention = ContentionState::none());

    // Invalidates vpn on every listed core. Each core costs ipi_base_cycles,
    // scaled by the link factor when it sits on another node than the initiator.
    Cycles tlb_shootdown(int process_id, Vpn vpn, unsigned bits, int initiator_core, std::span<const int> cores_affected);
    // Price of one IPI round to `cores_affected`, without invalidating anything.
    Cycles ipi_cost(int initiator_core, std::span<const int> cores_affected) const;
    // Local invalidation on the initiating core (no IPI).
    void invalidate_local(int core, int process_id, Vpn vpn, unsigned bits);

    // SMT partitioning: halves TLB and PWC capacity while the sibling is busy.
    void set_partition(int core, bool active);

private:
    const Topology* topo_;
    MmuConfig config_;
    std::vector<TlbState> tlbs_;
    std::vector<PwcState> pwcs_;
};

}  // namespace numasim
