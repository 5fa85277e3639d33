#pragma once

#include <array>
#include <cstdint>
#include <functional>
#include <map>
#include <optional>
#include <span>
#include <string>
#include <unordered_map>
#include <vector>

#include "numasim/contention.hpp"
#include "numasim/topology.hpp"

namespace numasim {

using Vpn = std::uint64_t;
using Pfn = std::uint64_t;

enum class Level : std::uint8_t { Pgd = 0, Pud = 1, Pmd = 2, Pte = 3 };
inline constexpr int kLevels = 4;

const char* to_string(Level level);

enum class AllocPolicy { FirstTouch, Interleave, HomeNode };
enum class LockMode { PerTable, Global };

struct TableId {
    std::uint32_t value = UINT32_MAX;

    constexpr bool valid() const noexcept { return value != UINT32_MAX; }
    friend constexpr bool operator==(TableId, TableId) = default;
};

inline constexpr std::uint32_t kDefaultProt = 0x3;  // read | write

struct Mapping {
    Vpn vpn = 0;
    Pfn pfn = 0;
    std::uint32_t prot = kDefaultProt;
    int pfn_node = 0;

    friend bool operator==(const Mapping&, const Mapping&) = default;
};

// Cycle and write accounting for one page-table operation. `cycles` is the
// total charged to the caller; the other cycle fields break it down.
// `exempt_cycles` is reported but not included in `cycles`.
struct PtOpCost {
    Cycles cycles = 0;
    Cycles write_cycles = 0;
    Cycles copy_cycles = 0;
    Cycles lock_wait_cycles = 0;
    Cycles shootdown_cycles = 0;
    Cycles exempt_cycles = 0;
    std::uint64_t writes_performed = 0;
    std::uint64_t shootdowns_issued = 0;
    std::uint64_t pages_copied = 0;
    bool pgd_exempt = false;

    PtOpCost& operator+=(const PtOpCost& o);
};

struct TableTouch {
    Level level = Level::Pgd;
    int resident_node = 0;
};

// Result of a software walk. A fault is a value: `mapped` is false and
// `touches` holds the tables read before the missing entry.
struct Translation {
    bool mapped = false;
    Pfn pfn = 0;
    int pfn_node = 0;
    std::uint32_t prot = 0;
    std::array<TableTouch, kLevels> touches{};
    int touch_count = 0;

    std::span<const TableTouch> tables_touched() const { return {touches.data(), static_cast<std::size_t>(touch_count)}; }
};

struct TableEntry {
    std::uint64_t target = 0;  // child TableId for upper levels, pfn for PTE
    std::uint32_t prot = 0;
    std::int32_t pfn_node = -1;
    bool present = false;
};

struct TablePage {
    Level level = Level::Pgd;
    int resident_node = 0;
    int replica_node = 0;  // key of the replica this table belongs to
    TableId next_replica{};
    bool live = false;
    std::vector<TableEntry> entries;
};

struct AddressSpaceOptions {
    AllocPolicy alloc = AllocPolicy::FirstTouch;
    LockMode lock = LockMode::PerTable;
    unsigned arity = 512;  // power of two in [2, 512]
};

// Invoked once per invalidated vpn by unmap/protect; returns the shootdown cost.
using ShootdownHandler = std::function<Cycles(Vpn vpn, int initiator_core)>;

// A 4-level radix page table with one replica per NUMA node. Corresponding
// tables of all replicas are linked in a circular `next_replica` chain so an
// update to one table reaches every copy without walking the other trees.
//
// Mutations are serialized by the caller. Within a quantum (see
// begin_quantum) an operation issued at time `now` (set_clock) from a
// different core than the previous holder of the same lock waits until that
// holder releases it. Without a clock every operation is issued at 0, so
// contending operations queue and each waits its predecessor's full cycles.
// The lock is the leaf table under PerTable and the whole space under Global.
class ReplicatedAddressSpace {
public:
    ReplicatedAddressSpace(const Topology& topo, int process_id, int home_node, AddressSpaceOptions options = {});

    ReplicatedAddressSpace(const ReplicatedAddressSpace&) = delete;
    ReplicatedAddressSpace& operator=(const ReplicatedAddressSpace&) = delete;
    ReplicatedAddressSpace(ReplicatedAddressSpace&&) = default;

    PtOpCost map_page(Vpn vpn, Pfn pfn, int pfn_node, int requesting_core,
                      const ContentionState& contention = ContentionState::none(), std::uint32_t prot = kDefaultProt);
    PtOpCost unmap_page(Vpn vpn, int requesting_core, const ContentionState& contention = ContentionState::none());
    // Points an existing mapping at a new frame in every replica (data page migration).
    PtOpCost migrate_page(Vpn vpn, Pfn new_pfn, int new_node, int requesting_core,
                          const ContentionState& contention = ContentionState::none());
    // All-or-nothing: throws NotMapped before touching anything if a page is unmapped.
    PtOpCost protect_range(Vpn start, std::uint64_t count, std::uint32_t prot, int requesting_core,
                           const ContentionState& contention = ContentionState::none());
    // mremap: moves [from, from+count) to [to, to+count) preserving frames.
    // Expressed as unmap of the old range followed by map of the new one.
    PtOpCost remap_range(Vpn from, std::uint64_t count, Vpn to, int requesting_core,
                         const ContentionState& contention = ContentionState::none());

    PtOpCost add_replica(int target_node, const ContentionState& contention = ContentionState::none());
    PtOpCost drop_replica(int node);
    PtOpCost migrate_tables(int from_node, int to_node, const ContentionState& contention = ContentionState::none());

    Translation translate(Vpn vpn, int walker_node) const;
    TableId replica_root_for(int node) const;
    std::optional<Mapping> lookup(Vpn vpn) const;

    void set_shootdown_handler(ShootdownHandler handler) { shootdown_ = std::move(handler); }
    void set_lock_mode(LockMode mode) { options_.lock = mode; }
    // Resets lock state and the clock.
    void begin_quantum();
    // Quantum-relative issue time of the next operations.
    void set_clock(Cycles now) { now_ = now; }

    int process_id() const noexcept { return process_id_; }
    int home_node() const noexcept { return home_node_; }
    std::size_t replica_count() const noexcept { return replica_roots_.size(); }
    bool has_replica(int node) const { return replica_roots_.count(node) != 0; }
    std::vector<int> replica_nodes() const;
    std::uint64_t mappings_count() const noexcept { return mappings_count_; }
    const AddressSpaceOptions& options() const noexcept { return options_; }
    Vpn vpn_limit() const noexcept { return vpn_limit_; }
    unsigned index_bits() const noexcept { return bits_; }

    const TablePage& table(TableId id) const { return tables_.at(id.value); }
    std::size_t table_pages(int replica_node) const;
    std::size_t live_table_pages() const;
    // Every chain has exactly replica_count members of one level covering one
    // virtual range. Returns an empty string when intact, else the first violation.
    std::string check_integrity() const;

private:
    std::size_t index_at(Vpn vpn, Level level) const;
    int node_for_new_table(int replica_node, int requesting_node);
    TableId allocate(Level level, int resident_node, int replica_node);
    void release(TableId id);
    std::vector<TableId> chain(TableId start) const;
    TableId lead_root(int node) const;
    // Leaf table for vpn in the lead replica, or invalid if not allocated.
    TableId find_leaf(TableId root, Vpn vpn) const;
    Cycles write_cost(int updater_node, int resident_node, const ContentionState& contention) const;
    void apply_lock(PtOpCost& cost, TableId key, int core);
    void collect(TableId root, std::vector<TableId>& out) const;
    PtOpCost copy_replica(int source_node, int target_node, const ContentionState& contention);
    TableId copy_subtree(TableId source, int target_node, const ContentionState& contention, PtOpCost& cost,
                         Cycles& pgd_cycles);
    void check_vpn(Vpn vpn) const;

    const Topology* topo_;
    int process_id_;
    int home_node_;
    AddressSpaceOptions options_;
    unsigned bits_;
    Vpn vpn_limit_;
    std::map<int, TableId> replica_roots_;
    std::vector<TablePage> tables_;
    std::vector<TableId> free_;
    std::uint64_t mappings_count_ = 0;
    unsigned interleave_next_ = 0;
    ShootdownHandler shootdown_;

    struct LockHolder {
        int core = -1;
        Cycles release = 0;  // quantum-relative time the lock frees up
    };
    Cycles lock_wait(const LockHolder& holder, int core) const;
    Cycles now_ = 0;
    std::unordered_map<std::uint32_t, LockHolder> table_locks_;
    std::optional<LockHolder> global_lock_;
};

ReplicatedAddressSpace create_address_space(const Topology& topo, int process_id, int home_node,
                                            AllocPolicy alloc_policy, unsigned arity = 512);

}  // namespace numasim
