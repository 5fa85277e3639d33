#include "numasim/pagetable.hpp"

#include <algorithm>
#include <bit>
#include <unordered_set>

#include "numasim/error.hpp"

namespace numasim {

const char* to_string(Level level) {
    switch (level) {
        case Level::Pgd: return "PGD";
        case Level::Pud: return "PUD";
        case Level::Pmd: return "PMD";
        case Level::Pte: return "PTE";
    }
    return "?";
}

PtOpCost& PtOpCost::operator+=(const PtOpCost& o) {
    cycles += o.cycles;
    write_cycles += o.write_cycles;
    copy_cycles += o.copy_cycles;
    lock_wait_cycles += o.lock_wait_cycles;
    shootdown_cycles += o.shootdown_cycles;
    exempt_cycles += o.exempt_cycles;
    writes_performed += o.writes_performed;
    shootdowns_issued += o.shootdowns_issued;
    pages_copied += o.pages_copied;
    pgd_exempt = pgd_exempt || o.pgd_exempt;
    return *this;
}

namespace {

Level child_level(Level l) { return static_cast<Level>(static_cast<int>(l) + 1); }

}  // namespace

ReplicatedAddressSpace::ReplicatedAddressSpace(const Topology& topo, int process_id, int home_node,
                                               AddressSpaceOptions options)
    : topo_(&topo), process_id_(process_id), home_node_(home_node), options_(options) {
    if (home_node < 0 || home_node >= topo.node_count())
        throw ConfigError("home node " + std::to_string(home_node) + " does not exist");
    if (options.arity < 2 || options.arity > 512 || !std::has_single_bit(options.arity))
        throw ConfigError("page-table arity must be a power of two in [2, 512]");
    bits_ = static_cast<unsigned>(std::countr_zero(options.arity));
    vpn_limit_ = Vpn{1} << (bits_ * kLevels);
    const int pgd_node = node_for_new_table(home_node, home_node);
    replica_roots_[home_node] = allocate(Level::Pgd, pgd_node, home_node);
    TablePage& root = tables_[replica_roots_[home_node].value];
    root.next_replica = replica_roots_[home_node];
}

ReplicatedAddressSpace create_address_space(const Topology& topo, int process_id, int home_node,
                                            AllocPolicy alloc_policy, unsigned arity) {
    AddressSpaceOptions options;
    options.alloc = alloc_policy;
    options.arity = arity;
    return ReplicatedAddressSpace(topo, process_id, home_node, options);
}

std::size_t ReplicatedAddressSpace::index_at(Vpn vpn, Level level) const {
    const unsigned shift = bits_ * static_cast<unsigned>(kLevels - 1 - static_cast<int>(level));
    return static_cast<std::size_t>((vpn >> shift) & (options_.arity - 1));
}

int ReplicatedAddressSpace::node_for_new_table(int replica_node, int requesting_node) {
    // Once replicated, every replica keeps its tables on its own node.
    if (replica_node != home_node_ || replica_roots_.size() > 1) return replica_node;
    switch (options_.alloc) {
        case AllocPolicy::FirstTouch: return requesting_node;
        case AllocPolicy::Interleave: return static_cast<int>(interleave_next_++ % static_cast<unsigned>(topo_->node_count()));
        case AllocPolicy::HomeNode: return home_node_;
    }
    return home_node_;
}

TableId ReplicatedAddressSpace::allocate(Level level, int resident_node, int replica_node) {
    TableId id;
    if (!free_.empty()) {
        id = free_.back();
        free_.pop_back();
    } else {
        id = TableId{static_cast<std::uint32_t>(tables_.size())};
        tables_.emplace_back();
    }
    TablePage& t = tables_[id.value];
    t.level = level;
    t.resident_node = resident_node;
    t.replica_node = replica_node;
    t.next_replica = id;
    t.live = true;
    t.entries.assign(options_.arity, TableEntry{});
    return id;
}

void ReplicatedAddressSpace::release(TableId id) {
    TablePage& t = tables_[id.value];
    t.live = false;
    t.entries.clear();
    t.entries.shrink_to_fit();
    t.next_replica = TableId{};
    free_.push_back(id);
}

std::vector<TableId> ReplicatedAddressSpace::chain(TableId start) const {
    std::vector<TableId> out;
    TableId cur = start;
    do {
        out.push_back(cur);
        cur = tables_[cur.value].next_replica;
    } while (cur != start && out.size() <= replica_roots_.size());
    return out;
}

TableId ReplicatedAddressSpace::lead_root(int node) const { return replica_root_for(node); }

TableId ReplicatedAddressSpace::replica_root_for(int node) const {
    auto it = replica_roots_.find(node);
    if (it != replica_roots_.end()) return it->second;
    return replica_roots_.at(home_node_);
}

void ReplicatedAddressSpace::check_vpn(Vpn vpn) const {
    if (vpn >= vpn_limit_)
        throw PageTableError(PageTableError::Kind::OutOfRange,
                             "vpn " + std::to_string(vpn) + " exceeds the 4-level address range");
}

TableId ReplicatedAddressSpace::find_leaf(TableId root, Vpn vpn) const {
    TableId t = root;
    for (int l = 0; l < kLevels - 1; ++l) {
        const TableEntry& e = tables_[t.value].entries[index_at(vpn, static_cast<Level>(l))];
        if (!e.present) return TableId{};
        t = TableId{static_cast<std::uint32_t>(e.target)};
    }
    return t;
}

Cycles ReplicatedAddressSpace::write_cost(int updater_node, int resident_node, const ContentionState& contention) const {
    return access_latency(*topo_, updater_node, resident_node, contention);
}

Cycles ReplicatedAddressSpace::lock_wait(const LockHolder& holder, int core) const {
    if (holder.core == core || holder.release <= now_) return 0;
    return holder.release - now_;
}

void ReplicatedAddressSpace::apply_lock(PtOpCost& cost, TableId key, int core) {
    const Cycles held = cost.cycles;
    Cycles wait = 0;
    if (options_.lock == LockMode::Global) {
        if (global_lock_) wait = lock_wait(*global_lock_, core);
        global_lock_ = LockHolder{core, now_ + wait + held};
    } else {
        if (!key.valid()) return;
        auto it = table_locks_.find(key.value);
        if (it != table_locks_.end()) wait = lock_wait(it->second, core);
        table_locks_[key.value] = LockHolder{core, now_ + wait + held};
    }
    cost.lock_wait_cycles += wait;
    cost.cycles += wait;
}

void ReplicatedAddressSpace::begin_quantum() {
    table_locks_.clear();
    global_lock_.reset();
    now_ = 0;
}

PtOpCost ReplicatedAddressSpace::map_page(Vpn vpn, Pfn pfn, int pfn_node, int requesting_core,
                                          const ContentionState& contention, std::uint32_t prot) {
    check_vpn(vpn);
    const int req_node = topo_->node_of(requesting_core);
    const TableId root = lead_root(req_node);
    {
        const TableId leaf = find_leaf(root, vpn);
        if (leaf.valid() && tables_[leaf.value].entries[index_at(vpn, Level::Pte)].present)
            throw PageTableError(PageTableError::Kind::MappingExists,
                                 "vpn " + std::to_string(vpn) + " is already mapped");
    }

    PtOpCost cost;
    TableId t = root;
    for (int l = 0; l < kLevels - 1; ++l) {
        const auto level = static_cast<Level>(l);
        const std::size_t idx = index_at(vpn, level);
        if (!tables_[t.value].entries[idx].present) {
            const std::vector<TableId> parents = chain(t);
            std::vector<TableId> kids;
            kids.reserve(parents.size());
            for (TableId p : parents) {
                const int replica = tables_[p.value].replica_node;
                const int node = node_for_new_table(replica, req_node);
                const TableId c = allocate(child_level(level), node, replica);
                tables_[p.value].entries[idx] = TableEntry{c.value, 0, -1, true};
                kids.push_back(c);
                cost.writes_performed += 1;
                cost.write_cycles += write_cost(req_node, node, contention);
            }
            for (std::size_t i = 0; i < kids.size(); ++i)
                tables_[kids[i].value].next_replica = kids[(i + 1) % kids.size()];
        }
        t = TableId{static_cast<std::uint32_t>(tables_[t.value].entries[idx].target)};
    }

    const std::size_t idx = index_at(vpn, Level::Pte);
    for (TableId p : chain(t)) {
        tables_[p.value].entries[idx] = TableEntry{pfn, prot, pfn_node, true};
        cost.writes_performed += 1;
        cost.write_cycles += write_cost(req_node, tables_[p.value].resident_node, contention);
    }
    cost.cycles = cost.write_cycles;
    apply_lock(cost, t, requesting_core);
    ++mappings_count_;
    return cost;
}

PtOpCost ReplicatedAddressSpace::unmap_page(Vpn vpn, int requesting_core, const ContentionState& contention) {
    check_vpn(vpn);
    const int req_node = topo_->node_of(requesting_core);
    const TableId leaf = find_leaf(lead_root(req_node), vpn);
    const std::size_t idx = index_at(vpn, Level::Pte);
    if (!leaf.valid() || !tables_[leaf.value].entries[idx].present)
        throw PageTableError(PageTableError::Kind::NotMapped, "vpn " + std::to_string(vpn) + " is not mapped");

    PtOpCost cost;
    for (TableId p : chain(leaf)) {
        tables_[p.value].entries[idx] = TableEntry{};
        cost.writes_performed += 1;
        cost.write_cycles += write_cost(req_node, tables_[p.value].resident_node, contention);
    }
    cost.shootdowns_issued = 1;
    if (shootdown_) cost.shootdown_cycles = shootdown_(vpn, requesting_core);
    cost.cycles = cost.write_cycles + cost.shootdown_cycles;
    apply_lock(cost, leaf, requesting_core);
    --mappings_count_;
    return cost;
}

PtOpCost ReplicatedAddressSpace::migrate_page(Vpn vpn, Pfn new_pfn, int new_node, int requesting_core,
                                              const ContentionState& contention) {
    check_vpn(vpn);
    const int req_node = topo_->node_of(requesting_core);
    const TableId leaf = find_leaf(lead_root(req_node), vpn);
    const std::size_t idx = index_at(vpn, Level::Pte);
    if (!leaf.valid() || !tables_[leaf.value].entries[idx].present)
        throw PageTableError(PageTableError::Kind::NotMapped, "vpn " + std::to_string(vpn) + " is not mapped");

    PtOpCost cost;
    for (TableId p : chain(leaf)) {
        TableEntry& e = tables_[p.value].entries[idx];
        e.target = new_pfn;
        e.pfn_node = new_node;
        cost.writes_performed += 1;
        cost.write_cycles += write_cost(req_node, tables_[p.value].resident_node, contention);
    }
    cost.shootdowns_issued = 1;
    if (shootdown_) cost.shootdown_cycles = shootdown_(vpn, requesting_core);
    cost.cycles = cost.write_cycles + cost.shootdown_cycles;
    apply_lock(cost, leaf, requesting_core);
    return cost;
}

PtOpCost ReplicatedAddressSpace::protect_range(Vpn start, std::uint64_t count, std::uint32_t prot,
                                               int requesting_core, const ContentionState& contention) {
    const int req_node = topo_->node_of(requesting_core);
    const TableId root = lead_root(req_node);
    std::vector<TableId> leaves;
    leaves.reserve(static_cast<std::size_t>(count));
    for (std::uint64_t i = 0; i < count; ++i) {
        const Vpn vpn = start + i;
        check_vpn(vpn);
        const TableId leaf = find_leaf(root, vpn);
        if (!leaf.valid() || !tables_[leaf.value].entries[index_at(vpn, Level::Pte)].present)
            throw PageTableError(PageTableError::Kind::NotMapped, "vpn " + std::to_string(vpn) + " is not mapped");
        leaves.push_back(leaf);
    }

    PtOpCost cost;
    for (std::uint64_t i = 0; i < count; ++i) {
        const Vpn vpn = start + i;
        const std::size_t idx = index_at(vpn, Level::Pte);
        for (TableId p : chain(leaves[static_cast<std::size_t>(i)])) {
            tables_[p.value].entries[idx].prot = prot;
            cost.writes_performed += 1;
            cost.write_cycles += write_cost(req_node, tables_[p.value].resident_node, contention);
        }
        cost.shootdowns_issued += 1;
        if (shootdown_) cost.shootdown_cycles += shootdown_(vpn, requesting_core);
    }
    cost.cycles = cost.write_cycles + cost.shootdown_cycles;

    // The range holds every leaf-table lock it touches; it waits for the slowest holder.
    if (options_.lock == LockMode::Global) {
        apply_lock(cost, TableId{}, requesting_core);
    } else {
        std::vector<std::uint32_t> keys;
        for (TableId l : leaves) keys.push_back(l.value);
        std::sort(keys.begin(), keys.end());
        keys.erase(std::unique(keys.begin(), keys.end()), keys.end());
        const Cycles held = cost.cycles;
        Cycles wait = 0;
        for (auto k : keys) {
            auto it = table_locks_.find(k);
            if (it != table_locks_.end()) wait = std::max(wait, lock_wait(it->second, requesting_core));
        }
        cost.lock_wait_cycles += wait;
        cost.cycles += wait;
        for (auto k : keys) table_locks_[k] = LockHolder{requesting_core, now_ + wait + held};
    }
    return cost;
}

PtOpCost ReplicatedAddressSpace::remap_range(Vpn from, std::uint64_t count, Vpn to, int requesting_core,
                                             const ContentionState& contention) {
    std::vector<Mapping> moved;
    moved.reserve(static_cast<std::size_t>(count));
    for (std::uint64_t i = 0; i < count; ++i) {
        check_vpn(from + i);
        check_vpn(to + i);
        auto m = lookup(from + i);
        if (!m) throw PageTableError(PageTableError::Kind::NotMapped, "vpn " + std::to_string(from + i) + " is not mapped");
        moved.push_back(*m);
    }
    for (std::uint64_t i = 0; i < count; ++i) {
        const Vpn dst = to + i;
        const bool inside_old = dst >= from && dst < from + count;
        if (!inside_old && lookup(dst))
            throw PageTableError(PageTableError::Kind::MappingExists, "remap target vpn " + std::to_string(dst) + " is mapped");
    }
    PtOpCost cost;
    for (const auto& m : moved) cost += unmap_page(m.vpn, requesting_core, contention);
    for (std::uint64_t i = 0; i < count; ++i) {
        const auto& m = moved[static_cast<std::size_t>(i)];
        cost += map_page(to + i, m.pfn, m.pfn_node, requesting_core, contention, m.prot);
    }
    return cost;
}

TableId ReplicatedAddressSpace::copy_subtree(TableId source, int target_node, const ContentionState& contention,
                                             PtOpCost& cost, Cycles& pgd_cycles) {
    const Level level = tables_[source.value].level;
    const int source_node = tables_[source.value].resident_node;
    const TableId copy = allocate(level, target_node, target_node);

    // One batch per table page: read it from the source, write it locally.
    const Cycles page_cost = access_latency(*topo_, target_node, source_node, contention) +
                             access_latency(*topo_, target_node, target_node, contention);
    if (level == Level::Pgd) {
        pgd_cycles += page_cost;
    } else {
        cost.copy_cycles += page_cost;
        cost.pages_copied += 1;
    }
    cost.writes_performed += 1;

    for (std::size_t i = 0; i < options_.arity; ++i) {
        const TableEntry e = tables_[source.value].entries[i];
        if (!e.present) continue;
        if (level == Level::Pte) {
            tables_[copy.value].entries[i] = e;
        } else {
            const TableId child = copy_subtree(TableId{static_cast<std::uint32_t>(e.target)}, target_node, contention,
                                               cost, pgd_cycles);
            tables_[copy.value].entries[i] = TableEntry{child.value, 0, -1, true};
        }
    }
    tables_[copy.value].next_replica = tables_[source.value].next_replica;
    tables_[source.value].next_replica = copy;
    return copy;
}

PtOpCost ReplicatedAddressSpace::copy_replica(int source_node, int target_node, const ContentionState& contention) {
    if (target_node < 0 || target_node >= topo_->node_count())
        throw ConfigError("replica node " + std::to_string(target_node) + " does not exist");
    if (has_replica(target_node))
        throw PageTableError(PageTableError::Kind::DuplicateReplica,
                             "node " + std::to_string(target_node) + " already holds a replica");
    PtOpCost cost;
    Cycles pgd_cycles = 0;
    const TableId root = copy_subtree(replica_roots_.at(source_node), target_node, contention, cost, pgd_cycles);
    replica_roots_[target_node] = root;
    cost.copy_cycles += pgd_cycles;
    cost.pages_copied += 1;
    cost.exempt_cycles = pgd_cycles;  // callers that do not exempt the PGD clear this
    cost.cycles = cost.copy_cycles;
    return cost;
}

PtOpCost ReplicatedAddressSpace::add_replica(int target_node, const ContentionState& contention) {
    PtOpCost cost = copy_replica(home_node_, target_node, contention);
    cost.exempt_cycles = 0;
    apply_lock(cost, TableId{}, -1);
    return cost;
}

void ReplicatedAddressSpace::collect(TableId root, std::vector<TableId>& out) const {
    out.push_back(root);
    const TablePage& t = tables_[root.value];
    if (t.level == Level::Pte) return;
    for (const auto& e : t.entries)
        if (e.present) collect(TableId{static_cast<std::uint32_t>(e.target)}, out);
}

PtOpCost ReplicatedAddressSpace::drop_replica(int node) {
    auto it = replica_roots_.find(node);
    if (it == replica_roots_.end())
        throw PageTableError(PageTableError::Kind::NoSuchReplica, "node " + std::to_string(node) + " holds no replica");
    if (replica_roots_.size() == 1)
        throw PageTableError(PageTableError::Kind::LastReplica, "cannot drop the last replica");

    std::vector<TableId> doomed;
    collect(it->second, doomed);
    for (TableId t : doomed) {
        TableId pred = tables_[t.value].next_replica;
        while (tables_[pred.value].next_replica != t) pred = tables_[pred.value].next_replica;
        tables_[pred.value].next_replica = tables_[t.value].next_replica;
        release(t);
    }
    replica_roots_.erase(it);
    if (home_node_ == node) home_node_ = replica_roots_.begin()->first;
    return PtOpCost{};
}

PtOpCost ReplicatedAddressSpace::migrate_tables(int from_node, int to_node, const ContentionState& contention) {
    if (!has_replica(from_node))
        throw PageTableError(PageTableError::Kind::NoSuchReplica, "node " + std::to_string(from_node) + " holds no replica");
    const bool single = replica_roots_.size() == 1;
    PtOpCost cost = copy_replica(from_node, to_node, contention);
    if (single) {
        // The PGD is copied but not charged; it stays hot in the caches.
        cost.copy_cycles -= cost.exempt_cycles;
        cost.cycles -= cost.exempt_cycles;
        cost.pages_copied -= 1;
        cost.pgd_exempt = true;
    } else {
        cost.exempt_cycles = 0;
    }
    if (home_node_ == from_node) home_node_ = to_node;
    drop_replica(from_node);
    apply_lock(cost, TableId{}, -1);
    return cost;
}

Translation ReplicatedAddressSpace::translate(Vpn vpn, int walker_node) const {
    Translation tr;
    if (vpn >= vpn_limit_) return tr;
    TableId t = replica_root_for(walker_node);
    for (int l = 0; l < kLevels; ++l) {
        const TablePage& page = tables_[t.value];
        tr.touches[static_cast<std::size_t>(l)] = TableTouch{page.level, page.resident_node};
        tr.touch_count = l + 1;
        const TableEntry& e = page.entries[index_at(vpn, static_cast<Level>(l))];
        if (!e.present) return tr;
        if (l == kLevels - 1) {
            tr.mapped = true;
            tr.pfn = e.target;
            tr.pfn_node = e.pfn_node;
            tr.prot = e.prot;
        } else {
            t = TableId{static_cast<std::uint32_t>(e.target)};
        }
    }
    return tr;
}

std::optional<Mapping> ReplicatedAddressSpace::lookup(Vpn vpn) const {
    const Translation tr = translate(vpn, home_node_);
    if (!tr.mapped) return std::nullopt;
    return Mapping{vpn, tr.pfn, tr.prot, tr.pfn_node};
}

std::vector<int> ReplicatedAddressSpace::replica_nodes() const {
    std::vector<int> out;
    for (const auto& [node, root] : replica_roots_) out.push_back(node);
    return out;
}

std::size_t ReplicatedAddressSpace::table_pages(int replica_node) const {
    auto it = replica_roots_.find(replica_node);
    if (it == replica_roots_.end()) return 0;
    std::vector<TableId> all;
    collect(it->second, all);
    return all.size();
}

std::size_t ReplicatedAddressSpace::live_table_pages() const {
    return tables_.size() - free_.size();
}

std::string ReplicatedAddressSpace::check_integrity() const {
    struct Info {
        Level level;
        Vpn base;
        int replica;
    };
    std::unordered_map<std::uint32_t, Info> info;
    std::size_t reachable = 0;
    for (const auto& [node, root] : replica_roots_) {
        // (table, level, base vpn) worklist
        std::vector<std::pair<TableId, Vpn>> stack{{root, 0}};
        while (!stack.empty()) {
            auto [id, base] = stack.back();
            stack.pop_back();
            const TablePage& t = tables_[id.value];
            if (!t.live) return "replica " + std::to_string(node) + " references a freed table";
            if (t.replica_node != node) return "table tagged with the wrong replica";
            info[id.value] = Info{t.level, base, node};
            ++reachable;
            if (t.level == Level::Pte) continue;
            const unsigned shift = bits_ * static_cast<unsigned>(kLevels - 1 - static_cast<int>(t.level));
            for (std::size_t i = 0; i < t.entries.size(); ++i)
                if (t.entries[i].present)
                    stack.push_back({TableId{static_cast<std::uint32_t>(t.entries[i].target)}, base + (Vpn{i} << shift)});
        }
    }
    if (reachable != live_table_pages()) return "leaked table pages";

    const std::size_t k = replica_roots_.size();
    for (const auto& [id, me] : info) {
        TableId cur{id};
        std::unordered_set<int> replicas;
        for (std::size_t step = 0; step < k; ++step) {
            const auto found = info.find(cur.value);
            if (found == info.end()) return "chain leaves the reachable tables";
            if (found->second.level != me.level || found->second.base != me.base)
                return "chain mixes tables of different level or range";
            if (!replicas.insert(found->second.replica).second) return "chain visits a replica twice";
            cur = tables_[cur.value].next_replica;
            if (step + 1 < k && cur.value == id) return "chain shorter than replica count";
        }
        if (cur.value != id) return "chain does not close after replica_count steps";
    }
    return {};
}

}  // namespace numasim
