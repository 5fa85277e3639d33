#include <doctest.h>

#include <map>
#include <set>

#include "numasim/error.hpp"
#include "numasim/pagetable.hpp"

using namespace numasim;

namespace {

Topology machine(int nodes, double factor = 1.3) {
    MachineConfig m;
    m.nodes = nodes;
    m.cores_per_node = 2;
    m.remote_factor = factor;
    return build_topology(m);
}

int core_on(const Topology& t, int node) { return t.cores_of(node).front(); }

// Counts reachable table pages by walking raw table entries.
std::size_t count_tree(const ReplicatedAddressSpace& s, TableId root) {
    const TablePage& p = s.table(root);
    std::size_t n = 1;
    if (p.level == Level::Pte) return n;
    for (const auto& e : p.entries)
        if (e.present) n += count_tree(s, TableId{static_cast<std::uint32_t>(e.target)});
    return n;
}

}  // namespace

TEST_CASE("table placement policies") {
    const Topology t = machine(2);
    SUBCASE("home node keeps every level on home") {
        auto s = create_address_space(t, 0, 1, AllocPolicy::HomeNode);
        s.map_page(5, 100, 0, core_on(t, 0));
        const Translation tr = s.translate(5, 0);
        REQUIRE(tr.touch_count == 4);
        for (const auto& touch : tr.tables_touched()) CHECK(touch.resident_node == 1);
    }
    SUBCASE("interleave alternates nodes") {
        auto s = create_address_space(t, 0, 0, AllocPolicy::Interleave);
        s.map_page(5, 100, 0, core_on(t, 0));
        const Translation tr = s.translate(5, 0);
        REQUIRE(tr.touch_count == 4);
        CHECK(tr.touches[0].resident_node == 0);
        CHECK(tr.touches[1].resident_node == 1);
        CHECK(tr.touches[2].resident_node == 0);
        CHECK(tr.touches[3].resident_node == 1);
    }
    SUBCASE("first touch follows the requester") {
        auto s = create_address_space(t, 0, 0, AllocPolicy::FirstTouch);
        s.map_page(5, 100, 0, core_on(t, 0));
        for (const auto& touch : s.translate(5, 0).tables_touched()) CHECK(touch.resident_node == 0);
    }
}

TEST_CASE("map cost") {
    const Topology t = machine(4);
    SUBCASE("one replica with tables present costs one local write") {
        auto s = create_address_space(t, 0, 0, AllocPolicy::FirstTouch);
        s.map_page(0, 1, 0, core_on(t, 0));
        const PtOpCost c = s.map_page(1, 2, 0, core_on(t, 0));
        CHECK(c.writes_performed == 1);
        CHECK(c.cycles == 100);
    }
    SUBCASE("four replicas write every copy") {
        auto s = create_address_space(t, 0, 0, AllocPolicy::FirstTouch);
        s.map_page(0, 1, 0, core_on(t, 0));
        for (int n = 1; n < 4; ++n) s.add_replica(n);
        const PtOpCost c = s.map_page(1, 2, 0, core_on(t, 0));
        CHECK(c.writes_performed == 4);
        CHECK(c.cycles == access_latency(t, 0, 0) + access_latency(t, 0, 1) + access_latency(t, 0, 2) +
                              access_latency(t, 0, 3));
        CHECK(c.cycles == 490);
        for (int n = 0; n < 4; ++n) {
            const Translation tr = s.translate(1, n);
            CHECK(tr.mapped);
            CHECK(tr.pfn == 2);
        }
    }
    SUBCASE("mapping twice is an error") {
        auto s = create_address_space(t, 0, 0, AllocPolicy::FirstTouch);
        s.map_page(9, 1, 0, 0);
        CHECK_THROWS_AS(s.map_page(9, 2, 0, 0), PageTableError);
        CHECK_THROWS_AS(s.map_page(s.vpn_limit(), 2, 0, 0), PageTableError);
    }
}

TEST_CASE("unmap") {
    const Topology t = machine(4);
    Cycles prev = 0;
    for (int replicas = 1; replicas <= 4; ++replicas) {
        auto s = create_address_space(t, 0, 0, AllocPolicy::FirstTouch);
        int shootdowns = 0;
        s.set_shootdown_handler([&](Vpn, int) {
            ++shootdowns;
            return Cycles{50};
        });
        s.map_page(3, 7, 0, 0);
        for (int n = 1; n < replicas; ++n) s.add_replica(n);
        const PtOpCost c = s.unmap_page(3, 0);
        CHECK(c.writes_performed == static_cast<std::uint64_t>(replicas));
        CHECK(shootdowns == 1);
        CHECK(c.shootdown_cycles == 50);
        CHECK(c.cycles > prev);
        prev = c.cycles;
        for (int n = 0; n < 4; ++n) CHECK_FALSE(s.translate(3, n).mapped);
        CHECK_THROWS_AS(s.unmap_page(3, 0), PageTableError);
    }
}

TEST_CASE("protect range") {
    const Topology t = machine(2);
    auto one = create_address_space(t, 0, 0, AllocPolicy::FirstTouch);
    auto two = create_address_space(t, 0, 0, AllocPolicy::FirstTouch);
    for (Vpn v = 0; v < 1000; ++v) {
        one.map_page(v, v, 0, 0);
        two.map_page(v, v, 0, 0);
    }
    two.add_replica(1);
    CHECK(one.protect_range(0, 1, 0x1, 0).writes_performed == 1);
    const PtOpCost c2 = two.protect_range(0, 1000, 0x1, 0);
    CHECK(c2.writes_performed == 2000);
    CHECK(c2.cycles > one.protect_range(0, 1000, 0x1, 0).cycles);
    CHECK(two.translate(999, 1).prot == 0x1);
    // all-or-nothing
    two.unmap_page(500, 0);
    CHECK_THROWS_AS(two.protect_range(0, 1000, 0x3, 0), PageTableError);
    CHECK(two.translate(0, 0).prot == 0x1);
}

TEST_CASE("add and drop replica") {
    const Topology t = machine(2);
    SUBCASE("empty space copies its PGD") {
        auto s = create_address_space(t, 0, 0, AllocPolicy::FirstTouch);
        const PtOpCost c = s.add_replica(1);
        CHECK(c.pages_copied == 1);
        CHECK(s.replica_count() == 2);
        CHECK(s.check_integrity().empty());
    }
    SUBCASE("copies exactly the tree and closes every chain") {
        auto s = create_address_space(t, 0, 0, AllocPolicy::FirstTouch, 8);
        for (Vpn v = 0; v < 4096; v += 37) s.map_page(v, v + 1, 0, 0);
        const std::size_t pages = count_tree(s, s.replica_root_for(0));
        CHECK(pages == s.table_pages(0));
        const PtOpCost c = s.add_replica(1);
        CHECK(c.pages_copied == pages);
        CHECK(s.table_pages(1) == pages);
        CHECK(s.check_integrity().empty());
        for (Vpn v = 0; v < 4096; v += 37) {
            const Translation tr = s.translate(v, 1);
            CHECK(tr.pfn == v + 1);
            for (const auto& touch : tr.tables_touched()) CHECK(touch.resident_node == 1);
        }
        s.drop_replica(1);
        CHECK(s.replica_count() == 1);
        CHECK(s.check_integrity().empty());
        for (Vpn v = 0; v < 4096; v += 37) CHECK(s.translate(v, 1).pfn == v + 1);
        CHECK_THROWS_AS(s.drop_replica(1), PageTableError);
        CHECK_THROWS_AS(s.drop_replica(0), PageTableError);
        s.add_replica(1);
        CHECK_THROWS_AS(s.add_replica(1), PageTableError);
    }
}

TEST_CASE("migrate tables") {
    const Topology t = machine(2);
    auto s = create_address_space(t, 0, 0, AllocPolicy::FirstTouch, 8);
    std::map<Vpn, Pfn> oracle;
    for (Vpn v = 0; v < 500; v += 3) {
        s.map_page(v, 1000 + v, 0, 0);
        oracle[v] = 1000 + v;
    }
    const std::size_t pages = s.table_pages(0);
    const PtOpCost c = s.migrate_tables(0, 1);
    CHECK(s.replica_nodes() == std::vector<int>{1});
    CHECK(s.home_node() == 1);
    CHECK(c.pgd_exempt);
    CHECK(c.pages_copied == pages - 1);
    CHECK(s.replica_root_for(0) == s.replica_root_for(1));
    CHECK(s.check_integrity().empty());
    for (Vpn v = 0; v < 500; ++v) {
        const Translation tr = s.translate(v, 0);
        CHECK(tr.mapped == (oracle.count(v) == 1));
        if (tr.mapped) CHECK(tr.pfn == oracle[v]);
    }
    for (const auto& touch : s.translate(3, 1).tables_touched()) CHECK(touch.resident_node == 1);
}

TEST_CASE("translate locality") {
    const Topology t = machine(2);
    auto s = create_address_space(t, 0, 1, AllocPolicy::HomeNode);
    s.map_page(42, 9, 1, core_on(t, 1));
    for (const auto& touch : s.translate(42, 0).tables_touched()) CHECK(touch.resident_node == 1);
    CHECK(s.replica_root_for(0) == s.replica_root_for(1));
    s.add_replica(0);
    CHECK_FALSE(s.replica_root_for(0) == s.replica_root_for(1));
    for (const auto& touch : s.translate(42, 0).tables_touched()) CHECK(touch.resident_node == 0);
    CHECK(s.translate(42, 0).pfn == 9);
}

TEST_CASE("remap moves frames") {
    const Topology t = machine(2);
    auto s = create_address_space(t, 0, 0, AllocPolicy::FirstTouch);
    for (Vpn v = 10; v < 14; ++v) s.map_page(v, v * 2, 0, 0, ContentionState::none(), 0x1);
    s.add_replica(1);
    s.remap_range(10, 4, 12, 0);
    CHECK_FALSE(s.lookup(10).has_value());
    CHECK_FALSE(s.lookup(11).has_value());
    for (Vpn v = 12; v < 16; ++v) {
        CHECK(s.translate(v, 1).pfn == (v - 2) * 2);
        CHECK(s.translate(v, 1).prot == 0x1);
    }
    CHECK(s.check_integrity().empty());
}

TEST_CASE("lock serialization") {
    const Topology t = machine(2);
    SUBCASE("queued ops from different cores wait on the same leaf") {
        auto s = create_address_space(t, 0, 0, AllocPolicy::FirstTouch);
        s.map_page(0, 1, 0, 0);
        s.begin_quantum();
        const PtOpCost a = s.map_page(1, 2, 0, 0);
        const PtOpCost b = s.map_page(2, 3, 0, 1);
        CHECK(a.lock_wait_cycles == 0);
        CHECK(b.lock_wait_cycles == a.cycles);
        // same core never waits on itself
        const PtOpCost c = s.map_page(3, 4, 0, 1);
        CHECK(c.lock_wait_cycles == 0);
    }
    SUBCASE("a released lock costs nothing") {
        auto s = create_address_space(t, 0, 0, AllocPolicy::FirstTouch);
        s.map_page(0, 1, 0, 0);
        s.begin_quantum();
        const PtOpCost a = s.map_page(1, 2, 0, 0);
        s.set_clock(a.cycles);
        CHECK(s.map_page(2, 3, 0, 1).lock_wait_cycles == 0);
    }
    SUBCASE("global mode serializes different leaves") {
        AddressSpaceOptions o;
        o.lock = LockMode::Global;
        o.arity = 4;
        ReplicatedAddressSpace s(t, 0, 0, o);
        s.map_page(0, 1, 0, 0);
        s.map_page(200, 1, 0, 0);
        s.begin_quantum();
        const PtOpCost a = s.map_page(1, 2, 0, 0);
        CHECK(s.map_page(201, 3, 0, 1).lock_wait_cycles == a.cycles);
        ReplicatedAddressSpace p(t, 0, 0, AddressSpaceOptions{AllocPolicy::FirstTouch, LockMode::PerTable, 4});
        p.map_page(0, 1, 0, 0);
        p.map_page(200, 1, 0, 0);
        p.begin_quantum();
        p.map_page(1, 2, 0, 0);
        CHECK(p.map_page(201, 3, 0, 1).lock_wait_cycles == 0);
    }
}

TEST_CASE("data page migration rewrites every replica") {
    const Topology t = machine(4);
    auto s = create_address_space(t, 0, 0, AllocPolicy::FirstTouch);
    s.map_page(8, 1, 0, 0);
    for (int n = 1; n < 4; ++n) s.add_replica(n);
    const PtOpCost c = s.migrate_page(8, 77, 2, 0);
    CHECK(c.writes_performed == 4);
    for (int n = 0; n < 4; ++n) {
        CHECK(s.translate(8, n).pfn == 77);
        CHECK(s.translate(8, n).pfn_node == 2);
    }
}

TEST_CASE("property: random operation sequences agree with a flat map") {
    const Topology t = machine(4);
    std::uint64_t state = 12345;
    auto rnd = [&](std::uint64_t n) {
        state = state * 6364136223846793005ull + 1442695040888963407ull;
        return (state >> 33) % n;
    };
    for (int trial = 0; trial < 20; ++trial) {
        auto s = create_address_space(t, trial, static_cast<int>(rnd(4)), static_cast<AllocPolicy>(rnd(3)), 8);
        std::map<Vpn, std::pair<Pfn, std::uint32_t>> oracle;
        const Vpn space = 200;
        for (int step = 0; step < 400; ++step) {
            const int core = static_cast<int>(rnd(static_cast<std::uint64_t>(t.core_count())));
            const Vpn v = rnd(space);
            switch (rnd(7)) {
                case 0:
                case 1:
                    if (!oracle.count(v)) {
                        s.map_page(v, 5000 + v + step, 0, core);
                        oracle[v] = {5000 + v + step, kDefaultProt};
                    }
                    break;
                case 2:
                    if (oracle.count(v)) {
                        s.unmap_page(v, core);
                        oracle.erase(v);
                    }
                    break;
                case 3:
                    if (oracle.count(v)) {
                        s.protect_range(v, 1, 0x1, core);
                        oracle[v].second = 0x1;
                    }
                    break;
                case 4: {
                    const int n = static_cast<int>(rnd(4));
                    if (!s.has_replica(n)) s.add_replica(n);
                    break;
                }
                case 5: {
                    const int n = static_cast<int>(rnd(4));
                    if (s.has_replica(n) && s.replica_count() > 1) s.drop_replica(n);
                    break;
                }
                case 6:
                    if (oracle.count(v) && !oracle.count(v + space)) {
                        s.remap_range(v, 1, v + space, core);
                        oracle[v + space] = oracle[v];
                        oracle.erase(v);
                    }
                    break;
            }
            REQUIRE(s.check_integrity().empty());
            CHECK(s.mappings_count() == oracle.size());
        }
        for (int n = 0; n < 4; ++n)
            for (Vpn v = 0; v < 2 * space; ++v) {
                const Translation tr = s.translate(v, n);
                const auto it = oracle.find(v);
                REQUIRE(tr.mapped == (it != oracle.end()));
                if (tr.mapped) {
                    CHECK(tr.pfn == it->second.first);
                    CHECK(tr.prot == it->second.second);
                }
            }
    }
}

TEST_CASE("property: unmap and protect cost grows with replicas") {
    const Topology t = machine(4);
    for (std::uint64_t count : {1u, 7u, 64u}) {
        Cycles prev_unmap = 0, prev_protect = 0;
        for (int r = 1; r <= 4; ++r) {
            auto s = create_address_space(t, 0, 0, AllocPolicy::FirstTouch, 8);
            for (Vpn v = 0; v < count; ++v) s.map_page(v, v, 0, 0);
            for (int n = 1; n < r; ++n) s.add_replica(n);
            const Cycles p = s.protect_range(0, count, 0x1, 0).cycles;
            Cycles u = 0;
            for (Vpn v = 0; v < count; ++v) u += s.unmap_page(v, 0).cycles;
            CHECK(p > prev_protect);
            CHECK(u > prev_unmap);
            prev_protect = p;
            prev_unmap = u;
        }
    }
}
