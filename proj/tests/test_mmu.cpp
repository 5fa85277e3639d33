#include <doctest.h>

#include <map>
#include <random>

#include "numasim/mmu.hpp"

using namespace numasim;

namespace {

Topology machine(int nodes, double factor = 1.3, bool smt = false) {
    MachineConfig m;
    m.nodes = nodes;
    m.cores_per_node = 4;
    m.remote_factor = factor;
    m.smt = smt;
    return build_topology(m);
}

}  // namespace

TEST_CASE("tlb lru") {
    TlbState tlb(0, 4);
    tlb.insert(1, TlbEntry{10, 0});
    CHECK(tlb.lookup(1).has_value());
    CHECK(tlb.lookup(1)->pfn == 10);
    CHECK_FALSE(tlb.lookup(2).has_value());

    TlbState small(0, 4);
    for (std::uint64_t k = 1; k <= 5; ++k) small.insert(k, TlbEntry{k, 0});
    CHECK_FALSE(small.lookup(1).has_value());
    for (std::uint64_t k = 2; k <= 5; ++k) CHECK(small.lookup(k).has_value());

    // a hit refreshes recency
    TlbState r(0, 4);
    for (std::uint64_t k = 1; k <= 4; ++k) r.insert(k, TlbEntry{k, 0});
    CHECK(r.lookup(1).has_value());
    r.insert(5, TlbEntry{5, 0});
    CHECK(r.lookup(1).has_value());
    CHECK_FALSE(r.lookup(2).has_value());
}

TEST_CASE("partition halves the tlb") {
    TlbState shared(0, 8);
    shared.set_partition(true);
    TlbState four(1, 4);
    CHECK(shared.effective_capacity() == 4);
    // Same trace, same hits as a 4-entry TLB.
    std::mt19937_64 rng(7);
    int hits_a = 0, hits_b = 0;
    for (int i = 0; i < 5000; ++i) {
        const std::uint64_t k = rng() % 9;
        if (shared.lookup(k)) ++hits_a;
        else shared.insert(k, TlbEntry{k, 0});
        if (four.lookup(k)) ++hits_b;
        else four.insert(k, TlbEntry{k, 0});
    }
    CHECK(hits_a == hits_b);
    shared.set_partition(false);
    CHECK(shared.effective_capacity() == 8);
}

TEST_CASE("walk costs") {
    const Topology t = machine(2);
    Mmu mmu(t);
    auto local = create_address_space(t, 0, 0, AllocPolicy::HomeNode);
    local.map_page(77, 5, 0, 0);

    SUBCASE("cold local walk") {
        const WalkResult w = mmu.page_walk(local, 77, 0);
        CHECK(w.mapped);
        CHECK(w.cycles == 400);
        CHECK(w.mem_accesses == 4);
        CHECK(w.remote_accesses == 0);
    }
    SUBCASE("warm pwc leaves one access") {
        mmu.page_walk(local, 77, 0);
        mmu.tlb(0).invalidate(tlb_key(0, 77));
        const WalkResult w = mmu.page_walk(local, 77, 0);
        CHECK(w.mem_accesses == 1);
        CHECK(w.cycles == 100);
    }
    SUBCASE("cold remote walk") {
        const int remote_core = t.cores_of(1).front();
        const WalkResult w = mmu.page_walk(local, 77, remote_core);
        CHECK(w.cycles == 520);
        CHECK(w.remote_accesses == 4);
        CHECK(w.mem_accesses == 4);
    }
    SUBCASE("a local replica removes remote accesses") {
        local.add_replica(1);
        const WalkResult w = mmu.page_walk(local, 77, t.cores_of(1).front());
        CHECK(w.remote_accesses == 0);
        CHECK(w.cycles == 400);
    }
    SUBCASE("unmapped vpn faults") {
        const WalkResult w = mmu.page_walk(local, 78, 0);
        CHECK_FALSE(w.mapped);
        CHECK(w.mem_accesses == 4);
    }
}

TEST_CASE("shootdown cost") {
    const Topology t = machine(2);
    MmuConfig cfg;
    cfg.ipi_base_cycles = 50;
    Mmu mmu(t, cfg);
    CHECK(mmu.tlb_shootdown(0, 1, 9, 0, {}) == 0);
    const std::vector<int> local{1, 2};
    CHECK(mmu.tlb_shootdown(0, 1, 9, 0, local) == 100);
    const std::vector<int> remote{4, 5};
    CHECK(mmu.tlb_shootdown(0, 1, 9, 0, remote) >= mmu.tlb_shootdown(0, 1, 9, 0, local));
    CHECK(mmu.ipi_cost(0, remote) == 130);

    mmu.tlb(1).insert(tlb_key(3, 1), TlbEntry{1, 0});
    mmu.tlb_shootdown(3, 1, 9, 0, local);
    CHECK_FALSE(mmu.tlb_lookup(1, 3, 1).has_value());
}

TEST_CASE("tlbs are tagged by process") {
    const Topology t = machine(1);
    Mmu mmu(t);
    auto a = create_address_space(t, 0, 0, AllocPolicy::FirstTouch);
    auto b = create_address_space(t, 1, 0, AllocPolicy::FirstTouch);
    a.map_page(1, 10, 0, 0);
    b.map_page(1, 20, 0, 0);
    CHECK(mmu.translate(a, 1, 0).pfn == 10);
    CHECK(mmu.translate(b, 1, 0).pfn == 20);
    CHECK(mmu.translate(a, 1, 0).tlb_hit);
    CHECK(mmu.translate(a, 1, 0).pfn == 10);
}

TEST_CASE("property: mmu translation equals the page table, mem accesses bounded") {
    const Topology t = machine(2);
    std::mt19937_64 rng(99);
    for (int trial = 0; trial < 5; ++trial) {
        Mmu mmu(t);
        auto s = create_address_space(t, 0, 0, AllocPolicy::FirstTouch);
        std::map<Vpn, Pfn> oracle;
        for (int step = 0; step < 20000; ++step) {
            const Vpn v = rng() % 4096;
            const int core = static_cast<int>(rng() % static_cast<std::uint64_t>(t.core_count()));
            const int op = static_cast<int>(rng() % 10);
            if (op == 0 && !oracle.count(v)) {
                s.map_page(v, v + 1000 * (step + 1), 0, core);
                oracle[v] = v + 1000 * (step + 1);
            } else if (op == 1 && oracle.count(v)) {
                s.unmap_page(v, core);
                for (int c = 0; c < t.core_count(); ++c) mmu.invalidate_local(c, 0, v, s.index_bits());
                oracle.erase(v);
            } else {
                const AccessResult r = mmu.translate(s, v, core);
                REQUIRE(r.mapped == (oracle.count(v) == 1));
                if (r.mapped) CHECK(r.pfn == oracle[v]);
                if (!r.tlb_hit && r.walk.mapped) {
                    CHECK(r.walk.mem_accesses >= 1);
                    CHECK(r.walk.mem_accesses <= 4);
                }
            }
        }
    }
}

TEST_CASE("uniform random walks average at most 2.5 memory accesses") {
    const Topology t = machine(1);
    Mmu mmu(t);
    auto s = create_address_space(t, 0, 0, AllocPolicy::FirstTouch);
    const Vpn footprint = 1 << 18;
    for (Vpn v = 0; v < footprint; ++v) s.map_page(v, v, 0, 0);
    std::mt19937_64 rng(3);
    std::uint64_t walks = 0, accesses = 0;
    for (int i = 0; i < 200000; ++i) {
        const AccessResult r = mmu.translate(s, rng() % footprint, 0);
        if (!r.tlb_hit) {
            ++walks;
            accesses += static_cast<std::uint64_t>(r.walk.mem_accesses);
        }
    }
    const double avg = static_cast<double>(accesses) / static_cast<double>(walks);
    CHECK(avg >= 1.0);
    CHECK(avg <= 2.5);
}
