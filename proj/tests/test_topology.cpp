#include <doctest.h>

#include <cmath>

#include "numasim/error.hpp"
#include "numasim/topology.hpp"

using namespace numasim;

namespace {

MachineConfig two_by_four() {
    MachineConfig m;
    m.nodes = 2;
    m.cores_per_node = 4;
    m.remote_factor = 1.3;
    return m;
}

// Independent reference for the latency formula.
double oracle_latency(double local, double factor, double u_node, double u_link, bool remote) {
    auto m = [](double u) { return u <= 0.6 ? 1.0 : std::min(4.0, 1.0 + 3.0 * (u - 0.6) / 0.4); };
    const double raw = local * factor * m(u_node) * (remote ? m(u_link) : 1.0);
    return std::floor(raw + 0.5);
}

}  // namespace

TEST_CASE("two nodes of four cores") {
    const Topology t = build_topology(two_by_four());
    CHECK(t.node_count() == 2);
    CHECK(t.core_count() == 8);
    int links = 0;
    for (int a = 0; a < 2; ++a)
        for (int b = 0; b < 2; ++b) {
            CHECK_NOTHROW(t.link(a, b));
            ++links;
        }
    CHECK(links == 4);
    CHECK(t.latency_factor(0, 1) == doctest::Approx(1.3));
    CHECK(t.latency_factor(1, 1) == 1.0);
    CHECK(t.node_of(0) == 0);
    CHECK(t.node_of(4) == 1);
    CHECK(t.cores_of(1) == std::vector<int>{4, 5, 6, 7});
    CHECK_FALSE(t.smt_sibling(0).has_value());
}

TEST_CASE("single node single core is all local") {
    MachineConfig m;
    m.nodes = 1;
    m.cores_per_node = 1;
    const Topology t = build_topology(m);
    CHECK(t.core_count() == 1);
    CHECK(access_latency(t, 0, 0) == 100);
    CHECK_THROWS_AS(fastest_neighbor(t, 0), TopologyError);
}

TEST_CASE("smt siblings pair adjacent logical cores") {
    MachineConfig m = two_by_four();
    m.smt = true;
    const Topology t = build_topology(m);
    CHECK(t.smt_sibling(0) == 1);
    CHECK(t.smt_sibling(1) == 0);
    CHECK(t.smt_sibling(6) == 7);
    m.cores_per_node = 3;
    CHECK_THROWS_AS(build_topology(m), ConfigError);
}

TEST_CASE("invalid machines are rejected") {
    MachineConfig m = two_by_four();
    m.nodes = 0;
    CHECK_THROWS_AS(build_topology(m), ConfigError);
    m = two_by_four();
    m.remote_factor = 0.9;
    CHECK_THROWS_AS(build_topology(m), ConfigError);
    m = two_by_four();
    m.remote_factors = {{1.0, 1.3}};
    CHECK_THROWS_AS(build_topology(m), ConfigError);
    m = two_by_four();
    m.remote_factors = {{1.0, 1.3}, {1.3, 1.1}};
    CHECK_THROWS_AS(build_topology(m), ConfigError);
}

TEST_CASE("access latency") {
    const Topology t = build_topology(two_by_four());
    CHECK(access_latency(t, 0, 0) == 100);
    CHECK(access_latency(t, 0, 1) == 130);

    ContentionState c(2, ContentionParams{});
    c.set_node_utilization(1, 0.9);
    // 100 * 1.3 * 3.25 = 422.5, rounded half up
    CHECK(access_latency(t, 0, 1, c) == 423);
    CHECK(access_latency(t, 0, 1, c) == static_cast<Cycles>(oracle_latency(100, 1.3, 0.9, 0.0, true)));
    c.set_link_utilization(0, 1, 0.8);
    CHECK(access_latency(t, 0, 1, c) == static_cast<Cycles>(oracle_latency(100, 1.3, 0.9, 0.8, true)));
    // The link does not matter for local accesses.
    c.set_node_utilization(0, 0.7);
    CHECK(access_latency(t, 0, 0, c) == static_cast<Cycles>(oracle_latency(100, 1.0, 0.7, 0.0, false)));
}

TEST_CASE("latency properties over random machines") {
    std::uint64_t s = 0x9e3779b97f4a7c15ull;
    auto next = [&] {
        s ^= s << 13;
        s ^= s >> 7;
        s ^= s << 17;
        return s;
    };
    for (int trial = 0; trial < 200; ++trial) {
        MachineConfig m;
        m.nodes = 2 + static_cast<int>(next() % 3);
        m.cores_per_node = 1 + static_cast<int>(next() % 4);
        m.local_latency = 50 + next() % 200;
        m.remote_factors.assign(static_cast<std::size_t>(m.nodes), std::vector<double>(static_cast<std::size_t>(m.nodes), 1.0));
        for (int a = 0; a < m.nodes; ++a)
            for (int b = 0; b < m.nodes; ++b)
                if (a != b) m.remote_factors[a][b] = 1.0 + static_cast<double>(next() % 60) / 100.0;
        const Topology t = build_topology(m);
        for (int a = 0; a < m.nodes; ++a) {
            const int nb = fastest_neighbor(t, a);
            CHECK(nb != a);
            for (int b = 0; b < m.nodes; ++b) {
                CHECK(access_latency(t, a, b) >= access_latency(t, a, a));
                if (b != a) CHECK(t.latency_factor(a, nb) <= t.latency_factor(a, b));
                Cycles prev = 0;
                for (int step = 0; step <= 10; ++step) {
                    ContentionState c(static_cast<std::size_t>(m.nodes), ContentionParams{});
                    c.set_node_utilization(b, step / 10.0);
                    const Cycles lat = access_latency(t, a, b, c);
                    CHECK(lat >= prev);
                    prev = lat;
                }
            }
        }
    }
}

TEST_CASE("fastest neighbor") {
    MachineConfig m;
    m.nodes = 4;
    m.cores_per_node = 1;
    m.remote_factors = {{1.0, 1.3, 1.5, 1.5}, {1.3, 1.0, 1.3, 1.5}, {1.5, 1.3, 1.0, 1.3}, {1.5, 1.5, 1.3, 1.0}};
    const Topology t = build_topology(m);
    // Hand-enumerated argmin of each row, lowest id on ties.
    CHECK(fastest_neighbor(t, 0) == 1);
    CHECK(fastest_neighbor(t, 1) == 0);
    CHECK(fastest_neighbor(t, 2) == 1);
    CHECK(fastest_neighbor(t, 3) == 2);

    CHECK(fastest_neighbor(build_topology(two_by_four()), 0) == 1);

    m.remote_factors = {{1.0, 1.3, 1.3, 1.5}, {1.3, 1.0, 1.3, 1.3}, {1.3, 1.3, 1.0, 1.3}, {1.5, 1.3, 1.3, 1.0}};
    CHECK(fastest_neighbor(build_topology(m), 0) == 1);
}

TEST_CASE("contention multiplier curve") {
    const ContentionParams p;
    CHECK(contention_multiplier(p, 0.0) == 1.0);
    CHECK(contention_multiplier(p, 0.6) == 1.0);
    CHECK(contention_multiplier(p, 0.9) == doctest::Approx(3.25));
    CHECK(contention_multiplier(p, 1.0) == doctest::Approx(4.0));
    CHECK(ContentionState::none().node_multiplier(3) == 1.0);
}
