#include <doctest.h>

#include <algorithm>
#include <map>

#include "numasim/engine.hpp"
#include "numasim/error.hpp"

using namespace numasim;

namespace {

WorkloadInstance inst(const std::string& preset_name, int threads, std::uint64_t accesses = 2000) {
    WorkloadInstance w;
    w.spec = preset(preset_name);
    w.spec.thread_count = threads;
    w.spec.accesses_per_quantum_per_thread = accesses;
    return w;
}

Scenario small(PolicyKind k, int quanta = 20) {
    Scenario s;
    s.machine.nodes = 2;
    s.machine.cores_per_node = 4;
    s.policy.kind = k;
    s.duration_quanta = quanta;
    s.seed = 9;
    return s;
}

// A single pinned thread touching one prefaulted page, every access an LLC miss.
Scenario one_page(int accesses) {
    Scenario s = small(PolicyKind::Linux, 2);
    WorkloadInstance w;
    w.spec.name = "probe";
    w.spec.footprint_pages = 1;
    w.spec.pattern = Pattern::Sequential;
    w.spec.llc_miss_probability = 1.0;
    w.spec.accesses_per_quantum_per_thread = static_cast<std::uint64_t>(accesses);
    w.pin_cores = {0};
    w.prefault = true;
    s.workloads.push_back(w);
    s.timeseries = true;
    return s;
}

}  // namespace

TEST_CASE("empty scenario") {
    Scenario s = small(PolicyKind::Linux, 5);
    const MetricsReport r = run_scenario(s);
    CHECK(r.task_rows().empty());
    CHECK(r.total().total_cycles == 0);
    CHECK(r.total().bandwidth_bytes == 0);
    CHECK(r.events.empty());
}

TEST_CASE("tlb hit accesses cost one cycle plus the local miss") {
    const MetricsReport r = run_scenario(one_page(10));
    const auto it = std::find_if(r.timeseries.begin(), r.timeseries.end(),
                                 [](const TimeseriesPoint& p) { return p.quantum == 1; });
    REQUIRE(it != r.timeseries.end());
    const Cycles per_access = 1 + MachineConfig{}.local_latency;
    CHECK(it->delta.total_cycles == 10 * per_access);
    CHECK(it->delta.dtlb_misses == 0);
    CHECK(it->delta.pagewalk_cycles == 0);
    CHECK(it->delta.bandwidth_bytes == 10 * 64);
}

TEST_CASE("determinism") {
    Scenario s = small(PolicyKind::Phoenix);
    s.workloads.push_back(inst("gups_like", 6));
    s.workloads.push_back(inst("stream_like", 2));
    s.timeseries = true;
    const MetricsReport a = run_scenario(s);
    const MetricsReport b = run_scenario(s);
    CHECK(a.rows == b.rows);
    CHECK(a.events == b.events);
    CHECK(a.timeseries == b.timeseries);
    s.seed = 10;
    CHECK_FALSE(run_scenario(s).rows == a.rows);
}

TEST_CASE("batch parallel equals serial") {
    std::vector<Scenario> batch;
    for (auto k : {PolicyKind::Linux, PolicyKind::Mitosis, PolicyKind::Phoenix}) {
        Scenario s = small(k, 10);
        s.workloads.push_back(inst("btree_like", 4));
        batch.push_back(s);
    }
    const auto serial = run_batch_serial(batch);
    const auto parallel = run_batch_parallel(batch);
    REQUIRE(serial.size() == parallel.size());
    for (std::size_t i = 0; i < serial.size(); ++i) {
        CHECK(serial[i].rows == parallel[i].rows);
        CHECK(serial[i].events == parallel[i].events);
    }
}

TEST_CASE("vm ops cost more with more replicas") {
    auto run = [](int replicas) {
        Scenario s = small(PolicyKind::Mitosis, 10);
        s.policy.mitosis_replicas = replicas;
        auto w = inst("webserver_like", 2);
        w.pin_cores = {0, 1};
        s.workloads.push_back(w);
        return run_scenario(s).total();
    };
    const auto one = run(1);
    const auto two = run(2);
    CHECK(one.replica_count == 1);
    CHECK(two.replica_count == 2);
    CHECK(two.replica_update_cycles > one.replica_update_cycles);
}

TEST_CASE("mitosis replicates on every node") {
    Scenario s = small(PolicyKind::Mitosis, 3);
    s.machine.nodes = 4;
    s.workloads.push_back(inst("gups_like", 2));
    const MetricsReport r = run_scenario(s);
    REQUIRE(r.processes.size() == 1);
    CHECK(r.processes[0].replica_count == 4);
    CHECK(r.processes[0].replica_nodes == std::vector<int>{0, 1, 2, 3});
}

TEST_CASE("compute contention") {
    MachineConfig m;
    m.nodes = 2;
    m.cores_per_node = 1;
    m.node_bandwidth = 10.0;
    const Topology t = build_topology(m);
    EpochTraffic tr(2);
    tr.node_bytes = {800, 2000};
    const ContentionState c = compute_contention(t, tr, 100, ContentionParams{});
    CHECK(c.node_utilization(0) == doctest::Approx(0.8));
    CHECK(c.node_utilization(1) == doctest::Approx(1.0));
    CHECK(c.node_multiplier(0) == doctest::Approx(2.5));
    CHECK(c.node_multiplier(1) == doctest::Approx(4.0));
}

TEST_CASE("phoenix keeps tasks inside their allowed nodes") {
    Scenario s = small(PolicyKind::Phoenix, 30);
    s.workloads.push_back(inst("gups_like", 6));
    s.workloads.push_back(inst("btree_like", 3));
    Simulation sim(s);
    while (!sim.done()) {
        sim.step_quantum();
        for (const auto& t : sim.tasks()) {
            if (!t.active) continue;
            CHECK(std::count(t.allowed_nodes.begin(), t.allowed_nodes.end(), t.node) == 1);
        }
    }
}

TEST_CASE("task bandwidth adds up to node bandwidth") {
    for (auto k : {PolicyKind::Linux, PolicyKind::Mitosis, PolicyKind::Phoenix}) {
        Scenario s = small(k, 15);
        s.workloads.push_back(inst("gups_like", 5));
        s.workloads.push_back(inst("stream_like", 3));
        const MetricsReport r = run_scenario(s);
        std::uint64_t tasks = 0, nodes = 0;
        for (const auto* row : r.task_rows()) tasks += row->bandwidth_bytes;
        for (int n = 0; n < 2; ++n) nodes += r.node(n).bandwidth_bytes;
        CHECK(tasks == nodes);
        CHECK(r.total().bandwidth_bytes == tasks);
    }
}

TEST_CASE("mba caps lower the antagonist's traffic") {
    auto traffic = [](bool mba) {
        Scenario s = small(PolicyKind::Phoenix, 40);
        s.machine.node_bandwidth = 2.0;
        auto victim = inst("gups_like", 4);
        victim.pin_cores = {0, 1, 2, 3};
        victim.prefault = true;
        auto hog = inst("stream_like", 4);
        hog.pin_cores = {0, 1, 2, 3};
        s.workloads = {victim, hog};
        s.policy.mba = mba;
        const MetricsReport r = run_scenario(s);
        std::uint64_t b = 0;
        for (const auto* row : r.task_rows())
            if (row->process == "stream_like") b += row->bandwidth_bytes;
        return std::make_pair(b, r.count_events("throttle"));
    };
    const auto on = traffic(true);
    const auto off = traffic(false);
    CHECK(on.second > 0);
    CHECK(off.second == 0);
    CHECK(on.first < off.first);
}

TEST_CASE("more antagonist threads never speed up the victim") {
    Cycles prev = 0;
    for (int hog = 0; hog <= 4; hog += 2) {
        Scenario s = small(PolicyKind::Linux, 15);
        s.machine.node_bandwidth = 2.0;
        auto victim = inst("gups_like", 2);
        victim.pin_cores = {0, 1};
        victim.prefault = true;
        s.workloads.push_back(victim);
        if (hog > 0) {
            auto h = inst("stream_like", hog);
            for (int i = 0; i < hog; ++i) h.pin_cores.push_back(2 + (i % 2));
            s.workloads.push_back(h);
        }
        const MetricsReport r = run_scenario(s);
        Cycles v = 0;
        for (const auto* row : r.task_rows())
            if (row->process == "gups_like") v += row->total_cycles;
        CHECK(v >= prev);
        prev = v;
    }
}

TEST_CASE("exit tears down the address space") {
    Scenario s = small(PolicyKind::Linux, 6);
    auto w = inst("gups_like", 2);
    w.stop_quantum = 3;
    s.workloads.push_back(w);
    Simulation sim(s);
    sim.step_quantum();
    CHECK(sim.address_space(0) != nullptr);
    while (sim.quantum() < 4) sim.step_quantum();
    CHECK(sim.address_space(0) == nullptr);
    for (const auto& t : sim.tasks()) CHECK_FALSE(t.active);
}

TEST_CASE("late start") {
    Scenario s = small(PolicyKind::Linux, 6);
    auto w = inst("gups_like", 1);
    w.start_quantum = 4;
    s.workloads.push_back(w);
    s.timeseries = true;
    const MetricsReport r = run_scenario(s);
    for (const auto& p : r.timeseries)
        if (p.quantum < 4) CHECK(p.delta.total_cycles == 0);
    CHECK(r.total().total_cycles > 0);
}

TEST_CASE("phoenix is no slower than linux on a walk-heavy workload") {
    Scenario s = small(PolicyKind::Linux, 40);
    s.workloads.push_back(inst("gups_like", 6));
    const Cycles linux_total = run_scenario(s).total().total_cycles;
    s.policy.kind = PolicyKind::Phoenix;
    const Cycles phoenix_total = run_scenario(s).total().total_cycles;
    CHECK(phoenix_total <= linux_total);
}

TEST_CASE("scenario validation") {
    Scenario s = small(PolicyKind::Linux);
    s.duration_quanta = 0;
    CHECK_THROWS_AS(s.validate(), ConfigError);
    s = small(PolicyKind::Linux);
    auto w = inst("gups_like", 2);
    w.pin_cores = {0};
    s.workloads.push_back(w);
    CHECK_THROWS_AS(s.validate(), ConfigError);
    s.workloads[0].pin_cores = {0, 99};
    CHECK_THROWS_AS(s.validate(), ConfigError);
    s.workloads[0].pin_cores = {0, 1};
    CHECK_NOTHROW(s.validate());
}
