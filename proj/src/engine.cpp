#include "numasim/engine.hpp"

#include <algorithm>
#include <bit>
#include <cmath>
#include <limits>
#include <map>
#include <queue>

#include "numasim/error.hpp"
#include "numasim/pagetable.hpp"

namespace numasim {

namespace {

std::uint64_t mix_seed(std::uint64_t seed, std::uint64_t salt) {
    std::uint64_t x = seed ^ (salt * 0x9e3779b97f4a7c15ULL);
    x = (x ^ (x >> 30)) * 0xbf58476d1ce4e5b9ULL;
    x = (x ^ (x >> 27)) * 0x94d049bb133111ebULL;
    return x ^ (x >> 31);
}

constexpr std::uint64_t kChunk = 16;

bool is_pow2(unsigned v) { return v && !(v & (v - 1)); }

const Scenario& validated(const Scenario& s) {
    s.validate();
    return s;
}

}  // namespace

void Scenario::validate() const {
    const Topology topo = build_topology(machine);
    policy.validate();
    if (duration_quanta < 1) throw ConfigError("run.duration must be >= 1");
    if (quantum_cycles < 1) throw ConfigError("run.quantum must be >= 1");
    if (!is_pow2(pt_arity) || pt_arity < 2 || pt_arity > 512)
        throw ConfigError("mmu.arity must be a power of two in [2, 512]");
    if (mmu.tlb_entries < 2) throw ConfigError("mmu.tlb_entries must be >= 2");
    for (auto e : mmu.pwc_entries)
        if (e < 2) throw ConfigError("mmu.pwc entries must be >= 2");
    if (!(contention.knee >= 0.0 && contention.knee < 1.0)) throw ConfigError("contention.knee must be in [0, 1)");
    if (!(contention.slope >= 0.0)) throw ConfigError("contention.slope must be >= 0");
    if (!(contention.max_multiplier >= 1.0)) throw ConfigError("contention.max_multiplier must be >= 1");
    if (costs.cacheline_bytes == 0 || costs.page_bytes == 0) throw ConfigError("cacheline and page sizes must be > 0");

    const unsigned bits = static_cast<unsigned>(std::countr_zero(pt_arity));
    const std::uint64_t vpn_limit = std::uint64_t{1} << (bits * kLevels);
    for (std::size_t i = 0; i < workloads.size(); ++i) {
        const auto& w = workloads[i];
        const std::string where = "workloads[" + std::to_string(i) + "] ('" + w.spec.name + "')";
        w.spec.validate();
        if (w.spec.name.find_first_of(",\n\"") != std::string::npos)
            throw ConfigError(where + ": name must not contain commas, quotes or newlines");
        if (w.start_quantum < 0) throw ConfigError(where + ": start must be >= 0");
        if (w.stop_quantum && *w.stop_quantum <= w.start_quantum) throw ConfigError(where + ": stop must be > start");
        if (!w.pin_cores.empty()) {
            if (static_cast<int>(w.pin_cores.size()) != w.spec.thread_count)
                throw ConfigError(where + ": pin list needs one core per thread");
            for (int c : w.pin_cores)
                if (c < 0 || c >= topo.core_count())
                    throw ConfigError(where + ": pinned core " + std::to_string(c) + " does not exist");
        }
        const std::uint64_t regions = w.spec.sharing == Sharing::Private ? static_cast<std::uint64_t>(w.spec.thread_count) : 1;
        if (w.spec.footprint_pages > vpn_limit / regions)
            throw ConfigError(where + ": footprint exceeds the virtual address range of the page table");
    }
}

ContentionState compute_contention(const Topology& topo, const EpochTraffic& traffic, Cycles quantum_cycles,
                                   const ContentionParams& params) {
    const int n = topo.node_count();
    ContentionState state(static_cast<std::size_t>(n), params);
    const double q = static_cast<double>(quantum_cycles);
    for (int i = 0; i < n; ++i) {
        const double cap = topo.node(i).bandwidth_capacity * q;
        const auto bytes = static_cast<double>(traffic.node_bytes.at(static_cast<std::size_t>(i)));
        state.set_node_utilization(i, cap > 0 ? std::clamp(bytes / cap, 0.0, 1.0) : (bytes > 0 ? 1.0 : 0.0));
        for (int j = 0; j < n; ++j) {
            if (i == j) continue;
            const double lcap = topo.link(i, j).bandwidth_capacity * q;
            const auto lb = static_cast<double>(traffic.link_bytes.at(static_cast<std::size_t>(i * n + j)));
            state.set_link_utilization(i, j, lcap > 0 ? std::clamp(lb / lcap, 0.0, 1.0) : (lb > 0 ? 1.0 : 0.0));
        }
    }
    return state;
}

// ---------------------------------------------------------------------------

namespace {

class FrameAllocator {
public:
    FrameAllocator(const Topology& topo) : topo_(&topo) {
        for (const auto& n : topo.nodes()) {
            capacity_.push_back(n.memory_capacity_pages);
            next_.push_back(0);
            free_.emplace_back();
        }
    }

    // Frame on `node`, or on the closest node with room.
    std::pair<Pfn, int> allocate(int node) {
        if (auto p = take(node)) return {*p, node};
        std::vector<int> order;
        for (int n = 0; n < topo_->node_count(); ++n)
            if (n != node) order.push_back(n);
        std::stable_sort(order.begin(), order.end(),
                         [&](int a, int b) { return topo_->latency_factor(node, a) < topo_->latency_factor(node, b); });
        for (int n : order)
            if (auto p = take(n)) return {*p, n};
        throw std::runtime_error("simulated machine is out of physical memory");
    }

    void release(Pfn pfn, int node) { free_[static_cast<std::size_t>(node)].push_back(pfn); }

private:
    std::optional<Pfn> take(int node) {
        auto& fl = free_[static_cast<std::size_t>(node)];
        if (!fl.empty()) {
            const Pfn p = fl.back();
            fl.pop_back();
            return p;
        }
        auto& next = next_[static_cast<std::size_t>(node)];
        if (next >= capacity_[static_cast<std::size_t>(node)]) return std::nullopt;
        return static_cast<Pfn>(node) * capacity_[static_cast<std::size_t>(node)] + next++;
    }

    const Topology* topo_;
    std::vector<std::uint64_t> capacity_;
    std::vector<std::uint64_t> next_;
    std::vector<std::vector<Pfn>> free_;
};

struct Process {
    int id = 0;
    const WorkloadInstance* inst = nullptr;
    std::unique_ptr<WorkloadGenerator> gen;
    std::unique_ptr<ReplicatedAddressSpace> space;
    std::unique_ptr<PageAccessStats> stats;
    std::vector<int> tasks;
    std::vector<char> cpumask;  // cores any thread has run on
    std::uint64_t seed = 0;
    bool started = false;
    bool exited = false;
    int last_throttle_quantum = std::numeric_limits<int>::min() / 2;
    // Shootdowns inside one VM op are batched into a single IPI round.
    bool batching = false;
    bool shootdown_pending = false;
    std::size_t final_replicas = 0;
    std::vector<int> final_replica_nodes;
};

struct Task {
    TaskState st;
    int proc = 0;
    bool active = false;
    Vpn region_base = 0;
    // Issue cursor: batch `gen_q` of this task's own quanta, next event `pos`.
    std::uint64_t entitled = 0;
    std::uint64_t gen_q = 0;
    std::uint64_t batch_q = std::numeric_limits<std::uint64_t>::max();
    std::size_t pos = 0;
    std::uint64_t accesses_done_in_batch = 0;
    std::vector<AccessEvent> batch;
    std::uint64_t budget = 0;  // accesses still to issue this quantum
    double llc_acc = 0.0;
    CounterSet c;
    CounterSet tick_base;
};

}  // namespace

struct Simulation::Impl {
    Scenario sc;
    Topology topo;
    Mmu mmu;
    FrameAllocator frames;
    SystemView view;
    std::vector<Process> procs;
    std::vector<Task> tasks;
    std::vector<CounterSet> node_counters;
    ContentionState contention;
    EpochTraffic epoch;
    EpochTraffic last_epoch;
    std::vector<PolicyEvent> events;
    std::vector<TimeseriesPoint> series;
    std::uint64_t cross_node_migrations = 0;
    int q = 0;
    // Per-core time within the current quantum, for lock timing.
    std::vector<Cycles> core_clock;
    Cycles chunk_clock = 0;
    Cycles chunk_total = 0;

    Cycles now(const Task& t) const { return chunk_clock + (t.c.total_cycles - chunk_total); }

    explicit Impl(const Scenario& s)
        : sc(validated(s)), topo(build_topology(s.machine)), mmu(topo, s.mmu), frames(topo),
          contention(static_cast<std::size_t>(topo.node_count()), s.contention),
          epoch(static_cast<std::size_t>(topo.node_count())), last_epoch(static_cast<std::size_t>(topo.node_count())) {
        view = SystemView::build(topo, std::vector<int>(static_cast<std::size_t>(topo.core_count()), 0));
        node_counters.resize(static_cast<std::size_t>(topo.node_count()));
        for (std::size_t i = 0; i < sc.workloads.size(); ++i) {
            Process p;
            p.id = static_cast<int>(i);
            p.inst = &sc.workloads[i];
            p.seed = mix_seed(sc.seed, i + 1);
            procs.push_back(std::move(p));
        }
    }

    // ---- traffic and charging ---------------------------------------------

    void traffic(Task& t, int from, int to, std::uint64_t bytes) {
        epoch.add(from, to, bytes);
        t.c.bandwidth_bytes += bytes;
        node_counters[static_cast<std::size_t>(to)].bandwidth_bytes += bytes;
    }

    void charge_walk(Task& t, const WalkResult& w) {
        t.c.total_cycles += w.cycles;
        t.c.pagewalk_cycles += w.cycles;
        t.c.stall_cycles += w.cycles;
        t.c.walk_accesses += static_cast<std::uint64_t>(w.mem_accesses);
        t.c.remote_walk_accesses += static_cast<std::uint64_t>(w.remote_accesses);
    }

    void charge_pt(Task& t, const PtOpCost& cost) {
        t.c.total_cycles += cost.cycles;
        t.c.replica_update_cycles += cost.write_cycles + cost.copy_cycles;
        t.c.stall_cycles += cost.write_cycles + cost.copy_cycles;
        t.c.shootdown_cycles += cost.shootdown_cycles;
    }

    std::vector<int> shootdown_targets(const Process& p, int initiator) const {
        std::vector<int> out;
        for (int c = 0; c < topo.core_count(); ++c)
            if (p.cpumask[static_cast<std::size_t>(c)] && c != initiator) out.push_back(c);
        return out;
    }

    // ---- process lifecycle ------------------------------------------------

    void start_process(Process& p) {
        const WorkloadInstance& w = *p.inst;
        p.started = true;
        p.gen = std::make_unique<WorkloadGenerator>(w.spec);
        p.cpumask.assign(static_cast<std::size_t>(topo.core_count()), 0);
        const std::uint64_t regions = w.spec.sharing == Sharing::Private ? static_cast<std::uint64_t>(w.spec.thread_count) : 1;
        p.stats = std::make_unique<PageAccessStats>(w.spec.footprint_pages * regions, topo.node_count());

        const int first_task = static_cast<int>(tasks.size());
        TaskState lead = on_fork(nullptr, ForkKind::Process, first_task, p.id, 0, sc.policy);
        if (!w.pin_cores.empty()) {
            lead.home_node = topo.node_of(w.pin_cores[0]);
            lead.allowed_nodes = {lead.home_node};
        } else {
            place_process(lead, sc.policy, view.nodes);
        }

        AddressSpaceOptions opts;
        opts.arity = sc.pt_arity;
        switch (sc.policy.kind) {
            case PolicyKind::Linux: opts.alloc = AllocPolicy::FirstTouch; opts.lock = LockMode::PerTable; break;
            case PolicyKind::Mitosis: opts.alloc = AllocPolicy::FirstTouch; opts.lock = LockMode::Global; break;
            case PolicyKind::Phoenix: opts.alloc = AllocPolicy::HomeNode; opts.lock = LockMode::PerTable; break;
        }
        p.space = std::make_unique<ReplicatedAddressSpace>(topo, p.id, lead.home_node, opts);
        Process* pp = &p;
        p.space->set_shootdown_handler([this, pp](Vpn vpn, int initiator) -> Cycles {
            const unsigned bits = pp->space->index_bits();
            mmu.invalidate_local(initiator, pp->id, vpn, bits);
            const auto targets = shootdown_targets(*pp, initiator);
            const Cycles cost = mmu.tlb_shootdown(pp->id, vpn, bits, initiator, targets);
            if (pp->batching) {
                pp->shootdown_pending = true;
                return 0;
            }
            return cost;
        });
        PtOpCost setup;
        if (sc.policy.kind == PolicyKind::Mitosis) {
            const int want = sc.policy.mitosis_replicas == 0 ? topo.node_count()
                                                               : std::min(sc.policy.mitosis_replicas, topo.node_count());
            for (int n = 0; n < topo.node_count() && static_cast<int>(p.space->replica_count()) < want; ++n)
                if (!p.space->has_replica(n)) setup += p.space->add_replica(n, contention);
        }

        for (int i = 0; i < w.spec.thread_count; ++i) {
            Task t;
            t.proc = p.id;
            t.active = true;
            t.region_base = w.spec.sharing == Sharing::Private ? static_cast<Vpn>(i) * w.spec.footprint_pages : 0;
            if (i == 0) {
                t.st = lead;
            } else {
                t.st = on_fork(&tasks[static_cast<std::size_t>(first_task)].st, ForkKind::Thread,
                               static_cast<int>(tasks.size()), p.id, i, sc.policy);
            }
            if (!w.pin_cores.empty()) {
                t.st.pinned = true;
                t.st.current_core = w.pin_cores[static_cast<std::size_t>(i)];
                const int n = topo.node_of(t.st.current_core);
                if (std::find(t.st.allowed_nodes.begin(), t.st.allowed_nodes.end(), n) == t.st.allowed_nodes.end())
                    t.st.allowed_nodes.push_back(n);
            } else {
                const ThreadPlacement pl = place_thread(t.st, sc.policy, view);
                t.st.current_core = pl.core;
                if (pl.expanded)
                    events.push_back({q, "expand", p.id, t.st.task_id, topo.node_of(pl.core), -1, 0.0});
            }
            // Threads share the lead's view of the allowed set.
            if (i > 0 && sc.policy.kind == PolicyKind::Phoenix) sync_allowed(p, t.st.allowed_nodes);
            view.add_task(t.st.current_core);
            p.tasks.push_back(t.st.task_id);
            if (i == 0) charge_pt(t, setup);
            tasks.push_back(std::move(t));
        }
        if (w.prefault) prefault(p);
    }

    void prefault(Process& p) {
        const WorkloadSpec& spec = p.inst->spec;
        const auto threads = static_cast<std::uint64_t>(spec.thread_count);
        for (std::uint64_t i = 0; i < threads; ++i) {
            const Task& t = tasks[static_cast<std::size_t>(p.tasks[static_cast<std::size_t>(i)])];
            const int core = t.st.current_core;
            const int node = topo.node_of(core);
            for (Vpn v = 0; v < spec.footprint_pages; ++v) {
                if (spec.sharing == Sharing::Shared && v % threads != i) continue;
                const auto [pfn, fnode] = frames.allocate(node);
                p.space->map_page(t.region_base + v, pfn, fnode, core);
            }
        }
        p.space->begin_quantum();
    }

    void sync_allowed(Process& p, const std::vector<int>& allowed) {
        for (int id : p.tasks) tasks[static_cast<std::size_t>(id)].st.allowed_nodes = allowed;
    }

    void stop_process(Process& p) {
        for (int id : p.tasks) {
            Task& t = tasks[static_cast<std::size_t>(id)];
            if (!t.active) continue;
            t.active = false;
            view.remove_task(t.st.current_core);
        }
        p.exited = true;
        p.final_replicas = p.space->replica_count();
        p.final_replica_nodes = p.space->replica_nodes();
        p.space.reset();
    }

    // ---- event dispatch ---------------------------------------------------

    void access(Task& t, Process& p, const AccessEvent& ev, int core, int node) {
        const Vpn vpn = t.region_base + ev.vpn;
        t.c.total_cycles += 1;
        int data_node;
        if (auto hit = mmu.tlb_lookup(core, p.id, vpn)) {
            t.c.total_cycles += sc.mmu.tlb_hit_cycles > 1 ? sc.mmu.tlb_hit_cycles - 1 : 0;
            ++t.c.tlb_hits;
            data_node = hit->pfn_node;
        } else {
            ++t.c.dtlb_misses;
            WalkResult w = mmu.page_walk(*p.space, vpn, core, contention);
            charge_walk(t, w);
            if (!w.mapped) {
                t.c.total_cycles += sc.costs.page_fault;
                const auto [pfn, fnode] = frames.allocate(node);
                p.space->set_clock(now(t));
                charge_pt(t, p.space->map_page(vpn, pfn, fnode, core, contention));
                w = mmu.page_walk(*p.space, vpn, core, contention);
                charge_walk(t, w);
            }
            data_node = w.pfn_node;
        }
        p.stats->record(vpn, node);

        t.llc_acc += p.inst->spec.llc_miss_probability;
        if (t.llc_acc >= 1.0 - 1e-12) {
            t.llc_acc -= 1.0;
            ++t.c.llc_misses;
            const Cycles lat = access_latency(topo, node, data_node, contention);
            t.c.total_cycles += lat;
            t.c.stall_cycles += lat;
            traffic(t, node, data_node, sc.costs.cacheline_bytes);
        } else {
            t.c.total_cycles += sc.costs.llc_hit;
            t.c.stall_cycles += sc.costs.llc_hit;
        }
    }

    void vm_op(Task& t, Process& p, const AccessEvent& ev, int core, int node) {
        t.c.total_cycles += sc.costs.syscall;
        ReplicatedAddressSpace& space = *p.space;
        const Vpn start = t.region_base + ev.vpn;
        const Vpn end = start + ev.length;
        PtOpCost cost;
        p.batching = true;
        p.shootdown_pending = false;

        auto for_mapped_runs = [&](auto fn) {
            Vpn v = start;
            while (v < end) {
                if (!space.lookup(v)) {
                    ++v;
                    continue;
                }
                Vpn e = v;
                while (e < end && space.lookup(e)) ++e;
                fn(v, e - v);
                v = e;
            }
        };

        switch (ev.vm_kind) {
            case VmOpKind::Map:
                for (Vpn v = start; v < end; ++v) {
                    if (space.lookup(v)) continue;
                    const auto [pfn, fnode] = frames.allocate(node);
                    space.set_clock(now(t) + cost.cycles);
                    cost += space.map_page(v, pfn, fnode, core, contention);
                }
                break;
            case VmOpKind::Unmap:
                for (Vpn v = start; v < end; ++v) {
                    const auto m = space.lookup(v);
                    if (!m) continue;
                    space.set_clock(now(t) + cost.cycles);
                    cost += space.unmap_page(v, core, contention);
                    frames.release(m->pfn, m->pfn_node);
                }
                break;
            case VmOpKind::Protect:
                for_mapped_runs([&](Vpn s, std::uint64_t n) {
                    const std::uint32_t prot = space.lookup(s)->prot ^ 0x2u;
                    space.set_clock(now(t) + cost.cycles);
                    cost += space.protect_range(s, n, prot, core, contention);
                });
                break;
            case VmOpKind::Remap:
                for_mapped_runs([&](Vpn s, std::uint64_t n) {
                    space.set_clock(now(t) + cost.cycles);
                    cost += space.remap_range(s, n, s, core, contention);
                });
                break;
        }
        p.batching = false;
        if (p.shootdown_pending) {
            const auto targets = shootdown_targets(p, core);
            const Cycles sd = mmu.ipi_cost(core, targets);
            cost.shootdown_cycles += sd;
            cost.cycles += sd;
        }
        charge_pt(t, cost);
    }

    double cap_for(const Task& t) const {
        const NodeLoad& load = view.nodes[static_cast<std::size_t>(topo.node_of(t.st.current_core))];
        const auto it = load.mba_caps.find(t.st.process_id);
        return it == load.mba_caps.end() ? 1.0 : it->second;
    }

    std::uint64_t pending_accesses(const Task& t) const {
        const std::uint64_t n = procs[static_cast<std::size_t>(t.proc)].inst->spec.accesses_per_quantum_per_thread;
        return (t.entitled - t.gen_q) * n - t.accesses_done_in_batch;
    }

    void ensure_batch(Task& t) {
        if (t.batch_q == t.gen_q) return;
        const Process& p = procs[static_cast<std::size_t>(t.proc)];
        p.gen->generate(t.st.thread_index, p.seed, t.gen_q, t.batch);
        t.batch_q = t.gen_q;
        t.pos = 0;
        t.accesses_done_in_batch = 0;
    }

    // Issues up to `max_accesses` of the task's quantum budget. Returns true
    // when the budget is exhausted.
    bool run_chunk(Task& t, int core, std::uint64_t max_accesses) {
        Process& p = procs[static_cast<std::size_t>(t.proc)];
        const int node = topo.node_of(core);
        std::uint64_t left = std::min(t.budget, max_accesses);
        while (t.gen_q < t.entitled) {
            ensure_batch(t);
            while (t.pos < t.batch.size()) {
                const AccessEvent& ev = t.batch[t.pos];
                if (ev.kind == EventKind::VmOp) {
                    vm_op(t, p, ev, core, node);
                } else {
                    if (t.budget == 0) return true;
                    if (left == 0) return false;
                    access(t, p, ev, core, node);
                    --left;
                    --t.budget;
                    ++t.accesses_done_in_batch;
                }
                ++t.pos;
            }
            ++t.gen_q;
        }
        return true;
    }

    // ---- periodic policy work ----------------------------------------------

    std::vector<NodeBandwidthView> bandwidth_views() const {
        std::vector<NodeBandwidthView> out(static_cast<std::size_t>(topo.node_count()));
        for (int n = 0; n < topo.node_count(); ++n) {
            out[static_cast<std::size_t>(n)].node_id = n;
            out[static_cast<std::size_t>(n)].utilization = contention.node_utilization(n);
        }
        std::map<std::pair<int, int>, std::uint64_t> bw;
        for (const Task& t : tasks) {
            if (!t.active) continue;
            bw[{topo.node_of(t.st.current_core), t.st.process_id}] += estimate_bandwidth(t.st.pmc, sc.costs.cacheline_bytes);
        }
        for (const auto& [key, bytes] : bw) {
            const auto [node, pid] = key;
            ProcessBandwidth pb;
            pb.process_id = pid;
            pb.priority = procs[static_cast<std::size_t>(pid)].inst->spec.priority;
            pb.bandwidth_bytes = bytes;
            const auto& caps = view.nodes[static_cast<std::size_t>(node)].mba_caps;
            const auto it = caps.find(pid);
            pb.cap = it == caps.end() ? 1.0 : it->second;
            out[static_cast<std::size_t>(node)].processes.push_back(pb);
        }
        return out;
    }

    void phoenix_round(const std::vector<int>& rolled) {
        if (rolled.empty()) return;
        const auto views = bandwidth_views();
        std::vector<char> acted(procs.size(), 0);
        for (int id : rolled) {
            Task& t = tasks[static_cast<std::size_t>(id)];
            Process& p = procs[static_cast<std::size_t>(t.proc)];
            if (acted[static_cast<std::size_t>(p.id)] || !p.space) continue;
            PhoenixInput in;
            in.process_id = p.id;
            in.pw_ratio = t.st.pmc.pw_ratio();
            in.task_node = topo.node_of(t.st.current_core);
            in.allowed_nodes = t.st.allowed_nodes;
            in.nodes = views;
            for (int n = 0; n < topo.node_count(); ++n) in.replica_on_node.push_back(p.space->has_replica(n));
            in.throttled_last_window = q - p.last_throttle_quantum <= sc.policy.window_ticks;
            const PhoenixAction a = phoenix_evaluate(in, sc.policy, sc.contention.knee);
            switch (a.kind) {
                case PhoenixAction::Kind::Throttle:
                    mba_set_throttle(view.nodes, a.node, a.target_process, a.cap);
                    p.last_throttle_quantum = q;
                    acted[static_cast<std::size_t>(p.id)] = 1;
                    events.push_back({q, "throttle", p.id, t.st.task_id, a.node, a.target_process, a.cap});
                    break;
                case PhoenixAction::Kind::Replicate:
                    charge_pt(t, p.space->add_replica(a.node, contention));
                    events.push_back({q, "replicate", p.id, t.st.task_id, a.node, -1, 0.0});
                    break;
                default: break;
            }
        }
    }

    void apply_moves(const std::vector<TaskMove>& moves) {
        for (const auto& m : moves) {
            Task& t = tasks[static_cast<std::size_t>(m.task_id)];
            view.remove_task(m.from_core);
            view.add_task(m.new_core);
            t.st.current_core = m.new_core;
            if (topo.node_of(m.from_core) != topo.node_of(m.new_core)) {
                ++cross_node_migrations;
                events.push_back({q, "thread_migration", t.st.process_id, t.st.task_id, topo.node_of(m.new_core), -1, 0.0});
            }
        }
    }

    void rebalance_round() {
        std::vector<TaskState> runnable;
        for (const Task& t : tasks)
            if (t.active) runnable.push_back(t.st);
        apply_moves(rebalance(sc.policy, view, runnable));

        if (sc.policy.kind != PolicyKind::Phoenix) return;
        for (Process& p : procs) {
            if (!p.space) continue;
            std::vector<int> nodes;
            for (int id : p.tasks)
                if (tasks[static_cast<std::size_t>(id)].active)
                    nodes.push_back(topo.node_of(tasks[static_cast<std::size_t>(id)].st.current_core));
            const auto target = table_follow_target(nodes, p.space->home_node(), p.space->replica_count());
            if (!target) continue;
            Task& lead = tasks[static_cast<std::size_t>(p.tasks.front())];
            const PtOpCost cost = p.space->migrate_tables(p.space->home_node(), *target, contention);
            charge_pt(lead, cost);
            lead.c.table_pages_migrated += cost.pages_copied;
            std::vector<int> allowed{*target};
            for (int n : lead.st.allowed_nodes)
                if (n != *target) allowed.push_back(n);
            for (int id : p.tasks) tasks[static_cast<std::size_t>(id)].st.home_node = *target;
            sync_allowed(p, allowed);
            events.push_back({q, "migrate_tables", p.id, lead.st.task_id, *target, -1, 0.0});
        }
    }

    void autonuma_round() {
        for (Process& p : procs) {
            if (!p.space) continue;
            const auto moves = autonuma_step(*p.space, *p.stats, sc.policy);
            Task* lead = nullptr;
            for (int id : p.tasks)
                if (tasks[static_cast<std::size_t>(id)].active) {
                    lead = &tasks[static_cast<std::size_t>(id)];
                    break;
                }
            for (const auto& m : moves) {
                if (!lead) break;
                const auto old = p.space->lookup(m.vpn);
                const auto [pfn, fnode] = frames.allocate(m.to_node);
                const int core = topo.cores_of(fnode).front();
                const Cycles copy = access_latency(topo, fnode, m.from_node, contention) +
                                    access_latency(topo, fnode, fnode, contention) +
                                    static_cast<Cycles>(std::ceil(static_cast<double>(sc.costs.page_bytes) /
                                                                  topo.node(m.from_node).bandwidth_capacity));
                PtOpCost cost = p.space->migrate_page(m.vpn, pfn, fnode, core, contention);
                cost.copy_cycles += copy;
                cost.cycles += copy;
                charge_pt(*lead, cost);
                ++lead->c.data_migrations;
                traffic(*lead, fnode, m.from_node, sc.costs.page_bytes);
                frames.release(old->pfn, old->pfn_node);
            }
            p.stats->clear();
        }
    }

    // ---- the quantum ------------------------------------------------------

    void step() {
        for (Process& p : procs)
            if (p.started && !p.exited && p.inst->stop_quantum && *p.inst->stop_quantum == q) stop_process(p);
        for (Process& p : procs)
            if (!p.started && p.inst->start_quantum == q) start_process(p);

        for (Process& p : procs)
            if (p.space) p.space->begin_quantum();
        for (int c = 0; c < topo.core_count(); ++c) {
            const auto sib = topo.smt_sibling(c);
            mmu.set_partition(c, sib && !view.core_idle(c) && !view.core_idle(*sib));
        }

        std::vector<std::vector<int>> on_core(static_cast<std::size_t>(topo.core_count()));
        std::vector<GenerationJob> jobs;
        std::vector<int> job_task;
        for (Task& t : tasks) {
            if (!t.active) continue;
            ++t.entitled;
            on_core[static_cast<std::size_t>(t.st.current_core)].push_back(t.st.task_id);
            if (t.batch_q != t.gen_q) {
                const Process& p = procs[static_cast<std::size_t>(t.proc)];
                jobs.push_back({p.gen.get(), t.st.thread_index, p.seed, t.gen_q});
                job_task.push_back(t.st.task_id);
            }
        }
        std::vector<std::vector<AccessEvent>> generated;
        generate_events_parallel(jobs, generated);
        for (std::size_t i = 0; i < jobs.size(); ++i) {
            Task& t = tasks[static_cast<std::size_t>(job_task[i])];
            t.batch = std::move(generated[i]);
            t.batch_q = t.gen_q;
            t.pos = 0;
            t.accesses_done_in_batch = 0;
        }

        // Cores advance a chunk of accesses at a time so that page-table
        // operations from different cores interleave. Tasks sharing a core run
        // one after another.
        std::vector<std::size_t> cursor(on_core.size(), 0);
        core_clock.assign(on_core.size(), 0);
        for (std::size_t c = 0; c < on_core.size(); ++c) {
            for (int id : on_core[c]) {
                Task& t = tasks[static_cast<std::size_t>(id)];
                Process& p = procs[static_cast<std::size_t>(t.proc)];
                p.cpumask[c] = 1;
                t.budget = apply_mba(pending_accesses(t), p.inst->spec.accesses_per_quantum_per_thread, cap_for(t)).issued;
                if (on_core[c].size() > 1) {
                    t.c.total_cycles += sc.costs.context_switch;
                    core_clock[c] += sc.costs.context_switch;
                    node_counters[static_cast<std::size_t>(topo.node_of(static_cast<int>(c)))].total_cycles +=
                        sc.costs.context_switch;
                }
            }
        }
        // Earliest core clock goes next (lowest id on ties), so lock holders
        // are always observed in time order.
        using Slot = std::pair<Cycles, std::size_t>;
        std::priority_queue<Slot, std::vector<Slot>, std::greater<>> ready;
        for (std::size_t c = 0; c < on_core.size(); ++c)
            if (!on_core[c].empty()) ready.push({core_clock[c], c});
        while (!ready.empty()) {
            const std::size_t c = ready.top().second;
            ready.pop();
            const auto& list = on_core[c];
            Task& t = tasks[static_cast<std::size_t>(list[cursor[c]])];
            const CounterSet before = t.c;
            chunk_clock = core_clock[c];
            chunk_total = t.c.total_cycles;
            if (run_chunk(t, static_cast<int>(c), kChunk)) ++cursor[c];
            CounterSet d = t.c - before;
            core_clock[c] += d.total_cycles;
            d.bandwidth_bytes = 0;
            node_counters[static_cast<std::size_t>(topo.node_of(static_cast<int>(c)))] += d;
            if (cursor[c] < list.size()) ready.push({core_clock[c], c});
        }

        std::vector<int> rolled;
        for (Task& t : tasks) {
            if (!t.active) continue;
            const CounterSet d = t.c - t.tick_base;
            t.tick_base = t.c;
            const PmcDelta delta{d.total_cycles, d.pagewalk_cycles, d.stall_cycles, d.dtlb_misses, d.llc_misses};
            if (on_tick_sample(t.st.pmc, delta, sc.policy.window_ticks) && t.st.phoenix_enabled)
                rolled.push_back(t.st.task_id);
            if (sc.timeseries) series.push_back({q, t.st.task_id, d});
        }

        for (int n = 0; n < topo.node_count(); ++n)
            view.nodes[static_cast<std::size_t>(n)].bandwidth_bytes_this_epoch = epoch.node_bytes[static_cast<std::size_t>(n)];
        contention = compute_contention(topo, epoch, sc.quantum_cycles, sc.contention);
        last_epoch = epoch;
        epoch.clear();

        if (sc.policy.kind == PolicyKind::Phoenix) phoenix_round(rolled);
        if ((q + 1) % sc.policy.rebalance_interval == 0) rebalance_round();
        if (sc.policy.autonuma && (q + 1) % sc.policy.autonuma_scan_period == 0) autonuma_round();
        ++q;
    }

    MetricsReport report() {
        RunCounters rc;
        rc.policy = to_string(sc.policy.kind);
        rc.fingerprint = sc.fingerprint;
        for (const Task& t : tasks)
            rc.tasks.push_back({t.st.task_id, t.st.process_id, procs[static_cast<std::size_t>(t.proc)].inst->spec.name, t.c});
        rc.nodes = node_counters;
        for (const Process& p : procs) {
            if (!p.started) continue;
            ProcessSummary s;
            s.process_id = p.id;
            s.name = p.inst->spec.name;
            s.replica_count = p.space ? p.space->replica_count() : p.final_replicas;
            s.replica_nodes = p.space ? p.space->replica_nodes() : p.final_replica_nodes;
            rc.processes.push_back(std::move(s));
        }
        rc.events = events;
        rc.timeseries = series;
        rc.cross_node_migrations = cross_node_migrations;
        return finalize(rc);
    }
};

Simulation::Simulation(const Scenario& scenario) : impl_(std::make_unique<Impl>(scenario)) {}
Simulation::~Simulation() = default;

int Simulation::quantum() const { return impl_->q; }
bool Simulation::done() const { return impl_->q >= impl_->sc.duration_quanta; }
void Simulation::step_quantum() { impl_->step(); }
const Topology& Simulation::topology() const { return impl_->topo; }
const ContentionState& Simulation::contention() const { return impl_->contention; }
const EpochTraffic& Simulation::last_traffic() const { return impl_->last_epoch; }
const std::vector<PolicyEvent>& Simulation::events() const { return impl_->events; }
const std::vector<NodeLoad>& Simulation::node_loads() const { return impl_->view.nodes; }

std::vector<TaskView> Simulation::tasks() const {
    std::vector<TaskView> out;
    for (const Task& t : impl_->tasks) {
        TaskView v;
        v.task_id = t.st.task_id;
        v.process_id = t.st.process_id;
        v.core = t.st.current_core;
        v.node = t.st.current_core >= 0 ? impl_->topo.node_of(t.st.current_core) : -1;
        v.home_node = t.st.home_node;
        v.allowed_nodes = t.st.allowed_nodes;
        v.active = t.active;
        v.counters = t.c;
        v.pmc = t.st.pmc;
        out.push_back(std::move(v));
    }
    return out;
}

const ReplicatedAddressSpace* Simulation::address_space(int process_id) const {
    if (process_id < 0 || static_cast<std::size_t>(process_id) >= impl_->procs.size()) return nullptr;
    return impl_->procs[static_cast<std::size_t>(process_id)].space.get();
}

MetricsReport Simulation::finish() {
    while (!done()) step_quantum();
    return impl_->report();
}

MetricsReport run_scenario(const Scenario& scenario) {
    Simulation sim(scenario);
    return sim.finish();
}

std::vector<MetricsReport> run_batch_serial(std::span<const Scenario> scenarios) {
    std::vector<MetricsReport> out;
    out.reserve(scenarios.size());
    for (const auto& s : scenarios) out.push_back(run_scenario(s));
    return out;
}

std::vector<MetricsReport> run_batch_parallel(std::span<const Scenario> scenarios) {
    std::vector<MetricsReport> out(scenarios.size());
    std::vector<std::exception_ptr> errors(scenarios.size());
    const auto n = static_cast<std::int64_t>(scenarios.size());
#pragma omp parallel for schedule(dynamic, 1)
    for (std::int64_t i = 0; i < n; ++i) {
        try {
            out[static_cast<std::size_t>(i)] = run_scenario(scenarios[static_cast<std::size_t>(i)]);
        } catch (...) {
            errors[static_cast<std::size_t>(i)] = std::current_exception();
        }
    }
    for (auto& e : errors)
        if (e) std::rethrow_exception(e);
    return out;
}

}  // namespace numasim
