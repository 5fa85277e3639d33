#include <benchmark/benchmark.h>

#include "numasim/engine.hpp"
#include "numasim/workload.hpp"

using namespace numasim;

namespace {

std::vector<GenerationJob> jobs_for(const WorkloadGenerator& gen, int threads) {
    std::vector<GenerationJob> jobs;
    for (int t = 0; t < threads; ++t) jobs.push_back({&gen, t, 7, 3});
    return jobs;
}

void generation(benchmark::State& state, bool parallel) {
    WorkloadSpec spec = preset("btree_like");
    spec.accesses_per_quantum_per_thread = 20000;
    const WorkloadGenerator gen(spec);
    const auto jobs = jobs_for(gen, static_cast<int>(state.range(0)));
    std::vector<std::vector<AccessEvent>> out;
    for (auto _ : state) {
        if (parallel)
            generate_events_parallel(jobs, out);
        else
            generate_events_serial(jobs, out);
        benchmark::DoNotOptimize(out.data());
    }
    state.SetItemsProcessed(state.iterations() * state.range(0) * 20000);
}

void BM_GenerateSerial(benchmark::State& state) { generation(state, false); }
void BM_GenerateParallel(benchmark::State& state) { generation(state, true); }

std::vector<Scenario> batch() {
    std::vector<Scenario> out;
    for (auto k : {PolicyKind::Linux, PolicyKind::Mitosis, PolicyKind::Phoenix}) {
        Scenario s;
        s.machine.nodes = 2;
        s.machine.cores_per_node = 8;
        s.policy.kind = k;
        s.duration_quanta = 10;
        WorkloadInstance w;
        w.spec = preset("gups_like");
        w.spec.thread_count = 12;
        w.spec.accesses_per_quantum_per_thread = 2000;
        s.workloads.push_back(w);
        out.push_back(s);
    }
    return out;
}

void BM_BatchSerial(benchmark::State& state) {
    const auto b = batch();
    for (auto _ : state) benchmark::DoNotOptimize(run_batch_serial(b));
}

void BM_BatchParallel(benchmark::State& state) {
    const auto b = batch();
    for (auto _ : state) benchmark::DoNotOptimize(run_batch_parallel(b));
}

}  // namespace

BENCHMARK(BM_GenerateSerial)->Arg(4)->Arg(16)->Arg(64);
BENCHMARK(BM_GenerateParallel)->Arg(4)->Arg(16)->Arg(64);
BENCHMARK(BM_BatchSerial)->Unit(benchmark::kMillisecond);
BENCHMARK(BM_BatchParallel)->Unit(benchmark::kMillisecond);

BENCHMARK_MAIN();
