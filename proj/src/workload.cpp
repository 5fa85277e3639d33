#include "numasim/workload.hpp"

#include <cmath>
#include <numeric>
#include <random>

#include "numasim/error.hpp"

namespace numasim {

const char* to_string(Pattern p) {
    switch (p) {
        case Pattern::UniformRandom: return "uniform_random";
        case Pattern::Zipfian: return "zipfian";
        case Pattern::Sequential: return "sequential";
    }
    return "?";
}

const char* to_string(VmOpKind k) {
    switch (k) {
        case VmOpKind::Map: return "map";
        case VmOpKind::Unmap: return "unmap";
        case VmOpKind::Protect: return "protect";
        case VmOpKind::Remap: return "remap";
    }
    return "?";
}

const char* to_string(Priority p) { return p == Priority::High ? "high" : "low"; }

void WorkloadSpec::validate() const {
    if (thread_count < 1) throw ConfigError("workload '" + name + "': thread_count must be >= 1");
    if (footprint_pages < 1) throw ConfigError("workload '" + name + "': footprint_pages must be >= 1");
    if (vm_ops_per_kilo_access < 0.0 || vm_ops_per_kilo_access > 1000.0)
        throw ConfigError("workload '" + name + "': vm_ops_per_kilo_access must be in [0, 1000]");
    if (vm_mix.map < 0 || vm_mix.unmap < 0 || vm_mix.protect < 0 || vm_mix.remap < 0)
        throw ConfigError("workload '" + name + "': vm op mix weights must be >= 0");
    if (vm_ops_per_kilo_access > 0.0 && std::abs(vm_mix.total() - 1.0) > 1e-6)
        throw ConfigError("workload '" + name + "': vm op mix must sum to 1");
    if (pattern == Pattern::Zipfian && !(zipf_theta > 0.0 && zipf_theta < 1.0))
        throw ConfigError("workload '" + name + "': zipf theta must be in (0, 1)");
    if (!(llc_miss_probability >= 0.0 && llc_miss_probability <= 1.0))
        throw ConfigError("workload '" + name + "': llc_miss_probability must be in [0, 1]");
    if (!(write_fraction >= 0.0 && write_fraction <= 1.0))
        throw ConfigError("workload '" + name + "': write_fraction must be in [0, 1]");
    if (!(vm_op_mean_pages >= 1.0)) throw ConfigError("workload '" + name + "': vm_op_mean_pages must be >= 1");
}

namespace {

std::uint64_t splitmix64(std::uint64_t x) {
    x += 0x9e3779b97f4a7c15ULL;
    x = (x ^ (x >> 30)) * 0xbf58476d1ce4e5b9ULL;
    x = (x ^ (x >> 27)) * 0x94d049bb133111ebULL;
    return x ^ (x >> 31);
}

// Bit-exact across standard libraries, unlike std::uniform_*_distribution.
double unit(std::mt19937_64& rng) { return static_cast<double>(rng() >> 11) * 0x1.0p-53; }

std::uint64_t below(std::mt19937_64& rng, std::uint64_t n) {
    return static_cast<std::uint64_t>((static_cast<unsigned __int128>(rng()) * n) >> 64);
}

}  // namespace

WorkloadGenerator::WorkloadGenerator(WorkloadSpec spec) : spec_(std::move(spec)) {
    spec_.validate();
    const std::uint64_t n = spec_.footprint_pages;
    if (spec_.pattern == Pattern::Zipfian) {
        const double theta = spec_.zipf_theta;
        for (std::uint64_t i = 1; i <= n; ++i) zeta_n_ += 1.0 / std::pow(static_cast<double>(i), theta);
        const double zeta2 = 1.0 + std::pow(0.5, theta);
        alpha_ = 1.0 / (1.0 - theta);
        eta_ = (1.0 - std::pow(2.0 / static_cast<double>(n), 1.0 - theta)) / (1.0 - zeta2 / zeta_n_);
        half_pow_theta_ = std::pow(0.5, theta);
        // Spread popular ranks over the footprint with a stride coprime to n.
        scatter_ = std::max<std::uint64_t>(1, static_cast<std::uint64_t>(static_cast<double>(n) * 0.6180339887)) | 1;
        while (std::gcd(scatter_, n) != 1) scatter_ += 2;
    }
}

Vpn WorkloadGenerator::page_for_rank(std::uint64_t rank) const {
    const std::uint64_t n = spec_.footprint_pages;
    return static_cast<Vpn>((static_cast<unsigned __int128>(rank) * scatter_) % n);
}

void WorkloadGenerator::generate(int thread_id, std::uint64_t seed, std::uint64_t quantum_index,
                                 std::vector<AccessEvent>& out) const {
    out.clear();
    const std::uint64_t mixed =
        splitmix64(splitmix64(splitmix64(seed) ^ static_cast<std::uint64_t>(thread_id)) ^ quantum_index);
    std::mt19937_64 rng(mixed);
    const std::uint64_t n = spec_.footprint_pages;
    const std::uint32_t count = spec_.accesses_per_quantum_per_thread;
    const double vm_prob = spec_.vm_ops_per_kilo_access / 1000.0;
    const double geo_p = 1.0 / spec_.vm_op_mean_pages;
    const auto thread = static_cast<std::uint32_t>(thread_id);
    out.reserve(count + static_cast<std::size_t>(count * vm_prob) + 4);

    for (std::uint32_t i = 0; i < count; ++i) {
        AccessEvent ev;
        ev.thread = thread;
        switch (spec_.pattern) {
            case Pattern::UniformRandom: ev.vpn = below(rng, n); break;
            case Pattern::Sequential: ev.vpn = (quantum_index * count + i) % n; break;
            case Pattern::Zipfian: {
                const double u = unit(rng);
                const double uz = u * zeta_n_;
                std::uint64_t rank;
                if (uz < 1.0) rank = 0;
                else if (uz < 1.0 + half_pow_theta_) rank = 1;
                else rank = static_cast<std::uint64_t>(static_cast<double>(n) * std::pow(eta_ * u - eta_ + 1.0, alpha_));
                if (rank >= n) rank = n - 1;
                ev.vpn = page_for_rank(rank);
                break;
            }
        }
        ev.kind = (spec_.write_fraction > 0.0 && unit(rng) < spec_.write_fraction) ? EventKind::Write : EventKind::Read;
        out.push_back(ev);

        if (vm_prob > 0.0 && unit(rng) < vm_prob) {
            AccessEvent op;
            op.kind = EventKind::VmOp;
            op.thread = thread;
            const double pick = unit(rng) * spec_.vm_mix.total();
            const auto& m = spec_.vm_mix;
            if (pick < m.map) op.vm_kind = VmOpKind::Map;
            else if (pick < m.map + m.unmap) op.vm_kind = VmOpKind::Unmap;
            else if (pick < m.map + m.unmap + m.protect) op.vm_kind = VmOpKind::Protect;
            else op.vm_kind = VmOpKind::Remap;
            op.vpn = below(rng, n);
            std::uint64_t len = 1;
            if (geo_p < 1.0) {
                const double u = 1.0 - unit(rng);  // (0, 1]
                len = 1 + static_cast<std::uint64_t>(std::floor(std::log(u) / std::log(1.0 - geo_p)));
            }
            op.length = static_cast<std::uint32_t>(std::min<std::uint64_t>(len, n - op.vpn));
            out.push_back(op);
        }
    }
}

std::vector<AccessEvent> WorkloadGenerator::generate(int thread_id, std::uint64_t seed, std::uint64_t quantum_index) const {
    std::vector<AccessEvent> out;
    generate(thread_id, seed, quantum_index, out);
    return out;
}

std::vector<AccessEvent> generate_quantum_events(const WorkloadSpec& spec, int thread_id, std::uint64_t rng_seed,
                                                 std::uint64_t quantum_index) {
    if (thread_id < 0 || thread_id >= spec.thread_count)
        throw ConfigError("thread id " + std::to_string(thread_id) + " out of range for workload '" + spec.name + "'");
    return WorkloadGenerator(spec).generate(thread_id, rng_seed, quantum_index);
}

void generate_events_serial(std::span<const GenerationJob> jobs, std::vector<std::vector<AccessEvent>>& out) {
    out.resize(jobs.size());
    for (std::size_t i = 0; i < jobs.size(); ++i)
        jobs[i].generator->generate(jobs[i].thread_id, jobs[i].seed, jobs[i].quantum_index, out[i]);
}

void generate_events_parallel(std::span<const GenerationJob> jobs, std::vector<std::vector<AccessEvent>>& out) {
    out.resize(jobs.size());
    const auto n = static_cast<std::int64_t>(jobs.size());
#pragma omp parallel for schedule(static)
    for (std::int64_t i = 0; i < n; ++i) {
        const auto& job = jobs[static_cast<std::size_t>(i)];
        job.generator->generate(job.thread_id, job.seed, job.quantum_index, out[static_cast<std::size_t>(i)]);
    }
}

WorkloadSpec preset(const std::string& name) {
    WorkloadSpec s;
    s.name = name;
    if (name == "gups_like") {
        // integer random update over a footprint far beyond TLB reach
        s.thread_count = 16;
        s.footprint_pages = 1 << 18;
        s.pattern = Pattern::UniformRandom;
        s.write_fraction = 0.5;
        s.llc_miss_probability = 1.0;
    } else if (name == "btree_like") {
        // skewed index lookups; allocation churn from node splits
        s.thread_count = 16;
        s.footprint_pages = 1 << 18;
        s.pattern = Pattern::Zipfian;
        s.zipf_theta = 0.99;
        s.llc_miss_probability = 0.5;
        s.vm_ops_per_kilo_access = 0.5;
        s.vm_mix = {0.5, 0.5, 0.0, 0.0};
    } else if (name == "hashjoin_like") {
        s.thread_count = 16;
        s.footprint_pages = 1 << 17;
        s.pattern = Pattern::UniformRandom;
        s.llc_miss_probability = 1.0;
    } else if (name == "stream_like") {
        // memory-bandwidth antagonist: small private arrays streamed forever
        s.thread_count = 16;
        s.footprint_pages = 16;
        s.pattern = Pattern::Sequential;
        s.sharing = Sharing::Private;
        s.llc_miss_probability = 1.0;
        s.write_fraction = 0.33;
        s.priority = Priority::Low;
    } else if (name == "wrmem_like") {
        // in-memory inverted index; almost every translation hits the TLB, but
        // mremap/mprotect are frequent. Mix by call count: %time / usecs-per-call.
        s.thread_count = 16;
        s.footprint_pages = 48;
        s.pattern = Pattern::UniformRandom;
        s.llc_miss_probability = 0.3;
        s.write_fraction = 0.3;
        s.vm_ops_per_kilo_access = 1.0;
        s.vm_op_mean_pages = 1.0;
        const double remap = 53.54 / 53, protect = 40.50 / 21, map = 4.66 / 25, unmap = 0.90 / 30;
        const double sum = remap + protect + map + unmap;
        s.vm_mix = {map / sum, unmap / sum, protect / sum, remap / sum};
    } else if (name == "webserver_like") {
        // small per-worker buffers, map/unmap churn per request
        s.thread_count = 16;
        s.footprint_pages = 32;
        s.sharing = Sharing::Private;
        s.pattern = Pattern::UniformRandom;
        s.llc_miss_probability = 0.2;
        s.vm_ops_per_kilo_access = 8.0;
        s.vm_mix = {0.5, 0.5, 0.0, 0.0};
        s.vm_op_mean_pages = 3.0;
    } else {
        throw ConfigError("unknown workload preset '" + name + "'");
    }
    return s;
}

std::vector<std::string> preset_names() {
    return {"btree_like", "gups_like", "hashjoin_like", "stream_like", "webserver_like", "wrmem_like"};
}

}  // namespace numasim
