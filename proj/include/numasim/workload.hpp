#pragma once

#include <cstdint>
#include <span>
#include <string>
#include <vector>

#include "numasim/pagetable.hpp"

namespace numasim {

enum class Pattern { UniformRandom, Zipfian, Sequential };
enum class VmOpKind : std::uint8_t { Map, Unmap, Protect, Remap };
enum class Priority { High, Low };
// Shared: all threads address one footprint. Private: each thread owns a
// footprint-sized region (the engine offsets it by thread index).
enum class Sharing { Shared, Private };

const char* to_string(Pattern p);
const char* to_string(VmOpKind k);
const char* to_string(Priority p);

struct VmOpMix {
    double map = 0.0;
    double unmap = 0.0;
    double protect = 0.0;
    double remap = 0.0;

    double total() const { return map + unmap + protect + remap; }
};

struct WorkloadSpec {
    std::string name = "custom";
    int thread_count = 1;
    std::uint64_t footprint_pages = 1;
    Pattern pattern = Pattern::UniformRandom;
    double zipf_theta = 0.99;
    std::uint32_t accesses_per_quantum_per_thread = 1000;
    double vm_ops_per_kilo_access = 0.0;
    VmOpMix vm_mix;
    double vm_op_mean_pages = 8.0;
    Priority priority = Priority::High;
    Sharing sharing = Sharing::Shared;
    // Probability that a data access misses the LLC and goes to DRAM.
    double llc_miss_probability = 1.0;
    double write_fraction = 0.0;

    bool bandwidth_intensive() const { return pattern == Pattern::Sequential && llc_miss_probability >= 1.0; }
    // Throws ConfigError.
    void validate() const;
};

enum class EventKind : std::uint8_t { Read, Write, VmOp };

struct AccessEvent {
    EventKind kind = EventKind::Read;
    VmOpKind vm_kind = VmOpKind::Map;
    std::uint32_t length = 0;  // pages, for VmOp
    std::uint32_t thread = 0;
    Vpn vpn = 0;  // relative to the thread's region

    friend bool operator==(const AccessEvent&, const AccessEvent&) = default;
};

// Precomputes the pattern tables for one spec; generation is then a pure
// function of (thread, seed, quantum) and safe to call concurrently.
class WorkloadGenerator {
public:
    explicit WorkloadGenerator(WorkloadSpec spec);

    const WorkloadSpec& spec() const noexcept { return spec_; }

    // Appends one quantum's events for `thread_id` to `out` (cleared first).
    void generate(int thread_id, std::uint64_t seed, std::uint64_t quantum_index, std::vector<AccessEvent>& out) const;
    std::vector<AccessEvent> generate(int thread_id, std::uint64_t seed, std::uint64_t quantum_index) const;

    // Page for zipf rank r (0 = most popular).
    Vpn page_for_rank(std::uint64_t rank) const;

private:
    WorkloadSpec spec_;
    double zeta_n_ = 0.0;
    double alpha_ = 0.0;
    double eta_ = 0.0;
    double half_pow_theta_ = 0.0;
    std::uint64_t scatter_ = 1;
};

std::vector<AccessEvent> generate_quantum_events(const WorkloadSpec& spec, int thread_id, std::uint64_t rng_seed,
                                                 std::uint64_t quantum_index);

// Batch generation for many (generator, thread, quantum) triples.
struct GenerationJob {
    const WorkloadGenerator* generator = nullptr;
    int thread_id = 0;
    std::uint64_t seed = 0;
    std::uint64_t quantum_index = 0;
};

// Serial reference and OpenMP version; results are identical.
void generate_events_serial(std::span<const GenerationJob> jobs, std::vector<std::vector<AccessEvent>>& out);
void generate_events_parallel(std::span<const GenerationJob> jobs, std::vector<std::vector<AccessEvent>>& out);

WorkloadSpec preset(const std::string& name);
std::vector<std::string> preset_names();

}  // namespace numasim
