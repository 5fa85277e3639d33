#pragma once

#include <cstddef>
#include <cstdint>
#include <vector>

namespace numasim {

// Piecewise-linear latency multiplier with a knee:
//   m(u) = 1                              for u <= knee
//   m(u) = 1 + slope * (u - knee)/(1-knee) for u >  knee, capped at max_multiplier
struct ContentionParams {
    double knee = 0.6;
    double slope = 3.0;
    double max_multiplier = 4.0;
};

double contention_multiplier(const ContentionParams& params, double utilization);

// Utilization of every memory controller and every directed link for one epoch.
// Links are stored row-major: index = from * node_count + to.
class ContentionState {
public:
    ContentionState() = default;
    ContentionState(std::size_t node_count, ContentionParams params);

    static const ContentionState& none();

    std::size_t node_count() const noexcept { return node_count_; }
    const ContentionParams& params() const noexcept { return params_; }

    double node_utilization(int node) const;
    double link_utilization(int from, int to) const;
    void set_node_utilization(int node, double u);
    void set_link_utilization(int from, int to, double u);

    // Multipliers for an idle state are exactly 1, including out-of-range ids
    // (used by the shared `none()` instance, which has zero nodes).
    double node_multiplier(int node) const;
    double link_multiplier(int from, int to) const;

private:
    std::size_t node_count_ = 0;
    ContentionParams params_{};
    std::vector<double> node_u_;
    std::vector<double> link_u_;
};

// Bytes observed during one epoch, per memory controller and per directed link.
struct EpochTraffic {
    std::vector<std::uint64_t> node_bytes;
    std::vector<std::uint64_t> link_bytes;

    explicit EpochTraffic(std::size_t node_count = 0)
        : node_bytes(node_count, 0), link_bytes(node_count * node_count, 0) {}

    void add(int from, int to, std::uint64_t bytes);
    void clear();
};

}  // namespace numasim
