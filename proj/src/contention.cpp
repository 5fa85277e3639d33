#include "numasim/contention.hpp"

#include <algorithm>

namespace numasim {

double contention_multiplier(const ContentionParams& params, double utilization) {
    const double u = std::clamp(utilization, 0.0, 1.0);
    if (u <= params.knee) return 1.0;
    const double m = 1.0 + params.slope * (u - params.knee) / (1.0 - params.knee);
    return std::min(m, params.max_multiplier);
}

ContentionState::ContentionState(std::size_t node_count, ContentionParams params)
    : node_count_(node_count), params_(params), node_u_(node_count, 0.0), link_u_(node_count * node_count, 0.0) {}

const ContentionState& ContentionState::none() {
    static const ContentionState idle{};
    return idle;
}

double ContentionState::node_utilization(int node) const {
    const auto n = static_cast<std::size_t>(node);
    return n < node_count_ ? node_u_[n] : 0.0;
}

double ContentionState::link_utilization(int from, int to) const {
    const auto f = static_cast<std::size_t>(from);
    const auto t = static_cast<std::size_t>(to);
    return (f < node_count_ && t < node_count_) ? link_u_[f * node_count_ + t] : 0.0;
}

void ContentionState::set_node_utilization(int node, double u) {
    node_u_.at(static_cast<std::size_t>(node)) = std::clamp(u, 0.0, 1.0);
}

void ContentionState::set_link_utilization(int from, int to, double u) {
    link_u_.at(static_cast<std::size_t>(from) * node_count_ + static_cast<std::size_t>(to)) = std::clamp(u, 0.0, 1.0);
}

double ContentionState::node_multiplier(int node) const {
    return contention_multiplier(params_, node_utilization(node));
}

double ContentionState::link_multiplier(int from, int to) const {
    if (from == to) return 1.0;
    return contention_multiplier(params_, link_utilization(from, to));
}

void EpochTraffic::add(int from, int to, std::uint64_t bytes) {
    node_bytes[static_cast<std::size_t>(to)] += bytes;
    if (from != to) link_bytes[static_cast<std::size_t>(from) * node_bytes.size() + static_cast<std::size_t>(to)] += bytes;
}

void EpochTraffic::clear() {
    std::fill(node_bytes.begin(), node_bytes.end(), 0);
    std::fill(link_bytes.begin(), link_bytes.end(), 0);
}

}  // namespace numasim
