#pragma once

#include <string>
#include <vector>

#include "numasim/engine.hpp"

namespace numasim {

// Scenario files are JSON with sections machine, workloads, policy, run
// (required) and mmu, contention, costs (optional). Unknown keys are errors.
// Every ConfigError raised while loading names the source and line:
//   "scenario.json:12: policy.window must be >= 1"

// Applies dotted-path overrides ("policy.threshold=0.2", "workloads.0.threads=4")
// before validation. The value is parsed as JSON when possible, else taken as
// a string.
Scenario load_scenario(const std::string& text, const std::string& source_name,
                       const std::vector<std::string>& overrides = {});
Scenario load_scenario_file(const std::string& path, const std::vector<std::string>& overrides = {});

// The fully resolved scenario as sorted-key JSON. Defaults are spelled out,
// so two files that differ only in omitted defaults serialize identically.
std::string canonical_json(const Scenario& scenario);

// 16 hex digits of FNV-1a over canonical_json with policy.kind removed, so
// runs of one scenario under different policies share a fingerprint.
std::string scenario_fingerprint(const Scenario& scenario);

}  // namespace numasim
