#pragma once

#include <iosfwd>
#include <string>
#include <vector>

#include "numasim/engine.hpp"

namespace numasim {

inline constexpr const char* kToolVersion = "0.1.0";

inline constexpr int kExitOk = 0;
inline constexpr int kExitValidation = 1;
inline constexpr int kExitRuntime = 2;

// Default output directory when --out is absent.
inline constexpr const char* kOutDirEnv = "NUMASIM_OUT_DIR";

const std::vector<std::string>& sweep_parameters();

// One scenario per value, in value order. Throws UsageError for an unknown
// parameter or an empty list, ConfigError when a value does not validate.
std::vector<Scenario> expand_sweep(const std::string& scenario_text, const std::string& source_name,
                                   const std::vector<std::string>& overrides, const std::string& parameter,
                                   const std::vector<std::string>& values);

// Long format: parameter,value followed by every report column, one line per report row.
std::string sweep_csv(const std::string& parameter, const std::vector<std::string>& values,
                      const std::vector<MetricsReport>& reports);
// One line per value with whole-run totals, policy action counts and total
// cycles normalized to the first value.
std::string sweep_summary_csv(const std::string& parameter, const std::vector<std::string>& values,
                              const std::vector<MetricsReport>& reports);

// Entry point of the numasim tool. args excludes the program name.
// Returns kExitOk, kExitValidation or kExitRuntime.
int run_cli(const std::vector<std::string>& args, std::ostream& out, std::ostream& err);

}  // namespace numasim
