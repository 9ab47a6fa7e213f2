#pragma once

#include <cstddef>
#include <iosfwd>
#include <string>

#include "dmba/model.hpp"

namespace dmba {

// Entry point of the `dmba` tool. Returns the process exit code: 0 success,
// 1 usage or validation error, 2 runtime failure.
int run_cli(int argc, const char* const* argv, std::ostream& out, std::ostream& err);

// RunReport as JSON. Wall-clock time is left out so that equal runs
// serialize to equal bytes.
std::string report_to_json(const RunReport& report);

std::string model_to_json(DmbaModel& model, const TrainConfig& config, std::size_t in_features,
                          std::size_t n_classes);
// Rebuilds a model saved by model_to_json; `config` receives its settings.
DmbaModel model_from_json(const std::string& text, TrainConfig* config = nullptr);

}  // namespace dmba
