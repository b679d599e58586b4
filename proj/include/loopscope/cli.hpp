#pragma once

#include <filesystem>
#include <string>

#include <json.hpp>

namespace loopscope {

/// Entry point of the `loopscope` tool. Returns 0 on success, 1 when a stage
/// failed (the output directory's status.json then says "error" and lists the
/// partial outputs), 2 on bad usage.
int run_cli(int argc, const char* const* argv);

/// Completes a RunConfig with defaults and checks it. Referenced files must
/// exist. Throws UsageError.
nlohmann::json resolve_run_config(nlohmann::json config);

/// Runs a resolved RunConfig, writing run_config.json, status.json and the
/// subcommand's reports into config["output"]. Throws on failure after
/// marking status.json.
void execute_run(const nlohmann::json& resolved);

}  // namespace loopscope
