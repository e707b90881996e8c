#pragma once

#include <iosfwd>
#include <map>
#include <string>
#include <vector>

namespace sketchdiff::cli {

enum ExitCode { kOk = 0, kUsage = 1, kDataError = 2, kCheckpointError = 3 };

// Resolved `key = value` settings for one run.
using RunConfig = std::map<std::string, std::string>;

// Every accepted key with its default. data.root defaults to
// $SKETCHDIFF_DATA_ROOT when set.
RunConfig default_config();

// Applies a `key = value` file on top of `config`; unknown keys are rejected.
void apply_config_file(RunConfig& config, const std::string& path);
void apply_override(RunConfig& config, const std::string& key, const std::string& value);

// args[0] is the program name. Progress and results go to `out` as
// key=value lines, diagnostics to `err`.
int run(const std::vector<std::string>& args, std::ostream& out, std::ostream& err);
int run(int argc, char** argv);

}  // namespace sketchdiff::cli
