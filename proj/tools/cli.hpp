#pragma once

#include <map>
#include <ostream>
#include <string>
#include <vector>

namespace knas::cli {

inline constexpr int kExitOk = 0;
inline constexpr int kExitCheckFailed = 1;
inline constexpr int kExitUsage = 2;
inline constexpr int kExitIo = 3;

// Flat key=value run settings, e.g. "train.epochs" -> "20".
using Settings = std::map<std::string, std::string>;

Settings default_settings();

// Lines of "key = value"; '#' starts a comment. Unknown keys are rejected.
Settings parse_config_text(const std::string& text);

// The keys a subcommand reads, rendered as a config file.
std::string render_settings(const Settings& settings, const std::string& subcommand);

// args excludes the program name.
int run(const std::vector<std::string>& args, std::ostream& out, std::ostream& err);
int run(int argc, char** argv, std::ostream& out, std::ostream& err);

}  // namespace knas::cli
