#pragma once

// Command-line front end. run_cli is the whole program minus process setup, so
// tests call it in-process.
//
// Exit codes: 0 success, 1 runtime failure, 2 usage or configuration error.

#include <iosfwd>
#include <string>
#include <vector>

namespace lremap {

inline constexpr const char* kSoftwareVersion = "latent-remap 1.0.0";

// `args` excludes the program name.
int run_cli(const std::vector<std::string>& args, std::ostream& out, std::ostream& err);

}  // namespace lremap
