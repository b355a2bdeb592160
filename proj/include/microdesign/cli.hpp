#pragma once
// Command-line front end. Subcommands: gen-data, label, train, design
// (p1|p2|p3), eval, plots. Every artifact directory receives a manifest
// recording the exact invocation, configuration and inputs/outputs.
// Exit codes: 0 success, 1 runtime failure, 2 usage error.

namespace md::cli {

int run(int argc, const char* const* argv);

}  // namespace md::cli
