// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <ostream>

#include "headscope/config.hpp"

namespace headscope {

/// Exit codes: 0 success, 1 adversarial run whose constraint or output check
/// failed, 2 error (a JSON {code, message, detail} object on stderr).
inline constexpr int kExitOk = 0;
inline constexpr int kExitCheckFailed = 1;
inline constexpr int kExitError = 2;

/// Profiles every head of the dump at cfg.dump and writes profiles.json and
/// the report files into cfg.out.
int cmd_analyze(const RunConfig& cfg, std::ostream& out, std::ostream& err);

/// Builds the seeded model, decodes synthetic articles and writes a dump
/// (plus model.weights) into cfg.out.
int cmd_demo(const RunConfig& cfg, std::ostream& out, std::ostream& err);

/// Crafted (or, with target_tag, targeted) adversarial attention for one
/// head. The report goes to cfg.out when set, to `out` otherwise.
int cmd_adversarial(const RunConfig& cfg, std::ostream& out, std::ostream& err);

/// Loads the dump, profiles it and serves the JSON API until stopped.
int cmd_serve(const RunConfig& cfg, std::ostream& out, std::ostream& err);

/// Full command line: `<prog> <analyze|demo-model|adversarial|serve> [flags]`.
/// Library errors are reported as JSON on `err` with exit code 2.
int run_cli(int argc, const char* const* argv, std::ostream& out, std::ostream& err);

}  // namespace headscope
