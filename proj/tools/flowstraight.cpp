// Copyright (c) 2026, flowstraight authors
// SPDX-License-Identifier: Apache-2.0
//
// flowstraight: command-line driver for training, reflow, distillation,
// sampling, evaluation and standalone solver studies.

#include "flowstraight/cli/commands.hpp"

#include <CLI11.hpp>

#include <cstdio>
#include <functional>
#include <iostream>

namespace cli = flowstraight::cli;

namespace {

void add_common(CLI::App* sub, cli::Options& o) {
  sub->add_option("--config", o.config, "Run configuration (JSON)")->required();
  sub->add_option("--seed", o.seed, "Override the config seed");
  sub->add_option("--out", o.out, "Run directory (overrides output_dir)");
  sub->add_option("--checkpoint", o.checkpoint, "Input checkpoint (.fsck)");
  sub->add_option("--k", o.k, "Number of time segments K");
  sub->add_option("--nfe", o.nfe, "Comma-separated NFE list")->delimiter(',');
  sub->add_option("--solver", o.solver, "euler|heun|rk4|rk45, or distilled (one Euler step per segment)");
  sub->add_option("--tol", o.tol, "Absolute and relative tolerance for rk45");
  sub->add_option("--pairs", o.pairs, "Pair dataset (.fspd) for distill or variance evaluation");
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"flowstraight: rectified flow and sequential reflow at desk scale"};
  app.require_subcommand(1);
  app.set_version_flag("--version", std::string(FLOWSTRAIGHT_VERSION));
  app.footer(
      "Subcommand flags:\n"
      "  --config PATH        Run configuration (JSON), required\n"
      "  --seed N             Override the config seed\n"
      "  --out DIR            Run directory (overrides output_dir)\n"
      "  --checkpoint PATH    Input checkpoint (.fsck)\n"
      "  --k K                Number of time segments K\n"
      "  --nfe LIST           Comma-separated NFE list\n"
      "  --solver NAME        euler|heun|rk4|rk45, or distilled\n"
      "  --tol X              Absolute and relative tolerance for rk45\n"
      "  --pairs PATH         Pair dataset (.fspd)\n"
      "\n"
      "Environment: FLOWSTRAIGHT_THREADS caps worker threads.\n"
      "Exit codes: 0 ok, 2 configuration, 3 data or format, 4 numeric divergence, 1 internal.");

  cli::Options opt;
  std::function<std::filesystem::path(const cli::Options&)> action;
  struct Entry {
    const char* name;
    const char* help;
    std::filesystem::path (*fn)(const cli::Options&);
  };
  const Entry entries[] = {
      {"train", "Stage 1: train a rectified-flow model", cli::cmd_train},
      {"reflow", "Stage 2: generate K-segment pairs from --checkpoint and fine-tune on them", cli::cmd_reflow},
      {"distill", "Per-segment distillation of --checkpoint (pairs from --pairs or generated)", cli::cmd_distill},
      {"sample", "Draw samples from a model or configured field", cli::cmd_sample},
      {"eval", "Compute the configured metric set as CSVs", cli::cmd_eval},
      {"solve", "Solve the configured IVP and report truncation errors", cli::cmd_solve},
      {"recipe", "Run a bundled end-to-end trend recipe", cli::cmd_recipe},
  };
  for (const auto& e : entries) {
    auto* sub = app.add_subcommand(e.name, e.help);
    add_common(sub, opt);
    sub->callback([&action, fn = e.fn] { action = fn; });
  }

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int rc = app.exit(e);
    return rc == 0 ? 0 : cli::kConfig;
  }
  try {
    const auto dir = action(opt);
    std::cout << dir.string() << "\n";
    return cli::kOk;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return cli::exit_code_for(e);
  }
}
