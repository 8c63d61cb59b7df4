// SPDX-License-Identifier: Apache-2.0
//
// fbsnn train    --config <file>
// fbsnn evaluate --config <file> --checkpoint <file>
// fbsnn export   --checkpoint <file>

#include <iostream>
#include <string>

#include "CLI11.hpp"
#include "fbsnn/allocator.hpp"
#include "fbsnn/commands.hpp"
#include "fbsnn/config.hpp"

namespace {

int with_config(const std::string& path, const char* command,
                const std::function<int(fbsnn::RunConfig&)>& body) {
  fbsnn::RunConfig cfg;
  try {
    cfg = fbsnn::parse_config(path);
    cfg.train.threads = fbsnn::worker_count();
  } catch (const fbsnn::ConfigError& e) {
    std::cerr << "fbsnn " << command << ": configuration error: " << e.what()
              << '\n';
    return fbsnn::kExitConfig;
  }
  return body(cfg);
}

}  // namespace

int main(int argc, char** argv) {
  fbsnn::keep_large_blocks_on_heap();
  CLI::App app{"Deep FBSDE solver for high-dimensional parabolic PDEs", "fbsnn"};
  app.require_subcommand(1);

  std::string config;
  std::string checkpoint;

  auto* train = app.add_subcommand("train", "train a network from a config file");
  train->add_option("--config", config, "run configuration")->required();

  auto* evaluate =
      app.add_subcommand("evaluate", "evaluate a checkpoint on fresh test paths");
  evaluate->add_option("--config", config, "run configuration")->required();
  evaluate->add_option("--checkpoint", checkpoint, "trained checkpoint")->required();

  auto* dump = app.add_subcommand("export", "print checkpoint metadata and tensor norms");
  dump->add_option("--checkpoint", checkpoint, "checkpoint file")->required();

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int rc = app.exit(e);
    return rc == 0 ? 0 : fbsnn::kExitConfig;
  }

  if (train->parsed()) {
    return with_config(config, "train", [](fbsnn::RunConfig& cfg) {
      return fbsnn::cmd_train(cfg, std::cout, std::cerr);
    });
  }
  if (evaluate->parsed()) {
    return with_config(config, "evaluate", [&](fbsnn::RunConfig& cfg) {
      return fbsnn::cmd_evaluate(cfg, checkpoint, std::cout, std::cerr);
    });
  }
  return fbsnn::cmd_export(checkpoint, std::cout, std::cerr);
}
