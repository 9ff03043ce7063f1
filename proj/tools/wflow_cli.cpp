#include <iostream>
#include <string>

#include <CLI11.hpp>

#include "wflow/cli.hpp"

int main(int argc, char** argv) {
  CLI::App app{"Accelerated particle flows on probability measures"};
  app.require_subcommand(1);

  wflow::cli::Options opt;
  std::string config;
  std::string out_dir;
  bool inject = false;

  auto* run = app.add_subcommand("run", "integrate every method in a config and write traces, summary and gap.svg");
  run->add_option("config", config, "config file")->required();
  run->add_flag("--paper-scale", opt.paper_scale, "use the full problem dimensions");
  run->add_option("-o,--output-dir", out_dir, "override the config's output_dir");

  auto* sweep = app.add_subcommand("sweep", "steps needed to reach each gap level");
  sweep->add_option("config", config, "config file")->required();
  sweep->add_flag("--paper-scale", opt.paper_scale, "use the full problem dimensions");
  sweep->add_option("-o,--output-dir", out_dir, "override the config's output_dir");

  auto* verify = app.add_subcommand("verify", "run the built-in invariant checks");
  verify->add_flag("--inject-blob-sign-error", inject, "corrupt the blob-KL gradient (checks that the suite notices)");

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int code = app.exit(e);
    return code == 0 ? 0 : wflow::cli::kConfigError;
  }
  if (!out_dir.empty()) opt.output_dir = out_dir;

  if (run->parsed()) return wflow::cli::cmd_run(config, opt, std::cout, std::cerr);
  if (sweep->parsed()) return wflow::cli::cmd_sweep(config, opt, std::cout, std::cerr);
  wflow::verify::Options vo;
  vo.inject_blob_sign_error = inject;
  return wflow::cli::cmd_verify(vo, std::cout);
}
