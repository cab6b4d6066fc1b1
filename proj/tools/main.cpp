#include <iostream>
#include <string>
#include <utility>
#include <vector>

#include "shine/commands.hpp"
#include "shine/run_config.hpp"

namespace {

void print_usage(std::ostream& os) {
  os << "usage: shine <command> <config-file> [--key value ...]\n"
        "\n"
        "commands:\n"
        "  preprocess    write vocab.tsv and split.json\n"
        "  build-graphs  dump the word/pos/entity graphs, poolings, and node lists\n"
        "  train         train a model; writes checkpoint.bin, runlog.csv, metrics.json\n"
        "  eval          score a checkpoint against the saved split\n"
        "  ablate        train every variant in `variants`; writes ablations.csv\n"
        "  sweep         train per value of `sweep_param`; writes sweep.csv\n"
        "\n"
        "Any config key can be overridden on the command line, e.g. --seed 7.\n"
        "Recognized keys:\n";
  os << " ";
  for (const std::string& k : shine::run_config_keys()) os << ' ' << k;
  os << '\n';
}

}  // namespace

int main(int argc, char** argv) {
  if (argc >= 2 && (std::string(argv[1]) == "--help" || std::string(argv[1]) == "-h")) {
    print_usage(std::cout);
    return 0;
  }
  if (argc < 3) {
    print_usage(std::cerr);
    return 2;
  }

  std::string command = argv[1];
  std::string config_path = argv[2];
  std::vector<std::pair<std::string, std::string>> overrides;
  for (int i = 3; i < argc; ++i) {
    std::string arg = argv[i];
    if (arg.size() <= 2 || arg.rfind("--", 0) != 0) {
      std::cerr << "error: expected --key value pairs after the config file, got '" << arg << "'\n";
      return 2;
    }
    if (i + 1 >= argc) {
      std::cerr << "error: override '" << arg << "' needs a value\n";
      return 2;
    }
    overrides.emplace_back(arg.substr(2), argv[++i]);
  }

  try {
    shine::RunConfig cfg = shine::load_run_config(config_path, overrides);
    shine::run_command(command, cfg, std::cout);
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << '\n';
    return 1;
  }
  return 0;
}
