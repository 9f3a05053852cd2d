#include "cli/cli.hpp"

#include <CLI11.hpp>
#include <iostream>
#include <memory>

#include "cli/commands.hpp"
#include "cxrnet/error.hpp"

namespace cxr::cli {

int run(const std::vector<std::string>& args) {
  CLI::App app{"cxrnet: lung segmentation and Covid classification of chest X-rays"};
  app.require_subcommand(1);
  app.set_help_all_flag("--help-all", "Help for every subcommand");

  struct Bound {
    const Command* cmd;
    CLI::App* sub;
    std::unique_ptr<Settings> settings;
    std::uint64_t seed = 0;
  };
  std::vector<Bound> bound;
  bound.reserve(commands().size());
  for (const Command& c : commands()) {
    Bound b{&c, app.add_subcommand(c.name, c.help), std::make_unique<Settings>()};
    c.declare(*b.settings);
    b.settings->bind(*b.sub);
    bound.push_back(std::move(b));
  }
  for (Bound& b : bound)
    if (b.cmd->randomized) b.sub->add_option("--seed", b.seed, "Random seed")->required();

  std::vector<std::string> reversed(args.rbegin(), args.rend());
  try {
    app.parse(reversed);
  } catch (const CLI::CallForHelp& e) {
    return app.exit(e);
  } catch (const CLI::CallForAllHelp& e) {
    return app.exit(e);
  } catch (const CLI::ParseError& e) {
    app.exit(e);
    return kUsage;
  }

  for (Bound& b : bound) {
    if (!b.sub->parsed()) continue;
    try {
      b.settings->resolve();
      nlohmann::json cfg = b.settings->resolved();
      if (b.cmd->randomized) cfg["seed"] = b.seed;
      std::cerr << "[cxrnet] " << b.cmd->name << " config " << cfg.dump() << "\n";
      b.cmd->run(*b.settings, b.seed);
      return kOk;
    } catch (const ParameterError& e) {
      std::cerr << "cxrnet " << b.cmd->name << ": parameter error: " << e.what() << "\n";
      return kUsage;
    } catch (const NumericalError& e) {
      std::cerr << "cxrnet " << b.cmd->name << ": numerical failure: " << e.what() << "\n";
      return kNumerical;
    } catch (const Error& e) {
      std::cerr << "cxrnet " << b.cmd->name << ": " << e.what() << "\n";
      return kData;
    } catch (const std::exception& e) {
      std::cerr << "cxrnet " << b.cmd->name << ": " << e.what() << "\n";
      return kData;
    }
  }
  return kUsage;
}

int run(int argc, char** argv) {
  std::vector<std::string> args;
  for (int i = 1; i < argc; ++i) args.emplace_back(argv[i]);
  return run(args);
}

}  // namespace cxr::cli
