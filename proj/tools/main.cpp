#include <CLI11.hpp>

#include <iostream>
#include <string>
#include <vector>

#include "commands.hpp"

int main(int argc, char** argv) {
  CLI::App app{"Max-plus fundamental-solution propagation for operator Riccati equations"};
  app.require_subcommand(1);
  app.fallthrough();

  std::string config_path;
  std::string out = "out";
  std::uint64_t seed = 1;
  int threads = 1;
  std::vector<std::string> overrides;
  app.add_option("--config", config_path, "key=value configuration file");
  app.add_option("--out", out, "output directory")->capture_default_str();
  app.add_option("--seed", seed, "seed for random initial data and probes")->capture_default_str();
  app.add_option("--threads", threads, "worker threads for batch reconstruction")
      ->check(CLI::Range(1, 256))
      ->capture_default_str();
  app.add_option("--set", overrides, "override a config entry, key=value (repeatable)");

  mpr::cli::SolveArgs solve_args;
  auto* solve = app.add_subcommand("solve", "integrate the seed system or P~ from M~");
  solve->add_option("--t", solve_args.t, "horizon");
  solve->add_option("--target", solve_args.target, "seed | direct");

  mpr::cli::RecipeArgs recipe_args;
  auto* recipe = app.add_subcommand("recipe", "seed kernel, iteration and reconstruction");
  recipe->add_option("--t", recipe_args.t, "horizon");
  recipe->add_option("--kappa", recipe_args.kappa, "number of seed steps");
  recipe->add_option("--mode", recipe_args.mode, "linear | doubling");

  auto* bench = app.add_subcommand("bench", "error versus wall time sweep");

  mpr::cli::VerifyArgs verify_args;
  auto* verify = app.add_subcommand("verify", "run the consistency checks");
  verify->add_option("--only", verify_args.only, "run a single check by name");
  verify->add_option("--trajectory", verify_args.trajectory, "saved seed trajectory to check");

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int code = app.exit(e);
    return code == 0 ? 0 : 2;
  }

  try {
    mpr::cli::Globals g;
    if (!config_path.empty()) g.config = mpr::Config::load(config_path);
    for (const auto& kv : overrides) {
      const auto eq = kv.find('=');
      if (eq == std::string::npos) throw mpr::ConfigError("--set: expected key=value, got '" + kv + "'");
      g.config.set(mpr::detail::trim(kv.substr(0, eq)), mpr::detail::trim(kv.substr(eq + 1)));
    }
    g.out = out;
    g.seed = seed;
    g.threads = threads;
    if (*solve) return mpr::cli::cmd_solve(g, solve_args);
    if (*recipe) return mpr::cli::cmd_recipe(g, recipe_args);
    if (*bench) return mpr::cli::cmd_bench(g);
    if (*verify) return mpr::cli::cmd_verify(g, verify_args);
  } catch (const mpr::Error& e) {
    std::cerr << "error: " << e.what() << '\n';
    return e.exit_code();
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << '\n';
    return 1;
  }
  return 0;
}
