#include <cstdint>
#include <iostream>

#include "CLI11.hpp"
#include "upa/commands.hpp"
#include "upa/errors.hpp"

int main(int argc, char** argv) {
  CLI::App app{"Universal transferable adversarial patch lab"};
  app.require_subcommand(1);

  upa::commands::Options opt;
  std::uint64_t seed = 0;

  auto* train = app.add_subcommand("train", "optimize a patch against the surrogate");
  auto* eval = app.add_subcommand("eval", "measure patch transfer to the victim");
  auto* analyze = app.add_subcommand("analyze", "fit the surrogate-to-victim alignment and check the transfer bound");
  auto* gradcheck = app.add_subcommand("gradcheck", "verify analytic gradients against finite differences");
  auto* exp = app.add_subcommand("export", "write a patch as a binary PPM image");

  for (auto* sub : {train, eval, analyze}) {
    sub->add_option("--config", opt.config_path, "run config file (defaults if omitted)")->check(CLI::ExistingFile);
    sub->add_option("--out", opt.out_path, "output directory (overrides output.dir)");
    sub->add_option("--seed-override", seed, "replace attack.master_seed");
  }
  for (auto* sub : {eval, analyze, exp}) sub->add_option("--patch", opt.patch_path, "patch artifact (.upaf)");
  exp->add_option("--out", opt.out_path, "PPM output path")->required();
  exp->add_option("--scale", opt.scale, "also write a nearest-neighbour upscaled copy")->check(CLI::PositiveNumber);

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int code = app.exit(e);
    return code == 0 ? 0 : upa::kExitConfig;
  }
  for (auto* sub : {train, eval, analyze})
    if (sub->parsed() && sub->count("--seed-override")) opt.seed_override = seed;

  if (train->parsed()) return upa::commands::train(opt, std::cout, std::cerr);
  if (eval->parsed()) return upa::commands::eval(opt, std::cout, std::cerr);
  if (analyze->parsed()) return upa::commands::analyze(opt, std::cout, std::cerr);
  if (gradcheck->parsed()) return upa::commands::gradcheck(std::cout, std::cerr);
  return upa::commands::export_ppm(opt, std::cout, std::cerr);
}
