#pragma once

// CLI command bodies. Each returns a process exit code (see errors.hpp) and
// never throws; diagnostics go to err, summaries to out.
//
// Files written under the output directory:
//   train    patch.upaf, history.csv, manifest.txt
//   eval     transfer.csv, transfer.txt
//   analyze  analysis.txt, bounds.csv
//   export   <out>.ppm and, with scale > 1, <out>_x<scale>.ppm

#include <cstddef>
#include <cstdint>
#include <optional>
#include <ostream>
#include <string>

namespace upa::commands {

struct Options {
  std::string config_path;  // empty: all defaults
  std::string patch_path;   // empty: <output dir>/patch.upaf
  std::string out_path;     // overrides output.dir (export: the PPM path)
  std::optional<std::uint64_t> seed_override;  // replaces attack.master_seed
  std::size_t scale = 1;    // export upscale factor
};

int train(const Options& opt, std::ostream& out, std::ostream& err);
int eval(const Options& opt, std::ostream& out, std::ostream& err);
int analyze(const Options& opt, std::ostream& out, std::ostream& err);
int gradcheck(std::ostream& out, std::ostream& err);
int export_ppm(const Options& opt, std::ostream& out, std::ostream& err);

}  // namespace upa::commands
