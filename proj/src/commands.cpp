#include "upa/commands.hpp"

#include <filesystem>
#include <fstream>
#include <functional>

#include "upa/analysis.hpp"
#include "upa/artifact.hpp"
#include "upa/config.hpp"
#include "upa/dataset.hpp"
#include "upa/errors.hpp"
#include "upa/gradcheck.hpp"
#include "upa/report.hpp"

namespace upa::commands {

namespace fs = std::filesystem;

namespace {

int guarded(std::ostream& err, const std::function<int()>& body) {
  try {
    return body();
  } catch (const ConfigError& e) {
    err << "config error: " << e.what() << "\n";
    return kExitConfig;
  } catch (const ArtifactError& e) {
    err << "artifact error: " << e.what() << "\n";
    return kExitArtifact;
  } catch (const VerificationError& e) {
    err << "verification failed: " << e.what() << "\n";
    return kExitVerification;
  } catch (const std::exception& e) {
    err << "error: " << e.what() << "\n";
    return 1;
  }
}

config::RunConfig load(const Options& opt) {
  config::RunConfig cfg = opt.config_path.empty() ? config::parse_config("") : config::load_config(opt.config_path);
  if (opt.seed_override) cfg.attack.master_seed = *opt.seed_override;
  if (!opt.out_path.empty()) cfg.output_dir = opt.out_path;
  config::resolve(cfg);
  return cfg;
}

fs::path output_dir(const config::RunConfig& cfg) {
  fs::path dir(cfg.output_dir);
  std::error_code ec;
  fs::create_directories(dir, ec);
  if (ec || !fs::is_directory(dir)) throw ConfigError("output.dir '" + cfg.output_dir + "' is not writable");
  return dir;
}

void write_text(const fs::path& path, const std::string& text) {
  std::ofstream f(path, std::ios::binary | std::ios::trunc);
  if (!f) throw std::runtime_error("cannot write '" + path.string() + "'");
  f << text;
  if (!f) throw std::runtime_error("write failed for '" + path.string() + "'");
}

std::string patch_path(const Options& opt, const config::RunConfig& cfg) {
  return opt.patch_path.empty() ? (fs::path(cfg.output_dir) / "patch.upaf").string() : opt.patch_path;
}

}  // namespace

int train(const Options& opt, std::ostream& out, std::ostream& err) {
  return guarded(err, [&] {
    const config::RunConfig cfg = load(opt);
    config::require_distinct_models(cfg);
    const fs::path dir = output_dir(cfg);
    write_text(dir / "manifest.txt", config::manifest(cfg));

    const auto dataset = data::generate(cfg.train);
    const policy::Policy surrogate(cfg.surrogate);
    std::ofstream history(dir / "history.csv", std::ios::binary | std::ios::trunc);
    if (!history) throw std::runtime_error("cannot write history.csv");
    history << report::history_header() << std::flush;
    const attack::RunResult result =
        attack::run_upa_rfas(dataset, surrogate, cfg.attack, cfg.probe_phrases, [&](const attack::StepRecord& s) {
          history << report::history_row(s) << std::flush;
        });

    artifact::save({result.patch, artifact::make_metadata(cfg)}, (dir / "patch.upaf").string());
    const auto& steps = result.history.steps;
    out << "steps = " << steps.size() << "\n";
    if (!steps.empty()) {
      out << "j_out_first = " << config::format_double(steps.front().losses.total) << "\n";
      out << "j_out_last = " << config::format_double(steps.back().losses.total) << "\n";
    }
    out << "patch = " << (dir / "patch.upaf").string() << "\n";
    return static_cast<int>(kExitOk);
  });
}

int eval(const Options& opt, std::ostream& out, std::ostream& err) {
  return guarded(err, [&] {
    const config::RunConfig cfg = load(opt);
    config::require_distinct_models(cfg);
    const artifact::PatchArtifact art = artifact::load(patch_path(opt, cfg));
    const fs::path dir = output_dir(cfg);

    const auto eval_set = data::generate(cfg.eval_dataset());
    const auto train_set = data::generate(cfg.train);
    for (const auto& e : eval_set)
      for (const auto& t : train_set)
        if (e.image == t.image) throw VerificationError("eval set shares an image with the training set");

    const policy::Policy victim(cfg.victim);
    analysis::TransferOptions topt;
    topt.placements = cfg.eval.placements;
    topt.seed = cfg.eval.seed;
    topt.limits = cfg.attack.limits;
    topt.theta_act = cfg.eval.theta_act;
    analysis::AuditLog audit;
    const analysis::TransferMetrics m = analysis::transfer_eval(art.patch, victim, eval_set, topt, &audit);
    for (const auto& [role, op] : audit.entries())
      if (role != "victim") throw VerificationError("transfer evaluation touched the " + role);

    write_text(dir / "transfer.csv", report::transfer_csv(m));
    write_text(dir / "transfer.txt", report::transfer_text(m));
    out << report::transfer_text(m);
    return static_cast<int>(kExitOk);
  });
}

int analyze(const Options& opt, std::ostream& out, std::ostream& err) {
  return guarded(err, [&] {
    const config::RunConfig cfg = load(opt);
    const fs::path dir = output_dir(cfg);
    const policy::Policy surrogate(cfg.surrogate);
    const policy::Policy victim(cfg.victim);
    const auto images = data::generate(cfg.analysis_dataset());

    // A given patch is probed as-is; otherwise a seeded random one of the configured size.
    std::optional<render::PatchTexture> patch;
    if (!opt.patch_path.empty()) {
      patch = artifact::load(opt.patch_path).patch;
    } else {
      Rng rng(derive_seed(cfg.analysis.seed, analysis::kRandomPatchStream));
      patch = render::PatchTexture::uniform_random(cfg.attack.patch_height, cfg.attack.patch_width, rng);
    }
    const analysis::PairFeatures pairs =
        analysis::collect_pairs(surrogate, victim, images, *patch, cfg.attack.limits, cfg.analysis.seed);
    const analysis::AlignmentReport rep = analysis::analyze_pairs(pairs, cfg.analysis.cca_k);

    write_text(dir / "analysis.txt", report::analysis_text(rep, cfg.analysis.pairs));
    write_text(dir / "bounds.csv", report::bounds_csv(rep));
    out << report::analysis_text(rep, cfg.analysis.pairs);
    const std::size_t n = rep.bound_checks.size();
    if (rep.l2_satisfied() != n || rep.l1_satisfied() != n)
      throw VerificationError("transfer lower bound violated on " +
                              std::to_string(n - std::min(rep.l2_satisfied(), rep.l1_satisfied())) + " pairs");
    return static_cast<int>(kExitOk);
  });
}

int gradcheck(std::ostream& out, std::ostream& err) {
  return guarded(err, [&] {
    bool ok = true;
    for (const auto& c : gradcheck::run_suite()) {
      out << c.name << " max_rel_err = " << config::format_double(c.worst) << (c.passed() ? "" : "  FAIL") << "\n";
      ok = ok && c.passed();
    }
    if (!ok) throw VerificationError("gradient check exceeded tolerance");
    return static_cast<int>(kExitOk);
  });
}

int export_ppm(const Options& opt, std::ostream& out, std::ostream& err) {
  return guarded(err, [&] {
    if (opt.patch_path.empty()) throw ConfigError("export needs --patch");
    if (opt.out_path.empty()) throw ConfigError("export needs --out");
    if (opt.scale < 1) throw ConfigError("--scale must be >= 1");
    const artifact::PatchArtifact art = artifact::load(opt.patch_path);
    artifact::write_ppm(art.patch, opt.out_path);
    out << "wrote " << opt.out_path << "\n";
    if (opt.scale > 1) {
      fs::path up(opt.out_path);
      up.replace_filename(up.stem().string() + "_x" + std::to_string(opt.scale) + up.extension().string());
      artifact::write_ppm(art.patch, up.string(), opt.scale);
      out << "wrote " << up.string() << "\n";
    }
    return static_cast<int>(kExitOk);
  });
}

}  // namespace upa::commands
