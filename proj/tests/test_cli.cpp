#include <sys/wait.h>
#include <unistd.h>

#include <cmath>
#include <cstdlib>
#include <cstring>
#include <filesystem>
#include <fstream>
#include <sstream>

#include "doctest.h"
#include "oracles.hpp"
#include "upa/artifact.hpp"
#include "upa/autodiff.hpp"
#include "upa/commands.hpp"
#include "upa/config.hpp"
#include "upa/errors.hpp"
#include "upa/gradcheck.hpp"

namespace fs = std::filesystem;
using namespace upa;

namespace {

const char* kSmallConfig = R"(# quick run
attack.epochs = 1
attack.outer_steps = 2
attack.inner_steps = 1
train.count = 4
eval.count = 3
eval.placements = 2
analysis.pairs = 40
)";

fs::path scratch(const std::string& name) {
  const fs::path p = fs::temp_directory_path() / ("upa_cli_" + std::to_string(::getpid())) / name;
  fs::remove_all(p);
  fs::create_directories(p);
  return p;
}

std::string slurp(const fs::path& p) {
  std::ifstream f(p, std::ios::binary);
  std::ostringstream ss;
  ss << f.rdbuf();
  return ss.str();
}

void spit(const fs::path& p, const std::string& text) {
  std::ofstream f(p, std::ios::binary);
  f << text;
}

std::size_t line_count(const std::string& s) { return static_cast<std::size_t>(std::count(s.begin(), s.end(), '\n')); }

commands::Options options(const fs::path& config, const fs::path& out) {
  commands::Options o;
  o.config_path = config.string();
  o.out_path = out.string();
  return o;
}

int run_cli(const std::string& args) {
  const std::string cmd = std::string(UPA_CLI_PATH) + " " + args + " >/dev/null 2>&1";
  const int status = std::system(cmd.c_str());
  return WIFEXITED(status) ? WEXITSTATUS(status) : -1;
}

}  // namespace

TEST_CASE("config parsing and resolution") {
  const config::RunConfig defaults = config::parse_config("");
  CHECK(defaults.surrogate == policy::PolicySpec::surrogate_default());
  CHECK(defaults.probe_phrases == losses::probe_phrases(losses::ProbeSet::kCombined));
  CHECK(defaults.attack.area_budget == 65.0);
  CHECK(defaults.train.count == 16);

  SUBCASE("manifest lists every key and parses back") {
    const std::string m = config::manifest(defaults);
    for (const auto& k : config::keys()) CHECK(m.find(k + " = ") != std::string::npos);
    CHECK(line_count(m) == config::keys().size());
    CHECK(config::manifest(config::parse_config(m)) == m);
  }
  SUBCASE("values and comments") {
    const auto c = config::parse_config("  # comment\n\nloss.margin = 0.125\nattack.master_seed=7\neval.theta_act = 0.3\n");
    CHECK(c.attack.weights.margin == 0.125);
    CHECK(c.attack.master_seed == 7);
    CHECK(c.eval.theta_act == 0.3);
    CHECK_FALSE(config::parse_config("eval.theta_act = auto").eval.theta_act.has_value());
  }
  SUBCASE("errors name the offending key") {
    CHECK_THROWS_WITH_AS(config::parse_config("loss.lambda_pda = 1"), doctest::Contains("loss.lambda_pda"), ConfigError);
    CHECK_THROWS_WITH_AS(config::parse_config("attack.epochs = 2\nattack.epochs = 3"), doctest::Contains("attack.epochs"),
                         ConfigError);
    CHECK_THROWS_WITH_AS(config::parse_config("attack.epochs = many"), doctest::Contains("attack.epochs"), ConfigError);
    CHECK_THROWS_WITH_AS(config::parse_config("attack.area_budget = 64"), doctest::Contains("area budget"), ConfigError);
    CHECK_THROWS_AS(config::parse_config("no equals sign"), ConfigError);
    CHECK_THROWS_AS(config::parse_config("eval.seed = 100"), ConfigError);
    CHECK_THROWS_AS(config::parse_config("victim.image_height = 16\nvictim.image_width = 16"), ConfigError);
    CHECK_THROWS_AS(config::parse_config("probes.set = verbs"), ConfigError);
    CHECK_THROWS_AS(config::parse_config("probes.set = custom"), ConfigError);
    CHECK_THROWS_AS(config::parse_config("analysis.pairs = 20"), ConfigError);
  }
  SUBCASE("probe sets") {
    const auto d = config::parse_config("probes.set = direction");
    CHECK(d.probe_phrases == losses::probe_phrases(losses::ProbeSet::kDirection));
    CHECK(config::manifest(d).find("probes.phrases = left, right, bottom, back, middle, top, front") != std::string::npos);
    const auto c = config::parse_config("probes.set = custom\nprobes.phrases = grab, shove");
    CHECK(c.probe_phrases == std::vector<std::string>{"grab", "shove"});
  }
  SUBCASE("model distinctness") {
    CHECK_NOTHROW(config::require_distinct_models(defaults));
    CHECK_THROWS_AS(config::require_distinct_models(config::parse_config("victim.seed = 1")), ConfigError);
  }
  SUBCASE("hash ignores the output directory") {
    CHECK(config::config_hash(defaults) == config::config_hash(config::parse_config("output.dir = elsewhere")));
    CHECK(config::config_hash(defaults) != config::config_hash(config::parse_config("loss.margin = 0.1")));
    CHECK(config::config_hash(defaults).size() == 16);
  }
  SUBCASE("doubles print in shortest round-trip form") {
    for (double v : {0.1, 8.0 / 255.0, 1e-8, 65.0, -2.5})
      CHECK(std::stod(config::format_double(v)) == v);
    CHECK(config::format_double(0.5) == "0.5");
  }
}

TEST_CASE("patch artifact") {
  Rng rng(1);
  const config::RunConfig cfg = config::parse_config("");
  const render::PatchTexture patch = render::PatchTexture::uniform_random(8, 8, rng);
  const artifact::PatchArtifact art{patch, artifact::make_metadata(cfg)};
  const auto bytes = artifact::encode(art);

  SUBCASE("layout") {
    CHECK(std::string(bytes.begin(), bytes.begin() + 4) == "UPAF");
    auto u32 = [&](std::size_t off) {
      return std::uint32_t(bytes[off]) | std::uint32_t(bytes[off + 1]) << 8 | std::uint32_t(bytes[off + 2]) << 16 |
             std::uint32_t(bytes[off + 3]) << 24;
    };
    CHECK(u32(4) == 1);
    CHECK(u32(8) == 8);
    CHECK(u32(12) == 8);
    const std::size_t meta = 16 + 192 * 4;
    CHECK(u32(meta) == art.metadata.size());
    CHECK(bytes.size() == meta + 4 + art.metadata.size());
    CHECK(art.metadata.find("\"config_hash\"") != std::string::npos);
    CHECK(art.metadata.find(config::config_hash(cfg)) != std::string::npos);
    CHECK(art.metadata.find("\"master_seed\"") != std::string::npos);
    CHECK(art.metadata.find("\"loss_weights\"") != std::string::npos);
  }
  SUBCASE("round trip at 32-bit precision") {
    const auto back = artifact::decode(bytes);
    CHECK(back.metadata == art.metadata);
    for (std::size_t i = 0; i < patch.texels().size(); ++i)
      CHECK(back.patch.texels()[i] == static_cast<double>(static_cast<float>(patch.texels()[i])));
    CHECK(artifact::encode(back) == bytes);
  }
  SUBCASE("malformed input") {
    auto bad = bytes;
    bad[0] = 'X';
    CHECK_THROWS_WITH_AS(artifact::decode(bad), doctest::Contains("magic"), ArtifactError);
    bad = bytes;
    bad[4] = 2;
    CHECK_THROWS_WITH_AS(artifact::decode(bad), doctest::Contains("version"), ArtifactError);
    CHECK_THROWS_AS(artifact::decode({bytes.begin(), bytes.begin() + 100}), ArtifactError);
    bad = bytes;
    bad.push_back(0);
    CHECK_THROWS_AS(artifact::decode(bad), ArtifactError);
    bad = bytes;
    const float big = 1.5f;
    std::memcpy(bad.data() + 16, &big, 4);
    CHECK_THROWS_AS(artifact::decode(bad), ArtifactError);
    bad = bytes;
    bad[bad.size() - 1] = '{';
    CHECK_THROWS_AS(artifact::decode(bad), ArtifactError);
    CHECK_THROWS_AS(artifact::load("/nonexistent/patch.upaf"), ArtifactError);
  }
  SUBCASE("save and load") {
    const fs::path dir = scratch("artifact");
    artifact::save(art, (dir / "p.upaf").string());
    CHECK(artifact::encode(artifact::load((dir / "p.upaf").string())) == bytes);
  }
}

TEST_CASE("PPM export") {
  SUBCASE("mid-gray quantizes to 128") {
    const auto ppm = artifact::encode_ppm(render::PatchTexture::filled(8, 8, 0.5));
    const std::string header = "P6\n8 8\n255\n";
    REQUIRE(ppm.size() == header.size() + 192);
    CHECK(std::string(ppm.begin(), ppm.begin() + static_cast<long>(header.size())) == header);
    for (std::size_t i = header.size(); i < ppm.size(); ++i) CHECK(ppm[i] == 128);
  }
  SUBCASE("upscaled copy repeats texels") {
    Rng rng(2);
    const auto patch = render::PatchTexture::uniform_random(3, 2, rng);
    const auto ppm = artifact::encode_ppm(patch, 3);
    const std::string header = "P6\n6 9\n255\n";
    REQUIRE(ppm.size() == header.size() + 9 * 6 * 3);
    for (std::size_t y = 0; y < 9; ++y)
      for (std::size_t x = 0; x < 6; ++x)
        for (std::size_t c = 0; c < 3; ++c)
          CHECK(ppm[header.size() + (y * 6 + x) * 3 + c] ==
                static_cast<std::uint8_t>(std::nearbyint(patch.texels().at(y / 3, x / 3, c) * 255.0)));
  }
  SUBCASE("re-import error is within half a quantization step") {
    Rng rng(3);
    const fs::path dir = scratch("ppm");
    const auto patch = render::PatchTexture::uniform_random(8, 8, rng);
    artifact::write_ppm(patch, (dir / "p.ppm").string());
    const auto back = artifact::read_ppm((dir / "p.ppm").string());
    CHECK((back.texels() - patch.texels()).max_abs() <= 1.0 / 510.0 + 1e-15);
    spit(dir / "bad.ppm", "P3\n1 1\n255\n0 0 0\n");
    CHECK_THROWS_AS(artifact::read_ppm((dir / "bad.ppm").string()), ArtifactError);
  }
}

TEST_CASE("train, eval and export commands") {
  const fs::path dir = scratch("pipeline");
  spit(dir / "small.cfg", kSmallConfig);
  std::ostringstream out, err;

  REQUIRE(commands::train(options(dir / "small.cfg", dir / "a"), out, err) == 0);
  for (const char* f : {"patch.upaf", "history.csv", "manifest.txt"}) CHECK(fs::exists(dir / "a" / f));
  const std::string history = slurp(dir / "a" / "history.csv");
  CHECK(history.rfind("epoch,batch,outer_index,j_out,l1,con,pad,psm\n", 0) == 0);
  CHECK(line_count(history) == 1 + 2);
  CHECK(out.str().find("steps = 2") != std::string::npos);
  CHECK(slurp(dir / "a" / "manifest.txt") ==
        config::manifest(config::parse_config(std::string(kSmallConfig) + "output.dir = " + (dir / "a").string())));

  SUBCASE("rerun reproduces the artifact byte for byte") {
    REQUIRE(commands::train(options(dir / "small.cfg", dir / "b"), out, err) == 0);
    CHECK(slurp(dir / "a" / "patch.upaf") == slurp(dir / "b" / "patch.upaf"));
    CHECK(slurp(dir / "a" / "history.csv") == slurp(dir / "b" / "history.csv"));
  }
  SUBCASE("seed override changes the patch") {
    auto o = options(dir / "small.cfg", dir / "c");
    o.seed_override = 5;
    REQUIRE(commands::train(o, out, err) == 0);
    CHECK(slurp(dir / "a" / "patch.upaf") != slurp(dir / "c" / "patch.upaf"));
    CHECK(slurp(dir / "c" / "manifest.txt").find("attack.master_seed = 5") != std::string::npos);
  }
  SUBCASE("eval writes n*m + 3 rows and is deterministic") {
    REQUIRE(commands::eval(options(dir / "small.cfg", dir / "a"), out, err) == 0);
    const std::string csv = slurp(dir / "a" / "transfer.csv");
    CHECK(line_count(csv) == 1 + 3 * 2 + 3);
    CHECK(csv.find("summary,learned") != std::string::npos);
    CHECK(csv.find("summary,random") != std::string::npos);
    CHECK(csv.find("summary,blank") != std::string::npos);
    const std::string txt = slurp(dir / "a" / "transfer.txt");
    CHECK(txt.find("theta_act = ") != std::string::npos);
    REQUIRE(commands::eval(options(dir / "small.cfg", dir / "a"), out, err) == 0);
    CHECK(slurp(dir / "a" / "transfer.csv") == csv);
  }
  SUBCASE("eval rejects a corrupted artifact with the artifact exit code") {
    std::string bytes = slurp(dir / "a" / "patch.upaf");
    bytes[1] = 'Q';
    spit(dir / "broken.upaf", bytes);
    auto o = options(dir / "small.cfg", dir / "a");
    o.patch_path = (dir / "broken.upaf").string();
    CHECK(commands::eval(o, out, err) == kExitArtifact);
    CHECK(err.str().find("magic") != std::string::npos);
  }
  SUBCASE("eval refuses an eval set that overlaps training") {
    spit(dir / "overlap.cfg", std::string(kSmallConfig) + "eval.seed = 101\ntrain.seed = 101\n");
    CHECK(commands::eval(options(dir / "overlap.cfg", dir / "a"), out, err) == kExitConfig);
  }
  SUBCASE("export") {
    commands::Options o;
    o.patch_path = (dir / "a" / "patch.upaf").string();
    o.out_path = (dir / "patch.ppm").string();
    o.scale = 4;
    REQUIRE(commands::export_ppm(o, out, err) == 0);
    CHECK(slurp(dir / "patch.ppm").size() == std::string("P6\n8 8\n255\n").size() + 192);
    CHECK(slurp(dir / "patch_x4.ppm").rfind("P6\n32 32\n255\n", 0) == 0);
    o.patch_path.clear();
    CHECK(commands::export_ppm(o, out, err) == kExitConfig);
  }
}

TEST_CASE("train rejects bad configs before any compute") {
  const fs::path dir = scratch("rejects");
  std::ostringstream out, err;
  spit(dir / "budget.cfg", "attack.patch_height = 9\nattack.patch_width = 9\nattack.area_budget = 81\n");
  CHECK(commands::train(options(dir / "budget.cfg", dir / "out"), out, err) == kExitConfig);
  CHECK(err.str().find("area budget") != std::string::npos);
  CHECK_FALSE(fs::exists(dir / "out" / "manifest.txt"));

  spit(dir / "typo.cfg", "loss.lamda_psm = 0.5\n");
  CHECK(commands::train(options(dir / "typo.cfg", dir / "out"), out, err) == kExitConfig);
  CHECK(err.str().find("loss.lamda_psm") != std::string::npos);

  spit(dir / "same.cfg", "victim.seed = 1\n");
  CHECK(commands::train(options(dir / "same.cfg", dir / "out"), out, err) == kExitConfig);

  spit(dir / "dir.cfg", "probes.set = direction\nattack.epochs = 1\nattack.outer_steps = 1\nattack.inner_steps = 0\ntrain.count = 1\n");
  REQUIRE(commands::train(options(dir / "dir.cfg", dir / "dir"), out, err) == 0);
  CHECK(slurp(dir / "dir" / "manifest.txt").find("left, right, bottom, back, middle, top, front") != std::string::npos);
}

TEST_CASE("analyze command") {
  const fs::path dir = scratch("analyze");
  std::ostringstream out, err;
  spit(dir / "small.cfg", kSmallConfig);
  REQUIRE(commands::analyze(options(dir / "small.cfg", dir / "a"), out, err) == 0);
  const std::string txt = slurp(dir / "a" / "analysis.txt");
  for (const char* key : {"sigma_min = ", "eps_e = ", "r_squared = ", "cca = ", "l2_satisfied = 40", "l1_satisfied = 40"})
    CHECK(txt.find(key) != std::string::npos);
  CHECK(line_count(slurp(dir / "a" / "bounds.csv")) == 41);

  // victim identical to the surrogate
  std::string self = kSmallConfig;
  const auto s = policy::PolicySpec::surrogate_default();
  self += "victim.seed = " + std::to_string(s.seed) + "\nvictim.branch_width_a = 16\nvictim.branch_width_b = 16\n";
  self += "victim.vision_depth = 2\nvictim.token_dim = 32\nvictim.backbone_depth = 4\nvictim.heads = 4\n";
  spit(dir / "self.cfg", self);
  REQUIRE(commands::analyze(options(dir / "self.cfg", dir / "self"), out, err) == 0);
  const std::string st = slurp(dir / "self" / "analysis.txt");
  const auto pos = st.find("r_squared = ");
  REQUIRE(pos != std::string::npos);
  CHECK(std::abs(std::stod(st.substr(pos + 12)) - 1.0) < 1e-6);
}

TEST_CASE("gradcheck command") {
  std::ostringstream out, err;
  CHECK(commands::gradcheck(out, err) == 0);
  std::istringstream lines(out.str());
  std::vector<std::string> names;
  std::string name, eq;
  double v = 0.0;
  while (lines >> name >> eq >> eq >> v) {
    names.push_back(name);
    CHECK(v < gradcheck::kTolerance);
  }
  CHECK(names == std::vector<std::string>{"l1", "infonce", "pad", "psm", "j_out"});

  const ad::testing::ScopedAdjointFault fault(ad::OpKind::kMatMul, 1.01);
  std::ostringstream out2, err2;
  CHECK(commands::gradcheck(out2, err2) == kExitVerification);
}

TEST_CASE("binary exit codes") {
  const fs::path dir = scratch("binary");
  spit(dir / "typo.cfg", "attack.epoch = 2\n");
  spit(dir / "junk.upaf", "not an artifact");
  CHECK(run_cli("train --config " + (dir / "typo.cfg").string() + " --out " + (dir / "o").string()) == kExitConfig);
  CHECK(run_cli("export --patch " + (dir / "junk.upaf").string() + " --out " + (dir / "x.ppm").string()) == kExitArtifact);
  CHECK(run_cli("frobnicate") == kExitConfig);
  CHECK(run_cli("train --config /nonexistent.cfg") == kExitConfig);
}
