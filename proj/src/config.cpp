#include "upa/config.hpp"

#include <algorithm>
#include <charconv>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <functional>
#include <set>
#include <sstream>
#include <stdexcept>

#include "upa/errors.hpp"
#include "upa/losses.hpp"

namespace upa::config {

namespace {

std::string trim(const std::string& s) {
  const auto b = s.find_first_not_of(" \t\r\n");
  if (b == std::string::npos) return {};
  const auto e = s.find_last_not_of(" \t\r\n");
  return s.substr(b, e - b + 1);
}

[[noreturn]] void bad_value(const std::string& key, const std::string& value, const std::string& why) {
  throw ConfigError("invalid value for key '" + key + "': '" + value + "' (" + why + ")");
}

std::uint64_t parse_u64(const std::string& key, const std::string& v) {
  std::uint64_t out = 0;
  auto [p, ec] = std::from_chars(v.data(), v.data() + v.size(), out);
  if (ec != std::errc() || p != v.data() + v.size() || v.empty()) bad_value(key, v, "expected a non-negative integer");
  return out;
}

double parse_real(const std::string& key, const std::string& v) {
  double out = 0;
  auto [p, ec] = std::from_chars(v.data(), v.data() + v.size(), out);
  if (ec != std::errc() || p != v.data() + v.size() || v.empty() || !std::isfinite(out))
    bad_value(key, v, "expected a finite real number");
  return out;
}

std::vector<std::string> split_list(const std::string& v) {
  std::vector<std::string> out;
  std::stringstream ss(v);
  std::string item;
  while (std::getline(ss, item, ',')) {
    item = trim(item);
    if (!item.empty()) out.push_back(item);
  }
  return out;
}

std::string join_list(const std::vector<std::string>& items) {
  std::string out;
  for (std::size_t i = 0; i < items.size(); ++i) out += (i ? ", " : "") + items[i];
  return out;
}

struct Field {
  std::string key;
  std::function<void(const std::string&)> set;
  std::function<std::string()> get;
};

Field size_field(std::string key, std::size_t& ref) {
  return {key, [&ref, key](const std::string& v) { ref = static_cast<std::size_t>(parse_u64(key, v)); },
          [&ref] { return std::to_string(ref); }};
}

Field u64_field(std::string key, std::uint64_t& ref) {
  return {key, [&ref, key](const std::string& v) { ref = parse_u64(key, v); }, [&ref] { return std::to_string(ref); }};
}

Field real_field(std::string key, double& ref) {
  return {key, [&ref, key](const std::string& v) { ref = parse_real(key, v); }, [&ref] { return format_double(ref); }};
}

void policy_fields(std::vector<Field>& f, const std::string& prefix, policy::PolicySpec& p) {
  f.push_back(u64_field(prefix + ".seed", p.seed));
  f.push_back(size_field(prefix + ".image_height", p.image_height));
  f.push_back(size_field(prefix + ".image_width", p.image_width));
  f.push_back(size_field(prefix + ".grid", p.grid));
  f.push_back(size_field(prefix + ".branch_width_a", p.branch_width_a));
  f.push_back(size_field(prefix + ".branch_width_b", p.branch_width_b));
  f.push_back(size_field(prefix + ".vision_depth", p.vision_depth));
  f.push_back(size_field(prefix + ".token_dim", p.token_dim));
  f.push_back(size_field(prefix + ".backbone_depth", p.backbone_depth));
  f.push_back(size_field(prefix + ".heads", p.heads));
  f.push_back(size_field(prefix + ".vocab_size", p.vocab_size));
  f.push_back(size_field(prefix + ".action_dim", p.action_dim));
}

std::vector<Field> fields(RunConfig& c) {
  std::vector<Field> f;
  policy_fields(f, "surrogate", c.surrogate);
  policy_fields(f, "victim", c.victim);

  auto& a = c.attack;
  f.push_back(real_field("attack.epsilon_sigma", a.epsilon_sigma));
  f.push_back(real_field("attack.eta_sigma", a.eta_sigma));
  f.push_back(real_field("attack.eta_delta", a.eta_delta));
  f.push_back(real_field("attack.beta1", a.beta1));
  f.push_back(real_field("attack.beta2", a.beta2));
  f.push_back(real_field("attack.adam_eps", a.adam_eps));
  f.push_back(real_field("attack.weight_decay", a.weight_decay));
  f.push_back(size_field("attack.inner_steps", a.inner_steps));
  f.push_back(size_field("attack.outer_steps", a.outer_steps));
  f.push_back(size_field("attack.epochs", a.epochs));
  f.push_back(size_field("attack.batch_size", a.batch_size));
  f.push_back(size_field("attack.patch_height", a.patch_height));
  f.push_back(size_field("attack.patch_width", a.patch_width));
  f.push_back(real_field("attack.area_budget", a.area_budget));
  f.push_back(real_field("attack.max_rotation", a.limits.max_rotation));
  f.push_back(real_field("attack.max_skew", a.limits.max_skew));
  f.push_back(u64_field("attack.master_seed", a.master_seed));

  auto& w = a.weights;
  f.push_back(real_field("loss.lambda_l1", w.lambda_l1));
  f.push_back(real_field("loss.lambda_con", w.lambda_con));
  f.push_back(real_field("loss.lambda_pad", w.lambda_pad));
  f.push_back(real_field("loss.lambda_psm", w.lambda_psm));
  f.push_back(real_field("loss.tau_con", w.tau_con));
  f.push_back(real_field("loss.tau_psm", w.tau_psm));
  f.push_back(real_field("loss.alpha", w.alpha));
  f.push_back(real_field("loss.beta", w.beta));
  f.push_back(real_field("loss.lambda_nonpatch", w.lambda_nonpatch));
  f.push_back(real_field("loss.margin", w.margin));
  f.push_back(real_field("loss.topk_fraction", w.topk_fraction));
  f.push_back(size_field("loss.attn_last_n", w.attn_last_n));

  f.push_back({"probes.set", [&c](const std::string& v) { c.probe_set = v; }, [&c] { return c.probe_set; }});
  f.push_back({"probes.phrases", [&c](const std::string& v) { c.probe_phrases = split_list(v); },
               [&c] { return join_list(c.probe_phrases); }});

  f.push_back(size_field("train.count", c.train.count));
  f.push_back(u64_field("train.seed", c.train.seed));
  f.push_back(size_field("train.min_blocks", c.train.min_blocks));
  f.push_back(size_field("train.max_blocks", c.train.max_blocks));

  f.push_back(size_field("eval.count", c.eval.count));
  f.push_back(u64_field("eval.seed", c.eval.seed));
  f.push_back(size_field("eval.placements", c.eval.placements));
  f.push_back({"eval.theta_act",
               [&c](const std::string& v) {
                 if (v == "auto") {
                   c.eval.theta_act.reset();
                   return;
                 }
                 const double t = parse_real("eval.theta_act", v);
                 if (!(t > 0)) bad_value("eval.theta_act", v, "expected 'auto' or a positive number");
                 c.eval.theta_act = t;
               },
               [&c] { return c.eval.theta_act ? format_double(*c.eval.theta_act) : std::string("auto"); }});

  f.push_back(size_field("analysis.pairs", c.analysis.pairs));
  f.push_back(u64_field("analysis.seed", c.analysis.seed));
  f.push_back(size_field("analysis.cca_k", c.analysis.cca_k));

  f.push_back({"output.dir", [&c](const std::string& v) { c.output_dir = v; }, [&c] { return c.output_dir; }});
  return f;
}

// Runs a validator and rethrows its message as a config error.
template <typename Fn>
void checked(const std::string& section, Fn&& fn) {
  try {
    fn();
  } catch (const std::invalid_argument& e) {
    throw ConfigError(section + ": " + e.what());
  }
}

}  // namespace

data::DatasetSpec RunConfig::eval_dataset() const {
  data::DatasetSpec d = train;
  d.count = eval.count;
  d.seed = eval.seed;
  return d;
}

data::DatasetSpec RunConfig::analysis_dataset() const {
  data::DatasetSpec d = train;
  d.count = analysis.pairs;
  d.seed = analysis.seed;
  return d;
}

std::string format_double(double v) {
  char buf[64];
  auto [p, ec] = std::to_chars(buf, buf + sizeof buf, v);
  return std::string(buf, p);
}

std::vector<std::string> keys() {
  RunConfig c;
  std::vector<std::string> out;
  for (auto& f : fields(c)) out.push_back(f.key);
  return out;
}

RunConfig parse_config(const std::string& text) {
  RunConfig c;
  auto f = fields(c);
  std::set<std::string> seen;
  std::stringstream ss(text);
  std::string line;
  std::size_t lineno = 0;
  while (std::getline(ss, line)) {
    ++lineno;
    line = trim(line);
    if (line.empty() || line[0] == '#') continue;
    const auto eq = line.find('=');
    if (eq == std::string::npos)
      throw ConfigError("line " + std::to_string(lineno) + ": expected 'key = value', got '" + line + "'");
    const std::string key = trim(line.substr(0, eq));
    const std::string value = trim(line.substr(eq + 1));
    auto it = std::find_if(f.begin(), f.end(), [&](const Field& fd) { return fd.key == key; });
    if (it == f.end()) throw ConfigError("unknown config key '" + key + "'");
    if (!seen.insert(key).second) throw ConfigError("duplicate config key '" + key + "'");
    it->set(value);
  }
  resolve(c);
  return c;
}

RunConfig load_config(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw ConfigError("cannot read config file '" + path + "'");
  std::stringstream ss;
  ss << in.rdbuf();
  return parse_config(ss.str());
}

void resolve(RunConfig& c) {
  checked("surrogate", [&] { c.surrogate.validate(); });
  checked("victim", [&] { c.victim.validate(); });
  if (c.victim.image_height != c.surrogate.image_height || c.victim.image_width != c.surrogate.image_width)
    throw ConfigError("victim.image_height/image_width must match the surrogate frame");
  c.train.height = c.surrogate.image_height;
  c.train.width = c.surrogate.image_width;
  checked("attack", [&] { c.attack.validate(c.surrogate); });

  if (c.probe_set == "custom") {
    if (c.probe_phrases.empty()) throw ConfigError("probes.phrases must list at least one phrase when probes.set = custom");
  } else {
    losses::ProbeSet set{};
    try {
      set = losses::parse_probe_set(c.probe_set);
    } catch (const std::invalid_argument&) {
      throw ConfigError("invalid value for key 'probes.set': '" + c.probe_set +
                        "' (expected combined, action, direction or custom)");
    }
    const auto& builtin = losses::probe_phrases(set);
    if (!c.probe_phrases.empty() && c.probe_phrases != builtin)
      throw ConfigError("probes.phrases conflicts with probes.set = " + c.probe_set);
    c.probe_phrases = builtin;
  }

  if (c.train.count < 1) throw ConfigError("train.count must be >= 1");
  if (c.train.min_blocks < 1 || c.train.max_blocks < c.train.min_blocks)
    throw ConfigError("train.min_blocks/max_blocks must satisfy 1 <= min <= max");
  if (c.eval.count < 1) throw ConfigError("eval.count must be >= 1");
  if (c.eval.placements < 1) throw ConfigError("eval.placements must be >= 1");
  if (c.eval.seed == c.train.seed) throw ConfigError("eval.seed must differ from train.seed");
  const std::size_t dims = std::max(c.surrogate.token_dim, c.victim.token_dim);
  if (2 * c.analysis.pairs <= dims)
    throw ConfigError("analysis.pairs must exceed half the largest token_dim (" + std::to_string(dims) + ")");
  if (c.analysis.cca_k < 1) throw ConfigError("analysis.cca_k must be >= 1");
  if (c.output_dir.empty()) throw ConfigError("output.dir must not be empty");
}

void require_distinct_models(const RunConfig& c) {
  if (c.surrogate.seed == c.victim.seed) throw ConfigError("surrogate.seed must differ from victim.seed");
}

std::string manifest(const RunConfig& cfg) {
  RunConfig c = cfg;
  std::string out;
  for (auto& f : fields(c)) out += f.key + " = " + f.get() + "\n";
  return out;
}

std::string config_hash(const RunConfig& cfg) {
  RunConfig c = cfg;
  c.output_dir = "-";
  std::uint64_t h = 14695981039346656037ull;
  for (unsigned char ch : manifest(c)) {
    h ^= ch;
    h *= 1099511628211ull;
  }
  char buf[17];
  std::snprintf(buf, sizeof buf, "%016llx", static_cast<unsigned long long>(h));
  return buf;
}

}  // namespace upa::config
