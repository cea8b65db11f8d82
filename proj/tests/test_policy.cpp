#include <cmath>
#include <set>
#include <stdexcept>

#include "doctest.h"
#include "oracles.hpp"
#include "upa/autodiff.hpp"
#include "upa/losses.hpp"
#include "upa/policy.hpp"

using namespace upa;
using namespace upa::policy;

namespace {

const Policy& surrogate() {
  static const Policy p(PolicySpec::surrogate_default());
  return p;
}

const Policy& victim() {
  static const Policy p(PolicySpec::victim_default());
  return p;
}

Tensor random_image(Rng& rng) { return oracle::random({32, 32, 3}, rng, 0.0, 1.0); }

PolicySpec tiny_spec() {
  PolicySpec s;
  s.seed = 9;
  s.image_height = 8;
  s.image_width = 8;
  s.grid = 4;
  s.branch_width_a = 4;
  s.branch_width_b = 6;
  s.vision_depth = 1;
  s.token_dim = 8;
  s.backbone_depth = 2;
  s.heads = 2;
  s.vocab_size = 50;
  s.action_dim = 3;
  return s;
}

}  // namespace

TEST_CASE("default specs") {
  const PolicySpec s = PolicySpec::surrogate_default();
  CHECK(s.image_height == 32);
  CHECK(s.grid == 8);
  CHECK(s.branch_width_a == 16);
  CHECK(s.branch_width_b == 16);
  CHECK(s.vision_depth == 2);
  CHECK(s.token_dim == 32);
  CHECK(s.backbone_depth == 4);
  CHECK(s.heads == 4);
  CHECK(s.vocab_size == 1024);
  CHECK(s.action_dim == 7);
  const PolicySpec v = PolicySpec::victim_default();
  CHECK(v.branch_width_a == 24);
  CHECK(v.branch_width_b == 8);
  CHECK(v.vision_depth == 3);
  CHECK(v.token_dim == 48);
  CHECK(v.backbone_depth == 3);
  CHECK(v.heads == 6);
  CHECK(v.seed != s.seed);
}

TEST_CASE("invalid specs are rejected with the violated constraint") {
  auto expect = [](PolicySpec s, const char* fragment) {
    try {
      Policy p(s);
      FAIL("expected rejection");
    } catch (const std::invalid_argument& e) {
      CHECK(std::string(e.what()).find(fragment) != std::string::npos);
    }
  };
  PolicySpec s;
  s.grid = 5;
  expect(s, "divisible by grid");
  s = PolicySpec{};
  s.heads = 5;
  expect(s, "divisible by heads");
  s = PolicySpec{};
  s.token_dim = 1;
  s.heads = 1;
  expect(s, "token dim");
  s = PolicySpec{};
  s.action_dim = 1;
  expect(s, "action dim");
}

TEST_CASE("construction is bit-reproducible and seeds give disjoint weights") {
  const Policy again(PolicySpec::surrogate_default());
  CHECK(again.parameters() == surrogate().parameters());
  const auto a = surrogate().parameters(), b = victim().parameters();
  CHECK(a.size() != b.size());
  const std::set<double> sa(a.begin(), a.end());
  std::size_t shared = 0;
  for (double v : b) shared += sa.count(v);
  CHECK(shared == 0);
}

TEST_CASE("weights regenerate from an independent seeded-uniform stream") {
  // Layout: per branch embed, bias, position, blocks; projector; token and
  // position embeddings; backbone blocks; head.
  const PolicySpec s = PolicySpec::surrogate_default();
  const std::size_t cell = 4 * 4 * 3, p = 64, d = s.token_dim;
  std::vector<std::pair<std::size_t, double>> layout;
  auto block = [&](std::size_t w) {
    for (int i = 0; i < 4; ++i) layout.push_back({w * w, 1 / std::sqrt(double(w))});
    layout.push_back({w * 2 * w, 1 / std::sqrt(double(w))});
    layout.push_back({2 * w, 1 / std::sqrt(double(w))});
    layout.push_back({2 * w * w, 1 / std::sqrt(double(2 * w))});
    layout.push_back({w, 1 / std::sqrt(double(2 * w))});
  };
  for (std::size_t w : {s.branch_width_a, s.branch_width_b}) {
    layout.push_back({cell * w, 1 / std::sqrt(double(cell))});
    layout.push_back({w, 1 / std::sqrt(double(cell))});
    layout.push_back({p * w, 0.5});
    for (std::size_t i = 0; i < s.vision_depth; ++i) block(w);
  }
  const std::size_t concat = s.branch_width_a + s.branch_width_b;
  layout.push_back({concat * d, 1 / std::sqrt(double(concat))});
  layout.push_back({d, 1 / std::sqrt(double(concat))});
  layout.push_back({s.vocab_size * d, 1.0});
  layout.push_back({kMaxTextTokens * d, 0.5});
  for (std::size_t i = 0; i < s.backbone_depth; ++i) block(d);
  layout.push_back({d * s.action_dim, 1 / std::sqrt(double(d))});
  layout.push_back({s.action_dim, 1 / std::sqrt(double(d))});

  std::mt19937_64 engine(s.seed);
  std::vector<double> regen;
  for (auto [count, scale] : layout)
    for (std::size_t i = 0; i < count; ++i) {
      const double u = static_cast<double>(engine() >> 11) * 0x1.0p-53;
      regen.push_back(-scale + 2 * scale * u);
    }
  const auto params = surrogate().parameters();
  REQUIRE(params.size() == regen.size());
  CHECK(params == regen);
  CHECK(surrogate().parameter_count() == regen.size());

  // histogram of the unit-scaled token embedding block against the uniform density
  std::vector<int> bins(10, 0);
  std::size_t offset = 0;
  for (std::size_t i = 0; i + 2 < layout.size(); ++i) {
    if (layout[i].second == 1.0) {
      for (std::size_t k = 0; k < layout[i].first; ++k) ++bins[std::min(9, int((params[offset + k] + 1.0) * 5.0))];
      break;
    }
    offset += layout[i].first;
  }
  for (int b : bins) CHECK(std::abs(b - 3276.8) < 4 * std::sqrt(3276.8));
}

TEST_CASE("forward shape contract") {
  Rng rng(1);
  const auto instr = surrogate().tokenize("put the red block on the left");
  REQUIRE(instr.ids.size() == 7);
  const auto six = surrogate().tokenize("put red block on the left");
  const ForwardTrace tr = surrogate().forward(random_image(rng), six);
  CHECK(tr.vision_embeddings.shape() == std::vector<std::size_t>{64, 32});
  CHECK(tr.vision_tokens.shape() == std::vector<std::size_t>{64, 32});
  CHECK(tr.attention.shape() == std::vector<std::size_t>{4, 4, 70, 70});
  CHECK(tr.action.shape() == std::vector<std::size_t>{7});
  CHECK(tr.text_states.shape() == std::vector<std::size_t>{6, 32});
}

TEST_CASE("forward is deterministic and attention rows are distributions") {
  Rng rng(2);
  const Tensor x = random_image(rng);
  const auto instr = victim().tokenize("open the drawer");
  const ForwardTrace a = victim().forward(x, instr), b = victim().forward(x, instr);
  CHECK(a.attention == b.attention);
  CHECK(a.action == b.action);
  const std::size_t n = a.attention.dim(2);
  for (std::size_t r = 0; r < a.attention.size() / n; ++r) {
    double s = 0.0;
    for (std::size_t c = 0; c < n; ++c) s += a.attention[r * n + c];
    REQUIRE(std::abs(s - 1.0) < 1e-6);
  }
}

TEST_CASE("forward matches a straight-loop transformer oracle") {
  Rng rng(3);
  for (const Policy* pol : {&surrogate(), &victim()}) {
    const Tensor x = random_image(rng);
    const auto instr = pol->tokenize("pick up the blue block");
    const ForwardTrace tr = pol->forward(x, instr);
    const oracle::Trace ref = oracle::forward(*pol, x, instr.ids);
    double err = 0.0;
    for (std::size_t i = 0; i < ref.zv.size(); ++i) {
      for (std::size_t j = 0; j < ref.zv[i].size(); ++j)
        err = std::max(err, std::abs(tr.vision_tokens.at(i, j) - ref.zv[i][j]));
      for (std::size_t j = 0; j < ref.ev[i].size(); ++j)
        err = std::max(err, std::abs(tr.vision_embeddings.at(i, j) - ref.ev[i][j]));
    }
    for (std::size_t i = 0; i < ref.text_states.size(); ++i)
      for (std::size_t j = 0; j < ref.text_states[i].size(); ++j)
        err = std::max(err, std::abs(tr.text_states.at(i, j) - ref.text_states[i][j]));
    const std::size_t n = tr.attention.dim(2), h = tr.heads();
    for (std::size_t l = 0; l < tr.layers(); ++l)
      for (std::size_t hd = 0; hd < h; ++hd)
        for (std::size_t i = 0; i < n; ++i)
          for (std::size_t j = 0; j < n; ++j)
            err = std::max(err, std::abs(tr.attention[((l * h + hd) * n + i) * n + j] - ref.attention[l][hd][i][j]));
    for (std::size_t a = 0; a < ref.action.size(); ++a) err = std::max(err, std::abs(tr.action[a] - ref.action[a]));
    CHECK(err < 1e-10);
  }
}

TEST_CASE("features are the projector output, instruction-free") {
  Rng rng(4);
  const Tensor x = random_image(rng);
  const Features f = surrogate().features(x);
  for (const char* text : {"open the drawer", "put the green block on the top"}) {
    const ForwardTrace tr = surrogate().forward(x, surrogate().tokenize(text));
    CHECK(tr.vision_tokens == f.tokens);
  }
  for (std::size_t j = 0; j < 32; ++j) {
    double m = 0.0;
    for (std::size_t i = 0; i < 64; ++i) m += f.tokens.at(i, j);
    CHECK(f.pooled[j] == doctest::Approx(m / 64.0).epsilon(1e-13));
  }
  CHECK(surrogate().features(random_image(rng)).tokens != f.tokens);
  CHECK_THROWS_AS(surrogate().features(Tensor({16, 16, 3})), std::invalid_argument);
}

TEST_CASE("text anchors are unit, deterministic and distinct across the probe set") {
  const auto& phrases = losses::probe_phrases(losses::ProbeSet::kCombined);
  std::vector<Tensor> anchors;
  for (const auto& ph : phrases) {
    const Tensor a = surrogate().text_anchor(ph);
    CHECK(std::abs(l2_norm(a.data()) - 1.0) < 1e-9);
    CHECK(surrogate().text_anchor(ph) == a);
    anchors.push_back(a);
  }
  double min_dist = 1e9;
  for (std::size_t i = 0; i < anchors.size(); ++i)
    for (std::size_t j = i + 1; j < anchors.size(); ++j)
      min_dist = std::min(min_dist, l2_norm((anchors[i] - anchors[j]).data()));
  CHECK(min_dist > 0.0);
  CHECK_THROWS_AS(surrogate().text_anchor("   "), std::invalid_argument);
}

TEST_CASE("tokenizer") {
  const Instruction a = surrogate().tokenize("Open the drawer");
  CHECK(a.ids.size() == 3);
  CHECK(a.ids == surrogate().tokenize("Open the drawer").ids);
  CHECK(surrogate().tokenize("left").ids != surrogate().tokenize("right").ids);
  CHECK(surrogate().tokenize("Put").ids == surrogate().tokenize("put").ids);
  for (auto id : a.ids) CHECK(id < 1024);
  // FNV-1a 64 of "put" reduced mod 1024
  std::uint64_t h = 0xcbf29ce484222325ULL;
  for (char c : std::string("put")) h = (h ^ static_cast<unsigned char>(c)) * 0x100000001b3ULL;
  CHECK(surrogate().tokenize("put").ids[0] == h % 1024);
  CHECK_THROWS_AS(surrogate().tokenize(""), std::invalid_argument);
  std::string long_text;
  for (int i = 0; i < 33; ++i) long_text += "go ";
  CHECK_THROWS_AS(surrogate().tokenize(long_text), std::invalid_argument);
}

TEST_CASE("forward composed with a loss is differentiable in the image") {
  const Policy tiny(tiny_spec());
  Rng rng(5);
  const auto instr = tiny.tokenize("push button");
  const Tensor w = oracle::random({1, 3}, rng);
  ad::Program prog = [&](ad::Graph& g, const ad::NamedVars& v) {
    policy::TraceVars tv = tiny.forward(g, v.at("x"), instr);
    ad::Var t = g.sum(g.mul(tv.action, g.constant(w)));
    return g.add(t, g.sum(g.tanh(tv.text_states)));
  };
  CHECK(ad::check_gradient(prog, {{"x", oracle::random({8, 8, 3}, rng, 0, 1)}}, {"x"}).max_rel_err < 1e-5);
}
