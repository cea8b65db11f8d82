#include <cmath>
#include <numeric>
#include <stdexcept>

#include "doctest.h"
#include "oracles.hpp"
#include "upa/autodiff.hpp"
#include "upa/losses.hpp"
#include "upa/policy.hpp"
#include "upa/render.hpp"

using namespace upa;
using namespace upa::losses;

namespace {

Tensor row(std::vector<double> v) {
  const std::size_t n = v.size();
  return Tensor({1, n}, std::move(v));
}

Tensor unit_rows(Tensor t) {
  for (std::size_t i = 0; i < t.rows(); ++i) {
    double n = 0.0;
    for (std::size_t j = 0; j < t.cols(); ++j) n += t.at(i, j) * t.at(i, j);
    for (std::size_t j = 0; j < t.cols(); ++j) t.at(i, j) /= std::sqrt(n);
  }
  return t;
}

// Rows are positive and sum to one.
Tensor random_shares(std::size_t t, std::size_t p, Rng& rng) {
  Tensor s = oracle::random({t, p}, rng, 0.01, 1.0);
  for (std::size_t i = 0; i < t; ++i) {
    double z = 0.0;
    for (std::size_t j = 0; j < p; ++j) z += s.at(i, j);
    for (std::size_t j = 0; j < p; ++j) s.at(i, j) /= z;
  }
  return s;
}

// Softmax-normalized L x H x N x N attention plus matching token shapes.
policy::ForwardTrace random_trace(std::size_t layers, std::size_t heads, std::size_t p, std::size_t t, Rng& rng) {
  const std::size_t n = p + t;
  policy::ForwardTrace tr;
  tr.attention = oracle::random({layers, heads, n, n}, rng, 0.01, 1.0);
  for (std::size_t r = 0; r < layers * heads * n; ++r) {
    double z = 0.0;
    for (std::size_t c = 0; c < n; ++c) z += tr.attention[r * n + c];
    for (std::size_t c = 0; c < n; ++c) tr.attention[r * n + c] /= z;
  }
  tr.vision_tokens = Tensor({p, 4});
  tr.text_states = Tensor({t, 4});
  return tr;
}

std::vector<double> vec(const Tensor& t) { return {t.values().begin(), t.values().end()}; }

policy::PolicySpec tiny_spec() {
  policy::PolicySpec s;
  s.image_height = 8;
  s.image_width = 8;
  s.grid = 4;
  s.branch_width_a = 4;
  s.branch_width_b = 4;
  s.vision_depth = 1;
  s.token_dim = 8;
  s.backbone_depth = 2;
  s.heads = 2;
  s.vocab_size = 64;
  s.action_dim = 3;
  return s;
}

}  // namespace

TEST_CASE("l1 deviation") {
  const Tensor z = row({0.0, 0.0});
  CHECK(l1_deviation(z, z) == 0.0);
  CHECK(l1_deviation(row({0.3, -0.2}), z) == doctest::Approx(0.5).epsilon(1e-15));
  Rng rng(1);
  for (int trial = 0; trial < 50; ++trial) {
    const Tensor a = oracle::random({6, 5}, rng), b = oracle::random({6, 5}, rng);
    CHECK(std::abs(l1_deviation(a, b) - oracle::l1(a, b)) < 1e-10);
  }
  CHECK_THROWS_AS(l1_deviation(row({1, 2}), row({1, 2, 3})), std::invalid_argument);

  // graph form averages the per-item sums over the batch
  ad::Graph g;
  const ad::Var p[] = {g.constant(row({1.0, 1.0})), g.constant(row({0.0, 3.0}))};
  const ad::Var c[] = {g.constant(row({0.0, 0.0})), g.constant(row({0.0, 0.0}))};
  CHECK(g.scalar(l1_deviation(g, p, c)) == doctest::Approx(2.5));
}

TEST_CASE("infonce repulsion examples") {
  const Tensor a = row({1.0, 2.0}), b = row({-0.5, 0.3});
  CHECK(infonce_repulsion(a, b, 0.1) == 0.0);

  const Tensor clean({2, 2}, {1.0, 0.0, 0.0, 1.0});
  CHECK(infonce_repulsion(clean, clean, 1.0) == doctest::Approx(std::log(1.0 + std::exp(-1.0))).epsilon(1e-14));
  CHECK(std::log(1.0 + std::exp(-1.0)) == doctest::Approx(0.3133).epsilon(1e-4));

  CHECK_THROWS_WITH_AS(infonce_repulsion(Tensor({2, 2}, {1, 0, 0, 0}), clean, 1.0), doctest::Contains("zero-norm"),
                       std::invalid_argument);
  CHECK_THROWS_AS(infonce_repulsion(clean, row({1, 0}), 1.0), std::invalid_argument);
  CHECK_THROWS_AS(infonce_repulsion(clean, clean, 0.0), std::invalid_argument);
}

TEST_CASE("infonce matches the double-loop oracle and is scale invariant") {
  Rng rng(2);
  for (int trial = 0; trial < 50; ++trial) {
    const std::size_t n = 1 + rng.index(6);
    const double tau = rng.uniform(0.05, 2.0);
    const Tensor c = oracle::random({n, 7}, rng), p = oracle::random({n, 7}, rng);
    const double v = infonce_repulsion(c, p, tau);
    CHECK(std::abs(v - oracle::infonce(c, p, tau)) < 1e-10);
    Tensor scaled = p;
    const std::size_t j = rng.index(n);
    const double k = rng.uniform(0.1, 10.0);
    for (std::size_t col = 0; col < 7; ++col) scaled.at(j, col) *= k;
    CHECK(std::abs(infonce_repulsion(c, scaled, tau) - v) < 1e-10);
  }
}

TEST_CASE("attention shares") {
  Rng rng(3);
  SUBCASE("uniform attention gives 1/P") {
    policy::ForwardTrace tr = random_trace(3, 2, 5, 3, rng);
    for (auto& v : tr.attention.values()) v = 1.0 / 8.0;
    const AttentionShares s = attention_shares(tr, 2);
    for (double v : s.shares.values()) CHECK(v == doctest::Approx(0.2).epsilon(1e-14));
  }
  SUBCASE("identical layers equal the single-layer result") {
    policy::ForwardTrace one = random_trace(1, 3, 6, 4, rng);
    policy::ForwardTrace many;
    many.vision_tokens = one.vision_tokens;
    many.text_states = one.text_states;
    const std::size_t block = one.attention.size();
    many.attention = Tensor({3, 3, 10, 10});
    for (std::size_t l = 0; l < 3; ++l)
      std::copy(one.attention.values().begin(), one.attention.values().end(), many.attention.values().begin() + l * block);
    const AttentionShares a = attention_shares(one, 1), b = attention_shares(many, 3);
    for (std::size_t i = 0; i < a.shares.size(); ++i) CHECK(std::abs(a.shares[i] - b.shares[i]) < 1e-14);
  }
  SUBCASE("random traces match the loop oracle; rows sum to one") {
    for (int trial = 0; trial < 50; ++trial) {
      const std::size_t layers = 1 + rng.index(4), last_n = 1 + rng.index(layers);
      const std::size_t p = 2 + rng.index(6), t = 1 + rng.index(5);
      const policy::ForwardTrace tr = random_trace(layers, 1 + rng.index(3), p, t, rng);
      const AttentionShares s = attention_shares(tr, last_n);
      const oracle::Shares ref = oracle::shares(tr.attention, p, t, last_n);
      for (std::size_t i = 0; i < t; ++i) {
        double sum = 0.0;
        for (std::size_t j = 0; j < p; ++j) {
          CHECK(std::abs(s.shares.at(i, j) - ref.shares[i][j]) < 1e-10);
          sum += s.shares.at(i, j);
        }
        CHECK(std::abs(sum - 1.0) < 1e-6);
        CHECK(std::abs(s.mass[i] - ref.mass[i]) < 1e-10);
      }
    }
  }
  SUBCASE("errors") {
    policy::ForwardTrace empty;
    CHECK_THROWS_AS(attention_shares(empty, 1), std::invalid_argument);
    const policy::ForwardTrace tr = random_trace(2, 1, 3, 2, rng);
    CHECK_THROWS_AS(attention_shares(tr, 3), std::invalid_argument);
    CHECK_THROWS_AS(attention_shares(tr, 0), std::invalid_argument);
  }
}

TEST_CASE("top-k rows") {
  CHECK(topk_rows(Tensor({4}, {0.1, 0.5, 0.5, 0.2}), 0.25) == std::vector<std::size_t>{1});
  CHECK(topk_rows(Tensor({4}, {0.1, 0.5, 0.5, 0.2}), 0.5) == std::vector<std::size_t>{1, 2});
  CHECK(topk_rows(Tensor({3}, {0.3, 0.3, 0.3}), 0.5) == std::vector<std::size_t>{0, 1});
  CHECK(topk_rows(Tensor({5}, {1, 2, 3, 4, 5}), 0.01) == std::vector<std::size_t>{4});
  CHECK(topk_rows(Tensor({3}, {1, 2, 3}), 1.0).size() == 3);
  Rng rng(4);
  for (int trial = 0; trial < 50; ++trial) {
    const Tensor m = oracle::random({1 + rng.index(9)}, rng, 0, 1);
    const double f = rng.uniform(0.05, 1.0);
    CHECK(topk_rows(m, f) == oracle::topk(vec(m), f));
  }
  CHECK_THROWS_AS(topk_rows(Tensor({3}, 1.0), 0.0), std::invalid_argument);
  CHECK_THROWS_AS(topk_rows(Tensor({3}, 1.0), 1.5), std::invalid_argument);
}

TEST_CASE("PAD loss") {
  Rng rng(5);
  LossWeights w;
  SUBCASE("zero increment leaves only the margin") {
    const AttentionShares c{random_shares(4, 6, rng), oracle::random({4}, rng, 0, 1)};
    const Tensor mz = oracle::random({6}, rng, 0, 1);
    CHECK(pad_loss(c, c, mz, w) == doctest::Approx(-w.margin).epsilon(1e-14));
  }
  SUBCASE("full patch mask keeps the patch term and hinge only") {
    const AttentionShares c{random_shares(4, 6, rng), oracle::random({4}, rng, 0, 1)};
    const AttentionShares p{random_shares(4, 6, rng), c.mass};
    const Tensor ones({6}, 1.0);
    const auto rows = topk_rows(c.mass, w.topk_fraction);
    double e_patch = 0.0, e_hinge = 0.0;
    for (std::size_t r : rows) {
      double d = 0.0;
      for (std::size_t j = 0; j < 6; ++j) d += p.shares.at(r, j) - c.shares.at(r, j);
      e_patch += d;
      e_hinge += std::max(0.0, w.margin - d);
    }
    const double k = static_cast<double>(rows.size());
    CHECK(std::abs(pad_loss(p, c, ones, w) - (e_patch / k - e_hinge / k)) < 1e-12);
  }
  SUBCASE("random shares match the per-row oracle") {
    for (int trial = 0; trial < 50; ++trial) {
      const std::size_t t = 1 + rng.index(6), p = 2 + rng.index(8);
      w.topk_fraction = trial % 2 ? 0.5 : rng.uniform(0.1, 1.0);
      w.lambda_nonpatch = rng.uniform(0.0, 2.0);
      w.margin = rng.uniform(0.0, 0.2);
      const AttentionShares c{random_shares(t, p, rng), oracle::random({t}, rng, 0, 1)};
      const AttentionShares pt{random_shares(t, p, rng), c.mass};
      const Tensor mz = oracle::random({p}, rng, 0, 1);
      const double ref = oracle::pad(oracle::to_mat(pt.shares), oracle::to_mat(c.shares), vec(c.mass), vec(mz),
                                     w.topk_fraction, w.lambda_nonpatch, w.margin);
      CHECK(std::abs(pad_loss(pt, c, mz, w) - ref) < 1e-10);
    }
  }
  SUBCASE("identical shares give identical loss") {
    const AttentionShares c{random_shares(3, 5, rng), oracle::random({3}, rng, 0, 1)};
    const AttentionShares p{random_shares(3, 5, rng), c.mass};
    const AttentionShares p2{p.shares, oracle::random({3}, rng, 0, 1)};
    const Tensor mz = oracle::random({5}, rng, 0, 1);
    CHECK(pad_loss(p, c, mz, w) == pad_loss(p2, c, mz, w));
  }
  SUBCASE("hinge terms carry no gradient at zero increment with zero margin") {
    w.margin = 0.0;
    w.topk_fraction = 0.5;
    const AttentionShares c{random_shares(4, 6, rng), oracle::random({4}, rng, 0, 1)};
    const Tensor mz = oracle::random({6}, rng, 0, 1);
    ad::Graph g;
    ad::Var bp = g.input(c.shares);
    const double v = g.scalar(pad_loss(g, bp, c, mz, w));
    CHECK(v == 0.0);
    g.backward(pad_loss(g, bp, c, mz, w));
    const Tensor grad = g.grad(bp);
    const auto rows = topk_rows(c.mass, 0.5);
    for (std::size_t i = 0; i < 4; ++i)
      for (std::size_t j = 0; j < 6; ++j) {
        const bool selected = std::find(rows.begin(), rows.end(), i) != rows.end();
        CHECK(grad.at(i, j) == doctest::Approx(selected ? mz[j] / 2.0 : 0.0).epsilon(1e-14));
      }
  }
  SUBCASE("errors") {
    const AttentionShares c{random_shares(3, 5, rng), oracle::random({3}, rng, 0, 1)};
    const AttentionShares wrong_t{random_shares(2, 5, rng), oracle::random({2}, rng, 0, 1)};
    const AttentionShares wrong_p{random_shares(3, 4, rng), c.mass};
    CHECK_THROWS_AS(pad_loss(wrong_t, c, Tensor({5}), w), std::invalid_argument);
    CHECK_THROWS_AS(pad_loss(wrong_p, c, Tensor({5}), w), std::invalid_argument);
    CHECK_THROWS_AS(pad_loss(c, c, Tensor({4}), w), std::invalid_argument);
  }
}

TEST_CASE("pooled patch feature") {
  Rng rng(6);
  const Tensor z = oracle::random({5, 4}, rng);
  Tensor one_hot({5});
  one_hot[2] = 1.0;
  const PooledFeature f = pooled_patch_feature(z, one_hot);
  CHECK_FALSE(f.degenerate);
  double n = 0.0;
  for (std::size_t j = 0; j < 4; ++j) n += z.at(2, j) * z.at(2, j);
  for (std::size_t j = 0; j < 4; ++j) CHECK(std::abs(f.feature[j] - z.at(2, j) / std::sqrt(n)) < 1e-6);

  const PooledFeature empty = pooled_patch_feature(z, Tensor({5}));
  CHECK(empty.degenerate);
  CHECK(empty.feature.max_abs() == 0.0);

  for (int trial = 0; trial < 50; ++trial) {
    const Tensor zt = oracle::random({6, 5}, rng);
    const Tensor mz = oracle::random({6}, rng, 0, 1);
    const PooledFeature pf = pooled_patch_feature(zt, mz);
    const oracle::Pooled ref = oracle::pooled(zt, mz);
    CHECK(pf.degenerate == ref.degenerate);
    for (std::size_t j = 0; j < 5; ++j) CHECK(std::abs(pf.feature[j] - ref.v[j]) < 1e-10);
  }
  CHECK_THROWS_AS(pooled_patch_feature(z, Tensor({4})), std::invalid_argument);
}

TEST_CASE("PSM loss") {
  const Tensor e0 = row({1.0, 0.0, 0.0}), e1 = row({0.0, 1.0, 0.0});
  CHECK(psm_loss(e0, e0, e1, 1.0, 0.0, 1.0) == doctest::Approx(1.0).epsilon(1e-14));
  CHECK(psm_loss(e0, e1, e0, 0.0, 1.0, 1.0) == doctest::Approx(-1.0).epsilon(1e-14));
  const Tensor two({2, 3}, {0.0, 1.0, 0.0, 0.0, 0.0, 1.0});
  CHECK(psm_loss(e0, two, e1, 1.0, 0.0, 1.0) == doctest::Approx(std::log(2.0)).epsilon(1e-14));
  CHECK(psm_loss(Tensor({1, 3}), two, e1, 1.0, 1.0, 1.0) == 0.0);
  CHECK_THROWS_AS(psm_loss(e0, Tensor({0, 3}), e1, 1.0, 1.0, 1.0), std::invalid_argument);
  CHECK_THROWS_AS(psm_loss(e0, two, row({1.0, 0.0}), 1.0, 1.0, 1.0), std::invalid_argument);

  Rng rng(7);
  for (int trial = 0; trial < 50; ++trial) {
    const std::size_t k = 1 + rng.index(7);
    const Tensor probes = unit_rows(oracle::random({k, 6}, rng));
    const Tensor v = unit_rows(oracle::random({1, 6}, rng)), t = unit_rows(oracle::random({1, 6}, rng));
    const double a = rng.uniform(0.1, 2), b = rng.uniform(0.1, 2), tau = rng.uniform(0.05, 1);
    CHECK(std::abs(psm_loss(v, probes, t, a, b, tau) - oracle::psm(vec(v), probes, vec(t), a, b, tau)) < 1e-10);

    // small temperature concentrates the log-sum-exp on the best probe
    const double lse = psm_loss(v, probes, t, 1.0, 1e-300, 0.01);
    double best = -2.0;
    for (std::size_t r = 0; r < k; ++r) {
      double s = 0.0;
      for (std::size_t j = 0; j < 6; ++j) s += v[j] * probes.at(r, j);
      best = std::max(best, s);
    }
    CHECK(std::abs(lse * 0.01 - best) <= 0.01 * std::log(static_cast<double>(k)) + 1e-12);
  }
}

TEST_CASE("J_tr composition") {
  Rng rng(8);
  LossWeights w;
  for (int trial = 0; trial < 20; ++trial) {
    const std::size_t n = 1 + rng.index(4);
    w.lambda_con = trial == 0 ? 0.0 : rng.uniform(0, 2);
    w.lambda_l1 = 1.0;
    ad::Graph g;
    std::vector<PatchedItem> items(n);
    std::vector<Tensor> patched, clean;
    Tensor cp({n, 5}), pp({n, 5});
    double l1 = 0.0;
    for (std::size_t i = 0; i < n; ++i) {
      patched.push_back(oracle::random({4, 5}, rng));
      clean.push_back(oracle::random({4, 5}, rng));
      items[i].tokens = g.constant(patched[i]);
      items[i].clean_tokens = clean[i];
      l1 += oracle::l1(patched[i], clean[i]) / static_cast<double>(n);
      for (std::size_t r = 0; r < 4; ++r)
        for (std::size_t c = 0; c < 5; ++c) {
          pp.at(i, c) += patched[i].at(r, c) / 4.0;
          cp.at(i, c) += clean[i].at(r, c) / 4.0;
        }
    }
    const ObjectiveTerms t = j_tr(g, items, w);
    const double con = oracle::infonce(cp, pp, w.tau_con);
    CHECK(std::abs(g.scalar(t.l1) - l1) < 1e-10);
    CHECK(std::abs(g.scalar(t.con) - con) < 1e-10);
    CHECK(std::abs(g.scalar(t.total) - (l1 + w.lambda_con * con)) < 1e-10);
    if (w.lambda_con == 0.0) CHECK(g.scalar(t.total) == g.scalar(t.l1));
  }
  ad::Graph g;
  PatchedItem same;
  same.clean_tokens = oracle::random({4, 5}, rng);
  same.tokens = g.constant(same.clean_tokens);
  CHECK(std::abs(g.scalar(j_tr(g, std::span(&same, 1), w).total)) < 1e-15);
  CHECK_THROWS_AS(j_tr(g, std::span<const PatchedItem>(), w), std::invalid_argument);
}

TEST_CASE("J_out composition and gradient") {
  const policy::Policy pol(tiny_spec());
  Rng rng(9);
  const auto instr = pol.tokenize("open drawer");
  const Tensor img = oracle::random({8, 8, 3}, rng, 0, 1);
  const policy::ForwardTrace clean = pol.forward(img, instr);
  LossWeights w;
  const AttentionShares cs = attention_shares(clean, w.attn_last_n);
  const Tensor probes = probe_anchors(pol, probe_phrases(ProbeSet::kCombined));
  const Tensor inst = policy::Policy::instruction_embedding(clean);
  const render::TransformSample tf{2, 3, 0.4, 0.0};
  const render::Raster raster = render::rasterize_geometry(3, 3, tf, {8, 8});
  const Tensor mz = render::token_mask(raster.mask, 4);

  SUBCASE("patched equals clean") {
    w.lambda_l1 = w.lambda_con = w.lambda_pad = w.lambda_psm = 1.0;
    ad::Graph g;
    policy::TraceVars tv = pol.forward(g, g.constant(img), instr);
    PatchedItem it{tv.vision_tokens, &tv.attention, tv.vision_count, tv.text_count, clean.vision_tokens, cs, mz, inst};
    const ObjectiveTerms t = j_out(g, std::span(&it, 1), probes, w);
    const oracle::Pooled v = oracle::pooled(clean.vision_tokens, mz);
    const double psm = oracle::psm(v.v, probes, vec(inst), w.alpha, w.beta, w.tau_psm);
    CHECK(std::abs(g.scalar(t.l1)) < 1e-15);
    CHECK(std::abs(g.scalar(t.con)) < 1e-15);
    CHECK(std::abs(g.scalar(t.pad) + w.margin) < 1e-12);
    CHECK(std::abs(g.scalar(t.total) - (-w.margin + psm)) < 1e-10);
  }
  SUBCASE("all auxiliary weights zero reduces to the l1 term") {
    w.lambda_con = w.lambda_pad = w.lambda_psm = 0.0;
    ad::Graph g;
    ad::Var px = render::paste(g, g.constant(img), g.constant(oracle::random({3, 3, 3}, rng, 0, 1)), raster);
    policy::TraceVars tv = pol.forward(g, px, instr);
    PatchedItem it{tv.vision_tokens, &tv.attention, tv.vision_count, tv.text_count, clean.vision_tokens, cs, mz, inst};
    const ObjectiveTerms t = j_out(g, std::span(&it, 1), probes, w);
    CHECK(g.scalar(t.total) == g.scalar(t.l1));
    CHECK(g.scalar(t.l1) > 0.0);
  }
  SUBCASE("gradient w.r.t. the patch passes the finite-difference check") {
    ad::Program prog = [&](ad::Graph& g, const ad::NamedVars& in) {
      ad::Var px = render::paste(g, g.constant(img), in.at("delta"), raster);
      policy::TraceVars tv = pol.forward(g, px, instr);
      PatchedItem it{tv.vision_tokens, &tv.attention, tv.vision_count, tv.text_count, clean.vision_tokens, cs, mz, inst};
      return j_out(g, std::span(&it, 1), probes, w).total;
    };
    const auto rep = ad::check_gradient(prog, {{"delta", oracle::random({3, 3, 3}, rng, 0.1, 0.9)}}, {"delta"});
    CHECK(rep.max_rel_err < 1e-4);
  }
  SUBCASE("missing attention is rejected") {
    ad::Graph g;
    PatchedItem it;
    it.tokens = g.constant(clean.vision_tokens);
    it.clean_tokens = clean.vision_tokens;
    CHECK_THROWS_AS(j_out(g, std::span(&it, 1), probes, w), std::invalid_argument);
  }
}

TEST_CASE("loss weights and probe sets") {
  LossWeights w;
  CHECK_NOTHROW(w.validate(4));
  w.attn_last_n = 5;
  CHECK_THROWS_WITH_AS(w.validate(4), doctest::Contains("attn_last_n"), std::invalid_argument);
  w = LossWeights{};
  w.tau_con = 0.0;
  CHECK_THROWS_WITH_AS(w.validate(4), doctest::Contains("tau_con"), std::invalid_argument);
  w = LossWeights{};
  w.topk_fraction = 0.0;
  CHECK_THROWS_AS(w.validate(4), std::invalid_argument);
  w = LossWeights{};
  w.lambda_pad = -1.0;
  CHECK_THROWS_AS(w.validate(4), std::invalid_argument);

  CHECK(probe_phrases(ProbeSet::kCombined) ==
        std::vector<std::string>{"put", "pick up", "place", "open", "close", "left", "right"});
  CHECK(probe_phrases(ProbeSet::kAction).size() == 7);
  CHECK(probe_phrases(ProbeSet::kDirection).front() == "left");
  for (auto s : {ProbeSet::kCombined, ProbeSet::kAction, ProbeSet::kDirection})
    CHECK(parse_probe_set(probe_set_name(s)) == s);
  CHECK_THROWS_AS(parse_probe_set("verbs"), std::invalid_argument);

  const policy::Policy pol(tiny_spec());
  const Tensor a = probe_anchors(pol, probe_phrases(ProbeSet::kDirection));
  CHECK(a.rows() == 7);
  for (std::size_t k = 0; k < 7; ++k) {
    double n = 0.0;
    for (std::size_t j = 0; j < a.cols(); ++j) n += a.at(k, j) * a.at(k, j);
    CHECK(std::abs(n - 1.0) < 1e-12);
  }
  CHECK_THROWS_AS(probe_anchors(pol, std::vector<std::string>{}), std::invalid_argument);
}
