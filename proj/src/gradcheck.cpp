#include "upa/gradcheck.hpp"

#include <algorithm>
#include <functional>

#include "upa/autodiff.hpp"
#include "upa/losses.hpp"
#include "upa/policy.hpp"
#include "upa/render.hpp"
#include "upa/rng.hpp"

namespace upa::gradcheck {

namespace {

policy::PolicySpec small_spec(std::uint64_t seed) {
  policy::PolicySpec s;
  s.seed = seed;
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

Tensor random_tensor(std::vector<std::size_t> shape, Rng& rng, double lo = -1.0, double hi = 1.0) {
  Tensor t(std::move(shape));
  for (auto& v : t.values()) v = rng.uniform(lo, hi);
  return t;
}

struct Instance {
  policy::Policy policy;
  policy::Instruction instruction;
  Tensor image, patch;
  render::Raster raster;
  Tensor token_weights;
  policy::ForwardTrace clean;
  losses::AttentionShares clean_shares;
  Tensor probes, instruction_embedding;
  losses::LossWeights weights;
};

Instance make_instance(std::uint64_t seed) {
  Rng rng(derive_seed(seed, 0x6772));
  Instance in{policy::Policy(small_spec(derive_seed(seed, 0x706f))), {}, {}, {}, {}, {}, {}, {}, {}, {}, {}};
  in.instruction = in.policy.tokenize("open drawer");
  in.image = random_tensor({8, 8, 3}, rng, 0.0, 1.0);
  in.patch = random_tensor({3, 3, 3}, rng, 0.0, 1.0);
  const render::TransformSample t{static_cast<long>(rng.index(4)), static_cast<long>(rng.index(4)),
                                  rng.uniform(-0.4, 0.4), 0.0};
  in.raster = render::rasterize_geometry(3, 3, t, {8, 8});
  in.token_weights = render::token_mask(in.raster.mask, 4);
  in.clean = in.policy.forward(in.image, in.instruction);
  in.clean_shares = losses::attention_shares(in.clean, in.weights.attn_last_n);
  in.probes = losses::probe_anchors(in.policy, losses::probe_phrases(losses::ProbeSet::kCombined));
  in.instruction_embedding = policy::Policy::instruction_embedding(in.clean);
  return in;
}

double check(const std::string& name, std::uint64_t seed) {
  Instance in = make_instance(seed);
  Rng rng(derive_seed(seed, 0x6c73));
  const std::size_t p = in.policy.spec().vision_tokens(), d = in.policy.spec().token_dim;

  if (name == "l1") {
    const Tensor clean = random_tensor({p, d}, rng);
    ad::Program prog = [&](ad::Graph& g, const ad::NamedVars& v) {
      ad::Var c = g.constant(clean);
      return losses::l1_deviation(g, std::span(&v.at("patched"), 1), std::span(&c, 1));
    };
    return ad::check_gradient(prog, {{"patched", random_tensor({p, d}, rng)}}, {"patched"}).max_rel_err;
  }
  if (name == "infonce") {
    const Tensor clean = random_tensor({3, d}, rng);
    ad::Program prog = [&](ad::Graph& g, const ad::NamedVars& v) {
      return losses::infonce_repulsion(g, g.constant(clean), v.at("patched"), in.weights.tau_con);
    };
    return ad::check_gradient(prog, {{"patched", random_tensor({3, d}, rng)}}, {"patched"}).max_rel_err;
  }
  if (name == "pad") {
    ad::Program prog = [&](ad::Graph& g, const ad::NamedVars& v) {
      ad::Var x = render::paste(g, v.at("x"), v.at("delta"), in.raster);
      policy::TraceVars tv = in.policy.forward(g, x, in.instruction);
      losses::SharesVars sv =
          losses::attention_shares(g, tv.attention, tv.vision_count, tv.text_count, in.weights.attn_last_n);
      return losses::pad_loss(g, sv.shares, in.clean_shares, in.token_weights, in.weights);
    };
    return ad::check_gradient(prog, {{"x", in.image}, {"delta", in.patch}}, {"delta"}).max_rel_err;
  }
  if (name == "psm") {
    ad::Program prog = [&](ad::Graph& g, const ad::NamedVars& v) {
      losses::PooledVar pv = losses::pooled_patch_feature(g, v.at("tokens"), in.token_weights);
      return losses::psm_loss(g, pv.feature, in.probes, in.instruction_embedding, in.weights.alpha, in.weights.beta,
                              in.weights.tau_psm);
    };
    return ad::check_gradient(prog, {{"tokens", random_tensor({p, d}, rng)}}, {"tokens"}).max_rel_err;
  }
  // j_out: the whole surrogate path from patch texels to the outer objective
  ad::Program prog = [&](ad::Graph& g, const ad::NamedVars& v) {
    ad::Var x = render::paste(g, v.at("x"), v.at("delta"), in.raster);
    policy::TraceVars tv = in.policy.forward(g, x, in.instruction);
    losses::PatchedItem item{tv.vision_tokens, &tv.attention, tv.vision_count, tv.text_count,
                             in.clean.vision_tokens, in.clean_shares, in.token_weights, in.instruction_embedding};
    return losses::j_out(g, std::span(&item, 1), in.probes, in.weights).total;
  };
  return ad::check_gradient(prog, {{"x", in.image}, {"delta", in.patch}}, {"delta", "x"}).max_rel_err;
}

}  // namespace

std::vector<LossCheck> run_suite(std::size_t seeds, std::uint64_t base_seed) {
  std::vector<LossCheck> out;
  for (const char* name : {"l1", "infonce", "pad", "psm", "j_out"}) {
    LossCheck c;
    c.name = name;
    for (std::size_t s = 0; s < seeds; ++s) c.rel_errors.push_back(check(name, base_seed + s));
    c.worst = c.rel_errors.empty() ? 0.0 : *std::max_element(c.rel_errors.begin(), c.rel_errors.end());
    out.push_back(std::move(c));
  }
  return out;
}

}  // namespace upa::gradcheck
