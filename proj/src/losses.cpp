#include "upa/losses.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>
#include <stdexcept>

namespace upa::losses {

namespace {

void require_nonzero_rows(const Tensor& t, const char* what) {
  for (std::size_t i = 0; i < t.rows(); ++i) {
    double s = 0.0;
    for (std::size_t j = 0; j < t.cols(); ++j) s += t.at(i, j) * t.at(i, j);
    if (s == 0.0) throw std::invalid_argument(std::string(what) + ": zero-norm vector at row " + std::to_string(i));
  }
}

Tensor as_column(const Tensor& v) { return v.reshaped({v.size(), 1}); }

}  // namespace

void LossWeights::validate(std::size_t backbone_depth) const {
  auto fail = [](const std::string& what) { throw std::invalid_argument("invalid loss weights: " + what); };
  if (lambda_l1 < 0) fail("lambda_l1 must be >= 0");
  if (lambda_con < 0) fail("lambda_con must be >= 0");
  if (lambda_pad < 0) fail("lambda_pad must be >= 0");
  if (lambda_psm < 0) fail("lambda_psm must be >= 0");
  if (!(tau_con > 0)) fail("tau_con must be > 0");
  if (!(tau_psm > 0)) fail("tau_psm must be > 0");
  if (!(alpha > 0)) fail("alpha must be > 0");
  if (!(beta > 0)) fail("beta must be > 0");
  if (lambda_nonpatch < 0) fail("lambda_nonpatch must be >= 0");
  if (margin < 0) fail("margin must be >= 0");
  if (!(topk_fraction > 0 && topk_fraction <= 1)) fail("topk_fraction must be in (0, 1]");
  if (attn_last_n < 1 || attn_last_n > backbone_depth) fail("attn_last_n must be in [1, backbone depth]");
}

const std::vector<std::string>& probe_phrases(ProbeSet set) {
  static const std::vector<std::string> combined{"put", "pick up", "place", "open", "close", "left", "right"};
  static const std::vector<std::string> action{"put", "pick up", "place", "turn on", "push", "open", "close"};
  static const std::vector<std::string> direction{"left", "right", "bottom", "back", "middle", "top", "front"};
  switch (set) {
    case ProbeSet::kAction: return action;
    case ProbeSet::kDirection: return direction;
    case ProbeSet::kCombined: break;
  }
  return combined;
}

std::string probe_set_name(ProbeSet set) {
  switch (set) {
    case ProbeSet::kAction: return "action";
    case ProbeSet::kDirection: return "direction";
    case ProbeSet::kCombined: break;
  }
  return "combined";
}

ProbeSet parse_probe_set(const std::string& name) {
  if (name == "combined") return ProbeSet::kCombined;
  if (name == "action") return ProbeSet::kAction;
  if (name == "direction") return ProbeSet::kDirection;
  throw std::invalid_argument("unknown probe set '" + name + "'");
}

Tensor probe_anchors(const policy::Policy& policy, std::span<const std::string> phrases) {
  if (phrases.empty()) throw std::invalid_argument("probe set is empty");
  const std::size_t d = policy.spec().token_dim;
  Tensor out({phrases.size(), d});
  for (std::size_t k = 0; k < phrases.size(); ++k) {
    Tensor a = policy.text_anchor(phrases[k]);
    std::copy(a.values().begin(), a.values().end(), out.values().begin() + k * d);
  }
  return out;
}

// ---- graph forms ----

ad::Var l1_deviation(ad::Graph& g, std::span<const ad::Var> patched, std::span<const ad::Var> clean) {
  if (patched.empty() || patched.size() != clean.size())
    throw std::invalid_argument("l1_deviation: batch sizes differ or are empty");
  std::vector<ad::Var> per_item;
  for (std::size_t i = 0; i < patched.size(); ++i) {
    if (!g.value(patched[i]).same_shape(g.value(clean[i])))
      throw std::invalid_argument("l1_deviation: feature shape mismatch");
    per_item.push_back(g.reshape(g.sum(g.abs(g.sub(patched[i], clean[i]))), {1, 1}));
  }
  return g.mean(per_item.size() == 1 ? per_item[0] : g.concat_rows(per_item));
}

ad::Var infonce_repulsion(ad::Graph& g, ad::Var clean, ad::Var patched, double tau) {
  const Tensor& c = g.value(clean);
  const Tensor& p = g.value(patched);
  if (c.rows() != p.rows() || c.cols() != p.cols())
    throw std::invalid_argument("infonce_repulsion: clean and patched batches differ in shape");
  if (!(tau > 0)) throw std::invalid_argument("infonce_repulsion: tau must be positive");
  require_nonzero_rows(c, "infonce_repulsion");
  require_nonzero_rows(p, "infonce_repulsion");
  const std::size_t n = c.rows();
  ad::Var sim = g.scale(g.matmul(g.l2_normalize_rows(clean), g.transpose(g.l2_normalize_rows(patched))), 1.0 / tau);
  ad::Var lse = g.sum(g.logsumexp_rows(sim));
  ad::Var diag = g.sum(g.mask_mul(sim, Tensor::identity(n)));
  return g.scale(g.sub(lse, diag), 1.0 / static_cast<double>(n));
}

SharesVars attention_shares(ad::Graph& g, const std::vector<std::vector<ad::Var>>& attention,
                            std::size_t vision_count, std::size_t text_count, std::size_t last_n) {
  if (attention.empty()) throw std::invalid_argument("attention_shares: trace carries no attention");
  const std::size_t layers = attention.size();
  if (last_n < 1 || last_n > layers) throw std::invalid_argument("attention_shares: last_n outside [1, L]");
  Tensor mass({text_count});
  std::vector<ad::Var> per_layer;
  for (std::size_t l = layers - last_n; l < layers; ++l) {
    const auto& heads = attention[l];
    ad::Var avg = heads[0];
    for (std::size_t h = 1; h < heads.size(); ++h) avg = g.add(avg, heads[h]);
    avg = g.scale(avg, 1.0 / static_cast<double>(heads.size()));
    ad::Var tv = g.slice_cols(g.slice_rows(avg, vision_count, vision_count + text_count), 0, vision_count);
    const Tensor& tvv = g.value(tv);
    for (std::size_t t = 0; t < text_count; ++t)
      for (std::size_t p = 0; p < vision_count; ++p) mass[t] += tvv.at(t, p) / static_cast<double>(last_n);
    per_layer.push_back(g.row_normalize(tv));
  }
  ad::Var total = per_layer[0];
  for (std::size_t i = 1; i < per_layer.size(); ++i) total = g.add(total, per_layer[i]);
  return {g.scale(total, 1.0 / static_cast<double>(last_n)), std::move(mass)};
}

std::vector<std::size_t> topk_rows(const Tensor& clean_mass, double fraction) {
  const std::size_t t = clean_mass.size();
  if (t == 0) throw std::invalid_argument("topk_rows: no text rows");
  if (!(fraction > 0 && fraction <= 1)) throw std::invalid_argument("topk_rows: fraction must be in (0, 1]");
  const auto k = std::max<std::size_t>(1, static_cast<std::size_t>(std::ceil(fraction * static_cast<double>(t) - 1e-12)));
  std::vector<std::size_t> order(t);
  std::iota(order.begin(), order.end(), 0);
  std::stable_sort(order.begin(), order.end(),
                   [&](std::size_t a, std::size_t b) { return clean_mass[a] > clean_mass[b]; });
  order.resize(std::min(k, t));
  std::sort(order.begin(), order.end());
  return order;
}

ad::Var pad_loss(ad::Graph& g, ad::Var patched_shares, const AttentionShares& clean, const Tensor& token_weights,
                 const LossWeights& w) {
  const Tensor& bp = g.value(patched_shares);
  if (!bp.same_shape(clean.shares)) throw std::invalid_argument("pad_loss: patched and clean shares differ in T or P");
  const std::size_t p = bp.cols();
  if (token_weights.size() != p) throw std::invalid_argument("pad_loss: token mask length != vision tokens");
  if (clean.mass.size() != bp.rows()) throw std::invalid_argument("pad_loss: clean mass length != text rows");

  const auto rows = topk_rows(clean.mass, w.topk_fraction);
  ad::Var delta = g.select_rows(g.sub(patched_shares, g.constant(clean.shares)), rows);
  const std::size_t k = rows.size();

  Tensor outside(token_weights.shape());
  for (std::size_t j = 0; j < p; ++j) outside[j] = 1.0 - token_weights[j];
  ad::Var d_patch = g.matmul(delta, g.constant(as_column(token_weights)));
  ad::Var d_non = g.matmul(delta, g.constant(as_column(outside)));
  Tensor outside_rows({k, p});
  for (std::size_t i = 0; i < k; ++i)
    for (std::size_t j = 0; j < p; ++j) outside_rows.at(i, j) = outside[j];
  ad::Var non_top = g.max_rows(g.mask_mul(delta, outside_rows));

  ad::Var hinge = g.relu(g.add_scalar(g.scale(g.sub(d_patch, non_top), -1.0), w.margin));
  ad::Var out = g.sub(g.mean(d_patch), g.scale(g.mean(g.relu(d_non)), w.lambda_nonpatch));
  return g.sub(out, g.mean(hinge));
}

PooledVar pooled_patch_feature(ad::Graph& g, ad::Var tokens, const Tensor& token_weights) {
  const Tensor& z = g.value(tokens);
  if (token_weights.size() != z.rows()) throw std::invalid_argument("pooled_patch_feature: mask length != tokens");
  const double total = token_weights.sum();
  ad::Var pooled = g.scale(g.matmul(g.constant(token_weights.reshaped({1, z.rows()})), tokens), 1.0 / (total + kPoolEps));
  if (l2_norm(g.value(pooled).data()) < 1e-9) return {g.constant(Tensor({1, z.cols()})), true};
  return {g.l2_normalize_rows(pooled), false};
}

ad::Var psm_loss(ad::Graph& g, ad::Var patch_feature, const Tensor& probes, const Tensor& instruction, double alpha,
                 double beta, double tau) {
  if (probes.rank() != 2 || probes.rows() == 0) throw std::invalid_argument("psm_loss: need at least one probe");
  const std::size_t d = g.value(patch_feature).size();
  if (probes.cols() != d || instruction.size() != d) throw std::invalid_argument("psm_loss: dimension mismatch");
  if (!(tau > 0)) throw std::invalid_argument("psm_loss: tau must be positive");
  if (g.value(patch_feature).max_abs() == 0.0) return g.constant(Tensor({1}));
  ad::Var v = g.reshape(patch_feature, {1, d});
  ad::Var pull = g.logsumexp_rows(g.scale(g.matmul(v, g.constant(probes.transposed())), 1.0 / tau));
  ad::Var push = g.matmul(v, g.constant(instruction.reshaped({d, 1})));
  return g.reshape(g.sub(g.scale(pull, alpha), g.scale(push, beta)), {1});
}

ObjectiveTerms j_tr(ad::Graph& g, std::span<const PatchedItem> batch, const LossWeights& w) {
  if (batch.empty()) throw std::invalid_argument("j_tr: empty batch");
  std::vector<ad::Var> patched, clean, patched_pooled, clean_pooled;
  for (const auto& item : batch) {
    patched.push_back(item.tokens);
    ad::Var c = g.constant(item.clean_tokens);
    clean.push_back(c);
    patched_pooled.push_back(g.col_mean(item.tokens));
    clean_pooled.push_back(g.col_mean(c));
  }
  ObjectiveTerms t;
  t.l1 = l1_deviation(g, patched, clean);
  t.con = infonce_repulsion(g, g.concat_rows(clean_pooled), g.concat_rows(patched_pooled), w.tau_con);
  t.total = g.add(g.scale(t.l1, w.lambda_l1), g.scale(t.con, w.lambda_con));
  return t;
}

ObjectiveTerms j_out(ad::Graph& g, std::span<const PatchedItem> batch, const Tensor& probes, const LossWeights& w) {
  ObjectiveTerms t = j_tr(g, batch, w);
  std::vector<ad::Var> pads, psms;
  for (const auto& item : batch) {
    if (!item.attention) throw std::invalid_argument("j_out: patched item lacks attention");
    SharesVars sv = attention_shares(g, *item.attention, item.vision_count, item.text_count, w.attn_last_n);
    pads.push_back(g.reshape(pad_loss(g, sv.shares, item.clean_shares, item.token_weights, w), {1, 1}));
    PooledVar pv = pooled_patch_feature(g, item.tokens, item.token_weights);
    if (pv.degenerate) {
      t.any_degenerate = true;
      psms.push_back(g.constant(Tensor({1, 1})));
    } else {
      psms.push_back(g.reshape(psm_loss(g, pv.feature, probes, item.instruction, w.alpha, w.beta, w.tau_psm), {1, 1}));
    }
  }
  t.pad = g.mean(pads.size() == 1 ? pads[0] : g.concat_rows(pads));
  t.psm = g.mean(psms.size() == 1 ? psms[0] : g.concat_rows(psms));
  t.total = g.add(t.total, g.add(g.scale(t.pad, w.lambda_pad), g.scale(t.psm, w.lambda_psm)));
  return t;
}

// ---- plain-tensor forms ----

double l1_deviation(const Tensor& patched, const Tensor& clean) {
  if (!patched.same_shape(clean)) throw std::invalid_argument("l1_deviation: feature shape mismatch");
  ad::Graph g;
  const ad::Var p[] = {g.constant(patched)};
  const ad::Var c[] = {g.constant(clean)};
  return g.scalar(l1_deviation(g, p, c));
}

double infonce_repulsion(const Tensor& clean, const Tensor& patched, double tau) {
  ad::Graph g;
  return g.scalar(infonce_repulsion(g, g.constant(clean), g.constant(patched), tau));
}

AttentionShares attention_shares(const policy::ForwardTrace& trace, std::size_t last_n) {
  if (trace.attention.size() == 0 || trace.attention.rank() != 4)
    throw std::invalid_argument("attention_shares: trace carries no attention");
  ad::Graph g;
  const std::size_t layers = trace.layers(), heads = trace.heads(), n = trace.attention.dim(2);
  std::vector<std::vector<ad::Var>> att(layers);
  for (std::size_t l = 0; l < layers; ++l)
    for (std::size_t h = 0; h < heads; ++h) {
      const auto begin = trace.attention.values().begin() + static_cast<long>((l * heads + h) * n * n);
      att[l].push_back(g.constant(Tensor({n, n}, std::vector<double>(begin, begin + static_cast<long>(n * n)))));
    }
  SharesVars sv = attention_shares(g, att, trace.vision_count(), trace.text_count(), last_n);
  return {g.value(sv.shares), sv.mass};
}

double pad_loss(const AttentionShares& patched, const AttentionShares& clean, const Tensor& token_weights,
                const LossWeights& w) {
  ad::Graph g;
  return g.scalar(pad_loss(g, g.constant(patched.shares), clean, token_weights, w));
}

PooledFeature pooled_patch_feature(const Tensor& tokens, const Tensor& token_weights) {
  ad::Graph g;
  PooledVar pv = pooled_patch_feature(g, g.constant(tokens), token_weights);
  return {g.value(pv.feature), pv.degenerate};
}

double psm_loss(const Tensor& patch_feature, const Tensor& probes, const Tensor& instruction, double alpha,
                double beta, double tau) {
  ad::Graph g;
  return g.scalar(psm_loss(g, g.constant(patch_feature), probes, instruction, alpha, beta, tau));
}

}  // namespace upa::losses
