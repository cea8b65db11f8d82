#pragma once

// Attack objectives on surrogate features and attention.
//
//   J_tr  = w_l1 * L1 + w_con * L_con
//   J_out = J_tr + w_pad * L_PAD + w_psm * L_PSM
//
// All losses are written with the sign they are maximized with. Each loss has
// a graph form (differentiable) and a plain-tensor form that evaluates it.

#include <cstddef>
#include <span>
#include <string>
#include <vector>

#include "upa/autodiff.hpp"
#include "upa/policy.hpp"
#include "upa/tensor.hpp"

namespace upa::losses {

struct LossWeights {
  double lambda_l1 = 1.0;
  double lambda_con = 1.0;
  double lambda_pad = 0.5;
  double lambda_psm = 0.5;
  double tau_con = 0.1;
  double tau_psm = 0.07;
  double alpha = 1.0;
  double beta = 1.0;
  double lambda_nonpatch = 1.0;
  double margin = 0.05;
  double topk_fraction = 0.25;
  std::size_t attn_last_n = 2;

  // Throws std::invalid_argument naming the offending field.
  void validate(std::size_t backbone_depth) const;
};

// Text -> vision attention shares averaged over heads and the last N layers.
struct AttentionShares {
  Tensor shares;  // T x P, each row sums to 1
  Tensor mass;    // T, raw text -> vision attention mass before row normalization
};

// Probe phrase sets used as semantic anchors.
enum class ProbeSet { kCombined, kAction, kDirection };
const std::vector<std::string>& probe_phrases(ProbeSet set);
std::string probe_set_name(ProbeSet set);
ProbeSet parse_probe_set(const std::string& name);

// Rows are unit anchors for each phrase.
Tensor probe_anchors(const policy::Policy& policy, std::span<const std::string> phrases);

// ---- plain-tensor forms ----

double l1_deviation(const Tensor& patched, const Tensor& clean);
double infonce_repulsion(const Tensor& clean, const Tensor& patched, double tau);
AttentionShares attention_shares(const policy::ForwardTrace& trace, std::size_t last_n);
// k = ceil(fraction * T) rows with largest clean mass; ties go to the lower index.
std::vector<std::size_t> topk_rows(const Tensor& clean_mass, double fraction);
double pad_loss(const AttentionShares& patched, const AttentionShares& clean, const Tensor& token_weights,
                const LossWeights& w);

struct PooledFeature {
  Tensor feature;  // 1 x D, unit norm or all zeros
  bool degenerate = false;
};
inline constexpr double kPoolEps = 1e-6;
PooledFeature pooled_patch_feature(const Tensor& tokens, const Tensor& token_weights);

double psm_loss(const Tensor& patch_feature, const Tensor& probes, const Tensor& instruction, double alpha,
                double beta, double tau);

// ---- graph forms ----

ad::Var l1_deviation(ad::Graph& g, std::span<const ad::Var> patched, std::span<const ad::Var> clean);
ad::Var infonce_repulsion(ad::Graph& g, ad::Var clean, ad::Var patched, double tau);
struct SharesVars {
  ad::Var shares;
  Tensor mass;
};
SharesVars attention_shares(ad::Graph& g, const std::vector<std::vector<ad::Var>>& attention,
                            std::size_t vision_count, std::size_t text_count, std::size_t last_n);
ad::Var pad_loss(ad::Graph& g, ad::Var patched_shares, const AttentionShares& clean, const Tensor& token_weights,
                 const LossWeights& w);
struct PooledVar {
  ad::Var feature;
  bool degenerate = false;
};
PooledVar pooled_patch_feature(ad::Graph& g, ad::Var tokens, const Tensor& token_weights);
ad::Var psm_loss(ad::Graph& g, ad::Var patch_feature, const Tensor& probes, const Tensor& instruction,
                 double alpha, double beta, double tau);

// One patched item of a batch plus the constants from its clean run.
struct PatchedItem {
  ad::Var tokens;                                               // P x D patched vision tokens
  const std::vector<std::vector<ad::Var>>* attention = nullptr;  // patched backbone attention
  std::size_t vision_count = 0;
  std::size_t text_count = 0;
  Tensor clean_tokens;        // P x D
  AttentionShares clean_shares;
  Tensor token_weights;       // P
  Tensor instruction;         // 1 x D unit instruction embedding
};

struct ObjectiveTerms {
  ad::Var l1, con, pad, psm, total;
  bool any_degenerate = false;
};

ObjectiveTerms j_tr(ad::Graph& g, std::span<const PatchedItem> batch, const LossWeights& w);
ObjectiveTerms j_out(ad::Graph& g, std::span<const PatchedItem> batch, const Tensor& probes, const LossWeights& w);

}  // namespace upa::losses
