#pragma once

// Deterministic toy vision-language-action policies.
//
// y = head(backbone([projector(vision(x)), embed(tokens)]))
//
// The vision encoder has two branches whose token embeddings are concatenated
// channel-wise; the backbone is a stack of full (non-causal) multi-head
// attention blocks over the joint vision + text sequence. Every weight is
// drawn from a seeded generator, so a PolicySpec fully determines a policy.

#include <cstddef>
#include <cstdint>
#include <string>
#include <vector>

#include "upa/autodiff.hpp"
#include "upa/tensor.hpp"

namespace upa::policy {

inline constexpr std::size_t kMaxTextTokens = 32;
inline constexpr double kAnchorGray = 0.5;

struct PolicySpec {
  std::uint64_t seed = 1;
  std::size_t image_height = 32;
  std::size_t image_width = 32;
  std::size_t grid = 8;
  std::size_t branch_width_a = 16;
  std::size_t branch_width_b = 16;
  std::size_t vision_depth = 2;
  std::size_t token_dim = 32;
  std::size_t backbone_depth = 4;
  std::size_t heads = 4;
  std::size_t vocab_size = 1024;
  std::size_t action_dim = 7;

  static PolicySpec surrogate_default();
  static PolicySpec victim_default();

  std::size_t vision_tokens() const { return grid * grid; }
  // Throws std::invalid_argument naming the first violated constraint.
  void validate() const;

  friend bool operator==(const PolicySpec&, const PolicySpec&) = default;
};

struct Instruction {
  std::string text;
  std::vector<std::size_t> ids;
};

// Plain-value record of one forward pass.
struct ForwardTrace {
  Tensor vision_embeddings;  // P x (d_a + d_b)
  Tensor vision_tokens;      // P x D_t
  Tensor text_states;        // T x D_t, last backbone layer
  Tensor attention;          // L x H x (P+T) x (P+T), post-softmax
  Tensor action;             // D_a

  std::size_t layers() const { return attention.dim(0); }
  std::size_t heads() const { return attention.dim(1); }
  std::size_t vision_count() const { return vision_tokens.rows(); }
  std::size_t text_count() const { return text_states.rows(); }
};

// Same quantities as graph nodes, for differentiation.
struct TraceVars {
  ad::Var vision_embeddings;
  ad::Var vision_tokens;
  ad::Var text_states;
  ad::Var action;
  std::vector<std::vector<ad::Var>> attention;  // [layer][head]
  std::size_t vision_count = 0;
  std::size_t text_count = 0;
};

struct Features {
  Tensor tokens;  // P x D_t
  Tensor pooled;  // 1 x D_t, token mean (not normalized)
};

class Policy {
 public:
  explicit Policy(PolicySpec spec);

  const PolicySpec& spec() const { return spec_; }
  std::size_t parameter_count() const;
  // All parameters flattened in construction order.
  std::vector<double> parameters() const;

  TraceVars forward(ad::Graph& g, ad::Var image, const Instruction& instr) const;
  ad::Var vision_tokens(ad::Graph& g, ad::Var image) const;

  ForwardTrace forward(const Tensor& image, const Instruction& instr) const;
  Features features(const Tensor& image) const;

  // Unit-norm mean of last-layer text states for `phrase` on a uniform gray image.
  Tensor text_anchor(const std::string& phrase) const;
  // Unit-norm mean of text states from an existing trace.
  static Tensor instruction_embedding(const ForwardTrace& trace);

  Instruction tokenize(const std::string& text) const;

 private:
  struct Block {
    Tensor wq, wk, wv, wo, w1, b1, w2, b2;
  };
  struct Branch {
    Tensor embed, embed_bias, position;
    std::vector<Block> blocks;
  };

  void check_image(const Tensor& image) const;
  ad::Var patchify(ad::Graph& g, ad::Var image) const;
  ad::Var run_branch(ad::Graph& g, ad::Var cells, const Branch& branch) const;
  ad::Var run_block(ad::Graph& g, ad::Var x, const Block& block, std::size_t heads,
                    std::vector<ad::Var>* attention) const;

  PolicySpec spec_;
  std::vector<long> patchify_index_;
  std::size_t cell_dim_ = 0;
  Branch branch_a_, branch_b_;
  Tensor projector_, projector_bias_;
  Tensor token_embedding_, text_position_;
  std::vector<Block> backbone_;
  Tensor head_, head_bias_;
};

// FNV-1a 64-bit of the lowercase word, reduced modulo vocab_size.
std::size_t hash_word(const std::string& lowercase_word, std::size_t vocab_size);

}  // namespace upa::policy
