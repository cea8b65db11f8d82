#include "upa/policy.hpp"

#include <cctype>
#include <cmath>
#include <sstream>
#include <stdexcept>

#include "upa/rng.hpp"

namespace upa::policy {

namespace {

Tensor draw(Rng& rng, std::vector<std::size_t> shape, double scale) {
  Tensor t(std::move(shape));
  for (auto& v : t.values()) v = rng.uniform(-scale, scale);
  return t;
}

double fan_in_scale(std::size_t fan_in) { return 1.0 / std::sqrt(static_cast<double>(fan_in)); }

void append(std::vector<double>& out, const Tensor& t) {
  out.insert(out.end(), t.values().begin(), t.values().end());
}

}  // namespace

PolicySpec PolicySpec::surrogate_default() { return PolicySpec{}; }

PolicySpec PolicySpec::victim_default() {
  PolicySpec s;
  s.seed = 2;
  s.branch_width_a = 24;
  s.branch_width_b = 8;
  s.vision_depth = 3;
  s.token_dim = 48;
  s.backbone_depth = 3;
  s.heads = 6;
  return s;
}

void PolicySpec::validate() const {
  auto fail = [](const std::string& what) { throw std::invalid_argument("invalid policy spec: " + what); };
  if (image_height < 2 || image_width < 2) fail("image dims must be >= 2");
  if (grid < 2) fail("grid must be >= 2");
  if (image_height % grid != 0 || image_width % grid != 0) fail("image dims must be divisible by grid");
  if (branch_width_a < 2 || branch_width_b < 2) fail("branch widths must be >= 2");
  if (vision_depth < 1) fail("vision depth must be >= 1");
  if (token_dim < 2) fail("token dim must be >= 2");
  if (backbone_depth < 1) fail("backbone depth must be >= 1");
  if (heads < 1) fail("heads must be >= 1");
  if (token_dim % heads != 0) fail("token dim must be divisible by heads");
  if (vocab_size < 2) fail("vocab size must be >= 2");
  if (action_dim < 2) fail("action dim must be >= 2");
}

std::size_t hash_word(const std::string& word, std::size_t vocab_size) {
  std::uint64_t h = 0xcbf29ce484222325ULL;
  for (unsigned char c : word) {
    h ^= c;
    h *= 0x100000001b3ULL;
  }
  return static_cast<std::size_t>(h % vocab_size);
}

Policy::Policy(PolicySpec spec) : spec_(spec) {
  spec_.validate();
  Rng rng(spec_.seed);
  const std::size_t cell_h = spec_.image_height / spec_.grid;
  const std::size_t cell_w = spec_.image_width / spec_.grid;
  cell_dim_ = cell_h * cell_w * 3;
  const std::size_t p = spec_.vision_tokens();

  for (std::size_t cy = 0; cy < spec_.grid; ++cy)
    for (std::size_t cx = 0; cx < spec_.grid; ++cx)
      for (std::size_t y = 0; y < cell_h; ++y)
        for (std::size_t x = 0; x < cell_w; ++x)
          for (std::size_t ch = 0; ch < 3; ++ch)
            patchify_index_.push_back(
                static_cast<long>(((cy * cell_h + y) * spec_.image_width + cx * cell_w + x) * 3 + ch));

  auto make_block = [&](std::size_t d) {
    Block b;
    b.wq = draw(rng, {d, d}, fan_in_scale(d));
    b.wk = draw(rng, {d, d}, fan_in_scale(d));
    b.wv = draw(rng, {d, d}, fan_in_scale(d));
    b.wo = draw(rng, {d, d}, fan_in_scale(d));
    b.w1 = draw(rng, {d, 2 * d}, fan_in_scale(d));
    b.b1 = draw(rng, {1, 2 * d}, fan_in_scale(d));
    b.w2 = draw(rng, {2 * d, d}, fan_in_scale(2 * d));
    b.b2 = draw(rng, {1, d}, fan_in_scale(2 * d));
    return b;
  };
  auto make_branch = [&](std::size_t d) {
    Branch br;
    br.embed = draw(rng, {cell_dim_, d}, fan_in_scale(cell_dim_));
    br.embed_bias = draw(rng, {1, d}, fan_in_scale(cell_dim_));
    br.position = draw(rng, {p, d}, 0.5);
    for (std::size_t i = 0; i < spec_.vision_depth; ++i) br.blocks.push_back(make_block(d));
    return br;
  };

  branch_a_ = make_branch(spec_.branch_width_a);
  branch_b_ = make_branch(spec_.branch_width_b);
  const std::size_t concat = spec_.branch_width_a + spec_.branch_width_b;
  projector_ = draw(rng, {concat, spec_.token_dim}, fan_in_scale(concat));
  projector_bias_ = draw(rng, {1, spec_.token_dim}, fan_in_scale(concat));
  token_embedding_ = draw(rng, {spec_.vocab_size, spec_.token_dim}, 1.0);
  text_position_ = draw(rng, {kMaxTextTokens, spec_.token_dim}, 0.5);
  for (std::size_t i = 0; i < spec_.backbone_depth; ++i) backbone_.push_back(make_block(spec_.token_dim));
  head_ = draw(rng, {spec_.token_dim, spec_.action_dim}, fan_in_scale(spec_.token_dim));
  head_bias_ = draw(rng, {1, spec_.action_dim}, fan_in_scale(spec_.token_dim));
}

std::vector<double> Policy::parameters() const {
  std::vector<double> out;
  auto add_block = [&](const Block& b) {
    for (const Tensor* t : {&b.wq, &b.wk, &b.wv, &b.wo, &b.w1, &b.b1, &b.w2, &b.b2}) append(out, *t);
  };
  for (const Branch* br : {&branch_a_, &branch_b_}) {
    append(out, br->embed);
    append(out, br->embed_bias);
    append(out, br->position);
    for (const auto& b : br->blocks) add_block(b);
  }
  append(out, projector_);
  append(out, projector_bias_);
  append(out, token_embedding_);
  append(out, text_position_);
  for (const auto& b : backbone_) add_block(b);
  append(out, head_);
  append(out, head_bias_);
  return out;
}

std::size_t Policy::parameter_count() const { return parameters().size(); }

void Policy::check_image(const Tensor& image) const {
  if (image.rank() != 3 || image.dim(0) != spec_.image_height || image.dim(1) != spec_.image_width ||
      image.dim(2) != 3)
    throw std::invalid_argument("policy expects a " + std::to_string(spec_.image_height) + "x" +
                                std::to_string(spec_.image_width) + "x3 image, got " + shape_string(image.shape()));
}

ad::Var Policy::patchify(ad::Graph& g, ad::Var image) const {
  check_image(g.value(image));
  return g.gather(image, patchify_index_, {spec_.vision_tokens(), cell_dim_});
}

ad::Var Policy::run_block(ad::Graph& g, ad::Var x, const Block& b, std::size_t heads,
                          std::vector<ad::Var>* attention) const {
  const std::size_t d = g.value(x).cols();
  const std::size_t dh = d / heads;
  const double inv_sqrt = 1.0 / std::sqrt(static_cast<double>(dh));

  ad::Var h = g.layer_norm_rows(x);
  ad::Var q = g.matmul(h, g.constant(b.wq));
  ad::Var k = g.matmul(h, g.constant(b.wk));
  ad::Var v = g.matmul(h, g.constant(b.wv));
  std::vector<ad::Var> outs;
  for (std::size_t head = 0; head < heads; ++head) {
    ad::Var qh = heads == 1 ? q : g.slice_cols(q, head * dh, (head + 1) * dh);
    ad::Var kh = heads == 1 ? k : g.slice_cols(k, head * dh, (head + 1) * dh);
    ad::Var vh = heads == 1 ? v : g.slice_cols(v, head * dh, (head + 1) * dh);
    ad::Var a = g.softmax_rows(g.scale(g.matmul(qh, g.transpose(kh)), inv_sqrt));
    if (attention) attention->push_back(a);
    outs.push_back(g.matmul(a, vh));
  }
  ad::Var mixed = heads == 1 ? outs[0] : g.concat_cols(outs);
  x = g.add(x, g.matmul(mixed, g.constant(b.wo)));

  h = g.layer_norm_rows(x);
  ad::Var hidden = g.tanh(g.add_row(g.matmul(h, g.constant(b.w1)), g.constant(b.b1)));
  return g.add(x, g.add_row(g.matmul(hidden, g.constant(b.w2)), g.constant(b.b2)));
}

ad::Var Policy::run_branch(ad::Graph& g, ad::Var cells, const Branch& br) const {
  ad::Var e = g.add_row(g.matmul(cells, g.constant(br.embed)), g.constant(br.embed_bias));
  e = g.add(e, g.constant(br.position));
  for (const auto& b : br.blocks) e = run_block(g, e, b, 1, nullptr);
  return e;
}

ad::Var Policy::vision_tokens(ad::Graph& g, ad::Var image) const {
  ad::Var cells = patchify(g, image);
  const ad::Var parts[] = {run_branch(g, cells, branch_a_), run_branch(g, cells, branch_b_)};
  ad::Var ev = g.concat_cols(parts);
  return g.add_row(g.matmul(ev, g.constant(projector_)), g.constant(projector_bias_));
}

TraceVars Policy::forward(ad::Graph& g, ad::Var image, const Instruction& instr) const {
  if (instr.ids.empty()) throw std::invalid_argument("instruction must contain at least one token");
  if (instr.ids.size() > kMaxTextTokens)
    throw std::invalid_argument("instruction longer than " + std::to_string(kMaxTextTokens) + " tokens");
  TraceVars tv;
  ad::Var cells = patchify(g, image);
  const ad::Var parts[] = {run_branch(g, cells, branch_a_), run_branch(g, cells, branch_b_)};
  tv.vision_embeddings = g.concat_cols(parts);
  tv.vision_tokens = g.add_row(g.matmul(tv.vision_embeddings, g.constant(projector_)), g.constant(projector_bias_));

  const std::size_t d = spec_.token_dim;
  Tensor text({instr.ids.size(), d});
  for (std::size_t t = 0; t < instr.ids.size(); ++t) {
    if (instr.ids[t] >= spec_.vocab_size) throw std::invalid_argument("token id outside vocabulary");
    for (std::size_t j = 0; j < d; ++j)
      text.at(t, j) = token_embedding_.at(instr.ids[t], j) + text_position_.at(t, j);
  }
  const ad::Var seq[] = {tv.vision_tokens, g.constant(std::move(text))};
  ad::Var x = g.concat_rows(seq);
  for (const auto& b : backbone_) {
    tv.attention.emplace_back();
    x = run_block(g, x, b, spec_.heads, &tv.attention.back());
  }
  tv.vision_count = spec_.vision_tokens();
  tv.text_count = instr.ids.size();
  tv.text_states = g.slice_rows(x, tv.vision_count, tv.vision_count + tv.text_count);
  ad::Var pooled = g.col_mean(g.layer_norm_rows(x));
  tv.action = g.add_row(g.matmul(pooled, g.constant(head_)), g.constant(head_bias_));
  return tv;
}

ForwardTrace Policy::forward(const Tensor& image, const Instruction& instr) const {
  ad::Graph g;
  TraceVars tv = forward(g, g.constant(image), instr);
  ForwardTrace tr;
  tr.vision_embeddings = g.value(tv.vision_embeddings);
  tr.vision_tokens = g.value(tv.vision_tokens);
  tr.text_states = g.value(tv.text_states);
  tr.action = g.value(tv.action).reshaped({spec_.action_dim});
  const std::size_t n = tv.vision_count + tv.text_count;
  tr.attention = Tensor({spec_.backbone_depth, spec_.heads, n, n});
  std::size_t offset = 0;
  for (const auto& layer : tv.attention)
    for (ad::Var a : layer) {
      const Tensor& av = g.value(a);
      std::copy(av.values().begin(), av.values().end(), tr.attention.values().begin() + offset);
      offset += av.size();
    }
  return tr;
}

Features Policy::features(const Tensor& image) const {
  ad::Graph g;
  ad::Var z = vision_tokens(g, g.constant(image));
  return Features{g.value(z), g.value(g.col_mean(z))};
}

Tensor Policy::instruction_embedding(const ForwardTrace& trace) {
  const Tensor& s = trace.text_states;
  Tensor mean({1, s.cols()});
  for (std::size_t i = 0; i < s.rows(); ++i)
    for (std::size_t j = 0; j < s.cols(); ++j) mean[j] += s.at(i, j);
  const double n = l2_norm(mean.data());
  if (n == 0.0) throw std::domain_error("instruction embedding has zero norm");
  for (auto& v : mean.values()) v /= n;
  return mean;
}

Tensor Policy::text_anchor(const std::string& phrase) const {
  const Tensor gray({spec_.image_height, spec_.image_width, 3}, kAnchorGray);
  return instruction_embedding(forward(gray, tokenize(phrase)));
}

Instruction Policy::tokenize(const std::string& text) const {
  Instruction instr{text, {}};
  std::istringstream is(text);
  std::string word;
  while (is >> word) {
    for (auto& c : word) c = static_cast<char>(std::tolower(static_cast<unsigned char>(c)));
    instr.ids.push_back(hash_word(word, spec_.vocab_size));
  }
  if (instr.ids.empty()) throw std::invalid_argument("cannot tokenize empty text");
  if (instr.ids.size() > kMaxTextTokens)
    throw std::invalid_argument("instruction longer than " + std::to_string(kMaxTextTokens) + " tokens");
  return instr;
}

}  // namespace upa::policy
