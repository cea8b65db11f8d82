#include "upa/attack.hpp"

#include <algorithm>
#include <stdexcept>

namespace upa::attack {

void AttackConfig::validate(const policy::PolicySpec& surrogate) const {
  auto fail = [](const std::string& what) { throw std::invalid_argument("invalid attack config: " + what); };
  if (epsilon_sigma < 0) fail("epsilon_sigma must be >= 0");
  if (!(eta_sigma > 0)) fail("eta_sigma must be > 0");
  if (!(eta_delta > 0)) fail("eta_delta must be > 0");
  if (!(beta1 >= 0 && beta1 < 1) || !(beta2 >= 0 && beta2 < 1)) fail("adam betas must be in [0, 1)");
  if (!(adam_eps > 0)) fail("adam_eps must be > 0");
  if (weight_decay < 0) fail("weight_decay must be >= 0");
  if (outer_steps < 1) fail("outer_steps must be >= 1");
  if (epochs < 1) fail("epochs must be >= 1");
  if (batch_size < 1) fail("batch_size must be >= 1");
  if (patch_height < 1 || patch_width < 1) fail("patch dims must be >= 1");
  weights.validate(surrogate.backbone_depth);
  render::check_area_budget(patch_height * patch_width, area_budget);
  const render::Extent worst = render::worst_case_extent(patch_height, patch_width, limits);
  if (worst.width > surrogate.image_width || worst.height > surrogate.image_height)
    fail("patch does not fit the frame under the transform limits");
}

Attacker::Attacker(const policy::Policy& surrogate, AttackConfig cfg, std::vector<std::string> probe_phrases)
    : surrogate_(surrogate),
      cfg_(std::move(cfg)),
      frame_{surrogate.spec().image_height, surrogate.spec().image_width} {
  cfg_.validate(surrogate_.spec());
  probes_ = losses::probe_anchors(surrogate_, probe_phrases);
}

CleanRun Attacker::clean_run(const Sample& sample) const {
  CleanRun c;
  c.instruction = surrogate_.tokenize(sample.instruction);
  policy::ForwardTrace tr = surrogate_.forward(sample.image, c.instruction);
  c.tokens = tr.vision_tokens;
  c.shares = losses::attention_shares(tr, cfg_.weights.attn_last_n);
  c.instruction_embedding = policy::Policy::instruction_embedding(tr);
  return c;
}

std::vector<render::TransformSample> Attacker::draw_transforms(Rng& rng, std::size_t count) const {
  std::vector<render::TransformSample> out;
  for (std::size_t i = 0; i < count; ++i)
    out.push_back(render::sample_transform(rng, frame_, cfg_.patch_height, cfg_.patch_width, cfg_.limits));
  return out;
}

Attacker::Evaluation Attacker::evaluate(std::span<const Sample> batch, std::span<const CleanRun> clean,
                                        std::span<const Tensor> sigmas, const Tensor& patch,
                                        std::span<const render::TransformSample> transforms, bool outer,
                                        bool with_grad) const {
  const std::size_t n = batch.size();
  if (n == 0) throw std::invalid_argument("evaluate: empty batch");
  if (clean.size() != n || sigmas.size() != n || transforms.size() != n)
    throw std::invalid_argument("evaluate: batch, clean runs, sigmas and transforms must align");

  ad::Graph g;
  ad::Var delta = (outer && with_grad) ? g.input(patch) : g.constant(patch);
  std::vector<ad::Var> sigma_vars;
  std::vector<policy::TraceVars> traces(n);
  std::vector<losses::PatchedItem> items;
  items.reserve(n);
  for (std::size_t i = 0; i < n; ++i) {
    ad::Var s = (!outer && with_grad) ? g.input(sigmas[i]) : g.constant(sigmas[i]);
    sigma_vars.push_back(s);
    ad::Var x = g.add(g.constant(batch[i].image), s);
    const render::Raster raster = render::rasterize_geometry(cfg_.patch_height, cfg_.patch_width, transforms[i], frame_);
    ad::Var pasted = render::paste(g, x, delta, raster);
    losses::PatchedItem item;
    item.clean_tokens = clean[i].tokens;
    if (outer) {
      traces[i] = surrogate_.forward(g, pasted, clean[i].instruction);
      item.tokens = traces[i].vision_tokens;
      item.attention = &traces[i].attention;
      item.vision_count = traces[i].vision_count;
      item.text_count = traces[i].text_count;
      item.clean_shares = clean[i].shares;
      item.token_weights = render::token_mask(raster.mask, surrogate_.spec().grid);
      item.instruction = clean[i].instruction_embedding;
    } else {
      item.tokens = surrogate_.vision_tokens(g, pasted);
    }
    items.push_back(std::move(item));
  }

  losses::ObjectiveTerms terms = outer ? losses::j_out(g, items, probes_, cfg_.weights)
                                       : losses::j_tr(g, items, cfg_.weights);
  Evaluation ev;
  ev.losses.total = g.scalar(terms.total);
  ev.losses.l1 = g.scalar(terms.l1);
  ev.losses.con = g.scalar(terms.con);
  if (outer) {
    ev.losses.pad = g.scalar(terms.pad);
    ev.losses.psm = g.scalar(terms.psm);
  }
  if (!with_grad) return ev;
  if (g.requires_grad(terms.total)) g.backward(terms.total);
  if (outer) {
    ev.patch_grad = g.requires_grad(terms.total) ? g.grad(delta) : Tensor(patch.shape());
  } else {
    for (std::size_t i = 0; i < n; ++i)
      ev.sigma_grads.push_back(g.requires_grad(terms.total) ? g.grad(sigma_vars[i]) : Tensor(sigmas[i].shape()));
  }
  return ev;
}

std::vector<Tensor> Attacker::inner_minimize(std::span<const Sample> batch, std::span<const CleanRun> clean,
                                             const Tensor& patch, std::span<const render::TransformSample> transforms,
                                             std::vector<double>* trajectory) const {
  std::vector<Tensor> sigmas;
  for (const auto& s : batch) sigmas.emplace_back(s.image.shape());
  if (trajectory) trajectory->clear();
  for (std::size_t step = 0; step < cfg_.inner_steps; ++step) {
    Evaluation ev = evaluate(batch, clean, sigmas, patch, transforms, false);
    if (trajectory) trajectory->push_back(ev.losses.total);
    for (std::size_t i = 0; i < sigmas.size(); ++i)
      sigmas[i] = linf_project(sigmas[i] - cfg_.eta_sigma * ev.sigma_grads[i], cfg_.epsilon_sigma);
  }
  if (trajectory) trajectory->push_back(evaluate(batch, clean, sigmas, patch, transforms, false, false).losses.total);
  return sigmas;
}

Attacker::OuterResult Attacker::outer_step(std::span<const Sample> batch, std::span<const CleanRun> clean,
                                           std::span<const Tensor> sigmas, const Tensor& patch, AdamState state,
                                           std::span<const render::TransformSample> transforms) const {
  Evaluation ev = evaluate(batch, clean, sigmas, patch, transforms, true);
  // ascend J_out by descending -J_out
  auto [next, next_state] = adamw_update(patch, -1.0 * ev.patch_grad, std::move(state), cfg_.adam());
  return {clamp(next, 0.0, 1.0), std::move(next_state), ev.losses};
}

RunResult Attacker::run(std::span<const Sample> dataset, const StepObserver& observer) const {
  if (dataset.empty()) throw std::invalid_argument("run_upa_rfas: empty dataset");
  std::vector<CleanRun> clean;
  clean.reserve(dataset.size());
  for (const auto& s : dataset) clean.push_back(clean_run(s));

  Rng init(derive_seed(cfg_.master_seed, kInitStream));
  Rng rng(derive_seed(cfg_.master_seed, kTransformStream));
  Tensor patch = render::PatchTexture::uniform_random(cfg_.patch_height, cfg_.patch_width, init).texels();
  AdamState state;
  RunHistory history;

  for (std::size_t epoch = 0; epoch < cfg_.epochs; ++epoch) {
    for (std::size_t start = 0; start < dataset.size(); start += cfg_.batch_size) {
      const std::size_t end = std::min(dataset.size(), start + cfg_.batch_size);
      std::span<const Sample> batch = dataset.subspan(start, end - start);
      std::span<const CleanRun> batch_clean(clean.data() + start, end - start);

      BatchRecord br;
      br.epoch = epoch;
      br.batch = history.batches.size();
      for (std::size_t i = start; i < end; ++i) br.items.push_back(i);
      br.inner_transforms = draw_transforms(rng, batch.size());
      br.sigmas = inner_minimize(batch, batch_clean, patch, br.inner_transforms, &br.inner_objective);

      for (std::size_t k = 0; k < cfg_.outer_steps; ++k) {
        StepRecord sr;
        sr.epoch = epoch;
        sr.batch = br.batch;
        sr.outer_index = k;
        sr.rng_checkpoint = rng.checkpoint();
        sr.transforms = draw_transforms(rng, batch.size());
        sr.patch_before = patch;
        OuterResult res = outer_step(batch, batch_clean, br.sigmas, patch, std::move(state), sr.transforms);
        patch = std::move(res.patch);
        state = std::move(res.state);
        sr.losses = res.losses;
        if (observer) observer(sr);
        history.steps.push_back(std::move(sr));
      }
      history.batches.push_back(std::move(br));
    }
  }
  return {render::PatchTexture(std::move(patch)), std::move(history)};
}

double Attacker::replay_step(std::span<const Sample> dataset, const RunHistory& history, std::size_t step) const {
  const StepRecord& sr = history.steps.at(step);
  const BatchRecord& br = history.batches.at(sr.batch);
  std::vector<Sample> batch;
  std::vector<CleanRun> clean;
  for (std::size_t i : br.items) {
    batch.push_back(dataset[i]);
    clean.push_back(clean_run(dataset[i]));
  }
  Rng rng = Rng::restore(sr.rng_checkpoint);
  const auto transforms = draw_transforms(rng, batch.size());
  return evaluate(batch, clean, br.sigmas, sr.patch_before, transforms, true, false).losses.total;
}

RunResult run_upa_rfas(std::span<const Sample> dataset, const policy::Policy& surrogate, const AttackConfig& cfg,
                       std::vector<std::string> probe_phrases, const StepObserver& observer) {
  return Attacker(surrogate, cfg, std::move(probe_phrases)).run(dataset, observer);
}

}  // namespace upa::attack
