#pragma once

// Robustness-augmented universal patch optimization.
//
// For every mini-batch: an inner projected-gradient loop finds one small
// per-item perturbation sigma that *reduces* J_tr on the surrogate (T fixed
// across the inner iterations), then K outer AdamW steps *increase* J_out
// w.r.t. the shared patch under fresh placements, clamping texels to [0,1].

#include <cstddef>
#include <cstdint>
#include <functional>
#include <span>
#include <string>
#include <vector>

#include "upa/losses.hpp"
#include "upa/optim.hpp"
#include "upa/policy.hpp"
#include "upa/render.hpp"
#include "upa/rng.hpp"
#include "upa/tensor.hpp"

namespace upa::attack {

struct AttackConfig {
  double epsilon_sigma = 8.0 / 255.0;
  double eta_sigma = 2.0 / 255.0;
  double eta_delta = 0.01;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double adam_eps = 1e-8;
  double weight_decay = 0.0;
  std::size_t inner_steps = 5;
  std::size_t outer_steps = 10;
  std::size_t epochs = 3;
  std::size_t batch_size = 4;
  losses::LossWeights weights;
  std::size_t patch_height = 8;
  std::size_t patch_width = 8;
  double area_budget = 65.0;
  render::TransformLimits limits{0.3, 0.0};
  std::uint64_t master_seed = 0;

  AdamParams adam() const { return {eta_delta, beta1, beta2, adam_eps, weight_decay}; }
  // Throws std::invalid_argument naming the offending field.
  void validate(const policy::PolicySpec& surrogate) const;
};

struct Sample {
  Tensor image;  // H x W x 3 in [0, 1]
  std::string instruction;
};

// Surrogate quantities from the pristine image; constants during optimization.
struct CleanRun {
  policy::Instruction instruction;
  Tensor tokens;
  losses::AttentionShares shares;
  Tensor instruction_embedding;
};

struct LossBreakdown {
  double total = 0.0;
  double l1 = 0.0;
  double con = 0.0;
  double pad = 0.0;
  double psm = 0.0;
};

struct BatchRecord {
  std::size_t epoch = 0;
  std::size_t batch = 0;
  std::vector<std::size_t> items;
  std::vector<render::TransformSample> inner_transforms;
  std::vector<double> inner_objective;  // J_in at sigma^(0..I)
  std::vector<Tensor> sigmas;
};

struct StepRecord {
  std::size_t epoch = 0;
  std::size_t batch = 0;  // index into RunHistory::batches
  std::size_t outer_index = 0;
  LossBreakdown losses;   // J_out and components at the pre-update patch
  std::vector<render::TransformSample> transforms;
  std::string rng_checkpoint;  // transform stream state before drawing this step
  Tensor patch_before;
};

struct RunHistory {
  std::vector<BatchRecord> batches;
  std::vector<StepRecord> steps;
};

// Called after every outer step, e.g. to stream the history to disk.
using StepObserver = std::function<void(const StepRecord&)>;

struct RunResult {
  render::PatchTexture patch;
  RunHistory history;
};

class Attacker {
 public:
  Attacker(const policy::Policy& surrogate, AttackConfig cfg, std::vector<std::string> probe_phrases);

  const AttackConfig& config() const { return cfg_; }
  const Tensor& probes() const { return probes_; }

  CleanRun clean_run(const Sample& sample) const;

  // J_tr (outer = false) or J_out (outer = true) on P(x + sigma, delta, T) for each item.
  struct Evaluation {
    LossBreakdown losses;
    Tensor patch_grad;          // filled when outer
    std::vector<Tensor> sigma_grads;  // filled when !outer
  };
  Evaluation evaluate(std::span<const Sample> batch, std::span<const CleanRun> clean, std::span<const Tensor> sigmas,
                      const Tensor& patch, std::span<const render::TransformSample> transforms, bool outer,
                      bool with_grad = true) const;

  // Returns sigma after inner_steps projected steps; trajectory gets J_in at sigma^(0..I).
  std::vector<Tensor> inner_minimize(std::span<const Sample> batch, std::span<const CleanRun> clean,
                                     const Tensor& patch, std::span<const render::TransformSample> transforms,
                                     std::vector<double>* trajectory = nullptr) const;

  struct OuterResult {
    Tensor patch;
    AdamState state;
    LossBreakdown losses;
  };
  OuterResult outer_step(std::span<const Sample> batch, std::span<const CleanRun> clean,
                         std::span<const Tensor> sigmas, const Tensor& patch, AdamState state,
                         std::span<const render::TransformSample> transforms) const;

  std::vector<render::TransformSample> draw_transforms(Rng& rng, std::size_t count) const;

  RunResult run(std::span<const Sample> dataset, const StepObserver& observer = {}) const;

  // Recomputes the recorded J_out of one step from its checkpoint.
  double replay_step(std::span<const Sample> dataset, const RunHistory& history, std::size_t step) const;

 private:
  const policy::Policy& surrogate_;
  AttackConfig cfg_;
  Tensor probes_;
  render::FrameSize frame_;
};

RunResult run_upa_rfas(std::span<const Sample> dataset, const policy::Policy& surrogate, const AttackConfig& cfg,
                       std::vector<std::string> probe_phrases, const StepObserver& observer = {});

// Stream tags for seeds derived from the master seed.
inline constexpr std::uint64_t kTransformStream = 1;
inline constexpr std::uint64_t kInitStream = 2;

}  // namespace upa::attack
