#pragma once

// Cross-model alignment probes and transfer evaluation.
//
// With surrogate pooled features z and victim pooled features g on the same
// inputs, fit g ~= z A* (no intercept) and write e(x) = g(x) - z(x) A*. For a
// clean/patched pair, dg = dz A* + de, so
//   ||dg||_2 >= s_min(A*) ||dz||_2 - eps_E
//   ||dg||_1 >= s_min(A*) / sqrt(d) ||dz||_1 - eps_E
// whenever eps_E >= ||de||_2. Taking eps_E as the max over the evaluated pairs
// makes both checks exact identities; a failure means a bug.

#include <cstddef>
#include <cstdint>
#include <mutex>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "upa/attack.hpp"
#include "upa/policy.hpp"
#include "upa/render.hpp"
#include "upa/tensor.hpp"

namespace upa::analysis {

struct AlignmentFit {
  Tensor map;        // d_s x d_t
  Tensor residuals;  // n x d_t
};

AlignmentFit fit_alignment(const Tensor& surrogate_features, const Tensor& victim_features);

// Rows are paired: clean_residuals[i] belongs to the same input as patched_residuals[i].
double epsilon_e(const Tensor& clean_residuals, const Tensor& patched_residuals);

struct BoundCheck {
  double dz_l2 = 0, dg_l2 = 0, l2_rhs = 0;
  double dz_l1 = 0, dg_l1 = 0, l1_rhs = 0;
  bool l2_ok = false;
  bool l1_ok = false;
  bool satisfied() const { return l2_ok && l1_ok; }
};

struct PairFeatures {
  Tensor surrogate_clean, surrogate_patched;  // n x d_s
  Tensor victim_clean, victim_patched;        // n x d_t
};

std::vector<BoundCheck> verify_prop1(const PairFeatures& pairs, const Tensor& map, double eps_e);

// Top-k canonical correlations (descending, clipped to [0, 1]).
std::vector<double> cca_correlations(const Tensor& x, const Tensor& y, std::size_t k);

// Explained variance of a linear probe x -> y fitted on centred data.
double linear_probe_r2(const Tensor& x, const Tensor& y);

struct AlignmentReport {
  Tensor map;
  double eps_e = 0;
  double sigma_min = 0;
  std::vector<double> cca;
  double r_squared = 0;
  std::vector<BoundCheck> bound_checks;

  std::size_t l2_satisfied() const;
  std::size_t l1_satisfied() const;
};

// Fits on the stacked clean + patched features of the pairs, then checks every pair.
AlignmentReport analyze_pairs(const PairFeatures& pairs, std::size_t cca_k);

// Records which policy role touched which operation.
class AuditLog {
 public:
  void record(const std::string& role, const std::string& op);
  std::vector<std::pair<std::string, std::string>> entries() const;

 private:
  mutable std::mutex mutex_;
  std::vector<std::pair<std::string, std::string>> entries_;
};

// Pooled (token-mean) projector features for each image, one row per image.
Tensor pooled_features(const policy::Policy& policy, std::span<const Tensor> images);

// Clean/patched pairs through both policies with one placement per image.
PairFeatures collect_pairs(const policy::Policy& surrogate, const policy::Policy& victim,
                           std::span<const attack::Sample> samples, const render::PatchTexture& patch,
                           const render::TransformLimits& limits, std::uint64_t seed);

struct ArmMetrics {
  std::vector<double> feature_deviation;  // ||dg||_2 per (item, placement)
  std::vector<double> action_deviation;   // ||y_adv - y_clean||_2 per (item, placement)
  double mean_feature_deviation = 0;
  double mean_action_deviation = 0;
  double attack_rate = 0;
};

struct TransferMetrics {
  ArmMetrics learned, random, blank;
  double theta_act = 0;
  std::size_t items = 0;
  std::size_t placements = 0;
};

struct TransferOptions {
  std::size_t placements = 5;
  std::uint64_t seed = 7;
  render::TransformLimits limits{0.3, 0.0};
  // Defaults to half the RMS clean action norm of the eval set.
  std::optional<double> theta_act;
  // Overrides the learned-patch placement of every evaluation (test hook).
  std::optional<render::TransformSample> fixed_placement;
};

// Only the victim is ever run here; every access is logged to audit when given.
TransferMetrics transfer_eval(const render::PatchTexture& patch, const policy::Policy& victim,
                              std::span<const attack::Sample> eval_set, const TransferOptions& options,
                              AuditLog* audit = nullptr);

inline constexpr std::uint64_t kRandomPatchStream = 11;
inline constexpr std::uint64_t kPlacementStream = 12;

}  // namespace upa::analysis
