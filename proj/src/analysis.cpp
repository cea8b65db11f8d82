#include "upa/analysis.hpp"

#include <Eigen/Dense>

#include <algorithm>
#include <cmath>
#include <stdexcept>

#include "upa/linalg.hpp"
#include "upa/parallel.hpp"
#include "upa/rng.hpp"

namespace upa::analysis {

namespace {

using RowMat = Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;

Eigen::MatrixXd to_eigen(const Tensor& t) { return Eigen::Map<const RowMat>(t.data().data(), t.rows(), t.cols()); }

Tensor from_eigen(const Eigen::MatrixXd& m) {
  Tensor t({static_cast<std::size_t>(m.rows()), static_cast<std::size_t>(m.cols())});
  Eigen::Map<RowMat>(t.data().data(), m.rows(), m.cols()) = m;
  return t;
}

Eigen::MatrixXd centred(const Tensor& t) {
  Eigen::MatrixXd m = to_eigen(t);
  m.rowwise() -= m.colwise().mean();
  return m;
}

Eigen::MatrixXd inverse_sqrt(const Eigen::MatrixXd& cov) {
  Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd> es(cov);
  if (es.info() != Eigen::Success) throw std::invalid_argument("cca: covariance eigendecomposition failed");
  const auto& ev = es.eigenvalues();
  for (Eigen::Index i = 0; i < ev.size(); ++i)
    if (!(ev[i] > 0.0) || !std::isfinite(ev[i]))
      throw std::invalid_argument("cca: covariance is degenerate beyond regularization");
  return es.eigenvectors() * ev.cwiseSqrt().cwiseInverse().asDiagonal() * es.eigenvectors().transpose();
}

Tensor stack_rows(const Tensor& a, const Tensor& b) {
  std::vector<double> data = a.values();
  data.insert(data.end(), b.values().begin(), b.values().end());
  return Tensor({a.rows() + b.rows(), a.cols()}, std::move(data));
}

double row_distance(const Tensor& a, const Tensor& b, std::size_t i) {
  double s = 0.0;
  for (std::size_t j = 0; j < a.cols(); ++j) s += (a.at(i, j) - b.at(i, j)) * (a.at(i, j) - b.at(i, j));
  return std::sqrt(s);
}

}  // namespace

AlignmentFit fit_alignment(const Tensor& zs, const Tensor& zt) {
  if (zs.rows() != zt.rows()) throw std::invalid_argument("fit_alignment: row counts differ");
  if (zs.rows() <= zs.cols()) throw std::invalid_argument("fit_alignment: need more samples than surrogate dims");
  AlignmentFit fit;
  fit.map = least_squares_fit(zs, zt);
  fit.residuals = zt - matmul(zs, fit.map);
  return fit;
}

double epsilon_e(const Tensor& clean_residuals, const Tensor& patched_residuals) {
  if (clean_residuals.rows() == 0 || !clean_residuals.same_shape(patched_residuals))
    throw std::invalid_argument("epsilon_e: need a non-empty set of paired residuals");
  double eps = 0.0;
  for (std::size_t i = 0; i < clean_residuals.rows(); ++i)
    eps = std::max(eps, row_distance(patched_residuals, clean_residuals, i));
  return eps;
}

std::vector<BoundCheck> verify_prop1(const PairFeatures& pairs, const Tensor& map, double eps_e) {
  const std::size_t n = pairs.surrogate_clean.rows();
  const std::size_t ds = pairs.surrogate_clean.cols(), dt = pairs.victim_clean.cols();
  if (map.rows() != ds || map.cols() != dt) throw std::invalid_argument("verify_prop1: map shape mismatch");
  if (!pairs.surrogate_patched.same_shape(pairs.surrogate_clean) || !pairs.victim_patched.same_shape(pairs.victim_clean) ||
      pairs.victim_clean.rows() != n)
    throw std::invalid_argument("verify_prop1: pair feature shapes mismatch");
  const auto sv = singular_values(map);
  const double smin = sv.empty() ? 0.0 : sv.back();
  const double root_d = std::sqrt(static_cast<double>(ds));
  std::vector<BoundCheck> out;
  for (std::size_t i = 0; i < n; ++i) {
    std::vector<double> dz(ds), dg(dt);
    for (std::size_t j = 0; j < ds; ++j) dz[j] = pairs.surrogate_patched.at(i, j) - pairs.surrogate_clean.at(i, j);
    for (std::size_t j = 0; j < dt; ++j) dg[j] = pairs.victim_patched.at(i, j) - pairs.victim_clean.at(i, j);
    BoundCheck c;
    c.dz_l2 = l2_norm(dz);
    c.dg_l2 = l2_norm(dg);
    c.dz_l1 = l1_norm(dz);
    c.dg_l1 = l1_norm(dg);
    c.l2_rhs = smin * c.dz_l2 - eps_e;
    c.l1_rhs = smin / root_d * c.dz_l1 - eps_e;
    c.l2_ok = c.dg_l2 >= c.l2_rhs;
    c.l1_ok = c.dg_l1 >= c.l1_rhs;
    out.push_back(c);
  }
  return out;
}

std::vector<double> cca_correlations(const Tensor& x, const Tensor& y, std::size_t k) {
  const std::size_t n = x.rows();
  if (y.rows() != n) throw std::invalid_argument("cca: row counts differ");
  if (n <= std::max(x.cols(), y.cols())) throw std::invalid_argument("cca: need more samples than feature dims");
  const Eigen::MatrixXd xc = centred(x), yc = centred(y);
  const double denom = static_cast<double>(n - 1);
  const Eigen::MatrixXd cxx = xc.transpose() * xc / denom + 1e-8 * Eigen::MatrixXd::Identity(xc.cols(), xc.cols());
  const Eigen::MatrixXd cyy = yc.transpose() * yc / denom + 1e-8 * Eigen::MatrixXd::Identity(yc.cols(), yc.cols());
  const Eigen::MatrixXd cxy = xc.transpose() * yc / denom;
  const Eigen::MatrixXd whitened = inverse_sqrt(cxx) * cxy * inverse_sqrt(cyy);
  Eigen::JacobiSVD<Eigen::MatrixXd> svd(whitened);
  std::vector<double> out;
  const auto& s = svd.singularValues();
  for (Eigen::Index i = 0; i < s.size() && out.size() < k; ++i) out.push_back(std::clamp(s[i], 0.0, 1.0));
  return out;
}

double linear_probe_r2(const Tensor& x, const Tensor& y) {
  if (x.rows() != y.rows()) throw std::invalid_argument("linear_probe_r2: row counts differ");
  const Eigen::MatrixXd xc = centred(x), yc = centred(y);
  const double total = yc.squaredNorm();
  // centring a constant column leaves rounding noise, not variance
  const double scale = std::max(1.0, to_eigen(y).cwiseAbs().maxCoeff());
  if (!(total > 1e-20 * scale * scale * static_cast<double>(y.size()))) throw std::invalid_argument("linear_probe_r2: target has zero variance");
  const Tensor a = least_squares_fit(from_eigen(xc), from_eigen(yc));
  const double resid = (yc - xc * to_eigen(a)).squaredNorm();
  return 1.0 - resid / total;
}

std::size_t AlignmentReport::l2_satisfied() const {
  return static_cast<std::size_t>(std::count_if(bound_checks.begin(), bound_checks.end(), [](auto& c) { return c.l2_ok; }));
}

std::size_t AlignmentReport::l1_satisfied() const {
  return static_cast<std::size_t>(std::count_if(bound_checks.begin(), bound_checks.end(), [](auto& c) { return c.l1_ok; }));
}

AlignmentReport analyze_pairs(const PairFeatures& pairs, std::size_t cca_k) {
  const Tensor zs = stack_rows(pairs.surrogate_clean, pairs.surrogate_patched);
  const Tensor zt = stack_rows(pairs.victim_clean, pairs.victim_patched);
  AlignmentReport rep;
  AlignmentFit fit = fit_alignment(zs, zt);
  rep.map = fit.map;
  const std::size_t n = pairs.surrogate_clean.rows(), dt = zt.cols();
  Tensor clean_res({n, dt}, std::vector<double>(fit.residuals.values().begin(), fit.residuals.values().begin() + n * dt));
  Tensor patched_res({n, dt}, std::vector<double>(fit.residuals.values().begin() + n * dt, fit.residuals.values().end()));
  rep.eps_e = epsilon_e(clean_res, patched_res);
  const auto sv = singular_values(rep.map);
  rep.sigma_min = sv.back();
  rep.cca = cca_correlations(zs, zt, cca_k);
  rep.r_squared = linear_probe_r2(zs, zt);
  rep.bound_checks = verify_prop1(pairs, rep.map, rep.eps_e);
  return rep;
}

void AuditLog::record(const std::string& role, const std::string& op) {
  std::lock_guard lock(mutex_);
  entries_.emplace_back(role, op);
}

std::vector<std::pair<std::string, std::string>> AuditLog::entries() const {
  std::lock_guard lock(mutex_);
  return entries_;
}

Tensor pooled_features(const policy::Policy& policy, std::span<const Tensor> images) {
  if (images.empty()) throw std::invalid_argument("pooled_features: no images");
  const std::size_t d = policy.spec().token_dim;
  Tensor out({images.size(), d});
  parallel_for(images.size(), [&](std::size_t i) {
    const Tensor pooled = policy.features(images[i]).pooled;
    std::copy(pooled.values().begin(), pooled.values().end(), out.values().begin() + static_cast<long>(i * d));
  });
  return out;
}

PairFeatures collect_pairs(const policy::Policy& surrogate, const policy::Policy& victim,
                           std::span<const attack::Sample> samples, const render::PatchTexture& patch,
                           const render::TransformLimits& limits, std::uint64_t seed) {
  Rng rng(derive_seed(seed, kPlacementStream));
  std::vector<Tensor> clean, patched;
  const render::FrameSize frame{surrogate.spec().image_height, surrogate.spec().image_width};
  for (const auto& s : samples) {
    const auto t = render::sample_transform(rng, frame, patch.height(), patch.width(), limits);
    clean.push_back(s.image);
    patched.push_back(render::paste(s.image, patch, t));
  }
  return {pooled_features(surrogate, clean), pooled_features(surrogate, patched), pooled_features(victim, clean),
          pooled_features(victim, patched)};
}

TransferMetrics transfer_eval(const render::PatchTexture& patch, const policy::Policy& victim,
                              std::span<const attack::Sample> eval_set, const TransferOptions& options,
                              AuditLog* audit) {
  if (eval_set.empty()) throw std::invalid_argument("transfer_eval: empty eval set");
  if (options.placements == 0) throw std::invalid_argument("transfer_eval: need at least one placement");
  const std::size_t n = eval_set.size(), m = options.placements;
  const render::FrameSize frame{victim.spec().image_height, victim.spec().image_width};

  Rng patch_rng(derive_seed(options.seed, kRandomPatchStream));
  const render::PatchTexture random_patch = render::PatchTexture::uniform_random(patch.height(), patch.width(), patch_rng);
  const render::PatchTexture blank_patch = render::PatchTexture::filled(patch.height(), patch.width(), 0.5);

  Rng place_rng(derive_seed(options.seed, kPlacementStream));
  std::vector<render::TransformSample> placements;
  for (std::size_t i = 0; i < n * m; ++i)
    placements.push_back(options.fixed_placement
                             ? *options.fixed_placement
                             : render::sample_transform(place_rng, frame, patch.height(), patch.width(), options.limits));

  auto log = [&](const char* op) {
    if (audit) audit->record("victim", op);
  };

  struct Clean {
    policy::Instruction instr;
    Tensor pooled;
    Tensor action;
  };
  std::vector<Clean> clean(n);
  parallel_for(n, [&](std::size_t i) {
    log("forward");
    clean[i].instr = victim.tokenize(eval_set[i].instruction);
    policy::ForwardTrace tr = victim.forward(eval_set[i].image, clean[i].instr);
    clean[i].action = tr.action;
    Tensor pooled({1, tr.vision_tokens.cols()});
    for (std::size_t r = 0; r < tr.vision_tokens.rows(); ++r)
      for (std::size_t c = 0; c < tr.vision_tokens.cols(); ++c) pooled[c] += tr.vision_tokens.at(r, c);
    for (auto& v : pooled.values()) v /= static_cast<double>(tr.vision_tokens.rows());
    clean[i].pooled = std::move(pooled);
  });

  TransferMetrics out;
  out.items = n;
  out.placements = m;
  if (options.theta_act) {
    out.theta_act = *options.theta_act;
  } else {
    double ss = 0.0;
    for (const auto& c : clean) ss += l2_norm(c.action.data()) * l2_norm(c.action.data());
    out.theta_act = 0.5 * std::sqrt(ss / static_cast<double>(n));
  }

  const render::PatchTexture* arms[] = {&patch, &random_patch, &blank_patch};
  ArmMetrics* results[] = {&out.learned, &out.random, &out.blank};
  for (std::size_t a = 0; a < 3; ++a) {
    ArmMetrics& r = *results[a];
    r.feature_deviation.assign(n * m, 0.0);
    r.action_deviation.assign(n * m, 0.0);
    parallel_for(n * m, [&](std::size_t k) {
      const std::size_t i = k / m;
      log("forward");
      const Tensor x = render::paste(eval_set[i].image, *arms[a], placements[k]);
      policy::ForwardTrace tr = victim.forward(x, clean[i].instr);
      std::vector<double> dg(tr.vision_tokens.cols(), 0.0);
      for (std::size_t row = 0; row < tr.vision_tokens.rows(); ++row)
        for (std::size_t c = 0; c < dg.size(); ++c) dg[c] += tr.vision_tokens.at(row, c);
      for (std::size_t c = 0; c < dg.size(); ++c)
        dg[c] = dg[c] / static_cast<double>(tr.vision_tokens.rows()) - clean[i].pooled[c];
      r.feature_deviation[k] = l2_norm(dg);
      r.action_deviation[k] = l2_norm((tr.action - clean[i].action).data());
    });
    double fsum = 0, asum = 0;
    std::size_t hits = 0;
    for (std::size_t k = 0; k < n * m; ++k) {
      fsum += r.feature_deviation[k];
      asum += r.action_deviation[k];
      hits += r.action_deviation[k] > out.theta_act ? 1 : 0;
    }
    r.mean_feature_deviation = fsum / static_cast<double>(n * m);
    r.mean_action_deviation = asum / static_cast<double>(n * m);
    r.attack_rate = static_cast<double>(hits) / static_cast<double>(n * m);
  }
  return out;
}

}  // namespace upa::analysis
