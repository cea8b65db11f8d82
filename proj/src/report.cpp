#include "upa/report.hpp"

#include "upa/config.hpp"

namespace upa::report {

namespace {

using config::format_double;

std::string arm_summary(const char* name, const analysis::ArmMetrics& a) {
  return std::string("summary,") + name + ",,," + format_double(a.mean_feature_deviation) + "," +
         format_double(a.mean_action_deviation) + "," + format_double(a.attack_rate) + "\n";
}

std::string arm_text(const char* name, const analysis::ArmMetrics& a) {
  std::string p = std::string(name) + ".";
  return p + "mean_feature_deviation = " + format_double(a.mean_feature_deviation) + "\n" + p +
         "mean_action_deviation = " + format_double(a.mean_action_deviation) + "\n" + p +
         "attack_rate = " + format_double(a.attack_rate) + "\n";
}

}  // namespace

std::string history_header() { return "epoch,batch,outer_index,j_out,l1,con,pad,psm\n"; }

std::string history_row(const attack::StepRecord& s) {
  return std::to_string(s.epoch) + "," + std::to_string(s.batch) + "," + std::to_string(s.outer_index) + "," +
         format_double(s.losses.total) + "," + format_double(s.losses.l1) + "," + format_double(s.losses.con) + "," +
         format_double(s.losses.pad) + "," + format_double(s.losses.psm) + "\n";
}

std::string transfer_csv(const analysis::TransferMetrics& m) {
  std::string out = "kind,arm,item,placement,feature_deviation,action_deviation,attacked_or_rate\n";
  for (std::size_t k = 0; k < m.items * m.placements; ++k) {
    const double a = m.learned.action_deviation[k];
    out += "item,learned," + std::to_string(k / m.placements) + "," + std::to_string(k % m.placements) + "," +
           format_double(m.learned.feature_deviation[k]) + "," + format_double(a) + "," +
           (a > m.theta_act ? "1" : "0") + "\n";
  }
  out += arm_summary("learned", m.learned);
  out += arm_summary("random", m.random);
  out += arm_summary("blank", m.blank);
  return out;
}

std::string transfer_text(const analysis::TransferMetrics& m) {
  return "items = " + std::to_string(m.items) + "\nplacements = " + std::to_string(m.placements) +
         "\ntheta_act = " + format_double(m.theta_act) + "\n" + arm_text("learned", m.learned) +
         arm_text("random", m.random) + arm_text("blank", m.blank);
}

std::string bounds_csv(const analysis::AlignmentReport& r) {
  std::string out = "pair,dz_l2,dg_l2,l2_rhs,l2_ok,dz_l1,dg_l1,l1_rhs,l1_ok\n";
  for (std::size_t i = 0; i < r.bound_checks.size(); ++i) {
    const auto& c = r.bound_checks[i];
    out += std::to_string(i) + "," + format_double(c.dz_l2) + "," + format_double(c.dg_l2) + "," +
           format_double(c.l2_rhs) + "," + (c.l2_ok ? "1" : "0") + "," + format_double(c.dz_l1) + "," +
           format_double(c.dg_l1) + "," + format_double(c.l1_rhs) + "," + (c.l1_ok ? "1" : "0") + "\n";
  }
  return out;
}

std::string analysis_text(const analysis::AlignmentReport& r, std::size_t pairs) {
  std::string cca;
  for (std::size_t i = 0; i < r.cca.size(); ++i) cca += (i ? ", " : "") + format_double(r.cca[i]);
  return "pairs = " + std::to_string(pairs) + "\nd_s = " + std::to_string(r.map.rows()) +
         "\nd_t = " + std::to_string(r.map.cols()) + "\nsigma_min = " + format_double(r.sigma_min) +
         "\neps_e = " + format_double(r.eps_e) + "\nr_squared = " + format_double(r.r_squared) +
         "\ncca = " + cca + "\nl2_satisfied = " + std::to_string(r.l2_satisfied()) +
         "\nl1_satisfied = " + std::to_string(r.l1_satisfied()) + "\n";
}

}  // namespace upa::report
