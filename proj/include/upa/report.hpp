#pragma once

// Text and CSV renderings of run outputs. Numbers use the shortest
// round-trip form, so equal inputs give byte-identical files.
//
// history.csv    epoch,batch,outer_index,j_out,l1,con,pad,psm
// transfer.csv   kind,arm,item,placement,feature_deviation,action_deviation,attacked_or_rate
//                one "item" row per (eval item, placement) for the learned
//                patch, then one "summary" row per arm (learned, random, blank)
// transfer.txt   key = value: items, placements, theta_act and per-arm means/rates
// bounds.csv     pair,dz_l2,dg_l2,l2_rhs,l2_ok,dz_l1,dg_l1,l1_rhs,l1_ok
// analysis.txt   key = value: pairs, d_s, d_t, sigma_min, eps_e, r_squared,
//                cca, l2_satisfied, l1_satisfied

#include <string>

#include "upa/analysis.hpp"
#include "upa/attack.hpp"

namespace upa::report {

std::string history_header();
std::string history_row(const attack::StepRecord& step);

std::string transfer_csv(const analysis::TransferMetrics& m);
std::string transfer_text(const analysis::TransferMetrics& m);

std::string bounds_csv(const analysis::AlignmentReport& r);
std::string analysis_text(const analysis::AlignmentReport& r, std::size_t pairs);

}  // namespace upa::report
