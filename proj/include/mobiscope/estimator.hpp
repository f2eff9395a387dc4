#pragma once

#include <Eigen/Dense>
#include <cstdint>
#include <span>
#include <string>
#include <vector>

#include "mobiscope/panel.hpp"

namespace mobiscope {

enum class SeMode : int { hc1, cluster_by_unit };

std::string_view se_mode_name(SeMode);
std::optional<SeMode> parse_se_mode(std::string_view);

struct EventStudySpec {
  std::int32_t base_month_idx = -1;  // omitted dummy
  SeMode se_mode = SeMode::cluster_by_unit;
  bool weight_by_devices = false;
};

enum class FitMethod : int { demeaning, dummy_ols };

struct EventStudyFit {
  // Event-time coefficients, base period absent. months[k] is the study-month
  // index of beta[k].
  std::vector<std::int32_t> months;
  Eigen::VectorXd beta;
  Eigen::VectorXd se;
  Eigen::MatrixXd vcov;

  double pooled_beta = 0.0;
  double pooled_se = 0.0;

  std::int32_t base_month_idx = -1;
  std::int32_t opening_month_idx = -1;  // first month with cable on

  std::vector<double> residuals;      // per input cell, input order
  std::vector<double> unit_effects;   // per unit, mean-zero normalization
  std::vector<double> time_effects;   // per period, mean-zero normalization
  double grand_mean = 0.0;
  std::vector<std::uint64_t> unit_keys;
  std::vector<std::int32_t> period_months;

  int n_obs = 0, n_units = 0, n_periods = 0;
  double dof = 0.0;              // n_obs - absorbed params - K
  int sweeps = 0;                // alternating-projection sweeps
  double max_abs_score = 0.0;    // max |X' W e|, orthogonality diagnostic
  SeMode se_mode = SeMode::cluster_by_unit;
  bool weighted = false;
  FitMethod method = FitMethod::demeaning;

  std::vector<PanelCell> panel;  // snapshot used by pooled_att / refits
};

// Fits y_it = sum_t beta_t * D_i * 1[t] + zeta_i + zeta_t + e_it by iterated
// two-way demeaning followed by OLS on the demeaned event-time dummies, where
// D_i marks units in the treatment-arm buffer. `dummy_ols` solves the full
// dummy-variable regression instead; both give identical answers and the
// second stays available as a first-class verification mode.
EventStudyFit fit_event_study(std::span<const PanelCell> panel, const EventStudySpec& spec,
                              FitMethod method = FitMethod::demeaning);

struct PooledEffect {
  double beta = 0.0;
  double se = 0.0;
};

// Refit replacing the event-time dummies with a single post-opening dummy.
PooledEffect pooled_att(const EventStudyFit& fit, std::int32_t opening_month_idx,
                        FitMethod method = FitMethod::demeaning);

struct PretrendTest {
  double stat = 0.0;
  int df = 0;
  double p_value = 1.0;
};

// Wald joint test that all pre-opening coefficients (excluding base) are zero.
PretrendTest pretrend_test(const EventStudyFit& fit);

}  // namespace mobiscope
