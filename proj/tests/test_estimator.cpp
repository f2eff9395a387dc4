#include "mobiscope/estimator.hpp"

#include <cmath>
#include <map>

#include "doctest.h"
#include "mobiscope/rng.hpp"

using namespace mobiscope;

namespace {

PanelCell cell(std::uint64_t unit, int month, double y, bool treated, int opening,
               std::uint32_t n = 1) {
  PanelCell c;
  c.hex = unit;
  c.month_idx = month;
  c.y = y;
  c.n_devices = n;
  c.treated_arm = treated;
  c.cable = treated && month >= opening;
  return c;
}

// Random unbalanced two-arm panel with unit/time effects and noise.
std::vector<PanelCell> random_panel(std::uint64_t seed, int n_units, int n_periods, int opening,
                                    double effect, double drop_prob = 0.25) {
  CounterRng rng(seed, 0xFE);
  std::vector<double> unit_fx(std::size_t(n_units), 0.0);
  std::vector<double> period_fx(std::size_t(n_periods), 0.0);
  for (auto& v : unit_fx) v = rng.gauss() * 5.0;
  for (auto& v : period_fx) v = rng.gauss() * 3.0;
  std::vector<PanelCell> panel;
  for (int u = 0; u < n_units; ++u) {
    bool treated = u < n_units / 2;
    for (int t = 0; t < n_periods; ++t) {
      bool keep = rng.uniform() >= drop_prob;
      // Keep every unit's base-period cell and both arms in every period.
      if (t == opening - 1 || u < 2 || u >= n_units - 2) keep = true;
      if (!keep) continue;
      double y = 10.0 + unit_fx[std::size_t(u)] + period_fx[std::size_t(t)] + rng.gauss();
      if (treated && t >= opening) y += effect;
      panel.push_back(cell(std::uint64_t(u + 1), t, y, treated, opening,
                           1 + std::uint32_t(rng.below(5))));
    }
  }
  return panel;
}

EventStudySpec spec_base(int base) {
  EventStudySpec s;
  s.base_month_idx = base;
  return s;
}

}  // namespace

TEST_CASE("2x2 panel reproduces the hand-computed difference-in-differences") {
  const double delta = 3.5;
  std::vector<PanelCell> panel{
      cell(1, 0, 1.0, false, 1), cell(1, 1, 2.0, false, 1),
      cell(2, 0, 1.0, true, 1), cell(2, 1, 2.0 + delta, true, 1),
  };
  auto fit = fit_event_study(panel, spec_base(0));
  REQUIRE(fit.months.size() == 1);
  CHECK(fit.beta[0] == doctest::Approx(delta).epsilon(1e-14));
  CHECK(fit.pooled_beta == doctest::Approx(delta).epsilon(1e-14));
  // Saturated design: no residual degrees of freedom, SEs undefined.
  CHECK(fit.dof == 0.0);
  CHECK(std::isnan(fit.se[0]));
}

TEST_CASE("pure unit+time structure yields all-zero coefficients") {
  CounterRng rng(9);
  std::vector<double> unit_fx(30), period_fx(12);
  for (auto& v : unit_fx) v = rng.gauss() * 7.0;
  for (auto& v : period_fx) v = rng.gauss() * 2.0;
  std::vector<PanelCell> panel;
  for (int u = 0; u < 30; ++u)
    for (int t = 0; t < 12; ++t)
      panel.push_back(cell(std::uint64_t(u + 1), t, unit_fx[std::size_t(u)] + period_fx[std::size_t(t)],
                           u < 15, 5));
  auto fit = fit_event_study(panel, spec_base(4));
  for (Eigen::Index k = 0; k < fit.beta.size(); ++k) CHECK(std::abs(fit.beta[k]) < 1e-8);
  CHECK(std::abs(fit.pooled_beta) < 1e-8);

  auto pretrend = pretrend_test(fit);
  CHECK(pretrend.df == 4);
}

TEST_CASE("demeaning equals dummy-variable OLS on random unbalanced panels") {
  for (std::uint64_t seed = 1; seed <= 10; ++seed) {
    auto panel = random_panel(seed, 40, 12, 6, 4.0);
    auto a = fit_event_study(panel, spec_base(5), FitMethod::demeaning);
    auto b = fit_event_study(panel, spec_base(5), FitMethod::dummy_ols);
    REQUIRE(a.months == b.months);
    for (Eigen::Index k = 0; k < a.beta.size(); ++k) {
      double scale = std::max(1.0, std::abs(b.beta[k]));
      CHECK(std::abs(a.beta[k] - b.beta[k]) / scale < 1e-8);
      CHECK(std::abs(a.se[k] - b.se[k]) / std::max(1e-12, b.se[k]) < 1e-6);
    }
    CHECK(std::abs(a.pooled_beta - b.pooled_beta) < 1e-8 * std::max(1.0, std::abs(b.pooled_beta)));
  }
}

TEST_CASE("beta is shift invariant and scale equivariant") {
  auto panel = random_panel(3, 20, 8, 4, 2.5);
  auto base = fit_event_study(panel, spec_base(3));

  auto shifted = panel;
  for (auto& c : shifted) c.y += 1234.5;
  auto fit_shift = fit_event_study(shifted, spec_base(3));
  for (Eigen::Index k = 0; k < base.beta.size(); ++k)
    CHECK(fit_shift.beta[k] == doctest::Approx(base.beta[k]).epsilon(1e-9));

  auto scaled = panel;
  for (auto& c : scaled) c.y *= -2.5;
  auto fit_scale = fit_event_study(scaled, spec_base(3));
  for (Eigen::Index k = 0; k < base.beta.size(); ++k)
    CHECK(fit_scale.beta[k] == doctest::Approx(-2.5 * base.beta[k]).epsilon(1e-9));
}

TEST_CASE("residual means vanish within every unit and period") {
  auto panel = random_panel(8, 25, 10, 5, 3.0);
  auto fit = fit_event_study(panel, spec_base(4));
  std::map<std::uint64_t, std::pair<double, int>> by_unit;
  std::map<int, std::pair<double, int>> by_period;
  double scale = 0.0;
  for (std::size_t i = 0; i < panel.size(); ++i) {
    by_unit[panel[i].hex].first += fit.residuals[i];
    by_unit[panel[i].hex].second += 1;
    by_period[panel[i].month_idx].first += fit.residuals[i];
    by_period[panel[i].month_idx].second += 1;
    scale = std::max(scale, std::abs(panel[i].y));
  }
  for (auto& [u, acc] : by_unit) CHECK(std::abs(acc.first / acc.second) <= 1e-10 * scale);
  for (auto& [t, acc] : by_period) CHECK(std::abs(acc.first / acc.second) <= 1e-10 * scale);
  CHECK(fit.max_abs_score <= 1e-8 * scale * double(fit.n_obs));

  // Fitted decomposition reproduces the observations.
  std::map<std::uint64_t, std::size_t> unit_of;
  for (std::size_t u = 0; u < fit.unit_keys.size(); ++u) unit_of[fit.unit_keys[u]] = u;
  std::map<int, std::size_t> period_of;
  for (std::size_t t = 0; t < fit.period_months.size(); ++t) period_of[fit.period_months[t]] = t;
  std::map<int, Eigen::Index> coef_of;
  for (std::size_t k = 0; k < fit.months.size(); ++k) coef_of[fit.months[k]] = Eigen::Index(k);
  for (std::size_t i = 0; i < panel.size(); ++i) {
    const PanelCell& c = panel[i];
    double xb = 0.0;
    if (c.treated_arm && c.month_idx != fit.base_month_idx) xb = fit.beta[coef_of[c.month_idx]];
    double y_hat = fit.grand_mean + fit.unit_effects[unit_of[c.hex]] +
                   fit.time_effects[period_of[c.month_idx]] + xb + fit.residuals[i];
    CHECK(y_hat == doctest::Approx(c.y).epsilon(1e-9));
  }
}

TEST_CASE("changing the base period shifts coefficients by a constant") {
  auto panel = random_panel(12, 30, 10, 5, 2.0, 0.0);
  auto fit_a = fit_event_study(panel, spec_base(4));
  auto fit_b = fit_event_study(panel, spec_base(2));

  // In fit_b, the old base (4) has a coefficient; the shift is beta_b[4].
  std::map<int, double> beta_b;
  for (std::size_t k = 0; k < fit_b.months.size(); ++k) beta_b[fit_b.months[k]] = fit_b.beta[Eigen::Index(k)];
  double shift = beta_b[4];
  for (std::size_t k = 0; k < fit_a.months.size(); ++k) {
    int mo = fit_a.months[k];
    if (mo == 2) {
      CHECK(-shift == doctest::Approx(fit_a.beta[Eigen::Index(k)]).epsilon(1e-9));
      continue;
    }
    CHECK(beta_b[mo] - shift == doctest::Approx(fit_a.beta[Eigen::Index(k)]).epsilon(1e-9));
  }
}

TEST_CASE("balanced two-arm panel: coefficients equal raw difference-in-means") {
  CounterRng rng(21);
  int n_units = 16, n_periods = 6, opening = 3;
  std::vector<PanelCell> panel;
  std::map<int, std::pair<double, double>> arm_mean;  // month -> (treat sum, ctrl sum)
  for (int u = 0; u < n_units; ++u) {
    bool treated = u < n_units / 2;
    for (int t = 0; t < n_periods; ++t) {
      double y = rng.gauss() * 3.0 + (treated && t >= opening ? 5.0 : 0.0);
      panel.push_back(cell(std::uint64_t(u + 1), t, y, treated, opening));
      (treated ? arm_mean[t].first : arm_mean[t].second) += y / (n_units / 2);
    }
  }
  int base = 2;
  auto fit = fit_event_study(panel, spec_base(base));
  double base_diff = arm_mean[base].first - arm_mean[base].second;
  for (std::size_t k = 0; k < fit.months.size(); ++k) {
    double want = arm_mean[fit.months[k]].first - arm_mean[fit.months[k]].second - base_diff;
    CHECK(fit.beta[Eigen::Index(k)] == doctest::Approx(want).epsilon(1e-10));
  }
}

TEST_CASE("singular designs raise explicit errors naming the offender") {
  // All units treated: event dummies collinear with time effects.
  std::vector<PanelCell> panel;
  for (int u = 0; u < 6; ++u)
    for (int t = 0; t < 4; ++t) panel.push_back(cell(std::uint64_t(u + 1), t, double(u + t), true, 2));
  CHECK_THROWS_AS(fit_event_study(panel, spec_base(1)), EstimationError);

  try {
    fit_event_study(panel, spec_base(1));
  } catch (const EstimationError& e) {
    CHECK(std::string(e.what()).find("at least one treated and one untreated") !=
          std::string::npos);
  }

  // A month with no treated observations: that dummy is identically zero.
  auto panel2 = random_panel(4, 10, 6, 3, 1.0, 0.0);
  std::erase_if(panel2, [](const PanelCell& c) { return c.treated_arm && c.month_idx == 1; });
  try {
    fit_event_study(panel2, spec_base(2));
    CHECK(false);
  } catch (const EstimationError& e) {
    CHECK(std::string(e.what()).find("collinear") != std::string::npos);
    CHECK(std::string(e.what()).find("month_index 1") != std::string::npos);
  }
}

TEST_CASE("pooled effect matches a single-dummy refit") {
  auto panel = random_panel(31, 30, 12, 6, 4.5, 0.0);
  auto fit = fit_event_study(panel, spec_base(5));
  auto pooled = pooled_att(fit, 6);
  CHECK(pooled.beta == doctest::Approx(fit.pooled_beta).epsilon(1e-12));
  CHECK(pooled.se == doctest::Approx(fit.pooled_se).epsilon(1e-12));
  // Dummy-OLS route agrees.
  auto pooled_dummy = pooled_att(fit, 6, FitMethod::dummy_ols);
  CHECK(pooled_dummy.beta == doctest::Approx(pooled.beta).epsilon(1e-8));

  // With a constant post effect on a balanced panel, pooled ~= that constant.
  CHECK(fit.pooled_beta == doctest::Approx(4.5).epsilon(0.15));
}

TEST_CASE("pretrend Wald test: zero pre-coefficients give stat 0, p 1") {
  EventStudyFit fit;
  fit.months = {0, 1, 3};
  fit.opening_month_idx = 3;
  fit.base_month_idx = 2;
  fit.beta = Eigen::VectorXd::Zero(3);
  fit.beta[2] = 5.0;
  fit.vcov = Eigen::MatrixXd::Identity(3, 3);
  fit.se = fit.vcov.diagonal().cwiseSqrt();
  auto t = pretrend_test(fit);
  CHECK(t.stat == doctest::Approx(0.0));
  CHECK(t.df == 2);
  CHECK(t.p_value == doctest::Approx(1.0));
}

TEST_CASE("pretrend with one pre-period equals the squared t statistic") {
  auto panel = random_panel(77, 24, 4, 2, 3.0, 0.0);  // periods 0,1 pre; base 1
  auto fit = fit_event_study(panel, spec_base(1));
  auto t = pretrend_test(fit);
  REQUIRE(t.df == 1);
  // Find the single pre coefficient (month 0).
  for (std::size_t k = 0; k < fit.months.size(); ++k) {
    if (fit.months[k] != 0) continue;
    double tstat = fit.beta[Eigen::Index(k)] / fit.se[Eigen::Index(k)];
    CHECK(t.stat == doctest::Approx(tstat * tstat).epsilon(1e-9));
  }
}

TEST_CASE("weighted fit uses device counts") {
  auto panel = random_panel(41, 20, 8, 4, 2.0);
  EventStudySpec w = spec_base(3);
  w.weight_by_devices = true;
  auto weighted = fit_event_study(panel, w);
  auto plain = fit_event_study(panel, spec_base(3));
  CHECK(weighted.weighted);
  // Weighted demeaning agrees with the weighted dummy-OLS route.
  auto weighted_dummy = fit_event_study(panel, w, FitMethod::dummy_ols);
  for (Eigen::Index k = 0; k < weighted.beta.size(); ++k)
    CHECK(std::abs(weighted.beta[k] - weighted_dummy.beta[k]) < 1e-8);
  // And differs from the unweighted fit in general.
  double diff = 0.0;
  for (Eigen::Index k = 0; k < weighted.beta.size(); ++k)
    diff = std::max(diff, std::abs(weighted.beta[k] - plain.beta[k]));
  CHECK(diff > 1e-6);
}

TEST_CASE("hc1 standard errors are available") {
  auto panel = random_panel(61, 20, 8, 4, 2.0);
  EventStudySpec s = spec_base(3);
  s.se_mode = SeMode::hc1;
  auto fit = fit_event_study(panel, s);
  for (Eigen::Index k = 0; k < fit.se.size(); ++k) CHECK(fit.se[k] > 0.0);
}

TEST_CASE("monte carlo recovery sanity: 20 seeds on an effect of 6.5") {
  int hits = 0;
  for (std::uint64_t seed = 100; seed < 120; ++seed) {
    auto panel = random_panel(seed, 60, 12, 6, 6.5, 0.2);
    auto fit = fit_event_study(panel, spec_base(5));
    if (std::abs(fit.pooled_beta - 6.5) <= 2.0 * fit.pooled_se) ++hits;
  }
  CHECK(hits >= 17);
}
