#include "mobiscope/estimator.hpp"

#include <algorithm>
#include <cmath>
#include <map>
#include <numeric>

#include "mobiscope/mathutil.hpp"
#include "mobiscope/timeutil.hpp"

namespace mobiscope {

std::string_view se_mode_name(SeMode m) {
  return m == SeMode::hc1 ? "hc1" : "cluster_by_unit";
}

std::optional<SeMode> parse_se_mode(std::string_view s) {
  if (s == "hc1") return SeMode::hc1;
  if (s == "cluster_by_unit") return SeMode::cluster_by_unit;
  return std::nullopt;
}

namespace {

constexpr double kDemeanTol = 5e-14;  // well inside the 1e-10 contract
constexpr int kMaxSweeps = 10'000;

struct Indexed {
  std::vector<std::uint64_t> unit_keys;
  std::vector<std::int32_t> period_months;
  std::vector<int> unit_of;    // per obs
  std::vector<int> period_of;  // per obs
  std::vector<std::uint8_t> unit_treated;
};

Indexed index_panel(std::span<const PanelCell> panel) {
  Indexed ix;
  std::map<std::uint64_t, int> units;
  std::map<std::int32_t, int> periods;
  for (const PanelCell& c : panel) {
    units.emplace(c.hex, 0);
    periods.emplace(c.month_idx, 0);
  }
  ix.unit_keys.reserve(units.size());
  for (auto& [k, v] : units) {
    v = int(ix.unit_keys.size());
    ix.unit_keys.push_back(k);
  }
  ix.period_months.reserve(periods.size());
  for (auto& [k, v] : periods) {
    v = int(ix.period_months.size());
    ix.period_months.push_back(k);
  }
  ix.unit_of.reserve(panel.size());
  ix.period_of.reserve(panel.size());
  ix.unit_treated.assign(ix.unit_keys.size(), 0);
  for (const PanelCell& c : panel) {
    ix.unit_of.push_back(units[c.hex]);
    ix.period_of.push_back(periods[c.month_idx]);
    if (c.treated_arm) ix.unit_treated[std::size_t(units[c.hex])] = 1;
  }
  return ix;
}

// Alternating projections onto unit and period means (weighted). Returns the
// number of sweeps taken.
int demean_two_way(Eigen::MatrixXd& cols, const Indexed& ix, const Eigen::VectorXd& w) {
  const std::size_t n = std::size_t(cols.rows());
  const int n_units = int(ix.unit_keys.size());
  const int n_periods = int(ix.period_months.size());

  Eigen::VectorXd unit_w = Eigen::VectorXd::Zero(n_units);
  Eigen::VectorXd period_w = Eigen::VectorXd::Zero(n_periods);
  for (std::size_t i = 0; i < n; ++i) {
    unit_w[ix.unit_of[i]] += w[Eigen::Index(i)];
    period_w[ix.period_of[i]] += w[Eigen::Index(i)];
  }

  Eigen::VectorXd scale(cols.cols());
  for (Eigen::Index c = 0; c < cols.cols(); ++c)
    scale[c] = std::max(1.0, cols.col(c).cwiseAbs().maxCoeff());

  Eigen::MatrixXd unit_mean(n_units, cols.cols());
  Eigen::MatrixXd period_mean(n_periods, cols.cols());
  for (int sweep = 1; sweep <= kMaxSweeps; ++sweep) {
    double worst = 0.0;
    unit_mean.setZero();
    for (std::size_t i = 0; i < n; ++i)
      unit_mean.row(ix.unit_of[i]) += w[Eigen::Index(i)] * cols.row(Eigen::Index(i));
    for (int u = 0; u < n_units; ++u) unit_mean.row(u) /= unit_w[u];
    for (std::size_t i = 0; i < n; ++i) cols.row(Eigen::Index(i)) -= unit_mean.row(ix.unit_of[i]);
    for (Eigen::Index c = 0; c < cols.cols(); ++c)
      worst = std::max(worst, unit_mean.col(c).cwiseAbs().maxCoeff() / scale[c]);

    period_mean.setZero();
    for (std::size_t i = 0; i < n; ++i)
      period_mean.row(ix.period_of[i]) += w[Eigen::Index(i)] * cols.row(Eigen::Index(i));
    for (int t = 0; t < n_periods; ++t) period_mean.row(t) /= period_w[t];
    for (std::size_t i = 0; i < n; ++i)
      cols.row(Eigen::Index(i)) -= period_mean.row(ix.period_of[i]);
    for (Eigen::Index c = 0; c < cols.cols(); ++c)
      worst = std::max(worst, period_mean.col(c).cwiseAbs().maxCoeff() / scale[c]);

    if (worst <= kDemeanTol) return sweep;
  }
  throw EstimationError("two-way demeaning did not converge within 10000 sweeps");
}

struct OlsResult {
  Eigen::VectorXd beta;
  Eigen::MatrixXd vcov;
  Eigen::VectorXd resid;  // in the unweighted metric
  double max_abs_score = 0.0;
};

// OLS of (demeaned) y on X with sandwich covariance. k_absorbed counts
// parameters swept out by fixed effects (or included as dummies) so both fit
// paths use identical small-sample factors.
OlsResult sandwich_ols(const Eigen::MatrixXd& x, const Eigen::VectorXd& y,
                       const Eigen::VectorXd& w, const Indexed& ix, SeMode se_mode,
                       int k_absorbed, const std::vector<std::string>& col_names) {
  const Eigen::Index n = x.rows();
  const Eigen::Index k = x.cols();

  Eigen::VectorXd sqw = w.cwiseSqrt();
  Eigen::MatrixXd xw = sqw.asDiagonal() * x;
  Eigen::VectorXd yw = sqw.asDiagonal() * y;

  Eigen::ColPivHouseholderQR<Eigen::MatrixXd> qr(xw);
  qr.setThreshold(1e-10);
  if (qr.rank() < k) {
    std::string msg = "singular design; collinear after fixed-effects absorption:";
    auto perm = qr.colsPermutation().indices();
    for (Eigen::Index j = qr.rank(); j < k; ++j) {
      msg += ' ';
      msg += col_names.empty() ? std::to_string(perm[j]) : col_names[std::size_t(perm[j])];
    }
    throw EstimationError(msg);
  }

  OlsResult res;
  res.beta = qr.solve(yw);
  res.resid = y - x * res.beta;

  Eigen::MatrixXd xtx = xw.transpose() * xw;
  Eigen::MatrixXd bread = xtx.ldlt().solve(Eigen::MatrixXd::Identity(k, k));

  Eigen::VectorXd score = x.transpose() * (w.asDiagonal() * res.resid);
  res.max_abs_score = score.cwiseAbs().maxCoeff();

  double n_d = double(n);
  double k_total = double(k + k_absorbed);
  Eigen::MatrixXd meat = Eigen::MatrixXd::Zero(k, k);
  double factor = 1.0;
  if (se_mode == SeMode::cluster_by_unit) {
    int n_units = int(ix.unit_keys.size());
    std::vector<Eigen::VectorXd> cluster_score(std::size_t(n_units),
                                               Eigen::VectorXd::Zero(k));
    for (Eigen::Index i = 0; i < n; ++i)
      cluster_score[std::size_t(ix.unit_of[std::size_t(i)])] +=
          w[i] * res.resid[i] * x.row(i).transpose();
    for (const auto& s : cluster_score) meat += s * s.transpose();
    double g = double(n_units);
    factor = (g / (g - 1.0)) * ((n_d - 1.0) / (n_d - k_total));
  } else {
    for (Eigen::Index i = 0; i < n; ++i) {
      double ui = w[i] * res.resid[i];
      meat += (ui * ui) * (x.row(i).transpose() * x.row(i));
    }
    factor = n_d / (n_d - k_total);
  }
  if (!std::isfinite(factor) || factor <= 0.0)
    factor = std::numeric_limits<double>::quiet_NaN();  // saturated design: SEs undefined
  res.vcov = factor * (bread * meat * bread);
  return res;
}

std::string month_label(std::int32_t idx) { return "month_index " + std::to_string(idx); }

// Recovers grand mean + unit/time effects of r (mean-zero normalization).
void recover_effects(const Eigen::VectorXd& r, const Eigen::VectorXd& w, const Indexed& ix,
                     EventStudyFit& fit) {
  const std::size_t n = std::size_t(r.size());
  const int n_units = int(ix.unit_keys.size());
  const int n_periods = int(ix.period_months.size());
  Eigen::VectorXd unit_w = Eigen::VectorXd::Zero(n_units);
  Eigen::VectorXd period_w = Eigen::VectorXd::Zero(n_periods);
  double tot_w = 0.0, tot = 0.0;
  for (std::size_t i = 0; i < n; ++i) {
    unit_w[ix.unit_of[i]] += w[Eigen::Index(i)];
    period_w[ix.period_of[i]] += w[Eigen::Index(i)];
    tot_w += w[Eigen::Index(i)];
    tot += w[Eigen::Index(i)] * r[Eigen::Index(i)];
  }
  double grand = tot / tot_w;
  Eigen::VectorXd a = Eigen::VectorXd::Zero(n_units);
  Eigen::VectorXd b = Eigen::VectorXd::Zero(n_periods);
  for (int it = 0; it < kMaxSweeps; ++it) {
    double worst = 0.0;
    Eigen::VectorXd na = Eigen::VectorXd::Zero(n_units);
    for (std::size_t i = 0; i < n; ++i)
      na[ix.unit_of[i]] += w[Eigen::Index(i)] * (r[Eigen::Index(i)] - grand - b[ix.period_of[i]]);
    for (int u = 0; u < n_units; ++u) na[u] /= unit_w[u];
    worst = std::max(worst, (na - a).cwiseAbs().maxCoeff());
    a = na;
    Eigen::VectorXd nb = Eigen::VectorXd::Zero(n_periods);
    for (std::size_t i = 0; i < n; ++i)
      nb[ix.period_of[i]] += w[Eigen::Index(i)] * (r[Eigen::Index(i)] - grand - a[ix.unit_of[i]]);
    for (int t = 0; t < n_periods; ++t) nb[t] /= period_w[t];
    worst = std::max(worst, (nb - b).cwiseAbs().maxCoeff());
    b = nb;
    if (worst <= 1e-12 * std::max(1.0, std::abs(grand))) break;
  }
  // Shift to mean-zero effects.
  double am = a.mean(), bm = b.mean();
  a.array() -= am;
  b.array() -= bm;
  fit.grand_mean = grand + am + bm;
  fit.unit_effects.assign(a.data(), a.data() + a.size());
  fit.time_effects.assign(b.data(), b.data() + b.size());
}

// Shared fit driver: regressor columns are event-time dummies or the pooled
// post dummy.
EventStudyFit fit_core(std::span<const PanelCell> panel, const EventStudySpec& spec,
                       FitMethod method, bool pooled, std::int32_t opening_for_pooled) {
  if (panel.size() < 4) throw EstimationError("panel too small");
  Indexed ix = index_panel(panel);
  const int n_units = int(ix.unit_keys.size());
  const int n_periods = int(ix.period_months.size());
  const Eigen::Index n = Eigen::Index(panel.size());
  if (n_units < 2 || n_periods < 2) throw EstimationError("need at least 2 units and 2 periods");

  bool any_treated = false, any_control = false;
  for (std::uint8_t t : ix.unit_treated) (t ? any_treated : any_control) = true;
  if (!any_treated || !any_control)
    throw EstimationError("need at least one treated and one untreated unit");

  std::int32_t opening = opening_for_pooled;
  if (!pooled) {
    opening = std::numeric_limits<std::int32_t>::max();
    for (const PanelCell& c : panel)
      if (c.cable) opening = std::min(opening, c.month_idx);
    if (opening == std::numeric_limits<std::int32_t>::max())
      throw EstimationError("no post-opening cell in panel");
    if (std::find(ix.period_months.begin(), ix.period_months.end(), spec.base_month_idx) ==
        ix.period_months.end())
      throw EstimationError("base period absent from panel");
  }

  // Regressors.
  std::vector<std::int32_t> coef_months;
  std::vector<std::string> names;
  if (pooled) {
    coef_months.push_back(opening);
    names.push_back("post");
  } else {
    for (std::int32_t m : ix.period_months)
      if (m != spec.base_month_idx) {
        coef_months.push_back(m);
        names.push_back(month_label(m));
      }
  }
  const Eigen::Index k = Eigen::Index(coef_months.size());

  Eigen::VectorXd y(n), w(n);
  Eigen::MatrixXd x = Eigen::MatrixXd::Zero(n, k);
  std::map<std::int32_t, Eigen::Index> col_of;
  for (Eigen::Index c = 0; c < k; ++c)
    if (!pooled) col_of[coef_months[std::size_t(c)]] = c;
  for (Eigen::Index i = 0; i < n; ++i) {
    const PanelCell& cell = panel[std::size_t(i)];
    y[i] = cell.y;
    w[i] = spec.weight_by_devices ? double(cell.n_devices) : 1.0;
    bool treated_unit = ix.unit_treated[std::size_t(ix.unit_of[std::size_t(i)])] != 0;
    if (!treated_unit) continue;
    if (pooled) {
      if (cell.month_idx >= opening) x(i, 0) = 1.0;
    } else if (cell.month_idx != spec.base_month_idx) {
      x(i, col_of[cell.month_idx]) = 1.0;
    }
  }

  const int k_absorbed = 1 + (n_units - 1) + (n_periods - 1);
  EventStudyFit fit;
  fit.method = method;
  OlsResult ols;

  if (method == FitMethod::demeaning) {
    Eigen::MatrixXd cols(n, k + 1);
    cols.col(0) = y;
    cols.rightCols(k) = x;
    fit.sweeps = demean_two_way(cols, ix, w);
    Eigen::VectorXd yt = cols.col(0);
    Eigen::MatrixXd xt = cols.rightCols(k);
    ols = sandwich_ols(xt, yt, w, ix, spec.se_mode, k_absorbed, names);
  } else {
    // Full dummy-variable design: [event dummies | 1 | unit dummies | period
    // dummies], dropping one of each to keep full rank.
    Eigen::Index kf = k + 1 + (n_units - 1) + (n_periods - 1);
    Eigen::MatrixXd xf = Eigen::MatrixXd::Zero(n, kf);
    xf.leftCols(k) = x;
    std::vector<std::string> full_names = names;
    full_names.emplace_back("intercept");
    for (int u = 1; u < n_units; ++u) full_names.push_back("unit " + std::to_string(u));
    for (int t = 1; t < n_periods; ++t) full_names.push_back("period " + std::to_string(t));
    for (Eigen::Index i = 0; i < n; ++i) {
      xf(i, k) = 1.0;
      int u = ix.unit_of[std::size_t(i)];
      int t = ix.period_of[std::size_t(i)];
      if (u > 0) xf(i, k + u) = 1.0;
      if (t > 0) xf(i, k + (n_units - 1) + t) = 1.0;
    }
    OlsResult full = sandwich_ols(xf, y, w, ix, spec.se_mode, 0, full_names);
    ols.beta = full.beta.head(k);
    ols.vcov = full.vcov.topLeftCorner(k, k);
    ols.resid = full.resid;
    ols.max_abs_score = full.max_abs_score;
  }

  fit.months = coef_months;
  fit.beta = ols.beta;
  fit.vcov = ols.vcov;
  fit.se = ols.vcov.diagonal().cwiseMax(0.0).cwiseSqrt();
  fit.base_month_idx = pooled ? -1 : spec.base_month_idx;
  fit.opening_month_idx = opening;
  fit.residuals.assign(ols.resid.data(), ols.resid.data() + ols.resid.size());
  fit.n_obs = int(n);
  fit.n_units = n_units;
  fit.n_periods = n_periods;
  fit.dof = double(n) - double(k) - double(k_absorbed);
  fit.max_abs_score = ols.max_abs_score;
  fit.se_mode = spec.se_mode;
  fit.weighted = spec.weight_by_devices;
  fit.unit_keys = ix.unit_keys;
  fit.period_months = ix.period_months;

  Eigen::VectorXd r = y - x * ols.beta;
  recover_effects(r, w, ix, fit);
  // Residuals consistent with recovered effects.
  for (Eigen::Index i = 0; i < n; ++i) {
    fit.residuals[std::size_t(i)] = r[i] - fit.grand_mean -
                                    fit.unit_effects[std::size_t(ix.unit_of[std::size_t(i)])] -
                                    fit.time_effects[std::size_t(ix.period_of[std::size_t(i)])];
  }
  return fit;
}

}  // namespace

EventStudyFit fit_event_study(std::span<const PanelCell> panel, const EventStudySpec& spec,
                              FitMethod method) {
  EventStudyFit fit = fit_core(panel, spec, method, false, -1);
  fit.panel.assign(panel.begin(), panel.end());

  // Pooled post effect via the single-dummy refit.
  EventStudySpec pooled_spec = spec;
  EventStudyFit pooled = fit_core(panel, pooled_spec, method, true, fit.opening_month_idx);
  fit.pooled_beta = pooled.beta[0];
  fit.pooled_se = pooled.se[0];
  return fit;
}

PooledEffect pooled_att(const EventStudyFit& fit, std::int32_t opening_month_idx,
                        FitMethod method) {
  if (fit.panel.empty()) throw EstimationError("fit carries no panel snapshot");
  EventStudySpec spec;
  spec.base_month_idx = fit.base_month_idx;
  spec.se_mode = fit.se_mode;
  spec.weight_by_devices = fit.weighted;
  EventStudyFit refit = fit_core(fit.panel, spec, method, true, opening_month_idx);
  return PooledEffect{refit.beta[0], refit.se[0]};
}

PretrendTest pretrend_test(const EventStudyFit& fit) {
  std::vector<Eigen::Index> pre;
  for (Eigen::Index i = 0; i < Eigen::Index(fit.months.size()); ++i)
    if (fit.months[std::size_t(i)] < fit.opening_month_idx) pre.push_back(i);
  if (pre.empty()) throw EstimationError("pretrend_test: no pre-period coefficients");

  Eigen::VectorXd b(pre.size());
  Eigen::MatrixXd v(pre.size(), pre.size());
  for (std::size_t i = 0; i < pre.size(); ++i) {
    b[Eigen::Index(i)] = fit.beta[pre[i]];
    for (std::size_t j = 0; j < pre.size(); ++j) v(Eigen::Index(i), Eigen::Index(j)) = fit.vcov(pre[i], pre[j]);
  }
  Eigen::LDLT<Eigen::MatrixXd> ldlt(v);
  if (ldlt.info() != Eigen::Success || !ldlt.isPositive())
    throw EstimationError("pretrend_test: singular coefficient covariance");
  Eigen::VectorXd solved = ldlt.solve(b);
  double relerr = (v * solved - b).norm() / std::max(1e-300, b.norm());
  if (!std::isfinite(relerr) || relerr > 1e-6)
    throw EstimationError("pretrend_test: singular coefficient covariance");
  PretrendTest t;
  t.stat = b.dot(solved);
  t.df = int(pre.size());
  t.p_value = chi2_sf(t.stat, double(t.df));
  return t;
}

}  // namespace mobiscope
