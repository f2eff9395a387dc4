#pragma once

namespace mobiscope {

// Regularized upper incomplete gamma Q(a, x).
double gamma_q(double a, double x);

// Survival function of the chi-square distribution with df degrees of freedom.
inline double chi2_sf(double x, double df) { return gamma_q(df * 0.5, x * 0.5); }

}  // namespace mobiscope
