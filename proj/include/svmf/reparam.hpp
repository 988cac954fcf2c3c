// Reparameterization gradient through the vMF rejection sampler.
//
// For z = T(h(eps, theta), v; theta) with eps the accepted proposal, the
// gradient of E_q[f(z)] splits into
//   g_rep = d/dtheta f(T(h(eps, theta), v; theta))             (pathwise)
//   g_cor = f(z) d/dtheta log[ g(h(eps, theta) | theta) / r(h(eps, theta) | theta) ]
// and because h is invertible in eps the log ratio in g_cor is
//   log g(h(eps, theta) | theta) + log |dh/deps| + const.
// Neither h nor g depends on mu, so g_cor only has a kappa component.
//
// The caller supplies f(z) and grad_z f(z); this header does the geometry.
#pragma once

#include <Eigen/Dense>

#include <algorithm>
#include <cmath>
#include <stdexcept>
#include <string>

#include "svmf/sampler.hpp"
#include "svmf/vmf.hpp"

namespace svmf {

/// Partial d/dkappa of log g(omega | kappa, m) at fixed omega:
/// d/dkappa log C_m(kappa) + omega = omega - I_{m/2}/I_{m/2-1}.
inline double log_g_unnormalized_grad_kappa(double omega, double kappa, int m) {
  if (!(omega > -1.0 && omega < 1.0))
    throw std::domain_error("log_g_unnormalized_grad_kappa needs |omega| < 1, got " +
                            std::to_string(omega));
  detail::check_dim_kappa(m, kappa);
  return omega - bessel_ratio(0.5 * m, kappa);
}

/// Partial d/domega of log g(omega | kappa, m) = kappa - (m - 3) omega / (1 - omega^2).
inline double log_g_grad_omega(double omega, double kappa, int m) {
  if (m == 3) return kappa;
  const double w = std::clamp(omega, -kOmegaClamp, kOmegaClamp);
  return kappa - (m - 3.0) * w / ((1.0 - w) * (1.0 + w));
}

/// d/dkappa of log|dh/deps| = log(2b) - 2 log((b - 1) eps + 1), through b(kappa).
inline double log_abs_dh_deps_grad_kappa(double eps, double kappa, int m) {
  detail::check_eps(eps);
  detail::check_dim_kappa(m, kappa);
  const ShapeB s = ShapeB::compute(kappa, m);
  return s.db_dkappa * (1.0 / s.b - 2.0 * eps / ((s.b - 1.0) * eps + 1.0));
}

struct ReparamGrad {
  Vector grad_mu;
  double grad_kappa = 0.0;
  double g_rep_kappa = 0.0;
  double g_cor_kappa = 0.0;
};

struct ReparamOptions {
  /// Include the g_cor score term. Disabling it leaves a biased estimator;
  /// only useful for demonstrating that bias.
  bool correction = true;
  /// Constant subtracted from f(z) inside g_cor only. Any value keeps the
  /// estimator unbiased since E[score] = 0.
  double baseline = 0.0;
};

namespace detail {

// grad_mu of g^T U(mu) z' at fixed z', with U(mu) x = x - 2 w (w^T x) / (w^T w),
// w = e1 - mu.
inline Vector householder_grad_mu(const Vector& mu, const Vector& zp, const Vector& g) {
  Vector w = -mu;
  w[0] += 1.0;
  const double s = w.squaredNorm();
  if (std::sqrt(s) < Householder::kDegenerate) return Vector::Zero(mu.size());
  const double wz = w.dot(zp);
  const double gw = g.dot(w);
  return (2.0 / s) * (wz * g + gw * zp) - (4.0 * gw * wz / (s * s)) * w;
}

}  // namespace detail

/// Single-sample estimate of grad_{mu, kappa} E_q[f(z)] from one trace.
///
/// grad_mu is the ambient R^m gradient through the reflection U(mu) with
/// (omega, v) held fixed. grad_kappa = g_rep + g_cor where g_rep follows
/// omega = h(eps, kappa) at fixed eps, and g_cor uses the total kappa
/// derivative of log g(h(eps, kappa) | kappa) + log|dh/deps|. Traces from the
/// m = 3 inverse CDF are fully pathwise and carry no correction.
inline ReparamGrad reparam_gradient(const SampleTrace& trace, const VonMisesFisher& dist,
                                    double f_value, const Vector& f_grad_z,
                                    const ReparamOptions& options = {}) {
  const int m = dist.dim();
  if (trace.z.size() != m || trace.v.size() != m - 1 || f_grad_z.size() != m)
    throw std::invalid_argument("reparam_gradient: trace/gradient dimension does not match m=" +
                                std::to_string(m));
  const double kappa = dist.kappa();
  const Householder reflect(dist.mu());

  const double scale = tangent_scale(trace.omega);
  Vector zp(m);
  zp[0] = trace.omega;
  zp.tail(m - 1) = scale * trace.v;

  ReparamGrad out;
  out.grad_mu = detail::householder_grad_mu(dist.mu(), zp, f_grad_z);

  // dz'/domega = (1, -omega / sqrt(1 - omega^2) v), pushed through U.
  Vector dzp(m);
  dzp[0] = 1.0;
  dzp.tail(m - 1) = (-trace.omega / scale) * trace.v;
  const double df_domega = f_grad_z.dot(reflect.apply(dzp));

  if (trace.direct) {
    out.g_rep_kappa = omega_inverse_cdf_s2_dkappa(trace.epsilon, kappa) * df_domega;
    out.g_cor_kappa = 0.0;
  } else {
    const double dh_dkappa = h_transform_dkappa(trace.epsilon, kappa, m);
    out.g_rep_kappa = dh_dkappa * df_domega;
    if (options.correction) {
      const double omega = std::clamp(trace.omega, -kOmegaClamp, kOmegaClamp);
      const double score = log_g_unnormalized_grad_kappa(omega, kappa, m) +
                           log_g_grad_omega(omega, kappa, m) * dh_dkappa +
                           log_abs_dh_deps_grad_kappa(trace.epsilon, kappa, m);
      out.g_cor_kappa = (f_value - options.baseline) * score;
    }
  }
  out.grad_kappa = out.g_rep_kappa + out.g_cor_kappa;
  return out;
}

/// Single-sample kappa-gradient of the ELBO: reconstruction term through
/// reparam_gradient minus the analytic KL gradient.
inline double elbo_gradient_kappa(const SampleTrace& trace, const VonMisesFisher& dist,
                                  double recon_value, const Vector& recon_grad_z,
                                  const ReparamOptions& options = {}) {
  return reparam_gradient(trace, dist, recon_value, recon_grad_z, options).grad_kappa -
         kl_grad_kappa(dist);
}

}  // namespace svmf
