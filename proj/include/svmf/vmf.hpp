// von Mises-Fisher distribution on S^{m-1}, the hyperspherical uniform prior,
// and the closed-form KL pieces used by the variational objective.
#pragma once

#include <Eigen/Dense>

#include <cmath>
#include <numbers>
#include <stdexcept>
#include <string>

#include "svmf/special_fn.hpp"

namespace svmf {

using Vector = Eigen::VectorXd;

/// log of the surface area of the radius-r sphere S^{m-1} in R^m:
/// m log r + log 2 + (m/2) log pi - log Gamma(m/2).
inline double log_surface_area(int m, double r = 1.0) {
  if (m < 2) throw std::domain_error("log_surface_area needs m >= 2, got " + std::to_string(m));
  if (!(r > 0.0) || std::isinf(r))
    throw std::domain_error("log_surface_area needs a finite radius > 0");
  const double half_m = 0.5 * m;
  return m * std::log(r) + std::numbers::ln2 + half_m * std::log(std::numbers::pi) -
         log_gamma(half_m);
}

namespace detail {

// log C_m(kappa) + log S(m-1) = -log 0F1(; m/2; kappa^2 / 4).
//
// Below kappa = 1 the hypergeometric series is summed directly with log1p so
// the KL stays accurate where it is O(kappa^2); above, the Bessel route.
inline double log_normalizer_excess(int m, double kappa) {
  if (kappa == 0.0) return 0.0;
  const double half_m = 0.5 * m;
  if (kappa <= 1.0) {
    const double q = 0.25 * kappa * kappa;
    double term = 1.0;
    double tail = 0.0;
    for (int k = 1; k < 100; ++k) {
      term *= q / (k * (half_m + k - 1.0));
      tail += term;
      if (term < 1e-18 * tail) break;
    }
    return -std::log1p(tail);
  }
  const double order = half_m - 1.0;
  return order * std::log(kappa) - half_m * std::log(2.0 * std::numbers::pi) -
         (log_bessel_i_scaled(order, kappa) + kappa) + log_surface_area(m);
}

inline void check_dim_kappa(int m, double kappa) {
  if (m < 2) throw std::domain_error("vMF dimension m must be >= 2, got " + std::to_string(m));
  if (std::isnan(kappa) || std::isinf(kappa) || kappa < 0.0)
    throw std::domain_error("concentration must be finite and >= 0, got " +
                            std::to_string(kappa));
}

}  // namespace detail

/// log C_m(kappa), the vMF normalizing constant. At kappa = 0 this is exactly
/// -log S(m-1), the uniform density.
inline double log_normalizer(int m, double kappa) {
  detail::check_dim_kappa(m, kappa);
  return detail::log_normalizer_excess(m, kappa) - log_surface_area(m);
}

/// Mean resultant length E[mu^T z] = I_{m/2}(kappa) / I_{m/2-1}(kappa).
inline double mean_resultant_length(int m, double kappa) {
  detail::check_dim_kappa(m, kappa);
  return bessel_ratio(0.5 * m, kappa);
}

/// Uniform distribution on S^{m-1}; density 1 / S(m-1).
class HypersphericalUniform {
 public:
  explicit HypersphericalUniform(int m) : m_(m) {
    if (m < 2) throw std::domain_error("uniform prior needs m >= 2");
  }
  [[nodiscard]] int dim() const { return m_; }
  [[nodiscard]] double log_density() const { return -log_surface_area(m_); }

 private:
  int m_;
};

/// vMF(mu, kappa) on S^{m-1}, m = mu.size().
///
/// Construction enforces ||mu|| = 1 within 1e-9 and kappa >= 0; use
/// from_direction() to normalize an arbitrary nonzero vector.
class VonMisesFisher {
 public:
  static constexpr double kUnitTolerance = 1e-9;

  VonMisesFisher(Vector mu, double kappa) : mu_(std::move(mu)), kappa_(kappa) {
    detail::check_dim_kappa(static_cast<int>(mu_.size()), kappa_);
    if (!mu_.allFinite()) throw std::domain_error("vMF mean direction has non-finite entries");
    if (std::abs(mu_.norm() - 1.0) > kUnitTolerance)
      throw std::domain_error("vMF mean direction must have unit norm, got norm " +
                              std::to_string(mu_.norm()));
  }

  static VonMisesFisher from_direction(const Vector& direction, double kappa) {
    const double n = direction.norm();
    if (!(n > 0.0) || std::isinf(n)) throw std::domain_error("direction must be nonzero and finite");
    return VonMisesFisher(direction / n, kappa);
  }

  [[nodiscard]] const Vector& mu() const { return mu_; }
  [[nodiscard]] double kappa() const { return kappa_; }
  [[nodiscard]] int dim() const { return static_cast<int>(mu_.size()); }

  [[nodiscard]] double log_normalizer() const { return svmf::log_normalizer(dim(), kappa_); }

 private:
  Vector mu_;
  double kappa_;
};

/// Points farther than this from the unit sphere are rejected by log_prob.
inline constexpr double kSphereTolerance = 1e-6;

/// log q(z | mu, kappa) = log C_m(kappa) + kappa mu^T z.
///
/// z within 1e-6 of unit norm is renormalized; anything farther throws.
inline double log_prob(const VonMisesFisher& dist, const Vector& z) {
  if (z.size() != dist.mu().size())
    throw std::invalid_argument("log_prob: z has dimension " + std::to_string(z.size()) +
                                ", distribution has " + std::to_string(dist.dim()));
  const double norm = z.norm();
  if (!(std::abs(norm - 1.0) <= kSphereTolerance))
    throw std::domain_error("log_prob: z is off the unit sphere (norm " + std::to_string(norm) +
                            ")");
  if (dist.kappa() == 0.0) return dist.log_normalizer();
  return dist.log_normalizer() + dist.kappa() * dist.mu().dot(z) / norm;
}

/// KL(vMF(mu, kappa) || U(S^{m-1})) = kappa * I_{m/2}/I_{m/2-1} + log C_m + log S(m-1).
/// Independent of mu.
inline double kl_to_uniform(int m, double kappa) {
  detail::check_dim_kappa(m, kappa);
  if (kappa == 0.0) return 0.0;
  return kappa * bessel_ratio(0.5 * m, kappa) + detail::log_normalizer_excess(m, kappa);
}

inline double kl_to_uniform(const VonMisesFisher& dist) {
  return kl_to_uniform(dist.dim(), dist.kappa());
}

/// d/dkappa of kl_to_uniform:
///   (kappa/2) [ I_{m/2+1}/I_{m/2-1} - I_{m/2}(I_{m/2-2} + I_{m/2}) / I_{m/2-1}^2 + 1 ].
/// Every quotient is written through R = I_{m/2}/I_{m/2-1} and
/// R2 = I_{m/2+1}/I_{m/2}, with I_{m/2-2}/I_{m/2-1} = R + (m-2)/kappa from the
/// three-term recurrence, so no order below m/2 - 1 is evaluated.
inline double kl_grad_kappa(int m, double kappa) {
  detail::check_dim_kappa(m, kappa);
  if (kappa == 0.0) return 0.0;
  const double half_m = 0.5 * m;
  const double r = bessel_ratio(half_m, kappa);
  const double r2 = bessel_ratio(half_m + 1.0, kappa);
  const double lower = r + (m - 2.0) / kappa;
  return 0.5 * kappa * (r * r2 - r * (lower + r) + 1.0);
}

inline double kl_grad_kappa(const VonMisesFisher& dist) {
  return kl_grad_kappa(dist.dim(), dist.kappa());
}

/// KL(N(mu, diag exp(log_var)) || N(0, I)).
inline double gaussian_kl_std_normal(const Vector& mu, const Vector& log_var) {
  if (mu.size() != log_var.size())
    throw std::invalid_argument("gaussian_kl_std_normal: length mismatch");
  return 0.5 * (mu.array().square() + log_var.array().exp() - log_var.array() - 1.0).sum();
}

}  // namespace svmf
