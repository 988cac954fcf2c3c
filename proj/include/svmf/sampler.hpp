// Exact vMF sampling (Ulrich / Wood construction).
//
//   1. v ~ U(S^{m-2})
//   2. omega ~ g(omega | kappa, m) ∝ exp(kappa omega) (1 - omega^2)^{(m-3)/2}
//      by acceptance-rejection with a Beta(n/2, n/2) proposal pushed through
//      h(eps, kappa), n = m - 1; for m = 3 an inverse CDF is available instead.
//   3. z' = (omega, sqrt(1 - omega^2) v), z = U(mu) z' with the Householder
//      reflection U(mu) e1 = mu.
//
// Each draw keeps (eps, omega, v, z, attempts) so the reparameterization
// gradient can be assembled afterwards.
#pragma once

#include <Eigen/Dense>

#include <algorithm>
#include <cmath>
#include <limits>
#include <stdexcept>
#include <string>

#include "svmf/rng.hpp"
#include "svmf/vmf.hpp"

namespace svmf {

/// Draw from U(S^{m-1}) by normalizing a standard Gaussian vector. m = 1 gives +-1.
inline Vector sample_uniform_sphere(Rng& rng, int m) {
  if (m < 1) throw std::domain_error("sample_uniform_sphere needs m >= 1, got " + std::to_string(m));
  Vector x(m);
  double norm = 0.0;
  do {
    for (int i = 0; i < m; ++i) x[i] = rng.normal();
    norm = x.norm();
  } while (norm < 1e-100);
  return x / norm;
}

/// Precomputed constants of the omega rejection sampler.
struct RejectionConstants {
  double b;
  double a;
  double d;

  static RejectionConstants compute(double kappa, int m) {
    detail::check_dim_kappa(m, kappa);
    const double n = m - 1.0;
    const double root = std::sqrt(4.0 * kappa * kappa + n * n);
    // (-2k + root) / n, rationalized to avoid cancellation at large kappa.
    const double b = n / (2.0 * kappa + root);
    const double a = (n + 2.0 * kappa + root) / 4.0;
    const double d = 4.0 * a * b / (1.0 + b) - n * std::log(n);
    return {b, a, d};
  }
};

/// b(kappa) and its kappa-derivative.
struct ShapeB {
  double b;
  double db_dkappa;

  static ShapeB compute(double kappa, int m) {
    const double n = m - 1.0;
    const double root = std::sqrt(4.0 * kappa * kappa + n * n);
    const double b = n / (2.0 * kappa + root);
    // b = (root - 2k)/n  =>  b' = (4k/root - 2)/n = -2b/root.
    return {b, -2.0 * b / root};
  }
};

namespace detail {
inline void check_eps(double eps) {
  if (!(eps >= 0.0 && eps <= 1.0))
    throw std::domain_error("eps must lie in [0, 1], got " + std::to_string(eps));
}
}  // namespace detail

/// omega = h(eps, kappa) = (1 - (1 + b) eps) / (1 - (1 - b) eps).
inline double h_transform(double eps, double kappa, int m) {
  detail::check_eps(eps);
  const double b = ShapeB::compute(kappa, m).b;
  return (1.0 - (1.0 + b) * eps) / (1.0 - (1.0 - b) * eps);
}

/// dh/deps = -2b / ((b - 1) eps + 1)^2.
inline double h_transform_deps(double eps, double kappa, int m) {
  detail::check_eps(eps);
  const double b = ShapeB::compute(kappa, m).b;
  const double den = (b - 1.0) * eps + 1.0;
  return -2.0 * b / (den * den);
}

/// dh/dkappa at fixed eps, through b: dh/db = -2 eps (1 - eps) / (1 - (1 - b) eps)^2.
inline double h_transform_dkappa(double eps, double kappa, int m) {
  detail::check_eps(eps);
  const ShapeB s = ShapeB::compute(kappa, m);
  const double den = 1.0 - (1.0 - s.b) * eps;
  return -2.0 * eps * (1.0 - eps) / (den * den) * s.db_dkappa;
}

enum class OmegaMethod {
  /// Inverse CDF for m = 3, rejection otherwise.
  Auto,
  /// Always the Beta-proposal rejection sampler.
  Rejection,
};

struct OmegaDraw {
  double omega;
  /// Accepted Beta proposal, or the uniform draw u on the m = 3 inverse-CDF path.
  double epsilon;
  int attempts;
  bool direct;
};

/// Proposals allowed before sample_omega declares a numeric fault.
inline constexpr int kProposalBudget = 10000;

/// omega for m = 3 from u ~ U(0, 1): 1 + log(u + (1 - u) e^{-2 kappa}) / kappa.
inline double omega_inverse_cdf_s2(double u, double kappa) {
  if (kappa == 0.0) return 2.0 * u - 1.0;
  return 1.0 + std::log1p((1.0 - u) * std::expm1(-2.0 * kappa)) / kappa;
}

/// d omega / d kappa of omega_inverse_cdf_s2 at fixed u.
inline double omega_inverse_cdf_s2_dkappa(double u, double kappa) {
  if (kappa < 1e-8) return 2.0 * u * (1.0 - u);
  const double em = std::expm1(-2.0 * kappa);
  const double a = (1.0 - u) * em;
  const double da = -2.0 * (1.0 - u) * std::exp(-2.0 * kappa);
  return -std::log1p(a) / (kappa * kappa) + da / ((1.0 + a) * kappa);
}

/// Draw omega ~ g(omega | kappa, m).
inline OmegaDraw sample_omega(Rng& rng, double kappa, int m,
                              OmegaMethod method = OmegaMethod::Auto) {
  detail::check_dim_kappa(m, kappa);
  if (m == 3 && method == OmegaMethod::Auto) {
    const double u = rng.uniform();
    return {omega_inverse_cdf_s2(u, kappa), u, 1, true};
  }
  const auto c = RejectionConstants::compute(kappa, m);
  const double half_n = 0.5 * (m - 1.0);
  const double n = m - 1.0;
  for (int attempt = 1; attempt <= kProposalBudget; ++attempt) {
    const double eps = rng.beta(half_n, half_n);
    const double den = 1.0 - (1.0 - c.b) * eps;
    const double omega = (1.0 - (1.0 + c.b) * eps) / den;
    const double t = 2.0 * c.a * c.b / den;
    const double u = rng.uniform();
    if (n * std::log(t) - t + c.d >= std::log(u)) return {omega, eps, attempt, false};
  }
  throw std::runtime_error("sample_omega: no proposal accepted within " +
                           std::to_string(kProposalBudget) + " attempts (kappa=" +
                           std::to_string(kappa) + ", m=" + std::to_string(m) + ")");
}

/// Householder reflection U = I - 2 u u^T with u = (e1 - mu) / ||e1 - mu||,
/// so that U e1 = mu. Applied in O(m) without forming U.
class Householder {
 public:
  static constexpr double kDegenerate = 1e-12;

  explicit Householder(const Vector& mu) : direction_(-mu) {
    if (mu.size() < 1) throw std::invalid_argument("Householder: empty vector");
    direction_[0] += 1.0;
    const double norm = direction_.norm();
    identity_ = norm < kDegenerate;
    if (!identity_) direction_ /= norm;
  }

  [[nodiscard]] bool is_identity() const { return identity_; }
  /// Unit reflection axis u (unused when is_identity()).
  [[nodiscard]] const Vector& axis() const { return direction_; }

  [[nodiscard]] Vector apply(const Vector& x) const {
    if (identity_) return x;
    return x - 2.0 * direction_.dot(x) * direction_;
  }

 private:
  Vector direction_;
  bool identity_ = false;
};

inline Householder householder_reflect(const Vector& mu) { return Householder(mu); }

/// One accepted vMF draw and the noise that produced it.
struct SampleTrace {
  double epsilon = 0.0;
  double omega = 0.0;
  /// Tangent direction on S^{m-2}.
  Vector v;
  /// The sample on S^{m-1}.
  Vector z;
  int attempts = 0;
  /// True when omega came from the m = 3 inverse CDF (epsilon holds u).
  bool direct = false;
};

inline constexpr double kOmegaClamp = 1.0 - 1e-15;

/// sqrt(1 - omega^2) with omega clamped away from the poles.
inline double tangent_scale(double omega) {
  const double w = std::clamp(omega, -kOmegaClamp, kOmegaClamp);
  return std::sqrt((1.0 - w) * (1.0 + w));
}

/// z = U(mu) (omega, sqrt(1 - omega^2) v).
inline Vector assemble_sample(const Householder& reflect, double omega, const Vector& v) {
  Vector zp(v.size() + 1);
  zp[0] = omega;
  zp.tail(v.size()) = tangent_scale(omega) * v;
  return reflect.apply(zp);
}

inline SampleTrace sample_vmf(Rng& rng, const VonMisesFisher& dist, const Householder& reflect,
                              OmegaMethod method = OmegaMethod::Auto) {
  const int m = dist.dim();
  SampleTrace trace;
  trace.v = sample_uniform_sphere(rng, m - 1);
  const OmegaDraw draw = sample_omega(rng, dist.kappa(), m, method);
  trace.epsilon = draw.epsilon;
  trace.omega = draw.omega;
  trace.attempts = draw.attempts;
  trace.direct = draw.direct;
  trace.z = assemble_sample(reflect, trace.omega, trace.v);
  return trace;
}

inline SampleTrace sample_vmf(Rng& rng, const VonMisesFisher& dist,
                              OmegaMethod method = OmegaMethod::Auto) {
  return sample_vmf(rng, dist, Householder(dist.mu()), method);
}

/// Exact density of omega under g(omega | kappa, m):
///   S(m-1) C_m(kappa) exp(omega kappa) (1 - omega^2)^{(m-3)/2} / B(1/2, (m-1)/2).
inline double log_omega_density(double omega, double kappa, int m) {
  detail::check_dim_kappa(m, kappa);
  if (!(omega >= -1.0 && omega <= 1.0)) throw std::domain_error("omega outside [-1, 1]");
  double shape = 0.0;
  if (m != 3) {
    const double one_minus_sq = (1.0 - omega) * (1.0 + omega);
    if (one_minus_sq == 0.0)
      return m > 3 ? -std::numeric_limits<double>::infinity()
                   : std::numeric_limits<double>::infinity();
    shape = 0.5 * (m - 3.0) * std::log(one_minus_sq);
  }
  const double log_beta = log_gamma(0.5) + log_gamma(0.5 * (m - 1.0)) - log_gamma(0.5 * m);
  return detail::log_normalizer_excess(m, kappa) + kappa * omega + shape - log_beta;
}

}  // namespace svmf
