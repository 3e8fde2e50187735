#include "expfam.hpp"

#include <cmath>
#include <limits>
#include <numbers>

namespace bfem::expfam {

namespace {

constexpr double kPi = std::numbers::pi;

double digamma(double x) {
  // Recurrence up into the asymptotic range, then the standard series.
  double r = 0.0;
  while (x < 6.0) {
    r -= 1.0 / x;
    x += 1.0;
  }
  const double f = 1.0 / (x * x);
  return r + std::log(x) - 0.5 / x -
         f * (1.0 / 12.0 - f * (1.0 / 120.0 - f * (1.0 / 252.0 - f * (1.0 / 240.0 - f / 132.0))));
}

double trigamma(double x) {
  double r = 0.0;
  while (x < 6.0) {
    r += 1.0 / (x * x);
    x += 1.0;
  }
  const double f = 1.0 / (x * x);
  return r + 1.0 / x + f * (0.5 + (1.0 / x) * (1.0 / 6.0 - f * (1.0 / 30.0 - f * (1.0 / 42.0 - f / 30.0))));
}

// Invert [E ln x, E x] for the Gamma family. Uses the standard moment-match
// initial guess followed by Newton on psi(a) - ln a.
double gamma_shape_from_moments(double mean_log, double mean) {
  const double d = mean_log - std::log(mean);  // psi(a) - ln a, always < 0
  if (!(d < 0.0))
    fail(ErrorCode::degenerate_projection, "gamma moments violate E[ln x] < ln E[x]");
  const double s = -d;
  double a = (3.0 - s + std::sqrt((s - 3.0) * (s - 3.0) + 24.0 * s)) / (12.0 * s);
  for (int it = 0; it < 60; ++it) {
    const double f = digamma(a) - std::log(a) - d;
    const double fp = trigamma(a) - 1.0 / a;
    double step = f / fp;
    if (step < -0.9 * a) step = -0.9 * a;  // keep a positive
    a -= step;
    if (std::abs(step) < 1e-14 * a) break;
  }
  return a;
}

void require_same_family(const ExpFamilyDensity& a, const ExpFamilyDensity& b, const char* op) {
  if (!(a.stat() == b.stat()))
    fail(ErrorCode::family_mismatch,
         std::string(op) + ": families differ (" + a.stat().name() + " vs " + b.stat().name() + ")");
}

}  // namespace

int SufficientStatistic::dim() const {
  switch (family) {
    case Family::real_gaussian: return 2;
    case Family::complex_gaussian: return 3;
    case Family::gamma: return 2;
    case Family::categorical: return categories;
    case Family::point_mass: return 2;  // [Re value, Im value]
  }
  return 0;
}

std::string SufficientStatistic::name() const {
  switch (family) {
    case Family::real_gaussian: return "real_gaussian";
    case Family::complex_gaussian: return "complex_gaussian";
    case Family::gamma: return "gamma";
    case Family::categorical: return "categorical(" + std::to_string(categories) + ")";
    case Family::point_mass: return "point_mass";
  }
  return "?";
}

SufficientStatistic SufficientStatistic::categorical(int k) {
  if (k < 2) fail(ErrorCode::invalid_argument, "categorical needs at least 2 states");
  return {Family::categorical, k};
}

ExpFamilyDensity::ExpFamilyDensity(SufficientStatistic stat, Vec eta)
    : stat_(stat), eta_(std::move(eta)) {
  if (eta_.size() != stat_.dim())
    fail(ErrorCode::invalid_argument, "natural parameter length does not match " + stat_.name());
}

bool ExpFamilyDensity::normalizable() const {
  switch (stat_.family) {
    case Family::real_gaussian: return eta_[1] < 0.0;
    case Family::complex_gaussian: return eta_[2] < 0.0;
    case Family::gamma: return eta_[0] > -1.0 && eta_[1] < 0.0;
    case Family::categorical: {
      bool any_finite = false;
      for (Eigen::Index j = 0; j < eta_.size(); ++j) {
        if (std::isnan(eta_[j]) || eta_[j] == std::numeric_limits<double>::infinity()) return false;
        any_finite |= std::isfinite(eta_[j]);
      }
      return any_finite;
    }
    case Family::point_mass: return true;
  }
  return false;
}

ExpFamilyDensity ExpFamilyDensity::flat(const SufficientStatistic& stat) {
  return {stat, Vec::Zero(stat.dim())};
}

ExpFamilyDensity ExpFamilyDensity::complex_gaussian(cplx mean, double variance) {
  if (!(variance > 0.0)) fail(ErrorCode::invalid_argument, "complex gaussian variance must be positive");
  Vec eta(3);
  eta[0] = 2.0 * mean.real() / variance;
  eta[1] = 2.0 * mean.imag() / variance;
  eta[2] = -1.0 / variance;
  return {SufficientStatistic::complex_gaussian(), std::move(eta)};
}

ExpFamilyDensity ExpFamilyDensity::real_gaussian(double mean, double variance) {
  if (!(variance > 0.0)) fail(ErrorCode::invalid_argument, "real gaussian variance must be positive");
  Vec eta(2);
  eta[0] = mean / variance;
  eta[1] = -0.5 / variance;
  return {SufficientStatistic::real_gaussian(), std::move(eta)};
}

ExpFamilyDensity ExpFamilyDensity::gamma(double shape, double rate) {
  if (!(shape > 0.0 && rate > 0.0)) fail(ErrorCode::invalid_argument, "gamma needs shape > 0 and rate > 0");
  Vec eta(2);
  eta[0] = shape - 1.0;
  eta[1] = -rate;
  return {SufficientStatistic::gamma(), std::move(eta)};
}

ExpFamilyDensity ExpFamilyDensity::categorical_from_weights(std::span<const double> w) {
  if (w.size() < 2) fail(ErrorCode::invalid_argument, "categorical needs at least 2 weights");
  Vec eta(static_cast<Eigen::Index>(w.size()));
  bool any_positive = false;
  for (size_t j = 0; j < w.size(); ++j) {
    if (w[j] < 0.0) fail(ErrorCode::invalid_argument, "categorical weights must be nonnegative");
    eta[static_cast<Eigen::Index>(j)] = std::log(w[j]);  // -inf for zero weight
    any_positive |= w[j] > 0.0;
  }
  if (!any_positive) fail(ErrorCode::invalid_argument, "categorical weights are all zero");
  return {SufficientStatistic::categorical(static_cast<int>(w.size())), std::move(eta)};
}

ExpFamilyDensity ExpFamilyDensity::point_mass(cplx value) {
  Vec eta(2);
  eta[0] = value.real();
  eta[1] = value.imag();
  return {SufficientStatistic::point_mass(), std::move(eta)};
}

cplx ExpFamilyDensity::gaussian_mean() const {
  switch (stat_.family) {
    case Family::real_gaussian: return {-eta_[0] / (2.0 * eta_[1]), 0.0};
    case Family::complex_gaussian: return cplx(eta_[0], eta_[1]) / (-2.0 * eta_[2]);
    default: fail(ErrorCode::family_mismatch, "gaussian_mean on " + stat_.name());
  }
}

double ExpFamilyDensity::gaussian_variance() const {
  switch (stat_.family) {
    case Family::real_gaussian: return -0.5 / eta_[1];
    case Family::complex_gaussian: return -1.0 / eta_[2];
    default: fail(ErrorCode::family_mismatch, "gaussian_variance on " + stat_.name());
  }
}

double ExpFamilyDensity::gamma_shape() const {
  if (stat_.family != Family::gamma) fail(ErrorCode::family_mismatch, "gamma_shape on " + stat_.name());
  return eta_[0] + 1.0;
}

double ExpFamilyDensity::gamma_rate() const {
  if (stat_.family != Family::gamma) fail(ErrorCode::family_mismatch, "gamma_rate on " + stat_.name());
  return -eta_[1];
}

cplx ExpFamilyDensity::point_value() const {
  if (stat_.family != Family::point_mass) fail(ErrorCode::family_mismatch, "point_value on " + stat_.name());
  return {eta_[0], eta_[1]};
}

Vec ExpFamilyDensity::categorical_probs() const {
  if (stat_.family != Family::categorical)
    fail(ErrorCode::family_mismatch, "categorical_probs on " + stat_.name());
  const double mx = eta_.maxCoeff();
  if (!std::isfinite(mx)) fail(ErrorCode::not_normalizable, "categorical has no positive weight");
  Vec p = (eta_.array() - mx).exp();
  return p / p.sum();
}

ExpFamilyDensity multiply(const ExpFamilyDensity& a, const ExpFamilyDensity& b) {
  require_same_family(a, b, "multiply");
  if (a.stat().family == Family::point_mass)
    fail(ErrorCode::family_mismatch, "point masses do not form an unnormalized family");
  return {a.stat(), a.eta() + b.eta()};
}

ExpFamilyDensity divide(const ExpFamilyDensity& a, const ExpFamilyDensity& b) {
  require_same_family(a, b, "divide");
  if (a.stat().family == Family::point_mass)
    fail(ErrorCode::family_mismatch, "point masses do not form an unnormalized family");
  if (a.stat().family == Family::categorical) {
    for (Eigen::Index j = 0; j < b.eta().size(); ++j)
      if (b.eta()[j] == -std::numeric_limits<double>::infinity())
        fail(ErrorCode::invalid_argument, "categorical division by a zero entry");
  }
  return {a.stat(), a.eta() - b.eta()};
}

MomentParams to_moments(const ExpFamilyDensity& d) {
  if (!d.normalizable())
    fail(ErrorCode::not_normalizable, "to_moments on a non-normalizable " + d.stat().name());
  switch (d.stat().family) {
    case Family::real_gaussian: {
      const double v = d.gaussian_variance();
      const double m = d.gaussian_mean().real();
      Vec t(2);
      t << m, m * m + v;
      return t;
    }
    case Family::complex_gaussian: {
      const double v = d.gaussian_variance();
      const cplx m = d.gaussian_mean();
      Vec t(3);
      t << m.real(), m.imag(), std::norm(m) + v;
      return t;
    }
    case Family::gamma: {
      const double a = d.gamma_shape();
      const double b = d.gamma_rate();
      Vec t(2);
      t << digamma(a) - std::log(b), a / b;
      return t;
    }
    case Family::categorical: return d.categorical_probs();
    case Family::point_mass: break;
  }
  fail(ErrorCode::family_mismatch, "to_moments on point mass needs a target statistic");
}

ExpFamilyDensity from_moments(const SufficientStatistic& stat, const MomentParams& theta) {
  if (theta.size() != stat.dim())
    fail(ErrorCode::invalid_argument, "moment vector length does not match " + stat.name());
  switch (stat.family) {
    case Family::real_gaussian: {
      const double v = theta[1] - theta[0] * theta[0];
      if (!(v > 0.0)) fail(ErrorCode::degenerate_projection, "implied real variance " + std::to_string(v));
      return ExpFamilyDensity::real_gaussian(theta[0], v);
    }
    case Family::complex_gaussian: {
      const cplx m(theta[0], theta[1]);
      const double v = theta[2] - std::norm(m);
      if (!(v > 0.0)) fail(ErrorCode::degenerate_projection, "implied complex variance " + std::to_string(v));
      return ExpFamilyDensity::complex_gaussian(m, v);
    }
    case Family::gamma: {
      if (!(theta[1] > 0.0)) fail(ErrorCode::degenerate_projection, "gamma mean must be positive");
      const double a = gamma_shape_from_moments(theta[0], theta[1]);
      return ExpFamilyDensity::gamma(a, a / theta[1]);
    }
    case Family::categorical: {
      double sum = 0.0;
      for (Eigen::Index j = 0; j < theta.size(); ++j) {
        if (theta[j] < 0.0) fail(ErrorCode::degenerate_projection, "negative categorical moment");
        sum += theta[j];
      }
      if (!(sum > 0.0)) fail(ErrorCode::degenerate_projection, "categorical moments sum to zero");
      Vec eta = (theta / sum).array().log();
      return {stat, std::move(eta)};
    }
    case Family::point_mass: break;
  }
  fail(ErrorCode::family_mismatch, "from_moments is undefined for point masses");
}

double log_partition(const ExpFamilyDensity& d) {
  if (!d.normalizable())
    fail(ErrorCode::not_normalizable, "log_partition on a non-normalizable " + d.stat().name());
  const Vec& e = d.eta();
  switch (d.stat().family) {
    case Family::real_gaussian:
      return -e[0] * e[0] / (4.0 * e[1]) + 0.5 * std::log(kPi / (-e[1]));
    case Family::complex_gaussian:
      return -(e[0] * e[0] + e[1] * e[1]) / (4.0 * e[2]) + std::log(kPi) - std::log(-e[2]);
    case Family::gamma:
      return std::lgamma(e[0] + 1.0) - (e[0] + 1.0) * std::log(-e[1]);
    case Family::categorical: {
      const double mx = e.maxCoeff();
      return mx + std::log((e.array() - mx).exp().sum());
    }
    case Family::point_mass: return 0.0;
  }
  return 0.0;
}

double kl_divergence(const ExpFamilyDensity& p, const ExpFamilyDensity& q) {
  require_same_family(p, q, "kl_divergence");
  const MomentParams tp = to_moments(p);
  return log_partition(q) - log_partition(p) - (q.eta() - p.eta()).dot(tp);
}

double log_kernel(const ExpFamilyDensity& d, cplx x) {
  const Vec& e = d.eta();
  switch (d.stat().family) {
    case Family::real_gaussian: return e[0] * x.real() + e[1] * x.real() * x.real();
    case Family::complex_gaussian: return e[0] * x.real() + e[1] * x.imag() + e[2] * std::norm(x);
    case Family::gamma: return e[0] * std::log(x.real()) + e[1] * x.real();
    default: fail(ErrorCode::family_mismatch, "log_kernel on " + d.stat().name());
  }
}

MomentParams moments_of_point(const SufficientStatistic& stat, cplx value) {
  switch (stat.family) {
    case Family::real_gaussian: {
      Vec t(2);
      t << value.real(), value.real() * value.real();
      return t;
    }
    case Family::complex_gaussian: {
      Vec t(3);
      t << value.real(), value.imag(), std::norm(value);
      return t;
    }
    case Family::gamma: {
      if (!(value.real() > 0.0)) fail(ErrorCode::invalid_argument, "gamma point mass must be positive");
      Vec t(2);
      t << std::log(value.real()), value.real();
      return t;
    }
    default: fail(ErrorCode::family_mismatch, "moments_of_point on " + stat.name());
  }
}

ExpFamilyDensity project(const SufficientStatistic& target, const MomentSource& source) {
  return from_moments(target, source.moments(target));
}

ExpFamilyDensity project(const SufficientStatistic& target, const ExpFamilyDensity& member) {
  if (member.stat().family == Family::point_mass)
    fail(ErrorCode::degenerate_projection, "cannot project a point mass onto " + target.name());
  if (!(member.stat() == target))
    fail(ErrorCode::family_mismatch, "projection across families is not supported");
  if (!member.normalizable())
    fail(ErrorCode::not_normalizable, "projecting a non-normalizable member");
  return member;  // m-projection is the identity on family members
}

BernoulliGaussian::Posterior BernoulliGaussian::posterior(cplx mu, double tau) const {
  if (!(tau > 0.0)) fail(ErrorCode::degenerate_projection, "degenerate cavity: pseudo variance <= 0");
  if (rho == 0.0) return {cplx(0.0, 0.0), 0.0, 0.0, 0.0};
  const double v = 1.0 / (1.0 / slab_variance + 1.0 / tau);
  const cplx m = (v / tau) * mu;
  double resp = 1.0;
  if (rho < 1.0) {
    // log evidence of slab vs spike component, both CN(mu; 0, .)
    const double l_slab = -std::log(slab_variance + tau) - std::norm(mu) / (slab_variance + tau);
    const double l_spike = -std::log(tau) - std::norm(mu) / tau;
    const double z = std::log1p(-rho) - std::log(rho) + l_spike - l_slab;
    resp = z > 0.0 ? std::exp(-z) / (1.0 + std::exp(-z)) : 1.0 / (1.0 + std::exp(z));
  }
  const double second = resp * (std::norm(m) + v);
  const cplx mean = resp * m;
  return {mean, second - std::norm(mean), second, resp};
}

MomentParams BernoulliGaussian::moments(const SufficientStatistic& stat) const {
  if (stat.family != Family::complex_gaussian)
    fail(ErrorCode::family_mismatch, "Bernoulli-Gaussian moments requested for " + stat.name());
  Vec t(3);
  t << 0.0, 0.0, rho * slab_variance;
  return t;
}

}  // namespace bfem::expfam
