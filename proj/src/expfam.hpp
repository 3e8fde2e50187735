#pragma once

#include <complex>
#include <span>
#include <string>
#include <variant>

#include <Eigen/Dense>

#include "errors.hpp"

namespace bfem::expfam {

using cplx = std::complex<double>;
using Vec = Eigen::VectorXd;

enum class Family {
  real_gaussian,     // t(x) = [x, x^2]
  complex_gaussian,  // t(x) = [Re x, Im x, |x|^2], circularly symmetric
  gamma,             // t(x) = [ln x, x]
  categorical,       // t(x) = k indicator components
  point_mass,        // delta(x - value); not a true family, used for EM blocks
};

struct SufficientStatistic {
  Family family = Family::complex_gaussian;
  int categories = 0;

  int dim() const;
  std::string name() const;
  bool operator==(const SufficientStatistic&) const = default;

  static SufficientStatistic real_gaussian() { return {Family::real_gaussian, 0}; }
  static SufficientStatistic complex_gaussian() { return {Family::complex_gaussian, 0}; }
  static SufficientStatistic gamma() { return {Family::gamma, 0}; }
  static SufficientStatistic categorical(int k);
  static SufficientStatistic point_mass() { return {Family::point_mass, 0}; }
};

// Moment parameters theta = E[t(x)], same length as the statistic.
using MomentParams = Vec;

// A (possibly unnormalized) member of an exponential family, stored by its
// natural parameters. Values are immutable after construction. Negative
// Gaussian precision and similar out-of-space parameters are representable;
// normalizability is only enforced where a density is actually needed.
class ExpFamilyDensity {
public:
  ExpFamilyDensity() = default;
  ExpFamilyDensity(SufficientStatistic stat, Vec eta);

  const SufficientStatistic& stat() const { return stat_; }
  const Vec& eta() const { return eta_; }
  bool normalizable() const;

  static ExpFamilyDensity flat(const SufficientStatistic& stat);
  static ExpFamilyDensity complex_gaussian(cplx mean, double variance);
  static ExpFamilyDensity real_gaussian(double mean, double variance);
  static ExpFamilyDensity gamma(double shape, double rate);
  static ExpFamilyDensity categorical_from_weights(std::span<const double> w);
  static ExpFamilyDensity point_mass(cplx value);

  // Gaussian accessors (real or complex family; precision must be positive).
  cplx gaussian_mean() const;
  double gaussian_variance() const;
  // Gamma accessors.
  double gamma_shape() const;
  double gamma_rate() const;
  // Point-mass location.
  cplx point_value() const;
  // Categorical probabilities (normalized).
  Vec categorical_probs() const;

private:
  SufficientStatistic stat_;
  Vec eta_;
};

// Closure of the unnormalized family: natural parameters add / subtract.
ExpFamilyDensity multiply(const ExpFamilyDensity& a, const ExpFamilyDensity& b);
ExpFamilyDensity divide(const ExpFamilyDensity& a, const ExpFamilyDensity& b);

// Bijection between natural and moment parameters (normalizable members only).
MomentParams to_moments(const ExpFamilyDensity& d);
ExpFamilyDensity from_moments(const SufficientStatistic& stat, const MomentParams& theta);

// Log partition Phi(eta) so that exp(eta^T t(x) - Phi) integrates to one
// against the family's base measure.
double log_partition(const ExpFamilyDensity& d);

// KL divergence between two normalizable members of the same family.
double kl_divergence(const ExpFamilyDensity& p, const ExpFamilyDensity& q);

// eta^T t(x) for scalar continuous families; used by quadrature oracles.
double log_kernel(const ExpFamilyDensity& d, cplx x);

// Moments of t(x) under a point mass at `value`.
MomentParams moments_of_point(const SufficientStatistic& stat, cplx value);

// Anything that can report E[t(x)] for a requested statistic.
class MomentSource {
public:
  virtual ~MomentSource() = default;
  virtual MomentParams moments(const SufficientStatistic& stat) const = 0;
};

// m-projection: the family member matching the source's moments, which
// minimizes KL(source || member) over the family.
ExpFamilyDensity project(const SufficientStatistic& target, const MomentSource& source);
ExpFamilyDensity project(const SufficientStatistic& target, const ExpFamilyDensity& member);

// Spike-and-slab prior (1-rho) delta(x) + rho CN(x; 0, slab_variance).
// Not an exponential-family member itself, but supports exact posterior
// moment queries against a Gaussian pseudo-likelihood, which is all the
// solvers and the EP projection step ever need from it.
struct BernoulliGaussian : MomentSource {
  double rho = 1.0;
  double slab_variance = 1.0;

  BernoulliGaussian(double rho_, double v0) : rho(rho_), slab_variance(v0) {
    if (!(rho >= 0.0 && rho <= 1.0)) fail(ErrorCode::invalid_argument, "rho outside [0,1]");
    if (!(v0 > 0.0)) fail(ErrorCode::invalid_argument, "slab variance must be positive");
  }

  struct Posterior {
    cplx mean;
    double variance;
    double second_moment;        // E|x|^2
    double slab_responsibility;  // posterior weight of the slab component
  };
  // Moments of p(x) * CN(x; mu, tau) / normalizer, tau the pseudo-likelihood
  // variance. tau <= 0 is a degenerate cavity.
  Posterior posterior(cplx mu, double tau) const;

  MomentParams moments(const SufficientStatistic& stat) const override;
};

// Independent zero-mean complex Gaussian prior with per-entry variances.
struct ZeroMeanGaussianVec {
  Eigen::VectorXd variances;

  explicit ZeroMeanGaussianVec(Eigen::VectorXd v) : variances(std::move(v)) {
    if ((variances.array() <= 0.0).any())
      fail(ErrorCode::invalid_argument, "prior variances must be positive");
  }
};

using GenericPrior = std::variant<BernoulliGaussian, ZeroMeanGaussianVec>;

}  // namespace bfem::expfam
