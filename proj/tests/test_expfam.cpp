#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <cmath>
#include <numbers>
#include <random>

#include "expfam.hpp"

using namespace bfem;
using namespace bfem::expfam;

namespace {

// Test-only quadrature oracles, independent of the analytic formulas they check.

double simpson(const std::function<double(double)>& f, double a, double b, int n) {
  if (n % 2) ++n;
  const double h = (b - a) / n;
  double s = f(a) + f(b);
  for (int i = 1; i < n; ++i) s += f(a + i * h) * (i % 2 ? 4.0 : 2.0);
  return s * h / 3.0;
}

// Integrates g over the complex plane on an [c±r]² grid.
double integrate2d(const std::function<double(cplx)>& g, cplx c, double r, int n) {
  auto outer = [&](double re) {
    return simpson([&](double im) { return g(cplx(re, im)); }, c.imag() - r, c.imag() + r, n);
  };
  return simpson(outer, c.real() - r, c.real() + r, n);
}

ExpFamilyDensity cn(cplx m, double v) { return ExpFamilyDensity::complex_gaussian(m, v); }

double eta_gap(const ExpFamilyDensity& a, const ExpFamilyDensity& b) {
  return (a.eta() - b.eta()).cwiseAbs().maxCoeff();
}

}  // namespace

TEST_CASE("complex gaussian multiply and divide") {
  auto p = multiply(cn(1.0, 1.0), cn(3.0, 1.0));
  CHECK(p.gaussian_mean().real() == doctest::Approx(2.0));
  CHECK(p.gaussian_variance() == doctest::Approx(0.5));

  auto q = multiply(cn(0.0, 1.0), cn(0.0, 1.0));
  CHECK(std::abs(q.gaussian_mean()) == doctest::Approx(0.0));
  CHECK(q.gaussian_variance() == doctest::Approx(0.5));

  auto d = divide(cn(2.0, 0.5), cn(3.0, 1.0));
  CHECK(d.gaussian_mean().real() == doctest::Approx(1.0));
  CHECK(d.gaussian_variance() == doctest::Approx(1.0));

  auto self = divide(d, d);
  CHECK(self.eta().cwiseAbs().maxCoeff() == doctest::Approx(0.0));
  CHECK_FALSE(self.normalizable());

  auto neg = divide(cn(0.0, 1.0), cn(0.0, 0.5));
  CHECK(neg.eta()[2] == doctest::Approx(1.0));  // precision 1 - 2 = -1
  CHECK_FALSE(neg.normalizable());
}

TEST_CASE("categorical multiply keeps uniform as identity") {
  const double a[2] = {0.6, 0.4}, u[2] = {0.5, 0.5};
  auto p = multiply(ExpFamilyDensity::categorical_from_weights(a),
                    ExpFamilyDensity::categorical_from_weights(u));
  auto probs = p.categorical_probs();
  CHECK(probs[0] == doctest::Approx(0.6));
  CHECK(probs[1] == doctest::Approx(0.4));
}

TEST_CASE("family mismatch and zero-entry division are rejected") {
  CHECK_THROWS_AS(multiply(cn(0.0, 1.0), ExpFamilyDensity::gamma(2.0, 1.0)), Error);
  const double w[2] = {1.0, 0.0}, u[2] = {0.5, 0.5};
  CHECK_THROWS_AS(divide(ExpFamilyDensity::categorical_from_weights(u),
                         ExpFamilyDensity::categorical_from_weights(w)),
                  Error);
}

TEST_CASE("moment conversions") {
  auto t = to_moments(cn(0.0, 1.0));
  CHECK(t[0] == doctest::Approx(0.0));
  CHECK(t[1] == doctest::Approx(0.0));
  CHECK(t[2] == doctest::Approx(1.0));

  CHECK(to_moments(ExpFamilyDensity::gamma(2.0, 1.0))[1] == doctest::Approx(2.0));

  MomentParams theta(3);
  theta << 1.0, 0.0, 2.0;
  auto d = from_moments(SufficientStatistic::complex_gaussian(), theta);
  CHECK(d.gaussian_mean().real() == doctest::Approx(1.0));
  CHECK(d.gaussian_mean().imag() == doctest::Approx(0.0));
  CHECK(d.gaussian_variance() == doctest::Approx(1.0));

  CHECK_THROWS_AS(to_moments(divide(cn(0.0, 1.0), cn(0.0, 0.5))), Error);
  MomentParams bad(3);
  bad << 1.0, 0.0, 1.0;  // implied variance 0
  CHECK_THROWS_AS(from_moments(SufficientStatistic::complex_gaussian(), bad), Error);
}

TEST_CASE("moment round trip across families") {
  std::mt19937 rng(7);
  std::uniform_real_distribution<double> u(-2.0, 2.0), up(0.05, 4.0);
  for (int it = 0; it < 200; ++it) {
    auto check = [&](const ExpFamilyDensity& d) {
      auto back = from_moments(d.stat(), to_moments(d));
      double scale = std::max(1.0, d.eta().cwiseAbs().maxCoeff());
      CHECK(eta_gap(back, d) / scale < 1e-9);
    };
    check(cn(cplx(u(rng), u(rng)), up(rng)));
    check(ExpFamilyDensity::real_gaussian(u(rng), up(rng)));
    check(ExpFamilyDensity::gamma(up(rng) * 3.0, up(rng)));
    // Indicator statistics are non-minimal: eta is only unique up to a
    // constant shift, so compare the distributions instead.
    const double w[3] = {up(rng), up(rng), up(rng)};
    auto c = ExpFamilyDensity::categorical_from_weights(w);
    auto cback = from_moments(c.stat(), to_moments(c));
    CHECK((cback.categorical_probs() - c.categorical_probs()).cwiseAbs().maxCoeff() < 1e-12);
  }
}

TEST_CASE("log partition values") {
  const double w[4] = {1.0, 1.0, 1.0, 1.0};
  CHECK(log_partition(ExpFamilyDensity::categorical_from_weights(w)) ==
        doctest::Approx(std::log(4.0)));

  // CN(0,1): density at the mean equals 1/pi.
  auto d = cn(0.0, 1.0);
  CHECK(std::exp(log_kernel(d, 0.0) - log_partition(d)) ==
        doctest::Approx(1.0 / std::numbers::pi));

  // Gamma(1,1): quadrature of exp(eta^T t) over (0, inf) against the analytic value.
  auto g = ExpFamilyDensity::gamma(1.0, 1.0);
  double z = simpson([&](double x) { return x > 0 ? std::exp(log_kernel(g, x)) : 0.0; },
                     1e-9, 60.0, 4000);
  CHECK(std::log(z) == doctest::Approx(log_partition(g)).epsilon(1e-8));
  CHECK(log_partition(g) == doctest::Approx(0.0));
}

TEST_CASE("projection") {
  auto p = project(SufficientStatistic::complex_gaussian(), BernoulliGaussian(0.5, 1.0));
  CHECK(std::abs(p.gaussian_mean()) == doctest::Approx(0.0));
  CHECK(p.gaussian_variance() == doctest::Approx(0.5));

  auto member = cn(1.0, 2.0);
  CHECK(eta_gap(project(member.stat(), member), member) == 0.0);

  // Equal mixture of CN(-1, 0.1) and CN(1, 0.1), moments by 2-D quadrature.
  struct Mixture : MomentSource {
    MomentParams moments(const SufficientStatistic& stat) const override {
      REQUIRE(stat.family == Family::complex_gaussian);
      auto dens = [](cplx x) {
        auto comp = [&](cplx m) { return std::exp(-std::norm(x - m) / 0.1) / (std::numbers::pi * 0.1); };
        return 0.5 * comp(cplx(-1, 0)) + 0.5 * comp(cplx(1, 0));
      };
      MomentParams t(3);
      t[0] = integrate2d([&](cplx x) { return x.real() * dens(x); }, 0.0, 4.0, 600);
      t[1] = integrate2d([&](cplx x) { return x.imag() * dens(x); }, 0.0, 4.0, 600);
      t[2] = integrate2d([&](cplx x) { return std::norm(x) * dens(x); }, 0.0, 4.0, 600);
      return t;
    }
  };
  auto proj = project(SufficientStatistic::complex_gaussian(), Mixture{});
  CHECK(std::abs(proj.gaussian_mean()) < 1e-7);
  CHECK(proj.gaussian_variance() == doctest::Approx(1.1).epsilon(1e-6));

  // Degenerate moments carry a degenerate-projection error.
  struct Spike : MomentSource {
    MomentParams moments(const SufficientStatistic&) const override {
      MomentParams t(3);
      t << 1.0, 0.0, 1.0;
      return t;
    }
  };
  CHECK_THROWS_AS(project(SufficientStatistic::complex_gaussian(), Spike{}), Error);
}

TEST_CASE("multiply then divide is the identity") {
  std::mt19937 rng(11);
  std::uniform_real_distribution<double> u(-3.0, 3.0), up(0.05, 4.0);
  for (int it = 0; it < 300; ++it) {
    Vec ea(3), eb(3);
    ea << u(rng), u(rng), u(rng);
    eb << u(rng), u(rng), u(rng);
    ExpFamilyDensity a(SufficientStatistic::complex_gaussian(), ea);
    ExpFamilyDensity b(SufficientStatistic::complex_gaussian(), eb);
    CHECK(eta_gap(multiply(divide(a, b), b), a) < 1e-12);

    const double w1[3] = {up(rng), up(rng), up(rng)};
    const double w2[3] = {up(rng), up(rng), up(rng)};
    auto c1 = ExpFamilyDensity::categorical_from_weights(w1);
    auto c2 = ExpFamilyDensity::categorical_from_weights(w2);
    CHECK(eta_gap(multiply(divide(c1, c2), c2), c1) < 1e-12);
  }
}

TEST_CASE("gradient of the log partition equals the moments") {
  std::mt19937 rng(13);
  std::uniform_real_distribution<double> u(-2.0, 2.0), up(0.1, 3.0);
  auto grad_fd = [](const ExpFamilyDensity& d) {
    Vec g(d.eta().size());
    const double h = 1e-6;
    for (Eigen::Index j = 0; j < g.size(); ++j) {
      Vec ep = d.eta(), em = d.eta();
      ep[j] += h;
      em[j] -= h;
      g[j] = (log_partition({d.stat(), ep}) - log_partition({d.stat(), em})) / (2.0 * h);
    }
    return g;
  };
  for (int it = 0; it < 50; ++it) {
    std::vector<ExpFamilyDensity> ds;
    ds.push_back(cn(cplx(u(rng), u(rng)), up(rng)));
    ds.push_back(ExpFamilyDensity::real_gaussian(u(rng), up(rng)));
    ds.push_back(ExpFamilyDensity::gamma(up(rng) * 2.0 + 0.5, up(rng)));
    const double w[4] = {up(rng), up(rng), up(rng), up(rng)};
    ds.push_back(ExpFamilyDensity::categorical_from_weights(w));
    for (const auto& d : ds) {
      Vec t = to_moments(d);
      Vec g = grad_fd(d);
      for (Eigen::Index j = 0; j < t.size(); ++j)
        CHECK(g[j] == doctest::Approx(t[j]).epsilon(1e-6));
    }
  }
}

TEST_CASE("KL is zero on self and nonnegative") {
  std::mt19937 rng(17);
  std::uniform_real_distribution<double> u(-2.0, 2.0), up(0.1, 3.0);
  for (int it = 0; it < 200; ++it) {
    auto a = cn(cplx(u(rng), u(rng)), up(rng));
    auto b = cn(cplx(u(rng), u(rng)), up(rng));
    CHECK(kl_divergence(a, a) == doctest::Approx(0.0));
    CHECK(kl_divergence(a, b) >= -1e-12);

    auto g1 = ExpFamilyDensity::gamma(up(rng) * 2.0, up(rng));
    auto g2 = ExpFamilyDensity::gamma(up(rng) * 2.0, up(rng));
    CHECK(kl_divergence(g1, g2) >= -1e-12);
  }
}

TEST_CASE("bernoulli-gaussian posterior moments") {
  BernoulliGaussian pure(1.0, 1.0);
  auto p = pure.posterior(2.0, 1.0);
  CHECK(p.mean.real() == doctest::Approx(1.0));
  CHECK(p.variance == doctest::Approx(0.5));

  BernoulliGaussian spike(0.0, 1.0);
  auto s = spike.posterior(2.0, 1.0);
  CHECK(std::abs(s.mean) == 0.0);
  CHECK(s.second_moment == 0.0);

  BernoulliGaussian half(0.5, 1.0);
  auto h = half.posterior(0.0, 1.0);
  CHECK(std::abs(h.mean) == doctest::Approx(0.0));
  CHECK(h.variance == doctest::Approx(1.0 / 6.0));

  CHECK_THROWS_AS(half.posterior(0.0, -1.0), Error);
}

TEST_CASE("point mass moments") {
  auto t = moments_of_point(SufficientStatistic::complex_gaussian(), cplx(1.0, 2.0));
  CHECK(t[0] == 1.0);
  CHECK(t[1] == 2.0);
  CHECK(t[2] == doctest::Approx(5.0));
  auto g = moments_of_point(SufficientStatistic::gamma(), 2.0);
  CHECK(g[0] == doctest::Approx(std::log(2.0)));
  CHECK(g[1] == 2.0);
}
