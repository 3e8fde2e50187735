#include "engine.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <sstream>

namespace bfem::engine {

namespace {

constexpr double kTableFloor = 1e-300;

void normalize(Eigen::VectorXd& t) {
  const double z = t.sum();
  if (!(z > 0.0) || !std::isfinite(z)) fail(ErrorCode::degenerate_projection, "message table vanished");
  t /= z;
  t = t.cwiseMax(kTableFloor);
}

Eigen::VectorXd uniform_table(int states) {
  return Eigen::VectorXd::Constant(states, 1.0 / states);
}

MsgPayload flat_message(const graph::FactorGraph& g, int variable) {
  const auto& v = g.variable(variable);
  if (v.is_discrete()) return uniform_table(v.states());
  return ExpFamilyDensity::flat(std::get<graph::Continuous>(v.domain).stat);
}

const Eigen::VectorXd& as_table(const MsgPayload& p) {
  const auto* t = std::get_if<Eigen::VectorXd>(&p);
  if (!t) fail(ErrorCode::invalid_argument, "expected a discrete message");
  return *t;
}

const ExpFamilyDensity& as_density(const MsgPayload& p) {
  const auto* d = std::get_if<ExpFamilyDensity>(&p);
  if (!d) fail(ErrorCode::invalid_argument, "expected a continuous message");
  return *d;
}

bool is_flat(const ExpFamilyDensity& d) {
  return d.eta().isZero(0.0);
}

// Gaussian cavity view of a message: pseudo mean and variance (variance may
// be infinite for the flat message). Throws on negative precision.
struct Cavity {
  cplx mean;
  double variance;
};

Cavity gaussian_cavity(const ExpFamilyDensity& d) {
  if (d.stat().family != expfam::Family::complex_gaussian)
    fail(ErrorCode::invalid_argument, "expected a complex gaussian message");
  if (is_flat(d)) return {0.0, std::numeric_limits<double>::infinity()};
  const double prec = -d.eta()[2];
  if (!(prec > 0.0))
    fail(ErrorCode::degenerate_projection, "cavity has non-positive precision");
  return {cplx(d.eta()[0], d.eta()[1]) / (2.0 * prec), 1.0 / prec};
}

double payload_gap(const MsgPayload& a, const MsgPayload& b) {
  if (const auto* ta = std::get_if<Eigen::VectorXd>(&a))
    return (*ta - as_table(b)).cwiseAbs().maxCoeff();
  return (as_density(a).eta() - as_density(b).eta()).cwiseAbs().maxCoeff();
}

MsgPayload damp(const MsgPayload& old_p, const MsgPayload& new_p, double kappa) {
  if (kappa >= 1.0) return new_p;
  if (const auto* t_new = std::get_if<Eigen::VectorXd>(&new_p)) {
    Eigen::VectorXd mixed = (1.0 - kappa) * as_table(old_p) + kappa * *t_new;
    normalize(mixed);
    return mixed;
  }
  const auto& d_new = as_density(new_p);
  Eigen::VectorXd eta = (1.0 - kappa) * as_density(old_p).eta() + kappa * d_new.eta();
  return ExpFamilyDensity(d_new.stat(), std::move(eta));
}

std::vector<int> factor_states(const graph::FactorGraph& g, int factor) {
  std::vector<int> states;
  for (int v : g.factor(factor).args) states.push_back(g.variable(v).states());
  return states;
}

int slot_of(const graph::FactorGraph& g, int factor, int variable) {
  const auto& args = g.factor(factor).args;
  auto it = std::find(args.begin(), args.end(), variable);
  if (it == args.end()) fail(ErrorCode::invalid_argument, "variable is not an argument of the factor");
  return static_cast<int>(it - args.begin());
}

// ---- dense-table helpers ----

Eigen::VectorXd bp_table_message(const graph::FactorGraph& g, int factor, int variable,
                                 std::span<const MsgPayload> incoming) {
  const auto& args = g.factor(factor).args;
  const int slot = slot_of(g, factor, variable);
  Eigen::VectorXd m = Eigen::VectorXd::Zero(g.variable(variable).states());
  bethe::DiscreteAssignmentSpace space(factor_states(g, factor));
  space.for_each([&](size_t, std::span<const int> xa) {
    double w = g.table_value(factor, xa);
    if (w == 0.0) return;
    for (size_t k = 0; k < args.size(); ++k)
      if (static_cast<int>(k) != slot) w *= as_table(incoming[k])[xa[k]];
    m[xa[slot]] += w;
  });
  normalize(m);
  return m;
}

// ---- linear-delta (Gaussian) messaging ----

MsgPayload linear_delta_message(const graph::FactorGraph& g, int factor, int variable,
                                std::span<const MsgPayload> incoming) {
  const auto& f = g.factor(factor);
  const auto& ld = std::get<graph::LinearDelta>(f.kind);
  const int slot = slot_of(g, factor, variable);
  auto cav = [&](size_t k) { return gaussian_cavity(as_density(incoming[k])); };
  if (slot == 0) {
    // message to z: z = sum_j a_j x_j
    cplx mean = 0.0;
    double var = 0.0;
    for (size_t k = 1; k < f.args.size(); ++k) {
      const Cavity c = cav(k);
      if (!std::isfinite(c.variance))
        fail(ErrorCode::intractable, "linear delta needs proper inputs on all x");
      mean += ld.coeffs[static_cast<Eigen::Index>(k - 1)] * c.mean;
      var += std::norm(ld.coeffs[static_cast<Eigen::Index>(k - 1)]) * c.variance;
    }
    return ExpFamilyDensity::complex_gaussian(mean, var);
  }
  // message to x_j: x_j = (z - sum_{k != j} a_k x_k) / a_j
  const cplx aj = ld.coeffs[slot - 1];
  if (aj == 0.0) fail(ErrorCode::intractable, "zero coefficient for the target variable");
  const Cavity cz = cav(0);
  if (!std::isfinite(cz.variance))
    fail(ErrorCode::intractable, "linear delta needs a proper input on z");
  cplx mean = cz.mean;
  double var = cz.variance;
  for (size_t k = 1; k < f.args.size(); ++k) {
    if (static_cast<int>(k) == slot) continue;
    const Cavity c = cav(k);
    if (!std::isfinite(c.variance))
      fail(ErrorCode::intractable, "linear delta needs proper inputs on all other x");
    mean -= ld.coeffs[static_cast<Eigen::Index>(k - 1)] * c.mean;
    var += std::norm(ld.coeffs[static_cast<Eigen::Index>(k - 1)]) * c.variance;
  }
  return ExpFamilyDensity::complex_gaussian(mean / aj, var / std::norm(aj));
}

}  // namespace

MsgPayload bp_factor_to_variable(const graph::FactorGraph& g, int factor, int variable,
                                 std::span<const MsgPayload> incoming) {
  const auto& f = g.factor(factor);
  if (std::holds_alternative<graph::Table>(f.kind))
    return bp_table_message(g, factor, variable, incoming);
  if (const auto* gl = std::get_if<graph::GaussianLikelihood>(&f.kind)) {
    if (f.args.size() == 1) {
      if (!gl->noise_precision)
        fail(ErrorCode::invalid_argument, "unary gaussian likelihood without a known precision");
      return ExpFamilyDensity::complex_gaussian(gl->y, 1.0 / *gl->noise_precision);
    }
    fail(ErrorCode::intractable,
         "marginalizing a gaussian likelihood over its precision variable has no closed form");
  }
  if (std::holds_alternative<graph::LinearDelta>(f.kind))
    return linear_delta_message(g, factor, variable, incoming);
  fail(ErrorCode::intractable,
       "factor '" + f.name + "' is not integrable in closed form; use a moment-matching constraint");
}

MsgPayload variable_to_factor(const graph::FactorGraph& g, int variable, int factor,
                              std::span<const MsgPayload> incoming) {
  const auto& neighbors = g.factors_of(variable);
  MsgPayload out = flat_message(g, variable);
  for (size_t k = 0; k < neighbors.size(); ++k) {
    if (neighbors[k] == factor) continue;
    if (auto* t = std::get_if<Eigen::VectorXd>(&out))
      *t = t->cwiseProduct(as_table(incoming[k]));
    else
      out = expfam::multiply(std::get<ExpFamilyDensity>(out), as_density(incoming[k]));
  }
  if (auto* t = std::get_if<Eigen::VectorXd>(&out)) normalize(*t);
  return out;
}

BlockPayload vmp_block_update(const graph::FactorGraph& g, int factor, int block,
                              std::span<const BlockPayload> block_beliefs) {
  const auto& f = g.factor(factor);
  const auto& blocks = g.partition(factor);
  if (blocks.size() == 1) return FactorRef{factor};  // empty expectation: the factor itself

  if (std::holds_alternative<graph::Table>(f.kind)) {
    const auto& target_vars = blocks[block];
    std::vector<int> target_states;
    for (int v : target_vars) target_states.push_back(g.variable(v).states());
    bethe::DiscreteAssignmentSpace target_space(target_states);
    Eigen::VectorXd s = Eigen::VectorXd::Zero(target_space.size());

    bethe::DiscreteAssignmentSpace space(factor_states(g, factor));
    space.for_each([&](size_t, std::span<const int> xa) {
      double w = 1.0;
      int target_idx = 0;
      for (int b = 0; b < static_cast<int>(blocks.size()); ++b) {
        int idx = 0;
        for (int v : blocks[b]) {
          const int slot = slot_of(g, factor, v);
          idx = idx * g.variable(v).states() + xa[slot];
        }
        if (b == block)
          target_idx = idx;
        else
          w *= std::get<BlockTable>(block_beliefs[b]).values[idx];
      }
      if (w == 0.0) return;  // 0 ln 0 = 0
      const double fv = g.table_value(factor, xa);
      s[target_idx] += fv > 0.0 ? w * std::log(fv) : -std::numeric_limits<double>::infinity();
    });
    Eigen::VectorXd out = (s.array() - s.maxCoeff()).exp();
    normalize(out);
    return BlockTable{target_vars, std::move(out)};
  }

  if (const auto* gl = std::get_if<graph::GaussianLikelihood>(&f.kind)) {
    // f(z, lambda) = CN(y; z, 1/lambda), blocks {z} and {lambda}.
    if (f.args.size() != 2 || blocks.size() != 2 || blocks[block].size() != 1)
      fail(ErrorCode::intractable, "unsupported partition of a gaussian likelihood");
    const bool to_z = blocks[block][0] == f.args[0];
    const int other = 1 - block;
    if (to_z) {
      const auto* q = std::get_if<ExpFamilyDensity>(&block_beliefs[other]);
      if (!q) fail(ErrorCode::intractable, "precision belief unavailable");
      double mean_prec;
      if (q->stat().family == expfam::Family::point_mass)
        mean_prec = q->point_value().real();
      else if (q->stat().family == expfam::Family::gamma)
        mean_prec = q->gamma_shape() / q->gamma_rate();
      else
        fail(ErrorCode::intractable, "E[lambda] needs a gamma or point-mass belief");
      if (!(mean_prec > 0.0)) fail(ErrorCode::degenerate_projection, "nonpositive expected precision");
      return ExpFamilyDensity::complex_gaussian(gl->y, 1.0 / mean_prec);
    }
    const auto* q = std::get_if<ExpFamilyDensity>(&block_beliefs[other]);
    if (!q) fail(ErrorCode::intractable, "z belief unavailable");
    const Cavity c = gaussian_cavity(*q);
    if (!std::isfinite(c.variance)) fail(ErrorCode::intractable, "E|y-z|^2 needs a proper z belief");
    // E[ln f] = ln(lambda) - lambda E|y-z|^2 + const -> Gamma(2, E|y-z|^2)
    return ExpFamilyDensity::gamma(2.0, std::norm(gl->y - c.mean) + c.variance);
  }

  if (const auto* ldn = std::get_if<graph::LogDensity>(&f.kind)) {
    if (ldn->conjugacy == graph::LogDensity::Conjugacy::zero_mean_gaussian_variance) {
      // f(x, alpha) = CN(x; 0, alpha), blocks {x} and {alpha}.
      if (f.args.size() != 2 || blocks.size() != 2 || blocks[block].size() != 1)
        fail(ErrorCode::intractable, "unsupported partition of a variance-conjugate factor");
      const bool to_x = blocks[block][0] == f.args[0];
      if (!to_x)
        fail(ErrorCode::intractable,
             "message to the variance block is outside the supported families");
      const auto* q = std::get_if<ExpFamilyDensity>(&block_beliefs[1 - block]);
      if (!q) fail(ErrorCode::intractable, "variance belief unavailable");
      double inv_var_mean;  // E[1/alpha]
      if (q->stat().family == expfam::Family::point_mass) {
        const double a = q->point_value().real();
        if (!(a > 0.0)) fail(ErrorCode::degenerate_projection, "nonpositive variance estimate");
        inv_var_mean = 1.0 / a;
      } else if (q->stat().family == expfam::Family::gamma && q->gamma_shape() > 1.0) {
        inv_var_mean = q->gamma_rate() / (q->gamma_shape() - 1.0);
      } else {
        fail(ErrorCode::intractable, "E[1/alpha] has no closed form for this belief");
      }
      return ExpFamilyDensity::complex_gaussian(0.0, 1.0 / inv_var_mean);
    }
    fail(ErrorCode::intractable, "ln f has no closed-form expectation for this factor");
  }
  fail(ErrorCode::intractable, "unsupported factor kind for a VMP update");
}

namespace {

// Tilted joint table of a discrete block: block message times all incoming
// n-messages of the block's variables.
Eigen::VectorXd tilted_block_table(const graph::FactorGraph& g, int factor,
                                   const std::vector<int>& vars, const BlockPayload& block_msg,
                                   std::span<const MsgPayload> incoming) {
  std::vector<int> states;
  for (int v : vars) states.push_back(g.variable(v).states());
  bethe::DiscreteAssignmentSpace space(states);
  Eigen::VectorXd t(space.size());

  if (const auto* fr = std::get_if<FactorRef>(&block_msg)) {
    // Trivial partition: the block covers the whole factor, but the block's
    // variable order may permute the argument order.
    std::vector<int> slot_map(vars.size());
    for (size_t k = 0; k < vars.size(); ++k) slot_map[k] = slot_of(g, fr->factor, vars[k]);
    std::vector<int> by_slot(vars.size());
    space.for_each([&](size_t idx, std::span<const int> xa) {
      for (size_t k = 0; k < vars.size(); ++k) by_slot[slot_map[k]] = xa[k];
      double w = g.table_value(fr->factor, by_slot);
      for (size_t k = 0; k < vars.size(); ++k) w *= as_table(incoming[k])[xa[k]];
      t[static_cast<Eigen::Index>(idx)] = w;
    });
  } else {
    const auto& bt = std::get<BlockTable>(block_msg);
    space.for_each([&](size_t idx, std::span<const int> xa) {
      double w = bt.values[static_cast<Eigen::Index>(idx)];
      for (size_t k = 0; k < vars.size(); ++k) w *= as_table(incoming[k])[xa[k]];
      t[static_cast<Eigen::Index>(idx)] = w;
    });
  }
  return t;
}

Eigen::VectorXd marginal_of_block_table(const std::vector<int>& states, const Eigen::VectorXd& t,
                                        int target_slot) {
  bethe::DiscreteAssignmentSpace space(states);
  Eigen::VectorXd m = Eigen::VectorXd::Zero(states[target_slot]);
  space.for_each([&](size_t idx, std::span<const int> xa) {
    m[xa[target_slot]] += t[static_cast<Eigen::Index>(idx)];
  });
  return m;
}

}  // namespace

MsgPayload ep_project_send(const graph::FactorGraph& g, int factor, int block, int variable,
                           std::span<const MsgPayload> incoming, const BlockPayload& block_msg) {
  const auto& vars = g.partition(factor)[block];
  const int slot = static_cast<int>(std::find(vars.begin(), vars.end(), variable) - vars.begin());
  if (slot == static_cast<int>(vars.size()))
    fail(ErrorCode::invalid_argument, "variable is not in the block");

  if (g.variable(variable).is_discrete()) {
    std::vector<int> states;
    for (int v : vars) states.push_back(g.variable(v).states());
    Eigen::VectorXd tilted = tilted_block_table(g, factor, vars, block_msg, incoming);
    Eigen::VectorXd marg = marginal_of_block_table(states, tilted, slot);
    const double z = marg.sum();
    if (!(z > 0.0)) fail(ErrorCode::degenerate_projection, "tilted marginal vanished");
    marg /= z;
    // Projection onto the full categorical statistic is the identity.
    Eigen::VectorXd out = marg.cwiseQuotient(as_table(incoming[slot]).cwiseMax(kTableFloor));
    normalize(out);
    return out;
  }

  // Continuous scalar block.
  if (vars.size() != 1)
    fail(ErrorCode::intractable, "EP over a joint continuous block is not supported");
  const auto& stat = g.constraint(variable).stat;
  const auto& n_msg = as_density(incoming[slot]);

  if (const auto* d = std::get_if<ExpFamilyDensity>(&block_msg)) {
    const auto tilted = expfam::multiply(*d, n_msg);
    const auto proj = expfam::from_moments(stat, expfam::to_moments(tilted));
    return expfam::divide(proj, n_msg);
  }
  const auto& fr = std::get<FactorRef>(block_msg);
  const auto& f = g.factor(fr.factor);
  if (const auto* ldn = std::get_if<graph::LogDensity>(&f.kind);
      ldn && ldn->conjugacy == graph::LogDensity::Conjugacy::bernoulli_gaussian_prior) {
    const expfam::BernoulliGaussian prior(ldn->rho, ldn->slab_variance);
    const Cavity c = gaussian_cavity(n_msg);
    expfam::MomentParams theta(3);
    if (!std::isfinite(c.variance)) {
      theta = prior.moments(stat);
    } else {
      const auto post = prior.posterior(c.mean, c.variance);
      theta << post.mean.real(), post.mean.imag(), post.second_moment;
    }
    const auto proj = expfam::from_moments(stat, theta);
    return expfam::divide(proj, n_msg);
  }
  if (const auto* gl = std::get_if<graph::GaussianLikelihood>(&f.kind); gl && f.args.size() == 1) {
    const auto d = ExpFamilyDensity::complex_gaussian(gl->y, 1.0 / *gl->noise_precision);
    const auto tilted = expfam::multiply(d, n_msg);
    const auto proj = expfam::from_moments(stat, expfam::to_moments(tilted));
    return expfam::divide(proj, n_msg);
  }
  if (std::holds_alternative<graph::LinearDelta>(f.kind)) {
    // The tilted marginal is Gaussian, so projection is the identity and the
    // EP message coincides with the BP one.
    return linear_delta_message(g, fr.factor, variable, incoming);
  }
  fail(ErrorCode::intractable, "no tilted moments available for factor '" + f.name + "'");
}

Eigen::VectorXd mean_field_update(const graph::FactorGraph& g,
                                  const std::vector<Eigen::VectorXd>& beliefs, int variable) {
  const int states = g.variable(variable).states();
  Eigen::VectorXd s = Eigen::VectorXd::Zero(states);
  for (int a : g.factors_of(variable)) {
    const auto& args = g.factor(a).args;
    const int slot = slot_of(g, a, variable);
    bethe::DiscreteAssignmentSpace space(factor_states(g, a));
    space.for_each([&](size_t, std::span<const int> xa) {
      double w = 1.0;
      for (size_t k = 0; k < args.size(); ++k)
        if (static_cast<int>(k) != slot) w *= beliefs[args[k]][xa[k]];
      if (w == 0.0) return;
      const double fv = g.table_value(a, xa);
      s[xa[slot]] += fv > 0.0 ? w * std::log(fv) : -std::numeric_limits<double>::infinity();
    });
  }
  Eigen::VectorXd b = (s.array() - s.maxCoeff()).exp();
  normalize(b);
  return b;
}

namespace {

struct RunState {
  const graph::FactorGraph& g;
  graph::HyperView hv;
  std::vector<BlockPayload> block_msg;
  std::vector<std::vector<MsgPayload>> m;  // hyper -> var, by slot
  std::vector<std::vector<MsgPayload>> n;  // var -> hyper, by slot
  int ep_skips = 0;

  explicit RunState(const graph::FactorGraph& graph) : g(graph), hv(graph::hyper_view(graph)) {
    const int H = static_cast<int>(hv.nodes.size());
    block_msg.resize(H);
    m.resize(H);
    n.resize(H);
    for (int h = 0; h < H; ++h) {
      const auto& vars = hv.nodes[h].vars;
      m[h].reserve(vars.size());
      n[h].reserve(vars.size());
      for (int v : vars) {
        m[h].push_back(flat_message(g, v));
        n[h].push_back(flat_message(g, v));
      }
      block_msg[h] = initial_block_msg(h);
    }
  }

  BlockPayload initial_block_msg(int h) const {
    const auto& node = hv.nodes[h];
    if (g.partition(node.factor).size() == 1) {
      // Trivial partition: the factor itself; pre-densify the common cases.
      const auto& f = g.factor(node.factor);
      if (const auto* gl = std::get_if<graph::GaussianLikelihood>(&f.kind);
          gl && f.args.size() == 1 && gl->noise_precision)
        return ExpFamilyDensity::complex_gaussian(gl->y, 1.0 / *gl->noise_precision);
      return FactorRef{node.factor};
    }
    // Non-trivial partitions are supported for discrete factors.
    std::vector<int> states;
    for (int v : node.vars) {
      if (!g.variable(v).is_discrete())
        fail(ErrorCode::intractable, "non-trivial partitions need discrete blocks in run()");
      states.push_back(g.variable(v).states());
    }
    bethe::DiscreteAssignmentSpace space(states);
    return BlockTable{node.vars, Eigen::VectorXd::Constant(space.size(), 1.0 / space.size())};
  }

  // q_{a,v} = m'_{a->(a,v)} prod_i n_{i->(a,v)} for discrete blocks.
  std::optional<BlockTable> block_belief(int h) const {
    const auto& node = hv.nodes[h];
    for (int v : node.vars)
      if (!g.variable(v).is_discrete()) return std::nullopt;
    std::vector<int> states;
    for (int v : node.vars) states.push_back(g.variable(v).states());
    std::vector<const Eigen::VectorXd*> nt;
    for (size_t k = 0; k < node.vars.size(); ++k) nt.push_back(&as_table(n[h][k]));
    bethe::DiscreteAssignmentSpace space(states);
    Eigen::VectorXd q(space.size());
    if (const auto* fr = std::get_if<FactorRef>(&block_msg[h])) {
      std::vector<int> slot_map(node.vars.size());
      for (size_t k = 0; k < node.vars.size(); ++k)
        slot_map[k] = slot_of(g, fr->factor, node.vars[k]);
      std::vector<int> by_slot(node.vars.size());
      space.for_each([&](size_t idx, std::span<const int> xa) {
        for (size_t k = 0; k < node.vars.size(); ++k) by_slot[slot_map[k]] = xa[k];
        double w = g.table_value(fr->factor, by_slot);
        for (size_t k = 0; k < node.vars.size(); ++k) w *= (*nt[k])[xa[k]];
        q[static_cast<Eigen::Index>(idx)] = w;
      });
    } else {
      const auto& bt = std::get<BlockTable>(block_msg[h]);
      space.for_each([&](size_t idx, std::span<const int> xa) {
        double w = bt.values[static_cast<Eigen::Index>(idx)];
        for (size_t k = 0; k < node.vars.size(); ++k) w *= (*nt[k])[xa[k]];
        q[static_cast<Eigen::Index>(idx)] = w;
      });
    }
    normalize(q);
    return BlockTable{node.vars, std::move(q)};
  }

  MsgPayload belief(int variable) const {
    MsgPayload out = flat_message(g, variable);
    for (int h : hv.nodes_of_variable[variable]) {
      const auto& vars = hv.nodes[h].vars;
      const size_t slot = std::find(vars.begin(), vars.end(), variable) - vars.begin();
      if (auto* t = std::get_if<Eigen::VectorXd>(&out))
        *t = t->cwiseProduct(as_table(m[h][slot]));
      else
        out = expfam::multiply(std::get<ExpFamilyDensity>(out), as_density(m[h][slot]));
    }
    if (auto* t = std::get_if<Eigen::VectorXd>(&out)) normalize(*t);
    return out;
  }

  MsgPayload propose_message(int h, size_t slot) const {
    const auto& node = hv.nodes[h];
    const int variable = node.vars[slot];
    if (g.constraint(variable).kind == graph::ConstraintKind::moment_matching)
      return ep_project_send(g, node.factor, node.block, variable, n[h], block_msg[h]);
    // Marginalization constraint: BP over the block, the block message acting
    // as the factor.
    if (g.variable(variable).is_discrete()) {
      if (const auto* fr = std::get_if<FactorRef>(&block_msg[h])) {
        // Trivial partition: plain BP on the original factor.
        std::vector<MsgPayload> by_arg(g.factor(fr->factor).args.size());
        for (size_t k = 0; k < node.vars.size(); ++k)
          by_arg[slot_of(g, fr->factor, node.vars[k])] = n[h][k];
        return bp_factor_to_variable(g, fr->factor, variable, by_arg);
      }
      std::vector<int> states;
      for (int v : node.vars) states.push_back(g.variable(v).states());
      Eigen::VectorXd tilted = tilted_block_table(g, node.factor, node.vars, block_msg[h], n[h]);
      // divide the target's own n back out of the tilted product
      bethe::DiscreteAssignmentSpace space(states);
      Eigen::VectorXd msg = Eigen::VectorXd::Zero(states[slot]);
      const auto& own = as_table(n[h][slot]);
      space.for_each([&](size_t idx, std::span<const int> xa) {
        msg[xa[slot]] += tilted[static_cast<Eigen::Index>(idx)] /
                         std::max(own[xa[slot]], kTableFloor);
      });
      normalize(msg);
      return msg;
    }
    // Continuous scalar block under marginalization consistency.
    if (const auto* d = std::get_if<ExpFamilyDensity>(&block_msg[h])) return *d;
    const auto& fr = std::get<FactorRef>(block_msg[h]);
    return bp_factor_to_variable(g, fr.factor, variable, n[h]);
  }
};

void trace_payload(std::vector<std::string>& out, int round, const std::string& edge,
                   const char* dir, const MsgPayload& p) {
  std::ostringstream os;
  os << round << ',' << edge << ',' << dir << ',';
  if (const auto* t = std::get_if<Eigen::VectorXd>(&p)) {
    for (Eigen::Index i = 0; i < t->size(); ++i) os << (i ? " " : "") << (*t)[i];
  } else {
    const auto& e = std::get<ExpFamilyDensity>(p).eta();
    for (Eigen::Index i = 0; i < e.size(); ++i) os << (i ? " " : "") << e[i];
  }
  out.push_back(os.str());
}

}  // namespace

RunResult run(const graph::FactorGraph& g, const Schedule& schedule) {
  if (!(schedule.damping > 0.0 && schedule.damping <= 1.0))
    fail(ErrorCode::invalid_argument, "damping must be in (0, 1]");
  if (!(schedule.tolerance > 0.0)) fail(ErrorCode::invalid_argument, "tolerance must be positive");
  const int max_rounds = schedule.max_rounds > 0 ? schedule.max_rounds : 10 * g.num_variables();

  RunState st(g);
  const int H = static_cast<int>(st.hv.nodes.size());
  RunResult res;

  auto edge_name = [&](int h, size_t slot) {
    const auto& node = st.hv.nodes[h];
    return g.factor(node.factor).name + ":" + std::to_string(node.block) + "-" +
           g.variable(node.vars[slot]).name;
  };

  // Current block beliefs, refreshed as messages move.
  std::vector<BlockPayload> q(H);
  auto refresh_q = [&](int h) {
    if (auto bt = st.block_belief(h))
      q[h] = std::move(*bt);
    else if (const auto* d = std::get_if<ExpFamilyDensity>(&st.block_msg[h]))
      q[h] = *d;  // continuous: best-effort density view, unused by scalar EP sends
    else
      q[h] = st.block_msg[h];
  };
  for (int h = 0; h < H; ++h) refresh_q(h);

  auto refresh_block_msg = [&](int h) {
    const auto& node = st.hv.nodes[h];
    const auto& blocks_of_factor = st.hv.nodes_of_factor[node.factor];
    if (blocks_of_factor.size() == 1) return;  // constant
    std::vector<BlockPayload> qs;
    qs.reserve(blocks_of_factor.size());
    for (int hb : blocks_of_factor) qs.push_back(q[hb]);
    st.block_msg[h] = vmp_block_update(g, node.factor, node.block, qs);
  };

  auto send_from_block = [&](int h, double& change, int round) {
    const auto& node = st.hv.nodes[h];
    for (size_t slot = 0; slot < node.vars.size(); ++slot) {
      MsgPayload proposed;
      try {
        proposed = st.propose_message(h, slot);
      } catch (const Error& e) {
        if (e.code() == ErrorCode::degenerate_projection) {
          ++st.ep_skips;
          continue;  // keep the previous message this round
        }
        throw Error(e.code(), "edge " + edge_name(h, slot) + ": " + e.what());
      }
      MsgPayload damped = damp(st.m[h][slot], proposed, schedule.damping);
      change = std::max(change, payload_gap(damped, st.m[h][slot]));
      st.m[h][slot] = std::move(damped);
      if (schedule.trace) trace_payload(res.trace, round, edge_name(h, slot), "bv", st.m[h][slot]);
    }
  };

  auto refresh_n_of_variable = [&](int i, double& change, int round) {
    const auto& hs = st.hv.nodes_of_variable[i];
    for (int h : hs) {
      const auto& vars = st.hv.nodes[h].vars;
      const size_t slot = std::find(vars.begin(), vars.end(), i) - vars.begin();
      MsgPayload prod = flat_message(g, i);
      for (int h2 : hs) {
        if (h2 == h) continue;
        const auto& vars2 = st.hv.nodes[h2].vars;
        const size_t slot2 = std::find(vars2.begin(), vars2.end(), i) - vars2.begin();
        if (auto* t = std::get_if<Eigen::VectorXd>(&prod))
          *t = t->cwiseProduct(as_table(st.m[h2][slot2]));
        else
          prod = expfam::multiply(std::get<ExpFamilyDensity>(prod), as_density(st.m[h2][slot2]));
      }
      if (auto* t = std::get_if<Eigen::VectorXd>(&prod)) normalize(*t);
      MsgPayload damped = damp(st.n[h][slot], prod, schedule.damping);
      change = std::max(change, payload_gap(damped, st.n[h][slot]));
      st.n[h][slot] = std::move(damped);
      if (schedule.trace) trace_payload(res.trace, round, edge_name(h, slot), "vb", st.n[h][slot]);
    }
  };

  bool converged = false;
  int round = 0;
  for (; round < max_rounds && !converged; ++round) {
    double change = 0.0;
    if (schedule.mode == Schedule::Mode::parallel) {
      for (int h = 0; h < H; ++h) refresh_block_msg(h);
      for (int h = 0; h < H; ++h) send_from_block(h, change, round);
      for (int i = 0; i < g.num_variables(); ++i) refresh_n_of_variable(i, change, round);
      for (int h = 0; h < H; ++h) refresh_q(h);
    } else {
      for (int a = 0; a < g.num_factors(); ++a) {
        for (int h : st.hv.nodes_of_factor[a]) refresh_block_msg(h);
        for (int h : st.hv.nodes_of_factor[a]) {
          send_from_block(h, change, round);
          for (int i : st.hv.nodes[h].vars) {
            refresh_n_of_variable(i, change, round);
            for (int h2 : st.hv.nodes_of_variable[i]) refresh_q(h2);
          }
        }
      }
    }
    converged = change < schedule.tolerance;
  }

  res.rounds = round;
  res.converged = converged;
  res.ep_skips = st.ep_skips;
  res.to_variable = st.m;
  res.to_block = st.n;
  res.beliefs.reserve(g.num_variables());
  for (int i = 0; i < g.num_variables(); ++i) res.beliefs.push_back(st.belief(i));
  res.block_beliefs.reserve(H);
  for (int h = 0; h < H; ++h) res.block_beliefs.push_back(st.block_belief(h));
  return res;
}

const Eigen::VectorXd& RunResult::belief_table(int variable) const {
  return as_table(beliefs[variable]);
}

const ExpFamilyDensity& RunResult::belief_density(int variable) const {
  return as_density(beliefs[variable]);
}

bethe::MessageSet RunResult::message_set(const graph::FactorGraph& g,
                                         const graph::HyperView& hv) const {
  bethe::MessageSet ms;
  ms.to_variable.resize(g.num_factors());
  ms.to_factor.resize(g.num_factors());
  for (int a = 0; a < g.num_factors(); ++a) {
    if (hv.nodes_of_factor[a].size() != 1)
      fail(ErrorCode::invalid_argument, "message_set needs trivial partitions");
    const int h = hv.nodes_of_factor[a][0];
    const auto& vars = hv.nodes[h].vars;
    const auto& args = g.factor(a).args;
    ms.to_variable[a].resize(args.size());
    ms.to_factor[a].resize(args.size());
    for (size_t k = 0; k < args.size(); ++k) {
      const size_t slot = std::find(vars.begin(), vars.end(), args[k]) - vars.begin();
      ms.to_variable[a][k] = as_table(to_variable[h][slot]);
      ms.to_factor[a][k] = as_table(to_block[h][slot]);
    }
  }
  return ms;
}

bethe::BetheBeliefSet RunResult::belief_set(const graph::FactorGraph& g,
                                            const graph::HyperView& hv) const {
  bethe::BetheBeliefSet bs;
  bs.variable_beliefs.reserve(g.num_variables());
  for (int i = 0; i < g.num_variables(); ++i) bs.variable_beliefs.push_back(belief_table(i));
  bs.factor_beliefs.resize(g.num_factors());
  for (int a = 0; a < g.num_factors(); ++a) {
    if (hv.nodes_of_factor[a].size() != 1)
      fail(ErrorCode::invalid_argument, "belief_set needs trivial partitions");
    const int h = hv.nodes_of_factor[a][0];
    const auto& bt = block_beliefs[h];
    if (!bt) fail(ErrorCode::invalid_argument, "belief_set needs discrete blocks");
    // Reorder from block-variable order to factor-argument order.
    const auto& args = g.factor(a).args;
    std::vector<int> states_args;
    for (int v : args) states_args.push_back(g.variable(v).states());
    std::vector<int> states_block;
    for (int v : bt->vars) states_block.push_back(g.variable(v).states());
    bethe::DiscreteAssignmentSpace space(states_args);
    std::vector<double> values(space.size());
    space.for_each([&](size_t idx, std::span<const int> xa) {
      int bidx = 0;
      for (size_t k = 0; k < bt->vars.size(); ++k) {
        // digit of block var k comes from its position among the args
        const size_t arg_pos =
            std::find(args.begin(), args.end(), bt->vars[k]) - args.begin();
        bidx = bidx * states_block[k] + xa[arg_pos];
      }
      values[idx] = bt->values[bidx];
    });
    bs.factor_beliefs[a] = std::move(values);
  }
  return bs;
}

}  // namespace bfem::engine
