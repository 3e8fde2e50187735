#include "bethe.hpp"

#include <cmath>

namespace bfem::bethe {

namespace {

// 0 ln 0 = 0 ln(0/0) = 0.
double xlogy(double x, double y) {
  if (x == 0.0) return 0.0;
  return x * std::log(y);
}

}  // namespace

DiscreteAssignmentSpace::DiscreteAssignmentSpace(std::vector<int> state_counts, size_t bound)
    : states_(std::move(state_counts)) {
  for (int k : states_) {
    if (k < 1) fail(ErrorCode::invalid_argument, "state count must be positive");
    if (size_ > bound / static_cast<size_t>(k))
      fail(ErrorCode::too_large, "assignment space exceeds bound");
    size_ *= static_cast<size_t>(k);
  }
}

DiscreteAssignmentSpace DiscreteAssignmentSpace::of(const graph::FactorGraph& g, size_t bound) {
  std::vector<int> states;
  states.reserve(g.num_variables());
  for (const auto& v : g.variables()) {
    if (!v.is_discrete()) fail(ErrorCode::invalid_argument, "enumeration needs discrete variables");
    states.push_back(v.states());
  }
  return DiscreteAssignmentSpace(std::move(states), bound);
}

double joint_value(const graph::FactorGraph& g, std::span<const int> assignment) {
  double v = 1.0;
  std::vector<int> local;
  for (int a = 0; a < g.num_factors(); ++a) {
    const auto& args = g.factor(a).args;
    local.resize(args.size());
    for (size_t k = 0; k < args.size(); ++k) local[k] = assignment[args[k]];
    v *= g.table_value(a, local);
  }
  return v;
}

std::vector<Eigen::VectorXd> brute_force_marginals(const graph::FactorGraph& g) {
  auto space = DiscreteAssignmentSpace::of(g);
  std::vector<Eigen::VectorXd> marg(g.num_variables());
  for (int i = 0; i < g.num_variables(); ++i) marg[i] = Eigen::VectorXd::Zero(g.variable(i).states());
  double z = 0.0;
  space.for_each([&](size_t, std::span<const int> a) {
    const double w = joint_value(g, a);
    z += w;
    for (int i = 0; i < g.num_variables(); ++i) marg[i][a[i]] += w;
  });
  if (!(z > 0.0)) fail(ErrorCode::invalid_argument, "partition function is zero");
  for (auto& m : marg) m /= z;
  return marg;
}

double brute_force_log_z(const graph::FactorGraph& g) {
  auto space = DiscreteAssignmentSpace::of(g);
  double z = 0.0;
  space.for_each([&](size_t, std::span<const int> a) { z += joint_value(g, a); });
  if (!(z > 0.0)) fail(ErrorCode::invalid_argument, "partition function is zero");
  return std::log(z);
}

double variational_free_energy(std::span<const double> joint_belief, const graph::FactorGraph& g) {
  auto space = DiscreteAssignmentSpace::of(g);
  if (joint_belief.size() != space.size())
    fail(ErrorCode::invalid_argument, "belief table size does not match the assignment space");
  double sum = 0.0;
  for (double b : joint_belief) {
    if (b < 0.0) fail(ErrorCode::invalid_argument, "negative belief entry");
    sum += b;
  }
  if (std::abs(sum - 1.0) > 1e-9) fail(ErrorCode::invalid_argument, "belief is not normalized");
  double f = 0.0;
  space.for_each([&](size_t idx, std::span<const int> a) {
    const double b = joint_belief[idx];
    if (b == 0.0) return;
    f += b * std::log(b) - xlogy(b, joint_value(g, a));
  });
  return f;
}

double bethe_free_energy(const BetheBeliefSet& beliefs, const graph::FactorGraph& g) {
  if (static_cast<int>(beliefs.factor_beliefs.size()) != g.num_factors() ||
      static_cast<int>(beliefs.variable_beliefs.size()) != g.num_variables())
    fail(ErrorCode::invalid_argument, "belief set does not match the graph");
  double f = 0.0;
  std::vector<int> arg_states;
  for (int a = 0; a < g.num_factors(); ++a) {
    const auto& ba = beliefs.factor_beliefs[a];
    const auto& args = g.factor(a).args;
    arg_states.clear();
    for (int v : args) arg_states.push_back(g.variable(v).states());
    DiscreteAssignmentSpace space(arg_states);
    if (ba.size() != space.size())
      fail(ErrorCode::invalid_argument, "factor belief size mismatch for '" + g.factor(a).name + "'");
    double total = 0.0;
    space.for_each([&](size_t idx, std::span<const int> xa) {
      const double b = ba[idx];
      if (b < 0.0) fail(ErrorCode::invalid_argument, "negative factor belief entry");
      total += b;
      if (b == 0.0) return;
      f += b * std::log(b) - xlogy(b, g.table_value(a, xa));
    });
    if (std::abs(total - 1.0) > 1e-6)
      fail(ErrorCode::invalid_argument, "factor belief not normalized for '" + g.factor(a).name + "'");
  }
  for (int i = 0; i < g.num_variables(); ++i) {
    const auto& bi = beliefs.variable_beliefs[i];
    double h = 0.0;
    for (Eigen::Index s = 0; s < bi.size(); ++s) h += xlogy(bi[s], bi[s]);
    f -= (g.degree(i) - 1) * h;
  }
  return f;
}

double fixed_point_residual(const graph::FactorGraph& g, const BetheBeliefSet& beliefs,
                            const MessageSet& messages) {
  double worst = 0.0;
  std::vector<int> arg_states;
  // b_a proportional to f_a prod_i n_{i->a}
  for (int a = 0; a < g.num_factors(); ++a) {
    const auto& args = g.factor(a).args;
    arg_states.clear();
    for (int v : args) arg_states.push_back(g.variable(v).states());
    DiscreteAssignmentSpace space(arg_states);
    Eigen::VectorXd cand(space.size());
    space.for_each([&](size_t idx, std::span<const int> xa) {
      double w = g.table_value(a, xa);
      for (size_t k = 0; k < args.size(); ++k) w *= messages.to_factor[a][k][xa[k]];
      cand[static_cast<Eigen::Index>(idx)] = w;
    });
    const double z = cand.sum();
    if (!(z > 0.0)) fail(ErrorCode::invalid_argument, "factor fixed-point candidate vanished");
    cand /= z;
    for (size_t idx = 0; idx < space.size(); ++idx)
      worst = std::max(worst, std::abs(cand[static_cast<Eigen::Index>(idx)] -
                                       beliefs.factor_beliefs[a][idx]));
  }
  // b_i proportional to prod_a m_{a->i}
  for (int i = 0; i < g.num_variables(); ++i) {
    Eigen::VectorXd cand = Eigen::VectorXd::Ones(g.variable(i).states());
    for (int a : g.factors_of(i)) {
      const auto& args = g.factor(a).args;
      const size_t slot = std::find(args.begin(), args.end(), i) - args.begin();
      cand = cand.cwiseProduct(messages.to_variable[a][slot]);
    }
    const double z = cand.sum();
    if (!(z > 0.0)) fail(ErrorCode::invalid_argument, "variable fixed-point candidate vanished");
    cand /= z;
    worst = std::max(worst, (cand - beliefs.variable_beliefs[i]).cwiseAbs().maxCoeff());
  }
  return worst;
}

}  // namespace bfem::bethe
