#pragma once

#include <functional>
#include <map>
#include <optional>
#include <set>
#include <span>
#include <string>
#include <variant>
#include <vector>

#include <Eigen/Dense>

#include "expfam.hpp"

namespace bfem::graph {

using expfam::cplx;

struct Discrete {
  int states;
};
struct Continuous {
  expfam::SufficientStatistic stat;
};
using Domain = std::variant<Discrete, Continuous>;

struct Variable {
  std::string name;
  Domain domain;
  bool is_discrete() const { return std::holds_alternative<Discrete>(domain); }
  int states() const { return std::get<Discrete>(domain).states; }
};

// Dense nonnegative table over discrete arguments, row-major by argument order.
struct Table {
  std::vector<double> values;
};

// ln f_a given as a callable plus a declared conjugacy class that tells the
// engine which closed-form expectations exist.
struct LogDensity {
  enum class Conjugacy {
    zero_mean_gaussian_variance,  // f(x, alpha) = CN(x; 0, alpha)
    bernoulli_gaussian_prior,     // f(x) = (1-rho) delta(x) + rho CN(x; 0, v0)
  };
  Conjugacy conjugacy;
  double rho = 1.0;            // bernoulli_gaussian_prior
  double slab_variance = 1.0;  // bernoulli_gaussian_prior
  std::function<double(std::span<const cplx>)> log_eval;
};

// delta(z - a x); arguments are [z, x_1, ..., x_k].
struct LinearDelta {
  Eigen::RowVectorXcd coeffs;
};

// CN(y; z, 1/lambda); arguments are [z] with known precision, or [z, lambda]
// with the precision as a (gamma or point-mass) variable.
struct GaussianLikelihood {
  cplx y;
  std::optional<double> noise_precision;
};

using FactorKind = std::variant<Table, LogDensity, LinearDelta, GaussianLikelihood>;

struct Factor {
  std::string name;
  std::vector<int> args;  // variable indices
  FactorKind kind;
};

enum class ConstraintKind { marginalization, moment_matching };

struct EdgeConstraint {
  ConstraintKind kind = ConstraintKind::marginalization;
  expfam::SufficientStatistic stat;  // moment_matching target
};

class FactorGraph;

class FactorGraphBuilder {
public:
  int add_variable(std::string name, Domain domain);
  int add_discrete(std::string name, int states) { return add_variable(std::move(name), Discrete{states}); }
  int add_factor(std::string name, std::vector<int> args, FactorKind kind);
  // Blocks are lists of variable indices; they must exactly partition the
  // factor's argument set. Unset factors keep the trivial one-block partition.
  void set_partition(int factor, std::vector<std::vector<int>> blocks);
  void set_full_factorization(int factor);
  void set_constraint(int variable, EdgeConstraint c);
  void set_point_mass(int variable);

  FactorGraph build() &&;

private:
  friend class FactorGraph;
  std::vector<Variable> vars_;
  std::vector<Factor> factors_;
  std::map<int, std::vector<std::vector<int>>> partitions_;
  std::map<int, EdgeConstraint> constraints_;
  std::set<int> point_mass_;
};

// Immutable after build; shareable across threads.
class FactorGraph {
public:
  int num_variables() const { return static_cast<int>(vars_.size()); }
  int num_factors() const { return static_cast<int>(factors_.size()); }
  const Variable& variable(int i) const { return vars_[i]; }
  const Factor& factor(int a) const { return factors_[a]; }
  const std::vector<Variable>& variables() const { return vars_; }
  const std::vector<Factor>& factors() const { return factors_; }

  int degree(int variable) const { return static_cast<int>(factors_of_[variable].size()); }
  const std::vector<int>& factors_of(int variable) const { return factors_of_[variable]; }
  const std::vector<std::vector<int>>& partition(int factor) const { return partitions_[factor]; }
  const EdgeConstraint& constraint(int variable) const { return constraints_[variable]; }
  bool point_mass_belief(int variable) const { return point_mass_.count(variable) > 0; }
  int variable_index(const std::string& name) const;

  bool is_connected() const;
  bool is_acyclic() const;
  bool is_tree() const { return is_connected() && is_acyclic(); }

  // Dense table of f_a evaluated at a joint discrete assignment (all-discrete
  // factors only).
  double table_value(int factor, std::span<const int> assignment) const;

private:
  friend class FactorGraphBuilder;
  std::vector<Variable> vars_;
  std::vector<Factor> factors_;
  std::vector<std::vector<int>> factors_of_;
  std::vector<std::vector<std::vector<int>>> partitions_;
  std::vector<EdgeConstraint> constraints_;
  std::set<int> point_mass_;
};

// The modified factor graph: one hyper-variable node per (factor, block).
struct HyperNode {
  int factor;
  int block;
  std::vector<int> vars;
};

struct HyperView {
  std::vector<HyperNode> nodes;
  std::vector<std::vector<int>> nodes_of_factor;    // factor -> node ids
  std::vector<std::vector<int>> nodes_of_variable;  // variable -> node ids
  int node_for(int factor, int variable) const;     // the block of `factor` containing `variable`
};

HyperView hyper_view(const FactorGraph& g);

// Line-oriented text format for small test graphs:
//   var <name> discrete <k> | var <name> gaussian
//   factor <name> table <var...> <entries...>
//   partition <factor> <block>|<block>       blocks: comma-separated var names
//   constraint <var> marg|moments
FactorGraph parse_graph(const std::string& text);
FactorGraph load_graph(const std::string& path);

}  // namespace bfem::graph
