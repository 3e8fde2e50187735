#pragma once

#include <span>
#include <vector>

#include <Eigen/Dense>

#include "graph.hpp"

namespace bfem::bethe {

// Iterates all joint assignments of a set of discrete variables, most
// significant digit first (variable order = construction order).
class DiscreteAssignmentSpace {
public:
  explicit DiscreteAssignmentSpace(std::vector<int> state_counts, size_t bound = 1000000);
  static DiscreteAssignmentSpace of(const graph::FactorGraph& g, size_t bound = 1000000);

  size_t size() const { return size_; }
  const std::vector<int>& state_counts() const { return states_; }

  // fn(flat_index, assignment)
  template <typename F>
  void for_each(F&& fn) const {
    std::vector<int> a(states_.size(), 0);
    for (size_t idx = 0; idx < size_; ++idx) {
      fn(idx, std::span<const int>(a));
      for (int k = static_cast<int>(a.size()) - 1; k >= 0; --k) {
        if (++a[k] < states_[k]) break;
        a[k] = 0;
      }
    }
  }

private:
  std::vector<int> states_;
  size_t size_ = 1;
};

// Joint value f(x) = prod_a f_a(x_a) at a full assignment.
double joint_value(const graph::FactorGraph& g, std::span<const int> assignment);

std::vector<Eigen::VectorXd> brute_force_marginals(const graph::FactorGraph& g);
double brute_force_log_z(const graph::FactorGraph& g);

// F(b) = sum b ln b - sum b ln f over the full assignment space; b is indexed
// in DiscreteAssignmentSpace order and must be normalized to 1e-9.
double variational_free_energy(std::span<const double> joint_belief, const graph::FactorGraph& g);

struct BetheBeliefSet {
  std::vector<std::vector<double>> factor_beliefs;   // b_a over x_a, row-major by argument order
  std::vector<Eigen::VectorXd> variable_beliefs;     // b_i
};

double bethe_free_energy(const BetheBeliefSet& beliefs, const graph::FactorGraph& g);

// Messages of a (trivial-partition) discrete run, indexed by factor and by
// the variable's slot in the factor's argument list.
struct MessageSet {
  std::vector<std::vector<Eigen::VectorXd>> to_variable;  // m_{a->i}
  std::vector<std::vector<Eigen::VectorXd>> to_factor;    // n_{i->a}
};

// Max deviation of the fixed-point characterizations b_a ∝ f_a prod n and
// b_i ∝ prod m over all factors and variables.
double fixed_point_residual(const graph::FactorGraph& g, const BetheBeliefSet& beliefs,
                            const MessageSet& messages);

}  // namespace bfem::bethe
