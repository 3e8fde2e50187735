#pragma once

#include <optional>
#include <span>
#include <string>
#include <variant>
#include <vector>

#include <Eigen/Dense>

#include "bethe.hpp"
#include "graph.hpp"

namespace bfem::engine {

using expfam::cplx;
using expfam::ExpFamilyDensity;

// Edge-resident message payload: a normalized table over one discrete
// variable, or an (unnormalized-family) density over one continuous variable.
// These are the exponentiated Lagrange multipliers of the constrained
// problem; the normalization multipliers are absorbed into the table / the
// density's implicit constant.
using MsgPayload = std::variant<Eigen::VectorXd, ExpFamilyDensity>;

// Joint table over the variables of one hyper-variable block.
struct BlockTable {
  std::vector<int> vars;
  Eigen::VectorXd values;  // row-major over vars' states
};

// Factor-to-block message: a joint table (discrete), a closed-form density
// over a scalar block, or the factor itself when no VMP expectation applies
// (trivial partition).
struct FactorRef {
  int factor;
};
using BlockPayload = std::variant<BlockTable, ExpFamilyDensity, FactorRef>;

struct Schedule {
  enum class Mode { parallel, sequential };
  Mode mode = Mode::parallel;
  int max_rounds = 0;      // 0 -> 10 * number of variables
  double damping = 1.0;    // kappa in (0, 1]
  double tolerance = 1e-8; // on the max message-parameter change
  bool trace = false;
};

struct RunResult {
  std::vector<MsgPayload> beliefs;                   // b_i per variable
  std::vector<std::optional<BlockTable>> block_beliefs;  // q_{a,v} per hyper node (discrete only)
  std::vector<std::vector<MsgPayload>> to_variable;  // m_{(a,v)->i} per (hyper node, slot)
  std::vector<std::vector<MsgPayload>> to_block;     // n_{i->(a,v)} per (hyper node, slot)
  int rounds = 0;
  bool converged = false;
  int ep_skips = 0;
  std::vector<std::string> trace;

  const Eigen::VectorXd& belief_table(int variable) const;
  const ExpFamilyDensity& belief_density(int variable) const;

  // Message/belief view for bethe::fixed_point_residual; requires an
  // all-discrete graph with trivial partitions.
  bethe::MessageSet message_set(const graph::FactorGraph& g, const graph::HyperView& hv) const;
  bethe::BetheBeliefSet belief_set(const graph::FactorGraph& g, const graph::HyperView& hv) const;
};

// ---- Update rules, usable standalone and by run() ----

// BP rule: m_{a->i} proportional to the local marginalization of f_a times
// the incoming n-messages. `incoming` is indexed by the factor's argument
// slots; the entry for `variable` is ignored.
MsgPayload bp_factor_to_variable(const graph::FactorGraph& g, int factor, int variable,
                                 std::span<const MsgPayload> incoming);

// n_{i->a}: product of incoming m-messages except the one from `factor`.
// `incoming` is indexed like g.factors_of(variable); the entry for `factor`
// is ignored. Degree-1 variables get the flat message.
MsgPayload variable_to_factor(const graph::FactorGraph& g, int variable, int factor,
                              std::span<const MsgPayload> incoming);

// VMP rule: exp(E[ln f_a]) over block `block`, the expectation taken against
// the current beliefs of the factor's other blocks (`block_beliefs` indexed
// by block; the own entry is ignored).
BlockPayload vmp_block_update(const graph::FactorGraph& g, int factor, int block,
                              std::span<const BlockPayload> block_beliefs);

// EP rule on the modified graph: project the tilted marginal of the block
// onto the variable's constraint family, then divide out n_{i->(a,v)}.
// `incoming` is indexed by the block's variable slots.
MsgPayload ep_project_send(const graph::FactorGraph& g, int factor, int block, int variable,
                           std::span<const MsgPayload> incoming, const BlockPayload& block_msg);

// One coordinate update of the fully factorized relaxation:
// b_i proportional to exp(sum_a E[ln f_a]) against the other variables'
// current beliefs. All-discrete graphs only.
Eigen::VectorXd mean_field_update(const graph::FactorGraph& g,
                                  const std::vector<Eigen::VectorXd>& beliefs, int variable);

RunResult run(const graph::FactorGraph& g, const Schedule& schedule);

}  // namespace bfem::engine
