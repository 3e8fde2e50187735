#include "graph.hpp"

#include <algorithm>
#include <fstream>
#include <sstream>

namespace bfem::graph {

namespace {

int checked_index(int idx, int bound, const char* what) {
  if (idx < 0 || idx >= bound) fail(ErrorCode::invalid_argument, std::string("dangling ") + what + " reference");
  return idx;
}

}  // namespace

int FactorGraphBuilder::add_variable(std::string name, Domain domain) {
  if (auto* d = std::get_if<Discrete>(&domain); d && d->states < 2)
    fail(ErrorCode::invalid_argument, "discrete variable needs at least 2 states");
  vars_.push_back({std::move(name), std::move(domain)});
  return static_cast<int>(vars_.size()) - 1;
}

int FactorGraphBuilder::add_factor(std::string name, std::vector<int> args, FactorKind kind) {
  for (int a : args) checked_index(a, static_cast<int>(vars_.size()), "variable");
  std::set<int> uniq(args.begin(), args.end());
  if (uniq.size() != args.size())
    fail(ErrorCode::invalid_argument, "factor '" + name + "' repeats an argument");
  if (args.empty()) fail(ErrorCode::invalid_argument, "factor '" + name + "' has no arguments");
  if (const auto* t = std::get_if<Table>(&kind)) {
    size_t expect = 1;
    for (int a : args) {
      if (!vars_[a].is_discrete())
        fail(ErrorCode::invalid_argument, "table factor '" + name + "' over a continuous variable");
      expect *= static_cast<size_t>(vars_[a].states());
    }
    if (t->values.size() != expect)
      fail(ErrorCode::invalid_argument, "table factor '" + name + "' has wrong entry count");
    bool any_pos = false;
    for (double v : t->values) {
      if (v < 0.0) fail(ErrorCode::invalid_argument, "table entries must be nonnegative");
      any_pos |= v > 0.0;
    }
    if (!any_pos) fail(ErrorCode::invalid_argument, "table factor '" + name + "' is identically zero");
  }
  if (const auto* ld = std::get_if<LinearDelta>(&kind)) {
    if (ld->coeffs.size() + 1 != static_cast<Eigen::Index>(args.size()))
      fail(ErrorCode::invalid_argument, "linear delta coefficient count must match inputs");
    if (ld->coeffs.cwiseAbs().maxCoeff() == 0.0)
      fail(ErrorCode::invalid_argument, "linear delta coefficient row is zero");
  }
  factors_.push_back({std::move(name), std::move(args), std::move(kind)});
  return static_cast<int>(factors_.size()) - 1;
}

void FactorGraphBuilder::set_partition(int factor, std::vector<std::vector<int>> blocks) {
  checked_index(factor, static_cast<int>(factors_.size()), "factor");
  partitions_[factor] = std::move(blocks);
}

void FactorGraphBuilder::set_full_factorization(int factor) {
  checked_index(factor, static_cast<int>(factors_.size()), "factor");
  std::vector<std::vector<int>> blocks;
  for (int v : factors_[factor].args) blocks.push_back({v});
  partitions_[factor] = std::move(blocks);
}

void FactorGraphBuilder::set_constraint(int variable, EdgeConstraint c) {
  checked_index(variable, static_cast<int>(vars_.size()), "variable");
  constraints_[variable] = c;
}

void FactorGraphBuilder::set_point_mass(int variable) {
  checked_index(variable, static_cast<int>(vars_.size()), "variable");
  if (vars_[variable].is_discrete())
    fail(ErrorCode::invalid_argument, "point-mass beliefs apply to continuous scalar variables only");
  point_mass_.insert(variable);
}

FactorGraph FactorGraphBuilder::build() && {
  FactorGraph g;
  g.vars_ = std::move(vars_);
  g.factors_ = std::move(factors_);
  g.point_mass_ = std::move(point_mass_);

  g.factors_of_.assign(g.vars_.size(), {});
  for (int a = 0; a < static_cast<int>(g.factors_.size()); ++a)
    for (int v : g.factors_[a].args) g.factors_of_[v].push_back(a);

  // Resolve partitions; default is the trivial single block.
  g.partitions_.resize(g.factors_.size());
  for (int a = 0; a < static_cast<int>(g.factors_.size()); ++a) {
    auto it = partitions_.find(a);
    if (it == partitions_.end()) {
      g.partitions_[a] = {g.factors_[a].args};
      continue;
    }
    std::set<int> seen;
    size_t total = 0;
    for (const auto& block : it->second) {
      if (block.empty()) fail(ErrorCode::invalid_argument, "empty partition block");
      for (int v : block) {
        if (!seen.insert(v).second)
          fail(ErrorCode::invalid_argument,
               "partition blocks of factor '" + g.factors_[a].name + "' overlap");
        total++;
      }
    }
    const auto& args = g.factors_[a].args;
    if (total != args.size() || !std::all_of(args.begin(), args.end(), [&](int v) { return seen.count(v); }))
      fail(ErrorCode::invalid_argument,
           "partition of factor '" + g.factors_[a].name + "' does not cover its arguments");
    g.partitions_[a] = it->second;
  }

  // Resolve per-variable constraint classes; default is marginalization
  // consistency. Discrete moment matching defaults to the full categorical
  // statistic.
  g.constraints_.resize(g.vars_.size());
  for (int i = 0; i < static_cast<int>(g.vars_.size()); ++i) {
    auto it = constraints_.find(i);
    if (it != constraints_.end()) {
      g.constraints_[i] = it->second;
    } else {
      g.constraints_[i].kind = ConstraintKind::marginalization;
    }
    if (g.constraints_[i].kind == ConstraintKind::moment_matching &&
        g.constraints_[i].stat.dim() == 0) {
      g.constraints_[i].stat = g.vars_[i].is_discrete()
                                   ? expfam::SufficientStatistic::categorical(g.vars_[i].states())
                                   : std::get<Continuous>(g.vars_[i].domain).stat;
    }
  }
  return g;
}

int FactorGraph::variable_index(const std::string& name) const {
  for (int i = 0; i < num_variables(); ++i)
    if (vars_[i].name == name) return i;
  fail(ErrorCode::invalid_argument, "unknown variable '" + name + "'");
}

bool FactorGraph::is_connected() const {
  if (vars_.empty()) return true;
  std::vector<bool> seen_v(vars_.size(), false), seen_f(factors_.size(), false);
  std::vector<int> stack{0};
  seen_v[0] = true;
  while (!stack.empty()) {
    int v = stack.back();
    stack.pop_back();
    for (int a : factors_of_[v]) {
      if (seen_f[a]) continue;
      seen_f[a] = true;
      for (int w : factors_[a].args)
        if (!seen_v[w]) {
          seen_v[w] = true;
          stack.push_back(w);
        }
    }
  }
  return std::all_of(seen_v.begin(), seen_v.end(), [](bool b) { return b; }) &&
         std::all_of(seen_f.begin(), seen_f.end(), [](bool b) { return b; });
}

bool FactorGraph::is_acyclic() const {
  // Bipartite graph is acyclic iff #edges == #nodes - #components.
  size_t edges = 0;
  for (const auto& f : factors_) edges += f.args.size();
  const size_t nodes = vars_.size() + factors_.size();
  // Count components over the bipartite graph.
  std::vector<int> comp_v(vars_.size(), -1), comp_f(factors_.size(), -1);
  int ncomp = 0;
  for (int s = 0; s < static_cast<int>(vars_.size()); ++s) {
    if (comp_v[s] >= 0) continue;
    comp_v[s] = ncomp;
    std::vector<int> stack{s};
    while (!stack.empty()) {
      int v = stack.back();
      stack.pop_back();
      for (int a : factors_of_[v]) {
        if (comp_f[a] >= 0) continue;
        comp_f[a] = ncomp;
        for (int w : factors_[a].args)
          if (comp_v[w] < 0) {
            comp_v[w] = ncomp;
            stack.push_back(w);
          }
      }
    }
    ++ncomp;
  }
  for (int a = 0; a < static_cast<int>(factors_.size()); ++a)
    if (comp_f[a] < 0) comp_f[a] = ncomp++;  // argument-less cannot occur, safety only
  return edges == nodes - static_cast<size_t>(ncomp);
}

double FactorGraph::table_value(int factor, std::span<const int> assignment) const {
  const auto& f = factors_[factor];
  const auto* t = std::get_if<Table>(&f.kind);
  if (!t) fail(ErrorCode::invalid_argument, "factor '" + f.name + "' is not tabular");
  size_t idx = 0;
  for (size_t k = 0; k < f.args.size(); ++k) {
    const int states = vars_[f.args[k]].states();
    const int s = assignment[k];
    if (s < 0 || s >= states) fail(ErrorCode::invalid_argument, "assignment out of range");
    idx = idx * static_cast<size_t>(states) + static_cast<size_t>(s);
  }
  return t->values[idx];
}

int HyperView::node_for(int factor, int variable) const {
  for (int h : nodes_of_factor[factor]) {
    const auto& vs = nodes[h].vars;
    if (std::find(vs.begin(), vs.end(), variable) != vs.end()) return h;
  }
  fail(ErrorCode::invalid_argument, "variable is not an argument of the factor");
}

HyperView hyper_view(const FactorGraph& g) {
  HyperView hv;
  hv.nodes_of_factor.resize(g.num_factors());
  hv.nodes_of_variable.resize(g.num_variables());
  for (int a = 0; a < g.num_factors(); ++a) {
    const auto& blocks = g.partition(a);
    for (int v = 0; v < static_cast<int>(blocks.size()); ++v) {
      const int id = static_cast<int>(hv.nodes.size());
      hv.nodes.push_back({a, v, blocks[v]});
      hv.nodes_of_factor[a].push_back(id);
      for (int i : blocks[v]) hv.nodes_of_variable[i].push_back(id);
    }
  }
  return hv;
}

FactorGraph parse_graph(const std::string& text) {
  FactorGraphBuilder b;
  std::map<std::string, int> vars;
  std::map<std::string, int> factors;
  std::istringstream in(text);
  std::string line;
  int lineno = 0;
  auto var_of = [&](const std::string& name) {
    auto it = vars.find(name);
    if (it == vars.end())
      fail(ErrorCode::parse, "line " + std::to_string(lineno) + ": unknown variable '" + name + "'");
    return it->second;
  };
  while (std::getline(in, line)) {
    ++lineno;
    std::istringstream ls(line);
    std::string tok;
    if (!(ls >> tok) || tok[0] == '#') continue;
    if (tok == "var") {
      std::string name, kind;
      if (!(ls >> name >> kind)) fail(ErrorCode::parse, "line " + std::to_string(lineno) + ": bad var line");
      if (vars.count(name)) fail(ErrorCode::parse, "duplicate variable '" + name + "'");
      if (kind == "discrete") {
        int k = 0;
        if (!(ls >> k)) fail(ErrorCode::parse, "line " + std::to_string(lineno) + ": missing state count");
        vars[name] = b.add_discrete(name, k);
      } else if (kind == "gaussian") {
        vars[name] = b.add_variable(name, Continuous{expfam::SufficientStatistic::complex_gaussian()});
      } else {
        fail(ErrorCode::parse, "line " + std::to_string(lineno) + ": unknown domain '" + kind + "'");
      }
    } else if (tok == "factor") {
      std::string name, kind;
      if (!(ls >> name >> kind) || kind != "table")
        fail(ErrorCode::parse, "line " + std::to_string(lineno) + ": only table factors are supported");
      std::vector<std::string> rest;
      while (ls >> tok) rest.push_back(tok);
      std::vector<int> args;
      size_t k = 0;
      for (; k < rest.size() && vars.count(rest[k]); ++k) args.push_back(vars[rest[k]]);
      std::vector<double> values;
      for (; k < rest.size(); ++k) {
        try {
          values.push_back(std::stod(rest[k]));
        } catch (const std::exception&) {
          fail(ErrorCode::parse, "line " + std::to_string(lineno) + ": bad table entry '" + rest[k] + "'");
        }
      }
      factors[name] = b.add_factor(name, std::move(args), Table{std::move(values)});
    } else if (tok == "partition") {
      std::string fname;
      if (!(ls >> fname)) fail(ErrorCode::parse, "line " + std::to_string(lineno) + ": bad partition line");
      auto fit = factors.find(fname);
      if (fit == factors.end())
        fail(ErrorCode::parse, "line " + std::to_string(lineno) + ": unknown factor '" + fname + "'");
      std::string spec;
      std::getline(ls, spec);
      std::vector<std::vector<int>> blocks;
      std::istringstream bs(spec);
      std::string block;
      while (std::getline(bs, block, '|')) {
        std::vector<int> ids;
        std::string name;
        std::istringstream vs(block);
        while (std::getline(vs, name, ',')) {
          name.erase(std::remove_if(name.begin(), name.end(), ::isspace), name.end());
          if (!name.empty()) ids.push_back(var_of(name));
        }
        if (!ids.empty()) blocks.push_back(std::move(ids));
      }
      b.set_partition(fit->second, std::move(blocks));
    } else if (tok == "constraint") {
      std::string name, kind;
      if (!(ls >> name >> kind)) fail(ErrorCode::parse, "line " + std::to_string(lineno) + ": bad constraint line");
      if (kind == "marg")
        b.set_constraint(var_of(name), {ConstraintKind::marginalization, {}});
      else if (kind == "moments")
        b.set_constraint(var_of(name), {ConstraintKind::moment_matching, {}});
      else
        fail(ErrorCode::parse, "line " + std::to_string(lineno) + ": unknown constraint '" + kind + "'");
    } else {
      fail(ErrorCode::parse, "line " + std::to_string(lineno) + ": unknown directive '" + tok + "'");
    }
  }
  return std::move(b).build();
}

FactorGraph load_graph(const std::string& path) {
  std::ifstream in(path);
  if (!in) fail(ErrorCode::io, "cannot open graph file '" + path + "'");
  std::stringstream ss;
  ss << in.rdbuf();
  return parse_graph(ss.str());
}

}  // namespace bfem::graph
