#include "hfr/hierarchy.hpp"

#include <algorithm>
#include <set>
#include <string>

#include <nlohmann/json.hpp>

#include "hfr/error.hpp"

namespace hfr {

namespace {

// parent_of_constraint[node] = index of the constraint whose parent is node, or npos.
std::vector<std::size_t> constraint_by_parent(const HierarchyDag& dag) {
  std::vector<std::size_t> by_parent(dag.n_nodes, static_cast<std::size_t>(-1));
  for (std::size_t c = 0; c < dag.constraints.size(); ++c) {
    by_parent[dag.constraints[c].parent] = c;
  }
  return by_parent;
}

}  // namespace

void validate(const HierarchyDag& dag) {
  std::vector<bool> has_constraint(dag.n_nodes, false);
  for (const auto& c : dag.constraints) {
    if (c.parent >= dag.n_nodes) {
      throw Error(ErrorCode::ChildOutOfRange,
                  "parent " + std::to_string(c.parent) + " outside [0, " +
                      std::to_string(dag.n_nodes) + ")");
    }
    if (c.children.empty()) {
      throw Error(ErrorCode::InvalidConstraint,
                  "constraint for parent " + std::to_string(c.parent) + " has no children");
    }
    std::set<NodeId> seen;
    for (NodeId child : c.children) {
      if (child == c.parent) {
        throw Error(ErrorCode::SelfLoop, "node " + std::to_string(child) + " is its own child");
      }
      if (child >= dag.n_nodes) {
        throw Error(ErrorCode::ChildOutOfRange,
                    "child " + std::to_string(child) + " outside [0, " +
                        std::to_string(dag.n_nodes) + ")");
      }
      if (!seen.insert(child).second) {
        throw Error(ErrorCode::InvalidConstraint,
                    "child " + std::to_string(child) + " repeated under parent " +
                        std::to_string(c.parent));
      }
    }
    if (has_constraint[c.parent]) {
      throw Error(ErrorCode::DuplicateParentConstraint,
                  "node " + std::to_string(c.parent) + " is the parent of two constraints");
    }
    has_constraint[c.parent] = true;
  }
  // bottom_up_order throws CycleDetected.
  (void)bottom_up_order(dag);
}

std::vector<NodeId> leaves(const HierarchyDag& dag) {
  std::vector<bool> is_parent(dag.n_nodes, false);
  for (const auto& c : dag.constraints) {
    if (c.parent < dag.n_nodes) is_parent[c.parent] = true;
  }
  std::vector<NodeId> out;
  for (NodeId i = 0; i < dag.n_nodes; ++i) {
    if (!is_parent[i]) out.push_back(i);
  }
  return out;
}

std::vector<NodeId> bottom_up_order(const HierarchyDag& dag) {
  // Kahn's algorithm on edges child -> parent.
  std::vector<std::size_t> pending(dag.n_nodes, 0);
  std::vector<std::vector<NodeId>> parents_of(dag.n_nodes);
  for (const auto& c : dag.constraints) {
    pending[c.parent] += c.children.size();
    for (NodeId child : c.children) parents_of[child].push_back(c.parent);
  }
  std::vector<NodeId> order;
  order.reserve(dag.n_nodes);
  for (NodeId i = 0; i < dag.n_nodes; ++i) {
    if (pending[i] == 0) order.push_back(i);
  }
  for (std::size_t head = 0; head < order.size(); ++head) {
    for (NodeId p : parents_of[order[head]]) {
      if (--pending[p] == 0) order.push_back(p);
    }
  }
  if (order.size() != dag.n_nodes) {
    throw Error(ErrorCode::CycleDetected, "aggregation constraints contain a directed cycle");
  }
  return order;
}

std::vector<std::vector<std::size_t>> constraints_touching(const HierarchyDag& dag) {
  std::vector<std::vector<std::size_t>> out(dag.n_nodes);
  for (std::size_t c = 0; c < dag.constraints.size(); ++c) {
    out[dag.constraints[c].parent].push_back(c);
    for (NodeId child : dag.constraints[c].children) out[child].push_back(c);
  }
  return out;
}

std::map<NodeId, double> aggregate_from_leaves(const HierarchyDag& dag,
                                               const std::map<NodeId, double>& leaf_values) {
  validate(dag);
  const auto by_parent = constraint_by_parent(dag);
  std::map<NodeId, double> values;
  for (NodeId node : bottom_up_order(dag)) {
    const std::size_t c = by_parent[node];
    if (c == static_cast<std::size_t>(-1)) {
      auto it = leaf_values.find(node);
      if (it == leaf_values.end()) {
        throw Error(ErrorCode::MissingLeafValue, "no value for leaf " + std::to_string(node));
      }
      values[node] = it->second;
    } else {
      double sum = 0.0;
      for (NodeId child : dag.constraints[c].children) sum += values.at(child);
      values[node] = sum;
    }
  }
  return values;
}

Eigen::MatrixXd aggregate_panel(const HierarchyDag& dag, const Eigen::MatrixXd& leaf_panel) {
  validate(dag);
  const auto leaf_ids = leaves(dag);
  if (static_cast<std::size_t>(leaf_panel.rows()) != leaf_ids.size()) {
    throw Error(ErrorCode::MissingLeafValue,
                "leaf panel has " + std::to_string(leaf_panel.rows()) + " rows, hierarchy has " +
                    std::to_string(leaf_ids.size()) + " leaves");
  }
  Eigen::MatrixXd out(dag.n_nodes, leaf_panel.cols());
  for (std::size_t k = 0; k < leaf_ids.size(); ++k) {
    out.row(leaf_ids[k]) = leaf_panel.row(k);
  }
  const auto by_parent = constraint_by_parent(dag);
  for (NodeId node : bottom_up_order(dag)) {
    const std::size_t c = by_parent[node];
    if (c == static_cast<std::size_t>(-1)) continue;
    out.row(node).setZero();
    for (NodeId child : dag.constraints[c].children) out.row(node) += out.row(child);
  }
  return out;
}

Eigen::MatrixXd reconciliation_residuals(const HierarchyDag& dag, const Eigen::MatrixXd& forecasts,
                                         Eigen::Index t_begin, Eigen::Index t_end) {
  if (static_cast<std::size_t>(forecasts.rows()) != dag.n_nodes) {
    throw Error(ErrorCode::DimensionMismatch,
                "forecasts have " + std::to_string(forecasts.rows()) + " rows for " +
                    std::to_string(dag.n_nodes) + " nodes");
  }
  if (t_begin < 0 || t_begin > t_end || t_end > forecasts.cols()) {
    throw Error(ErrorCode::IndexOutOfRange,
                "time range [" + std::to_string(t_begin) + ", " + std::to_string(t_end) +
                    ") outside [0, " + std::to_string(forecasts.cols()) + ")");
  }
  const Eigen::Index width = t_end - t_begin;
  Eigen::MatrixXd out(static_cast<Eigen::Index>(dag.constraints.size()), width);
  for (std::size_t c = 0; c < dag.constraints.size(); ++c) {
    const auto& con = dag.constraints[c];
    auto row = out.row(static_cast<Eigen::Index>(c));
    row = forecasts.row(con.parent).segment(t_begin, width);
    for (NodeId child : con.children) row -= forecasts.row(child).segment(t_begin, width);
  }
  return out;
}

Eigen::MatrixXd summation_matrix(const HierarchyDag& dag) {
  validate(dag);
  const auto leaf_ids = leaves(dag);
  Eigen::MatrixXd s = Eigen::MatrixXd::Zero(dag.n_nodes, leaf_ids.size());
  for (std::size_t k = 0; k < leaf_ids.size(); ++k) s(leaf_ids[k], k) = 1.0;
  const auto by_parent = constraint_by_parent(dag);
  for (NodeId node : bottom_up_order(dag)) {
    const std::size_t c = by_parent[node];
    if (c == static_cast<std::size_t>(-1)) continue;
    for (NodeId child : dag.constraints[c].children) s.row(node) += s.row(child);
  }
  return s;
}

Eigen::MatrixXd constraint_matrix(const HierarchyDag& dag) {
  Eigen::MatrixXd out = Eigen::MatrixXd::Zero(dag.constraints.size(), dag.n_nodes);
  for (std::size_t c = 0; c < dag.constraints.size(); ++c) {
    const auto& con = dag.constraints[c];
    out(c, con.parent) = 1.0;
    for (NodeId child : con.children) out(c, child) = -1.0;
  }
  return out;
}

HierarchyDag figure1_hierarchy() {
  return HierarchyDag{7, {{0, {1, 2}}, {1, {3, 4}}, {2, {5, 6}}}};
}

void to_json(nlohmann::json& j, const HierarchyDag& dag) {
  nlohmann::json constraints = nlohmann::json::array();
  for (const auto& c : dag.constraints) {
    constraints.push_back({{"parent", c.parent}, {"children", c.children}});
  }
  j = nlohmann::json{{"n_nodes", dag.n_nodes}, {"constraints", std::move(constraints)}};
}

void from_json(const nlohmann::json& j, HierarchyDag& dag) {
  dag.n_nodes = j.at("n_nodes").get<std::size_t>();
  dag.constraints.clear();
  for (const auto& c : j.at("constraints")) {
    dag.constraints.push_back(
        {c.at("parent").get<NodeId>(), c.at("children").get<std::vector<NodeId>>()});
  }
}

}  // namespace hfr
