#pragma once

// Aggregation structure of a hierarchical panel: every constraint states that
// a parent node equals the sum of its children. Constraints may share
// children, so the structure is a DAG rather than a tree.

#include <cstddef>
#include <map>
#include <vector>

#include <Eigen/Dense>
#include <nlohmann/json_fwd.hpp>

namespace hfr {

using NodeId = std::size_t;

struct AggregationConstraint {
  NodeId parent = 0;
  std::vector<NodeId> children;

  bool operator==(const AggregationConstraint&) const = default;
};

struct HierarchyDag {
  std::size_t n_nodes = 0;
  std::vector<AggregationConstraint> constraints;

  bool operator==(const HierarchyDag&) const = default;
};

/// Throws hfr::Error (SelfLoop, ChildOutOfRange, InvalidConstraint,
/// DuplicateParentConstraint, CycleDetected) if any invariant is violated.
void validate(const HierarchyDag& dag);

/// Nodes that are the parent of no constraint, ascending.
std::vector<NodeId> leaves(const HierarchyDag& dag);

/// Order in which every child precedes each of its parents.
std::vector<NodeId> bottom_up_order(const HierarchyDag& dag);

/// Constraint indices each node takes part in (as parent or child).
std::vector<std::vector<std::size_t>> constraints_touching(const HierarchyDag& dag);

std::map<NodeId, double> aggregate_from_leaves(const HierarchyDag& dag,
                                               const std::map<NodeId, double>& leaf_values);

/// Columnwise aggregation. `leaf_panel` rows follow leaves(dag); the result
/// has one row per node. Parents are summed from their children directly so
/// that residuals of the output are exactly zero.
Eigen::MatrixXd aggregate_panel(const HierarchyDag& dag, const Eigen::MatrixXd& leaf_panel);

/// Residual parent - sum(children) for every constraint over columns
/// [t_begin, t_end) of an n x T forecast matrix.
Eigen::MatrixXd reconciliation_residuals(const HierarchyDag& dag, const Eigen::MatrixXd& forecasts,
                                         Eigen::Index t_begin, Eigen::Index t_end);

/// n x n_leaves map from leaf values to node values. Entries count the
/// distinct constraint paths from a node down to a leaf.
Eigen::MatrixXd summation_matrix(const HierarchyDag& dag);

/// n_constraints x n incidence: +1 at the parent, -1 at each child.
Eigen::MatrixXd constraint_matrix(const HierarchyDag& dag);

/// Two-level binary tree with seven nodes: 0 = 1 + 2, 1 = 3 + 4, 2 = 5 + 6.
HierarchyDag figure1_hierarchy();

void to_json(nlohmann::json& j, const HierarchyDag& dag);
void from_json(const nlohmann::json& j, HierarchyDag& dag);

}  // namespace hfr
