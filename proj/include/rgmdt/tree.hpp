#pragma once

#include "rgmdt/cluster.hpp"
#include "rgmdt/env.hpp"
#include "rgmdt/qvec.hpp"
#include "rgmdt/svm.hpp"
#include "rgmdt/types.hpp"

#include <json.hpp>

#include <cstdint>
#include <filesystem>
#include <map>
#include <string>
#include <utility>
#include <vector>

namespace rgmdt::tree {

struct Node
{
  bool leaf = true;
  Hyperplane<Real> split; // meaningful for internal nodes only
  int left = -1;
  int right = -1;
  int parent = -1;
  int depth = 0;
  int label = 0;  // leaf cluster label
  int action = 0; // leaf move
  Real purity = 1.0;
  Index support = 0;
  std::vector<int> members; // training cells routed here when the node was last updated
};

struct DecisionTree
{
  int agent = 0;
  int max_leaves = 0;
  std::string kind = "oblique"; // "axis" for the CART baseline
  env::FeatureEncoding encoding;
  std::vector<Node> nodes; // nodes[0] is the root

  int leaf_count() const;
  int depth() const;
  std::vector<int> leaves() const; // node ids in ascending order

  // Node id of the leaf reached by features x (strict w.x - p < 0 goes left).
  int route(Eigen::Ref<Vector const> const& x) const;
  int route_cell(int cell) const { return route(encoding.encode_local(cell)); }
  int infer(Eigen::Ref<Vector const> const& x) const { return nodes[route(x)].action; }
  int infer(env::Cell c) const { return infer(encoding.encode(c)); }
  int infer_cell(int cell) const { return nodes[route_cell(cell)].action; }

  // Move chosen in every cell of the grid.
  std::vector<int> local_policy() const;
};

DecisionTree single_leaf(int agent, int max_leaves, env::FeatureEncoding const& enc, int action = 0);

// Graphviz text. Internal nodes read "w.x - p >= 0?", the yes-edge leads to the right child.
std::string export_dot(DecisionTree const& tree);

nlohmann::json to_json(DecisionTree const& tree);
DecisionTree tree_from_json(nlohmann::json const& j);
void save_tree(DecisionTree const& tree, std::filesystem::path const& path);
DecisionTree load_tree(std::filesystem::path const& path);

// Two-way split of labels: the farthest pair of centers (cosine distance) seeds the groups,
// every other label joins the nearer seed (ties go left).
std::pair<std::vector<int>, std::vector<int>> group_classes(std::vector<int> const& labels, Matrix const& centers);

enum class GrowthMode
{
  PerNode,
  Global
};

struct GrowConfig
{
  int leaves = 4;
  GrowthMode mode = GrowthMode::PerNode;
  cluster::ClusterConfig cluster;
  SvmConfig svm;
  Real purity_stop = 0.0; // > 0: leave nodes whose label purity reaches this unsplit
  std::uint64_t seed = 0;
};

// Number of growth stages for a leaf budget: ceil(log2 L) + 1.
int stage_count(int leaves);

struct SplitRecord
{
  int stage = 0;
  int node = -1;
  Real priority = 0.0;
  Real node_epsilon = 0.0;
  Real cluster_epsilon = 0.0;
  int repairs = 0;
  Real svm_c = 0.0; // C of the last SVM fit
  bool svm_balanced = false;
  bool accepted = false;
  std::string reason;
};

// Stage-wise tree growth for one agent. Each stage re-clusters every eligible leaf with the
// vectors handed in for that stage and splits it with an SVM hyperplane.
class Grower
{
public:
  Grower(int agent, env::FeatureEncoding enc, GrowConfig cfg);

  // One growth stage; returns the number of splits made.
  int stage(qvec::VectorSet const& vs, int k);
  // Leaf action = argmax_a sum_{o in leaf} w(o) action_values(o, a); empty leaves keep theirs.
  void set_leaf_actions(qvec::VectorSet const& vs);

  DecisionTree const& tree() const { return tree_; }
  std::vector<SplitRecord> const& log() const { return log_; }
  bool saturated() const { return saturated_; }

private:
  int agent_;
  GrowConfig cfg_;
  DecisionTree tree_;
  std::vector<std::uint64_t> path_; // heap-style path code per node
  std::vector<SplitRecord> log_;
  std::map<int, int> last_label_; // cell -> most recent clustering label
  bool saturated_ = false;
};

DecisionTree grow(qvec::VectorSet const& vs, env::FeatureEncoding const& enc, GrowConfig const& cfg);

// Leaf partition of the vector set's observations (labels are leaf ordinals).
std::vector<int> leaf_labels(DecisionTree const& tree, qvec::VectorSet const& vs);
Real leaf_epsilon(DecisionTree const& tree, qvec::VectorSet const& vs);

// Free-function form of Grower::set_leaf_actions.
void set_leaf_actions(DecisionTree& tree, qvec::VectorSet const& vs);

} // namespace rgmdt::tree
