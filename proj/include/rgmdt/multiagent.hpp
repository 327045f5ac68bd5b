#pragma once

#include "rgmdt/env.hpp"
#include "rgmdt/oracle.hpp"
#include "rgmdt/qvec.hpp"
#include "rgmdt/tree.hpp"

#include <json.hpp>

#include <functional>
#include <string>
#include <vector>

namespace rgmdt::multiagent {

struct JointConfig
{
  tree::GrowConfig grow;   // grow.seed is the run seed; agents draw derived seeds from it
  bool conditioned = true; // false: every stage uses the iteration-0 oracle-conditioned vectors
  bool refine = true;      // final leaf-action fixed point under the trees' own visitation
  int refine_rounds = 50;
  bool shuffle_order = false; // agent order per iteration drawn from order_seed instead of ascending
  std::uint64_t order_seed = 0;
  int jobs = 1;
};

// One vector rebuild: which iteration, which agent, what it was conditioned on.
struct ConditioningRecord
{
  int iteration = 0;
  int agent = 0;
  std::string description;
  std::vector<int> tree_iteration; // per agent: iteration of the tree used, -1 for none
  qvec::VectorSet vectors;
};

struct JointResult
{
  std::vector<tree::DecisionTree> trees;
  std::vector<std::vector<tree::DecisionTree>> snapshots; // [iteration][agent], before refinement
  std::vector<ConditioningRecord> log;
  std::vector<bool> frozen;
  std::vector<qvec::VectorSet> final_vectors; // under the returned trees and their visitation
  int refine_rounds = 0;
  bool refine_converged = true;
  std::vector<std::vector<tree::SplitRecord>> split_log; // per agent
};

// Seed handed to agent j's tree growth.
std::uint64_t agent_seed(std::uint64_t seed, int agent);

oracle::PolicyTable joint_policy(env::JointSpace const& space, std::vector<tree::DecisionTree> const& trees);

// Agents with a tree act by it, the others take their component of the oracle's joint argmax.
oracle::PolicyTable mixed_policy(oracle::OracleCritic const& critic, env::JointSpace const& space,
                                 std::vector<tree::DecisionTree const*> const& trees);

qvec::Conditioning tree_conditioning(std::vector<tree::DecisionTree const*> const& trees, std::string behaviour);

// Called after every iteration with the snapshot of all trees.
using CheckpointFn = std::function<void(int iteration, JointResult const& partial)>;

JointResult grow_joint(env::Model const& model, oracle::OracleCritic const& critic, JointConfig const& cfg,
                       CheckpointFn const& checkpoint = {});

// Single-agent path: one tree grown on the oracle's visitation, then the leaf-action fixed point.
tree::DecisionTree extract_single(env::Model const& model, oracle::OracleCritic const& critic, JointConfig const& cfg);

// Repeats leaf-action updates until no action changes. Returns rounds used; converged flag out.
int refine_leaf_actions(env::Model const& model, oracle::OracleCritic const& critic,
                        std::vector<tree::DecisionTree>& trees, int max_rounds, bool* converged = nullptr);

// Mean episode reward of the joint tree policy; episodes == 0 enumerates the start distribution.
oracle::EpisodeStats freeze_and_evaluate(std::vector<tree::DecisionTree> const& trees, env::Model const& model,
                                         int episodes, std::uint64_t seed, int jobs = 1);

nlohmann::json checkpoint_json(int iteration, JointResult const& partial);

} // namespace rgmdt::multiagent
