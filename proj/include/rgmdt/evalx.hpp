#pragma once

#include "rgmdt/env.hpp"
#include "rgmdt/multiagent.hpp"
#include "rgmdt/oracle.hpp"
#include "rgmdt/tree.hpp"

#include <json.hpp>

#include <cstdint>
#include <map>
#include <string>
#include <vector>

namespace rgmdt::evalx {

struct ReturnGapReport
{
  Real j_oracle = 0.0; // (1 - gamma) E_mu V, exact
  Real j_tree = 0.0;
  Real gap = 0.0;
  Real epsilon = 0.0; // mean over agents of the leaf-partition epsilon under the trees' visitation
  std::vector<Real> epsilon_per_agent;
  std::vector<Real> stage_epsilon; // growth-time leaf epsilon per iteration, when supplied
  Real q_max = 0.0;                // max over agents
  std::vector<Real> q_max_per_agent;
  int leaves = 0;
  int n = 1;
  Real bound_explicit = 0.0;      // n q_max sqrt(2 eps)
  Real bound_theorem_form = 0.0;  // n q_max sqrt(eps / (log2(L + 1) - 1))
  Real iterations_theorem = 0.0;  // log2(L + 1) - 1
  int iterations_grown = 0;       // ceil(log2 L) + 1
  Real episodic_oracle = 0.0;
  Real episodic_tree = 0.0;
  std::string metric_mode = "discounted";
  bool certified = false; // exact evaluation ran
  bool holds = false;     // gap <= bound_explicit + slack
  Real slack = 1e-9;
  std::map<std::string, std::string> hashes;
};

ReturnGapReport certify_bound(env::Model const& model, oracle::OracleCritic const& critic,
                              std::vector<tree::DecisionTree> const& trees, std::vector<Real> const& stage_epsilon = {});

// Advisory report for mazes beyond the enumeration cap: nothing is asserted.
ReturnGapReport advisory_report(env::MazeSpec const& spec, int leaves, std::string const& reason);

nlohmann::json to_json(ReturnGapReport const& r);

// Axis-aligned Gini tree grown best-first to at most `leaves` leaves. Rows of X are features.
tree::DecisionTree cart_fit(Matrix const& X, std::vector<int> const& y, int leaves, env::FeatureEncoding const& enc,
                            int agent = 0);

// Imitation dataset: (agent features, oracle move) pairs from seeded oracle rollouts.
struct Dataset
{
  Matrix X;
  std::vector<int> y;
};
Dataset oracle_dataset(env::Model const& model, oracle::OracleCritic const& critic, int agent, int episodes,
                       std::uint64_t seed);

std::vector<tree::DecisionTree> cart_baseline(env::Model const& model, oracle::OracleCritic const& critic,
                                              int leaves, std::uint64_t seed, int episodes = 200);

struct EvalOptions
{
  int episodes = 0; // 0: exact expectation over the start distribution
  std::uint64_t eval_seed = 12345;
  int jobs = 1;
};

struct SweepRow
{
  std::string method;
  int leaves = 0;
  Real mean = 0.0;
  Real stddev = 0.0;
  std::vector<Real> per_seed;
  std::vector<Real> epsilon_per_seed; // nested-refinement epsilon under the oracle visitation
  Real epsilon = 0.0;
  Real bound_explicit = 0.0;
  Real bound_theorem_form = 0.0;
};

struct SweepResult
{
  std::vector<SweepRow> rows; // sorted by (method, L)
  std::vector<std::uint64_t> seeds;
  Real oracle_mean = 0.0;
};

SweepResult sweep_leaves(env::Model const& model, oracle::OracleCritic const& critic, std::vector<int> leaf_set,
                         std::vector<std::uint64_t> const& seeds, std::vector<std::string> const& methods,
                         multiagent::JointConfig const& base, EvalOptions const& opt = {});

std::string to_csv(SweepResult const& r);

struct AblationRow
{
  std::string metric;
  Real noise = 0.0;
  Real mean = 0.0;
  Real stddev = 0.0;
  std::vector<Real> per_seed;
};

std::vector<AblationRow> ablate_metric(env::Model const& model, oracle::OracleCritic const& critic, int leaves,
                                       std::vector<Metric> const& metrics, std::vector<std::uint64_t> const& seeds,
                                       std::vector<Real> const& noise_levels, multiagent::JointConfig const& base,
                                       EvalOptions const& opt = {});

std::string to_csv(std::vector<AblationRow> const& rows);

// Trees for one method and seed: "rgmdt", "rgmdt-unconditioned" or "cart".
std::vector<tree::DecisionTree> build_trees(std::string const& method, env::Model const& model,
                                            oracle::OracleCritic const& critic, int leaves, std::uint64_t seed,
                                            multiagent::JointConfig const& base);

struct WelchResult
{
  Real t = 0.0;
  Real df = 0.0;
  Real p_value = 1.0; // H1: mean(a) > mean(b)
  bool significant = false;
};

WelchResult welch_greater(std::vector<Real> const& a, std::vector<Real> const& b, Real alpha = 0.05);

Real spearman(std::vector<Real> const& x, std::vector<Real> const& y);

Real mean_of(std::vector<Real> const& v);
Real stddev_of(std::vector<Real> const& v); // sample standard deviation

} // namespace rgmdt::evalx
