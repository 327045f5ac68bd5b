#pragma once

#include "rgmdt/env.hpp"
#include "rgmdt/types.hpp"

#include <cstdint>
#include <filesystem>
#include <functional>
#include <optional>
#include <string>
#include <vector>

namespace rgmdt::oracle {

enum class Provenance : std::uint32_t
{
  ExactDp = 0,
  QLearning = 1
};

struct QLearningParams
{
  int episodes = 0;
  Real alpha = 0.1;
  Real explore = 0.1;
  std::uint64_t seed = 0;
};

// Joint action-value table Q(o, a); rows are joint observations, columns joint actions.
struct OracleCritic
{
  env::MazeSpec spec;
  Matrix q;
  Provenance provenance = Provenance::ExactDp;
  QLearningParams qlearn;
  bool finite_horizon = false; // stage-0 table of the T-stage problem instead of the fixed point
  Real residual = 0.0;         // Bellman optimality residual (sup norm) for ExactDp fixed points
  int iterations = 0;

  Real gamma() const { return spec.gamma; }
  Index greedy(Index obs) const; // lowest action index on ties
  Real value(Index obs) const { return q.row(obs).maxCoeff(); }
};

struct SolveOptions
{
  bool finite_horizon = false;
  Real tol = 1e-9;
  int max_iters = 1000000;
};

OracleCritic solve_exact(env::MazeSpec const& spec, SolveOptions const& opt = {});
OracleCritic solve_exact(env::Model const& model, SolveOptions const& opt = {});

// sup_{o,a} |Q(o,a) - r - gamma (1 - done) max_a' Q(o',a')|
Real bellman_residual(env::Model const& model, Matrix const& q);

// Q with the agents that have an entry in `fixed` playing that local policy (cell -> move) and the
// rest choosing jointly. All entries empty gives the critic back. Learned critics are returned
// unchanged; the revision needs the exact model.
OracleCritic revise(env::Model const& model, OracleCritic const& critic,
                    std::vector<std::optional<std::vector<int>>> const& fixed, SolveOptions const& opt = {});

OracleCritic learn_q(env::MazeSpec const& spec, int episodes, Real alpha, Real explore, std::uint64_t seed);

// Deterministic joint policy as a table: joint observation index -> joint action index.
using PolicyTable = std::vector<Index>;

PolicyTable greedy_policy(OracleCritic const& critic);

// Table from per-agent local policies (agent, local cell index) -> move.
PolicyTable compose_policy(env::JointSpace const& space, std::function<int(int agent, int cell)> const& local);

enum class VisitMode
{
  Exact,
  Empirical
};

struct VisitOptions
{
  VisitMode mode = VisitMode::Exact;
  int horizon = 0; // > 0 truncates the discounted sum after this many steps
  int rollouts = 0;
  std::uint64_t seed = 0;
  int jobs = 1;
  Real tol = 1e-9;
};

// Normalized gamma-discounted visitation over joint observations plus per-agent marginals.
// Termination removes mass, so the raw occupancy sums to less than one; `mass` keeps that total.
struct Visitation
{
  Vector d_obs;
  std::vector<Vector> marginal; // per agent, over local cells
  Real mass = 1.0;
  env::JointSpace space;

  // d(o_{-j} | o_j) for the joint observation `joint`; uniform when d(o_j) = 0.
  Real conditional(int agent, Index joint) const;
  // d(l) for labels of agent j's local observations.
  Vector label_mass(int agent, std::vector<int> const& label_of_cell, int n_labels) const;
};

Visitation visitation(env::Model const& model, PolicyTable const& policy, VisitOptions const& opt = {});

// Exact policy evaluation V^pi (discounted, with termination), solved to tol in sup norm.
Vector evaluate_policy(env::Model const& model, PolicyTable const& policy, Real tol = 1e-13);

// (1 - gamma) E_mu V^pi.
Real discounted_return(env::Model const& model, PolicyTable const& policy);

// Mean undiscounted episode reward over spec.horizon steps. episodes == 0 enumerates the start
// distribution exactly; otherwise averages seeded rollouts.
struct EpisodeStats
{
  Real mean = 0.0;
  Real stddev = 0.0;
  int episodes = 0; // 0 for exact enumeration
};

EpisodeStats episodic_return(env::Model const& model, PolicyTable const& policy, int episodes = 0,
                             std::uint64_t seed = 0, int jobs = 1);

void save_critic(OracleCritic const& critic, std::filesystem::path const& path);
OracleCritic load_critic(std::filesystem::path const& path);
std::string critic_bytes(OracleCritic const& critic);

} // namespace rgmdt::oracle
