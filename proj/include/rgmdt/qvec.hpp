#pragma once

#include "rgmdt/env.hpp"
#include "rgmdt/oracle.hpp"
#include "rgmdt/types.hpp"

#include <optional>
#include <string>
#include <vector>

// Action-value vectors of one agent's local observations.
//
// n = 1: the vector of o is Q*(o, .) over the agent's four moves.
// n > 1: one component per (o_{-j}, a_F) where F are the other agents without a fixed local
// policy; component = Q*(o_j, o_{-j}, a) d(o_{-j} | o_j) with a_j the agent's current choice
// and a_i = pi_i(o_i) for every other agent that has one. Components are ordered with o_{-j}
// outermost (mixed radix over the other agents, lowest agent least significant) and a_F
// innermost (same radix convention over F).
namespace rgmdt::qvec {

enum class ActionSource
{
  OracleArgmax,
  TreePolicy
};

// Local policies known at build time. local_policy[i][cell] is agent i's move; an empty
// entry means agent i has no tree yet (its actions stay free, or for the agent itself, the
// oracle's joint argmax supplies a_j).
struct Conditioning
{
  std::vector<std::optional<std::vector<int>>> local_policy;
  std::string behaviour; // which joint policy produced the visitation, for the audit log

  static Conditioning oracle(int n_agents);
};

struct VectorSet
{
  int agent = 0;
  ActionSource source = ActionSource::OracleArgmax;
  std::string conditioning;
  std::vector<int> obs;  // local cells with positive visitation, ascending
  Matrix vectors;        // one row per entry of obs
  Vector norms;
  Vector weights;        // d(o_j) renormalized over obs
  Matrix action_values;  // rows follow obs; column a sums the components with a_j := a
  int free_agents = 0;   // other agents whose actions are enumerated

  Index size() const { return static_cast<Index>(obs.size()); }
  Index dim() const { return vectors.cols(); }
  // Row of cell c, or -1 when c has no vector.
  Index row_of(int cell) const;
};

VectorSet build_vectors(oracle::OracleCritic const& critic, oracle::Visitation const& visit, int agent,
                        Conditioning const& cond);

struct SampledOptions
{
  int k1 = 4096; // transitions drawn from rollouts of the behaviour policy
  int k2 = 32;   // most frequent opponent observations kept per o_j
  std::uint64_t seed = 0;
};

// Rollout-sampled approximation: visitation and conditionals come from K1 sampled
// transitions and only the K2 most frequent o_{-j} per o_j carry weight.
VectorSet build_vectors_sampled(oracle::OracleCritic const& critic, env::Model const& model,
                                oracle::PolicyTable const& behaviour, int agent, Conditioning const& cond,
                                SampledOptions const& opt);

// max_o |Qbar(o)|_2; throws on an empty set.
Real q_max(VectorSet const& vs);

std::string to_csv(VectorSet const& vs, env::FeatureEncoding const& enc);

} // namespace rgmdt::qvec
