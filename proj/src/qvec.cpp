#include "rgmdt/qvec.hpp"

#include "rgmdt/random.hpp"

#include <algorithm>
#include <sstream>

namespace rgmdt::qvec {

Conditioning Conditioning::oracle(int n_agents)
{
  Conditioning c;
  c.local_policy.resize(n_agents);
  c.behaviour = "oracle";
  return c;
}

Index VectorSet::row_of(int cell) const
{
  auto it = std::lower_bound(obs.begin(), obs.end(), cell);
  return it != obs.end() && *it == cell ? static_cast<Index>(it - obs.begin()) : -1;
}

namespace {

std::string describe(Conditioning const& cond, int agent)
{
  std::ostringstream os;
  os << "behaviour=" << cond.behaviour << ";";
  for (std::size_t i = 0; i < cond.local_policy.size(); ++i) {
    os << " agent" << i << "=";
    if (static_cast<int>(i) == agent)
      os << (cond.local_policy[i] ? "own-tree" : "oracle-argmax");
    else
      os << (cond.local_policy[i] ? "tree" : "free");
  }
  return os.str();
}

// Shared expansion given d(o_j) and d(o_{-j}|o_j) as callables.
template <typename Marg, typename Cond>
VectorSet expand(oracle::OracleCritic const& critic, env::JointSpace const& space, int agent,
                 Conditioning const& cond, Marg marg, Cond conditional)
{
  int const n = space.n_agents();
  if (agent < 0 || agent >= n)
    throw InvalidArgument("build_vectors: agent index out of range");
  if (critic.q.rows() != space.n_obs() || critic.q.cols() != space.n_actions())
    throw InvalidArgument("build_vectors: critic dimensions do not match the maze");
  if (static_cast<int>(cond.local_policy.size()) != n)
    throw InvalidArgument("build_vectors: conditioning must list every agent");
  for (auto const& p : cond.local_policy)
    if (p && static_cast<int>(p->size()) != space.cells())
      throw InvalidArgument("build_vectors: a conditioning policy does not cover every cell");

  VectorSet vs;
  vs.agent = agent;
  vs.source = cond.local_policy[agent] ? ActionSource::TreePolicy : ActionSource::OracleArgmax;
  vs.conditioning = describe(cond, agent);

  std::vector<int> free;
  for (int i = 0; i < n; ++i)
    if (i != agent && !cond.local_policy[i])
      free.push_back(i);
  vs.free_agents = static_cast<int>(free.size());
  Index n_free_actions = 1;
  for (std::size_t f = 0; f < free.size(); ++f)
    n_free_actions *= env::kNumMoves;
  Index const n_others = space.n_obs() / space.cells();
  Index const dim = n == 1 ? env::kNumMoves : n_others * n_free_actions;

  Real total = 0.0;
  for (int c = 0; c < space.cells(); ++c)
    if (marg(c) > 0.0) {
      vs.obs.push_back(c);
      total += marg(c);
    }
  Index const rows = vs.size();
  vs.vectors = Matrix::Zero(rows, dim);
  vs.action_values = Matrix::Zero(rows, env::kNumMoves);
  vs.weights = Vector::Zero(rows);

  for (Index r = 0; r < rows; ++r) {
    int const oj = vs.obs[r];
    vs.weights[r] = marg(oj) / total;
    if (n == 1) {
      vs.vectors.row(r) = critic.q.row(oj);
      vs.action_values.row(r) = critic.q.row(oj);
      continue;
    }
    for (Index other = 0; other < n_others; ++other) {
      // Insert o_j as agent `agent`'s digit into the others' mixed-radix index.
      std::vector<int> local(n);
      Index rest = other;
      for (int i = 0; i < n; ++i) {
        if (i == agent) {
          local[i] = oj;
          continue;
        }
        local[i] = static_cast<int>(rest % space.cells());
        rest /= space.cells();
      }
      Index const s = space.obs_index(local);
      Real const w = conditional(s);
      std::vector<int> act(n, 0);
      for (int i = 0; i < n; ++i)
        if (i != agent && cond.local_policy[i])
          act[i] = (*cond.local_policy[i])[local[i]];
      int const aj = cond.local_policy[agent] ? (*cond.local_policy[agent])[oj]
                                              : space.local_action(critic.greedy(s), agent);
      for (Index fa = 0; fa < n_free_actions; ++fa) {
        Index code = fa;
        for (int f : free) {
          act[f] = static_cast<int>(code % env::kNumMoves);
          code /= env::kNumMoves;
        }
        act[agent] = aj;
        Index const col = other * n_free_actions + fa;
        vs.vectors(r, col) = critic.q(s, space.action_index(act)) * w;
        for (int a = 0; a < env::kNumMoves; ++a) {
          act[agent] = a;
          vs.action_values(r, a) += critic.q(s, space.action_index(act)) * w;
        }
      }
    }
  }
  vs.norms = vs.vectors.rowwise().norm();
  return vs;
}

} // namespace

VectorSet build_vectors(oracle::OracleCritic const& critic, oracle::Visitation const& visit, int agent,
                        Conditioning const& cond)
{
  env::JointSpace const& space = visit.space;
  if (static_cast<int>(visit.marginal.size()) != space.n_agents())
    throw InvalidArgument("build_vectors: visitation has no marginals");
  return expand(
      critic, space, agent, cond, [&](int c) { return visit.marginal[agent][c]; },
      [&](Index s) { return visit.conditional(agent, s); });
}

VectorSet build_vectors_sampled(oracle::OracleCritic const& critic, env::Model const& model,
                                oracle::PolicyTable const& behaviour, int agent, Conditioning const& cond,
                                SampledOptions const& opt)
{
  if (opt.k1 <= 0 || opt.k2 <= 0)
    throw InvalidArgument("sampled builder: K1 and K2 must be positive");
  env::JointSpace const& space = model.space;
  auto const support = model.spec.start_support();
  Real const g = model.spec.gamma;
  std::vector<Real> joint(static_cast<std::size_t>(space.n_obs()), 0.0);
  Rng rng(opt.seed);
  int drawn = 0;
  while (drawn < opt.k1) {
    std::vector<int> local(space.n_agents());
    for (auto& l : local)
      l = model.spec.cell_index(support[rng.below(support.size())]);
    Index s = space.obs_index(local);
    Real w = 1.0;
    for (int t = 0; t < model.spec.horizon && drawn < opt.k1; ++t, ++drawn) {
      joint[s] += w;
      auto const k = static_cast<std::size_t>(model.at(s, behaviour[s]));
      if (model.done[k])
        break;
      s = model.next[k];
      w *= g;
    }
  }
  // Per o_j keep the K2 heaviest o_{-j}.
  std::vector<Real> marg(space.cells(), 0.0);
  std::vector<Real> kept(joint.size(), 0.0);
  std::vector<std::vector<Index>> by_cell(space.cells());
  for (Index s = 0; s < space.n_obs(); ++s)
    if (joint[s] > 0.0)
      by_cell[space.local_obs(s, agent)].push_back(s);
  for (int c = 0; c < space.cells(); ++c) {
    auto& list = by_cell[c];
    std::stable_sort(list.begin(), list.end(), [&](Index a, Index b) { return joint[a] > joint[b]; });
    if (static_cast<int>(list.size()) > opt.k2)
      list.resize(opt.k2);
    for (Index s : list) {
      kept[s] = joint[s];
      marg[c] += joint[s];
    }
  }
  return expand(
      critic, space, agent, cond, [&](int c) { return marg[c]; },
      [&](Index s) {
        Real const m = marg[space.local_obs(s, agent)];
        return m > 0.0 ? kept[s] / m : 0.0;
      });
}

Real q_max(VectorSet const& vs)
{
  if (vs.size() == 0)
    throw InvalidArgument("q_max of an empty vector set");
  return vs.vectors.rowwise().norm().maxCoeff();
}

std::string to_csv(VectorSet const& vs, env::FeatureEncoding const& enc)
{
  std::ostringstream os;
  os.precision(17);
  os << "cell";
  for (int f = 0; f < enc.dim(); ++f)
    os << ",feature_" << f;
  os << ",weight";
  for (Index k = 0; k < vs.dim(); ++k)
    os << ",component_" << k;
  os << "\n";
  for (Index r = 0; r < vs.size(); ++r) {
    os << vs.obs[r];
    Vector const x = enc.encode_local(vs.obs[r]);
    for (Index f = 0; f < x.size(); ++f)
      os << "," << x[f];
    os << "," << vs.weights[r];
    for (Index k = 0; k < vs.dim(); ++k)
      os << "," << vs.vectors(r, k);
    os << "\n";
  }
  return os.str();
}

} // namespace rgmdt::qvec
