#include "rgmdt/multiagent.hpp"

#include "rgmdt/random.hpp"

#include <algorithm>
#include <numeric>
#include <sstream>

namespace rgmdt::multiagent {

std::uint64_t agent_seed(std::uint64_t seed, int agent) { return derive_seed(seed, 0x7472656500ull + agent); }

oracle::PolicyTable joint_policy(env::JointSpace const& space, std::vector<tree::DecisionTree> const& trees)
{
  if (static_cast<int>(trees.size()) != space.n_agents())
    throw InvalidArgument("joint policy needs one tree per agent");
  std::vector<std::vector<int>> local;
  for (auto const& t : trees) {
    if (t.encoding.width * t.encoding.height != space.cells())
      throw InvalidArgument("tree feature encoding does not match the maze size");
    local.push_back(t.local_policy());
  }
  return oracle::compose_policy(space, [&](int j, int c) { return local[j][c]; });
}

oracle::PolicyTable mixed_policy(oracle::OracleCritic const& critic, env::JointSpace const& space,
                                 std::vector<tree::DecisionTree const*> const& trees)
{
  std::vector<std::vector<int>> local(trees.size());
  for (std::size_t j = 0; j < trees.size(); ++j)
    if (trees[j])
      local[j] = trees[j]->local_policy();
  oracle::PolicyTable p(static_cast<std::size_t>(space.n_obs()));
  std::vector<int> act(space.n_agents());
  for (Index s = 0; s < space.n_obs(); ++s) {
    Index const star = critic.greedy(s);
    for (int j = 0; j < space.n_agents(); ++j)
      act[j] = trees[j] ? local[j][space.local_obs(s, j)] : space.local_action(star, j);
    p[s] = space.action_index(act);
  }
  return p;
}

qvec::Conditioning tree_conditioning(std::vector<tree::DecisionTree const*> const& trees, std::string behaviour)
{
  qvec::Conditioning c;
  for (auto const* t : trees)
    c.local_policy.push_back(t ? std::optional<std::vector<int>>(t->local_policy()) : std::nullopt);
  c.behaviour = std::move(behaviour);
  return c;
}

namespace {

std::string behaviour_name(std::vector<int> const& tree_iter)
{
  std::ostringstream os;
  bool any = false;
  for (std::size_t j = 0; j < tree_iter.size(); ++j) {
    os << (j ? "," : "") << "agent" << j << ":";
    if (tree_iter[j] < 0)
      os << "oracle";
    else {
      os << "tree@" << tree_iter[j];
      any = true;
    }
  }
  return any ? os.str() : "oracle";
}

// Q for agent j with every other agent that already has a tree held to it.
oracle::OracleCritic critic_for(env::Model const& model, oracle::OracleCritic const& critic,
                                std::vector<tree::DecisionTree const*> const& trees, int j)
{
  std::vector<std::optional<std::vector<int>>> fixed(trees.size());
  for (std::size_t i = 0; i < trees.size(); ++i)
    if (trees[i] && static_cast<int>(i) != j)
      fixed[i] = trees[i]->local_policy();
  return oracle::revise(model, critic, fixed);
}

tree::GrowConfig agent_config(JointConfig const& cfg, int agent)
{
  tree::GrowConfig g = cfg.grow;
  g.seed = agent_seed(cfg.grow.seed, agent);
  return g;
}

} // namespace

int refine_leaf_actions(env::Model const& model, oracle::OracleCritic const& critic,
                        std::vector<tree::DecisionTree>& trees, int max_rounds, bool* converged)
{
  int const n = model.spec.n_agents;
  // Without a fixed point the updates cycle; the best assignment seen is kept instead.
  std::vector<tree::DecisionTree> best = trees;
  Real best_j = oracle::discounted_return(model, joint_policy(model.space, trees));
  int rounds = 0;
  bool done = false;
  for (; rounds < max_rounds && !done; ++rounds) {
    done = true;
    for (int j = 0; j < n; ++j) {
      oracle::Visitation const visit = oracle::visitation(model, joint_policy(model.space, trees));
      std::vector<tree::DecisionTree const*> ptrs;
      for (auto const& t : trees)
        ptrs.push_back(&t);
      qvec::VectorSet const vs =
          qvec::build_vectors(critic_for(model, critic, ptrs, j), visit, j, tree_conditioning(ptrs, "trees"));
      std::vector<int> before;
      for (auto const& nd : trees[j].nodes)
        before.push_back(nd.action);
      tree::set_leaf_actions(trees[j], vs);
      for (std::size_t i = 0; i < before.size(); ++i)
        if (before[i] != trees[j].nodes[i].action)
          done = false;
    }
    if (!done) {
      Real const jv = oracle::discounted_return(model, joint_policy(model.space, trees));
      if (jv > best_j) {
        best_j = jv;
        best = trees;
      }
    }
  }
  if (!done)
    trees = best;
  if (converged)
    *converged = done;
  return rounds;
}

JointResult grow_joint(env::Model const& model, oracle::OracleCritic const& critic, JointConfig const& cfg,
                       CheckpointFn const& checkpoint)
{
  int const n = model.spec.n_agents;
  if (n < 1)
    throw InvalidArgument("grow_joint: at least one agent required");
  if (critic.q.rows() != model.space.n_obs() || critic.q.cols() != model.space.n_actions())
    throw InvalidArgument("grow_joint: critic does not match the maze");
  int const stages = tree::stage_count(cfg.grow.leaves);
  env::FeatureEncoding const enc = env::FeatureEncoding::for_maze(model.spec);

  oracle::PolicyTable const star = oracle::greedy_policy(critic);
  oracle::Visitation const visit0 = oracle::visitation(model, star);
  std::vector<qvec::VectorSet> base(static_cast<std::size_t>(n));
  for (int j = 0; j < n; ++j)
    base[j] = qvec::build_vectors(critic, visit0, j, qvec::Conditioning::oracle(n));

  std::vector<tree::Grower> growers;
  for (int j = 0; j < n; ++j)
    growers.emplace_back(j, enc, agent_config(cfg, j));

  JointResult res;
  res.frozen.assign(n, false);
  std::vector<int> tree_iter(n, -1);
  std::vector<tree::DecisionTree> current(n);
  Rng order_rng(cfg.order_seed);

  for (int k = 0; k < stages; ++k) {
    std::vector<int> order(n);
    std::iota(order.begin(), order.end(), 0);
    if (cfg.shuffle_order)
      for (int i = n - 1; i > 0; --i)
        std::swap(order[i], order[order_rng.below(static_cast<std::uint64_t>(i + 1))]);

    for (int j : order) {
      if (res.frozen[j])
        continue;
      ConditioningRecord rec;
      rec.iteration = k;
      rec.agent = j;
      if (!cfg.conditioned || n == 1) {
        rec.vectors = base[j];
        rec.tree_iteration.assign(n, -1);
      } else {
        std::vector<tree::DecisionTree const*> ptrs(n, nullptr);
        for (int i = 0; i < n; ++i)
          if (tree_iter[i] >= 0)
            ptrs[i] = &current[i];
        std::string const who = behaviour_name(tree_iter);
        oracle::OracleCritic const cj = critic_for(model, critic, ptrs, j);
        oracle::Visitation const visit =
            who == "oracle" ? visit0 : oracle::visitation(model, mixed_policy(cj, model.space, ptrs));
        rec.vectors = qvec::build_vectors(cj, visit, j, tree_conditioning(ptrs, who));
        rec.tree_iteration = tree_iter;
      }
      rec.description = rec.vectors.conditioning;
      growers[j].stage(rec.vectors, k);
      current[j] = growers[j].tree();
      tree_iter[j] = k;
      if (growers[j].saturated())
        res.frozen[j] = true;
      res.log.push_back(std::move(rec));
    }
    res.snapshots.push_back(current);
    res.trees = current;
    if (checkpoint)
      checkpoint(k, res);
  }

  res.trees = current;
  if (cfg.refine && cfg.conditioned)
    res.refine_rounds = refine_leaf_actions(model, critic, res.trees, cfg.refine_rounds, &res.refine_converged);

  oracle::Visitation const final_visit = oracle::visitation(model, joint_policy(model.space, res.trees));
  std::vector<tree::DecisionTree const*> ptrs;
  for (auto const& t : res.trees)
    ptrs.push_back(&t);
  for (int j = 0; j < n; ++j)
    res.final_vectors.push_back(qvec::build_vectors(critic, final_visit, j, tree_conditioning(ptrs, "trees")));
  for (auto const& g : growers)
    res.split_log.push_back(g.log());
  return res;
}

tree::DecisionTree extract_single(env::Model const& model, oracle::OracleCritic const& critic, JointConfig const& cfg)
{
  if (model.spec.n_agents != 1)
    throw InvalidArgument("extract_single: the maze has " + std::to_string(model.spec.n_agents) +
                          " agents; use the multi-agent extraction");
  oracle::Visitation const visit = oracle::visitation(model, oracle::greedy_policy(critic));
  qvec::VectorSet const vs = qvec::build_vectors(critic, visit, 0, qvec::Conditioning::oracle(1));
  std::vector<tree::DecisionTree> trees{
      tree::grow(vs, env::FeatureEncoding::for_maze(model.spec), agent_config(cfg, 0))};
  if (cfg.refine && cfg.conditioned)
    refine_leaf_actions(model, critic, trees, cfg.refine_rounds);
  return trees[0];
}

oracle::EpisodeStats freeze_and_evaluate(std::vector<tree::DecisionTree> const& trees, env::Model const& model,
                                         int episodes, std::uint64_t seed, int jobs)
{
  return oracle::episodic_return(model, joint_policy(model.space, trees), episodes, seed, jobs);
}

nlohmann::json checkpoint_json(int iteration, JointResult const& partial)
{
  nlohmann::json trees = nlohmann::json::array();
  for (auto const& t : partial.snapshots.at(static_cast<std::size_t>(iteration)))
    trees.push_back(tree::to_json(t));
  nlohmann::json log = nlohmann::json::array();
  for (auto const& r : partial.log)
    if (r.iteration == iteration)
      log.push_back({{"agent", r.agent},
                     {"conditioning", r.description},
                     {"tree_iteration", r.tree_iteration},
                     {"n_vectors", r.vectors.size()},
                     {"dim", r.vectors.dim()}});
  return {{"format", "rgmdt-checkpoint"},
          {"version", 1},
          {"iteration", iteration},
          {"frozen", partial.frozen},
          {"conditioning", log},
          {"trees", trees}};
}

} // namespace rgmdt::multiagent
