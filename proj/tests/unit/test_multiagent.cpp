#include "rgmdt/multiagent.hpp"

#include <doctest.h>

using namespace rgmdt;

namespace {

// Two agents on a 2x2 grid, both starting opposite the single target.
env::MazeSpec corner_toy()
{
  env::MazeSpec s;
  s.name = "toy";
  s.width = 2;
  s.height = 2;
  s.n_agents = 2;
  s.horizon = 3;
  s.targets = {{{0, 0}, 10.0, 0.0}};
  s.start_cells = {{1, 1}};
  return s;
}

} // namespace

TEST_CASE("one agent: joint growth is the single-agent extraction")
{
  auto const m = env::build_model(env::simple_maze());
  auto const critic = oracle::solve_exact(m);
  multiagent::JointConfig cfg;
  cfg.grow.leaves = 4;
  cfg.grow.seed = 3;
  auto const res = multiagent::grow_joint(m, critic, cfg);
  REQUIRE(res.trees.size() == 1);
  CHECK(tree::to_json(res.trees[0]) == tree::to_json(multiagent::extract_single(m, critic, cfg)));

  auto const two = env::build_model(corner_toy());
  CHECK_THROWS_AS(multiagent::extract_single(two, oracle::solve_exact(two), cfg), InvalidArgument);
}

TEST_CASE("revision with nothing fixed returns the critic")
{
  auto const m = env::build_model(corner_toy());
  auto const critic = oracle::solve_exact(m);
  auto const same = oracle::revise(m, critic, {std::nullopt, std::nullopt});
  CHECK(same.q == critic.q);

  // Fixing agent 1 to always move up can only lower the values.
  auto const fixed = oracle::revise(m, critic, {std::nullopt, std::vector<int>(4, 0)});
  CHECK((fixed.q.array() <= critic.q.array() + 1e-12).all());
  CHECK(fixed.residual <= 1e-9);
}

TEST_CASE("coordinate-free toy: depth-one trees reach the oracle return")
{
  auto const m = env::build_model(corner_toy());
  auto const critic = oracle::solve_exact(m);
  Real const best = oracle::episodic_return(m, oracle::greedy_policy(critic)).mean;
  CHECK(best == doctest::Approx(20.0));
  for (std::uint64_t seed : {0u, 1u, 2u}) {
    multiagent::JointConfig cfg;
    cfg.grow.leaves = 2;
    cfg.grow.seed = seed;
    auto const res = multiagent::grow_joint(m, critic, cfg);
    for (auto const& t : res.trees)
      CHECK(t.depth() <= 1);
    CHECK(multiagent::freeze_and_evaluate(res.trees, m, 0, 0).mean == doctest::Approx(best));
  }
}

TEST_CASE("trees that only bump into walls earn nothing without a reachable target")
{
  env::MazeSpec s = corner_toy();
  s.targets.clear();
  auto const m = env::build_model(s);
  auto const enc = env::FeatureEncoding::for_maze(s);
  std::vector<tree::DecisionTree> trees{tree::single_leaf(0, 2, enc, 0), tree::single_leaf(1, 2, enc, 0)};
  CHECK(multiagent::freeze_and_evaluate(trees, m, 0, 0).mean == 0.0);
  CHECK(multiagent::freeze_and_evaluate(trees, m, 50, 4).mean == 0.0);
}

TEST_CASE("joint growth and evaluation are deterministic")
{
  auto const m = env::build_model(env::predator_prey_maze());
  auto const critic = oracle::solve_exact(m);
  multiagent::JointConfig cfg;
  cfg.grow.seed = 5;
  auto const a = multiagent::grow_joint(m, critic, cfg);
  auto const b = multiagent::grow_joint(m, critic, cfg);
  REQUIRE(a.trees.size() == 2);
  for (int j = 0; j < 2; ++j)
    CHECK(tree::to_json(a.trees[j]) == tree::to_json(b.trees[j]));
  auto const ea = multiagent::freeze_and_evaluate(a.trees, m, 200, 9, 1);
  auto const eb = multiagent::freeze_and_evaluate(b.trees, m, 200, 9, 4);
  CHECK(ea.mean == eb.mean);
  CHECK(ea.stddev == eb.stddev);

  // one conditioning record per agent and stage, in growth order
  CHECK(a.log.size() <= static_cast<std::size_t>(2 * tree::stage_count(cfg.grow.leaves)));
  CHECK(a.log.front().tree_iteration == std::vector<int>{-1, -1});
}

TEST_CASE("joint policy rejects a mismatched tree set")
{
  auto const m = env::build_model(corner_toy());
  auto const enc = env::FeatureEncoding::for_maze(m.spec);
  CHECK_THROWS_AS(multiagent::joint_policy(m.space, {tree::single_leaf(0, 2, enc)}), InvalidArgument);
}

TEST_CASE("the last conditioning record can be rebuilt from the returned trees")
{
  auto const m = env::build_model(env::predator_prey_maze());
  auto const critic = oracle::solve_exact(m);
  multiagent::JointConfig cfg;
  cfg.refine = false;
  cfg.grow.seed = 1;
  auto const res = multiagent::grow_joint(m, critic, cfg);
  auto const& rec = res.log.back();
  int const j = rec.agent, k = rec.iteration;
  REQUIRE(k > 0);

  // the agent's own tree enters only through the behaviour, as it stood before this stage
  std::vector<tree::DecisionTree> seen = res.trees;
  seen[j] = res.snapshots[k - 1][j];
  std::vector<tree::DecisionTree const*> ptrs;
  std::vector<std::optional<std::vector<int>>> fixed;
  for (int i = 0; i < 2; ++i) {
    ptrs.push_back(&seen[i]);
    fixed.push_back(i == j ? std::nullopt : std::optional<std::vector<int>>(seen[i].local_policy()));
  }
  auto const cj = oracle::revise(m, critic, fixed);
  auto const visit = oracle::visitation(m, multiagent::mixed_policy(cj, m.space, ptrs));
  auto const vs = qvec::build_vectors(cj, visit, j, multiagent::tree_conditioning(ptrs, rec.vectors.conditioning));
  CHECK(vs.obs == rec.vectors.obs);
  CHECK(vs.vectors == rec.vectors.vectors);
  CHECK(vs.weights == rec.vectors.weights);
}

TEST_CASE("heavy label noise still yields valid trees")
{
  auto const m = env::build_model(env::predator_prey_maze());
  auto const critic = oracle::solve_exact(m);
  for (std::uint64_t seed : {0u, 1u, 2u, 3u}) {
    multiagent::JointConfig cfg;
    cfg.grow.seed = seed;
    cfg.grow.cluster.label_noise = 0.5;
    multiagent::JointResult res;
    CHECK_NOTHROW(res = multiagent::grow_joint(m, critic, cfg));
    for (auto const& t : res.trees)
      CHECK(t.leaf_count() <= 4);
  }
}
