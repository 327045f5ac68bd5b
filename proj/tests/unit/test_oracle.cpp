#include "rgmdt/oracle.hpp"

#include <doctest.h>

#include <cmath>
#include <filesystem>

using namespace rgmdt;

namespace {

// Two cells in a row: right from the left cell reaches the target.
env::MazeSpec chain()
{
  env::MazeSpec s;
  s.name = "chain";
  s.width = 2;
  s.height = 1;
  s.targets = {{{1, 0}, 1.0, 0.0}};
  s.gamma = 0.9;
  s.horizon = 5;
  return s;
}

} // namespace

TEST_CASE("two-state chain fixed point")
{
  auto const spec = chain();
  auto const c = oracle::solve_exact(spec);
  int const s0 = spec.cell_index({0, 0});
  CHECK(c.q(s0, static_cast<int>(env::Move::Right)) == doctest::Approx(1.0).epsilon(1e-9));
  CHECK(c.q(s0, static_cast<int>(env::Move::Left)) == doctest::Approx(0.9).epsilon(1e-9));

  // 100 sweeps of plain value iteration on the same chain
  double v = 0.0;
  for (int i = 0; i < 100; ++i)
    v = std::max(1.0, 0.9 * v);
  CHECK(c.value(s0) == doctest::Approx(v));
  CHECK(c.residual <= 1e-9);
}

TEST_CASE("zero rewards give a zero table")
{
  auto spec = env::simple_maze();
  spec.targets.clear();
  auto const c = oracle::solve_exact(spec);
  CHECK(c.q.cwiseAbs().maxCoeff() == 0.0);
}

TEST_CASE("simple maze greedy policy reaches the corner within three steps")
{
  auto const spec = env::simple_maze();
  auto const m = env::build_model(spec);
  auto const c = oracle::solve_exact(m);
  CHECK(oracle::bellman_residual(m, c.q) <= 1e-9);
  auto const pi = oracle::greedy_policy(c);
  for (int cell = 0; cell < spec.cells(); ++cell) {
    auto const start = spec.cell_at(cell);
    if (start.x + start.y > 3 || spec.target_at(start) >= 0)
      continue;
    Index s = cell;
    bool reached = false;
    for (int t = 0; t < 3 && !reached; ++t) {
      Index const k = m.at(s, pi[s]);
      reached = m.done[k] && m.reward[k] > 0.0;
      s = m.next[k];
    }
    CHECK_MESSAGE(reached, "start " << start.x << "," << start.y);
  }
}

TEST_CASE("q-learning: zero episodes, determinism, and closeness on the simple maze")
{
  auto const spec = env::simple_maze();
  CHECK(oracle::learn_q(spec, 0, 0.1, 0.1, 3).q.cwiseAbs().maxCoeff() == 0.0);
  auto const a = oracle::learn_q(spec, 3000, 0.1, 0.1, 7);
  auto const b = oracle::learn_q(spec, 3000, 0.1, 0.1, 7);
  CHECK(a.q == b.q);

  auto const m = env::build_model(spec);
  Real const exact = oracle::episodic_return(m, oracle::greedy_policy(oracle::solve_exact(m))).mean;
  Real const short_run = oracle::episodic_return(m, oracle::greedy_policy(a)).mean;
  Real const learned =
      oracle::episodic_return(m, oracle::greedy_policy(oracle::learn_q(spec, 30000, 0.1, 0.1, 7))).mean;
  CHECK(exact >= short_run);
  CHECK(exact >= learned);
  CHECK(learned >= 0.95 * exact);
}

TEST_CASE("visitation: absorbing start, uniform stay, and exact against sampled")
{
  SUBCASE("a start that terminates at once keeps all the normalized mass")
  {
    auto spec = chain();
    spec.start_cells = {{0, 0}};
    auto const m = env::build_model(spec);
    oracle::PolicyTable right(static_cast<std::size_t>(m.space.n_obs()), static_cast<Index>(env::Move::Right));
    auto const d = oracle::visitation(m, right);
    CHECK(d.d_obs[0] == doctest::Approx(1.0));
  }
  SUBCASE("pushing into a wall everywhere keeps mu")
  {
    env::MazeSpec row;
    row.width = 16;
    row.height = 1;
    auto const m = env::build_model(row);
    oracle::PolicyTable up(static_cast<std::size_t>(m.space.n_obs()), static_cast<Index>(env::Move::Up));
    oracle::VisitOptions opt;
    opt.horizon = row.horizon;
    auto const d = oracle::visitation(m, up, opt);
    for (Index s = 0; s < m.space.n_obs(); ++s)
      CHECK(d.d_obs[s] == doctest::Approx(1.0 / 16.0));
  }
  SUBCASE("exact and empirical agree")
  {
    auto const m = env::build_model(env::simple_maze());
    auto const pi = oracle::greedy_policy(oracle::solve_exact(m));
    auto const exact = oracle::visitation(m, pi);
    oracle::VisitOptions opt;
    opt.mode = oracle::VisitMode::Empirical;
    opt.rollouts = 100000;
    opt.seed = 11;
    auto const emp = oracle::visitation(m, pi, opt);
    Real const tv = 0.5 * (exact.d_obs - emp.d_obs).cwiseAbs().sum();
    CHECK(tv <= 0.02);
  }
}

TEST_CASE("discounted return matches (1 - gamma) mu.V")
{
  auto const m = env::build_model(env::medium_maze());
  auto const pi = oracle::greedy_policy(oracle::solve_exact(m));
  Vector const v = oracle::evaluate_policy(m, pi);
  CHECK(oracle::discounted_return(m, pi) == doctest::Approx((1.0 - m.spec.gamma) * m.mu.dot(v)));
}

TEST_CASE("critic files round-trip byte for byte")
{
  auto const c = oracle::solve_exact(env::simple_maze());
  auto const path = std::filesystem::temp_directory_path() / "rgmdt_unit_critic.bin";
  oracle::save_critic(c, path);
  auto const back = oracle::load_critic(path);
  CHECK(oracle::critic_bytes(back) == oracle::critic_bytes(c));
  CHECK(back.q == c.q);
  std::filesystem::remove(path);
}
