#include "rgmdt/evalx.hpp"
#include "rgmdt/random.hpp"

#include <doctest.h>

#include <cmath>
#include <map>

using namespace rgmdt;

// Reference values below come from scipy.stats (ttest_ind with equal_var=False, spearmanr).
TEST_CASE("Welch one-sided test against reference values")
{
  auto const w = evalx::welch_greater({5, 6, 7, 8, 9}, {1, 2, 3, 4, 5});
  CHECK(w.t == doctest::Approx(4.0));
  CHECK(w.df == doctest::Approx(8.0));
  CHECK(w.p_value == doctest::Approx(0.001974886401722661).epsilon(1e-6));
  CHECK(w.significant);

  auto const u = evalx::welch_greater({1.1, 2.3, 2.9, 4.2}, {0.5, 0.9, 1.4, 1.2, 0.8, 1.1});
  CHECK(u.t == doctest::Approx(2.496071725097448));
  CHECK(u.df == doctest::Approx(3.246360340128351));
  CHECK(u.p_value == doctest::Approx(0.0408068219248331).epsilon(1e-6));

  auto const back = evalx::welch_greater({1, 2, 3, 4, 5}, {5, 6, 7, 8, 9});
  CHECK(back.p_value == doctest::Approx(1.0 - 0.001974886401722661).epsilon(1e-6));
  CHECK(!back.significant);

  CHECK(evalx::welch_greater({2, 2}, {1, 1}).p_value == 0.0);
  CHECK_THROWS_AS(evalx::welch_greater({1}, {1, 2}), InvalidArgument);
}

TEST_CASE("Spearman correlation")
{
  CHECK(evalx::spearman({1, 2, 3, 4}, {1, 3, 2, 4}) == doctest::Approx(0.8));
  CHECK(evalx::spearman({1, 2, 3, 4}, {4, 3, 2, 1}) == doctest::Approx(-1.0));
  CHECK(evalx::spearman({1, 2, 2, 3}, {1, 3, 2, 4}) == doctest::Approx(0.9486832980505139));
  CHECK(evalx::spearman({1, 2, 3}, {10, 200, 3000}) == doctest::Approx(1.0));
  CHECK_THROWS_AS(evalx::spearman({1, 2}, {1, 2, 3}), InvalidArgument);
}

TEST_CASE("mean and sample standard deviation")
{
  CHECK(evalx::mean_of({1, 2, 3, 4}) == doctest::Approx(2.5));
  CHECK(evalx::stddev_of({1, 2, 3, 4}) == doctest::Approx(std::sqrt(5.0 / 3.0)));
}

TEST_CASE("CART: one class, a single threshold, and beating the majority rule")
{
  env::FeatureEncoding enc;
  enc.width = 4;
  enc.height = 4;
  Matrix X(4, 2);
  X << 0.0, 0.0, 0.2, 0.0, 0.8, 0.0, 1.0, 0.0;

  auto const one = evalx::cart_fit(X, {2, 2, 2, 2}, 4, enc);
  CHECK(one.leaf_count() == 1);
  CHECK(one.nodes[0].action == 2);

  auto const cut = evalx::cart_fit(X, {0, 0, 1, 1}, 2, enc);
  CHECK(cut.leaf_count() == 2);
  Vector x(2);
  x << 0.49, 0.0;
  CHECK(cut.infer(x) == 0);
  x << 0.51, 0.0;
  CHECK(cut.infer(x) == 1);
  CHECK(cut.kind == "axis");

  Rng rng(8);
  Matrix R(200, 2);
  std::vector<int> y;
  std::map<int, int> count;
  for (int i = 0; i < 200; ++i) {
    R(i, 0) = rng.uniform();
    R(i, 1) = rng.uniform();
    y.push_back(R(i, 0) + 0.3 * R(i, 1) > 0.6 ? 3 : static_cast<int>(rng.below(2)));
    ++count[y.back()];
  }
  int majority = 0;
  for (auto const& [k, c] : count)
    majority = std::max(majority, c);
  auto const t = evalx::cart_fit(R, y, 8, enc);
  CHECK(t.leaf_count() <= 8);
  int hit = 0;
  for (int i = 0; i < 200; ++i)
    hit += t.infer(Vector(R.row(i).transpose())) == y[i];
  CHECK(hit >= majority);

  CHECK_THROWS_AS(evalx::cart_fit(X, {0, 0, 1, 1}, 1, enc), InvalidArgument);
  CHECK_THROWS_AS(evalx::cart_fit(X, {0, 0, 1, 9}, 2, enc), InvalidArgument);
}

TEST_CASE("bound certification")
{
  auto const m = env::build_model(env::simple_maze());
  auto const critic = oracle::solve_exact(m);

  SUBCASE("a tree with a leaf per cell has no gap")
  {
    multiagent::JointConfig cfg;
    cfg.grow.leaves = 16;
    auto const r = evalx::certify_bound(m, critic, {multiagent::extract_single(m, critic, cfg)});
    CHECK(r.epsilon <= 1e-9);
    CHECK(std::abs(r.gap) <= 1e-9);
    CHECK(r.holds);
  }
  SUBCASE("four leaves stay under the bound")
  {
    multiagent::JointConfig cfg;
    cfg.grow.leaves = 4;
    auto const r = evalx::certify_bound(m, critic, {multiagent::extract_single(m, critic, cfg)});
    CHECK(r.gap <= r.bound_explicit + 1e-9);
    CHECK(r.holds);
    CHECK(r.bound_explicit == doctest::Approx(r.q_max * std::sqrt(2.0 * r.epsilon)));
    CHECK(r.iterations_grown == tree::stage_count(4));
    CHECK(r.certified);
    auto const j = evalx::to_json(r);
    CHECK(j.contains("gap"));
  }
}

TEST_CASE("sweep: deterministic, and one leaf per cell matches the oracle")
{
  auto const m = env::build_model(env::simple_maze());
  auto const critic = oracle::solve_exact(m);
  multiagent::JointConfig base;
  auto const a = evalx::sweep_leaves(m, critic, {16, 2}, {0, 1}, {"rgmdt", "cart"}, base);
  auto const b = evalx::sweep_leaves(m, critic, {2, 16}, {0, 1}, {"cart", "rgmdt"}, base);
  CHECK(evalx::to_csv(a) == evalx::to_csv(b));
  REQUIRE(a.rows.size() == 4);
  for (auto const& r : a.rows)
    if (r.method == "rgmdt" && r.leaves == 16)
      CHECK(r.mean == doctest::Approx(a.oracle_mean));
  CHECK_THROWS_AS(evalx::sweep_leaves(m, critic, {1}, {0}, {"rgmdt"}, base), InvalidArgument);
}
