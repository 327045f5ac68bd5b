#include "rgmdt/cluster.hpp"
#include "rgmdt/random.hpp"

#include <doctest.h>

#include <cmath>
#include <string>

using namespace rgmdt;

namespace {

Matrix unit_vectors(Rng& rng, int n, int dim)
{
  Matrix v(n, dim);
  for (int i = 0; i < n; ++i) {
    for (int k = 0; k < dim; ++k)
      v(i, k) = rng.uniform() * 2.0 - 1.0;
    v.row(i).normalize();
  }
  return v;
}

// Independent epsilon: weighted mean of 1 - cos to the member-weighted mean.
double eps_reference(Matrix const& v, Vector const& w, std::vector<int> const& lab, int L)
{
  double total = 0.0, wsum = w.sum();
  for (int l = 0; l < L; ++l) {
    Vector c = Vector::Zero(v.cols());
    for (Index p = 0; p < v.rows(); ++p)
      if (lab[p] == l)
        c += w[p] * v.row(p).transpose();
    for (Index p = 0; p < v.rows(); ++p)
      if (lab[p] == l) {
        double const d = c.norm() > 0.0 ? 1.0 - v.row(p).dot(c) / (v.row(p).norm() * c.norm()) : 1.0;
        total += w[p] * d;
      }
  }
  return total / wsum;
}

} // namespace

TEST_CASE("cosine distance on fixed pairs")
{
  Vector a(3), b(2), c(2), d(2);
  a << 1, 2, 3;
  b << 1, 0;
  c << 0, 1;
  d << -1, 0;
  CHECK(cosine_distance(a, a) == 0.0);
  CHECK(cosine_distance(b, c) == doctest::Approx(1.0));
  CHECK(cosine_distance(b, d) == doctest::Approx(2.0));
  CHECK_THROWS_AS(cosine_distance(b, Vector::Zero(2)), InvalidArgument);
}

TEST_CASE("two antipodal direction pairs separate with zero epsilon")
{
  Matrix v(4, 2);
  v << 1, 0, 2, 0, -1, 0, -3, 0;
  cluster::ClusterConfig cfg;
  auto const m = cluster::fit(v, Vector::Ones(4), cfg);
  CHECK(m.assignment[0] == m.assignment[1]);
  CHECK(m.assignment[2] == m.assignment[3]);
  CHECK(m.assignment[0] != m.assignment[2]);
  CHECK(m.epsilon_avg == doctest::Approx(0.0).epsilon(1e-12));
}

TEST_CASE("fewer distinct directions than labels is rejected")
{
  Matrix v(3, 2);
  v << 1, 1, 2, 2, 3, 3;
  cluster::ClusterConfig cfg;
  CHECK_THROWS_AS(cluster::fit(v, Vector::Ones(3), cfg), InvalidArgument);
}

TEST_CASE("a zero vector is rejected with the observation named")
{
  Matrix v(3, 2);
  v << 1, 0, 0, 0, 0, 1;
  cluster::ClusterConfig cfg;
  try {
    cluster::fit(v, Vector::Ones(3), cfg, {4, 7, 9});
    FAIL("no exception");
  } catch (InvalidArgument const& e) {
    CHECK(std::string(e.what()).find("7") != std::string::npos);
  }
}

TEST_CASE("12 unit vectors: fitted epsilon beats 200 random assignments")
{
  Rng rng(12);
  Matrix const v = unit_vectors(rng, 12, 4);
  Vector const w = Vector::Ones(12);
  cluster::ClusterConfig cfg;
  cfg.labels = 3;
  auto const m = cluster::fit(v, w, cfg);
  CHECK(m.epsilon_avg == doctest::Approx(eps_reference(v, w, m.assignment, 3)));
  for (int t = 0; t < 200; ++t) {
    std::vector<int> lab(12);
    for (auto& l : lab)
      l = static_cast<int>(rng.below(3));
    CHECK(m.epsilon_avg <= eps_reference(v, w, lab, 3) + 1e-12);
  }
}

TEST_CASE("8 unit vectors: fitted epsilon against the exhaustive best")
{
  Rng rng(8);
  Matrix const v = unit_vectors(rng, 8, 3);
  Vector const w = Vector::Ones(8);
  cluster::ClusterConfig cfg;
  cfg.labels = 3;
  auto const m = cluster::fit(v, w, cfg);
  double best = 1e300;
  std::vector<int> lab(8);
  for (int code = 0; code < 6561; ++code) {
    int x = code;
    for (auto& l : lab) {
      l = x % 3;
      x /= 3;
    }
    best = std::min(best, eps_reference(v, w, lab, 3));
  }
  CHECK(m.epsilon_avg <= best * 1.05 + 1e-12);
}

TEST_CASE("the objective trace never increases and fits are deterministic")
{
  Rng rng(3);
  for (int t = 0; t < 20; ++t) {
    Matrix const v = unit_vectors(rng, 30, 5);
    Vector w(30);
    for (Index i = 0; i < 30; ++i)
      w[i] = 0.1 + rng.uniform();
    cluster::ClusterConfig cfg;
    cfg.labels = 2 + static_cast<int>(rng.below(3));
    cfg.seed = rng.next();
    auto const a = cluster::fit(v, w, cfg);
    for (std::size_t i = 1; i < a.objective_trace.size(); ++i)
      CHECK(a.objective_trace[i] <= a.objective_trace[i - 1]);
    auto const b = cluster::fit(v, w, cfg);
    CHECK(cluster::to_json(a) == cluster::to_json(b));
  }
}

TEST_CASE("model invariants: centers, soft rows, label mass")
{
  Rng rng(44);
  Matrix const v = unit_vectors(rng, 25, 4);
  Vector w(25);
  for (Index i = 0; i < 25; ++i)
    w[i] = rng.uniform() + 0.05;
  cluster::ClusterConfig cfg;
  cfg.labels = 4;
  auto const m = cluster::fit(v, w, cfg);
  Vector const wn = w / w.sum();
  for (int l = 0; l < 4; ++l) {
    Vector c = Vector::Zero(4);
    double mass = 0.0;
    for (Index p = 0; p < 25; ++p)
      if (m.assignment[p] == l)
        mass += wn[p];
    for (Index p = 0; p < 25; ++p)
      if (m.assignment[p] == l)
        c += wn[p] / mass * v.row(p).transpose();
    CHECK((m.centers.row(l).transpose() - c).cwiseAbs().maxCoeff() <= 1e-9);
    CHECK(m.label_mass[l] == doctest::Approx(mass));
  }
  for (Index p = 0; p < 25; ++p)
    CHECK(m.soft.row(p).sum() == doctest::Approx(1.0));
  CHECK(m.label_mass.sum() == doctest::Approx(1.0));
  CHECK(m.epsilon_avg == doctest::Approx(m.label_mass.dot(m.epsilon_per_label)));
}

TEST_CASE("partition epsilon on small hand cases")
{
  Matrix v(4, 2);
  v << 1, 0, 1, 0, 0, 1, 0, 1;
  Vector const w = Vector::Ones(4);
  CHECK(cluster::partition_epsilon(v, w, {0, 0, 1, 1}, 2) == doctest::Approx(0.0));
  CHECK(cluster::partition_epsilon(v, w, {0, 1, 2, 3}, 4) == doctest::Approx(0.0));

  // one cluster of [1,0] and [0,1]: center along the diagonal, each at 1 - 1/sqrt(2)
  Matrix u(4, 2);
  u << 1, 0, 0, 1, 3, 0, 3, 0;
  double const half = 1.0 - 1.0 / std::sqrt(2.0);
  CHECK(cluster::partition_epsilon(u, w, {0, 0, 1, 1}, 2) == doctest::Approx(0.5 * half));
}

TEST_CASE("cluster models round-trip through JSON")
{
  Rng rng(2);
  Matrix const v = unit_vectors(rng, 10, 3);
  cluster::ClusterConfig cfg;
  cfg.labels = 3;
  auto const m = cluster::fit(v, Vector::Ones(10), cfg);
  auto const back = cluster::model_from_json(cluster::to_json(m));
  CHECK(cluster::to_json(back) == cluster::to_json(m));
}
