#include "rgmdt/cluster.hpp"

#include "rgmdt/random.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <numeric>

namespace rgmdt {

std::string_view metric_name(Metric m)
{
  switch (m) {
  case Metric::Euclidean: return "euclidean";
  case Metric::Manhattan: return "manhattan";
  default: return "cosine";
  }
}

Metric parse_metric(std::string_view name)
{
  if (name == "cosine")
    return Metric::Cosine;
  if (name == "euclidean")
    return Metric::Euclidean;
  if (name == "manhattan")
    return Metric::Manhattan;
  throw InvalidArgument("unknown metric '" + std::string(name) + "' (expected cosine, euclidean or manhattan)");
}

} // namespace rgmdt

namespace rgmdt::cluster {

namespace {

// Cosine distance that treats a zero center (members cancelling out) as orthogonal.
template <typename A, typename B> Real center_distance(Metric m, A const& x, B const& c)
{
  if (m == Metric::Cosine && !(c.norm() > 0.0))
    return 1.0;
  return distance(m, x, c);
}

Matrix pairwise(Matrix const& v, Metric m)
{
  Index const n = v.rows();
  Matrix d = Matrix::Zero(n, n);
  for (Index i = 0; i < n; ++i)
    for (Index j = i + 1; j < n; ++j)
      d(i, j) = d(j, i) = distance(m, v.row(i), v.row(j));
  return d;
}

std::vector<std::vector<Index>> neighbours(Matrix const& d, int k)
{
  Index const n = d.rows();
  std::vector<std::vector<Index>> out(static_cast<std::size_t>(n));
  for (Index p = 0; p < n; ++p) {
    std::vector<Index> idx;
    for (Index q = 0; q < n; ++q)
      if (q != p)
        idx.push_back(q);
    auto const kk = std::min<std::size_t>(static_cast<std::size_t>(std::max(k, 0)), idx.size());
    std::partial_sort(idx.begin(), idx.begin() + static_cast<std::ptrdiff_t>(kk), idx.end(), [&](Index a, Index b) {
      return d(p, a) < d(p, b) || (d(p, a) == d(p, b) && a < b);
    });
    idx.resize(kk);
    out[p] = std::move(idx);
  }
  return out;
}

Real entropy(Eigen::Ref<Vector const> const& p)
{
  Real h = 0.0;
  for (Index i = 0; i < p.size(); ++i)
    if (p[i] > 0.0)
      h -= p[i] * std::log(p[i]);
  return h;
}

Real objective(Matrix const& soft, Vector const& w, Matrix const& d, std::vector<std::vector<Index>> const& knn,
               Real lambda)
{
  Real local = 0.0;
  for (std::size_t p = 0; p < knn.size(); ++p)
    for (Index q : knn[p])
      local += d(static_cast<Index>(p), q) * (soft.row(static_cast<Index>(p)) - soft.row(q)).squaredNorm();
  Vector const m = soft.transpose() * w;
  Real hcond = 0.0;
  for (Index p = 0; p < soft.rows(); ++p)
    hcond += w[p] * entropy(soft.row(p).transpose());
  return local - lambda * (entropy(m) - hcond);
}

std::vector<int> hard_assign(Matrix const& v, Matrix const& centers, Metric m)
{
  std::vector<int> out(static_cast<std::size_t>(v.rows()));
  for (Index p = 0; p < v.rows(); ++p) {
    int best = 0;
    Real bd = std::numeric_limits<Real>::infinity();
    for (Index l = 0; l < centers.rows(); ++l) {
      Real const dl = center_distance(m, v.row(p), centers.row(l));
      if (dl < bd) {
        bd = dl;
        best = static_cast<int>(l);
      }
    }
    out[p] = best;
  }
  return out;
}

// Moves the member farthest from its own center into each empty label. Returns repairs made.
int repair(Matrix const& v, std::vector<int>& labels, int n_labels, Metric m, Vector const& w)
{
  int count = 0;
  for (int l = 0; l < n_labels; ++l) {
    if (std::find(labels.begin(), labels.end(), l) != labels.end())
      continue;
    Matrix const c = weighted_centers(v, w, labels, n_labels);
    std::vector<int> size(n_labels, 0);
    for (int x : labels)
      ++size[x];
    Index pick = -1;
    Real far = -1.0;
    for (Index p = 0; p < v.rows(); ++p) {
      if (size[labels[p]] < 2)
        continue;
      Real const dp = center_distance(m, v.row(p), c.row(labels[p]));
      if (dp > far) {
        far = dp;
        pick = p;
      }
    }
    if (pick < 0)
      throw InvalidArgument("cluster repair failed: not enough points for every label");
    labels[pick] = l;
    ++count;
  }
  return count;
}

std::vector<Index> farthest_point(Matrix const& d, int k, Index first)
{
  std::vector<Index> chosen{first};
  Vector mind = d.row(first).transpose();
  while (static_cast<int>(chosen.size()) < k) {
    Index best = 0;
    for (Index p = 1; p < d.rows(); ++p)
      if (mind[p] > mind[best])
        best = p;
    chosen.push_back(best);
    mind = mind.cwiseMin(d.row(best).transpose());
  }
  return chosen;
}

// k-means++ style: each further seed drawn with probability proportional to w times its distance to the chosen set.
std::vector<Index> sampled_seeds(Matrix const& d, Vector const& w, int k, Index first, Rng& rng)
{
  std::vector<Index> chosen{first};
  Vector mind = d.row(first).transpose();
  while (static_cast<int>(chosen.size()) < k) {
    Vector const score = w.cwiseProduct(mind);
    Real const total = score.sum();
    Index pick = 0;
    if (total > 0.0) {
      Real x = rng.uniform() * total;
      for (pick = 0; pick + 1 < d.rows(); ++pick) {
        x -= score[pick];
        if (x < 0.0 && score[pick] > 0.0)
          break;
      }
      while (score[pick] <= 0.0 && pick > 0)
        --pick;
    } else {
      for (Index p = 1; p < d.rows(); ++p)
        if (mind[p] > mind[pick])
          pick = p;
    }
    chosen.push_back(pick);
    mind = mind.cwiseMin(d.row(pick).transpose());
  }
  return chosen;
}

struct Run
{
  std::vector<int> labels;
  Matrix centers;
  std::vector<Real> trace;
  int repairs = 0;
  int iterations = 0;
  int polish_moves = 0;
  Real epsilon = 0.0;
};

// Single-point relocation on the leaf epsilon. A cluster's share is m - U.S/|S| with S the weighted sum of
// members and U the weighted sum of their unit directions; a zero S leaves every member at distance 1.
int polish_epsilon(Matrix const& v, Vector const& w, std::vector<int>& labels, int n_labels, int max_sweeps = 100)
{
  Index const n = v.rows();
  Matrix u(n, v.cols());
  for (Index p = 0; p < n; ++p)
    u.row(p) = v.row(p) / v.row(p).norm();
  Matrix S = Matrix::Zero(n_labels, v.cols()), U = Matrix::Zero(n_labels, v.cols());
  Vector mass = Vector::Zero(n_labels);
  std::vector<int> size(n_labels, 0);
  for (Index p = 0; p < n; ++p) {
    S.row(labels[p]) += w[p] * v.row(p);
    U.row(labels[p]) += w[p] * u.row(p);
    mass[labels[p]] += w[p];
    ++size[labels[p]];
  }
  auto cost = [](Real m, auto const& s, auto const& uu) {
    Real const sn = s.norm();
    return sn > 0.0 ? m - uu.dot(s) / sn : m;
  };
  int moves = 0;
  for (int sweep = 0; sweep < max_sweeps; ++sweep) {
    bool moved = false;
    for (Index p = 0; p < n; ++p) {
      int const a = labels[p];
      if (size[a] < 2)
        continue;
      Eigen::RowVectorXd const sa = S.row(a) - w[p] * v.row(p), ua = U.row(a) - w[p] * u.row(p);
      Real const keep_a = cost(mass[a], S.row(a), U.row(a)), drop_a = cost(mass[a] - w[p], sa, ua);
      int best = a;
      Real gain = 1e-12;
      for (int b = 0; b < n_labels; ++b) {
        if (b == a)
          continue;
        Real const before = keep_a + cost(mass[b], S.row(b), U.row(b));
        Eigen::RowVectorXd const sb = S.row(b) + w[p] * v.row(p), ub = U.row(b) + w[p] * u.row(p);
        Real const after = drop_a + cost(mass[b] + w[p], sb, ub);
        if (before - after > gain) {
          gain = before - after;
          best = b;
        }
      }
      if (best == a)
        continue;
      S.row(a) = sa;
      U.row(a) = ua;
      mass[a] -= w[p];
      --size[a];
      S.row(best) += w[p] * v.row(p);
      U.row(best) += w[p] * u.row(p);
      mass[best] += w[p];
      ++size[best];
      labels[p] = best;
      moved = true;
      ++moves;
    }
    if (!moved)
      break;
  }
  return moves;
}

} // namespace

int count_distinct(Matrix const& v, Metric m, Real tol)
{
  std::vector<Index> reps;
  for (Index p = 0; p < v.rows(); ++p) {
    bool seen = false;
    for (Index r : reps)
      if (distance(m, v.row(p), v.row(r)) <= tol) {
        seen = true;
        break;
      }
    if (!seen)
      reps.push_back(p);
  }
  return static_cast<int>(reps.size());
}

Matrix weighted_centers(Matrix const& v, Vector const& w, std::vector<int> const& labels, int n_labels)
{
  Matrix c = Matrix::Zero(n_labels, v.cols());
  Vector mass = Vector::Zero(n_labels);
  for (Index p = 0; p < v.rows(); ++p) {
    c.row(labels[p]) += w[p] * v.row(p);
    mass[labels[p]] += w[p];
  }
  for (int l = 0; l < n_labels; ++l)
    if (mass[l] > 0.0)
      c.row(l) /= mass[l];
  return c;
}

Real partition_epsilon(Matrix const& v, Vector const& w, std::vector<int> const& labels, int n_labels,
                       Vector* per_label, Vector* mass_out)
{
  Matrix const c = weighted_centers(v, w, labels, n_labels);
  Vector mass = Vector::Zero(n_labels), eps = Vector::Zero(n_labels);
  for (Index p = 0; p < v.rows(); ++p)
    mass[labels[p]] += w[p];
  Real total = 0.0;
  for (Index p = 0; p < v.rows(); ++p) {
    int const l = labels[p];
    Real const dp = center_distance(Metric::Cosine, v.row(p), c.row(l));
    total += w[p] * dp;
    if (mass[l] > 0.0)
      eps[l] += w[p] / mass[l] * dp;
  }
  Real const wsum = w.sum();
  if (per_label)
    *per_label = eps;
  if (mass_out)
    *mass_out = wsum > 0.0 ? Vector(mass / wsum) : mass;
  return wsum > 0.0 ? total / wsum : 0.0;
}

Matrix soft_assign(Matrix const& v, Matrix const& centers, Metric m, Real tau)
{
  Matrix s(v.rows(), centers.rows());
  for (Index p = 0; p < v.rows(); ++p) {
    for (Index l = 0; l < centers.rows(); ++l)
      s(p, l) = -center_distance(m, v.row(p), centers.row(l)) / tau;
    Real const top = s.row(p).maxCoeff();
    s.row(p) = (s.row(p).array() - top).exp();
    s.row(p) /= s.row(p).sum();
  }
  return s;
}

Real rim_objective(Matrix const& v, Vector const& w, Matrix const& centers, ClusterConfig const& cfg)
{
  Matrix const d = pairwise(v, cfg.metric);
  Vector const wn = w / w.sum();
  return objective(soft_assign(v, centers, cfg.metric, cfg.tau), wn, d, neighbours(d, cfg.k3), cfg.lambda);
}

ClusterModel fit(Matrix const& v, Vector const& weights, ClusterConfig const& cfg, std::vector<int> const& obs_ids)
{
  Index const n = v.rows();
  int const L = cfg.labels;
  if (n == 0)
    throw InvalidArgument("fit: no vectors");
  if (weights.size() != n)
    throw InvalidArgument("fit: one weight per vector required");
  if (L < 2)
    throw InvalidArgument("fit: at least 2 labels required");
  if (!(cfg.tau > 0.0))
    throw InvalidArgument("fit: temperature tau must be positive");
  if (cfg.restarts < 1 || cfg.max_iters < 0)
    throw InvalidArgument("fit: restarts must be >= 1 and max_iters >= 0");
  if (!(cfg.label_noise >= 0.0 && cfg.label_noise <= 1.0))
    throw InvalidArgument("fit: label noise must lie in [0, 1]");
  if ((weights.array() < 0.0).any() || !(weights.sum() > 0.0))
    throw InvalidArgument("fit: weights must be non-negative with positive total");
  std::vector<int> ids = obs_ids;
  if (ids.empty()) {
    ids.resize(static_cast<std::size_t>(n));
    std::iota(ids.begin(), ids.end(), 0);
  }
  if (static_cast<Index>(ids.size()) != n)
    throw InvalidArgument("fit: one observation id per vector required");
  for (Index p = 0; p < n; ++p)
    if (!(v.row(p).norm() > 0.0))
      throw InvalidArgument("observation " + std::to_string(ids[p]) +
                            " has a zero action-value vector; its cosine direction is undefined");
  int const distinct = count_distinct(v, cfg.metric);
  if (distinct < L)
    throw InvalidArgument("fit: only " + std::to_string(distinct) + " distinct vector directions for " +
                          std::to_string(L) + " labels");

  Vector const w = weights / weights.sum();
  Matrix const d = pairwise(v, cfg.metric);
  auto const knn = neighbours(d, cfg.k3);
  auto F = [&](Matrix const& c) { return objective(soft_assign(v, c, cfg.metric, cfg.tau), w, d, knn, cfg.lambda); };

  Run best;
  int best_restart = -1;
  for (int r = 0; r < cfg.restarts; ++r) {
    Rng rng(derive_seed(cfg.seed, static_cast<std::uint64_t>(r)));
    Index first = 0;
    if (r == 0) {
      for (Index p = 1; p < n; ++p)
        if (w[p] > w[first])
          first = p;
    } else {
      first = static_cast<Index>(rng.below(static_cast<std::uint64_t>(n)));
    }
    Matrix init(L, v.cols());
    auto const seeds = r == 0 ? farthest_point(d, L, first) : sampled_seeds(d, w, L, first, rng);
    for (int l = 0; l < L; ++l)
      init.row(l) = v.row(seeds[l]);

    Run run;
    run.labels = hard_assign(v, init, cfg.metric);
    run.repairs += repair(v, run.labels, L, cfg.metric, w);
    run.centers = weighted_centers(v, w, run.labels, L);
    Real f = F(run.centers);
    run.trace.push_back(f);
    for (int it = 0; it < cfg.max_iters; ++it) {
      std::vector<int> labels = hard_assign(v, run.centers, cfg.metric);
      int const fixes = repair(v, labels, L, cfg.metric, w);
      if (labels == run.labels)
        break;
      Matrix centers = weighted_centers(v, w, labels, L);
      Real const f2 = F(centers);
      if (f2 > f)
        break; // step would raise the objective; keep the last accepted iterate
      run.labels = std::move(labels);
      run.centers = std::move(centers);
      run.repairs += fixes;
      run.trace.push_back(f2);
      ++run.iterations;
      bool const small = f - f2 <= cfg.tol * std::max<Real>(1.0, std::abs(f));
      f = f2;
      if (small)
        break;
    }
    if (cfg.metric == Metric::Cosine) {
      run.polish_moves = polish_epsilon(v, w, run.labels, L);
      run.centers = weighted_centers(v, w, run.labels, L);
    }
    run.epsilon = partition_epsilon(v, w, run.labels, L);
    if (best_restart < 0 || run.epsilon < best.epsilon) {
      best = std::move(run);
      best_restart = r;
    }
  }

  ClusterModel model;
  model.n_labels = L;
  model.metric = cfg.metric;
  model.obs = ids;
  model.weights = w;
  model.assignment = best.labels;
  model.objective_trace = best.trace;
  model.repairs = best.repairs;
  model.iterations = best.iterations;
  model.polish_moves = best.polish_moves;
  model.restart = best_restart;

  if (cfg.label_noise > 0.0) {
    Rng rng(derive_seed(cfg.seed, 0x6e6f697365ull));
    for (auto& l : model.assignment)
      if (rng.uniform() < cfg.label_noise) {
        int const shift = 1 + static_cast<int>(rng.below(static_cast<std::uint64_t>(L - 1)));
        l = (l + shift) % L;
      }
  }
  model.centers = weighted_centers(v, w, model.assignment, L);
  model.soft = soft_assign(v, model.centers, cfg.metric, cfg.tau);
  model.epsilon_avg =
      partition_epsilon(v, w, model.assignment, L, &model.epsilon_per_label, &model.label_mass);
  return model;
}

Real epsilon_of(ClusterModel const& model) { return model.epsilon_avg; }

namespace {

nlohmann::json matrix_json(Matrix const& m)
{
  nlohmann::json rows = nlohmann::json::array();
  for (Index r = 0; r < m.rows(); ++r) {
    nlohmann::json row = nlohmann::json::array();
    for (Index c = 0; c < m.cols(); ++c)
      row.push_back(m(r, c));
    rows.push_back(row);
  }
  return rows;
}

nlohmann::json vector_json(Vector const& v) { return std::vector<Real>(v.data(), v.data() + v.size()); }

Matrix matrix_from(nlohmann::json const& j)
{
  Index const rows = static_cast<Index>(j.size());
  Index const cols = rows > 0 ? static_cast<Index>(j[0].size()) : 0;
  Matrix m(rows, cols);
  for (Index r = 0; r < rows; ++r) {
    if (static_cast<Index>(j[r].size()) != cols)
      throw InvalidArgument("ragged matrix in cluster model");
    for (Index c = 0; c < cols; ++c)
      m(r, c) = j[r][c].get<Real>();
  }
  return m;
}

Vector vector_from(nlohmann::json const& j)
{
  auto const v = j.get<std::vector<Real>>();
  return Eigen::Map<Vector const>(v.data(), static_cast<Index>(v.size()));
}

} // namespace

nlohmann::json to_json(ClusterModel const& m)
{
  return {{"format", "rgmdt-cluster-model"},
          {"version", 1},
          {"n_labels", m.n_labels},
          {"metric", std::string(metric_name(m.metric))},
          {"obs", m.obs},
          {"weights", vector_json(m.weights)},
          {"centers", matrix_json(m.centers)},
          {"assignment", m.assignment},
          {"soft_assignment", matrix_json(m.soft)},
          {"label_mass", vector_json(m.label_mass)},
          {"epsilon_per_label", vector_json(m.epsilon_per_label)},
          {"epsilon_avg", m.epsilon_avg},
          {"objective_trace", m.objective_trace},
          {"repairs", m.repairs},
          {"iterations", m.iterations},
          {"polish_moves", m.polish_moves},
          {"restart", m.restart}};
}

ClusterModel model_from_json(nlohmann::json const& j)
{
  try {
    if (j.at("format") != "rgmdt-cluster-model" || j.at("version") != 1)
      throw InvalidArgument("not a version-1 cluster model");
    ClusterModel m;
    m.n_labels = j.at("n_labels").get<int>();
    m.metric = parse_metric(j.at("metric").get<std::string>());
    m.obs = j.at("obs").get<std::vector<int>>();
    m.weights = vector_from(j.at("weights"));
    m.centers = matrix_from(j.at("centers"));
    m.assignment = j.at("assignment").get<std::vector<int>>();
    m.soft = matrix_from(j.at("soft_assignment"));
    m.label_mass = vector_from(j.at("label_mass"));
    m.epsilon_per_label = vector_from(j.at("epsilon_per_label"));
    m.epsilon_avg = j.at("epsilon_avg").get<Real>();
    m.objective_trace = j.at("objective_trace").get<std::vector<Real>>();
    m.repairs = j.at("repairs").get<int>();
    m.iterations = j.at("iterations").get<int>();
    m.polish_moves = j.value("polish_moves", 0);
    m.restart = j.at("restart").get<int>();
    return m;
  } catch (nlohmann::json::exception const& e) {
    throw InvalidArgument(std::string("malformed cluster model: ") + e.what());
  }
}

} // namespace rgmdt::cluster
