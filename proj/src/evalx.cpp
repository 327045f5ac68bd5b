#include "rgmdt/evalx.hpp"

#include "rgmdt/hash.hpp"
#include "rgmdt/parallel.hpp"
#include "rgmdt/random.hpp"

#include <boost/math/distributions/students_t.hpp>

#include <algorithm>
#include <tuple>
#include <cmath>
#include <iomanip>
#include <limits>
#include <numeric>
#include <sstream>

namespace rgmdt::evalx {

Real mean_of(std::vector<Real> const& v)
{
  if (v.empty())
    return 0.0;
  return std::accumulate(v.begin(), v.end(), 0.0) / static_cast<Real>(v.size());
}

Real stddev_of(std::vector<Real> const& v)
{
  if (v.size() < 2)
    return 0.0;
  Real const m = mean_of(v);
  Real s = 0.0;
  for (Real x : v)
    s += (x - m) * (x - m);
  return std::sqrt(s / static_cast<Real>(v.size() - 1));
}

ReturnGapReport certify_bound(env::Model const& model, oracle::OracleCritic const& critic,
                              std::vector<tree::DecisionTree> const& trees, std::vector<Real> const& stage_epsilon)
{
  int const n = model.spec.n_agents;
  if (static_cast<int>(trees.size()) != n)
    throw InvalidArgument("certify: one tree per agent required");
  ReturnGapReport r;
  r.n = n;
  r.leaves = 0;
  for (auto const& t : trees)
    r.leaves = std::max(r.leaves, t.max_leaves);
  r.stage_epsilon = stage_epsilon;

  oracle::PolicyTable const star = oracle::greedy_policy(critic);
  oracle::PolicyTable const pol = multiagent::joint_policy(model.space, trees);
  r.j_oracle = oracle::discounted_return(model, star);
  r.j_tree = oracle::discounted_return(model, pol);
  r.gap = r.j_oracle - r.j_tree;
  r.episodic_oracle = oracle::episodic_return(model, star).mean;
  r.episodic_tree = oracle::episodic_return(model, pol).mean;

  oracle::Visitation const visit = oracle::visitation(model, pol);
  std::vector<tree::DecisionTree const*> ptrs;
  for (auto const& t : trees)
    ptrs.push_back(&t);
  qvec::Conditioning const cond = multiagent::tree_conditioning(ptrs, "trees");
  for (int j = 0; j < n; ++j) {
    qvec::VectorSet const vs = qvec::build_vectors(critic, visit, j, cond);
    r.epsilon_per_agent.push_back(tree::leaf_epsilon(trees[j], vs));
    r.q_max_per_agent.push_back(vs.size() > 0 ? qvec::q_max(vs) : 0.0);
  }
  r.epsilon = mean_of(r.epsilon_per_agent);
  r.q_max = *std::max_element(r.q_max_per_agent.begin(), r.q_max_per_agent.end());
  r.bound_explicit = n * r.q_max * std::sqrt(2.0 * r.epsilon);
  r.iterations_theorem = r.leaves > 0 ? std::log2(static_cast<Real>(r.leaves) + 1.0) - 1.0 : 0.0;
  r.iterations_grown = r.leaves >= 2 ? tree::stage_count(r.leaves) : 0;
  r.bound_theorem_form = r.iterations_theorem > 0.0
                             ? n * r.q_max * std::sqrt(r.epsilon / r.iterations_theorem)
                             : std::numeric_limits<Real>::infinity();
  r.certified = true;
  r.holds = r.gap <= r.bound_explicit + r.slack;

  r.hashes["critic"] = hex64(fnv1a(oracle::critic_bytes(critic)));
  r.hashes["maze"] = hex64(fnv1a(env::to_json(model.spec).dump()));
  for (int j = 0; j < n; ++j)
    r.hashes["tree_" + std::to_string(j)] = hex64(fnv1a(tree::to_json(trees[j]).dump()));
  return r;
}

ReturnGapReport advisory_report(env::MazeSpec const& spec, int leaves, std::string const& reason)
{
  ReturnGapReport r;
  r.n = spec.n_agents;
  r.leaves = leaves;
  r.certified = false;
  r.holds = false;
  r.metric_mode = "advisory: " + reason;
  r.hashes["maze"] = hex64(fnv1a(env::to_json(spec).dump()));
  return r;
}

namespace {

nlohmann::json finite_or_null(Real x) { return std::isfinite(x) ? nlohmann::json(x) : nlohmann::json(nullptr); }

} // namespace

nlohmann::json to_json(ReturnGapReport const& r)
{
  return {{"J_oracle", r.j_oracle},
          {"J_tree", r.j_tree},
          {"gap", r.gap},
          {"epsilon", r.epsilon},
          {"epsilon_per_agent", r.epsilon_per_agent},
          {"stage_epsilon", r.stage_epsilon},
          {"q_max", r.q_max},
          {"q_max_per_agent", r.q_max_per_agent},
          {"L", r.leaves},
          {"n", r.n},
          {"bound_explicit", r.bound_explicit},
          {"bound_theorem_form", finite_or_null(r.bound_theorem_form)},
          {"iterations_theorem", r.iterations_theorem},
          {"iterations_grown", r.iterations_grown},
          {"episodic_oracle", r.episodic_oracle},
          {"episodic_tree", r.episodic_tree},
          {"metric_mode", r.metric_mode},
          {"certified", r.certified},
          {"holds", r.holds},
          {"slack", r.slack},
          {"hashes", r.hashes}};
}

namespace {

Real gini(std::vector<Real> const& counts, Real total)
{
  if (total <= 0.0)
    return 0.0;
  Real g = 1.0;
  for (Real c : counts)
    g -= (c / total) * (c / total);
  return g;
}

struct CartSplit
{
  Real gain = 0.0;
  int feature = -1;
  Real threshold = 0.0;
};

CartSplit best_split(Matrix const& X, std::vector<int> const& y, std::vector<Index> const& rows, int n_classes)
{
  CartSplit best;
  std::vector<Real> all(static_cast<std::size_t>(n_classes), 0.0);
  for (Index r : rows)
    all[y[r]] += 1.0;
  Real const total = static_cast<Real>(rows.size());
  Real const parent = gini(all, total);
  for (Index f = 0; f < X.cols(); ++f) {
    std::vector<Index> order = rows;
    std::stable_sort(order.begin(), order.end(), [&](Index a, Index b) { return X(a, f) < X(b, f); });
    std::vector<Real> left(static_cast<std::size_t>(n_classes), 0.0), right = all;
    for (std::size_t i = 0; i + 1 < order.size(); ++i) {
      left[y[order[i]]] += 1.0;
      right[y[order[i]]] -= 1.0;
      Real const a = X(order[i], f), b = X(order[i + 1], f);
      if (!(a < b))
        continue;
      Real const nl = static_cast<Real>(i + 1), nr = total - nl;
      Real const gain = parent - (nl / total) * gini(left, nl) - (nr / total) * gini(right, nr);
      if (gain > best.gain + 1e-15) {
        best.gain = gain;
        best.feature = static_cast<int>(f);
        best.threshold = 0.5 * (a + b);
      }
    }
  }
  return best;
}

int majority(std::vector<int> const& y, std::vector<Index> const& rows, int n_classes, Real* purity)
{
  std::vector<int> counts(static_cast<std::size_t>(n_classes), 0);
  for (Index r : rows)
    ++counts[y[r]];
  int best = 0;
  for (int c = 1; c < n_classes; ++c)
    if (counts[c] > counts[best])
      best = c;
  if (purity)
    *purity = rows.empty() ? 1.0 : static_cast<Real>(counts[best]) / static_cast<Real>(rows.size());
  return best;
}

} // namespace

tree::DecisionTree cart_fit(Matrix const& X, std::vector<int> const& y, int leaves, env::FeatureEncoding const& enc,
                            int agent)
{
  if (leaves < 2)
    throw InvalidArgument("CART baseline needs L >= 2");
  if (X.rows() == 0 || static_cast<Index>(y.size()) != X.rows())
    throw InvalidArgument("CART baseline needs a non-empty dataset with one label per row");
  if (X.cols() != enc.dim())
    throw InvalidArgument("CART dataset width does not match the feature encoding");
  int const n_classes = env::kNumMoves;
  for (int v : y)
    if (v < 0 || v >= n_classes)
      throw InvalidArgument("CART labels must be move indices");

  tree::DecisionTree t = tree::single_leaf(agent, leaves, enc);
  t.kind = "axis";
  std::vector<std::vector<Index>> rows_at(1);
  rows_at[0].resize(static_cast<std::size_t>(X.rows()));
  std::iota(rows_at[0].begin(), rows_at[0].end(), 0);
  std::vector<CartSplit> cand{best_split(X, y, rows_at[0], n_classes)};

  while (t.leaf_count() < leaves) {
    int pick = -1;
    for (int id : t.leaves())
      if (cand[id].feature >= 0 && (pick < 0 || cand[id].gain > cand[pick].gain))
        pick = id;
    if (pick < 0)
      break;
    CartSplit const s = cand[pick];
    tree::Node& nd = t.nodes[pick];
    nd.leaf = false;
    nd.split.w = Vector::Zero(enc.dim());
    nd.split.w[s.feature] = 1.0;
    nd.split.p = s.threshold;
    nd.split.margin = 1.0;
    nd.split.trained_on = static_cast<Index>(rows_at[pick].size());
    int const lid = static_cast<int>(t.nodes.size());
    nd.left = lid;
    nd.right = lid + 1;
    int const depth = nd.depth;
    std::vector<Index> lrows, rrows;
    for (Index r : rows_at[pick])
      (X(r, s.feature) < s.threshold ? lrows : rrows).push_back(r);
    rows_at[pick].clear();
    for (auto* part : {&lrows, &rrows}) {
      tree::Node child;
      child.parent = pick;
      child.depth = depth + 1;
      t.nodes.push_back(child);
      rows_at.push_back(*part);
      cand.push_back(best_split(X, y, *part, n_classes));
    }
  }
  int ordinal = 0;
  for (int id : t.leaves()) {
    tree::Node& nd = t.nodes[id];
    nd.action = majority(y, rows_at[id], n_classes, &nd.purity);
    nd.label = ordinal++;
    nd.support = static_cast<Index>(rows_at[id].size());
  }
  return t;
}

Dataset oracle_dataset(env::Model const& model, oracle::OracleCritic const& critic, int agent, int episodes,
                       std::uint64_t seed)
{
  if (episodes <= 0)
    throw InvalidArgument("oracle dataset needs episodes > 0");
  auto const support = model.spec.start_support();
  auto const enc = env::FeatureEncoding::for_maze(model.spec);
  std::vector<int> cells, moves;
  Rng rng(seed);
  for (int e = 0; e < episodes; ++e) {
    std::vector<int> local(model.spec.n_agents);
    for (auto& l : local)
      l = model.spec.cell_index(support[rng.below(support.size())]);
    Index s = model.space.obs_index(local);
    for (int t = 0; t < model.spec.horizon; ++t) {
      Index const a = critic.greedy(s);
      cells.push_back(model.space.local_obs(s, agent));
      moves.push_back(model.space.local_action(a, agent));
      auto const k = static_cast<std::size_t>(model.at(s, a));
      if (model.done[k])
        break;
      s = model.next[k];
    }
  }
  Dataset d;
  d.X.resize(static_cast<Index>(cells.size()), enc.dim());
  for (std::size_t i = 0; i < cells.size(); ++i)
    d.X.row(static_cast<Index>(i)) = enc.encode_local(cells[i]).transpose();
  d.y = moves;
  return d;
}

std::vector<tree::DecisionTree> cart_baseline(env::Model const& model, oracle::OracleCritic const& critic,
                                              int leaves, std::uint64_t seed, int episodes)
{
  if (leaves < 2)
    throw InvalidArgument("CART baseline needs L >= 2");
  std::vector<tree::DecisionTree> out;
  auto const enc = env::FeatureEncoding::for_maze(model.spec);
  for (int j = 0; j < model.spec.n_agents; ++j) {
    Dataset const d = oracle_dataset(model, critic, j, episodes, derive_seed(seed, static_cast<std::uint64_t>(j)));
    out.push_back(cart_fit(d.X, d.y, leaves, enc, j));
  }
  return out;
}

std::vector<tree::DecisionTree> build_trees(std::string const& method, env::Model const& model,
                                            oracle::OracleCritic const& critic, int leaves, std::uint64_t seed,
                                            multiagent::JointConfig const& base)
{
  if (method == "cart")
    return cart_baseline(model, critic, leaves, seed);
  multiagent::JointConfig cfg = base;
  cfg.grow.leaves = leaves;
  cfg.grow.seed = seed;
  if (method == "rgmdt-unconditioned")
    cfg.conditioned = false;
  else if (method != "rgmdt")
    throw InvalidArgument("unknown method '" + method + "' (expected rgmdt, rgmdt-unconditioned or cart)");
  if (model.spec.n_agents == 1)
    return {multiagent::extract_single(model, critic, cfg)};
  return multiagent::grow_joint(model, critic, cfg).trees;
}

SweepResult sweep_leaves(env::Model const& model, oracle::OracleCritic const& critic, std::vector<int> leaf_set,
                         std::vector<std::uint64_t> const& seeds, std::vector<std::string> const& methods,
                         multiagent::JointConfig const& base, EvalOptions const& opt)
{
  if (leaf_set.empty() || seeds.empty() || methods.empty())
    throw InvalidArgument("sweep needs non-empty leaf, seed and method lists");
  for (int L : leaf_set)
    if (L < 2)
      throw InvalidArgument("sweep: every L must be >= 2");
  std::sort(leaf_set.begin(), leaf_set.end());
  leaf_set.erase(std::unique(leaf_set.begin(), leaf_set.end()), leaf_set.end());

  oracle::Visitation const visit0 = oracle::visitation(model, oracle::greedy_policy(critic));
  std::vector<qvec::VectorSet> base_vs;
  for (int j = 0; j < model.spec.n_agents; ++j)
    base_vs.push_back(qvec::build_vectors(critic, visit0, j, qvec::Conditioning::oracle(model.spec.n_agents)));

  struct Cell
  {
    std::string method;
    int leaves;
    std::size_t seed;
    Real value = 0.0, epsilon = 0.0, bound = 0.0, bound_thm = 0.0;
  };
  std::vector<Cell> cells;
  for (auto const& m : methods)
    for (int L : leaf_set)
      for (std::size_t s = 0; s < seeds.size(); ++s)
        cells.push_back({m, L, s});
  parallel_for(cells.size(), opt.jobs, [&](std::size_t i) {
    Cell& c = cells[i];
    auto const trees = build_trees(c.method, model, critic, c.leaves, seeds[c.seed], base);
    c.value = multiagent::freeze_and_evaluate(trees, model, opt.episodes, opt.eval_seed).mean;
    std::vector<Real> eps;
    for (int j = 0; j < model.spec.n_agents; ++j)
      eps.push_back(tree::leaf_epsilon(trees[j], base_vs[j]));
    c.epsilon = mean_of(eps);
    if (c.method != "cart") {
      auto const rep = certify_bound(model, critic, trees);
      c.bound = rep.bound_explicit;
      c.bound_thm = rep.bound_theorem_form;
    }
  });

  SweepResult res;
  res.seeds = seeds;
  res.oracle_mean = oracle::episodic_return(model, oracle::greedy_policy(critic), opt.episodes, opt.eval_seed).mean;
  for (auto const& m : methods)
    for (int L : leaf_set) {
      SweepRow row;
      row.method = m;
      row.leaves = L;
      std::vector<Real> b, bt;
      for (auto const& c : cells)
        if (c.method == m && c.leaves == L) {
          row.per_seed.push_back(c.value);
          row.epsilon_per_seed.push_back(c.epsilon);
          b.push_back(c.bound);
          bt.push_back(c.bound_thm);
        }
      row.mean = mean_of(row.per_seed);
      row.stddev = stddev_of(row.per_seed);
      row.epsilon = mean_of(row.epsilon_per_seed);
      row.bound_explicit = mean_of(b);
      row.bound_theorem_form = mean_of(bt);
      res.rows.push_back(row);
    }
  std::sort(res.rows.begin(), res.rows.end(), [](SweepRow const& a, SweepRow const& b) {
    return std::tie(a.method, a.leaves) < std::tie(b.method, b.leaves);
  });
  return res;
}

namespace {

std::string num(Real x)
{
  std::ostringstream os;
  os << std::setprecision(12) << x;
  return os.str();
}

} // namespace

std::string to_csv(SweepResult const& r)
{
  std::ostringstream os;
  os << "method,L,mean_return,std_return,epsilon,bound_explicit,bound_theorem_form,oracle_return,per_seed\n";
  for (auto const& row : r.rows) {
    os << row.method << "," << row.leaves << "," << num(row.mean) << "," << num(row.stddev) << ","
       << num(row.epsilon) << ",";
    if (row.method == "cart")
      os << ",";
    else
      os << num(row.bound_explicit) << "," << num(row.bound_theorem_form);
    os << "," << num(r.oracle_mean) << ",";
    for (std::size_t i = 0; i < row.per_seed.size(); ++i)
      os << (i ? ";" : "") << num(row.per_seed[i]);
    os << "\n";
  }
  return os.str();
}

std::vector<AblationRow> ablate_metric(env::Model const& model, oracle::OracleCritic const& critic, int leaves,
                                       std::vector<Metric> const& metrics, std::vector<std::uint64_t> const& seeds,
                                       std::vector<Real> const& noise_levels, multiagent::JointConfig const& base,
                                       EvalOptions const& opt)
{
  if (metrics.empty() || seeds.empty() || noise_levels.empty())
    throw InvalidArgument("ablation needs non-empty metric, seed and noise lists");
  struct Cell
  {
    std::size_t metric, noise, seed;
    Real value = 0.0;
  };
  std::vector<Cell> cells;
  for (std::size_t m = 0; m < metrics.size(); ++m)
    for (std::size_t z = 0; z < noise_levels.size(); ++z)
      for (std::size_t s = 0; s < seeds.size(); ++s)
        cells.push_back({m, z, s});
  parallel_for(cells.size(), opt.jobs, [&](std::size_t i) {
    Cell& c = cells[i];
    multiagent::JointConfig cfg = base;
    cfg.grow.cluster.metric = metrics[c.metric];
    cfg.grow.cluster.label_noise = noise_levels[c.noise];
    auto const trees = build_trees("rgmdt", model, critic, leaves, seeds[c.seed], cfg);
    c.value = multiagent::freeze_and_evaluate(trees, model, opt.episodes, opt.eval_seed).mean;
  });
  std::vector<AblationRow> rows;
  for (std::size_t m = 0; m < metrics.size(); ++m)
    for (std::size_t z = 0; z < noise_levels.size(); ++z) {
      AblationRow row;
      row.metric = std::string(metric_name(metrics[m]));
      row.noise = noise_levels[z];
      for (auto const& c : cells)
        if (c.metric == m && c.noise == z)
          row.per_seed.push_back(c.value);
      row.mean = mean_of(row.per_seed);
      row.stddev = stddev_of(row.per_seed);
      rows.push_back(row);
    }
  return rows;
}

std::string to_csv(std::vector<AblationRow> const& rows)
{
  std::ostringstream os;
  os << "metric,noise,mean_return,std_return,per_seed\n";
  for (auto const& r : rows) {
    os << r.metric << "," << num(r.noise) << "," << num(r.mean) << "," << num(r.stddev) << ",";
    for (std::size_t i = 0; i < r.per_seed.size(); ++i)
      os << (i ? ";" : "") << num(r.per_seed[i]);
    os << "\n";
  }
  return os.str();
}

WelchResult welch_greater(std::vector<Real> const& a, std::vector<Real> const& b, Real alpha)
{
  if (a.size() < 2 || b.size() < 2)
    throw InvalidArgument("Welch test needs at least two samples per group");
  Real const ma = mean_of(a), mb = mean_of(b);
  Real const va = stddev_of(a) * stddev_of(a) / static_cast<Real>(a.size());
  Real const vb = stddev_of(b) * stddev_of(b) / static_cast<Real>(b.size());
  WelchResult w;
  if (va + vb == 0.0) {
    // Both samples are constant: the difference is exact.
    w.t = ma > mb ? std::numeric_limits<Real>::infinity() : (ma < mb ? -std::numeric_limits<Real>::infinity() : 0.0);
    w.df = static_cast<Real>(a.size() + b.size() - 2);
    w.p_value = ma > mb ? 0.0 : 1.0;
    w.significant = ma > mb;
    return w;
  }
  w.t = (ma - mb) / std::sqrt(va + vb);
  Real const na = static_cast<Real>(a.size()), nb = static_cast<Real>(b.size());
  w.df = (va + vb) * (va + vb) / (va * va / (na - 1.0) + vb * vb / (nb - 1.0));
  boost::math::students_t dist(w.df);
  w.p_value = boost::math::cdf(boost::math::complement(dist, w.t));
  w.significant = w.p_value < alpha;
  return w;
}

namespace {

std::vector<Real> ranks(std::vector<Real> const& v)
{
  std::vector<std::size_t> idx(v.size());
  std::iota(idx.begin(), idx.end(), 0);
  std::stable_sort(idx.begin(), idx.end(), [&](std::size_t a, std::size_t b) { return v[a] < v[b]; });
  std::vector<Real> r(v.size());
  for (std::size_t i = 0; i < idx.size();) {
    std::size_t j = i;
    while (j + 1 < idx.size() && v[idx[j + 1]] == v[idx[i]])
      ++j;
    Real const avg = 0.5 * static_cast<Real>(i + j) + 1.0;
    for (std::size_t k = i; k <= j; ++k)
      r[idx[k]] = avg;
    i = j + 1;
  }
  return r;
}

} // namespace

Real spearman(std::vector<Real> const& x, std::vector<Real> const& y)
{
  if (x.size() != y.size() || x.size() < 2)
    throw InvalidArgument("Spearman correlation needs two equally long samples of size >= 2");
  auto const rx = ranks(x), ry = ranks(y);
  Real const mx = mean_of(rx), my = mean_of(ry);
  Real sxy = 0.0, sxx = 0.0, syy = 0.0;
  for (std::size_t i = 0; i < rx.size(); ++i) {
    sxy += (rx[i] - mx) * (ry[i] - my);
    sxx += (rx[i] - mx) * (rx[i] - mx);
    syy += (ry[i] - my) * (ry[i] - my);
  }
  if (sxx == 0.0 || syy == 0.0)
    return 0.0;
  return sxy / std::sqrt(sxx * syy);
}

} // namespace rgmdt::evalx
