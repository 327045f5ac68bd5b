#include "rgmdt/tree.hpp"

#include "rgmdt/random.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <iomanip>
#include <map>
#include <numeric>
#include <sstream>

namespace rgmdt::tree {

int DecisionTree::leaf_count() const
{
  return static_cast<int>(std::count_if(nodes.begin(), nodes.end(), [](Node const& n) { return n.leaf; }));
}

int DecisionTree::depth() const
{
  int d = 0;
  for (auto const& n : nodes)
    d = std::max(d, n.depth);
  return d;
}

std::vector<int> DecisionTree::leaves() const
{
  std::vector<int> out;
  for (std::size_t i = 0; i < nodes.size(); ++i)
    if (nodes[i].leaf)
      out.push_back(static_cast<int>(i));
  return out;
}

int DecisionTree::route(Eigen::Ref<Vector const> const& x) const
{
  if (nodes.empty())
    throw InvalidArgument("route: empty tree");
  if (x.size() != encoding.dim())
    throw InvalidArgument("route: feature dimension " + std::to_string(x.size()) + " does not match the tree's " +
                          std::to_string(encoding.dim()));
  int id = 0;
  while (!nodes[id].leaf)
    id = nodes[id].split.goes_left(x) ? nodes[id].left : nodes[id].right;
  return id;
}

std::vector<int> DecisionTree::local_policy() const
{
  std::vector<int> p(static_cast<std::size_t>(encoding.width * encoding.height));
  for (std::size_t c = 0; c < p.size(); ++c)
    p[c] = infer_cell(static_cast<int>(c));
  return p;
}

DecisionTree single_leaf(int agent, int max_leaves, env::FeatureEncoding const& enc, int action)
{
  DecisionTree t;
  t.agent = agent;
  t.max_leaves = max_leaves;
  t.encoding = enc;
  Node root;
  root.action = action;
  t.nodes.push_back(root);
  return t;
}

std::string export_dot(DecisionTree const& tree)
{
  std::ostringstream os;
  os << "digraph tree {\n  node [shape=box, fontname=\"Helvetica\"];\n";
  for (std::size_t i = 0; i < tree.nodes.size(); ++i) {
    Node const& n = tree.nodes[i];
    os << "  n" << i << " [label=\"";
    if (n.leaf) {
      os << env::kMoveNames[n.action] << "\\nlabel " << n.label << ", support " << n.support;
    } else {
      std::ostringstream eq;
      eq << std::fixed << std::setprecision(4);
      for (Index f = 0; f < n.split.w.size(); ++f)
        eq << (f == 0 ? "" : " ") << (n.split.w[f] < 0 ? "- " : (f == 0 ? "" : "+ ")) << std::abs(n.split.w[f])
           << "*x" << f;
      eq << (n.split.p < 0 ? " + " : " - ") << std::abs(n.split.p) << " >= 0?";
      os << eq.str();
    }
    os << "\"" << (n.leaf ? ", style=rounded" : "") << "];\n";
  }
  for (std::size_t i = 0; i < tree.nodes.size(); ++i) {
    Node const& n = tree.nodes[i];
    if (n.leaf)
      continue;
    os << "  n" << i << " -> n" << n.left << " [label=\"no\"];\n";
    os << "  n" << i << " -> n" << n.right << " [label=\"yes\"];\n";
  }
  os << "}\n";
  return os.str();
}

nlohmann::json to_json(DecisionTree const& t)
{
  nlohmann::json nodes = nlohmann::json::array();
  for (std::size_t i = 0; i < t.nodes.size(); ++i) {
    Node const& n = t.nodes[i];
    nlohmann::json j = {{"id", i}, {"leaf", n.leaf}, {"depth", n.depth}, {"parent", n.parent}};
    if (n.leaf) {
      j["label"] = n.label;
      j["action"] = n.action;
      j["action_name"] = std::string(env::kMoveNames[n.action]);
      j["purity"] = n.purity;
      j["support"] = n.support;
      j["members"] = n.members;
    } else {
      j["w"] = std::vector<Real>(n.split.w.data(), n.split.w.data() + n.split.w.size());
      j["p"] = n.split.p;
      j["margin"] = n.split.margin;
      j["hinge_loss"] = n.split.hinge_loss;
      j["trained_on"] = n.split.trained_on;
      j["left"] = n.left;
      j["right"] = n.right;
    }
    nodes.push_back(j);
  }
  return {{"format", "rgmdt-tree"},  {"version", 1},      {"kind", t.kind},
          {"agent", t.agent},        {"L", t.max_leaves}, {"feature_encoding", env::to_json(t.encoding)},
          {"nodes", nodes}};
}

DecisionTree tree_from_json(nlohmann::json const& j)
{
  try {
    if (j.at("format") != "rgmdt-tree" || j.at("version") != 1)
      throw InvalidArgument("not a version-1 tree document");
    DecisionTree t;
    t.kind = j.at("kind").get<std::string>();
    t.agent = j.at("agent").get<int>();
    t.max_leaves = j.at("L").get<int>();
    t.encoding = env::feature_encoding_from_json(j.at("feature_encoding"));
    auto const& nodes = j.at("nodes");
    for (std::size_t i = 0; i < nodes.size(); ++i) {
      auto const& jn = nodes[i];
      if (jn.at("id").get<std::size_t>() != i)
        throw InvalidArgument("tree nodes must be listed in id order");
      Node n;
      n.leaf = jn.at("leaf").get<bool>();
      n.depth = jn.at("depth").get<int>();
      n.parent = jn.at("parent").get<int>();
      if (n.leaf) {
        n.label = jn.at("label").get<int>();
        n.action = jn.at("action").get<int>();
        if (n.action < 0 || n.action >= env::kNumMoves)
          throw InvalidArgument("leaf action out of range");
        n.purity = jn.at("purity").get<Real>();
        n.support = jn.at("support").get<Index>();
        n.members = jn.at("members").get<std::vector<int>>();
      } else {
        auto const w = jn.at("w").get<std::vector<Real>>();
        if (static_cast<int>(w.size()) != t.encoding.dim())
          throw InvalidArgument("hyperplane dimension does not match the feature encoding");
        n.split.w = Eigen::Map<Vector const>(w.data(), static_cast<Index>(w.size()));
        n.split.p = jn.at("p").get<Real>();
        n.split.margin = jn.at("margin").get<Real>();
        n.split.hinge_loss = jn.at("hinge_loss").get<Real>();
        n.split.trained_on = jn.at("trained_on").get<Index>();
        n.left = jn.at("left").get<int>();
        n.right = jn.at("right").get<int>();
      }
      t.nodes.push_back(std::move(n));
    }
    int const count = static_cast<int>(t.nodes.size());
    if (count == 0)
      throw InvalidArgument("tree has no nodes");
    for (auto const& n : t.nodes)
      if (!n.leaf && (n.left <= 0 || n.right <= 0 || n.left >= count || n.right >= count))
        throw InvalidArgument("tree child index out of range");
    return t;
  } catch (nlohmann::json::exception const& e) {
    throw InvalidArgument(std::string("malformed tree document: ") + e.what());
  }
}

void save_tree(DecisionTree const& tree, std::filesystem::path const& path)
{
  std::ofstream f(path);
  if (!f)
    throw InvalidArgument("cannot write tree file '" + path.string() + "'");
  f << to_json(tree).dump(2) << "\n";
}

DecisionTree load_tree(std::filesystem::path const& path)
{
  std::ifstream f(path);
  if (!f)
    throw InvalidArgument("cannot open tree file '" + path.string() + "'");
  try {
    return tree_from_json(nlohmann::json::parse(f));
  } catch (nlohmann::json::parse_error const& e) {
    throw InvalidArgument("tree file '" + path.string() + "' is not valid JSON: " + e.what());
  }
}

namespace {

Real safe_cosine(Eigen::Ref<Vector const> const& a, Eigen::Ref<Vector const> const& b)
{
  if (!(a.norm() > 0.0) || !(b.norm() > 0.0))
    return 1.0;
  return cosine_distance(a, b);
}

} // namespace

std::pair<std::vector<int>, std::vector<int>> group_classes(std::vector<int> const& labels, Matrix const& centers)
{
  if (labels.size() < 2)
    throw InvalidArgument("group_classes: at least 2 labels required");
  if (static_cast<Index>(labels.size()) != centers.rows())
    throw InvalidArgument("group_classes: one center per label required");
  Index const n = centers.rows();
  Index a = 0, b = 1;
  Real far = -1.0;
  for (Index i = 0; i < n; ++i)
    for (Index j = i + 1; j < n; ++j) {
      Real const d = safe_cosine(centers.row(i).transpose(), centers.row(j).transpose());
      if (d > far) {
        far = d;
        a = i;
        b = j;
      }
    }
  std::vector<int> left, right;
  for (Index i = 0; i < n; ++i) {
    if (i == a) {
      left.push_back(labels[i]);
      continue;
    }
    if (i == b) {
      right.push_back(labels[i]);
      continue;
    }
    Real const da = safe_cosine(centers.row(i).transpose(), centers.row(a).transpose());
    Real const db = safe_cosine(centers.row(i).transpose(), centers.row(b).transpose());
    (db < da ? right : left).push_back(labels[i]);
  }
  return {left, right};
}

int stage_count(int leaves)
{
  if (leaves < 2)
    throw InvalidArgument("a tree needs a leaf budget L >= 2 (binary growth cannot produce a single split with L = " +
                          std::to_string(leaves) + ")");
  int k = 0;
  while ((1 << k) < leaves)
    ++k;
  return k + 1;
}

Grower::Grower(int agent, env::FeatureEncoding enc, GrowConfig cfg) : agent_(agent), cfg_(std::move(cfg))
{
  stage_count(cfg_.leaves);
  tree_ = single_leaf(agent, cfg_.leaves, enc);
  path_.push_back(1);
}

namespace {

struct NodeData
{
  std::vector<Index> rows; // rows of the vector set routed to the node
  Real mass = 0.0;
  Real epsilon = 0.0;
};

NodeData node_data(qvec::VectorSet const& vs, std::vector<Index> rows)
{
  NodeData nd;
  nd.rows = std::move(rows);
  Vector center = Vector::Zero(vs.dim());
  for (Index r : nd.rows) {
    nd.mass += vs.weights[r];
    center += vs.weights[r] * vs.vectors.row(r).transpose();
  }
  if (nd.mass > 0.0) {
    center /= nd.mass;
    for (Index r : nd.rows)
      nd.epsilon += vs.weights[r] / nd.mass * safe_cosine(vs.vectors.row(r).transpose(), center);
  }
  return nd;
}

Real purity_of(std::vector<Index> const& rows, std::vector<int> const& label, int* majority)
{
  std::map<int, int> counts;
  for (Index r : rows)
    ++counts[label[r]];
  int best = 0, best_count = -1;
  for (auto const& [l, c] : counts)
    if (c > best_count) {
      best = l;
      best_count = c;
    }
  if (majority)
    *majority = best;
  return rows.empty() ? 1.0 : static_cast<Real>(best_count) / static_cast<Real>(rows.size());
}

} // namespace

int Grower::stage(qvec::VectorSet const& vs, int k)
{
  if (vs.agent != agent_)
    throw InvalidArgument("grow: vector set belongs to a different agent");
  int const max_depth = stage_count(cfg_.leaves);
  auto const& enc = tree_.encoding;
  Index const n = vs.size();
  Matrix X(n, enc.dim());
  for (Index r = 0; r < n; ++r)
    X.row(r) = enc.encode_local(vs.obs[r]).transpose();

  std::vector<std::vector<Index>> rows_at(tree_.nodes.size());
  for (Index r = 0; r < n; ++r)
    rows_at[tree_.route(X.row(r).transpose())].push_back(r);

  // Labels used for purity: the clustering that most recently touched each observation.
  std::vector<int> label(static_cast<std::size_t>(n), 0);
  for (Index r = 0; r < n; ++r)
    if (auto it = last_label_.find(vs.obs[r]); it != last_label_.end())
      label[r] = it->second;
  cluster::ClusterModel global;
  bool have_global = false;
  if (cfg_.mode == GrowthMode::Global && n >= 2) {
    int const distinct = cluster::count_distinct(vs.vectors, cfg_.cluster.metric);
    if (distinct >= 2) {
      auto cc = cfg_.cluster;
      cc.labels = std::min(cfg_.leaves, distinct);
      cc.seed = derive_seed(cfg_.seed, 0);
      global = cluster::fit(vs.vectors, vs.weights, cc, vs.obs);
      label = global.assignment;
      have_global = true;
    }
  }

  struct Candidate
  {
    int node;
    Real priority;
    NodeData data;
  };
  std::vector<Candidate> cand;
  for (int id : tree_.leaves()) {
    Node const& nd = tree_.nodes[id];
    if (nd.depth > k || nd.depth >= max_depth)
      continue;
    NodeData data = node_data(vs, rows_at[id]);
    if (data.rows.size() < 2)
      continue;
    cand.push_back({id, data.mass * data.epsilon, std::move(data)});
  }
  std::stable_sort(cand.begin(), cand.end(), [](Candidate const& a, Candidate const& b) {
    return a.priority > b.priority || (a.priority == b.priority && a.node < b.node);
  });

  int splits = 0;
  for (auto& c : cand) {
    if (tree_.leaf_count() >= cfg_.leaves)
      break;
    SplitRecord rec;
    rec.stage = k;
    rec.node = c.node;
    rec.priority = c.priority;
    rec.node_epsilon = c.data.epsilon;
    auto const& rows = c.data.rows;
    Matrix V(static_cast<Index>(rows.size()), vs.dim());
    Vector W(static_cast<Index>(rows.size()));
    std::vector<int> ids;
    for (std::size_t i = 0; i < rows.size(); ++i) {
      V.row(static_cast<Index>(i)) = vs.vectors.row(rows[i]);
      W[static_cast<Index>(i)] = vs.weights[rows[i]];
      ids.push_back(vs.obs[rows[i]]);
    }

    std::vector<int> y(rows.size());
    if (cfg_.mode == GrowthMode::PerNode) {
      if (cluster::count_distinct(V, cfg_.cluster.metric) < 2) {
        rec.reason = "pure";
        log_.push_back(rec);
        continue;
      }
      if (cfg_.purity_stop > 0.0 && purity_of(rows, label, nullptr) >= cfg_.purity_stop && tree_.nodes[c.node].depth > 0) {
        rec.reason = "purity-stop";
        log_.push_back(rec);
        continue;
      }
      auto cc = cfg_.cluster;
      cc.labels = 2;
      cc.seed = derive_seed(cfg_.seed, path_[c.node]);
      cluster::ClusterModel const m = cluster::fit(V, W, cc, ids);
      rec.cluster_epsilon = m.epsilon_avg;
      rec.repairs = m.repairs;
      auto const [left, right] = group_classes({0, 1}, m.centers);
      for (std::size_t i = 0; i < rows.size(); ++i) {
        bool const is_left = std::find(left.begin(), left.end(), m.assignment[i]) != left.end();
        y[i] = is_left ? -1 : 1;
        label[rows[i]] = m.assignment[i];
      }
    } else {
      if (!have_global) {
        rec.reason = "pure";
        log_.push_back(rec);
        continue;
      }
      std::vector<int> present;
      for (Index r : rows)
        if (std::find(present.begin(), present.end(), label[r]) == present.end())
          present.push_back(label[r]);
      std::sort(present.begin(), present.end());
      if (present.size() < 2) {
        rec.reason = "pure";
        log_.push_back(rec);
        continue;
      }
      if (cfg_.purity_stop > 0.0 && purity_of(rows, label, nullptr) >= cfg_.purity_stop) {
        rec.reason = "purity-stop";
        log_.push_back(rec);
        continue;
      }
      Matrix centers(static_cast<Index>(present.size()), vs.dim());
      for (std::size_t i = 0; i < present.size(); ++i)
        centers.row(static_cast<Index>(i)) = global.centers.row(present[i]);
      auto const [left, right] = group_classes(present, centers);
      rec.cluster_epsilon = global.epsilon_avg;
      for (std::size_t i = 0; i < rows.size(); ++i)
        y[i] = std::find(left.begin(), left.end(), label[rows[i]]) != left.end() ? -1 : 1;
    }
    // label noise can leave a node with one side empty
    if (std::all_of(y.begin(), y.end(), [&](int v) { return v == y[0]; })) {
      rec.reason = "single-class";
      log_.push_back(rec);
      continue;
    }

    Matrix Xn(static_cast<Index>(rows.size()), enc.dim());
    for (std::size_t i = 0; i < rows.size(); ++i)
      Xn.row(static_cast<Index>(i)) = X.row(rows[i]);
    // A small class the soft margin gives up on is retried class-balanced with a stiffer C each time.
    Hyperplane<Real> h;
    std::vector<Index> lrows, rrows;
    SvmConfig sc = cfg_.svm;
    for (int attempt = 0; attempt < 5; ++attempt) {
      if (attempt > 0) {
        sc.C = sc.balanced ? sc.C * 10.0 : sc.C;
        sc.balanced = true;
      }
      h = train_svm(Xn, y, sc);
      rec.svm_c = sc.C;
      rec.svm_balanced = sc.balanced;
      lrows.clear();
      rrows.clear();
      if (h.degenerate())
        continue;
      for (std::size_t i = 0; i < rows.size(); ++i)
        (h.goes_left(Xn.row(static_cast<Index>(i)).transpose()) ? lrows : rrows).push_back(rows[i]);
      if (!lrows.empty() && !rrows.empty())
        break;
    }
    if (h.degenerate()) {
      rec.reason = "degenerate-hyperplane";
      log_.push_back(rec);
      continue;
    }
    if (lrows.empty() || rrows.empty()) {
      rec.reason = "one-sided-split";
      log_.push_back(rec);
      continue;
    }

    int const id = c.node;
    int const parent_action = tree_.nodes[id].action;
    int const depth = tree_.nodes[id].depth;
    std::uint64_t const code = path_[id];
    Node& nd = tree_.nodes[id];
    nd.leaf = false;
    nd.split = std::move(h);
    nd.members.clear();
    nd.support = 0;
    int const lid = static_cast<int>(tree_.nodes.size());
    nd.left = lid;
    nd.right = lid + 1;
    for (int side = 0; side < 2; ++side) {
      Node child;
      child.parent = id;
      child.depth = depth + 1;
      child.action = parent_action;
      tree_.nodes.push_back(child);
      path_.push_back(2 * code + static_cast<std::uint64_t>(side));
    }
    rows_at.resize(tree_.nodes.size());
    rows_at[lid] = lrows;
    rows_at[lid + 1] = rrows;
    rec.accepted = true;
    log_.push_back(rec);
    ++splits;
  }

  // Refresh leaf bookkeeping.
  int ordinal = 0;
  for (int id : tree_.leaves()) {
    Node& nd = tree_.nodes[id];
    nd.members.clear();
    for (Index r : rows_at[id])
      nd.members.push_back(vs.obs[r]);
    nd.support = static_cast<Index>(nd.members.size());
    int majority = 0;
    nd.purity = purity_of(rows_at[id], label, &majority);
    nd.label = ordinal++;
  }
  for (Index r = 0; r < n; ++r)
    last_label_[vs.obs[r]] = label[r];
  saturated_ = splits == 0 && tree_.leaf_count() < cfg_.leaves;
  set_leaf_actions(vs);
  return splits;
}

void Grower::set_leaf_actions(qvec::VectorSet const& vs) { tree::set_leaf_actions(tree_, vs); }

void set_leaf_actions(DecisionTree& tree, qvec::VectorSet const& vs)
{
  std::vector<Vector> score(tree.nodes.size(), Vector::Zero(env::kNumMoves));
  std::vector<bool> hit(tree.nodes.size(), false);
  for (Index r = 0; r < vs.size(); ++r) {
    int const id = tree.route_cell(vs.obs[r]);
    score[id] += vs.weights[r] * vs.action_values.row(r).transpose();
    hit[id] = true;
  }
  for (int id : tree.leaves()) {
    if (!hit[id])
      continue;
    Index best = 0;
    for (Index a = 1; a < env::kNumMoves; ++a)
      if (score[id][a] > score[id][best])
        best = a;
    tree.nodes[id].action = static_cast<int>(best);
  }
}

DecisionTree grow(qvec::VectorSet const& vs, env::FeatureEncoding const& enc, GrowConfig const& cfg)
{
  if (vs.size() == 0)
    throw InvalidArgument("grow: empty dataset");
  Grower g(vs.agent, enc, cfg);
  int const stages = stage_count(cfg.leaves);
  for (int k = 0; k < stages; ++k)
    g.stage(vs, k);
  return g.tree();
}

std::vector<int> leaf_labels(DecisionTree const& tree, qvec::VectorSet const& vs)
{
  std::vector<int> ordinal(tree.nodes.size(), -1);
  int next = 0;
  for (int id : tree.leaves())
    ordinal[id] = next++;
  std::vector<int> out(static_cast<std::size_t>(vs.size()));
  for (Index r = 0; r < vs.size(); ++r)
    out[r] = ordinal[tree.route_cell(vs.obs[r])];
  return out;
}

Real leaf_epsilon(DecisionTree const& tree, qvec::VectorSet const& vs)
{
  if (vs.size() == 0)
    return 0.0;
  return cluster::partition_epsilon(vs.vectors, vs.weights, leaf_labels(tree, vs), tree.leaf_count());
}

} // namespace rgmdt::tree
