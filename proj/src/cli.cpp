#include "rgmdt/cli.hpp"

#include "rgmdt/cluster.hpp"
#include "rgmdt/env.hpp"
#include "rgmdt/evalx.hpp"
#include "rgmdt/hash.hpp"
#include "rgmdt/multiagent.hpp"
#include "rgmdt/oracle.hpp"
#include "rgmdt/qvec.hpp"
#include "rgmdt/tree.hpp"

#include <CLI11.hpp>
#include <json.hpp>

#include <algorithm>
#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <functional>
#include <iostream>
#include <memory>
#include <optional>
#include <sstream>
#include <string>
#include <vector>

namespace fs = std::filesystem;
using nlohmann::json;

namespace rgmdt::cli {

namespace {

struct Options
{
  std::string out_dir = ".";
  int jobs = 1;
  std::string seed_text;
  std::uint64_t seed = 0;
  int verbosity = 0;

  std::string maze;
  std::string critic;
  std::string out;

  // train-oracle
  std::string mode = "exact";
  int q_episodes = 20000;
  Real alpha = 0.1;
  Real explore = 0.1;
  bool finite_horizon = false;

  // dump-qvec
  int agent = 0;
  bool sampled = false;
  int k1 = 4096;
  int k2 = 32;

  // cluster
  std::string qvec;
  int labels = 2;
  Real tau = 0.1;
  Real lambda = 1.0;
  int k3 = 5;
  int max_iters = 100;
  Real tol = 1e-9;
  int restarts = 8;
  std::string metric = "cosine";
  Real label_noise = 0.0;

  // growth
  int leaves = 4;
  std::string growth = "per-node";
  Real purity_stop = 0.0;
  Real svm_c = 10.0;
  Real svm_tol = 1e-9;
  bool unconditioned = false;
  bool no_refine = false;
  std::string agent_order = "ascending";
  std::uint64_t order_seed = 0;

  // evaluation
  std::vector<std::string> trees;
  std::string tree;
  int episodes = 0;
  std::uint64_t eval_seed = 12345;
  std::vector<int> leaves_set{4, 8, 16, 32};
  std::vector<std::uint64_t> seeds{0, 1, 2, 3, 4};
  std::vector<std::string> methods{"rgmdt", "cart"};
  std::vector<std::string> metrics{"cosine", "euclidean", "manhattan"};
  std::vector<Real> noise{0.0};

  std::string manifest;
};

// Records how to echo each option into the manifest under its flag name.
struct Registry
{
  CLI::App* app = nullptr;
  std::vector<std::function<void(json&)>> dump;

  template <typename T> CLI::Option* opt(std::string const& name, T& var, std::string const& desc)
  {
    dump.push_back([name, &var](json& j) { j[name] = var; });
    return app->add_option("--" + name, var, desc)->capture_default_str();
  }

  template <typename T> CLI::Option* list(std::string const& name, std::vector<T>& var, std::string const& desc)
  {
    dump.push_back([name, &var](json& j) { j[name] = var; });
    return app->add_option("--" + name, var, desc)->delimiter(',')->capture_default_str();
  }

  // Input file: echoed as an absolute path.
  CLI::Option* input(std::string const& name, std::string& var, std::string const& desc)
  {
    dump.push_back([name, &var](json& j) {
      if (!var.empty())
        j[name] = fs::exists(var) ? fs::absolute(var).lexically_normal().string() : var;
    });
    return app->add_option("--" + name, var, desc);
  }

  CLI::Option* inputs(std::string const& name, std::vector<std::string>& var, std::string const& desc)
  {
    dump.push_back([name, &var](json& j) {
      if (var.empty())
        return;
      json a = json::array();
      for (auto const& p : var)
        a.push_back(fs::absolute(p).lexically_normal().string());
      j[name] = a;
    });
    return app->add_option("--" + name, var, desc)->delimiter(',');
  }

  CLI::Option* flag(std::string const& name, bool& var, std::string const& desc)
  {
    dump.push_back([name, &var](json& j) { j[name] = var; });
    return app->add_flag("--" + name, var, desc);
  }
};

struct Command
{
  std::string name;
  CLI::App* app = nullptr;
  std::unique_ptr<Registry> reg;
  std::function<int(Options&, json&)> action;
};

[[noreturn]] void invalid(std::string const& msg) { throw InvalidArgument(msg); }

std::string read_file(fs::path const& p)
{
  std::ifstream in(p, std::ios::binary);
  if (!in)
    invalid("cannot open file: " + p.string());
  std::ostringstream os;
  os << in.rdbuf();
  return os.str();
}

json read_json(fs::path const& p)
{
  try {
    return json::parse(read_file(p));
  } catch (json::parse_error const& e) {
    invalid("malformed JSON in " + p.string() + ": " + e.what());
  }
}

// Output path inside the output directory; anything resolving outside it is rejected.
fs::path output_path(Options const& o, std::string const& name)
{
  if (name.empty())
    invalid("empty output file name");
  fs::path const root = fs::weakly_canonical(fs::absolute(o.out_dir));
  fs::path const p = fs::weakly_canonical(root / fs::path(name));
  auto const [r, _] = std::mismatch(root.begin(), root.end(), p.begin(), p.end());
  if (r != root.end())
    invalid("output '" + name + "' resolves outside the output directory " + root.string());
  fs::create_directories(p.parent_path());
  return p;
}

void write_text(fs::path const& p, std::string const& text)
{
  std::ofstream out(p, std::ios::binary);
  if (!out)
    throw Error("cannot write " + p.string());
  out << text;
}

void write_json(fs::path const& p, json const& j) { write_text(p, j.dump(2) + "\n"); }

env::MazeSpec resolve_maze(std::string const& arg)
{
  if (fs::exists(arg))
    return env::load_maze(arg);
  if (arg == "simple")
    return env::simple_maze();
  if (arg == "medium")
    return env::medium_maze();
  if (arg == "hard")
    return env::hard_maze();
  if (arg == "predator_prey")
    return env::predator_prey_maze();
  invalid("maze file not found: " + arg + " (or use a preset: simple, medium, hard, predator_prey)");
}

oracle::OracleCritic need_critic(Options const& o)
{
  if (o.critic.empty())
    invalid("--critic is required");
  if (!fs::exists(o.critic))
    invalid("critic file not found: " + o.critic);
  oracle::OracleCritic c = oracle::load_critic(o.critic);
  if (!o.maze.empty()) {
    env::MazeSpec const m = resolve_maze(o.maze);
    if (env::to_json(m) != env::to_json(c.spec))
      invalid("--maze does not match the maze the critic was trained on");
  }
  return c;
}

std::vector<tree::DecisionTree> need_trees(Options const& o, int n)
{
  if (static_cast<int>(o.trees.size()) != n)
    invalid("--trees needs " + std::to_string(n) + " tree file(s), one per agent; got " +
            std::to_string(o.trees.size()));
  std::vector<tree::DecisionTree> out;
  for (int j = 0; j < n; ++j) {
    if (!fs::exists(o.trees[j]))
      invalid("tree file not found: " + o.trees[j]);
    out.push_back(tree::load_tree(o.trees[j]));
    if (out.back().agent != j)
      invalid("tree " + o.trees[j] + " belongs to agent " + std::to_string(out.back().agent) + ", expected " +
              std::to_string(j));
  }
  return out;
}

cluster::ClusterConfig cluster_config(Options const& o)
{
  cluster::ClusterConfig c;
  c.labels = o.labels;
  c.tau = o.tau;
  c.lambda = o.lambda;
  c.k3 = o.k3;
  c.seed = o.seed;
  c.max_iters = o.max_iters;
  c.tol = o.tol;
  c.restarts = o.restarts;
  c.metric = parse_metric(o.metric);
  c.label_noise = o.label_noise;
  return c;
}

multiagent::JointConfig joint_config(Options const& o)
{
  if (o.leaves < 2)
    invalid("--leaves must satisfy L >= 2 (got " + std::to_string(o.leaves) + ")");
  multiagent::JointConfig j;
  j.grow.leaves = o.leaves;
  if (o.growth == "per-node")
    j.grow.mode = tree::GrowthMode::PerNode;
  else if (o.growth == "global")
    j.grow.mode = tree::GrowthMode::Global;
  else
    invalid("--growth must be per-node or global");
  j.grow.cluster = cluster_config(o);
  j.grow.svm.C = o.svm_c;
  j.grow.svm.tol = o.svm_tol;
  j.grow.purity_stop = o.purity_stop;
  j.grow.seed = o.seed;
  j.conditioned = !o.unconditioned;
  j.refine = !o.no_refine;
  if (o.agent_order == "shuffle")
    j.shuffle_order = true;
  else if (o.agent_order != "ascending")
    invalid("--agent-order must be ascending or shuffle");
  j.order_seed = o.order_seed;
  j.jobs = o.jobs;
  return j;
}

// CSV written by dump-qvec: cell, feature_*, weight, component_*.
qvec::VectorSet read_qvec_csv(fs::path const& p)
{
  std::istringstream in(read_file(p));
  std::string line;
  if (!std::getline(in, line))
    invalid("empty qvec file: " + p.string());
  std::vector<std::string> head;
  {
    std::stringstream ss(line);
    std::string cell;
    while (std::getline(ss, cell, ','))
      head.push_back(cell);
  }
  int weight_col = -1, first_comp = -1;
  for (std::size_t i = 0; i < head.size(); ++i) {
    if (head[i] == "weight")
      weight_col = static_cast<int>(i);
    if (first_comp < 0 && head[i].rfind("component_", 0) == 0)
      first_comp = static_cast<int>(i);
  }
  if (head.empty() || head[0] != "cell" || weight_col < 0 || first_comp < 0)
    invalid("qvec file " + p.string() + " lacks the cell/weight/component_* columns");
  std::vector<std::vector<Real>> rows;
  std::vector<int> cells;
  while (std::getline(in, line)) {
    if (line.empty())
      continue;
    std::stringstream ss(line);
    std::string tok;
    std::vector<Real> vals;
    while (std::getline(ss, tok, ','))
      try {
        vals.push_back(std::stod(tok));
      } catch (std::exception const&) {
        invalid("non-numeric value '" + tok + "' in " + p.string());
      }
    if (vals.size() != head.size())
      invalid("ragged row in " + p.string());
    cells.push_back(static_cast<int>(vals[0]));
    rows.push_back(vals);
  }
  if (rows.empty())
    invalid("qvec file " + p.string() + " has no rows");
  qvec::VectorSet vs;
  Index const dim = static_cast<Index>(head.size()) - first_comp;
  vs.obs = cells;
  vs.vectors.resize(static_cast<Index>(rows.size()), dim);
  vs.weights.resize(static_cast<Index>(rows.size()));
  for (std::size_t r = 0; r < rows.size(); ++r) {
    vs.weights[static_cast<Index>(r)] = rows[r][weight_col];
    for (Index k = 0; k < dim; ++k)
      vs.vectors(static_cast<Index>(r), k) = rows[r][first_comp + k];
  }
  vs.norms = vs.vectors.rowwise().norm();
  return vs;
}

void add_cluster_options(Registry& r, Options& o)
{
  r.opt("tau", o.tau, "softmax temperature of the soft assignment");
  r.opt("lambda", o.lambda, "weight of the mutual-information term");
  r.opt("k3", o.k3, "neighbours in the locality term");
  r.opt("max-iters", o.max_iters, "alternating steps per restart");
  r.opt("tol", o.tol, "relative objective decrease that ends a restart");
  r.opt("restarts", o.restarts, "clustering restarts");
  r.opt("metric", o.metric, "cosine, euclidean or manhattan");
  r.opt("label-noise", o.label_noise, "probability of flipping each final label");
}

void add_growth_options(Registry& r, Options& o, bool with_leaves = true)
{
  if (with_leaves)
    r.opt("leaves", o.leaves, "leaf budget L");
  r.opt("growth", o.growth, "per-node or global");
  r.opt("purity-stop", o.purity_stop, "leave nodes with label purity >= this unsplit (0 disables)");
  r.opt("svm-c", o.svm_c, "SVM box constraint");
  r.opt("svm-tol", o.svm_tol, "SVM KKT tolerance");
  r.flag("no-refine", o.no_refine, "skip the final leaf-action fixed point");
  add_cluster_options(r, o);
}

json report_json(oracle::EpisodeStats const& s)
{
  return {{"mean", s.mean}, {"stddev", s.stddev}, {"episodes", s.episodes}};
}

// ---- subcommands ----

int cmd_train_oracle(Options& o, json&)
{
  if (o.maze.empty())
    invalid("--maze is required");
  env::MazeSpec const spec = resolve_maze(o.maze);
  oracle::OracleCritic critic;
  if (o.mode == "exact") {
    oracle::SolveOptions so;
    so.finite_horizon = o.finite_horizon;
    critic = oracle::solve_exact(spec, so);
  } else if (o.mode == "qlearn") {
    if (o.q_episodes <= 0)
      invalid("--q-episodes must be positive");
    critic = oracle::learn_q(spec, o.q_episodes, o.alpha, o.explore, o.seed);
  } else {
    invalid("--mode must be exact or qlearn");
  }
  fs::path const out = output_path(o, o.out.empty() ? "critic.bin" : o.out);
  oracle::save_critic(critic, out);
  if (o.verbosity > 0)
    std::cerr << "critic: " << critic.q.rows() << "x" << critic.q.cols() << " residual " << critic.residual
              << " -> " << out.string() << "\n";
  return kExitOk;
}

int cmd_dump_qvec(Options& o, json&)
{
  oracle::OracleCritic const critic = need_critic(o);
  env::Model const model = env::build_model(critic.spec);
  int const n = critic.spec.n_agents;
  if (o.agent < 0 || o.agent >= n)
    invalid("--agent out of range for a " + std::to_string(n) + "-agent maze");
  qvec::Conditioning cond = qvec::Conditioning::oracle(n);
  oracle::PolicyTable behaviour = oracle::greedy_policy(critic);
  std::vector<tree::DecisionTree> trees;
  if (!o.trees.empty()) {
    trees = need_trees(o, n);
    std::vector<tree::DecisionTree const*> ptrs;
    for (auto const& t : trees)
      ptrs.push_back(&t);
    cond = multiagent::tree_conditioning(ptrs, "trees");
    behaviour = multiagent::joint_policy(model.space, trees);
  }
  qvec::VectorSet vs;
  if (o.sampled) {
    qvec::SampledOptions so;
    so.k1 = o.k1;
    so.k2 = o.k2;
    so.seed = o.seed;
    vs = qvec::build_vectors_sampled(critic, model, behaviour, o.agent, cond, so);
  } else {
    vs = qvec::build_vectors(critic, oracle::visitation(model, behaviour), o.agent, cond);
  }
  write_text(output_path(o, o.out.empty() ? "qvec.csv" : o.out),
             qvec::to_csv(vs, env::FeatureEncoding::for_maze(critic.spec)));
  return kExitOk;
}

int cmd_cluster(Options& o, json&)
{
  if (o.qvec.empty())
    invalid("--qvec is required");
  if (!fs::exists(o.qvec))
    invalid("qvec file not found: " + o.qvec);
  if (o.labels < 2)
    invalid("--labels must satisfy L >= 2");
  qvec::VectorSet const vs = read_qvec_csv(o.qvec);
  Vector w = vs.weights;
  if (!(w.sum() > 0.0))
    invalid("qvec weights must sum to a positive value");
  w /= w.sum();
  cluster::ClusterConfig cfg = cluster_config(o);
  cfg.labels = o.labels;
  cluster::ClusterModel const m = cluster::fit(vs.vectors, w, cfg, vs.obs);
  write_json(output_path(o, o.out.empty() ? "cluster.json" : o.out), cluster::to_json(m));
  return kExitOk;
}

int cmd_extract(Options& o, json&)
{
  multiagent::JointConfig const cfg = joint_config(o);
  oracle::OracleCritic const critic = need_critic(o);
  if (critic.spec.n_agents != 1)
    invalid("extract handles single-agent critics; this maze has " + std::to_string(critic.spec.n_agents) +
            " agents, use extract-multi");
  env::Model const model = env::build_model(critic.spec);
  tree::DecisionTree const t = multiagent::extract_single(model, critic, cfg);
  tree::save_tree(t, output_path(o, o.out.empty() ? "tree.json" : o.out));
  return kExitOk;
}

int cmd_extract_multi(Options& o, json&)
{
  multiagent::JointConfig const cfg = joint_config(o);
  oracle::OracleCritic const critic = need_critic(o);
  env::Model const model = env::build_model(critic.spec);
  auto checkpoint = [&](int k, multiagent::JointResult const& partial) {
    write_json(output_path(o, "checkpoint_iter" + std::to_string(k) + ".json"),
               multiagent::checkpoint_json(k, partial));
  };
  multiagent::JointResult const res = multiagent::grow_joint(model, critic, cfg, checkpoint);
  for (std::size_t j = 0; j < res.trees.size(); ++j)
    tree::save_tree(res.trees[j], output_path(o, "tree_agent" + std::to_string(j) + ".json"));
  json log = json::array();
  for (auto const& r : res.log)
    log.push_back({{"iteration", r.iteration},
                   {"agent", r.agent},
                   {"conditioning", r.description},
                   {"tree_iteration", r.tree_iteration}});
  json splits = json::array();
  for (auto const& per_agent : res.split_log) {
    json a = json::array();
    for (auto const& s : per_agent)
      a.push_back({{"stage", s.stage},
                   {"node", s.node},
                   {"priority", s.priority},
                   {"node_epsilon", s.node_epsilon},
                   {"svm_c", s.svm_c},
                   {"svm_balanced", s.svm_balanced},
                   {"cluster_epsilon", s.cluster_epsilon},
                   {"repairs", s.repairs},
                   {"accepted", s.accepted},
                   {"reason", s.reason}});
    splits.push_back(a);
  }
  write_json(output_path(o, "growth_log.json"), {{"conditioning", log},
                                                 {"splits", splits},
                                                 {"frozen", res.frozen},
                                                 {"refine_rounds", res.refine_rounds},
                                                 {"refine_converged", res.refine_converged}});
  return kExitOk;
}

int cmd_export_dot(Options& o, json&)
{
  if (o.tree.empty())
    invalid("a tree file is required");
  if (!fs::exists(o.tree))
    invalid("tree file not found: " + o.tree);
  tree::DecisionTree const t = tree::load_tree(o.tree);
  std::string const name = o.out.empty() ? fs::path(o.tree).stem().string() + ".dot" : o.out;
  write_text(output_path(o, name), tree::export_dot(t));
  return kExitOk;
}

int cmd_evaluate(Options& o, json&)
{
  oracle::OracleCritic const critic = need_critic(o);
  env::Model const model = env::build_model(critic.spec);
  auto const trees = need_trees(o, critic.spec.n_agents);
  oracle::PolicyTable const pol = multiagent::joint_policy(model.space, trees);
  oracle::PolicyTable const star = oracle::greedy_policy(critic);
  json r = {{"J_oracle", oracle::discounted_return(model, star)},
            {"J_tree", oracle::discounted_return(model, pol)},
            {"episodic_oracle", report_json(oracle::episodic_return(model, star, o.episodes, o.eval_seed, o.jobs))},
            {"episodic_tree", report_json(oracle::episodic_return(model, pol, o.episodes, o.eval_seed, o.jobs))},
            {"eval_seed", o.eval_seed}};
  r["gap"] = r["J_oracle"].get<Real>() - r["J_tree"].get<Real>();
  write_json(output_path(o, o.out.empty() ? "evaluate.json" : o.out), r);
  return kExitOk;
}

int cmd_sweep(Options& o, json&)
{
  o.leaves = 2; // the sweep sets L per cell
  multiagent::JointConfig const cfg = joint_config(o);
  oracle::OracleCritic const critic = need_critic(o);
  env::Model const model = env::build_model(critic.spec);
  evalx::EvalOptions eo;
  eo.episodes = o.episodes;
  eo.eval_seed = o.eval_seed;
  eo.jobs = o.jobs;
  auto const res = evalx::sweep_leaves(model, critic, o.leaves_set, o.seeds, o.methods, cfg, eo);
  write_text(output_path(o, o.out.empty() ? "sweep.csv" : o.out), evalx::to_csv(res));
  return kExitOk;
}

int cmd_ablate(Options& o, json&)
{
  multiagent::JointConfig const cfg = joint_config(o);
  oracle::OracleCritic const critic = need_critic(o);
  env::Model const model = env::build_model(critic.spec);
  std::vector<Metric> ms;
  for (auto const& m : o.metrics)
    ms.push_back(parse_metric(m));
  evalx::EvalOptions eo;
  eo.episodes = o.episodes;
  eo.eval_seed = o.eval_seed;
  eo.jobs = o.jobs;
  auto const rows = evalx::ablate_metric(model, critic, o.leaves, ms, o.seeds, o.noise, cfg, eo);
  write_text(output_path(o, o.out.empty() ? "ablation.csv" : o.out), evalx::to_csv(rows));
  return kExitOk;
}

int cmd_certify(Options& o, json&)
{
  fs::path const out = output_path(o, o.out.empty() ? "certify.json" : o.out);
  if (o.critic.empty() && !o.maze.empty()) {
    env::MazeSpec const spec = resolve_maze(o.maze);
    try {
      env::joint_space(spec);
    } catch (CapExceeded const& e) {
      write_json(out, evalx::to_json(evalx::advisory_report(spec, o.leaves, e.what())));
      return kExitOk;
    }
    invalid("--critic is required when the maze fits exact evaluation");
  }
  oracle::OracleCritic const critic = need_critic(o);
  env::Model const model = env::build_model(critic.spec);
  std::vector<tree::DecisionTree> trees;
  std::vector<Real> stage_eps;
  if (!o.trees.empty()) {
    trees = need_trees(o, critic.spec.n_agents);
  } else {
    multiagent::JointConfig const cfg = joint_config(o);
    auto const res = multiagent::grow_joint(model, critic, cfg);
    trees = res.trees;
    // growth-time epsilon: each agent's tree after stage k against the vectors it was grown on
    stage_eps.assign(res.snapshots.size(), 0.0);
    for (auto const& r : res.log)
      stage_eps[r.iteration] += tree::leaf_epsilon(res.snapshots[r.iteration][r.agent], r.vectors) /
                                static_cast<Real>(critic.spec.n_agents);
  }
  evalx::ReturnGapReport const rep = evalx::certify_bound(model, critic, trees, stage_eps);
  write_json(out, evalx::to_json(rep));
  if (o.verbosity > 0)
    std::cerr << "gap " << rep.gap << " bound " << rep.bound_explicit << (rep.holds ? " holds" : " VIOLATED")
              << "\n";
  if (!rep.holds) {
    std::cerr << "certification failed: gap " << rep.gap << " exceeds n*q_max*sqrt(2*eps) = " << rep.bound_explicit
              << "\n";
    return kExitCertify;
  }
  return kExitOk;
}

std::uint64_t resolve_seed(std::string const& text)
{
  std::string s = text;
  if (s.empty())
    if (char const* env = std::getenv("RGMDT_SEED"))
      s = env;
  if (s.empty())
    return 0;
  try {
    std::size_t used = 0;
    unsigned long long v = std::stoull(s, &used, 0);
    if (used != s.size())
      throw std::invalid_argument(s);
    return v;
  } catch (std::exception const&) {
    invalid("seed must be a non-negative integer, got '" + s + "'");
  }
}

std::vector<std::string> replay_args(json const& m, std::string const& out_dir)
{
  if (!m.contains("subcommand") || !m.contains("config"))
    invalid("manifest lacks subcommand/config");
  std::vector<std::string> args{"rgmdt", m["subcommand"].get<std::string>(), "--out-dir", out_dir};
  for (auto const& [k, v] : m["config"].items()) {
    if (k == "out-dir")
      continue;
    if (v.is_boolean()) {
      if (v.get<bool>())
        args.push_back("--" + k);
    } else if (v.is_array()) {
      std::string joined;
      for (std::size_t i = 0; i < v.size(); ++i) {
        auto const& e = v[i];
        joined += (i ? "," : "");
        if (e.is_string())
          joined += e.get<std::string>();
        else if (e.is_number_float()) {
          std::ostringstream os;
          os.precision(17);
          os << e.get<Real>();
          joined += os.str();
        } else
          joined += e.dump();
      }
      if (!joined.empty()) {
        args.push_back("--" + k);
        args.push_back(joined);
      }
    } else if (v.is_string()) {
      args.push_back("--" + k);
      args.push_back(v.get<std::string>());
    } else if (v.is_number_float()) {
      std::ostringstream os;
      os.precision(17);
      os << v.get<Real>();
      args.push_back("--" + k);
      args.push_back(os.str());
    } else {
      args.push_back("--" + k);
      args.push_back(v.dump());
    }
  }
  return args;
}

int dispatch(std::vector<std::string> const& argv_in);

int run_replay(std::string const& manifest, std::string const& out_dir)
{
  if (!fs::exists(manifest))
    invalid("manifest not found: " + manifest);
  json const m = read_json(manifest);
  if (m.value("subcommand", "") == "replay")
    invalid("a replay manifest cannot be replayed");
  return dispatch(replay_args(m, out_dir));
}

int dispatch(std::vector<std::string> const& argv_in)
{
  Options o;
  CLI::App app{"Decision-tree policy extraction from tabular oracles", "rgmdt"};
  app.require_subcommand(1);
  app.set_version_flag("--version", std::string(kVersion));

  std::vector<Command> cmds;
  auto add = [&](std::string name, std::string desc, std::function<int(Options&, json&)> fn) -> Registry& {
    Command c;
    c.name = name;
    c.app = app.add_subcommand(name, desc);
    c.reg = std::make_unique<Registry>();
    c.reg->app = c.app;
    c.action = std::move(fn);
    c.reg->opt("out-dir", o.out_dir, "directory receiving every output");
    c.reg->opt("jobs", o.jobs, "worker threads")->check(CLI::PositiveNumber);
    c.app->add_option("--seed", o.seed_text, "run seed (falls back to RGMDT_SEED, then 0)");
    c.app->add_flag("-v,--verbose", o.verbosity, "progress on stderr");
    cmds.push_back(std::move(c));
    return *cmds.back().reg;
  };

  {
    auto& r = add("train-oracle", "solve or learn the joint action-value table", cmd_train_oracle);
    r.input("maze", o.maze, "maze JSON file or preset name");
    r.opt("mode", o.mode, "exact or qlearn");
    r.opt("q-episodes", o.q_episodes, "Q-learning episodes");
    r.opt("alpha", o.alpha, "Q-learning step size");
    r.opt("explore", o.explore, "epsilon-greedy exploration rate");
    r.flag("finite-horizon", o.finite_horizon, "stage-0 table of the T-step problem");
    r.opt("out", o.out, "critic file name")->default_str("critic.bin");
  }
  {
    auto& r = add("dump-qvec", "write one agent's action-value vectors as CSV", cmd_dump_qvec);
    r.input("critic", o.critic, "critic file");
    r.input("maze", o.maze, "optional maze, checked against the critic");
    r.opt("agent", o.agent, "agent index");
    r.inputs("trees", o.trees, "condition on these trees (one per agent)");
    r.flag("sampled", o.sampled, "rollout-sampled vectors");
    r.opt("k1", o.k1, "sampled transitions");
    r.opt("k2", o.k2, "opponent observations kept per cell");
    r.opt("out", o.out, "CSV file name")->default_str("qvec.csv");
  }
  {
    auto& r = add("cluster", "cluster a dumped vector set", cmd_cluster);
    r.input("qvec", o.qvec, "CSV from dump-qvec");
    r.opt("labels", o.labels, "number of clusters");
    add_cluster_options(r, o);
    r.opt("out", o.out, "JSON file name")->default_str("cluster.json");
  }
  {
    auto& r = add("extract", "grow a single-agent tree", cmd_extract);
    r.input("critic", o.critic, "critic file");
    r.input("maze", o.maze, "optional maze, checked against the critic");
    add_growth_options(r, o);
    r.opt("out", o.out, "tree file name")->default_str("tree.json");
  }
  {
    auto& r = add("extract-multi", "grow one tree per agent with iterative conditioning", cmd_extract_multi);
    r.input("critic", o.critic, "critic file");
    r.input("maze", o.maze, "optional maze, checked against the critic");
    add_growth_options(r, o);
    r.flag("unconditioned", o.unconditioned, "every stage uses the oracle-conditioned vectors");
    r.opt("agent-order", o.agent_order, "ascending or shuffle");
    r.opt("order-seed", o.order_seed, "seed of the shuffled agent order");
  }
  {
    auto& r = add("export-dot", "render a tree as Graphviz DOT", cmd_export_dot);
    r.dump.push_back([&o](json& j) { j["tree"] = fs::absolute(o.tree).lexically_normal().string(); });
    r.app->add_option("tree,--tree", o.tree, "tree JSON file");
    r.opt("out", o.out, "DOT file name");
  }
  {
    auto& r = add("evaluate", "exact and episodic returns of a set of trees", cmd_evaluate);
    r.input("critic", o.critic, "critic file");
    r.inputs("trees", o.trees, "tree files, one per agent");
    r.opt("episodes", o.episodes, "rollouts (0: exact expectation)");
    r.opt("eval-seed", o.eval_seed, "rollout seed");
    r.opt("out", o.out, "JSON file name")->default_str("evaluate.json");
  }
  {
    auto& r = add("sweep", "returns across leaf budgets and seeds", cmd_sweep);
    r.input("critic", o.critic, "critic file");
    r.list("leaves-set", o.leaves_set, "leaf budgets");
    r.list("seeds", o.seeds, "growth seeds");
    r.list("methods", o.methods, "rgmdt, rgmdt-unconditioned, cart");
    r.opt("episodes", o.episodes, "rollouts (0: exact expectation)");
    r.opt("eval-seed", o.eval_seed, "rollout seed");
    add_growth_options(r, o, false);
    r.opt("out", o.out, "CSV file name")->default_str("sweep.csv");
  }
  {
    auto& r = add("ablate", "returns per clustering metric and label-noise level", cmd_ablate);
    r.input("critic", o.critic, "critic file");
    r.list("metrics", o.metrics, "metrics to compare");
    r.list("noise", o.noise, "label-noise levels");
    r.list("seeds", o.seeds, "growth seeds");
    r.opt("episodes", o.episodes, "rollouts (0: exact expectation)");
    r.opt("eval-seed", o.eval_seed, "rollout seed");
    add_growth_options(r, o);
    r.opt("out", o.out, "CSV file name")->default_str("ablation.csv");
  }
  {
    auto& r = add("certify", "check gap <= n q_max sqrt(2 eps) under exact evaluation", cmd_certify);
    r.input("critic", o.critic, "critic file");
    r.input("maze", o.maze, "maze; alone it yields an advisory report when exact evaluation is infeasible");
    r.inputs("trees", o.trees, "tree files; omitted: grow them with the growth options");
    add_growth_options(r, o);
    r.flag("unconditioned", o.unconditioned, "every stage uses the oracle-conditioned vectors");
    r.opt("out", o.out, "JSON file name")->default_str("certify.json");
  }
  CLI::App* replay = app.add_subcommand("replay", "re-run the command recorded in a manifest");
  replay->add_option("manifest,--manifest", o.manifest, "manifest.json")->required();
  replay->add_option("--out-dir", o.out_dir, "directory receiving the re-run outputs")->capture_default_str();

  std::vector<std::string> rev(argv_in.rbegin(), argv_in.rend() - 1);
  try {
    app.parse(rev);
  } catch (CLI::Success const& e) {
    return app.exit(e);
  } catch (CLI::ParseError const& e) {
    app.exit(e);
    return kExitInvalid;
  }

  if (replay->parsed())
    return run_replay(o.manifest, o.out_dir);

  for (auto& c : cmds) {
    if (!c.app->parsed())
      continue;
    o.seed = resolve_seed(o.seed_text);
    if (o.out_dir.empty())
      invalid("--out-dir must not be empty");
    fs::create_directories(o.out_dir);
    json config;
    for (auto const& d : c.reg->dump)
      d(config);
    config.erase("out-dir");
    config["seed"] = o.seed;
    json inputs = json::object();
    for (std::string key : {"maze", "critic", "qvec"}) {
      if (!config.contains(key))
        continue;
      std::string const p = config[key].get<std::string>();
      if (fs::exists(p))
        inputs[key] = hex64(fnv1a(read_file(p)));
    }
    if (config.contains("trees"))
      for (auto const& p : config["trees"])
        if (fs::exists(p.get<std::string>()))
          inputs["trees"].push_back(hex64(fnv1a(read_file(p.get<std::string>()))));
    if (c.name == "export-dot" && fs::exists(o.tree))
      inputs["tree"] = hex64(fnv1a(read_file(o.tree)));
    json manifest = {{"tool", "rgmdt"},
                     {"version", kVersion},
                     {"subcommand", c.name},
                     {"seed", o.seed},
                     {"config", config},
                     {"inputs", inputs}};
    write_json(output_path(o, "manifest.json"), manifest);
    json extra;
    return c.action(o, extra);
  }
  return kExitInvalid;
}

} // namespace

int run(int argc, char** argv)
{
  std::vector<std::string> args(argv, argv + argc);
  try {
    return dispatch(args);
  } catch (InvalidArgument const& e) {
    std::cerr << "error: " << e.what() << "\n";
    return kExitInvalid;
  } catch (std::exception const& e) {
    std::cerr << "error: " << e.what() << "\n";
    return kExitInternal;
  }
}

} // namespace rgmdt::cli
