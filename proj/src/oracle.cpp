#include "rgmdt/oracle.hpp"

#include "rgmdt/parallel.hpp"
#include "rgmdt/random.hpp"

#include <algorithm>
#include <cmath>
#include <cstring>
#include <fstream>
#include <limits>
#include <sstream>

namespace rgmdt::oracle {

Index OracleCritic::greedy(Index obs) const
{
  Index best = 0;
  for (Index a = 1; a < q.cols(); ++a)
    if (q(obs, a) > q(obs, best))
      best = a;
  return best;
}

namespace {

void backup_from(env::Model const& m, Vector const& v, Matrix& out)
{
  Real const g = m.spec.gamma;
  for (Index s = 0; s < out.rows(); ++s)
    for (Index a = 0; a < out.cols(); ++a) {
      auto const k = static_cast<std::size_t>(m.at(s, a));
      out(s, a) = m.reward[k] + (m.done[k] ? 0.0 : g * v[m.next[k]]);
    }
}

// One Bellman optimality backup of q into out.
void backup(env::Model const& m, Matrix const& q, Matrix& out) { backup_from(m, q.rowwise().maxCoeff(), out); }

// max over the joint actions still open in each row
Vector masked_max(Matrix const& q, std::vector<std::vector<Index>> const& open)
{
  Vector v(q.rows());
  for (Index s = 0; s < q.rows(); ++s) {
    Real best = -std::numeric_limits<Real>::infinity();
    for (Index a : open[static_cast<std::size_t>(s)])
      best = std::max(best, q(s, a));
    v[s] = best;
  }
  return v;
}

} // namespace

Real bellman_residual(env::Model const& model, Matrix const& q)
{
  Matrix t(q.rows(), q.cols());
  backup(model, q, t);
  return (t - q).cwiseAbs().maxCoeff();
}

OracleCritic solve_exact(env::MazeSpec const& spec, SolveOptions const& opt)
{
  return solve_exact(env::build_model(spec), opt);
}

OracleCritic solve_exact(env::Model const& model, SolveOptions const& opt)
{
  OracleCritic c;
  c.spec = model.spec;
  c.provenance = Provenance::ExactDp;
  c.finite_horizon = opt.finite_horizon;
  Index const S = model.space.n_obs(), A = model.space.n_actions();
  Matrix q = Matrix::Zero(S, A), next(S, A);

  if (opt.finite_horizon) {
    // Q_T = 0, Q_t = r + gamma max Q_{t+1}; keep the first-stage table.
    for (int t = 0; t < model.spec.horizon; ++t) {
      backup(model, q, next);
      q.swap(next);
    }
    c.q = q;
    c.iterations = model.spec.horizon;
    c.residual = bellman_residual(model, q);
    return c;
  }

  Real const g = model.spec.gamma;
  int it = 0;
  for (; it < opt.max_iters; ++it) {
    backup(model, q, next);
    Real const diff = (next - q).cwiseAbs().maxCoeff();
    q.swap(next);
    // residual of the new iterate is at most gamma * diff
    if (g * diff <= opt.tol * 0.5)
      break;
  }
  c.q = q;
  c.iterations = it + 1;
  c.residual = bellman_residual(model, q);
  if (c.residual > opt.tol)
    throw Error("value iteration did not reach the residual tolerance");
  return c;
}

OracleCritic revise(env::Model const& model, OracleCritic const& critic,
                    std::vector<std::optional<std::vector<int>>> const& fixed, SolveOptions const& opt)
{
  env::JointSpace const& sp = model.space;
  if (static_cast<int>(fixed.size()) != sp.n_agents())
    throw InvalidArgument("revise: one entry per agent required");
  if (critic.provenance != Provenance::ExactDp ||
      std::none_of(fixed.begin(), fixed.end(), [](auto const& f) { return f.has_value(); }))
    return critic;
  for (auto const& f : fixed)
    if (f && static_cast<int>(f->size()) != sp.cells())
      throw InvalidArgument("revise: local policy does not match the maze size");

  Index const S = sp.n_obs(), A = sp.n_actions();
  std::vector<std::vector<Index>> open(static_cast<std::size_t>(S));
  for (Index s = 0; s < S; ++s)
    for (Index a = 0; a < A; ++a) {
      bool ok = true;
      for (int i = 0; i < sp.n_agents() && ok; ++i)
        ok = !fixed[i] || (*fixed[i])[sp.local_obs(s, i)] == sp.local_action(a, i);
      if (ok)
        open[s].push_back(a);
    }

  OracleCritic c = critic;
  // Q* bounds the restricted fixed point from above, so iterating down from it is safe
  Matrix q = critic.finite_horizon ? Matrix::Zero(S, A) : critic.q, next(S, A);
  int const cap = critic.finite_horizon ? model.spec.horizon : opt.max_iters;
  int it = 0;
  for (; it < cap; ++it) {
    backup_from(model, masked_max(q, open), next);
    Real const diff = (next - q).cwiseAbs().maxCoeff();
    q.swap(next);
    if (!critic.finite_horizon && model.spec.gamma * diff <= opt.tol * 0.5)
      break;
  }
  c.q = q;
  c.iterations = critic.finite_horizon ? cap : it + 1;
  backup_from(model, masked_max(q, open), next);
  c.residual = (next - q).cwiseAbs().maxCoeff();
  return c;
}

OracleCritic learn_q(env::MazeSpec const& spec, int episodes, Real alpha, Real explore, std::uint64_t seed)
{
  if (!(alpha > 0.0 && alpha <= 1.0))
    throw InvalidArgument("learn_q: alpha must lie in (0, 1]");
  if (!(explore >= 0.0 && explore <= 1.0))
    throw InvalidArgument("learn_q: explore rate must lie in [0, 1]");
  if (episodes < 0)
    throw InvalidArgument("learn_q: episodes must be non-negative");
  env::Model const m = env::build_model(spec);
  OracleCritic c;
  c.spec = spec;
  c.provenance = Provenance::QLearning;
  c.qlearn = {episodes, alpha, explore, seed};
  Index const A = m.space.n_actions();
  c.q = Matrix::Zero(m.space.n_obs(), A);

  auto const support = spec.start_support();
  Rng rng(seed);
  for (int e = 0; e < episodes; ++e) {
    std::vector<int> local(spec.n_agents);
    for (auto& l : local)
      l = spec.cell_index(support[rng.below(support.size())]);
    Index s = m.space.obs_index(local);
    for (int t = 0; t < spec.horizon; ++t) {
      Index a;
      if (rng.uniform() < explore)
        a = static_cast<Index>(rng.below(static_cast<std::uint64_t>(A)));
      else
        a = c.greedy(s);
      auto const k = static_cast<std::size_t>(m.at(s, a));
      Index const s2 = m.next[k];
      Real const target = m.reward[k] + (m.done[k] ? 0.0 : spec.gamma * c.q.row(s2).maxCoeff());
      c.q(s, a) += alpha * (target - c.q(s, a));
      if (m.done[k])
        break;
      s = s2;
    }
  }
  c.residual = bellman_residual(m, c.q);
  c.iterations = episodes;
  return c;
}

PolicyTable greedy_policy(OracleCritic const& critic)
{
  PolicyTable p(static_cast<std::size_t>(critic.q.rows()));
  for (Index s = 0; s < critic.q.rows(); ++s)
    p[s] = critic.greedy(s);
  return p;
}

PolicyTable compose_policy(env::JointSpace const& space, std::function<int(int, int)> const& local)
{
  // Tabulate each agent's local decision once.
  std::vector<std::vector<int>> moves(space.n_agents(), std::vector<int>(space.cells()));
  for (int j = 0; j < space.n_agents(); ++j)
    for (int c = 0; c < space.cells(); ++c)
      moves[j][c] = local(j, c);
  PolicyTable p(static_cast<std::size_t>(space.n_obs()));
  std::vector<int> act(space.n_agents());
  for (Index s = 0; s < space.n_obs(); ++s) {
    for (int j = 0; j < space.n_agents(); ++j)
      act[j] = moves[j][space.local_obs(s, j)];
    p[s] = space.action_index(act);
  }
  return p;
}

Real Visitation::conditional(int agent, Index joint) const
{
  int const oj = space.local_obs(joint, agent);
  Real const mj = marginal[agent][oj];
  if (mj <= 0.0) {
    Real const others = static_cast<Real>(space.n_obs()) / space.cells();
    return 1.0 / others;
  }
  return d_obs[joint] / mj;
}

Vector Visitation::label_mass(int agent, std::vector<int> const& label_of_cell, int n_labels) const
{
  Vector out = Vector::Zero(n_labels);
  for (int c = 0; c < space.cells(); ++c)
    if (label_of_cell[c] >= 0)
      out[label_of_cell[c]] += marginal[agent][c];
  return out;
}

namespace {

void finish(Visitation& v, env::Model const& m, Vector raw)
{
  v.space = m.space;
  v.mass = raw.sum();
  v.d_obs = v.mass > 0.0 ? Vector(raw / v.mass) : raw;
  v.marginal.assign(m.spec.n_agents, Vector::Zero(m.space.cells()));
  for (Index s = 0; s < m.space.n_obs(); ++s)
    for (int j = 0; j < m.spec.n_agents; ++j)
      v.marginal[j][m.space.local_obs(s, j)] += v.d_obs[s];
}

int rollout_cutoff(Real gamma, int horizon)
{
  int const tail = static_cast<int>(std::ceil(std::log(1e-12) / std::log(gamma)));
  return horizon > 0 ? std::min(horizon, tail) : tail;
}

Index sample_start(env::Model const& m, std::vector<env::Cell> const& support, Rng& rng)
{
  std::vector<int> local(m.spec.n_agents);
  for (auto& l : local)
    l = m.spec.cell_index(support[rng.below(support.size())]);
  return m.space.obs_index(local);
}

} // namespace

Visitation visitation(env::Model const& m, PolicyTable const& policy, VisitOptions const& opt)
{
  Index const S = m.space.n_obs();
  if (static_cast<Index>(policy.size()) != S)
    throw InvalidArgument("visitation: policy table does not match the joint observation space");
  Real const g = m.spec.gamma;
  Visitation v;

  if (opt.mode == VisitMode::Empirical) {
    if (opt.rollouts <= 0)
      throw InvalidArgument("visitation: empirical mode needs rollouts > 0");
    auto const support = m.spec.start_support();
    int const cutoff = rollout_cutoff(g, opt.horizon);
    // Fixed-size chunks keep the reduction independent of --jobs.
    std::size_t const chunk = 1024;
    std::size_t const n_chunks = (static_cast<std::size_t>(opt.rollouts) + chunk - 1) / chunk;
    std::vector<Vector> parts(n_chunks, Vector::Zero(S));
    parallel_for(n_chunks, opt.jobs, [&](std::size_t c) {
      Rng rng(derive_seed(opt.seed, c));
      std::size_t const end = std::min<std::size_t>(static_cast<std::size_t>(opt.rollouts), (c + 1) * chunk);
      for (std::size_t e = c * chunk; e < end; ++e) {
        Index s = sample_start(m, support, rng);
        Real w = 1.0 - g;
        for (int t = 0; t < cutoff; ++t) {
          parts[c][s] += w;
          auto const k = static_cast<std::size_t>(m.at(s, policy[s]));
          if (m.done[k])
            break;
          s = m.next[k];
          w *= g;
        }
      }
    });
    Vector raw = Vector::Zero(S);
    for (auto const& p : parts)
      raw += p;
    finish(v, m, raw / static_cast<Real>(opt.rollouts));
    return v;
  }

  Vector p = m.mu, acc = Vector::Zero(S), nxt(S);
  Real w = 1.0 - g;
  int const limit = opt.horizon > 0 ? opt.horizon : std::numeric_limits<int>::max();
  for (int t = 0; t < limit; ++t) {
    acc += w * p;
    nxt.setZero();
    for (Index s = 0; s < S; ++s) {
      if (p[s] == 0.0)
        continue;
      auto const k = static_cast<std::size_t>(m.at(s, policy[s]));
      if (!m.done[k])
        nxt[m.next[k]] += p[s];
    }
    p.swap(nxt);
    w *= g;
    // everything still to come is bounded by the surviving mass
    if (p.sum() * w / (1.0 - g) <= opt.tol * 1e-3)
      break;
  }
  finish(v, m, acc);
  return v;
}

Vector evaluate_policy(env::Model const& m, PolicyTable const& policy, Real tol)
{
  Index const S = m.space.n_obs();
  Real const g = m.spec.gamma;
  Vector v = Vector::Zero(S);
  // Gauss-Seidel sweeps on the deterministic chain.
  for (int it = 0; it < 10000000; ++it) {
    Real diff = 0.0;
    for (Index s = 0; s < S; ++s) {
      auto const k = static_cast<std::size_t>(m.at(s, policy[s]));
      Real const val = m.reward[k] + (m.done[k] ? 0.0 : g * v[m.next[k]]);
      diff = std::max(diff, std::abs(val - v[s]));
      v[s] = val;
    }
    if (diff <= tol * (1.0 - g))
      break;
  }
  return v;
}

Real discounted_return(env::Model const& m, PolicyTable const& policy)
{
  return (1.0 - m.spec.gamma) * m.mu.dot(evaluate_policy(m, policy));
}

EpisodeStats episodic_return(env::Model const& m, PolicyTable const& policy, int episodes, std::uint64_t seed,
                             int jobs)
{
  auto run = [&](Index s) {
    Real total = 0.0;
    for (int t = 0; t < m.spec.horizon; ++t) {
      auto const k = static_cast<std::size_t>(m.at(s, policy[s]));
      total += m.reward[k];
      if (m.done[k])
        break;
      s = m.next[k];
    }
    return total;
  };
  EpisodeStats st;
  if (episodes <= 0) {
    Real mean = 0.0, sq = 0.0;
    for (Index s = 0; s < m.space.n_obs(); ++s) {
      if (m.mu[s] == 0.0)
        continue;
      Real const r = run(s);
      mean += m.mu[s] * r;
      sq += m.mu[s] * r * r;
    }
    st.mean = mean;
    st.stddev = std::sqrt(std::max(0.0, sq - mean * mean));
    return st;
  }
  auto const support = m.spec.start_support();
  std::vector<Real> r(static_cast<std::size_t>(episodes));
  parallel_for(r.size(), jobs, [&](std::size_t e) {
    Rng rng(derive_seed(seed, e));
    r[e] = run(sample_start(m, support, rng));
  });
  Real mean = 0.0;
  for (Real x : r)
    mean += x;
  mean /= episodes;
  Real var = 0.0;
  for (Real x : r)
    var += (x - mean) * (x - mean);
  st.mean = mean;
  st.stddev = episodes > 1 ? std::sqrt(var / (episodes - 1)) : 0.0;
  st.episodes = episodes;
  return st;
}

namespace {

constexpr char kMagic[8] = {'R', 'G', 'M', 'D', 'T', 'Q', 'T', 'B'};
constexpr std::uint32_t kFormat = 1;

template <typename T> void put(std::string& out, T v)
{
  char buf[sizeof(T)];
  std::memcpy(buf, &v, sizeof(T));
  out.append(buf, sizeof(T));
}

template <typename T> T take(std::string const& in, std::size_t& pos)
{
  if (pos + sizeof(T) > in.size())
    throw InvalidArgument("critic file truncated");
  T v;
  std::memcpy(&v, in.data() + pos, sizeof(T));
  pos += sizeof(T);
  return v;
}

} // namespace

std::string critic_bytes(OracleCritic const& c)
{
  std::string out(kMagic, sizeof(kMagic));
  put<std::uint32_t>(out, kFormat);
  put<std::uint32_t>(out, static_cast<std::uint32_t>(c.provenance));
  put<std::uint8_t>(out, c.finite_horizon ? 1 : 0);
  put<std::int32_t>(out, c.qlearn.episodes);
  put<double>(out, c.qlearn.alpha);
  put<double>(out, c.qlearn.explore);
  put<std::uint64_t>(out, c.qlearn.seed);
  put<double>(out, c.residual);
  put<std::int32_t>(out, c.iterations);
  std::string const maze = env::to_json(c.spec).dump();
  put<std::uint64_t>(out, maze.size());
  out += maze;
  put<std::int64_t>(out, c.q.rows());
  put<std::int64_t>(out, c.q.cols());
  for (Index s = 0; s < c.q.rows(); ++s)
    for (Index a = 0; a < c.q.cols(); ++a)
      put<double>(out, c.q(s, a));
  return out;
}

void save_critic(OracleCritic const& c, std::filesystem::path const& path)
{
  std::ofstream f(path, std::ios::binary);
  if (!f)
    throw InvalidArgument("cannot write critic file '" + path.string() + "'");
  std::string const bytes = critic_bytes(c);
  f.write(bytes.data(), static_cast<std::streamsize>(bytes.size()));
}

OracleCritic load_critic(std::filesystem::path const& path)
{
  std::ifstream f(path, std::ios::binary);
  if (!f)
    throw InvalidArgument("cannot open critic file '" + path.string() + "'");
  std::ostringstream ss;
  ss << f.rdbuf();
  std::string const in = ss.str();
  if (in.size() < sizeof(kMagic) || std::memcmp(in.data(), kMagic, sizeof(kMagic)) != 0)
    throw InvalidArgument("'" + path.string() + "' is not a critic file");
  std::size_t pos = sizeof(kMagic);
  if (take<std::uint32_t>(in, pos) != kFormat)
    throw InvalidArgument("unsupported critic format version in '" + path.string() + "'");
  OracleCritic c;
  auto const prov = take<std::uint32_t>(in, pos);
  if (prov > 1)
    throw InvalidArgument("unknown critic provenance");
  c.provenance = static_cast<Provenance>(prov);
  c.finite_horizon = take<std::uint8_t>(in, pos) != 0;
  c.qlearn.episodes = take<std::int32_t>(in, pos);
  c.qlearn.alpha = take<double>(in, pos);
  c.qlearn.explore = take<double>(in, pos);
  c.qlearn.seed = take<std::uint64_t>(in, pos);
  c.residual = take<double>(in, pos);
  c.iterations = take<std::int32_t>(in, pos);
  auto const len = take<std::uint64_t>(in, pos);
  if (pos + len > in.size())
    throw InvalidArgument("critic file truncated");
  c.spec = env::maze_from_json(nlohmann::json::parse(in.substr(pos, len)));
  pos += len;
  auto const rows = take<std::int64_t>(in, pos);
  auto const cols = take<std::int64_t>(in, pos);
  env::JointSpace const space = env::joint_space(c.spec);
  if (rows != space.n_obs() || cols != space.n_actions())
    throw InvalidArgument("critic table dimensions do not match its maze");
  c.q.resize(rows, cols);
  for (Index s = 0; s < rows; ++s)
    for (Index a = 0; a < cols; ++a)
      c.q(s, a) = take<double>(in, pos);
  if (pos != in.size())
    throw InvalidArgument("trailing bytes in critic file");
  return c;
}

} // namespace rgmdt::oracle
