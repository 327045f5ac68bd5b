#include "rgmdt/env.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <set>
#include <sstream>

namespace rgmdt::env {

namespace {

std::string describe(Cell c)
{
  std::ostringstream os;
  os << "(" << c.x << ", " << c.y << ")";
  return os.str();
}

int manhattan(Cell a, Cell b) { return std::abs(a.x - b.x) + std::abs(a.y - b.y); }

} // namespace

void MazeSpec::validate() const
{
  if (width < 1 || height < 1)
    throw InvalidArgument("maze '" + name + "': width and height must be positive");
  if (horizon < 1)
    throw InvalidArgument("maze '" + name + "': horizon must be >= 1");
  if (n_agents < 1)
    throw InvalidArgument("maze '" + name + "': n_agents must be >= 1");
  if (!(gamma > 0.0 && gamma < 1.0))
    throw InvalidArgument("maze '" + name + "': gamma must lie in (0, 1)");
  if (state_cap < 1)
    throw InvalidArgument("maze '" + name + "': state_cap must be positive");
  std::set<Cell> seen;
  for (auto const& t : targets) {
    if (!inside(t.pos))
      throw InvalidArgument("maze '" + name + "': target " + describe(t.pos) + " outside the grid");
    if (!seen.insert(t.pos).second)
      throw InvalidArgument("maze '" + name + "': duplicate target at " + describe(t.pos));
  }
  for (auto const& o : obstacles) {
    if (!inside(o))
      throw InvalidArgument("maze '" + name + "': obstacle " + describe(o) + " outside the grid");
    if (!seen.insert(o).second)
      throw InvalidArgument("maze '" + name + "': obstacle " + describe(o) + " overlaps a target or obstacle");
  }
  for (auto const& s : start_cells)
    if (!inside(s))
      throw InvalidArgument("maze '" + name + "': start cell " + describe(s) + " outside the grid");
  if (start_support().empty())
    throw InvalidArgument("maze '" + name + "': no admissible start cell");
}

int MazeSpec::target_at(Cell c) const
{
  for (std::size_t k = 0; k < targets.size(); ++k)
    if (targets[k].pos == c)
      return static_cast<int>(k);
  return -1;
}

bool MazeSpec::is_obstacle(Cell c) const { return std::find(obstacles.begin(), obstacles.end(), c) != obstacles.end(); }

std::vector<Cell> MazeSpec::start_support() const
{
  if (!start_cells.empty())
    return start_cells;
  std::vector<Cell> free;
  for (int idx = 0; idx < cells(); ++idx) {
    Cell const c = cell_at(idx);
    if (target_at(c) < 0 && !is_obstacle(c))
      free.push_back(c);
  }
  return free;
}

Cell apply_move(MazeSpec const& spec, Cell c, int action)
{
  if (action < 0 || action >= kNumMoves)
    throw InvalidArgument("invalid action index " + std::to_string(action) + " (expected 0..3)");
  Cell n = c;
  switch (static_cast<Move>(action)) {
  case Move::Up: --n.y; break;
  case Move::Down: ++n.y; break;
  case Move::Left: --n.x; break;
  case Move::Right: ++n.x; break;
  }
  return spec.inside(n) ? n : c;
}

StepResult step(MazeSpec const& spec, JointObservation const& obs, JointAction const& act)
{
  auto const n = static_cast<std::size_t>(spec.n_agents);
  if (obs.per_agent.size() != n)
    throw InvalidArgument("observation has " + std::to_string(obs.per_agent.size()) + " agents, maze expects " +
                          std::to_string(n));
  if (act.per_agent.size() != n)
    throw InvalidArgument("action has " + std::to_string(act.per_agent.size()) + " agents, maze expects " +
                          std::to_string(n));
  for (auto const& c : obs.per_agent)
    if (!spec.inside(c))
      throw InvalidArgument("observation " + describe(c) + " outside the grid");

  StepResult out;
  out.next.per_agent.resize(n);
  for (std::size_t i = 0; i < n; ++i)
    out.next.per_agent[i] = apply_move(spec, obs.per_agent[i], act.per_agent[i]);

  Real r = 0.0;
  int first_target = -2;
  bool all_same_target = true;
  for (auto const& c : out.next.per_agent) {
    if (spec.is_obstacle(c))
      r += spec.obstacle_penalty;
    int const k = spec.target_at(c);
    if (k >= 0) {
      r += spec.targets[k].reward;
      out.done = true;
    }
    if (first_target == -2)
      first_target = k;
    if (k < 0 || k != first_target)
      all_same_target = false;
  }
  if (n > 1 && spec.group_reward && all_same_target && first_target >= 0)
    r += spec.targets[first_target].group_bonus;
  if (spec.agent_collision_penalty != 0.0) {
    for (std::size_t i = 0; i < n; ++i)
      for (std::size_t j = i + 1; j < n; ++j)
        if (out.next.per_agent[i] == out.next.per_agent[j])
          r += spec.agent_collision_penalty;
  }
  if (spec.distance_shaping != 0.0 && !spec.targets.empty()) {
    Real dist = 0.0;
    for (auto const& c : out.next.per_agent) {
      int best = manhattan(c, spec.targets.front().pos);
      for (auto const& t : spec.targets)
        best = std::min(best, manhattan(c, t.pos));
      dist += best;
    }
    r -= spec.distance_shaping * dist;
  }
  out.reward = r;
  return out;
}

Real reward_bound(MazeSpec const& spec)
{
  Real const n = spec.n_agents;
  Real target = 0.0, bonus = 0.0;
  for (auto const& t : spec.targets) {
    target = std::max(target, std::abs(t.reward));
    bonus = std::max(bonus, std::abs(t.group_bonus));
  }
  Real b = n * target + n * std::abs(spec.obstacle_penalty);
  if (spec.n_agents > 1 && spec.group_reward)
    b += bonus;
  b += n * (n - 1) / 2 * std::abs(spec.agent_collision_penalty);
  b += std::abs(spec.distance_shaping) * n * (spec.width + spec.height);
  return b;
}

JointSpace::JointSpace(int n_agents, int cells) : n_agents_(n_agents), cells_(cells), n_obs_(1), n_actions_(1)
{
  for (int i = 0; i < n_agents; ++i) {
    obs_stride_.push_back(n_obs_);
    act_stride_.push_back(n_actions_);
    n_obs_ *= cells;
    n_actions_ *= kNumMoves;
  }
}

Index JointSpace::obs_index(std::vector<int> const& local) const
{
  Index idx = 0;
  for (int i = 0; i < n_agents_; ++i)
    idx += obs_stride_[i] * local[i];
  return idx;
}

std::vector<int> JointSpace::obs_locals(Index joint) const
{
  std::vector<int> out(n_agents_);
  for (int i = 0; i < n_agents_; ++i)
    out[i] = local_obs(joint, i);
  return out;
}

int JointSpace::local_obs(Index joint, int agent) const { return static_cast<int>((joint / obs_stride_[agent]) % cells_); }

Index JointSpace::with_local_obs(Index joint, int agent, int local) const
{
  return joint + (local - local_obs(joint, agent)) * obs_stride_[agent];
}

Index JointSpace::action_index(std::vector<int> const& local) const
{
  Index idx = 0;
  for (int i = 0; i < n_agents_; ++i)
    idx += act_stride_[i] * local[i];
  return idx;
}

std::vector<int> JointSpace::action_locals(Index joint) const
{
  std::vector<int> out(n_agents_);
  for (int i = 0; i < n_agents_; ++i)
    out[i] = local_action(joint, i);
  return out;
}

int JointSpace::local_action(Index joint, int agent) const
{
  return static_cast<int>((joint / act_stride_[agent]) % kNumMoves);
}

Index JointSpace::with_local_action(Index joint, int agent, int local) const
{
  return joint + (local - local_action(joint, agent)) * act_stride_[agent];
}

JointSpace joint_space(MazeSpec const& spec)
{
  spec.validate();
  double const size = std::pow(static_cast<double>(spec.cells()), spec.n_agents);
  if (size > static_cast<double>(spec.state_cap))
    throw CapExceeded("joint observation space of maze '" + spec.name + "' has " + std::to_string(size) +
                      " states, above the cap of " + std::to_string(spec.state_cap) +
                      "; use empirical mode (learn_q + empirical visitation) or raise state_cap");
  return JointSpace(spec.n_agents, spec.cells());
}

Index joint_index(MazeSpec const& spec, JointSpace const& space, JointObservation const& obs)
{
  std::vector<int> local;
  for (auto const& c : obs.per_agent)
    local.push_back(spec.cell_index(c));
  return space.obs_index(local);
}

JointObservation joint_observation(MazeSpec const& spec, JointSpace const& space, Index joint)
{
  JointObservation o;
  for (int l : space.obs_locals(joint))
    o.per_agent.push_back(spec.cell_at(l));
  return o;
}

std::vector<JointObservation> enumerate_states(MazeSpec const& spec)
{
  JointSpace const space = joint_space(spec);
  std::vector<JointObservation> out;
  out.reserve(static_cast<std::size_t>(space.n_obs()));
  for (Index s = 0; s < space.n_obs(); ++s)
    out.push_back(joint_observation(spec, space, s));
  return out;
}

Model build_model(MazeSpec const& spec)
{
  Model m;
  m.spec = spec;
  m.space = joint_space(spec);
  auto const S = m.space.n_obs();
  auto const A = m.space.n_actions();
  m.next.resize(static_cast<std::size_t>(S * A));
  m.reward.resize(m.next.size());
  m.done.resize(m.next.size());
  for (Index s = 0; s < S; ++s) {
    JointObservation const o = joint_observation(spec, m.space, s);
    for (Index a = 0; a < A; ++a) {
      JointAction ja{m.space.action_locals(a)};
      StepResult const r = step(spec, o, ja);
      auto const k = static_cast<std::size_t>(m.at(s, a));
      m.next[k] = joint_index(spec, m.space, r.next);
      m.reward[k] = r.reward;
      m.done[k] = r.done ? 1 : 0;
    }
  }
  // Product of per-agent uniform start distributions.
  std::vector<Cell> const support = spec.start_support();
  Vector local = Vector::Zero(spec.cells());
  for (auto const& c : support)
    local[spec.cell_index(c)] += 1.0 / static_cast<Real>(support.size());
  m.mu = Vector::Zero(S);
  for (Index s = 0; s < S; ++s) {
    Real p = 1.0;
    for (int i = 0; i < spec.n_agents && p > 0.0; ++i)
      p *= local[m.space.local_obs(s, i)];
    m.mu[s] = p;
  }
  return m;
}

FeatureEncoding FeatureEncoding::for_maze(MazeSpec const& spec)
{
  FeatureEncoding e;
  e.width = spec.width;
  e.height = spec.height;
  e.obstacle_flags = spec.observe_obstacles;
  if (e.obstacle_flags)
    e.obstacles = spec.obstacles;
  return e;
}

Vector FeatureEncoding::encode(Cell c) const
{
  Vector f(dim());
  f[0] = width > 1 ? static_cast<Real>(c.x) / (width - 1) : 0.0;
  f[1] = height > 1 ? static_cast<Real>(c.y) / (height - 1) : 0.0;
  if (obstacle_flags) {
    Cell const nb[4] = {{c.x, c.y - 1}, {c.x, c.y + 1}, {c.x - 1, c.y}, {c.x + 1, c.y}};
    for (int k = 0; k < 4; ++k)
      f[2 + k] = std::find(obstacles.begin(), obstacles.end(), nb[k]) != obstacles.end() ? 1.0 : 0.0;
  }
  return f;
}

namespace {

nlohmann::json cell_json(Cell c) { return {{"x", c.x}, {"y", c.y}}; }

void check_keys(nlohmann::json const& j, std::initializer_list<std::string_view> allowed, std::string_view what)
{
  if (!j.is_object())
    throw InvalidArgument(std::string(what) + ": expected a JSON object");
  for (auto it = j.begin(); it != j.end(); ++it) {
    if (std::find(allowed.begin(), allowed.end(), it.key()) == allowed.end())
      throw InvalidArgument(std::string(what) + ": unknown field '" + it.key() + "'");
  }
}

Cell cell_from(nlohmann::json const& j, std::string_view what)
{
  check_keys(j, {"x", "y"}, what);
  if (!j.contains("x") || !j.contains("y") || !j["x"].is_number_integer() || !j["y"].is_number_integer())
    throw InvalidArgument(std::string(what) + ": cells need integer 'x' and 'y'");
  return {j["x"].get<int>(), j["y"].get<int>()};
}

template <typename T> T get_or(nlohmann::json const& j, char const* key, T fallback)
{
  if (!j.contains(key))
    return fallback;
  try {
    return j.at(key).get<T>();
  } catch (nlohmann::json::exception const& e) {
    throw InvalidArgument(std::string("maze field '") + key + "': " + e.what());
  }
}

} // namespace

nlohmann::json to_json(FeatureEncoding const& enc)
{
  nlohmann::json obs = nlohmann::json::array();
  for (auto const& c : enc.obstacles)
    obs.push_back(cell_json(c));
  return {{"kind", "grid_xy_normalized"},
          {"width", enc.width},
          {"height", enc.height},
          {"obstacle_flags", enc.obstacle_flags},
          {"obstacles", obs}};
}

FeatureEncoding feature_encoding_from_json(nlohmann::json const& j)
{
  check_keys(j, {"kind", "width", "height", "obstacle_flags", "obstacles"}, "feature_encoding");
  if (j.value("kind", "") != "grid_xy_normalized")
    throw InvalidArgument("feature_encoding: unsupported kind");
  FeatureEncoding e;
  e.width = j.at("width").get<int>();
  e.height = j.at("height").get<int>();
  e.obstacle_flags = j.value("obstacle_flags", false);
  for (auto const& c : j.value("obstacles", nlohmann::json::array()))
    e.obstacles.push_back(cell_from(c, "feature_encoding.obstacles"));
  return e;
}

nlohmann::json to_json(MazeSpec const& spec)
{
  nlohmann::json targets = nlohmann::json::array();
  for (auto const& t : spec.targets)
    targets.push_back({{"x", t.pos.x}, {"y", t.pos.y}, {"reward", t.reward}, {"group_bonus", t.group_bonus}});
  nlohmann::json obstacles = nlohmann::json::array();
  for (auto const& o : spec.obstacles)
    obstacles.push_back(cell_json(o));
  nlohmann::json starts = nlohmann::json::array();
  for (auto const& s : spec.start_cells)
    starts.push_back(cell_json(s));
  return {{"name", spec.name},
          {"width", spec.width},
          {"height", spec.height},
          {"targets", targets},
          {"obstacles", obstacles},
          {"obstacle_penalty", spec.obstacle_penalty},
          {"horizon", spec.horizon},
          {"n_agents", spec.n_agents},
          {"gamma", spec.gamma},
          {"group_reward", spec.group_reward},
          {"agent_collision_penalty", spec.agent_collision_penalty},
          {"distance_shaping", spec.distance_shaping},
          {"observe_obstacles", spec.observe_obstacles},
          {"start_cells", starts},
          {"state_cap", spec.state_cap}};
}

MazeSpec maze_from_json(nlohmann::json const& j)
{
  check_keys(j,
             {"name", "width", "height", "targets", "obstacles", "obstacle_penalty", "horizon", "n_agents", "gamma",
              "group_reward", "agent_collision_penalty", "distance_shaping", "observe_obstacles", "start_cells",
              "state_cap"},
             "maze");
  MazeSpec s;
  s.name = get_or<std::string>(j, "name", s.name);
  s.width = get_or(j, "width", s.width);
  s.height = get_or(j, "height", s.height);
  if (j.contains("targets")) {
    for (auto const& t : j["targets"]) {
      check_keys(t, {"x", "y", "reward", "group_bonus"}, "maze.targets");
      Target tg;
      tg.pos = cell_from(nlohmann::json{{"x", t.at("x")}, {"y", t.at("y")}}, "maze.targets");
      tg.reward = t.value("reward", tg.reward);
      tg.group_bonus = t.value("group_bonus", tg.group_bonus);
      s.targets.push_back(tg);
    }
  } else {
    s.targets.push_back(Target{});
  }
  if (j.contains("obstacles"))
    for (auto const& o : j["obstacles"])
      s.obstacles.push_back(cell_from(o, "maze.obstacles"));
  s.obstacle_penalty = get_or(j, "obstacle_penalty", s.obstacle_penalty);
  s.horizon = get_or(j, "horizon", s.horizon);
  s.n_agents = get_or(j, "n_agents", s.n_agents);
  s.gamma = get_or(j, "gamma", s.gamma);
  s.group_reward = get_or(j, "group_reward", s.group_reward);
  s.agent_collision_penalty = get_or(j, "agent_collision_penalty", s.agent_collision_penalty);
  s.distance_shaping = get_or(j, "distance_shaping", s.distance_shaping);
  s.observe_obstacles = get_or(j, "observe_obstacles", s.observe_obstacles);
  if (j.contains("start_cells"))
    for (auto const& c : j["start_cells"])
      s.start_cells.push_back(cell_from(c, "maze.start_cells"));
  s.state_cap = get_or(j, "state_cap", s.state_cap);
  s.validate();
  return s;
}

MazeSpec load_maze(std::filesystem::path const& path)
{
  std::ifstream in(path);
  if (!in)
    throw InvalidArgument("cannot open maze file '" + path.string() + "'");
  nlohmann::json j;
  try {
    in >> j;
  } catch (nlohmann::json::exception const& e) {
    throw InvalidArgument("maze file '" + path.string() + "' is not valid JSON: " + e.what());
  }
  return maze_from_json(j);
}

MazeSpec simple_maze()
{
  MazeSpec s;
  s.name = "simple";
  s.width = 4;
  s.height = 4;
  s.targets = {{{0, 0}, 10.0, 0.0}};
  s.horizon = 3;
  return s;
}

MazeSpec medium_maze()
{
  MazeSpec s;
  s.name = "medium";
  s.width = 8;
  s.height = 8;
  s.targets = {{{0, 0}, 10.0, 0.0}};
  s.obstacles = {{2, 1}, {1, 3}};
  s.horizon = 8;
  return s;
}

MazeSpec hard_maze()
{
  MazeSpec s;
  s.name = "hard";
  s.width = 10;
  s.height = 10;
  s.targets = {{{0, 0}, 10.0, 0.0}, {{4, 4}, 5.0, 0.0}};
  s.obstacles = {{1, 0}, {0, 1}};
  s.obstacle_penalty = -5.0;
  s.horizon = 10;
  return s;
}

MazeSpec predator_prey_maze()
{
  MazeSpec s;
  s.name = "predator_prey";
  s.width = 4;
  s.height = 4;
  s.n_agents = 2;
  s.targets = {{{0, 0}, 10.0, 10.0}, {{3, 3}, 5.0, 5.0}};
  s.obstacles = {{1, 1}};
  s.group_reward = true;
  s.horizon = 6;
  return s;
}

} // namespace rgmdt::env
