#pragma once

#include "rgmdt/types.hpp"

#include <json.hpp>

#include <array>
#include <compare>
#include <cstdint>
#include <filesystem>
#include <string>
#include <string_view>
#include <vector>

// Deterministic tabular gridworld Dec-POMDP. Each agent observes only its own cell.
namespace rgmdt::env {

enum class Move : int
{
  Up = 0,
  Down = 1,
  Left = 2,
  Right = 3
};

inline constexpr int kNumMoves = 4;
inline constexpr std::array<std::string_view, kNumMoves> kMoveNames = {"up", "down", "left", "right"};

// Grid coordinates with (0, 0) the top-left cell; y grows downwards.
struct Cell
{
  int x = 0;
  int y = 0;
  auto operator<=>(Cell const&) const = default;
};

struct Target
{
  Cell pos;
  Real reward = 10.0;
  Real group_bonus = 0.0; // paid once when every agent sits on this target in the same step
};

struct MazeSpec
{
  std::string name = "maze";
  int width = 4;
  int height = 4;
  std::vector<Target> targets;
  std::vector<Cell> obstacles;
  Real obstacle_penalty = -5.0;
  int horizon = 3;
  int n_agents = 1;
  Real gamma = 0.99;
  bool group_reward = false;
  Real agent_collision_penalty = 0.0;
  // Per step: -distance_shaping * sum over agents of the Manhattan distance to the nearest target.
  Real distance_shaping = 0.0;
  bool observe_obstacles = false;
  // Support of the initial distribution; empty means uniform over cells that are neither
  // targets nor obstacles. Agents draw their start cells independently.
  std::vector<Cell> start_cells;
  std::int64_t state_cap = 100000;

  void validate() const;

  int cells() const { return width * height; }
  bool inside(Cell c) const { return c.x >= 0 && c.y >= 0 && c.x < width && c.y < height; }
  int cell_index(Cell c) const { return c.y * width + c.x; }
  Cell cell_at(int idx) const { return {idx % width, idx / width}; }
  int target_at(Cell c) const; // index into targets or -1
  bool is_obstacle(Cell c) const;
  std::vector<Cell> start_support() const;
};

struct JointObservation
{
  std::vector<Cell> per_agent;
  bool operator==(JointObservation const&) const = default;
};

struct JointAction
{
  std::vector<int> per_agent;
  bool operator==(JointAction const&) const = default;
};

struct StepResult
{
  JointObservation next;
  Real reward = 0.0;
  bool done = false;
};

Cell apply_move(MazeSpec const& spec, Cell c, int action);

StepResult step(MazeSpec const& spec, JointObservation const& obs, JointAction const& act);

// Upper bound on |reward| of a single step.
Real reward_bound(MazeSpec const& spec);

// Mixed-radix indexing of joint observations (base = cells) and joint actions (base = 4);
// agent 0 is the least significant digit.
class JointSpace
{
public:
  JointSpace() = default;
  JointSpace(int n_agents, int cells);

  int n_agents() const { return n_agents_; }
  int cells() const { return cells_; }
  Index n_obs() const { return n_obs_; }
  Index n_actions() const { return n_actions_; }

  Index obs_index(std::vector<int> const& local) const;
  std::vector<int> obs_locals(Index joint) const;
  int local_obs(Index joint, int agent) const;
  Index with_local_obs(Index joint, int agent, int local) const;

  Index action_index(std::vector<int> const& local) const;
  std::vector<int> action_locals(Index joint) const;
  int local_action(Index joint, int agent) const;
  Index with_local_action(Index joint, int agent, int local) const;

private:
  int n_agents_ = 0;
  int cells_ = 0;
  Index n_obs_ = 0;
  Index n_actions_ = 0;
  std::vector<Index> obs_stride_;
  std::vector<Index> act_stride_;
};

// Throws CapExceeded when |cells|^n exceeds spec.state_cap.
JointSpace joint_space(MazeSpec const& spec);

Index joint_index(MazeSpec const& spec, JointSpace const& space, JointObservation const& obs);
JointObservation joint_observation(MazeSpec const& spec, JointSpace const& space, Index joint);

std::vector<JointObservation> enumerate_states(MazeSpec const& spec);

// Exact tabular model: successor, reward and termination for every (joint obs, joint action),
// plus the initial distribution mu over joint observations.
struct Model
{
  MazeSpec spec;
  JointSpace space;
  std::vector<Index> next;
  std::vector<Real> reward;
  std::vector<std::uint8_t> done;
  Vector mu;

  Index at(Index obs, Index act) const { return obs * space.n_actions() + act; }
};

Model build_model(MazeSpec const& spec);

// Local observation features: x / (W - 1), y / (H - 1), optionally followed by four 0/1 flags
// marking obstacles in the up/down/left/right neighbours. Injective in the cell coordinates.
struct FeatureEncoding
{
  int width = 1;
  int height = 1;
  bool obstacle_flags = false;
  std::vector<Cell> obstacles;

  static FeatureEncoding for_maze(MazeSpec const& spec);
  int dim() const { return obstacle_flags ? 6 : 2; }
  Vector encode(Cell c) const;
  Vector encode_local(int cell_index) const { return encode({cell_index % width, cell_index / width}); }
  bool operator==(FeatureEncoding const&) const = default;
};

nlohmann::json to_json(FeatureEncoding const& enc);
FeatureEncoding feature_encoding_from_json(nlohmann::json const& j);

nlohmann::json to_json(MazeSpec const& spec);
MazeSpec maze_from_json(nlohmann::json const& j);
MazeSpec load_maze(std::filesystem::path const& path);

// Presets mirroring the single-agent simple/medium/hard mazes and a two-agent predator-prey map.
MazeSpec simple_maze();
MazeSpec medium_maze();
MazeSpec hard_maze();
MazeSpec predator_prey_maze();

} // namespace rgmdt::env
