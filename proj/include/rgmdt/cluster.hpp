#pragma once

#include "rgmdt/metric.hpp"
#include "rgmdt/types.hpp"

#include <json.hpp>

#include <cstdint>
#include <vector>

namespace rgmdt::cluster {

struct ClusterConfig
{
  int labels = 2;
  Real tau = 0.1;     // softmax temperature over -D / tau
  Real lambda = 1.0;  // weight of H(m) - H(m|o)
  int k3 = 5;         // neighbours in the locality term
  std::uint64_t seed = 0;
  int max_iters = 100;
  Real tol = 1e-9;    // stop when the relative objective decrease falls below this
  int restarts = 8;
  Metric metric = Metric::Cosine;
  Real label_noise = 0.0; // probability of flipping each final label to a random other one
};

struct ClusterModel
{
  int n_labels = 0;
  Metric metric = Metric::Cosine;
  std::vector<int> obs;       // caller ids of the rows (cells); defaults to 0..n-1
  Vector weights;             // d(o), normalized
  Matrix centers;             // one row per label
  std::vector<int> assignment;
  Matrix soft;                // rows sum to one
  Vector label_mass;          // d(l)
  Vector epsilon_per_label;   // sum_{o in l} dbar_l(o) D_cos(Qbar(o), H(l))
  Real epsilon_avg = 0.0;
  std::vector<Real> objective_trace; // accepted iterates of the winning restart
  int repairs = 0;
  int iterations = 0;
  int polish_moves = 0; // epsilon relocations after the alternating steps
  int restart = 0;
};

// Distinct directions (or points, for non-cosine metrics) up to D <= tol.
int count_distinct(Matrix const& vectors, Metric metric, Real tol = 1e-12);

// d_bar-weighted member means, one row per label; empty labels give zero rows.
Matrix weighted_centers(Matrix const& vectors, Vector const& weights, std::vector<int> const& labels, int n_labels);

// Average cosine distance of a hard partition. per_label and mass are optional outputs.
Real partition_epsilon(Matrix const& vectors, Vector const& weights, std::vector<int> const& labels, int n_labels,
                       Vector* per_label = nullptr, Vector* mass = nullptr);

Matrix soft_assign(Matrix const& vectors, Matrix const& centers, Metric metric, Real tau);

// Locality term minus lambda (H(m) - H(m|o)) for the soft assignment induced by centers.
Real rim_objective(Matrix const& vectors, Vector const& weights, Matrix const& centers, ClusterConfig const& cfg);

ClusterModel fit(Matrix const& vectors, Vector const& weights, ClusterConfig const& cfg,
                 std::vector<int> const& obs_ids = {});

Real epsilon_of(ClusterModel const& model);

nlohmann::json to_json(ClusterModel const& model);
ClusterModel model_from_json(nlohmann::json const& j);

} // namespace rgmdt::cluster
