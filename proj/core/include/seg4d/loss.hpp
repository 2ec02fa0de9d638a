#pragma once

#include <span>
#include <vector>

#include <Eigen/Core>

#include "seg4d/clicksim.hpp"
#include "seg4d/segment.hpp"
#include "seg4d/types.hpp"

namespace seg4d::loss {

struct LossConfig {
  double lambda_ce = 1.0;
  double lambda_dice = 1.0;
  double w_max = 2.0;
  double w_min = 1.0;
  double delta = 2.0;  // meters
  double eps_dice = 1e-6;

  void validate() const;
};

/// Per-point weights decaying linearly from w_max at a click to w_min at
/// distance delta, w_min beyond. With no clicks every weight is w_min.
std::vector<double> local_weights(std::span<const Vec3> positions, std::span<const clicksim::Click> clicks,
                                  const LossConfig& cfg);

/// Softmax over the id dimension. rows(p, i) is the probability of id_list[i].
struct Probabilities {
  Eigen::MatrixXd rows;  // N x ID
  std::vector<ObjectId> id_list;
};

Probabilities soft_assign(const segment::Heatmap& h);

inline constexpr double kProbabilityFloor = 1e-12;

/// (1/N) sum_p w_p * -log p_true(p).
double weighted_ce(const Probabilities& probs, std::span<const ObjectId> gt, std::span<const double> weights);

/// Soft dice with squared denominator, 1 - (2 sum w p g + eps) / (sum w (p^2 + g^2) + eps),
/// averaged over the ids present in gt.
double weighted_dice(const Probabilities& probs, std::span<const ObjectId> gt, std::span<const double> weights,
                     double eps = 1e-6);

double total_loss(const Probabilities& probs, std::span<const ObjectId> gt, std::span<const double> weights,
                  const LossConfig& cfg);

}  // namespace seg4d::loss
