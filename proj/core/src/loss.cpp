#include "seg4d/loss.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <set>

#include <fmt/format.h>

#include "seg4d/errors.hpp"
#include "seg4d/spatial.hpp"

namespace seg4d::loss {

namespace {

std::size_t column_of(const Probabilities& probs, ObjectId id) {
  const auto it = std::lower_bound(probs.id_list.begin(), probs.id_list.end(), id);
  if (it == probs.id_list.end() || *it != id) throw DataError(fmt::format("ground-truth id {} has no heatmap row", id));
  return static_cast<std::size_t>(it - probs.id_list.begin());
}

void check_shapes(const Probabilities& probs, std::span<const ObjectId> gt, std::span<const double> weights) {
  if (static_cast<std::size_t>(probs.rows.rows()) != gt.size() || gt.size() != weights.size()) {
    throw InputError(fmt::format("loss inputs disagree in length: {} probability rows, {} labels, {} weights",
                                 probs.rows.rows(), gt.size(), weights.size()));
  }
  if (static_cast<std::size_t>(probs.rows.cols()) != probs.id_list.size()) {
    throw InputError("probability columns and id list differ in count");
  }
}

}  // namespace

void LossConfig::validate() const {
  if (!(w_min > 0.0) || !(w_max >= w_min)) throw ConfigError("loss weights need w_max >= w_min > 0");
  if (!(delta > 0.0)) throw ConfigError("loss delta must be positive");
  if (!(lambda_ce >= 0.0) || !(lambda_dice >= 0.0)) throw ConfigError("loss lambdas must be non-negative");
  if (!(eps_dice > 0.0)) throw ConfigError("dice smoothing must be positive");
}

std::vector<double> local_weights(std::span<const Vec3> positions, std::span<const clicksim::Click> clicks,
                                  const LossConfig& cfg) {
  std::vector<double> w(positions.size(), cfg.w_min);
  if (clicks.empty()) return w;
  for (std::size_t p = 0; p < positions.size(); ++p) {
    double best = std::numeric_limits<double>::infinity();
    for (const auto& c : clicks) best = std::min(best, spatial::squared_distance(positions[p], c.position));
    const double d = std::sqrt(best) / cfg.delta;
    w[p] = d <= 1.0 ? cfg.w_max - (cfg.w_max - cfg.w_min) * d : cfg.w_min;
  }
  return w;
}

Probabilities soft_assign(const segment::Heatmap& h) {
  if (h.id_list.empty()) throw PreconditionError("soft assignment needs at least one id");
  Probabilities out;
  out.id_list = h.id_list;
  const Eigen::Index ids = h.scores.rows();
  const Eigen::Index n = h.scores.cols();
  out.rows.resize(n, ids);
  for (Eigen::Index v = 0; v < n; ++v) {
    const double top = h.scores.col(v).maxCoeff();
    double sum = 0.0;
    for (Eigen::Index i = 0; i < ids; ++i) {
      // A column of -inf everywhere has no preference; spread it evenly.
      const double e = std::isinf(top) && top < 0 ? 1.0 : std::exp(h.scores(i, v) - top);
      out.rows(v, i) = e;
      sum += e;
    }
    for (Eigen::Index i = 0; i < ids; ++i) out.rows(v, i) /= sum;
  }
  return out;
}

double weighted_ce(const Probabilities& probs, std::span<const ObjectId> gt, std::span<const double> weights) {
  check_shapes(probs, gt, weights);
  if (gt.empty()) return 0.0;
  double sum = 0.0;
  for (std::size_t p = 0; p < gt.size(); ++p) {
    const double q = std::clamp(probs.rows(static_cast<Eigen::Index>(p), static_cast<Eigen::Index>(column_of(probs, gt[p]))),
                                kProbabilityFloor, 1.0);
    sum += weights[p] * -std::log(q);
  }
  return sum / static_cast<double>(gt.size());
}

double weighted_dice(const Probabilities& probs, std::span<const ObjectId> gt, std::span<const double> weights,
                     double eps) {
  check_shapes(probs, gt, weights);
  const std::set<ObjectId> present(gt.begin(), gt.end());
  if (present.empty()) return 0.0;
  double total = 0.0;
  for (const ObjectId id : present) {
    const auto col = static_cast<Eigen::Index>(column_of(probs, id));
    double inter = 0.0;
    double denom = 0.0;
    for (std::size_t p = 0; p < gt.size(); ++p) {
      const double q = probs.rows(static_cast<Eigen::Index>(p), col);
      const double g = gt[p] == id ? 1.0 : 0.0;
      inter += weights[p] * q * g;
      denom += weights[p] * (q * q + g * g);
    }
    total += 1.0 - (2.0 * inter + eps) / (denom + eps);
  }
  return total / static_cast<double>(present.size());
}

double total_loss(const Probabilities& probs, std::span<const ObjectId> gt, std::span<const double> weights,
                  const LossConfig& cfg) {
  cfg.validate();
  const double ce = cfg.lambda_ce == 0.0 ? 0.0 : weighted_ce(probs, gt, weights);
  const double dice = cfg.lambda_dice == 0.0 ? 0.0 : weighted_dice(probs, gt, weights, cfg.eps_dice);
  return cfg.lambda_ce * ce + cfg.lambda_dice * dice;
}

}  // namespace seg4d::loss
