#include <gtest/gtest.h>

#include <cmath>

#include "seg4d/errors.hpp"
#include "seg4d/loss.hpp"
#include "support/test_util.hpp"

using namespace seg4d;
using namespace seg4d::loss;

namespace {

Probabilities probs_from(std::vector<ObjectId> ids, std::vector<std::vector<double>> rows) {
  Probabilities p;
  p.id_list = std::move(ids);
  p.rows.resize(static_cast<Eigen::Index>(rows.size()), static_cast<Eigen::Index>(p.id_list.size()));
  for (std::size_t i = 0; i < rows.size(); ++i) {
    for (std::size_t j = 0; j < rows[i].size(); ++j) p.rows(static_cast<Eigen::Index>(i), static_cast<Eigen::Index>(j)) = rows[i][j];
  }
  return p;
}

/// (1 - t) * uniform + t * one-hot(gt).
Probabilities interpolate(std::span<const ObjectId> gt, const std::vector<ObjectId>& ids, double t) {
  std::vector<std::vector<double>> rows;
  const double u = 1.0 / static_cast<double>(ids.size());
  for (const auto g : gt) {
    std::vector<double> row;
    for (const auto id : ids) row.push_back((1 - t) * u + t * (id == g ? 1.0 : 0.0));
    rows.push_back(row);
  }
  return probs_from(ids, rows);
}

}  // namespace

TEST(LocalWeights, Examples) {
  LossConfig cfg;
  clicksim::Click c;
  c.position = Vec3(0, 0, 0);
  const std::vector<clicksim::Click> clicks{c};
  const std::vector<Vec3> pos{Vec3(0, 0, 0), Vec3(cfg.delta / 2, 0, 0), Vec3(cfg.delta, 0, 0), Vec3(0, 0, 9)};
  const auto w = local_weights(pos, clicks, cfg);
  EXPECT_EQ(w[0], cfg.w_max);
  EXPECT_EQ(w[1], (cfg.w_max + cfg.w_min) / 2);
  EXPECT_EQ(w[2], cfg.w_min);
  EXPECT_EQ(w[3], cfg.w_min);
  EXPECT_EQ(local_weights(pos, {}, cfg), std::vector<double>(4, cfg.w_min));
}

TEST(LocalWeights, AffineInsideDelta) {
  LossConfig cfg;
  cfg.w_max = 3.0;
  cfg.w_min = 0.5;
  cfg.delta = 4.0;
  clicksim::Click c;
  const std::vector<clicksim::Click> clicks{c};
  const std::vector<Vec3> pos{Vec3(0.5, 0, 0), Vec3(1.5, 0, 0), Vec3(2.5, 0, 0)};
  const auto w = local_weights(pos, clicks, cfg);
  EXPECT_DOUBLE_EQ(w[1] - w[0], w[2] - w[1]);
}

TEST(LocalWeights, NearestClickCounts) {
  LossConfig cfg;
  clicksim::Click a, b;
  a.position = Vec3(0, 0, 0);
  b.position = Vec3(10, 0, 0);
  const std::vector<clicksim::Click> clicks{a, b};
  const std::vector<Vec3> pos{Vec3(9, 0, 0)};
  EXPECT_DOUBLE_EQ(local_weights(pos, clicks, cfg)[0], cfg.w_max - (cfg.w_max - cfg.w_min) * 0.5);
}

TEST(SoftAssign, SymmetryAndStability) {
  segment::Heatmap h;
  h.id_list = {1, 2};
  h.scores.resize(2, 2);
  h.scores << 0, 1000, 0, 0;
  const auto p = soft_assign(h);
  EXPECT_EQ(p.rows(0, 0), 0.5);
  EXPECT_EQ(p.rows(0, 1), 0.5);
  EXPECT_NEAR(p.rows(1, 0), 1.0, 1e-12);
  EXPECT_NEAR(p.rows(1, 1), 0.0, 1e-12);
  EXPECT_TRUE(std::isfinite(p.rows(1, 0)));
}

TEST(SoftAssign, RowsSumToOne) {
  Rng rng(40);
  segment::Heatmap h;
  h.id_list = {1, 2, 3, 4};
  h.scores.resize(4, 100);
  for (Eigen::Index i = 0; i < 4; ++i) {
    for (Eigen::Index v = 0; v < 100; ++v) h.scores(i, v) = uniform(rng, -50, 50);
  }
  const auto p = soft_assign(h);
  for (Eigen::Index v = 0; v < 100; ++v) EXPECT_NEAR(p.rows.row(v).sum(), 1.0, 1e-9);
}

TEST(WeightedCe, Examples) {
  const std::vector<ObjectId> gt{1, 2};
  const std::vector<double> w{1, 1};
  EXPECT_EQ(weighted_ce(probs_from({1, 2}, {{1, 0}, {0, 1}}), gt, w), 0.0);
  EXPECT_NEAR(weighted_ce(probs_from({1, 2}, {{0.5, 0.5}, {0.5, 0.5}}), gt, w), std::log(2.0), 1e-15);
  EXPECT_THROW(weighted_ce(probs_from({1, 2}, {{1, 0}, {0, 1}}), std::vector<ObjectId>{1, 3}, w), DataError);
}

TEST(WeightedCe, MatchesDirectComputation) {
  Rng rng(41);
  const std::vector<ObjectId> ids{1, 2, 3};
  std::vector<std::vector<double>> rows;
  std::vector<ObjectId> gt;
  std::vector<double> w;
  for (int p = 0; p < 50; ++p) {
    std::vector<double> r{uniform(rng, 0.01, 1), uniform(rng, 0.01, 1), uniform(rng, 0.01, 1)};
    const double s = r[0] + r[1] + r[2];
    for (auto& x : r) x /= s;
    rows.push_back(r);
    gt.push_back(1 + static_cast<ObjectId>(draw_index(rng, 3)));
    w.push_back(uniform(rng, 1, 2));
  }
  double expect = 0.0;
  for (std::size_t p = 0; p < 50; ++p) expect += w[p] * -std::log(rows[p][gt[p] - 1]);
  expect /= 50.0;
  EXPECT_NEAR(weighted_ce(probs_from(ids, rows), gt, w), expect, 1e-12);

  // Scaling every weight by c scales the cross-entropy by c.
  std::vector<double> w3(w);
  for (auto& x : w3) x *= 3.0;
  EXPECT_NEAR(weighted_ce(probs_from(ids, rows), gt, w3), 3.0 * expect, 1e-12);
}

TEST(WeightedDice, Examples) {
  const std::vector<double> w(4, 1.0);
  const std::vector<ObjectId> gt{1, 1, 2, 2};
  EXPECT_NEAR(weighted_dice(probs_from({1, 2}, {{1, 0}, {1, 0}, {0, 1}, {0, 1}}), gt, w), 0.0, 1e-6);
  const auto uniform2 = probs_from({1, 2}, {{0.5, 0.5}, {0.5, 0.5}, {0.5, 0.5}, {0.5, 0.5}});
  EXPECT_NEAR(weighted_dice(uniform2, gt, w), 1.0 / 3.0, 1e-6);
  const auto swapped = probs_from({1, 2}, {{0, 1}, {0, 1}, {1, 0}, {1, 0}});
  EXPECT_NEAR(weighted_dice(swapped, gt, w), 1.0, 1e-6);
}

TEST(WeightedDice, ClosedFormWithWeights) {
  // Per id: 1 - 2 sum(w p g) / sum(w (p^2 + g^2)), averaged over ids in gt.
  const std::vector<ObjectId> gt{1, 2, 2};
  const std::vector<double> w{2.0, 1.0, 1.5};
  const auto p = probs_from({1, 2, 3}, {{0.6, 0.3, 0.1}, {0.2, 0.7, 0.1}, {0.1, 0.1, 0.8}});
  const double eps = 1e-6;
  const double n1 = 2 * (2.0 * 0.6);
  const double d1 = 2.0 * (0.36 + 1) + 1.0 * 0.04 + 1.5 * 0.01;
  const double n2 = 2 * (1.0 * 0.7 + 1.5 * 0.1);
  const double d2 = 2.0 * 0.09 + 1.0 * (0.49 + 1) + 1.5 * (0.01 + 1);
  const double expect = ((1 - (n1 + eps) / (d1 + eps)) + (1 - (n2 + eps) / (d2 + eps))) / 2;
  EXPECT_NEAR(weighted_dice(p, gt, w, eps), expect, 1e-12);
}

TEST(TotalLoss, Properties) {
  LossConfig cfg;
  const std::vector<ObjectId> ids{1, 2, 3};
  const std::vector<ObjectId> gt{1, 2, 3, 3, 1, 2, 2, 1};
  std::vector<double> w(gt.size());
  for (std::size_t i = 0; i < w.size(); ++i) w[i] = 1.0 + 0.1 * static_cast<double>(i);

  EXPECT_LE(total_loss(interpolate(gt, ids, 1.0), gt, w, cfg), 1e-5);

  LossConfig ce_only = cfg;
  ce_only.lambda_dice = 0.0;
  const auto mid = interpolate(gt, ids, 0.4);
  EXPECT_EQ(total_loss(mid, gt, w, ce_only), weighted_ce(mid, gt, w));

  double previous = std::numeric_limits<double>::infinity();
  for (int step = 0; step <= 10; ++step) {
    const double value = total_loss(interpolate(gt, ids, step / 10.0), gt, w, cfg);
    EXPECT_GE(value, 0.0);
    EXPECT_LT(value, previous) << "step " << step;
    previous = value;
  }
}

TEST(LossConfig, Validation) {
  LossConfig bad;
  bad.w_min = 3.0;
  EXPECT_THROW(bad.validate(), ConfigError);
  LossConfig bad_delta;
  bad_delta.delta = 0.0;
  EXPECT_THROW(bad_delta.validate(), ConfigError);
  EXPECT_NO_THROW(LossConfig{}.validate());
}
