#include "dispatchlab/advisory.hpp"

#include <gtest/gtest.h>

#include <algorithm>
#include <cmath>

#include "dispatchlab/errors.hpp"
#include "dispatchlab/stats.hpp"
#include "test_util.hpp"

namespace dispatchlab::advisory {
namespace {

double normal(Rng& rng) {
  return std::normal_distribution<double>(0.0, 1.0)(rng);
}

// Concordant-pair count over every positive/negative pair.
double pairwise_auc(const std::vector<double>& s, const std::vector<int>& y) {
  double wins = 0.0, pairs = 0.0;
  for (std::size_t i = 0; i < s.size(); ++i) {
    if (y[i] != 1) continue;
    for (std::size_t j = 0; j < s.size(); ++j) {
      if (y[j] != 0) continue;
      pairs += 1.0;
      wins += s[i] > s[j] ? 1.0 : (s[i] == s[j] ? 0.5 : 0.0);
    }
  }
  return wins / pairs;
}

// Smallest root of g on [0, hi] by a fine scan for the first sign change,
// then bisection.
std::optional<double> bisection_root(const std::function<double(double)>& g, double hi) {
  if (g(0.0) == 0.0) return 0.0;
  const int steps = 200000;
  double a = 0.0;
  double ga = g(a);
  for (int k = 1; k <= steps; ++k) {
    const double b = hi * k / steps;
    const double gb = g(b);
    if (gb == 0.0) return b;
    if ((ga < 0.0) != (gb < 0.0)) {
      double lo = a, up = b;
      for (int it = 0; it < 200; ++it) {
        const double mid = 0.5 * (lo + up);
        if ((g(mid) < 0.0) == (ga < 0.0)) {
          lo = mid;
        } else {
          up = mid;
        }
      }
      return 0.5 * (lo + up);
    }
    a = b;
    ga = gb;
  }
  return std::nullopt;
}

struct Planted {
  Eigen::MatrixXd x;
  Eigen::VectorXd beta;
  Eigen::VectorXd y;
};

Planted planted_design(Rng& rng, Eigen::Index n, double noise) {
  Planted p;
  p.x.resize(n, 8);
  p.beta.resize(8);
  for (Eigen::Index j = 0; j < 8; ++j) p.beta[j] = normal(rng) * 3.0;
  for (Eigen::Index i = 0; i < n; ++i) {
    p.x(i, 0) = 1.0;
    for (Eigen::Index j = 1; j < 8; ++j) p.x(i, j) = normal(rng) * (1.0 + j);
  }
  p.y = p.x * p.beta;
  for (Eigen::Index i = 0; i < n; ++i) p.y[i] += noise * normal(rng);
  return p;
}

const std::array<std::string, 8> kNames = {"c", "a", "b", "d", "e", "f", "g", "h"};

TEST(Advisory, SigmoidIdentities) {
  EXPECT_EQ(sigmoid(0.0), 0.5);
  EXPECT_NEAR(sigmoid(std::log(3.0)), 0.75, 1e-15);
  for (double z = -30.0; z <= 30.0; z += 0.25) {
    EXPECT_NEAR(sigmoid(z) + sigmoid(-z), 1.0, 1e-12);
  }
  EXPECT_TRUE(std::isfinite(sigmoid(-700.0)));
  EXPECT_EQ(sigmoid(700.0), 1.0);
}

TEST(Advisory, FeatureRowLayout) {
  sim::LatencyRecord r;
  r.time = -30;
  r.avg_price = 10;
  r.proportion = 0.3;
  r.deliverymen_number = 600;
  r.tip = 4;
  r.distance = 2500;
  r.latency = 121;
  const FeatureRow row = make_feature_row(r);
  EXPECT_EQ(row.x[0], 900.0);
  EXPECT_EQ(row.x[3], 600.0);
  EXPECT_EQ(row.x[6], 500.0);
  EXPECT_EQ(row.y_deliverable, 0);
  r.latency = 120;
  EXPECT_EQ(make_feature_row(r).y_deliverable, 1);
  r.latency = -1;
  EXPECT_EQ(make_feature_row(r).y_deliverable, 0);
}

TEST(Advisory, LogisticGradientMatchesFiniteDifference) {
  Rng rng(21);
  Eigen::MatrixXd x(60, 5);
  Eigen::VectorXd y(60);
  for (Eigen::Index i = 0; i < 60; ++i) {
    for (Eigen::Index j = 0; j < 5; ++j) x(i, j) = normal(rng);
    y[i] = uniform01(rng) < 0.5 ? 1.0 : 0.0;
  }
  for (bool intercept : {false, true}) {
    for (int trial = 0; trial < 20; ++trial) {
      LogisticModel m;
      m.has_intercept = intercept;
      for (int j = 0; j < 5; ++j) m.theta.push_back(normal(rng));
      m.intercept = intercept ? normal(rng) : 0.0;
      const Eigen::VectorXd g = logistic_gradient(m, x, y);
      const double h = 1e-6;
      for (int j = 0; j < 5 + intercept; ++j) {
        LogisticModel up = m, down = m;
        if (j < 5) {
          up.theta[j] += h;
          down.theta[j] -= h;
        } else {
          up.intercept += h;
          down.intercept -= h;
        }
        const double fd = (logistic_loss(up, x, y) - logistic_loss(down, x, y)) / (2 * h);
        EXPECT_NEAR(g[j], fd, 1e-5);
      }
    }
  }
}

TEST(Advisory, LogisticFitSeparableAndMonotone) {
  Rng rng(4);
  Eigen::MatrixXd x(200, 2);
  Eigen::VectorXd y(200);
  for (Eigen::Index i = 0; i < 200; ++i) {
    x(i, 0) = normal(rng);
    x(i, 1) = normal(rng) * 10;
    y[i] = (x(i, 0) + 0.1 * x(i, 1) > 0.0) ? 1.0 : 0.0;
  }
  const LogisticModel m = logistic_fit(x, y);
  std::vector<double> scores;
  std::vector<int> labels;
  for (Eigen::Index i = 0; i < 200; ++i) {
    scores.push_back(m.score(std::vector<double>{x(i, 0), x(i, 1)}));
    labels.push_back(static_cast<int>(y[i]));
  }
  EXPECT_GE(roc_auc(scores, labels), 0.99);
  for (std::size_t k = 1; k < m.loss_trace.size(); ++k) {
    EXPECT_LE(m.loss_trace[k], m.loss_trace[k - 1]);
  }
}

TEST(Advisory, LogisticFitReachesStationaryPoint) {
  Rng rng(8);
  Eigen::MatrixXd x(400, 3);
  Eigen::VectorXd y(400);
  for (Eigen::Index i = 0; i < 400; ++i) {
    for (Eigen::Index j = 0; j < 3; ++j) x(i, j) = normal(rng);
    const double z = 0.8 * x(i, 0) - 0.5 * x(i, 1) + 0.3;
    y[i] = uniform01(rng) < sigmoid(z) ? 1.0 : 0.0;
  }
  LogisticOptions opts;
  opts.intercept = true;
  opts.tolerance = 1e-14;
  opts.max_iters = 100000;
  const LogisticModel m = logistic_fit(x, y, opts);
  EXPECT_LT(logistic_gradient(m, x, y).norm(), 1e-6);
  for (std::size_t k = 1; k < m.loss_trace.size(); ++k) {
    EXPECT_LE(m.loss_trace[k], m.loss_trace[k - 1]);
  }
}

TEST(Advisory, LogisticRejectsSingleClass) {
  EXPECT_THROW(logistic_fit(Eigen::MatrixXd::Ones(5, 2), Eigen::VectorXd::Ones(5)), DataError);
}

TEST(Advisory, LogisticPredictBoundary) {
  LogisticModel m = published_logistic_model();
  const std::array<double, 5> zero{};
  const Classification c = logistic_predict(m, zero);
  EXPECT_EQ(c.probability, 0.5);
  EXPECT_EQ(c.label, 1);
  LogisticModel ten;
  ten.theta = {10.0};
  EXPECT_EQ(logistic_predict(ten, std::array<double, 1>{1.0}).label, 1);
  EXPECT_EQ(logistic_predict(ten, std::array<double, 1>{-1.0}).label, 0);
}

TEST(Advisory, PublishedLogisticFormula) {
  const LogisticModel m = published_logistic_model();
  const std::array<double, 5> x = {100.0, 10.0, 0.3, 600.0, 5.0};
  const double z = 0.0154 * 100 + 0.0276 * 10 - 0.8862 * 0.3 + 0.0066 * 600 - 0.0009 * 5;
  EXPECT_NEAR(logistic_predict(m, x).probability, 1.0 / (1.0 + std::exp(-z)), 1e-15);
}

TEST(Advisory, RocAucExamples) {
  EXPECT_DOUBLE_EQ(roc_auc(std::vector<double>{0.9, 0.8, 0.7, 0.3}, std::vector<int>{1, 0, 1, 0}),
                   0.75);
  EXPECT_DOUBLE_EQ(roc_auc(std::vector<double>{0.1, 0.2, 0.8, 0.9}, std::vector<int>{0, 0, 1, 1}),
                   1.0);
  EXPECT_THROW(roc_auc(std::vector<double>{0.1, 0.2}, std::vector<int>{1, 1}), DataError);
}

TEST(Advisory, RocAucMatchesPairCount) {
  Rng rng(6);
  for (int trial = 0; trial < 50; ++trial) {
    const std::size_t n = 2 + uniform_index(rng, 199);
    std::vector<double> s(n);
    std::vector<int> y(n);
    for (std::size_t i = 0; i < n; ++i) {
      s[i] = static_cast<double>(uniform_index(rng, 10));  // plenty of ties
      y[i] = static_cast<int>(uniform_index(rng, 2));
    }
    y[0] = 0;
    y[1] = 1;
    EXPECT_NEAR(roc_auc(s, y), pairwise_auc(s, y), 1e-12);
  }
}

TEST(Advisory, RocAucRandomIsHalf) {
  Rng rng(10);
  std::vector<double> s(10000);
  std::vector<int> y(10000);
  for (std::size_t i = 0; i < s.size(); ++i) {
    y[i] = static_cast<int>(uniform_index(rng, 2));
    s[i] = uniform01(rng);
  }
  EXPECT_NEAR(roc_auc(s, y), 0.5, 0.02);
}

TEST(Advisory, FilterDeliverable) {
  LogisticModel m;
  m.theta = {1.0, -1.0, 0.0, 0.0, 0.0};
  Rng rng(2);
  std::vector<FeatureRow> rows(300);
  for (auto& r : rows) {
    for (auto& v : r.x) v = normal(rng);
    r.y_deliverable = uniform01(rng) < 0.7 ? 1 : 0;
  }
  const auto kept = filter_deliverable(m, rows);
  std::size_t expected = 0;
  for (const auto& r : rows) expected += (r.y_deliverable == 1 && r.x[0] - r.x[1] >= 0.0);
  EXPECT_EQ(kept.size(), expected);
  for (const auto& r : kept) EXPECT_GE(r.x[0] - r.x[1], 0.0);

  LogisticModel all;
  all.theta.assign(5, 0.0);
  std::size_t delivered = 0;
  for (const auto& r : rows) delivered += r.y_deliverable;
  EXPECT_EQ(filter_deliverable(all, rows).size(), delivered);
}

TEST(Advisory, OlsPlantedRecovery) {
  Rng rng(13);
  for (int trial = 0; trial < 10; ++trial) {
    const Planted p = planted_design(rng, 60, 0.0);
    const LinearModel m = ols_fit_design(p.x, p.y, kNames);
    for (int j = 0; j < 8; ++j) EXPECT_NEAR(m.beta[j], p.beta[j], 1e-8);
    EXPECT_LT(m.sse, 1e-12);
  }
}

TEST(Advisory, OlsMatchesQrOracle) {
  Rng rng(14);
  const Planted p = planted_design(rng, 200, 2.0);
  const LinearModel m = ols_fit_design(p.x, p.y, kNames);
  const Eigen::HouseholderQR<Eigen::MatrixXd> qr(p.x);
  const Eigen::VectorXd b = qr.solve(p.y);
  const Eigen::MatrixXd r = qr.matrixQR().topRows(8).triangularView<Eigen::Upper>();
  const Eigen::MatrixXd r_inv = r.inverse();
  const Eigen::MatrixXd cov = r_inv * r_inv.transpose();
  const Eigen::VectorXd e = p.y - p.x * b;
  const double s2 = e.squaredNorm() / (200 - 8);
  for (int j = 0; j < 8; ++j) {
    EXPECT_NEAR(m.beta[j], b[j], 1e-8);
    EXPECT_NEAR(m.se[j], std::sqrt(s2 * cov(j, j)), 1e-8);
    EXPECT_NEAR(m.t_values[j], m.beta[j] / m.se[j], 1e-12);
  }
  EXPECT_NEAR(m.sse, e.squaredNorm(), 1e-8);
  EXPECT_NEAR(m.s2, s2, 1e-10);

  // F against the intercept-only model.
  const double sst = (p.y.array() - p.y.mean()).square().sum();
  EXPECT_NEAR(m.f_statistic, ((sst - e.squaredNorm()) / 7) / s2, 1e-6);
  EXPECT_NEAR(m.r_squared, 1 - e.squaredNorm() / sst, 1e-12);
}

TEST(Advisory, OlsResidualsOrthogonal) {
  Rng rng(15);
  const Planted p = planted_design(rng, 500, 5.0);
  const LinearModel m = ols_fit_design(p.x, p.y, kNames);
  const Eigen::Map<const Eigen::VectorXd> b(m.beta.data(), 8);
  const Eigen::VectorXd e = p.y - p.x * b;
  EXPECT_LT((p.x.transpose() * e).cwiseAbs().maxCoeff(), 1e-6 * 500);
}

TEST(Advisory, OlsRankDeficientNamesColumn) {
  Rng rng(16);
  Planted p = planted_design(rng, 50, 1.0);
  p.x.col(5) = 2.0 * p.x.col(2) - p.x.col(0);
  try {
    ols_fit_design(p.x, p.y, kNames);
    FAIL() << "expected DataError";
  } catch (const DataError& e) {
    EXPECT_NE(std::string(e.what()).find("'f'"), std::string::npos) << e.what();
  }
  EXPECT_THROW(ols_fit_design(p.x.topRows(8), p.y.head(8), kNames), DataError);
}

TEST(Advisory, PublishedLinearPlugIn) {
  const LinearModel m = published_linear_model();
  std::array<double, kFeatureCount> x{};
  EXPECT_NEAR(predict_latency(m, x), -0.1687, 1e-12);
  x[5] = 1000.0;
  EXPECT_NEAR(predict_latency(m, x), 7.7313, 1e-12);
  LinearModel zero;
  zero.beta.assign(8, 0.0);
  x = {1, 2, 3, 4, 5, 6, 7};
  EXPECT_EQ(predict_latency(zero, x), 0.0);
}

TEST(Advisory, AdviseTipPublishedExample) {
  const LinearModel m = published_linear_model();
  TipContext ctx;
  ctx.x6 = 1000.0;
  const Advice a = advise_tip(m, ctx, 5.0, 100.0);
  ASSERT_EQ(a.status, AdviceStatus::tip);
  auto g = [&](double t) { return predict_latency(m, features_for(ctx, t)) - 5.0; };
  const auto oracle = bisection_root(g, 100.0);
  ASSERT_TRUE(oracle);
  EXPECT_NEAR(a.tip, *oracle, 1e-6);
  EXPECT_NEAR(a.predicted_latency, 5.0, 1e-6);
}

TEST(Advisory, AdviseTipEdgeCases) {
  const LinearModel m = published_linear_model();
  TipContext ctx;
  ctx.x6 = 1000.0;
  const double at_zero = predict_latency(m, features_for(ctx, 0.0));
  const Advice exact = advise_tip(m, ctx, at_zero, 100.0);
  EXPECT_EQ(exact.status, AdviceStatus::tip);
  EXPECT_NEAR(exact.tip, 0.0, 1e-9);

  EXPECT_EQ(advise_tip(m, ctx, at_zero + 1.0, 100.0).status, AdviceStatus::already_met);
  EXPECT_EQ(advise_tip(m, ctx, 0.001, 10.0).status, AdviceStatus::infeasible);

  LinearModel flat = m;
  flat.beta[5] = 0.0;
  flat.beta[7] = 0.0;
  EXPECT_EQ(advise_tip(flat, ctx, 5.0, 100.0).status, AdviceStatus::no_effect);
  EXPECT_THROW(advise_tip(m, ctx, 0.0, 100.0), UsageError);
}

TEST(Advisory, AdviseTipMatchesBisectionOracle) {
  Rng rng(33);
  int tips = 0, infeasible = 0;
  for (int trial = 0; trial < 1000; ++trial) {
    LinearModel m;
    m.beta.resize(8);
    for (double& b : m.beta) b = normal(rng);
    m.beta[5] = -std::abs(normal(rng)) * 0.2;
    m.beta[7] = normal(rng) * 0.01;
    TipContext ctx{uniform01(rng) * 3600, uniform01(rng) * 50, uniform01(rng), uniform01(rng) * 900,
                   uniform01(rng) * 7000};
    const double max_tip = 100.0;
    const double at_zero = predict_latency(m, features_for(ctx, 0.0));
    const double target = std::max(0.5, at_zero - uniform01(rng) * 30.0);
    const Advice a = advise_tip(m, ctx, target, max_tip);
    auto g = [&](double t) { return predict_latency(m, features_for(ctx, t)) - target; };
    const auto oracle = bisection_root(g, max_tip);
    switch (a.status) {
      case AdviceStatus::tip:
        ++tips;
        EXPECT_NEAR(predict_latency(m, features_for(ctx, a.tip)), target, 1e-6);
        ASSERT_TRUE(oracle);
        EXPECT_NEAR(a.tip, *oracle, 1e-6);
        break;
      case AdviceStatus::infeasible:
        ++infeasible;
        EXPECT_FALSE(oracle);
        break;
      case AdviceStatus::already_met:
        EXPECT_LT(g(0.0), 0.0);
        break;
      case AdviceStatus::no_effect:
        ADD_FAILURE() << "unexpected no_effect";
        break;
    }
  }
  EXPECT_GT(tips, 100);
  EXPECT_GT(infeasible, 10);
}

TEST(Advisory, ModelJsonRoundTrip) {
  Rng rng(3);
  const Planted p = planted_design(rng, 40, 1.0);
  const LinearModel m = ols_fit_design(p.x, p.y, kNames);
  const LinearModel back = linear_from_json(to_json(m));
  EXPECT_EQ(back.beta, m.beta);
  EXPECT_EQ(back.se, m.se);
  EXPECT_EQ(back.f_statistic, m.f_statistic);
  const LogisticModel lm = published_logistic_model();
  EXPECT_EQ(logistic_from_json(to_json(lm)).theta, lm.theta);
}

TEST(Advisory, FitModelsOnSimulatedRecords) {
  Rng rng(9);
  std::vector<sim::LatencyRecord> records;
  for (int i = 0; i < 600; ++i) {
    sim::LatencyRecord r;
    r.order_id = static_cast<std::uint32_t>(i);
    r.time = uniform01(rng) * 180 - 60;
    r.avg_price = 5.0 + 10.0 * static_cast<double>(uniform_index(rng, 3));
    r.proportion = 0.1 + 0.2 * static_cast<double>(uniform_index(rng, 3));
    r.deliverymen_number = 300 * (1 + uniform_index(rng, 3));
    r.tip = uniform01(rng) < r.proportion ? uniform01(rng) * 30 : 0.0;
    r.distance = 500 + uniform01(rng) * 6000;
    r.latency = uniform01(rng) < 0.1 ? -1.0 : 5 + r.distance / 258.0 + normal(rng);
    records.push_back(r);
  }
  const FitReport rep = fit_models(records);
  EXPECT_EQ(rep.record_count, 600u);
  EXPECT_GT(rep.survivor_count, 8u);
  EXPECT_EQ(rep.linear.beta.size(), 8u);
  EXPECT_NEAR(rep.linear.beta[6], 1.0 / 258.0, 1e-3);
}

TEST(Advisory, SpearmanAndPearsonTests) {
  const std::vector<double> x = {1, 2, 3, 4, 5, 6};
  const std::vector<double> y = {1, 4, 9, 16, 25, 36};
  EXPECT_NEAR(stats::spearman_test(x, y).r, 1.0, 1e-12);
  EXPECT_EQ(stats::ranks(std::vector<double>{3, 1, 3, 2}), (std::vector<double>{3.5, 1, 3.5, 2}));
  const auto c = stats::pearson_test(std::vector<double>{1, 2, 3, 4, 5},
                                     std::vector<double>{2, 1, 4, 3, 5});
  EXPECT_NEAR(c.r, 0.8, 1e-12);
  // t = 0.8 * sqrt(3 / 0.36) = 2.3094; two-sided p with 3 dof.
  EXPECT_NEAR(c.p_value, 0.1041, 1e-4);
}

}  // namespace
}  // namespace dispatchlab::advisory
