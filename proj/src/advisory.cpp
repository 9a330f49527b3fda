#include "dispatchlab/advisory.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <limits>

#include <fmt/format.h>

#include "dispatchlab/errors.hpp"
#include "dispatchlab/stats.hpp"

namespace dispatchlab::advisory {
namespace {

constexpr double kInf = std::numeric_limits<double>::infinity();

double softplus(double z) { return std::max(z, 0.0) + std::log1p(std::exp(-std::abs(z))); }

double mean_nll(const Eigen::VectorXd& z, const Eigen::VectorXd& y) {
  double sum = 0.0;
  for (Eigen::Index i = 0; i < z.size(); ++i) sum += softplus(z[i]) - y[i] * z[i];
  return sum / static_cast<double>(z.size());
}

Eigen::VectorXd sigmoid(const Eigen::VectorXd& z) {
  Eigen::VectorXd p(z.size());
  for (Eigen::Index i = 0; i < z.size(); ++i) p[i] = advisory::sigmoid(z[i]);
  return p;
}

void check_labels(const Eigen::VectorXd& labels) {
  bool pos = false, neg = false;
  for (Eigen::Index i = 0; i < labels.size(); ++i) {
    if (labels[i] == 1.0) {
      pos = true;
    } else if (labels[i] == 0.0) {
      neg = true;
    } else {
      throw DataError("labels must be 0 or 1");
    }
  }
  if (!pos || !neg) throw DataError("both classes must be present");
}

Eigen::VectorXd linear_scores(const LogisticModel& model, const Eigen::MatrixXd& features) {
  const Eigen::Map<const Eigen::VectorXd> theta(model.theta.data(),
                                                static_cast<Eigen::Index>(model.theta.size()));
  Eigen::VectorXd z = features * theta;
  if (model.has_intercept) z.array() += model.intercept;
  return z;
}

}  // namespace

const std::array<std::string, kFeatureCount + 1> kLinearTermNames{
    "constant", "time^2", "average price", "proportion", "deliverymen number",
    "tip price", "distance", "cost (distance/price)"};

FeatureRow make_feature_row(const sim::LatencyRecord& r) {
  FeatureRow row;
  row.x = {r.time * r.time,
           r.avg_price,
           r.proportion,
           static_cast<double>(r.deliverymen_number),
           r.tip,
           r.distance,
           r.distance / (r.tip + 1.0)};
  row.y_latency = r.latency;
  row.y_deliverable = (r.latency >= 0.0 && r.latency <= kDeliverableMinutes) ? 1 : 0;
  return row;
}

std::vector<FeatureRow> make_feature_rows(std::span<const sim::LatencyRecord> records) {
  std::vector<FeatureRow> rows;
  rows.reserve(records.size());
  for (const auto& r : records) rows.push_back(make_feature_row(r));
  return rows;
}

double sigmoid(double z) {
  if (z >= 0.0) return 1.0 / (1.0 + std::exp(-z));
  const double e = std::exp(z);
  return e / (1.0 + e);
}

double LogisticModel::score(std::span<const double> features) const {
  if (features.size() != theta.size()) throw DataError("feature count mismatch");
  double z = has_intercept ? intercept : 0.0;
  for (std::size_t j = 0; j < theta.size(); ++j) z += theta[j] * features[j];
  return z;
}

double logistic_loss(const LogisticModel& model, const Eigen::MatrixXd& features,
                     const Eigen::VectorXd& labels) {
  return mean_nll(linear_scores(model, features), labels);
}

Eigen::VectorXd logistic_gradient(const LogisticModel& model, const Eigen::MatrixXd& features,
                                  const Eigen::VectorXd& labels) {
  const Eigen::VectorXd residual = sigmoid(linear_scores(model, features)) - labels;
  const double m = static_cast<double>(features.rows());
  Eigen::VectorXd g(features.cols() + (model.has_intercept ? 1 : 0));
  g.head(features.cols()) = features.transpose() * residual / m;
  if (model.has_intercept) g[features.cols()] = residual.sum() / m;
  return g;
}

LogisticModel logistic_fit(const Eigen::MatrixXd& features, const Eigen::VectorXd& labels,
                           const LogisticOptions& options) {
  if (features.rows() != labels.size()) throw DataError("features and labels differ in length");
  if (features.rows() == 0) throw DataError("no rows to fit");
  check_labels(labels);
  if (!(options.learning_rate > 0.0)) throw UsageError("learning rate must be positive");

  const Eigen::Index m = features.rows();
  const Eigen::Index k = features.cols();
  LogisticModel model;
  model.has_intercept = options.intercept;
  model.mean.assign(static_cast<std::size_t>(k), 0.0);
  model.scale.assign(static_cast<std::size_t>(k), 1.0);

  // Without an intercept, centring would smuggle one in; scale only.
  Eigen::MatrixXd z(m, k + (options.intercept ? 1 : 0));
  for (Eigen::Index j = 0; j < k; ++j) {
    const auto col = features.col(j);
    const double mu = options.intercept ? col.mean() : 0.0;
    const double spread = std::sqrt((col.array() - mu).square().mean());
    const double s = spread > 0.0 ? spread : 1.0;
    model.mean[j] = mu;
    model.scale[j] = s;
    z.col(j) = (col.array() - mu) / s;
  }
  if (options.intercept) z.col(k).setOnes();

  Eigen::VectorXd w = Eigen::VectorXd::Zero(z.cols());
  double loss = mean_nll(z * w, labels);
  model.loss_trace.push_back(loss);
  double rate = options.learning_rate;
  const double min_rate = options.learning_rate * 1e-12;
  for (std::size_t it = 0; it < options.max_iters; ++it) {
    const Eigen::VectorXd grad = z.transpose() * (sigmoid(z * w) - labels) / static_cast<double>(m);
    Eigen::VectorXd next;
    double next_loss = kInf;
    // A step that raises J is halved until it does not.
    while (rate >= min_rate) {
      next = w - rate * grad;
      next_loss = mean_nll(z * next, labels);
      if (next_loss <= loss) break;
      rate *= 0.5;
    }
    if (rate < min_rate) break;
    const double improvement = loss - next_loss;
    w = std::move(next);
    loss = next_loss;
    model.loss_trace.push_back(loss);
    ++model.iterations;
    if (improvement < options.tolerance) break;
  }

  model.theta.resize(static_cast<std::size_t>(k));
  double intercept = options.intercept ? w[k] : 0.0;
  for (Eigen::Index j = 0; j < k; ++j) {
    model.theta[j] = w[j] / model.scale[j];
    intercept -= w[j] * model.mean[j] / model.scale[j];
  }
  model.intercept = options.intercept ? intercept : 0.0;
  return model;
}

Eigen::MatrixXd logistic_design(std::span<const FeatureRow> rows) {
  Eigen::MatrixXd x(static_cast<Eigen::Index>(rows.size()), kLogisticFeatureCount);
  for (std::size_t i = 0; i < rows.size(); ++i) {
    for (std::size_t j = 0; j < kLogisticFeatureCount; ++j) x(i, j) = rows[i].x[j];
  }
  return x;
}

LogisticModel logistic_fit(std::span<const FeatureRow> rows, const LogisticOptions& options) {
  Eigen::VectorXd y(static_cast<Eigen::Index>(rows.size()));
  for (std::size_t i = 0; i < rows.size(); ++i) y[i] = rows[i].y_deliverable;
  return logistic_fit(logistic_design(rows), y, options);
}

Classification logistic_predict(const LogisticModel& model, std::span<const double> features) {
  Classification c;
  c.probability = sigmoid(model.score(features));
  c.label = c.probability >= 0.5 ? 1 : 0;
  return c;
}

Classification logistic_predict(const LogisticModel& model, const FeatureRow& row) {
  return logistic_predict(model,
                          std::span<const double>(row.x.data(), model.theta.size()));
}

double roc_auc(std::span<const double> scores, std::span<const int> labels) {
  if (scores.size() != labels.size()) throw DataError("scores and labels differ in length");
  const auto r = stats::ranks(scores);
  double positives = 0.0, negatives = 0.0, rank_sum = 0.0;
  for (std::size_t i = 0; i < labels.size(); ++i) {
    if (labels[i] == 1) {
      positives += 1.0;
      rank_sum += r[i];
    } else if (labels[i] == 0) {
      negatives += 1.0;
    } else {
      throw DataError("labels must be 0 or 1");
    }
  }
  if (positives == 0.0 || negatives == 0.0) throw DataError("AUC needs both classes");
  return (rank_sum - positives * (positives + 1.0) / 2.0) / (positives * negatives);
}

std::vector<FeatureRow> filter_deliverable(const LogisticModel& model,
                                           std::span<const FeatureRow> rows) {
  std::vector<FeatureRow> out;
  for (const auto& row : rows) {
    if (row.y_deliverable == 1 && logistic_predict(model, row).label == 1) out.push_back(row);
  }
  return out;
}

LinearModel ols_fit_design(const Eigen::MatrixXd& design, const Eigen::VectorXd& response,
                           std::span<const std::string> column_names) {
  const Eigen::Index n = design.rows();
  const Eigen::Index p = design.cols();
  if (response.size() != n) throw DataError("design and response differ in length");
  if (n <= p) throw DataError(fmt::format("OLS needs more than {} rows, got {}", p, n));
  auto name = [&](Eigen::Index j) {
    return static_cast<std::size_t>(j) < column_names.size() ? column_names[j]
                                                             : fmt::format("column {}", j);
  };

  // Equilibrate columns so X'X is well scaled; b is unscaled afterwards.
  Eigen::VectorXd col_scale(p);
  for (Eigen::Index j = 0; j < p; ++j) {
    const double norm = design.col(j).norm();
    if (norm == 0.0) throw DataError(fmt::format("design is rank-deficient at '{}'", name(j)));
    col_scale[j] = 1.0 / norm;
  }
  const Eigen::MatrixXd xs = design * col_scale.asDiagonal();
  for (Eigen::Index j = 1; j < p; ++j) {
    Eigen::ColPivHouseholderQR<Eigen::MatrixXd> qr(xs.leftCols(j + 1));
    qr.setThreshold(1e-10);
    if (qr.rank() < j + 1) {
      throw DataError(fmt::format("design is rank-deficient at '{}'", name(j)));
    }
  }

  const Eigen::MatrixXd gram = xs.transpose() * xs;
  const Eigen::LLT<Eigen::MatrixXd> llt(gram);
  if (llt.info() != Eigen::Success) throw DataError("X'X is not positive definite");
  const Eigen::MatrixXd gram_inv = llt.solve(Eigen::MatrixXd::Identity(p, p));
  const Eigen::VectorXd b = col_scale.asDiagonal() * (gram_inv * (xs.transpose() * response));

  const Eigen::VectorXd residual = response - design * b;
  LinearModel m;
  m.n = static_cast<std::size_t>(n);
  m.beta.assign(b.data(), b.data() + p);
  m.sse = residual.squaredNorm();
  const double dof = static_cast<double>(n - p);
  m.s2 = m.sse / dof;
  const double s = std::sqrt(m.s2);
  for (Eigen::Index j = 0; j < p; ++j) {
    const double se = s * col_scale[j] * std::sqrt(gram_inv(j, j));
    m.se.push_back(se);
    const double t = se > 0.0 ? b[j] / se : (b[j] == 0.0 ? 0.0 : std::copysign(kInf, b[j]));
    m.t_values.push_back(t);
    m.p_values.push_back(stats::student_t_two_sided_p(t, dof));
  }
  const double sst = (response.array() - response.mean()).square().sum();
  m.r_squared = sst > 0.0 ? 1.0 - m.sse / sst : 1.0;
  const double regression_dof = static_cast<double>(p - 1);
  if (m.sse > 0.0) {
    m.f_statistic = ((sst - m.sse) / regression_dof) / m.s2;
  } else {
    m.f_statistic = kInf;
  }
  m.f_p_value = stats::f_upper_tail_p(m.f_statistic, regression_dof, dof);
  return m;
}

Eigen::MatrixXd linear_design(std::span<const FeatureRow> rows) {
  Eigen::MatrixXd x(static_cast<Eigen::Index>(rows.size()), kFeatureCount + 1);
  for (std::size_t i = 0; i < rows.size(); ++i) {
    x(i, 0) = 1.0;
    for (std::size_t j = 0; j < kFeatureCount; ++j) x(i, j + 1) = rows[i].x[j];
  }
  return x;
}

LinearModel ols_fit(std::span<const FeatureRow> rows) {
  if (rows.empty()) throw DataError("no rows survived the deliverability filter");
  Eigen::VectorXd y(static_cast<Eigen::Index>(rows.size()));
  for (std::size_t i = 0; i < rows.size(); ++i) y[i] = rows[i].y_latency;
  return ols_fit_design(linear_design(rows), y, kLinearTermNames);
}

double predict_latency(const LinearModel& model, std::span<const double, kFeatureCount> x) {
  if (model.beta.size() != kFeatureCount + 1) throw DataError("linear model needs 8 coefficients");
  double y = model.beta[0];
  for (std::size_t j = 0; j < kFeatureCount; ++j) y += model.beta[j + 1] * x[j];
  return y;
}

double predict_latency(const LinearModel& model, const FeatureRow& row) {
  return predict_latency(model, std::span<const double, kFeatureCount>(row.x));
}

LinearModel published_linear_model() {
  LinearModel m;
  m.beta = {-0.1687, -0.0025, -0.3371, -33.6719, -0.0167, -0.088, 0.0079, 0.0010};
  m.t_values = {-0.369, -20.482, -0.369, -3.164, 1.102, -7.383, 67.478, 3.254};
  m.f_statistic = 911.4;
  return m;
}

LogisticModel published_logistic_model() {
  LogisticModel m;
  m.theta = {0.0154, 0.0276, -0.8862, 0.0066, -0.0009};
  m.mean.assign(kLogisticFeatureCount, 0.0);
  m.scale.assign(kLogisticFeatureCount, 1.0);
  return m;
}

std::string_view to_string(AdviceStatus status) {
  switch (status) {
    case AdviceStatus::tip:
      return "tip";
    case AdviceStatus::already_met:
      return "already_met";
    case AdviceStatus::infeasible:
      return "infeasible";
    case AdviceStatus::no_effect:
      return "no_effect";
  }
  return "infeasible";
}

std::array<double, kFeatureCount> features_for(const TipContext& c, double tip) {
  return {c.x1, c.x2, c.x3, c.x4, tip, c.x6, c.x6 / (tip + 1.0)};
}

Advice advise_tip(const LinearModel& model, const TipContext& context, double target_latency,
                  double max_tip) {
  if (!(target_latency > 0.0)) throw UsageError("target latency must be positive");
  if (!(max_tip >= 0.0)) throw UsageError("max_tip must be non-negative");
  if (model.beta.size() != kFeatureCount + 1) throw DataError("linear model needs 8 coefficients");

  auto f = [&](double t) { return predict_latency(model, features_for(context, t)) - target_latency; };
  Advice advice;
  advice.predicted_latency = f(0.0) + target_latency;
  const double b_tip = model.beta[5];
  const double b_cost = model.beta[7];
  if (b_tip == 0.0 && b_cost == 0.0) {
    advice.status = AdviceStatus::no_effect;
    return advice;
  }
  if (f(0.0) < 0.0) {
    advice.status = AdviceStatus::already_met;
    return advice;
  }

  // f(t) * (t + 1) = b_tip t^2 + (b_tip + c) t + (c + b_cost x6), with c the
  // tip-free part of f.
  const double c = f(0.0) - b_cost * context.x6;
  const double qa = b_tip;
  const double qb = b_tip + c;
  const double qc = c + b_cost * context.x6;

  std::vector<double> roots;
  if (qa == 0.0) {
    if (qb != 0.0) {
      roots.push_back(-qc / qb);
    } else if (qc == 0.0) {
      roots.push_back(0.0);
    }
  } else {
    const double disc = qb * qb - 4.0 * qa * qc;
    if (disc >= 0.0) {
      const double q = -0.5 * (qb + std::copysign(std::sqrt(disc), qb));
      if (q != 0.0) {
        roots.push_back(q / qa);
        roots.push_back(qc / q);
      } else {
        roots.push_back(0.0);
      }
    }
  }

  // Newton polish on f keeps back-substitution error near machine precision.
  const double slack = 1e-9 * std::max(1.0, max_tip);
  double best = kInf;
  for (double r : roots) {
    if (!std::isfinite(r) || r < -slack || r > max_tip + slack) continue;
    double t = std::clamp(r, 0.0, max_tip);
    for (int it = 0; it < 4; ++it) {
      const double deriv = b_tip - b_cost * context.x6 / ((t + 1.0) * (t + 1.0));
      if (deriv == 0.0) break;
      const double step = f(t) / deriv;
      const double next = std::clamp(t - step, 0.0, max_tip);
      if (std::abs(f(next)) >= std::abs(f(t))) break;
      t = next;
    }
    best = std::min(best, t);
  }

  if (std::isfinite(best)) {
    advice.status = AdviceStatus::tip;
    advice.tip = best;
    advice.predicted_latency = f(best) + target_latency;
  } else {
    advice.status = AdviceStatus::infeasible;
  }
  return advice;
}

FitReport fit_models(std::span<const sim::LatencyRecord> records, const LogisticOptions& options) {
  FitReport report;
  report.record_count = records.size();
  const auto rows = make_feature_rows(records);
  report.logistic = logistic_fit(rows, options);
  std::vector<double> scores;
  std::vector<int> labels;
  for (const auto& row : rows) {
    scores.push_back(logistic_predict(report.logistic, row).probability);
    labels.push_back(row.y_deliverable);
  }
  report.auc = roc_auc(scores, labels);
  const auto survivors = filter_deliverable(report.logistic, rows);
  report.survivor_count = survivors.size();
  if (survivors.empty()) throw DataError("no rows survived the deliverability filter");
  report.linear = ols_fit(survivors);
  return report;
}

nlohmann::json to_json(const LogisticModel& model) {
  nlohmann::json j;
  j["theta"] = model.theta;
  j["intercept"] = model.has_intercept ? nlohmann::json(model.intercept) : nlohmann::json(nullptr);
  j["standardization"] = {{"mean", model.mean}, {"scale", model.scale}};
  j["iterations"] = model.iterations;
  j["final_loss"] = model.loss_trace.empty() ? nlohmann::json(nullptr)
                                             : nlohmann::json(model.loss_trace.back());
  return j;
}

nlohmann::json to_json(const LinearModel& model) {
  auto number = [](double x) { return std::isfinite(x) ? nlohmann::json(x) : nlohmann::json(nullptr); };
  nlohmann::json t = nlohmann::json::array();
  for (double x : model.t_values) t.push_back(number(x));
  nlohmann::json j;
  j["beta"] = model.beta;
  j["sse"] = model.sse;
  j["s2"] = model.s2;
  j["se"] = model.se;
  j["t"] = t;
  j["p"] = model.p_values;
  j["f"] = number(model.f_statistic);
  j["f_p"] = model.f_p_value;
  j["r2"] = model.r_squared;
  j["n"] = model.n;
  return j;
}

LogisticModel logistic_from_json(const nlohmann::json& doc) {
  LogisticModel m;
  try {
    m.theta = doc.at("theta").get<std::vector<double>>();
    m.has_intercept = doc.contains("intercept") && !doc.at("intercept").is_null();
    m.intercept = m.has_intercept ? doc.at("intercept").get<double>() : 0.0;
    if (doc.contains("standardization")) {
      m.mean = doc.at("standardization").at("mean").get<std::vector<double>>();
      m.scale = doc.at("standardization").at("scale").get<std::vector<double>>();
    }
    m.iterations = doc.value("iterations", std::size_t{0});
  } catch (const nlohmann::json::exception& e) {
    throw DataError(fmt::format("logistic model: {}", e.what()));
  }
  return m;
}

LinearModel linear_from_json(const nlohmann::json& doc) {
  LinearModel m;
  auto number = [](const nlohmann::json& x) { return x.is_null() ? kInf : x.get<double>(); };
  try {
    m.beta = doc.at("beta").get<std::vector<double>>();
    if (m.beta.size() != kFeatureCount + 1) throw DataError("linear model needs 8 coefficients");
    m.sse = doc.value("sse", 0.0);
    m.s2 = doc.value("s2", 0.0);
    m.se = doc.value("se", std::vector<double>{});
    if (doc.contains("t")) {
      for (const auto& x : doc.at("t")) m.t_values.push_back(number(x));
    }
    m.p_values = doc.value("p", std::vector<double>{});
    if (doc.contains("f")) m.f_statistic = number(doc.at("f"));
    m.f_p_value = doc.value("f_p", 1.0);
    m.r_squared = doc.value("r2", 0.0);
    m.n = doc.value("n", std::size_t{0});
  } catch (const nlohmann::json::exception& e) {
    throw DataError(fmt::format("linear model: {}", e.what()));
  }
  return m;
}

void write_partial_dependence(const std::filesystem::path& path, const LinearModel& model,
                              std::span<const FeatureRow> rows, std::size_t points) {
  if (rows.empty()) throw DataError("partial dependence needs rows");
  if (points < 2) throw UsageError("partial dependence needs at least two points");
  std::array<double, kFeatureCount> mean{}, lo, hi;
  lo.fill(kInf);
  hi.fill(-kInf);
  for (const auto& r : rows) {
    for (std::size_t j = 0; j < kFeatureCount; ++j) {
      mean[j] += r.x[j];
      lo[j] = std::min(lo[j], r.x[j]);
      hi[j] = std::max(hi[j], r.x[j]);
    }
  }
  for (double& m : mean) m /= static_cast<double>(rows.size());

  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw DataError(fmt::format("cannot write {}", path.string()));
  out << "feature,value,latency\n";
  for (std::size_t j = 0; j < kFeatureCount; ++j) {
    for (std::size_t k = 0; k < points; ++k) {
      auto x = mean;
      x[j] = lo[j] + (hi[j] - lo[j]) * static_cast<double>(k) / static_cast<double>(points - 1);
      out << fmt::format("x{},{:.6f},{:.6f}\n", j + 1, x[j], predict_latency(model, x));
    }
  }
}

}  // namespace dispatchlab::advisory
