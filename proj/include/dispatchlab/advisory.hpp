#pragma once

// Deliverability filter (logistic regression), latency model (OLS with
// inference), and inversion of the latency model into an advisory tip.
//
// Feature layout, shared by both models:
//   x1 time^2 (minutes from 12:00, squared)   x5 tip (RMB)
//   x2 average tip price (RMB)                x6 distance (m)
//   x3 tipping proportion                     x7 distance / (tip + 1)
//   x4 courier count

#include <array>
#include <filesystem>
#include <span>
#include <string>
#include <vector>

#include <Eigen/Dense>
#include <nlohmann/json.hpp>

#include "dispatchlab/simulator.hpp"

namespace dispatchlab::advisory {

inline constexpr std::size_t kFeatureCount = 7;
inline constexpr std::size_t kLogisticFeatureCount = 5;  // x1..x5
inline constexpr double kDeliverableMinutes = 120.0;

extern const std::array<std::string, kFeatureCount + 1> kLinearTermNames;

struct FeatureRow {
  std::array<double, kFeatureCount> x{};  // x[0] is x1
  double y_latency = 0.0;
  int y_deliverable = 0;
};

FeatureRow make_feature_row(const sim::LatencyRecord& record);
std::vector<FeatureRow> make_feature_rows(std::span<const sim::LatencyRecord> records);

double sigmoid(double z);

struct LogisticOptions {
  double learning_rate = 1.0;
  std::size_t max_iters = 20000;
  double tolerance = 1e-9;  // stop once J improves by less than this
  bool intercept = false;
};

struct LogisticModel {
  std::vector<double> theta;  // original feature units
  bool has_intercept = false;
  double intercept = 0.0;
  std::vector<double> mean;   // standardization used while fitting
  std::vector<double> scale;
  std::vector<double> loss_trace;
  std::size_t iterations = 0;

  double score(std::span<const double> features) const;  // theta . x + intercept
};

// Mean negative log-likelihood J and its gradient in original units.
// Gradient layout: one entry per theta, then the intercept when present.
double logistic_loss(const LogisticModel& model, const Eigen::MatrixXd& features,
                     const Eigen::VectorXd& labels);
Eigen::VectorXd logistic_gradient(const LogisticModel& model, const Eigen::MatrixXd& features,
                                  const Eigen::VectorXd& labels);

// Gradient descent on standardized features. Throws DataError unless both
// classes are present.
LogisticModel logistic_fit(const Eigen::MatrixXd& features, const Eigen::VectorXd& labels,
                           const LogisticOptions& options = {});
LogisticModel logistic_fit(std::span<const FeatureRow> rows, const LogisticOptions& options = {});

Eigen::MatrixXd logistic_design(std::span<const FeatureRow> rows);

struct Classification {
  double probability = 0.0;
  int label = 0;  // 1 iff probability >= 0.5
};

Classification logistic_predict(const LogisticModel& model, std::span<const double> features);
Classification logistic_predict(const LogisticModel& model, const FeatureRow& row);

// Probability a random positive outranks a random negative, ties count 1/2.
double roc_auc(std::span<const double> scores, std::span<const int> labels);

// Rows predicted deliverable that were actually delivered within two hours.
std::vector<FeatureRow> filter_deliverable(const LogisticModel& model,
                                           std::span<const FeatureRow> rows);

struct LinearModel {
  std::vector<double> beta;  // constant, x1..x7
  std::vector<double> se;
  std::vector<double> t_values;
  std::vector<double> p_values;
  double sse = 0.0;
  double s2 = 0.0;
  double f_statistic = 0.0;
  double f_p_value = 1.0;
  double r_squared = 0.0;
  std::size_t n = 0;
};

// b = (X'X)^-1 X'Y on a design whose first column is the constant.
// Throws DataError naming the first column that makes X rank-deficient.
LinearModel ols_fit_design(const Eigen::MatrixXd& design, const Eigen::VectorXd& response,
                           std::span<const std::string> column_names);
LinearModel ols_fit(std::span<const FeatureRow> rows);

Eigen::MatrixXd linear_design(std::span<const FeatureRow> rows);

double predict_latency(const LinearModel& model, std::span<const double, kFeatureCount> x);
double predict_latency(const LinearModel& model, const FeatureRow& row);

// Published coefficient tables, stored as presets.
LinearModel published_linear_model();
LogisticModel published_logistic_model();

struct TipContext {
  double x1 = 0.0;  // time^2
  double x2 = 0.0;  // average tip price
  double x3 = 0.0;  // proportion
  double x4 = 0.0;  // couriers
  double x6 = 0.0;  // distance, meters
};

enum class AdviceStatus {
  tip,          // predicted latency equals the target at `tip`
  already_met,  // the target is met without a tip
  infeasible,   // no tip in [0, max_tip] reaches the target
  no_effect,    // the model has zero tip and cost coefficients
};

std::string_view to_string(AdviceStatus status);

struct Advice {
  AdviceStatus status = AdviceStatus::infeasible;
  double tip = 0.0;
  double predicted_latency = 0.0;  // at `tip` (at 0 unless status == tip)
};

std::array<double, kFeatureCount> features_for(const TipContext& context, double tip);

Advice advise_tip(const LinearModel& model, const TipContext& context, double target_latency,
                  double max_tip);

struct FitReport {
  LogisticModel logistic;
  double auc = 0.0;
  LinearModel linear;
  std::size_t record_count = 0;
  std::size_t survivor_count = 0;
};

// Logistic filter on every record, OLS on the survivors.
FitReport fit_models(std::span<const sim::LatencyRecord> records,
                     const LogisticOptions& options = {});

nlohmann::json to_json(const LogisticModel& model);
nlohmann::json to_json(const LinearModel& model);
LogisticModel logistic_from_json(const nlohmann::json& doc);
LinearModel linear_from_json(const nlohmann::json& doc);

// feature,value,latency: each feature swept over its observed range with the
// others held at their means.
void write_partial_dependence(const std::filesystem::path& path, const LinearModel& model,
                              std::span<const FeatureRow> rows, std::size_t points = 21);

}  // namespace dispatchlab::advisory
