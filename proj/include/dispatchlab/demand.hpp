#pragma once

// Synthetic demand: survey-marginal order expansion, probabilistic
// destination/restaurant choice, courier placement, and the GDP -> courier
// head-count calibration line.

#include <cstdint>
#include <filesystem>
#include <span>
#include <vector>

#include <nlohmann/json_fwd.hpp>

#include "dispatchlab/city_graph.hpp"
#include "dispatchlab/rng.hpp"

namespace dispatchlab::demand {

using graph::VertexId;

// One answer bucket of a survey question. Samples fall uniformly in
// [value, value + width).
struct Bucket {
  double value = 0.0;
  double width = 0.0;
  double probability = 0.0;
};

struct SurveyMarginals {
  std::vector<Bucket> ordering_time;  // minutes offset from 12:00
  std::vector<Bucket> wait_time;      // minutes the customer accepts
  double tip_willingness = 0.0;
  std::vector<Bucket> tip_amount;  // RMB

  // Throws DataError unless every distribution is non-empty, non-negative,
  // and sums to 1 within 1e-9.
  void validate() const;
};

SurveyMarginals survey_from_json(const nlohmann::json& doc);
SurveyMarginals load_survey_json(const std::filesystem::path& path);

enum OrderFlag : std::uint32_t {
  kNoFlags = 0,
  // No restaurant met the wait bound; the nearest one was used instead.
  kRestaurantFallback = 1u << 0,
};

struct OrderProfile {
  std::uint32_t id = 0;
  double ordering_time = 0.0;  // minutes from 12:00, negative before noon
  double max_wait = 0.0;       // minutes
  double tip = 0.0;            // RMB
  VertexId source = graph::kNoVertex;
  VertexId destination = graph::kNoVertex;
  std::uint32_t flags = kNoFlags;
};

struct LinearFit {
  double a = 0.0;  // intercept
  double b = 0.0;  // slope
};

struct CalibrationPoint {
  double gdp = 0.0;       // 100M RMB
  double couriers = 0.0;  // thousands
};

struct CityCalibration {
  std::vector<CalibrationPoint> gdp_points;
  LinearFit fitted;
  double pearson_r = 0.0;

  static CityCalibration from_points(std::vector<CalibrationPoint> points);
};

// Published city-level line: couriers (thousands) = 0.0029 * GDP - 10.194.
inline constexpr LinearFit kPublishedCourierLine{-10.194, 0.0029};
// Courier count used for the sample district scenario.
inline constexpr long long kPublishedCourierCount = 1213;
// Size of the expanded order population.
inline constexpr std::size_t kPublishedOrderCount = 10257;

double pearson(std::span<const double> x, std::span<const double> y);
LinearFit fit_line_1d(std::span<const double> x, std::span<const double> y);

struct CourierCount {
  long long count = 0;
  bool clamped = false;  // the line went negative and was clamped to zero
};

CourierCount courier_count(double gdp, const LinearFit& line, double coverage);

// Index drawn with probability weights[i] / sum(weights). Throws DataError
// when weights are empty, negative, or all zero.
std::size_t sample_weighted(std::span<const double> weights, Rng& rng);

// Characteristics only (time, wait bound, tip); source/destination unset.
std::vector<OrderProfile> expand_orders(const SurveyMarginals& marginals, std::size_t n,
                                        Rng& rng);

void assign_destination(std::span<OrderProfile> orders, std::span<const VertexId> destinations,
                        std::span<const double> populations, Rng& rng);

void assign_restaurant(OrderProfile& order, std::span<const VertexId> restaurants,
                       std::span<const double> sales, const graph::ShortestPathMatrix& apsp,
                       double speed_kmh, Rng& rng);

std::vector<VertexId> place_couriers(std::size_t count, std::span<const double> populations,
                                     std::span<const VertexId> destination_vertices, Rng& rng);

// gdp,couriers
CityCalibration load_calibration_csv(const std::filesystem::path& path);

// id,t_order_min,max_wait_min,tip_rmb,source,destination,flags
void write_orders_csv(const std::filesystem::path& path, std::span<const OrderProfile> orders);

}  // namespace dispatchlab::demand
