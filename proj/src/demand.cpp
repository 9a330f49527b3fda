#include "dispatchlab/demand.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <limits>
#include <numeric>

#include <fmt/format.h>
#include <nlohmann/json.hpp>

#include "dispatchlab/csv.hpp"
#include "dispatchlab/errors.hpp"

namespace dispatchlab::demand {
namespace {

void validate_buckets(const std::vector<Bucket>& buckets, std::string_view name) {
  if (buckets.empty()) throw DataError(fmt::format("survey distribution '{}' is empty", name));
  double total = 0.0;
  for (const Bucket& b : buckets) {
    if (!(b.probability >= 0.0) || !std::isfinite(b.value) || !(b.width >= 0.0)) {
      throw DataError(fmt::format("survey distribution '{}' has an invalid bucket", name));
    }
    total += b.probability;
  }
  if (std::abs(total - 1.0) > 1e-9) {
    throw DataError(fmt::format("survey distribution '{}' sums to {} (expected 1)", name, total));
  }
}

std::vector<Bucket> buckets_from_json(const nlohmann::json& doc, const char* key,
                                      const char* value_key) {
  std::vector<Bucket> out;
  for (const auto& item : doc.at(key)) {
    out.push_back({item.at(value_key).get<double>(), item.value("width", 0.0),
                   item.at("probability").get<double>()});
  }
  return out;
}

double draw_bucket(const std::vector<Bucket>& buckets, std::span<const double> weights, Rng& rng) {
  const Bucket& b = buckets[sample_weighted(weights, rng)];
  return b.width > 0.0 ? b.value + b.width * uniform01(rng) : b.value;
}

std::vector<double> probabilities(const std::vector<Bucket>& buckets) {
  std::vector<double> out;
  out.reserve(buckets.size());
  for (const Bucket& b : buckets) out.push_back(b.probability);
  return out;
}

void check_same_length(std::span<const double> x, std::span<const double> y) {
  if (x.size() != y.size()) throw DataError("sequences differ in length");
  if (x.size() < 2) throw DataError("at least two points are required");
}

}  // namespace

void SurveyMarginals::validate() const {
  validate_buckets(ordering_time, "ordering_time");
  validate_buckets(wait_time, "wait_time");
  validate_buckets(tip_amount, "tip_amount");
  if (!(tip_willingness >= 0.0 && tip_willingness <= 1.0)) {
    throw DataError("tip_willingness must lie in [0,1]");
  }
}

SurveyMarginals survey_from_json(const nlohmann::json& doc) {
  SurveyMarginals m;
  try {
    m.ordering_time = buckets_from_json(doc, "ordering_time", "bucket");
    m.wait_time = buckets_from_json(doc, "wait_time", "bucket");
    m.tip_willingness = doc.at("tip_willingness").get<double>();
    m.tip_amount = buckets_from_json(doc, "tip_amount", "amount");
  } catch (const nlohmann::json::exception& e) {
    throw DataError(fmt::format("survey: {}", e.what()));
  }
  m.validate();
  return m;
}

SurveyMarginals load_survey_json(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw DataError(fmt::format("cannot open {}", path.string()));
  nlohmann::json doc;
  try {
    doc = nlohmann::json::parse(in);
  } catch (const nlohmann::json::exception& e) {
    throw DataError(fmt::format("{}: {}", path.string(), e.what()));
  }
  return survey_from_json(doc);
}

double pearson(std::span<const double> x, std::span<const double> y) {
  check_same_length(x, y);
  const double n = static_cast<double>(x.size());
  const double mx = std::accumulate(x.begin(), x.end(), 0.0) / n;
  const double my = std::accumulate(y.begin(), y.end(), 0.0) / n;
  double sxy = 0.0, sxx = 0.0, syy = 0.0;
  for (std::size_t i = 0; i < x.size(); ++i) {
    sxy += (x[i] - mx) * (y[i] - my);
    sxx += (x[i] - mx) * (x[i] - mx);
    syy += (y[i] - my) * (y[i] - my);
  }
  if (sxx == 0.0 || syy == 0.0) throw DataError("pearson: zero variance");
  return std::clamp(sxy / std::sqrt(sxx * syy), -1.0, 1.0);
}

LinearFit fit_line_1d(std::span<const double> x, std::span<const double> y) {
  check_same_length(x, y);
  const double n = static_cast<double>(x.size());
  const double mx = std::accumulate(x.begin(), x.end(), 0.0) / n;
  const double my = std::accumulate(y.begin(), y.end(), 0.0) / n;
  // Centred sums equal sum(xy) - n*mx*my and sum(x^2) - n*mx^2.
  double sxy = 0.0, sxx = 0.0;
  for (std::size_t i = 0; i < x.size(); ++i) {
    sxy += (x[i] - mx) * (y[i] - my);
    sxx += (x[i] - mx) * (x[i] - mx);
  }
  if (sxx == 0.0) throw DataError("fit_line_1d: x has zero variance");
  const double b = sxy / sxx;
  return {my - b * mx, b};
}

CityCalibration CityCalibration::from_points(std::vector<CalibrationPoint> points) {
  std::vector<double> gdp, couriers;
  for (const auto& p : points) {
    gdp.push_back(p.gdp);
    couriers.push_back(p.couriers);
  }
  CityCalibration c;
  c.fitted = fit_line_1d(gdp, couriers);
  c.pearson_r = pearson(gdp, couriers);
  c.gdp_points = std::move(points);
  return c;
}

CourierCount courier_count(double gdp, const LinearFit& line, double coverage) {
  if (!(gdp > 0.0)) throw UsageError("gdp must be positive");
  if (!(coverage > 0.0 && coverage <= 1.0)) throw UsageError("coverage must lie in (0,1]");
  const double thousands = line.b * gdp + line.a;
  CourierCount out;
  out.clamped = thousands < 0.0;
  out.count = std::llround(std::max(0.0, thousands * 1000.0) * coverage);
  return out;
}

std::size_t sample_weighted(std::span<const double> weights, Rng& rng) {
  double total = 0.0;
  for (double w : weights) {
    if (!(w >= 0.0) || !std::isfinite(w)) throw DataError("weights must be finite and >= 0");
    total += w;
  }
  if (!(total > 0.0)) throw DataError("weights are empty or all zero");
  const double u = uniform01(rng) * total;
  double cumulative = 0.0;
  std::size_t last_positive = 0;
  for (std::size_t i = 0; i < weights.size(); ++i) {
    if (weights[i] <= 0.0) continue;
    cumulative += weights[i];
    last_positive = i;
    if (u < cumulative) return i;
  }
  return last_positive;
}

std::vector<OrderProfile> expand_orders(const SurveyMarginals& marginals, std::size_t n,
                                        Rng& rng) {
  marginals.validate();
  if (n == 0) throw UsageError("order count must be at least 1");
  const auto time_w = probabilities(marginals.ordering_time);
  const auto wait_w = probabilities(marginals.wait_time);
  const auto tip_w = probabilities(marginals.tip_amount);
  std::vector<OrderProfile> orders(n);
  for (std::size_t i = 0; i < n; ++i) {
    OrderProfile& o = orders[i];
    o.id = static_cast<std::uint32_t>(i);
    o.ordering_time = draw_bucket(marginals.ordering_time, time_w, rng);
    o.max_wait = draw_bucket(marginals.wait_time, wait_w, rng);
    const bool tips = uniform01(rng) < marginals.tip_willingness;
    const double amount = draw_bucket(marginals.tip_amount, tip_w, rng);
    o.tip = tips ? amount : 0.0;
  }
  return orders;
}

void assign_destination(std::span<OrderProfile> orders, std::span<const VertexId> destinations,
                        std::span<const double> populations, Rng& rng) {
  if (destinations.size() != populations.size()) {
    throw DataError("destinations and populations differ in length");
  }
  for (OrderProfile& o : orders) o.destination = destinations[sample_weighted(populations, rng)];
}

void assign_restaurant(OrderProfile& order, std::span<const VertexId> restaurants,
                       std::span<const double> sales, const graph::ShortestPathMatrix& apsp,
                       double speed_kmh, Rng& rng) {
  if (restaurants.size() != sales.size()) throw DataError("restaurants and sales differ in length");
  if (order.destination == graph::kNoVertex) throw DataError("order has no destination");
  std::vector<double> weights(sales.size(), 0.0);
  bool any = false;
  for (std::size_t i = 0; i < restaurants.size(); ++i) {
    const graph::Meters d = apsp.distance(restaurants[i], order.destination);
    if (d == graph::kUnreachable || restaurants[i] == order.destination) continue;
    if (graph::travel_time(static_cast<double>(d), speed_kmh) <= order.max_wait) {
      weights[i] = sales[i];
      any = any || sales[i] > 0.0;
    }
  }
  if (any) {
    order.source = restaurants[sample_weighted(weights, rng)];
    return;
  }
  graph::Meters best = graph::kUnreachable;
  for (VertexId r : restaurants) {
    const graph::Meters d = apsp.distance(r, order.destination);
    if (r != order.destination && d < best) {
      best = d;
      order.source = r;
    }
  }
  if (best == graph::kUnreachable) {
    throw DataError(fmt::format("no restaurant can reach destination {}", order.destination));
  }
  order.flags |= kRestaurantFallback;
}

std::vector<VertexId> place_couriers(std::size_t count, std::span<const double> populations,
                                     std::span<const VertexId> destination_vertices, Rng& rng) {
  if (count == 0) throw UsageError("courier count must be at least 1");
  if (destination_vertices.size() != populations.size()) {
    throw DataError("destinations and populations differ in length");
  }
  std::vector<VertexId> out(count);
  for (auto& v : out) v = destination_vertices[sample_weighted(populations, rng)];
  return out;
}

CityCalibration load_calibration_csv(const std::filesystem::path& path) {
  const csv::Table t = csv::read(path);
  const std::size_t c_gdp = t.column("gdp");
  const std::size_t c_couriers = t.column("couriers");
  std::vector<CalibrationPoint> points;
  for (const auto& row : t.rows) {
    points.push_back({csv::to_double(row, c_gdp, path.string()),
                      csv::to_double(row, c_couriers, path.string())});
  }
  return CityCalibration::from_points(std::move(points));
}

void write_orders_csv(const std::filesystem::path& path, std::span<const OrderProfile> orders) {
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw DataError(fmt::format("cannot write {}", path.string()));
  out << "id,t_order_min,max_wait_min,tip_rmb,source,destination,flags\n";
  for (const auto& o : orders) {
    out << fmt::format("{},{:.4f},{:.4f},{:.4f},{},{},{}\n", o.id, o.ordering_time, o.max_wait,
                       o.tip, o.source, o.destination, o.flags);
  }
}

}  // namespace dispatchlab::demand
