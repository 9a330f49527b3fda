#include "dispatchlab/stats.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>

#include <boost/math/distributions/fisher_f.hpp>
#include <boost/math/distributions/students_t.hpp>

#include "dispatchlab/demand.hpp"
#include "dispatchlab/errors.hpp"

namespace dispatchlab::stats {

std::vector<double> ranks(std::span<const double> values) {
  std::vector<std::size_t> idx(values.size());
  std::iota(idx.begin(), idx.end(), std::size_t{0});
  std::stable_sort(idx.begin(), idx.end(),
                   [&](std::size_t a, std::size_t b) { return values[a] < values[b]; });
  std::vector<double> out(values.size());
  std::size_t i = 0;
  while (i < idx.size()) {
    std::size_t j = i;
    while (j + 1 < idx.size() && values[idx[j + 1]] == values[idx[i]]) ++j;
    const double avg = (static_cast<double>(i) + static_cast<double>(j)) / 2.0 + 1.0;
    for (std::size_t k = i; k <= j; ++k) out[idx[k]] = avg;
    i = j + 1;
  }
  return out;
}

double student_t_two_sided_p(double t, double dof) {
  if (!std::isfinite(t)) return 0.0;
  boost::math::students_t dist(dof);
  return 2.0 * boost::math::cdf(boost::math::complement(dist, std::abs(t)));
}

double f_upper_tail_p(double f, double dof1, double dof2) {
  if (!std::isfinite(f)) return 0.0;
  if (f <= 0.0) return 1.0;
  boost::math::fisher_f dist(dof1, dof2);
  return boost::math::cdf(boost::math::complement(dist, f));
}

Correlation pearson_test(std::span<const double> x, std::span<const double> y) {
  Correlation c;
  c.n = x.size();
  c.r = demand::pearson(x, y);
  if (c.n < 3) throw DataError("correlation test needs at least three points");
  const double dof = static_cast<double>(c.n) - 2.0;
  const double denom = 1.0 - c.r * c.r;
  const double t = denom <= 0.0 ? INFINITY : c.r * std::sqrt(dof / denom);
  c.p_value = student_t_two_sided_p(t, dof);
  return c;
}

Correlation spearman_test(std::span<const double> x, std::span<const double> y) {
  const auto rx = ranks(x);
  const auto ry = ranks(y);
  return pearson_test(rx, ry);
}

double mean(std::span<const double> values) {
  if (values.empty()) throw DataError("mean of empty sequence");
  return std::accumulate(values.begin(), values.end(), 0.0) / static_cast<double>(values.size());
}

}  // namespace dispatchlab::stats
