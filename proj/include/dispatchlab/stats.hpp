#pragma once

#include <span>
#include <vector>

namespace dispatchlab::stats {

struct Correlation {
  double r = 0.0;
  double p_value = 1.0;  // two-sided, t approximation with n - 2 dof
  std::size_t n = 0;
};

// Average ranks (1-based); ties share the mean of their positions.
std::vector<double> ranks(std::span<const double> values);

Correlation pearson_test(std::span<const double> x, std::span<const double> y);
Correlation spearman_test(std::span<const double> x, std::span<const double> y);

double student_t_two_sided_p(double t, double dof);
double f_upper_tail_p(double f, double dof1, double dof2);

double mean(std::span<const double> values);

}  // namespace dispatchlab::stats
