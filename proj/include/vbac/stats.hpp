#pragma once

// Two-group comparison statistics for the outcome summary table.

#include <cstddef>
#include <span>
#include <string>
#include <vector>

#include "vbac/cohort.hpp"

namespace vbac {

struct RankTestResult {
  double u_statistic;
  double p_value;
  std::size_t n1;
  std::size_t n2;
  double r1;  // rank sum of group 1 in the pooled ranking
};

// Midranks for ties; U = n1*n2 + n1(n1+1)/2 - R1, i.e. the number of pairs
// where the group-2 value exceeds the group-1 value (ties count one half).
// Two-sided p from the normal approximation with tie-corrected variance and
// a 0.5 continuity correction.
RankTestResult mann_whitney_u(std::span<const double> group1, std::span<const double> group2);

// Pooled (average) ranks, 1-based, of `values`.
std::vector<double> midranks(std::span<const double> values);

enum class PooledSd {
  kEqualWeight,     // sqrt((sd1^2 + sd2^2) / 2)
  kSampleWeighted,  // sqrt(((n1-1)sd1^2 + (n2-1)sd2^2) / (n1+n2-2))
};

struct GroupMoments {
  double mean;
  double sd;
  std::size_t n;
};

struct EffectSize {
  double d;  // (mean2 - mean1) / pooled sd
};

EffectSize cohens_d(GroupMoments group1, GroupMoments group2,
                    PooledSd pooling = PooledSd::kEqualWeight);

struct ChiSquaredResult {
  double statistic;
  double p_value;
  int dof;
};

// Pearson chi-squared test of independence on an r x k count table.
ChiSquaredResult chi_squared(const std::vector<std::vector<double>>& table);

double normal_two_sided_p(double z);
double chi_squared_sf(double x, double dof);

// "<0.0001" below 1e-4, otherwise fixed with 4 decimals.
std::string format_p_value(double p);

struct SummaryRow {
  std::string variable;
  bool numeric;
  std::string group1_stat;  // VBAC (label 1)
  std::string group2_stat;  // repeat cesarean (label 0)
  double p_value;
  double effect_size;  // |d| for numeric rows, NaN for categorical rows
};

struct SummaryTable {
  std::size_t n1 = 0;
  std::size_t n2 = 0;
  std::vector<SummaryRow> rows;

  std::string to_text() const;
  std::string to_csv() const;  // variable,group1_stat,group2_stat,p,effect_size
};

SummaryTable summary_table(const LabeledCohort& cohort, const std::vector<std::string>& variables);

}  // namespace vbac
