#include "vbac/stats.hpp"

#include <fmt/format.h>

#include <algorithm>
#include <boost/math/special_functions/gamma.hpp>
#include <cmath>
#include <limits>
#include <map>
#include <numeric>

#include "vbac/errors.hpp"
#include "vbac/util.hpp"

namespace vbac {

std::vector<double> midranks(std::span<const double> values) {
  const std::size_t n = values.size();
  std::vector<std::size_t> order(n);
  std::iota(order.begin(), order.end(), std::size_t{0});
  std::stable_sort(order.begin(), order.end(),
                   [&](std::size_t a, std::size_t b) { return values[a] < values[b]; });
  std::vector<double> ranks(n);
  for (std::size_t i = 0; i < n;) {
    std::size_t j = i;
    while (j + 1 < n && values[order[j + 1]] == values[order[i]]) ++j;
    const double rank = 0.5 * static_cast<double>(i + j) + 1.0;
    for (std::size_t k = i; k <= j; ++k) ranks[order[k]] = rank;
    i = j + 1;
  }
  return ranks;
}

double normal_two_sided_p(double z) {
  return std::clamp(std::erfc(std::abs(z) / std::sqrt(2.0)), 0.0, 1.0);
}

double chi_squared_sf(double x, double dof) {
  if (x <= 0) return 1.0;
  return boost::math::gamma_q(0.5 * dof, 0.5 * x);
}

RankTestResult mann_whitney_u(std::span<const double> group1, std::span<const double> group2) {
  if (group1.empty() || group2.empty()) throw DataError("mann_whitney_u", "empty group");
  const std::size_t n1 = group1.size();
  const std::size_t n2 = group2.size();
  std::vector<double> pooled(group1.begin(), group1.end());
  pooled.insert(pooled.end(), group2.begin(), group2.end());
  const auto ranks = midranks(pooled);
  const double r1 = std::accumulate(ranks.begin(), ranks.begin() + static_cast<std::ptrdiff_t>(n1), 0.0);

  const double dn1 = static_cast<double>(n1);
  const double dn2 = static_cast<double>(n2);
  const double u = dn1 * dn2 + dn1 * (dn1 + 1) / 2 - r1;

  // Tie term sum(t^3 - t) over groups of equal values.
  std::vector<double> sorted = pooled;
  std::sort(sorted.begin(), sorted.end());
  double tie_term = 0;
  for (std::size_t i = 0; i < sorted.size();) {
    std::size_t j = i;
    while (j < sorted.size() && sorted[j] == sorted[i]) ++j;
    const double t = static_cast<double>(j - i);
    tie_term += t * t * t - t;
    i = j;
  }
  const double n = dn1 + dn2;
  const double mean_u = dn1 * dn2 / 2;
  const double var_u = n > 1 ? dn1 * dn2 / 12 * ((n + 1) - tie_term / (n * (n - 1))) : 0.0;

  double p = 1.0;
  if (var_u > 0) {
    const double z = std::max(0.0, std::abs(u - mean_u) - 0.5) / std::sqrt(var_u);
    p = normal_two_sided_p(z);
  }
  return RankTestResult{u, p, n1, n2, r1};
}

EffectSize cohens_d(GroupMoments group1, GroupMoments group2, PooledSd pooling) {
  if (group1.n < 2 || group2.n < 2) throw DataError("cohens_d", "each group needs n >= 2");
  if (group1.sd < 0 || group2.sd < 0) throw DataError("cohens_d", "standard deviations must be >= 0");
  const double v1 = group1.sd * group1.sd;
  const double v2 = group2.sd * group2.sd;
  double pooled = 0;
  if (pooling == PooledSd::kEqualWeight) {
    pooled = std::sqrt((v1 + v2) / 2);
  } else {
    const double n1 = static_cast<double>(group1.n);
    const double n2 = static_cast<double>(group2.n);
    pooled = std::sqrt(((n1 - 1) * v1 + (n2 - 1) * v2) / (n1 + n2 - 2));
  }
  const double diff = group2.mean - group1.mean;
  if (pooled == 0) {
    if (diff != 0) throw DataError("cohens_d", "pooled sd is zero but the means differ");
    return EffectSize{0.0};
  }
  return EffectSize{diff / pooled};
}

ChiSquaredResult chi_squared(const std::vector<std::vector<double>>& table) {
  const std::size_t rows = table.size();
  if (rows < 2) throw DataError("chi_squared", "table needs at least two rows");
  const std::size_t cols = table.front().size();
  if (cols < 2) throw DataError("chi_squared", "table needs at least two columns");
  std::vector<double> row_sum(rows, 0.0), col_sum(cols, 0.0);
  double total = 0;
  for (std::size_t i = 0; i < rows; ++i) {
    if (table[i].size() != cols) throw DataError("chi_squared", "ragged table");
    for (std::size_t j = 0; j < cols; ++j) {
      if (table[i][j] < 0) throw DataError("chi_squared", "negative count");
      row_sum[i] += table[i][j];
      col_sum[j] += table[i][j];
      total += table[i][j];
    }
  }
  for (double s : row_sum)
    if (s <= 0) throw DataError("chi_squared", "zero row margin");
  for (double s : col_sum)
    if (s <= 0) throw DataError("chi_squared", "zero column margin");

  double stat = 0;
  for (std::size_t i = 0; i < rows; ++i)
    for (std::size_t j = 0; j < cols; ++j) {
      const double expected = row_sum[i] * col_sum[j] / total;
      const double d = table[i][j] - expected;
      stat += d * d / expected;
    }
  const int dof = static_cast<int>((rows - 1) * (cols - 1));
  return ChiSquaredResult{stat, chi_squared_sf(stat, dof), dof};
}

std::string format_p_value(double p) {
  if (p < 1e-4) return "<0.0001";
  return fmt::format("{:.4f}", p);
}

namespace {

GroupMoments moments(const std::vector<double>& v) {
  const double n = static_cast<double>(v.size());
  const double mean = std::accumulate(v.begin(), v.end(), 0.0) / n;
  double ss = 0;
  for (double x : v) ss += (x - mean) * (x - mean);
  const double sd = v.size() > 1 ? std::sqrt(ss / (n - 1)) : 0.0;
  return GroupMoments{mean, sd, v.size()};
}

}  // namespace

SummaryTable summary_table(const LabeledCohort& cohort, const std::vector<std::string>& variables) {
  SummaryTable table;
  for (auto l : cohort.labels) (l ? table.n1 : table.n2)++;
  for (const auto& name : variables) {
    const auto field = find_field(name);
    if (!field) throw ConfigError("unknown summary variable '" + name + "'");
    SummaryRow row;
    row.variable = name;
    row.numeric = field->numeric();
    if (field->numeric()) {
      std::vector<double> g1, g2;
      for (std::size_t i = 0; i < cohort.size(); ++i) {
        const auto& v = cohort.records[i].numeric[field->index];
        if (!v) continue;
        (cohort.labels[i] ? g1 : g2).push_back(*v);
      }
      if (g1.size() < 2 || g2.size() < 2)
        throw DataError(name, "each outcome group needs at least two stated values");
      const auto m1 = moments(g1);
      const auto m2 = moments(g2);
      row.group1_stat = fmt::format("{:.2f} ({:.2f})", m1.mean, m1.sd);
      row.group2_stat = fmt::format("{:.2f} ({:.2f})", m2.mean, m2.sd);
      row.p_value = mann_whitney_u(g1, g2).p_value;
      row.effect_size = std::abs(cohens_d(m1, m2).d);
    } else {
      std::map<std::string, std::array<double, 2>> counts;
      for (std::size_t i = 0; i < cohort.size(); ++i) {
        const auto& v = cohort.records[i].categorical[field->index];
        if (!v) continue;
        counts[*v][cohort.labels[i] ? 0 : 1] += 1;
      }
      std::array<double, 2> totals{0, 0};
      for (const auto& [level, c] : counts) {
        totals[0] += c[0];
        totals[1] += c[1];
      }
      auto describe = [&](int g) {
        std::string out;
        for (const auto& [level, c] : counts) {
          if (!out.empty()) out += "; ";
          out += fmt::format("{}: {:.0f} ({:.1f}%)", level, c[g],
                             totals[g] > 0 ? 100.0 * c[g] / totals[g] : 0.0);
        }
        return out;
      };
      row.group1_stat = describe(0);
      row.group2_stat = describe(1);
      row.effect_size = std::numeric_limits<double>::quiet_NaN();
      if (counts.size() < 2) {
        row.p_value = 1.0;
      } else {
        std::vector<std::vector<double>> contingency(2);
        for (const auto& [level, c] : counts) {
          contingency[0].push_back(c[0]);
          contingency[1].push_back(c[1]);
        }
        row.p_value = chi_squared(contingency).p_value;
      }
    }
    table.rows.push_back(std::move(row));
  }
  return table;
}

std::string SummaryTable::to_text() const {
  std::size_t w0 = std::string_view("Variable").size();
  std::size_t w1 = 0, w2 = 0;
  const auto h1 = fmt::format("VBAC (n = {})", n1);
  const auto h2 = fmt::format("rCS (n = {})", n2);
  w1 = h1.size();
  w2 = h2.size();
  for (const auto& r : rows) {
    w0 = std::max(w0, r.variable.size());
    w1 = std::max(w1, r.group1_stat.size());
    w2 = std::max(w2, r.group2_stat.size());
  }
  std::string out = fmt::format("{:<{}}  {:<{}}  {:<{}}  {:>8}  {:>11}\n", "Variable", w0, h1, w1, h2,
                                w2, "p-value", "Effect Size");
  for (const auto& r : rows) {
    const std::string effect = r.numeric ? fmt::format("{:.2f}", r.effect_size) : "";
    out += fmt::format("{:<{}}  {:<{}}  {:<{}}  {:>8}  {:>11}\n", r.variable, w0, r.group1_stat, w1,
                       r.group2_stat, w2, format_p_value(r.p_value), effect);
  }
  return out;
}

std::string SummaryTable::to_csv() const {
  std::string out = "variable,group1_stat,group2_stat,p,effect_size\n";
  for (const auto& r : rows) {
    out += csv_escape(r.variable) + "," + csv_escape(r.group1_stat) + "," +
           csv_escape(r.group2_stat) + "," + format_double(r.p_value) + "," +
           (r.numeric ? format_double(r.effect_size) : std::string()) + "\n";
  }
  return out;
}

}  // namespace vbac
