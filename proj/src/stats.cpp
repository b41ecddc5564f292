#include "sdd/stats.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>
#include <stdexcept>

#include "sdd/common.hpp"

namespace sdd::stats {

namespace {

// Midranks (1-based, ties averaged) of v.
std::vector<double> midranks(const std::vector<double>& v) {
  const size_t n = v.size();
  std::vector<size_t> order(n);
  std::iota(order.begin(), order.end(), 0);
  std::sort(order.begin(), order.end(), [&](size_t a, size_t b) { return v[a] < v[b]; });
  std::vector<double> rank(n);
  size_t i = 0;
  while (i < n) {
    size_t j = i;
    while (j + 1 < n && v[order[j + 1]] == v[order[i]]) ++j;
    const double r = 0.5 * (static_cast<double>(i + 1) + static_cast<double>(j + 1));
    for (size_t k = i; k <= j; ++k) rank[order[k]] = r;
    i = j + 1;
  }
  return rank;
}

void check_cohort(const ScoredCohort& c) {
  if (c.scores.size() != c.labels.size())
    throw std::invalid_argument("cohort: scores/labels size mismatch");
  int pos = 0, neg = 0;
  for (size_t i = 0; i < c.labels.size(); ++i) {
    if (!std::isfinite(c.scores[i])) throw std::invalid_argument("cohort: non-finite score");
    (c.labels[i] ? pos : neg)++;
  }
  if (pos == 0 || neg == 0)
    throw std::invalid_argument("cohort: both classes required for AUC");
}

}  // namespace

double normal_cdf(double z) { return 0.5 * std::erfc(-z / std::sqrt(2.0)); }

double auc(const ScoredCohort& c) {
  check_cohort(c);
  const auto rank = midranks(c.scores);
  double rank_sum_pos = 0.0;
  int n_pos = 0, n_neg = 0;
  for (size_t i = 0; i < c.labels.size(); ++i) {
    if (c.labels[i]) {
      rank_sum_pos += rank[i];
      ++n_pos;
    } else {
      ++n_neg;
    }
  }
  const double u = rank_sum_pos - 0.5 * n_pos * (n_pos + 1.0);
  return u / (static_cast<double>(n_pos) * n_neg);
}

DelongResult delong_test(const std::vector<double>& scores_a, const std::vector<double>& scores_b,
                         const std::vector<int>& labels) {
  if (scores_a.size() != labels.size() || scores_b.size() != labels.size())
    throw std::invalid_argument("delong: paired scores must cover identical subjects");
  std::vector<double> xa, xb, ya, yb;  // positives / negatives per model
  for (size_t i = 0; i < labels.size(); ++i) {
    if (labels[i]) {
      xa.push_back(scores_a[i]);
      xb.push_back(scores_b[i]);
    } else {
      ya.push_back(scores_a[i]);
      yb.push_back(scores_b[i]);
    }
  }
  const size_t m = xa.size(), n = ya.size();
  if (m == 0 || n == 0) throw std::invalid_argument("delong: both classes required");

  auto placements = [](const std::vector<double>& x, const std::vector<double>& y,
                       std::vector<double>& v10, std::vector<double>& v01) {
    const size_t m = x.size(), n = y.size();
    v10.assign(m, 0.0);
    v01.assign(n, 0.0);
    for (size_t i = 0; i < m; ++i) {
      for (size_t j = 0; j < n; ++j) {
        const double psi = x[i] > y[j] ? 1.0 : (x[i] == y[j] ? 0.5 : 0.0);
        v10[i] += psi;
        v01[j] += psi;
      }
    }
    for (auto& v : v10) v /= static_cast<double>(n);
    for (auto& v : v01) v /= static_cast<double>(m);
  };

  std::vector<double> v10a, v01a, v10b, v01b;
  placements(xa, ya, v10a, v01a);
  placements(xb, yb, v10b, v01b);

  DelongResult r;
  r.auc_a = std::accumulate(v10a.begin(), v10a.end(), 0.0) / static_cast<double>(m);
  r.auc_b = std::accumulate(v10b.begin(), v10b.end(), 0.0) / static_cast<double>(m);

  auto cov = [](const std::vector<double>& u, const std::vector<double>& v) {
    const size_t n = u.size();
    if (n < 2) return 0.0;
    const double mu = std::accumulate(u.begin(), u.end(), 0.0) / n;
    const double mv = std::accumulate(v.begin(), v.end(), 0.0) / n;
    double s = 0.0;
    for (size_t i = 0; i < n; ++i) s += (u[i] - mu) * (v[i] - mv);
    return s / static_cast<double>(n - 1);
  };

  const double var = (cov(v10a, v10a) + cov(v10b, v10b) - 2.0 * cov(v10a, v10b)) / m +
                     (cov(v01a, v01a) + cov(v01b, v01b) - 2.0 * cov(v01a, v01b)) / n;
  const double delta = r.auc_a - r.auc_b;
  if (var < 1e-14) {
    if (std::abs(delta) < 1e-12) {
      r.z = 0.0;
      r.p = 1.0;
    } else {
      r.degenerate = true;
      r.z = delta > 0 ? INFINITY : -INFINITY;
      r.p = 0.0;
    }
    return r;
  }
  r.z = delta / std::sqrt(var);
  r.p = 2.0 * (1.0 - normal_cdf(std::abs(r.z)));
  return r;
}

BootstrapCi bootstrap_auc_ci(const ScoredCohort& c, int n_boot, double alpha, uint64_t seed) {
  check_cohort(c);
  const size_t n = c.scores.size();
  std::vector<double> aucs;
  aucs.reserve(n_boot);
  for (int b = 0; b < n_boot; ++b) {
    auto rng = stream_rng(seed, static_cast<uint64_t>(b));
    std::uniform_int_distribution<size_t> pick(0, n - 1);
    ScoredCohort s;
    s.scores.resize(n);
    s.labels.resize(n);
    for (;;) {
      int pos = 0;
      for (size_t i = 0; i < n; ++i) {
        const size_t j = pick(rng);
        s.scores[i] = c.scores[j];
        s.labels[i] = c.labels[j];
        pos += s.labels[i];
      }
      if (pos > 0 && pos < static_cast<int>(n)) break;  // redraw single-class resamples
    }
    aucs.push_back(auc(s));
  }
  std::sort(aucs.begin(), aucs.end());
  auto quantile = [&](double q) {
    const double idx = q * (aucs.size() - 1);
    const size_t lo = static_cast<size_t>(idx);
    const size_t hi = std::min(lo + 1, aucs.size() - 1);
    const double frac = idx - static_cast<double>(lo);
    return aucs[lo] + frac * (aucs[hi] - aucs[lo]);
  };
  return {quantile(alpha / 2.0), quantile(1.0 - alpha / 2.0)};
}

namespace {

double u_statistic(const std::vector<double>& x, const std::vector<double>& y) {
  double u = 0.0;
  for (double xi : x) {
    for (double yj : y) {
      if (xi > yj)
        u += 1.0;
      else if (xi == yj)
        u += 0.5;
    }
  }
  return u;
}

// Exact two-sided p by enumerating all assignments of the pooled values to
// the first sample.
double exact_two_sided_p(const std::vector<double>& x, const std::vector<double>& y,
                         double u_obs) {
  std::vector<double> pooled(x);
  pooled.insert(pooled.end(), y.begin(), y.end());
  const int n = static_cast<int>(pooled.size());
  const int k = static_cast<int>(x.size());
  std::vector<int> comb(k);
  std::iota(comb.begin(), comb.end(), 0);
  long total = 0, count_le = 0, count_ge = 0;
  const double eps = 1e-9;
  for (;;) {
    std::vector<double> sx, sy;
    sx.reserve(k);
    sy.reserve(n - k);
    std::vector<char> in_x(n, 0);
    for (int idx : comb) in_x[idx] = 1;
    for (int i = 0; i < n; ++i) (in_x[i] ? sx : sy).push_back(pooled[i]);
    const double u = u_statistic(sx, sy);
    ++total;
    if (u <= u_obs + eps) ++count_le;
    if (u >= u_obs - eps) ++count_ge;
    // next combination
    int i = k - 1;
    while (i >= 0 && comb[i] == n - k + i) --i;
    if (i < 0) break;
    ++comb[i];
    for (int j = i + 1; j < k; ++j) comb[j] = comb[j - 1] + 1;
  }
  const double p = 2.0 * std::min(count_le, count_ge) / static_cast<double>(total);
  return std::min(1.0, p);
}

}  // namespace

MannWhitneyResult mann_whitney_u(const std::vector<double>& x, const std::vector<double>& y) {
  if (x.size() < 3 || y.size() < 3)
    throw std::invalid_argument("mann_whitney_u: need at least 3 values per sample");
  const double nx = static_cast<double>(x.size());
  const double ny = static_cast<double>(y.size());

  MannWhitneyResult r;
  r.u = u_statistic(x, y);

  if (x.size() + y.size() <= 12) {
    r.exact = true;
    r.p = exact_two_sided_p(x, y, r.u);
    return r;
  }

  // Normal approximation with tie-corrected variance and continuity correction.
  std::vector<double> pooled(x);
  pooled.insert(pooled.end(), y.begin(), y.end());
  std::sort(pooled.begin(), pooled.end());
  const double nn = nx + ny;
  double tie_term = 0.0;
  size_t i = 0;
  while (i < pooled.size()) {
    size_t j = i;
    while (j + 1 < pooled.size() && pooled[j + 1] == pooled[i]) ++j;
    const double t = static_cast<double>(j - i + 1);
    tie_term += t * t * t - t;
    i = j + 1;
  }
  const double var = nx * ny / 12.0 * ((nn + 1.0) - tie_term / (nn * (nn - 1.0)));
  if (var < 1e-12) {
    r.p = 1.0;  // all values identical
    return r;
  }
  const double mu = nx * ny / 2.0;
  const double d = std::max(0.0, std::abs(r.u - mu) - 0.5);
  const double z = d / std::sqrt(var);
  r.p = std::min(1.0, 2.0 * (1.0 - normal_cdf(z)));
  return r;
}

BonferroniResult bonferroni(const std::vector<double>& p_values, double alpha) {
  if (p_values.empty()) throw std::invalid_argument("bonferroni: need at least one test");
  BonferroniResult r;
  r.m = static_cast<int>(p_values.size());
  r.t1 = alpha / r.m;
  r.t2 = (alpha / 5.0) / r.m;
  r.t3 = (alpha / 50.0) / r.m;
  r.tiers.reserve(p_values.size());
  for (double p : p_values) {
    if (p <= r.t3)
      r.tiers.push_back(SigTier::three);
    else if (p <= r.t2)
      r.tiers.push_back(SigTier::two);
    else if (p <= r.t1)
      r.tiers.push_back(SigTier::one);
    else
      r.tiers.push_back(SigTier::ns);
  }
  return r;
}

Residualized residualize_standardize(const std::vector<double>& values,
                                     const std::vector<int>& covariate) {
  if (values.size() != covariate.size())
    throw std::invalid_argument("residualize: size mismatch");
  double sum[2] = {0.0, 0.0};
  int cnt[2] = {0, 0};
  for (size_t i = 0; i < values.size(); ++i) {
    const int g = covariate[i] ? 1 : 0;
    sum[g] += values[i];
    cnt[g]++;
  }
  if (cnt[0] == 0 || cnt[1] == 0)
    throw std::invalid_argument("residualize: both covariate groups must be non-empty");
  const double mean0 = sum[0] / cnt[0];
  const double mean1 = sum[1] / cnt[1];

  Residualized r;
  r.values.resize(values.size());
  double ss = 0.0;
  for (size_t i = 0; i < values.size(); ++i) {
    r.values[i] = values[i] - (covariate[i] ? mean1 : mean0);
    ss += r.values[i] * r.values[i];
  }
  const double sd = std::sqrt(ss / static_cast<double>(values.size()));
  if (sd < 1e-12) {
    std::fill(r.values.begin(), r.values.end(), 0.0);
    r.degenerate = true;
    return r;
  }
  for (auto& v : r.values) v /= sd;
  return r;
}

std::vector<std::pair<double, double>> roc_points(const ScoredCohort& c) {
  check_cohort(c);
  std::vector<size_t> order(c.scores.size());
  std::iota(order.begin(), order.end(), 0);
  std::sort(order.begin(), order.end(),
            [&](size_t a, size_t b) { return c.scores[a] > c.scores[b]; });
  double n_pos = 0, n_neg = 0;
  for (int l : c.labels) (l ? n_pos : n_neg) += 1.0;
  std::vector<std::pair<double, double>> pts;
  pts.emplace_back(0.0, 0.0);
  double tp = 0, fp = 0;
  size_t i = 0;
  while (i < order.size()) {
    size_t j = i;
    while (j + 1 < order.size() && c.scores[order[j + 1]] == c.scores[order[i]]) ++j;
    for (size_t k = i; k <= j; ++k) (c.labels[order[k]] ? tp : fp) += 1.0;
    pts.emplace_back(fp / n_neg, tp / n_pos);
    i = j + 1;
  }
  return pts;
}

}  // namespace sdd::stats
