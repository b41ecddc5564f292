#pragma once

#include <cstdint>
#include <vector>

namespace sdd::stats {

// Per-subject scores in [0,1] with binary labels (1 = positive class).
struct ScoredCohort {
  std::vector<double> scores;
  std::vector<int> labels;
};

// P(score+ > score-) + 0.5 * P(tie). Requires both classes present.
double auc(const ScoredCohort& c);

struct DelongResult {
  double auc_a = 0.0;
  double auc_b = 0.0;
  double z = 0.0;
  double p = 1.0;
  bool degenerate = false;  // zero-variance difference with unequal AUCs
};

// Paired comparison of two models scored on the same subjects.
DelongResult delong_test(const std::vector<double>& scores_a, const std::vector<double>& scores_b,
                         const std::vector<int>& labels);

struct BootstrapCi {
  double lo = 0.0;
  double hi = 0.0;
};

// Percentile interval over subject-level resamples. Single-class resamples
// are redrawn. Resample b draws from an independent stream keyed by (seed, b).
BootstrapCi bootstrap_auc_ci(const ScoredCohort& c, int n_boot, double alpha, uint64_t seed);

struct MannWhitneyResult {
  double u = 0.0;     // U statistic of the first sample
  double p = 1.0;     // two-sided
  bool exact = false; // exact enumeration used (n + m small)
};

MannWhitneyResult mann_whitney_u(const std::vector<double>& x, const std::vector<double>& y);

enum class SigTier { ns = 0, one = 1, two = 2, three = 3 };

struct BonferroniResult {
  std::vector<SigTier> tiers;
  double t1 = 0.0;  // alpha/m
  double t2 = 0.0;  // (alpha/5)/m
  double t3 = 0.0;  // (alpha/50)/m
  int m = 0;
};

BonferroniResult bonferroni(const std::vector<double>& p_values, double alpha = 0.05);

struct Residualized {
  std::vector<double> values;
  bool degenerate = false;  // zero variance after residualization
};

// Remove binary-covariate group means, then z-score by the residual sd.
Residualized residualize_standardize(const std::vector<double>& values,
                                     const std::vector<int>& covariate);

double normal_cdf(double z);

// (FPR, TPR) points of the ROC curve, sorted by threshold; emitted as data.
std::vector<std::pair<double, double>> roc_points(const ScoredCohort& c);

}  // namespace sdd::stats
