// SPDX-License-Identifier: Apache-2.0
#pragma once

#include "robustseq/types.hpp"

#include <span>

namespace robustseq {

/// Per-variable decay parameters. The input-to-decay map is diagonal, so it
/// is stored as its diagonal only.
struct DecayParams {
  Vec w_gamma;
  Vec b_gamma;

  static DecayParams zeros(Index num_vars);
  Index size() const { return w_gamma.size(); }
};

struct EmpiricalMeans {
  Vec means;
};

/// Hours since the last observation of each variable, T x D.
///
/// Row 0 is zero. For t > 0 the gap s_t - s_{t-1} is added to the previous
/// interval only if the variable was missing at t - 1; an observation at t - 1
/// resets the interval to the single gap.
Mat compute_intervals(const VisitSeries& series);

/// Pooled mean of every observed cell per variable. Variables never observed
/// get 0.
EmpiricalMeans empirical_means(std::span<const VisitSeries> cohort);

/// gamma_d = exp(-max(0, w_d * delta_d + b_d)); always in (0, 1].
Vec decay_rates(const Vec& deltas, const DecayParams& params);

/// Everything the backward pass needs from the imputation step.
struct ImputationTrace {
  Mat inputs;     // T x D, imputed values fed to the first GRU layer
  Mat intervals;  // T x D
  Mat last_seen;  // T x D, the last-observation register read at missing cells
  Mat gammas;     // T x D, decay rate used at missing cells (1 where observed)
  Mat preact;     // T x D, w * delta + b
};

/// Observed cells pass through; a missing cell becomes
/// gamma * last_observation + (1 - gamma) * mean, where the last observation
/// falls back to the mean when the variable has not been seen yet.
ImputationTrace impute_with_trace(const VisitSeries& series, const DecayParams& params,
                                  const EmpiricalMeans& means);

Mat impute_inputs(const VisitSeries& series, const DecayParams& params,
                  const EmpiricalMeans& means);

/// Baseline imputation: every missing cell becomes the empirical mean.
Mat impute_with_means(const VisitSeries& series, const EmpiricalMeans& means);

}  // namespace robustseq
