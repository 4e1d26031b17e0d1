// SPDX-License-Identifier: Apache-2.0
#pragma once

#include "robustseq/metrics.hpp"
#include "robustseq/training.hpp"

#include <functional>
#include <span>
#include <string>
#include <vector>

namespace robustseq {

inline constexpr int kDefaultRecallKs[] = {10, 20, 30};

/// Next-visit predictions of every series stacked into one instance per
/// (series, visit t < T-1) pair, with the labels of visit t + 1.
struct ScoredCohort {
  Mat scores;
  Mat labels;
};

ScoredCohort score_cohort(const ModelState& state, std::span<const VisitSeries> cohort);

EvalReport evaluate(const ModelState& state, std::span<const VisitSeries> cohort,
                    std::span<const int> ks = kDefaultRecallKs,
                    TiePolicy ties = TiePolicy::positive_wins);

/// Parallelism cap: ROBUSTSEQ_THREADS if set to a positive integer, else the
/// hardware concurrency.
unsigned thread_cap();

/// Runs fn(0..n-1) on at most thread_cap() threads. Results must be written
/// to per-index slots; the call order is unspecified.
void parallel_for(std::size_t n, const std::function<void(std::size_t)>& fn);

std::vector<VisitSeries> select(std::span<const VisitSeries> cohort,
                                std::span<const std::size_t> ids);

struct NoiseSetting {
  NoiseKind kind;
  double spread;  // sigma for gaussian, drop probability for bernoulli
};

/// Gaussian sigma in {0.53, 0.92, 1.10, 1.50} and Bernoulli drop
/// probability in {0.33, 0.41, 0.50, 0.80}.
std::vector<NoiseSetting> default_noise_settings();

struct SweepRow {
  NoiseSetting setting;
  EvalReport heldout;
  double final_train_loss = 0.0;
};

/// Trains one model per noise setting (everything else from the base
/// configs) and scores each on its held-out split.
std::vector<SweepRow> noise_sweep(std::span<const VisitSeries> cohort, const ModelConfig& base,
                                  const TrainConfig& train_config,
                                  std::span<const NoiseSetting> settings);

/// Tab-separated table: distribution, spread, micro_auc, recall@k...,
/// final_train_loss.
std::string format_sweep_table(std::span<const SweepRow> rows);

/// Held-out micro-AUC of the full model against a baseline using mean
/// imputation and no hidden-state noise, both trained with the same seed,
/// split and remaining settings.
struct AblationResult {
  std::uint64_t seed = 0;
  double robust_auc = 0.0;
  double baseline_auc = 0.0;
};

ModelConfig ablated_config(ModelConfig config);

AblationResult run_ablation(std::span<const VisitSeries> cohort, const ModelConfig& robust,
                            TrainConfig train_config);

}  // namespace robustseq
