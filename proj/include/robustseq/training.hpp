// SPDX-License-Identifier: Apache-2.0
#pragma once

#include "robustseq/model.hpp"

#include <cstdint>
#include <span>
#include <string>
#include <vector>

namespace robustseq {

struct TrainConfig {
  int epochs = 50;
  double learning_rate = 0.05;
  double clip_norm = 0.25;
  double l2_lambda = 1e-5;
  // First epoch (0-based) whose iterates enter the parameter average; a
  // negative value selects the final quarter of the budget.
  int averaging_start_epoch = -1;
  double split_fraction = 0.85;
  std::uint64_t seed = 0;
  // Truncated BPTT window in steps; 0 backpropagates through the whole sequence.
  int bptt_window = 0;

  void validate() const;
  int averaging_start() const;
};

/// rows x cols matrix with orthonormal columns (rows >= cols) or rows
/// (rows < cols): the orthogonal factor U V^T of the SVD of a standard
/// normal draw.
Mat orthogonal_init(Index rows, Index cols, Rng& rng);

/// Orthogonal W/U matrices, identity decay diagonal, zero biases.
ModelState init_model(const ModelConfig& config, EmpiricalMeans means, std::uint64_t seed);

struct GradientResult {
  Parameters grads;
  double loss = 0.0;
};

/// Loss of one series and its exact gradient with respect to every
/// parameter, for the noise realisation drawn from `rng`.
///
/// `bptt_window` > 0 cuts the recurrent gradient every that many steps.
/// Throws NumericalError if the loss is not finite.
GradientResult bptt_gradients(const ModelState& state, const VisitSeries& series, Rng& rng,
                              double l2_lambda, int bptt_window = 0);

/// The same loss without gradients; replaying the same rng reproduces the
/// noise used by bptt_gradients.
double series_loss(const ModelState& state, const VisitSeries& series, Rng& rng, double l2_lambda);

double global_norm(Parameters& grads);

/// Rescales `grads` so their global L2 norm is at most clip_norm. Returns the
/// norm before clipping.
double clip_gradients(Parameters& grads, double clip_norm);

/// params -= lr * grads, then folds the iterate into the running average once
/// state.epoch has reached the averaging start.
void asgd_step(ModelState& state, Parameters& grads, const TrainConfig& config);

/// Replaces the live parameters by their tail average, if one was collected.
void export_average(ModelState& state);

struct TrainResult {
  ModelState state;
  std::vector<double> loss_history;  // mean training loss per epoch
  std::vector<std::size_t> train_ids;
  std::vector<std::size_t> test_ids;
};

TrainResult train(std::span<const VisitSeries> cohort, ModelConfig model_config,
                  const TrainConfig& train_config);

inline constexpr double kGradCheckFloor = 1e-5;

struct GradCheckReport {
  double max_relative_error = 0.0;
  std::string worst_tensor;
  std::size_t entries_checked = 0;
};

/// Central finite differences over every parameter entry of `state` with the
/// noise realisation fixed by `noise_seed`.
///
/// Relative error is |analytic - numeric| / max(|analytic|, |numeric|, 1e-5);
/// the floor stops entries whose gradient sits near the difference quotient's
/// roundoff level from dominating the maximum.
GradCheckReport gradient_check(const ModelState& state, const VisitSeries& series,
                               std::uint64_t noise_seed, double l2_lambda, double step = 1e-5);

/// The small random problem the CLI and the acceptance suite check: a
/// 2-layer model with D=5, H=7, C=4 and one T=6 series with gaps in its
/// observations.
struct GradCheckProblem {
  ModelState state;
  VisitSeries series;
};
GradCheckProblem make_gradcheck_problem(std::uint64_t seed, NoiseSpec noise = {},
                                        double interlayer_dropout = 0.3);

}  // namespace robustseq
