// SPDX-License-Identifier: Apache-2.0
#pragma once

#include "robustseq/gru.hpp"
#include "robustseq/objective.hpp"
#include "robustseq/temporal.hpp"

#include <cstdint>
#include <string>
#include <vector>

namespace robustseq {

/// Every trainable tensor of the model. Also used as the gradient container.
struct Parameters {
  DecayParams decay;
  std::vector<GruParams> layers;
  HeadParams head;

  static Parameters zeros(const ModelConfig& config);
};

/// Mutable window onto one parameter tensor. `data` follows Eigen's
/// column-major storage; `is_vector` marks 1-D tensors.
struct TensorView {
  std::string name;
  double* data;
  Index rows;
  Index cols;
  bool is_vector;

  Index size() const { return rows * cols; }
};

/// Views in a fixed canonical order: decay, layers bottom-up, head.
std::vector<TensorView> tensor_views(Parameters& params);

struct ModelState {
  ModelConfig config;
  Parameters params;
  EmpiricalMeans means;
  std::uint64_t step_count = 0;
  int epoch = 0;
  // Running tail average of the iterates (averaged SGD).
  Parameters average;
  std::uint64_t average_count = 0;
};

struct ModelForward {
  ImputationTrace imputation;
  SequenceTrace trace;
  Mat probs;  // T x C, row t predicts visit t + 1
};

/// Imputation, stacked GRU and head for one series.
ModelForward model_forward(const ModelState& state, const VisitSeries& series, Rng& rng,
                           Mode mode);

/// Eval-mode probabilities for every visit, T x C.
Mat predict_sequence(const ModelState& state, const VisitSeries& series);

/// Eval-mode probabilities for the visit after the last one in `series`.
Vec predict_next(const ModelState& state, const VisitSeries& series);

}  // namespace robustseq
