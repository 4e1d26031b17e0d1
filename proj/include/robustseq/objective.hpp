// SPDX-License-Identifier: Apache-2.0
#pragma once

#include "robustseq/types.hpp"

namespace robustseq {

/// Output layer mapping the top hidden state to independent per-code
/// probabilities.
struct HeadParams {
  Mat w_code;  // C x H
  Vec b_code;  // C

  static HeadParams zeros(Index num_codes, Index hidden_size);
};

inline constexpr double kProbClamp = 1e-12;

/// sigmoid(W_code h + b_code), one independent probability per code.
Vec predict_probs(const HeadParams& head, const Vec& h);

/// Negative Bernoulli log-likelihood summed over steps and codes, plus
/// l2_lambda * ||W_code||_F^2.
///
/// Row t of `preds` is the prediction made at visit t and is compared with
/// row t of `truths`, which the caller fills from visit t + 1. Probabilities
/// are clamped to [1e-12, 1 - 1e-12]. A sequence with no prediction rows
/// contributes nothing, penalty included.
double sequence_loss(const Mat& preds, const Mat& truths, const HeadParams& head,
                     double l2_lambda);

/// d loss / d logit for each cell: y - truth, or 0 where the clamp is active.
Mat loss_logit_gradient(const Mat& preds, const Mat& truths);

}  // namespace robustseq
