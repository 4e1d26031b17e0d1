// SPDX-License-Identifier: Apache-2.0
#include "robustseq/objective.hpp"

#include "robustseq/errors.hpp"

#include <algorithm>
#include <cmath>

namespace robustseq {

HeadParams HeadParams::zeros(Index num_codes, Index hidden_size) {
  return {Mat::Zero(num_codes, hidden_size), Vec::Zero(num_codes)};
}

Vec predict_probs(const HeadParams& head, const Vec& h) {
  if (head.w_code.cols() != h.size() || head.b_code.size() != head.w_code.rows())
    throw ValidationError("predict_probs: dimension mismatch");
  Vec logits = head.w_code * h + head.b_code;
  return (1.0 + (-logits.array()).exp()).inverse().matrix();
}

double sequence_loss(const Mat& preds, const Mat& truths, const HeadParams& head,
                     double l2_lambda) {
  if (preds.rows() != truths.rows() || preds.cols() != truths.cols())
    throw ValidationError("sequence_loss: predictions and truths differ in shape");
  if (preds.rows() == 0) return 0.0;
  if (preds.cols() != head.w_code.rows())
    throw ValidationError("sequence_loss: label width does not match the head");
  double nll = 0.0;
  for (Index t = 0; t < preds.rows(); ++t) {
    for (Index c = 0; c < preds.cols(); ++c) {
      const double y = std::clamp(preds(t, c), kProbClamp, 1.0 - kProbClamp);
      const double truth = truths(t, c);
      nll -= truth * std::log(y) + (1.0 - truth) * std::log(1.0 - y);
    }
  }
  return nll + l2_lambda * head.w_code.squaredNorm();
}

Mat loss_logit_gradient(const Mat& preds, const Mat& truths) {
  if (preds.rows() != truths.rows() || preds.cols() != truths.cols())
    throw ValidationError("loss_logit_gradient: shape mismatch");
  Mat g(preds.rows(), preds.cols());
  for (Index t = 0; t < preds.rows(); ++t)
    for (Index c = 0; c < preds.cols(); ++c) {
      const double y = preds(t, c);
      g(t, c) = (y < kProbClamp || y > 1.0 - kProbClamp) ? 0.0 : y - truths(t, c);
    }
  return g;
}

}  // namespace robustseq
