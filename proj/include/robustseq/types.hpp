// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <Eigen/Dense>

#include <limits>
#include <string>
#include <vector>

namespace robustseq {

using Mat = Eigen::MatrixXd;
using Vec = Eigen::VectorXd;
using Index = Eigen::Index;

/// Marker stored in VisitSeries::values for unobserved cells.
inline constexpr double kMissing = std::numeric_limits<double>::quiet_NaN();

/// One patient's multivariate visit sequence.
///
/// Rows are visits in time order. `values(t, d)` is meaningful only where
/// `mask(t, d) == 1`; every other cell holds kMissing. `labels(t, c)` is the
/// indicator of code c at visit t; the model at visit t is scored against
/// the labels of visit t + 1.
struct VisitSeries {
  std::string patient_id;
  std::vector<double> timestamps;  // hours, non-decreasing
  Mat values;                      // T x D
  Mat mask;                        // T x D, entries 0/1
  Mat labels;                      // T x C, entries 0/1
  std::vector<int> latent_states;  // generator ground truth, empty otherwise

  Index length() const { return static_cast<Index>(timestamps.size()); }
  Index num_vars() const { return values.cols(); }
  Index num_codes() const { return labels.cols(); }
};

/// Throws ValidationError when shapes, ordering, mask/label domains or the
/// missing-value sentinel convention are violated.
void validate_series(const VisitSeries& series);

}  // namespace robustseq
