// SPDX-License-Identifier: Apache-2.0
#pragma once

#include "robustseq/types.hpp"

#include <json.hpp>

#include <cstddef>
#include <map>
#include <span>
#include <string>

namespace robustseq {

/// How a positive and a negative cell with equal scores are counted.
enum class TiePolicy {
  positive_wins,  // score(p) >= score(n) counts as a correctly ordered pair
  half,           // ties count 0.5, the usual ROC-AUC convention
};

/// AUC over the pooled (instance, label) cells of a multi-label problem:
/// the fraction of (positive, negative) cell pairs ordered correctly.
/// Throws UndefinedMetricError if either pool is empty.
double micro_auc(const Mat& scores, const Mat& labels, TiePolicy ties = TiePolicy::positive_wins);

/// Micro-pooled recall of the k highest-scored labels per instance (ties
/// broken toward the lower label index). k larger than the number of labels
/// is treated as "all labels". Throws UndefinedMetricError if there are no
/// positives and ValidationError if k < 1.
double top_k_recall(const Mat& scores, const Mat& labels, int k);

struct EvalReport {
  double micro_auc = 0.0;
  std::map<int, double> recalls;
  std::size_t positives = 0;
  std::size_t negatives = 0;
  std::size_t instances = 0;

  std::string to_text() const;
  nlohmann::json to_json() const;
};

EvalReport make_report(const Mat& scores, const Mat& labels, std::span<const int> ks,
                       TiePolicy ties = TiePolicy::positive_wins);

}  // namespace robustseq
