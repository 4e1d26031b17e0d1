// SPDX-License-Identifier: Apache-2.0
#include "robustseq/metrics.hpp"

#include "robustseq/errors.hpp"

#include <algorithm>
#include <cstdio>
#include <numeric>
#include <sstream>
#include <vector>

namespace robustseq {

namespace {

void check_shapes(const Mat& scores, const Mat& labels) {
  if (scores.rows() != labels.rows() || scores.cols() != labels.cols())
    throw ValidationError("scores and labels differ in shape");
  if (!scores.allFinite()) throw ValidationError("scores contain non-finite values");
}

std::string format_double(double v) {
  char buf[32];
  std::snprintf(buf, sizeof buf, "%.6f", v);
  return buf;
}

}  // namespace

double micro_auc(const Mat& scores, const Mat& labels, TiePolicy ties) {
  check_shapes(scores, labels);
  struct Cell {
    double score;
    bool positive;
  };
  std::vector<Cell> cells;
  cells.reserve(static_cast<std::size_t>(scores.size()));
  double n_pos = 0, n_neg = 0;
  for (Index j = 0; j < scores.cols(); ++j)
    for (Index i = 0; i < scores.rows(); ++i) {
      const bool pos = labels(i, j) == 1.0;
      cells.push_back({scores(i, j), pos});
      (pos ? n_pos : n_neg) += 1;
    }
  if (n_pos == 0 || n_neg == 0)
    throw UndefinedMetricError("micro AUC needs at least one positive and one negative cell");

  std::sort(cells.begin(), cells.end(),
            [](const Cell& a, const Cell& b) { return a.score < b.score; });
  // Walk groups of equal score in ascending order; every positive beats all
  // negatives seen in earlier groups and ties with those in its own group.
  double correct = 0.0;
  double neg_below = 0.0;
  for (std::size_t i = 0; i < cells.size();) {
    std::size_t j = i;
    double pos_here = 0, neg_here = 0;
    while (j < cells.size() && cells[j].score == cells[i].score) {
      (cells[j].positive ? pos_here : neg_here) += 1;
      ++j;
    }
    const double tie_weight = ties == TiePolicy::positive_wins ? 1.0 : 0.5;
    correct += pos_here * (neg_below + tie_weight * neg_here);
    neg_below += neg_here;
    i = j;
  }
  return correct / (n_pos * n_neg);
}

double top_k_recall(const Mat& scores, const Mat& labels, int k) {
  check_shapes(scores, labels);
  if (k < 1) throw ValidationError("top-k recall needs k >= 1");
  const Index C = scores.cols();
  const Index kk = std::min<Index>(k, C);
  double hits = 0, positives = 0;
  std::vector<Index> order(static_cast<std::size_t>(C));
  for (Index i = 0; i < scores.rows(); ++i) {
    std::iota(order.begin(), order.end(), Index{0});
    std::partial_sort(order.begin(), order.begin() + kk, order.end(), [&](Index a, Index b) {
      if (scores(i, a) != scores(i, b)) return scores(i, a) > scores(i, b);
      return a < b;
    });
    for (Index c = 0; c < C; ++c) positives += labels(i, c) == 1.0;
    for (Index r = 0; r < kk; ++r) hits += labels(i, order[r]) == 1.0;
  }
  if (positives == 0) throw UndefinedMetricError("top-k recall needs at least one positive label");
  return hits / positives;
}

EvalReport make_report(const Mat& scores, const Mat& labels, std::span<const int> ks,
                       TiePolicy ties) {
  EvalReport r;
  r.micro_auc = micro_auc(scores, labels, ties);
  for (int k : ks) r.recalls[k] = top_k_recall(scores, labels, k);
  r.instances = static_cast<std::size_t>(scores.rows());
  for (Index i = 0; i < labels.size(); ++i) (labels.data()[i] == 1.0 ? r.positives : r.negatives)++;
  return r;
}

std::string EvalReport::to_text() const {
  std::ostringstream os;
  os << "micro_auc " << format_double(micro_auc) << '\n';
  for (const auto& [k, v] : recalls) os << "recall@" << k << ' ' << format_double(v) << '\n';
  os << "positives " << positives << '\n';
  os << "negatives " << negatives << '\n';
  os << "instances " << instances << '\n';
  return os.str();
}

nlohmann::json EvalReport::to_json() const {
  nlohmann::json rec = nlohmann::json::object();
  for (const auto& [k, v] : recalls) rec[std::to_string(k)] = v;
  return {{"micro_auc", micro_auc},
          {"recalls", rec},
          {"counts", {{"positives", positives}, {"negatives", negatives}, {"instances", instances}}}};
}

}  // namespace robustseq
