// SPDX-License-Identifier: Apache-2.0
#include "robustseq/temporal.hpp"

#include "robustseq/errors.hpp"

#include <cmath>
#include <sstream>

namespace robustseq {

void validate_series(const VisitSeries& series) {
  const Index T = series.length();
  auto fail = [&](const std::string& what) {
    throw ValidationError("series '" + series.patient_id + "': " + what);
  };
  if (T < 1) fail("empty series");
  if (series.values.rows() != T || series.mask.rows() != T || series.labels.rows() != T)
    fail("row count differs from number of timestamps");
  if (series.mask.cols() != series.values.cols()) fail("mask and values differ in width");
  if (!series.latent_states.empty() && static_cast<Index>(series.latent_states.size()) != T)
    fail("latent state count differs from number of timestamps");
  for (Index t = 0; t < T; ++t) {
    if (!std::isfinite(series.timestamps[t])) fail("non-finite timestamp");
    if (t > 0 && series.timestamps[t] < series.timestamps[t - 1]) {
      std::ostringstream os;
      os << "timestamps decrease at visit " << t << " (" << series.timestamps[t - 1] << " -> "
         << series.timestamps[t] << ")";
      fail(os.str());
    }
    for (Index d = 0; d < series.values.cols(); ++d) {
      const double m = series.mask(t, d);
      if (m == 1.0) {
        if (!std::isfinite(series.values(t, d))) fail("observed cell holds a non-finite value");
      } else if (m == 0.0) {
        if (!std::isnan(series.values(t, d))) fail("unobserved cell does not hold the sentinel");
      } else {
        fail("mask entries must be 0 or 1");
      }
    }
    for (Index c = 0; c < series.labels.cols(); ++c) {
      const double y = series.labels(t, c);
      if (y != 0.0 && y != 1.0) fail("label entries must be 0 or 1");
    }
  }
}

DecayParams DecayParams::zeros(Index num_vars) {
  return {Vec::Zero(num_vars), Vec::Zero(num_vars)};
}

Mat compute_intervals(const VisitSeries& series) {
  const Index T = series.length();
  const Index D = series.num_vars();
  for (Index t = 1; t < T; ++t) {
    if (series.timestamps[t] < series.timestamps[t - 1])
      throw ValidationError("series '" + series.patient_id + "': timestamps decrease at visit " +
                            std::to_string(t));
  }
  Mat delta = Mat::Zero(T, D);
  for (Index t = 1; t < T; ++t) {
    const double gap = series.timestamps[t] - series.timestamps[t - 1];
    for (Index d = 0; d < D; ++d) {
      delta(t, d) = series.mask(t - 1, d) == 1.0 ? gap : gap + delta(t - 1, d);
    }
  }
  return delta;
}

EmpiricalMeans empirical_means(std::span<const VisitSeries> cohort) {
  Index D = 0;
  for (const auto& s : cohort) D = std::max(D, s.num_vars());
  Vec sum = Vec::Zero(D);
  Vec count = Vec::Zero(D);
  for (const auto& s : cohort) {
    if (s.num_vars() != D) throw ValidationError("cohort mixes variable counts");
    for (Index t = 0; t < s.length(); ++t)
      for (Index d = 0; d < D; ++d)
        if (s.mask(t, d) == 1.0) {
          sum[d] += s.values(t, d);
          count[d] += 1.0;
        }
  }
  EmpiricalMeans out{Vec::Zero(D)};
  for (Index d = 0; d < D; ++d)
    if (count[d] > 0) out.means[d] = sum[d] / count[d];
  return out;
}

Vec decay_rates(const Vec& deltas, const DecayParams& params) {
  if (deltas.size() != params.size()) throw ValidationError("decay_rates: dimension mismatch");
  Vec gamma(deltas.size());
  for (Index d = 0; d < deltas.size(); ++d) {
    const double a = params.w_gamma[d] * deltas[d] + params.b_gamma[d];
    gamma[d] = std::exp(-std::max(0.0, a));
  }
  return gamma;
}

ImputationTrace impute_with_trace(const VisitSeries& series, const DecayParams& params,
                                  const EmpiricalMeans& means) {
  const Index T = series.length();
  const Index D = series.num_vars();
  if (params.size() != D || means.means.size() != D)
    throw ValidationError("impute_inputs: decay/mean width does not match series");

  ImputationTrace tr;
  tr.intervals = compute_intervals(series);
  tr.inputs.resize(T, D);
  tr.last_seen.resize(T, D);
  tr.gammas = Mat::Ones(T, D);
  tr.preact.resize(T, D);

  Vec last = means.means;
  for (Index t = 0; t < T; ++t) {
    for (Index d = 0; d < D; ++d) {
      const double a = params.w_gamma[d] * tr.intervals(t, d) + params.b_gamma[d];
      tr.preact(t, d) = a;
      tr.last_seen(t, d) = last[d];
      if (series.mask(t, d) == 1.0) {
        tr.inputs(t, d) = series.values(t, d);
        last[d] = series.values(t, d);
      } else {
        const double g = std::exp(-std::max(0.0, a));
        tr.gammas(t, d) = g;
        tr.inputs(t, d) = g * last[d] + (1.0 - g) * means.means[d];
      }
    }
  }
  return tr;
}

Mat impute_inputs(const VisitSeries& series, const DecayParams& params,
                  const EmpiricalMeans& means) {
  return impute_with_trace(series, params, means).inputs;
}

Mat impute_with_means(const VisitSeries& series, const EmpiricalMeans& means) {
  const Index T = series.length();
  const Index D = series.num_vars();
  if (means.means.size() != D) throw ValidationError("impute_with_means: width mismatch");
  Mat out(T, D);
  for (Index t = 0; t < T; ++t)
    for (Index d = 0; d < D; ++d)
      out(t, d) = series.mask(t, d) == 1.0 ? series.values(t, d) : means.means[d];
  return out;
}

}  // namespace robustseq
