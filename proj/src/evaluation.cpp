// SPDX-License-Identifier: Apache-2.0
#include "robustseq/evaluation.hpp"

#include "robustseq/errors.hpp"

#include <atomic>
#include <cstdio>
#include <cstdlib>
#include <exception>
#include <mutex>
#include <sstream>
#include <thread>

namespace robustseq {

ScoredCohort score_cohort(const ModelState& state, std::span<const VisitSeries> cohort) {
  std::vector<Mat> per_series(cohort.size());
  parallel_for(cohort.size(), [&](std::size_t i) {
    validate_series(cohort[i]);
    per_series[i] = predict_sequence(state, cohort[i]);
  });
  Index rows = 0;
  for (const auto& s : cohort) rows += std::max<Index>(0, s.length() - 1);
  const Index C = state.config.num_codes;
  ScoredCohort out{Mat(rows, C), Mat(rows, C)};
  Index at = 0;
  for (std::size_t i = 0; i < cohort.size(); ++i) {
    const Index n = cohort[i].length() - 1;
    if (n <= 0) continue;
    if (cohort[i].num_codes() != C)
      throw ValidationError("series '" + cohort[i].patient_id + "' has a different code count");
    out.scores.middleRows(at, n) = per_series[i].topRows(n);
    out.labels.middleRows(at, n) = cohort[i].labels.bottomRows(n);
    at += n;
  }
  return out;
}

EvalReport evaluate(const ModelState& state, std::span<const VisitSeries> cohort,
                    std::span<const int> ks, TiePolicy ties) {
  const ScoredCohort scored = score_cohort(state, cohort);
  return make_report(scored.scores, scored.labels, ks, ties);
}

unsigned thread_cap() {
  if (const char* env = std::getenv("ROBUSTSEQ_THREADS")) {
    char* end = nullptr;
    const long v = std::strtol(env, &end, 10);
    if (end != env && *end == '\0' && v > 0) return static_cast<unsigned>(v);
  }
  return std::max(1u, std::thread::hardware_concurrency());
}

namespace {
// Nested parallel_for calls run inline on the calling worker.
thread_local bool t_in_worker = false;
}  // namespace

void parallel_for(std::size_t n, const std::function<void(std::size_t)>& fn) {
  const std::size_t workers = t_in_worker ? 1 : std::min<std::size_t>(thread_cap(), n);
  if (workers <= 1) {
    for (std::size_t i = 0; i < n; ++i) fn(i);
    return;
  }
  std::atomic<std::size_t> next{0};
  std::exception_ptr error;
  std::mutex error_mutex;
  std::vector<std::thread> pool;
  for (std::size_t w = 0; w < workers; ++w) {
    pool.emplace_back([&] {
      t_in_worker = true;
      for (std::size_t i = next++; i < n; i = next++) {
        try {
          fn(i);
        } catch (...) {
          std::lock_guard lock(error_mutex);
          if (!error) error = std::current_exception();
        }
      }
    });
  }
  for (auto& t : pool) t.join();
  if (error) std::rethrow_exception(error);
}

std::vector<VisitSeries> select(std::span<const VisitSeries> cohort,
                                std::span<const std::size_t> ids) {
  std::vector<VisitSeries> out;
  out.reserve(ids.size());
  for (auto id : ids) out.push_back(cohort[id]);
  return out;
}

std::vector<NoiseSetting> default_noise_settings() {
  return {{NoiseKind::gaussian, 0.53},         {NoiseKind::gaussian, 0.92},
          {NoiseKind::gaussian, 1.10},         {NoiseKind::gaussian, 1.50},
          {NoiseKind::scaled_bernoulli, 0.33}, {NoiseKind::scaled_bernoulli, 0.41},
          {NoiseKind::scaled_bernoulli, 0.50}, {NoiseKind::scaled_bernoulli, 0.80}};
}

std::vector<SweepRow> noise_sweep(std::span<const VisitSeries> cohort, const ModelConfig& base,
                                  const TrainConfig& train_config,
                                  std::span<const NoiseSetting> settings) {
  std::vector<SweepRow> rows(settings.size());
  parallel_for(settings.size(), [&](std::size_t i) {
    ModelConfig cfg = base;
    cfg.noise.kind = settings[i].kind;
    if (settings[i].kind == NoiseKind::gaussian)
      cfg.noise.sigma = settings[i].spread;
    else
      cfg.noise.drop_prob = settings[i].spread;
    TrainResult tr = train(cohort, cfg, train_config);
    const auto test = select(cohort, tr.test_ids);
    rows[i].setting = settings[i];
    rows[i].heldout = evaluate(tr.state, test);
    rows[i].final_train_loss = tr.loss_history.back();
  });
  return rows;
}

std::string format_sweep_table(std::span<const SweepRow> rows) {
  std::ostringstream os;
  os << "distribution\tspread\tmicro_auc";
  if (!rows.empty())
    for (const auto& [k, v] : rows.front().heldout.recalls) os << "\trecall@" << k;
  os << "\tfinal_train_loss\n";
  char buf[64];
  for (const auto& row : rows) {
    std::snprintf(buf, sizeof buf, "%.2f", row.setting.spread);
    os << to_string(row.setting.kind) << '\t' << buf;
    std::snprintf(buf, sizeof buf, "\t%.6f", row.heldout.micro_auc);
    os << buf;
    for (const auto& [k, v] : row.heldout.recalls) {
      std::snprintf(buf, sizeof buf, "\t%.6f", v);
      os << buf;
    }
    std::snprintf(buf, sizeof buf, "\t%.6f\n", row.final_train_loss);
    os << buf;
  }
  return os.str();
}

ModelConfig ablated_config(ModelConfig config) {
  config.imputation = ImputationKind::mean;
  config.noise.kind = NoiseKind::scaled_bernoulli;
  config.noise.drop_prob = 0.0;
  config.noise.sigma = 0.0;
  return config;
}

AblationResult run_ablation(std::span<const VisitSeries> cohort, const ModelConfig& robust,
                            TrainConfig train_config) {
  const ModelConfig configs[2] = {robust, ablated_config(robust)};
  double auc[2] = {0.0, 0.0};
  parallel_for(2, [&](std::size_t i) {
    TrainResult tr = train(cohort, configs[i], train_config);
    auc[i] = evaluate(tr.state, select(cohort, tr.test_ids)).micro_auc;
  });
  return {train_config.seed, auc[0], auc[1]};
}

}  // namespace robustseq
