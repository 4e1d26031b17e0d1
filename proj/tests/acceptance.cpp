// SPDX-License-Identifier: Apache-2.0
// Acceptance run: one PASS/FAIL line per criterion, nonzero exit on any FAIL.
#include "robustseq/data_io.hpp"
#include "robustseq/errors.hpp"
#include "robustseq/evaluation.hpp"
#include "robustseq/metrics.hpp"
#include "robustseq/training.hpp"
#include "test_helpers.hpp"

#include <algorithm>
#include <chrono>
#include <cmath>
#include <cstdio>
#include <functional>
#include <numeric>
#include <sstream>
#include <string>
#include <vector>

using namespace robustseq;
using robustseq::testing::random_matrix;
using robustseq::testing::random_series;

namespace {

using Clock = std::chrono::steady_clock;

double seconds_since(Clock::time_point start) {
  return std::chrono::duration<double>(Clock::now() - start).count();
}

struct Outcome {
  bool pass;
  std::string detail;
};

int failures = 0;

void report(int id, const char* name, const std::function<Outcome()>& body) {
  Outcome o;
  try {
    o = body();
  } catch (const std::exception& e) {
    o = {false, std::string("exception: ") + e.what()};
  }
  if (!o.pass) ++failures;
  std::printf("[%s] %d %s: %s\n", o.pass ? "PASS" : "FAIL", id, name, o.detail.c_str());
  std::fflush(stdout);
}

std::string fmt(const char* f, double x) {
  char buf[64];
  std::snprintf(buf, sizeof buf, f, x);
  return buf;
}

// Shared cohort for the learning and ablation checks.
GenConfig acceptance_cohort() {
  GenConfig g;
  g.num_patients = 2000;
  g.num_vars = 20;
  g.num_codes = 10;
  g.num_states = 4;
  g.missing_rate = 0.3;
  g.mnar_strength = 0.5;
  g.emission_sd = 1.5;
  g.persistence = 0.97;
  g.label_noise = 0.005;
  g.seed = 11;
  return g;
}

ModelConfig acceptance_model() {
  ModelConfig c;
  c.input_size = 20;
  c.num_codes = 10;
  c.hidden_size = 64;
  c.num_layers = 2;
  return c;
}

Outcome gradient_fidelity() {
  const auto start = Clock::now();
  double worst = 0.0;
  std::string where;
  std::size_t entries = 0;
  const NoiseSpec noises[] = {{NoiseKind::scaled_bernoulli, 0.3, 0.0, Mode::train},
                              {NoiseKind::gaussian, 0.0, 1.1, Mode::train}};
  for (const auto& noise : noises) {
    GradCheckProblem prob = make_gradcheck_problem(1, noise, 0.3);
    const GradCheckReport r = gradient_check(prob.state, prob.series, 1, 1e-3, 1e-5);
    entries += r.entries_checked;
    if (r.max_relative_error >= worst) {
      worst = r.max_relative_error;
      where = r.worst_tensor;
    }
  }
  const double secs = seconds_since(start);
  return {worst < 1e-4 && secs < 60.0,
          "max relative error " + fmt("%.3e", worst) + " (" + where + ") over " +
              std::to_string(entries) + " entries, " + fmt("%.2f", secs) + " s"};
}

Outcome noise_factoring() {
  Rng rng = make_stream(2024);
  const NoiseSpec spec{NoiseKind::gaussian, 0.0, 1.0, Mode::train};
  int mismatches = 0;
  for (int trial = 0; trial < 1000; ++trial) {
    const Index D = 1 + trial % 6, H = 1 + trial % 9;
    GruParams p = GruParams::zeros(D, H);
    for (Mat* m : {&p.w_z, &p.w_r, &p.w_h}) *m = random_matrix(rng, H, D);
    for (Mat* m : {&p.u_z, &p.u_r, &p.u_h}) *m = random_matrix(rng, H, H);
    for (Vec* b : {&p.b_z, &p.b_r, &p.b_h}) *b = random_matrix(rng, H, 1);
    const Vec x = random_matrix(rng, D, 1, 2.0);
    const Vec h = random_matrix(rng, H, 1, 0.5);
    const Vec eps = trial % 2 ? sample_noise(spec, H, rng)
                              : sample_noise({NoiseKind::scaled_bernoulli, 0.4, 0.0, Mode::train},
                                             H, rng);
    if (noisy_gru_step(p, x, h, eps) != Vec(eps.cwiseProduct(gru_step(p, x, h)))) ++mismatches;
  }

  int forward_mismatches = 0;
  for (int trial = 0; trial < 20; ++trial) {
    ModelConfig c;
    c.input_size = 4;
    c.hidden_size = 6;
    c.num_codes = 3;
    c.num_layers = 1 + trial % 3;
    c.noise.drop_prob = 0.0;
    c.interlayer_dropout = 0.0;
    std::vector<GruParams> layers;
    for (int l = 0; l < c.num_layers; ++l) {
      GruParams p = GruParams::zeros(l == 0 ? 4 : 6, 6);
      for (Mat* m : {&p.w_z, &p.w_r, &p.w_h}) *m = random_matrix(rng, 6, p.input_size());
      for (Mat* m : {&p.u_z, &p.u_r, &p.u_h}) *m = random_matrix(rng, 6, 6);
      layers.push_back(p);
    }
    const Mat inputs = random_matrix(rng, 8, 4);
    Rng a = make_stream(trial), b = make_stream(trial + 1000);
    if (forward_sequence(c, layers, inputs, a, Mode::train).top !=
        forward_sequence(c, layers, inputs, b, Mode::eval).top)
      ++forward_mismatches;
  }
  return {mismatches == 0 && forward_mismatches == 0,
          std::to_string(mismatches) + "/1000 step mismatches, " +
              std::to_string(forward_mismatches) + "/20 train-vs-eval mismatches"};
}

Outcome decay_contract() {
  Rng rng = make_stream(77);
  int out_of_range = 0, increasing = 0;
  for (int trial = 0; trial < 10000; ++trial) {
    // Odd trials draw w >= 0; even trials draw w of either sign.
    DecayParams p = DecayParams::zeros(1);
    p.w_gamma[0] = (trial % 2 ? 3.0 : 6.0) * uniform01(rng) - (trial % 2 ? 0.0 : 3.0);
    p.b_gamma[0] = 4.0 * uniform01(rng) - 2.0;
    const double d1 = 50.0 * uniform01(rng), d2 = d1 + 10.0 * uniform01(rng);
    const double g1 = decay_rates(Vec::Constant(1, d1), p)[0];
    const double g2 = decay_rates(Vec::Constant(1, d2), p)[0];
    for (double g : {g1, g2})
      if (!(g > 0.0 && g <= 1.0)) ++out_of_range;
    if (p.w_gamma[0] >= 0.0 && g2 > g1) ++increasing;
  }
  int touched = 0;
  for (int trial = 0; trial < 200; ++trial) {
    const VisitSeries s = random_series(rng, 1 + trial % 12, 5, 2, 0.5);
    DecayParams p{random_matrix(rng, 5, 1), random_matrix(rng, 5, 1)};
    const Mat imputed = impute_inputs(s, p, {random_matrix(rng, 5, 1)});
    for (Index i = 0; i < s.mask.size(); ++i)
      if (s.mask.data()[i] == 1.0 && imputed.data()[i] != s.values.data()[i]) ++touched;
  }
  return {out_of_range == 0 && increasing == 0 && touched == 0,
          std::to_string(out_of_range) + " rates outside (0,1], " + std::to_string(increasing) +
              " increases with w >= 0, " + std::to_string(touched) + " observed cells changed"};
}

double pairs_auc(const Mat& s, const Mat& y) {
  long hits = 0, pairs = 0;
  for (Index p = 0; p < s.size(); ++p)
    if (y.data()[p] == 1.0)
      for (Index n = 0; n < s.size(); ++n)
        if (y.data()[n] == 0.0) {
          ++pairs;
          hits += s.data()[p] >= s.data()[n];
        }
  return static_cast<double>(hits) / static_cast<double>(pairs);
}

Outcome metric_oracles() {
  Rng rng = make_stream(4242);
  int auc_mismatch = 0;
  for (int trial = 0; trial < 200; ++trial) {
    const Index n = 1 + static_cast<Index>(uniform01(rng) * 40);
    const Index c = 2 + static_cast<Index>(uniform01(rng) * 23);
    const int levels = trial % 2 ? 6 : 1 << 20;
    Mat s(n, c), y(n, c);
    for (Index i = 0; i < s.size(); ++i) {
      s.data()[i] = std::floor(uniform01(rng) * levels) / levels;
      y.data()[i] = uniform01(rng) < 0.3;
    }
    y(0, 0) = 1.0;
    y(0, 1) = 0.0;
    if (micro_auc(s, y) != pairs_auc(s, y)) ++auc_mismatch;
  }

  int example_mismatch = 0;
  Mat s1(1, 4), y1(1, 4);
  s1 << 0.9, 0.8, 0.1, 0.2;
  y1 << 1, 0, 1, 0;
  example_mismatch += top_k_recall(s1, y1, 2) != 0.5;
  example_mismatch += top_k_recall(s1, y1, 4) != 1.0;
  Mat s2(2, 3), y2(2, 3);
  s2 << 0.9, 0.5, 0.1, 0.2, 0.3, 0.8;
  y2 << 1, 1, 0, 1, 0, 1;
  example_mismatch += top_k_recall(s2, y2, 2) != 0.75;
  Mat s3(1, 3), y3(1, 3);
  s3 << 0.7, 0.5, 0.9;
  y3 << 1, 0, 0;
  example_mismatch += micro_auc(s3, y3) != 0.5;

  int non_monotone = 0;
  for (int trial = 0; trial < 100; ++trial) {
    const Index n = 1 + trial % 15, c = 3 + trial % 20;
    Mat s(n, c), y(n, c);
    for (Index i = 0; i < s.size(); ++i) {
      s.data()[i] = uniform01(rng);
      y.data()[i] = uniform01(rng) < 0.3;
    }
    y(0, 0) = 1.0;
    double prev = 0.0;
    for (int k = 1; k <= c; ++k) {
      const double r = top_k_recall(s, y, k);
      if (r < prev) ++non_monotone;
      prev = r;
    }
  }
  return {auc_mismatch == 0 && example_mismatch == 0 && non_monotone == 0,
          std::to_string(auc_mismatch) + "/200 AUC mismatches, " +
              std::to_string(example_mismatch) + " example mismatches, " +
              std::to_string(non_monotone) + " recall decreases in k"};
}

Outcome learning_progress(const std::vector<VisitSeries>& cohort) {
  const auto start = Clock::now();
  TrainConfig tc;
  tc.seed = 1;
  const TrainResult r = train(cohort, acceptance_model(), tc);
  const double secs = seconds_since(start);
  const double ratio = r.loss_history.back() / r.loss_history.front();
  return {r.loss_history.size() == 50 && ratio <= 0.5 && secs < 600.0,
          "epoch-1 loss " + fmt("%.4f", r.loss_history.front()) + ", epoch-50 loss " +
              fmt("%.4f", r.loss_history.back()) + ", ratio " + fmt("%.4f", ratio) + ", " +
              fmt("%.1f", secs) + " s"};
}

Outcome robustness_benefit(const std::vector<VisitSeries>& cohort) {
  int wins = 0;
  std::ostringstream detail;
  for (std::uint64_t seed = 1; seed <= 5; ++seed) {
    TrainConfig tc;
    tc.seed = seed;
    const AblationResult r = run_ablation(cohort, acceptance_model(), tc);
    wins += r.robust_auc >= r.baseline_auc;
    std::printf("    seed %llu: decay+noise auc %.6f, mean-imputation no-noise auc %.6f\n",
                static_cast<unsigned long long>(seed), r.robust_auc, r.baseline_auc);
    std::fflush(stdout);
  }
  detail << wins << "/5 seeds with decay+noise >= ablated";
  return {wins >= 4, detail.str()};
}

Outcome noise_sweep_runs(const std::vector<VisitSeries>& cohort) {
  TrainConfig tc;
  tc.seed = 1;
  tc.epochs = 10;
  const auto settings = default_noise_settings();
  const auto rows = noise_sweep(cohort, acceptance_model(), tc, settings);
  const std::string table = format_sweep_table(rows);
  std::printf("%s", table.c_str());
  const auto lines = std::count(table.begin(), table.end(), '\n');
  bool schema = lines == 9 && table.rfind("distribution\tspread\tmicro_auc", 0) == 0;
  for (const auto& row : rows)
    schema = schema && row.heldout.micro_auc >= 0.0 && row.heldout.micro_auc <= 1.0 &&
             std::isfinite(row.final_train_loss);
  return {schema && rows.size() == 8,
          std::to_string(rows.size()) + " settings trained and reported"};
}

Outcome determinism_and_persistence() {
  GenConfig g;
  g.num_patients = 120;
  g.seed = 5;
  const auto cohort = generate_cohort(g).series;
  ModelConfig c = acceptance_model();
  c.hidden_size = 16;
  TrainConfig tc;
  tc.epochs = 5;
  tc.seed = 3;
  const TrainResult a = train(cohort, c, tc);
  const TrainResult b = train(cohort, c, tc);
  const bool same_history =
      format_loss_history(a.loss_history) == format_loss_history(b.loss_history);
  const bool same_checkpoint = checkpoint_to_string(a.state, tc) == checkpoint_to_string(b.state, tc);
  const Checkpoint loaded = checkpoint_from_string(checkpoint_to_string(a.state, tc));
  int differing = 0;
  for (const auto& s : cohort) differing += predict_sequence(a.state, s) != predict_sequence(loaded.state, s);
  return {same_history && same_checkpoint && differing == 0,
          std::string("histories ") + (same_history ? "identical" : "differ") + ", checkpoints " +
              (same_checkpoint ? "identical" : "differ") + ", " + std::to_string(differing) +
              " patients with changed outputs after reload"};
}

Outcome initialization() {
  double worst = 0.0;
  int nonzero_bias = 0, matrices = 0;
  for (std::uint64_t seed : {1, 2, 3}) {
    ModelState s = init_model(acceptance_model(), {Vec::Zero(20)}, seed);
    for (auto& v : tensor_views(s.params)) {
      if (v.name.starts_with("decay")) continue;
      Eigen::Map<Mat> m(v.data, v.rows, v.cols);
      if (v.is_vector) {
        nonzero_bias += !m.isZero(0.0);
        continue;
      }
      const Mat gram = v.rows >= v.cols ? Mat(m.transpose() * m) : Mat(m * m.transpose());
      worst = std::max(worst, (gram - Mat::Identity(gram.rows(), gram.cols())).cwiseAbs().maxCoeff());
      ++matrices;
    }
  }
  return {worst <= 1e-8 && nonzero_bias == 0,
          std::to_string(matrices) + " matrices, worst orthonormality residual " +
              fmt("%.2e", worst) + ", " + std::to_string(nonzero_bias) + " nonzero bias vectors"};
}

}  // namespace

int main() {
  report(1, "gradient fidelity", gradient_fidelity);
  report(2, "noise factoring identity", noise_factoring);
  report(3, "decay contract", decay_contract);
  report(4, "metric oracles", metric_oracles);

  const GenConfig gen = acceptance_cohort();
  const auto cohort = generate_cohort(gen).series;
  report(5, "learning progress", [&] { return learning_progress(cohort); });
  report(6, "robustness benefit", [&] { return robustness_benefit(cohort); });
  report(7, "noise spread sweep", [&] { return noise_sweep_runs(cohort); });
  report(8, "determinism and persistence", determinism_and_persistence);
  report(9, "initialization", initialization);

  std::printf("%d criteria failed\n", failures);
  return failures == 0 ? 0 : 1;
}
