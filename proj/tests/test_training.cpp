// SPDX-License-Identifier: Apache-2.0
#include "robustseq/data_io.hpp"
#include "robustseq/errors.hpp"
#include "robustseq/training.hpp"
#include "test_helpers.hpp"

#include <gtest/gtest.h>

#include <cmath>

using namespace robustseq;
using robustseq::testing::random_series;

namespace {

double sigmoid(double a) { return 1.0 / (1.0 + std::exp(-a)); }

// Element-by-element loss of the whole model for fixed noise draws, written
// with plain loops and no library forward code.
struct Draws {
  std::vector<Mat> eps, drop;  // per layer, H x T
};

double reference_loss(const ModelState& s, const VisitSeries& x, const Draws& draws,
                      double l2) {
  const auto& P = s.params;
  const Index T = x.length(), D = x.num_vars(), H = s.config.hidden_size;
  const Index C = s.config.num_codes;
  if (T < 2) return 0.0;
  std::vector<double> last(D), delta(D, 0.0);
  std::vector<bool> seen(D, false);
  std::vector<Vec> h(P.layers.size(), Vec::Zero(H));
  double loss = 0.0;
  for (Index t = 0; t < T; ++t) {
    Vec in(D);
    for (Index d = 0; d < D; ++d) {
      if (t > 0) {
        const double gap = x.timestamps[t] - x.timestamps[t - 1];
        delta[d] = x.mask(t - 1, d) == 1.0 ? gap : gap + delta[d];
      }
      if (x.mask(t, d) == 1.0) {
        in[d] = x.values(t, d);
      } else {
        const double m = s.means.means[d];
        const double g = std::exp(-std::max(0.0, P.decay.w_gamma[d] * delta[d] + P.decay.b_gamma[d]));
        in[d] = g * (seen[d] ? last[d] : m) + (1.0 - g) * m;
      }
    }
    for (Index d = 0; d < D; ++d)
      if (x.mask(t, d) == 1.0) {
        last[d] = x.values(t, d);
        seen[d] = true;
      }
    Vec up = in;
    for (std::size_t l = 0; l < P.layers.size(); ++l) {
      const GruParams& g = P.layers[l];
      Vec next(H);
      for (Index i = 0; i < H; ++i) {
        double az = g.b_z[i];
        for (Index j = 0; j < up.size(); ++j) az += g.w_z(i, j) * up[j];
        for (Index j = 0; j < H; ++j) az += g.u_z(i, j) * h[l][j];
        const double z = sigmoid(az);
        double ah = g.b_h[i];
        for (Index j = 0; j < up.size(); ++j) ah += g.w_h(i, j) * up[j];
        for (Index j = 0; j < H; ++j) {
          double rj = g.b_r[j];
          for (Index k = 0; k < up.size(); ++k) rj += g.w_r(j, k) * up[k];
          for (Index k = 0; k < H; ++k) rj += g.u_r(j, k) * h[l][k];
          ah += g.u_h(i, j) * sigmoid(rj) * h[l][j];
        }
        next[i] = draws.eps[l](i, t) * ((1.0 - z) * h[l][i] + z * std::tanh(ah));
      }
      h[l] = next;
      up = next.cwiseProduct(draws.drop[l].col(t));
    }
    if (t + 1 < T)
      for (Index c = 0; c < C; ++c) {
        double a = P.head.b_code[c];
        for (Index i = 0; i < H; ++i) a += P.head.w_code(c, i) * up[i];
        const double y = std::clamp(sigmoid(a), kProbClamp, 1.0 - kProbClamp);
        const double truth = x.labels(t + 1, c);
        loss -= truth * std::log(y) + (1.0 - truth) * std::log(1.0 - y);
      }
  }
  return loss + l2 * P.head.w_code.squaredNorm();
}

Draws record_draws(const ModelState& s, const VisitSeries& x, std::uint64_t seed) {
  Rng rng = make_stream(seed);
  const ModelForward fwd = model_forward(s, x, rng, Mode::train);
  Draws d;
  for (const auto& lt : fwd.trace.layers) {
    d.eps.push_back(lt.eps);
    d.drop.push_back(lt.drop);
  }
  return d;
}

void expect_gradients_match_oracle(std::uint64_t problem_seed, NoiseSpec noise, double dropout,
                                   double tol) {
  GradCheckProblem prob = make_gradcheck_problem(problem_seed, noise, dropout);
  const double l2 = 1e-3;
  const std::uint64_t noise_seed = 77;
  const Draws draws = record_draws(prob.state, prob.series, noise_seed);

  Rng rng = make_stream(noise_seed);
  GradientResult analytic = bptt_gradients(prob.state, prob.series, rng, l2);
  EXPECT_NEAR(analytic.loss, reference_loss(prob.state, prob.series, draws, l2),
              1e-10 * std::abs(analytic.loss));

  ModelState probe = prob.state;
  auto params = tensor_views(probe.params);
  auto grads = tensor_views(analytic.grads);
  const double h = 1e-5;
  for (std::size_t i = 0; i < params.size(); ++i)
    for (Index k = 0; k < params[i].size(); ++k) {
      double& theta = params[i].data[k];
      const double saved = theta;
      theta = saved + h;
      const double up = reference_loss(probe, prob.series, draws, l2);
      theta = saved - h;
      const double down = reference_loss(probe, prob.series, draws, l2);
      theta = saved;
      const double numeric = (up - down) / (2 * h);
      const double exact = grads[i].data[k];
      const double denom = std::max({std::abs(exact), std::abs(numeric), kGradCheckFloor});
      EXPECT_LT(std::abs(exact - numeric) / denom, tol)
          << params[i].name << "[" << k << "] analytic " << exact << " numeric " << numeric;
    }
}

}  // namespace

TEST(OrthogonalInit, SquareAndRectangular) {
  Rng rng = make_stream(1);
  const Mat q = orthogonal_init(4, 4, rng);
  EXPECT_LE((q.transpose() * q - Mat::Identity(4, 4)).cwiseAbs().maxCoeff(), 1e-8);
  EXPECT_LE((q * q.transpose() - Mat::Identity(4, 4)).cwiseAbs().maxCoeff(), 1e-8);
  const Mat tall = orthogonal_init(6, 3, rng);
  EXPECT_LE((tall.transpose() * tall - Mat::Identity(3, 3)).cwiseAbs().maxCoeff(), 1e-8);
  const Mat wide = orthogonal_init(3, 6, rng);
  EXPECT_LE((wide * wide.transpose() - Mat::Identity(3, 3)).cwiseAbs().maxCoeff(), 1e-8);
}

TEST(OrthogonalInit, Deterministic) {
  Rng a = make_stream(5), b = make_stream(5);
  EXPECT_EQ(orthogonal_init(5, 3, a), orthogonal_init(5, 3, b));
}

TEST(InitModel, OrthonormalWeightsAndZeroBiases) {
  ModelConfig c;
  c.input_size = 6;
  c.hidden_size = 8;
  c.num_codes = 5;
  c.num_layers = 3;
  ModelState s = init_model(c, {Vec::Zero(6)}, 3);
  for (auto& v : tensor_views(s.params)) {
    if (v.name.starts_with("decay")) continue;
    Eigen::Map<Mat> m(v.data, v.rows, v.cols);
    if (v.is_vector) {
      EXPECT_TRUE(m.isZero(0.0)) << v.name;
    } else {
      const Mat gram = v.rows >= v.cols ? Mat(m.transpose() * m) : Mat(m * m.transpose());
      EXPECT_LE((gram - Mat::Identity(gram.rows(), gram.cols())).cwiseAbs().maxCoeff(), 1e-8)
          << v.name;
    }
  }
  EXPECT_EQ(s.params.decay.w_gamma, Vec::Ones(6));
  EXPECT_EQ(s.params.decay.b_gamma, Vec::Zero(6));
}

TEST(Bptt, MatchesLoopOracleWithBernoulliNoise) {
  for (std::uint64_t seed : {1, 2, 3})
    expect_gradients_match_oracle(seed, {NoiseKind::scaled_bernoulli, 0.3, 0.0, Mode::train}, 0.3,
                                  1e-4);
}

TEST(Bptt, MatchesLoopOracleWithGaussianNoise) {
  for (std::uint64_t seed : {4, 5})
    expect_gradients_match_oracle(seed, {NoiseKind::gaussian, 0.0, 1.1, Mode::train}, 0.0, 1e-4);
}

TEST(Bptt, MatchesLoopOracleWithoutNoise) {
  expect_gradients_match_oracle(6, {NoiseKind::scaled_bernoulli, 0.0, 0.0, Mode::train}, 0.0,
                                1e-4);
}

TEST(Bptt, LibraryGradientCheckAgrees) {
  for (std::uint64_t seed : {1, 7}) {
    GradCheckProblem prob = make_gradcheck_problem(seed);
    const GradCheckReport r = gradient_check(prob.state, prob.series, 11, 1e-3);
    EXPECT_LT(r.max_relative_error, 1e-4) << r.worst_tensor;
    EXPECT_GT(r.entries_checked, 400u);
  }
}

TEST(Bptt, SingleVisitHasZeroLossAndGradient) {
  GradCheckProblem prob = make_gradcheck_problem(2);
  VisitSeries one = prob.series;
  one.timestamps.resize(1);
  one.values.conservativeResize(1, Eigen::NoChange);
  one.mask.conservativeResize(1, Eigen::NoChange);
  one.labels.conservativeResize(1, Eigen::NoChange);
  Rng rng = make_stream(1);
  GradientResult g = bptt_gradients(prob.state, one, rng, 0.5);
  EXPECT_EQ(g.loss, 0.0);
  EXPECT_EQ(global_norm(g.grads), 0.0);
}

TEST(Bptt, NoiseFreeGradientsIgnoreSeed) {
  GradCheckProblem prob = make_gradcheck_problem(3, {NoiseKind::scaled_bernoulli, 0.0, 0.0, Mode::train}, 0.0);
  Rng a = make_stream(1), b = make_stream(999);
  GradientResult ga = bptt_gradients(prob.state, prob.series, a, 1e-3);
  GradientResult gb = bptt_gradients(prob.state, prob.series, b, 1e-3);
  auto va = tensor_views(ga.grads), vb = tensor_views(gb.grads);
  for (std::size_t i = 0; i < va.size(); ++i)
    for (Index k = 0; k < va[i].size(); ++k) ASSERT_EQ(va[i].data[k], vb[i].data[k]);
}

TEST(Bptt, TruncationKeepsLossAndChangesRecurrentGradients) {
  GradCheckProblem prob = make_gradcheck_problem(4, {NoiseKind::scaled_bernoulli, 0.0, 0.0, Mode::train}, 0.0);
  Rng a = make_stream(1), b = make_stream(1), c = make_stream(1);
  GradientResult full = bptt_gradients(prob.state, prob.series, a, 0.0);
  GradientResult same = bptt_gradients(prob.state, prob.series, b, 0.0, 100);
  GradientResult cut = bptt_gradients(prob.state, prob.series, c, 0.0, 2);
  EXPECT_EQ(full.loss, cut.loss);
  EXPECT_EQ(full.grads.layers[0].u_z, same.grads.layers[0].u_z);
  EXPECT_NE(full.grads.layers[0].u_z, cut.grads.layers[0].u_z);
  // The head sees only the current step, so its gradient is unaffected.
  EXPECT_TRUE(full.grads.head.w_code.isApprox(cut.grads.head.w_code, 1e-14));
}

TEST(Clip, Examples) {
  ModelConfig c;
  c.input_size = 1;
  c.hidden_size = 1;
  c.num_codes = 1;
  c.num_layers = 1;
  Parameters g = Parameters::zeros(c);
  EXPECT_EQ(clip_gradients(g, 0.25), 0.0);
  EXPECT_EQ(global_norm(g), 0.0);

  g.head.b_code[0] = 0.1;
  clip_gradients(g, 0.25);
  EXPECT_EQ(g.head.b_code[0], 0.1);

  g.head.b_code[0] = 1.5;
  g.head.w_code(0, 0) = 2.0;  // norm 2.5
  EXPECT_DOUBLE_EQ(clip_gradients(g, 0.25), 2.5);
  EXPECT_NEAR(g.head.b_code[0], 0.15, 1e-15);
  EXPECT_NEAR(g.head.w_code(0, 0), 0.2, 1e-15);
}

TEST(Clip, NormNeverExceedsThreshold) {
  Rng rng = make_stream(8);
  for (int trial = 0; trial < 50; ++trial) {
    GradCheckProblem prob = make_gradcheck_problem(trial + 10);
    Rng noise = make_stream(trial);
    GradientResult g = bptt_gradients(prob.state, prob.series, noise, 0.0);
    const double clip = 0.01 + uniform01(rng);
    clip_gradients(g.grads, clip);
    EXPECT_LE(global_norm(g.grads), clip + 1e-12);
  }
}

TEST(Asgd, Examples) {
  ModelConfig c;
  c.input_size = 1;
  c.hidden_size = 1;
  c.num_codes = 1;
  c.num_layers = 1;
  ModelState s;
  s.config = c;
  s.params = Parameters::zeros(c);
  s.params.head.b_code[0] = 1.0;
  Parameters g = Parameters::zeros(c);
  g.head.b_code[0] = 2.0;

  TrainConfig tc;
  tc.epochs = 4;
  tc.learning_rate = 0.0;
  asgd_step(s, g, tc);
  EXPECT_EQ(s.params.head.b_code[0], 1.0);

  tc.learning_rate = 0.1;
  tc.averaging_start_epoch = 0;
  s.step_count = 0;
  s.average_count = 0;
  asgd_step(s, g, tc);
  EXPECT_DOUBLE_EQ(s.params.head.b_code[0], 0.8);
  EXPECT_EQ(s.average.head.b_code[0], s.params.head.b_code[0]);
  asgd_step(s, g, tc);
  EXPECT_DOUBLE_EQ(s.params.head.b_code[0], 0.6);
  EXPECT_DOUBLE_EQ(s.average.head.b_code[0], 0.7);
  export_average(s);
  EXPECT_DOUBLE_EQ(s.params.head.b_code[0], 0.7);
}

TEST(Asgd, AveragingWaitsForStartEpoch) {
  TrainConfig tc;
  tc.epochs = 8;
  EXPECT_EQ(tc.averaging_start(), 6);
  tc.epochs = 50;
  EXPECT_EQ(tc.averaging_start(), 37);
  tc.averaging_start_epoch = 3;
  EXPECT_EQ(tc.averaging_start(), 3);
}

namespace {

std::vector<VisitSeries> small_cohort(std::uint64_t seed, int n = 30) {
  GenConfig g;
  g.num_patients = n;
  g.num_vars = 4;
  g.num_codes = 3;
  g.max_visits = 8;
  g.seed = seed;
  return generate_cohort(g).series;
}

ModelConfig small_model() {
  ModelConfig c;
  c.input_size = 4;
  c.num_codes = 3;
  c.hidden_size = 6;
  return c;
}

}  // namespace

TEST(Train, IdenticalSeedsGiveIdenticalHistories) {
  const auto cohort = small_cohort(1);
  TrainConfig tc;
  tc.epochs = 4;
  tc.seed = 9;
  const TrainResult a = train(cohort, small_model(), tc);
  const TrainResult b = train(cohort, small_model(), tc);
  EXPECT_EQ(a.loss_history, b.loss_history);
  EXPECT_EQ(a.train_ids, b.train_ids);
  EXPECT_EQ(a.state.params.head.w_code, b.state.params.head.w_code);
  tc.seed = 10;
  EXPECT_NE(train(cohort, small_model(), tc).loss_history, a.loss_history);
}

TEST(Train, ZeroLearningRateWithoutNoiseKeepsLossConstant) {
  const auto cohort = small_cohort(2);
  ModelConfig c = small_model();
  c.noise.drop_prob = 0.0;
  c.interlayer_dropout = 0.0;
  TrainConfig tc;
  tc.epochs = 3;
  tc.learning_rate = 0.0;
  const TrainResult r = train(cohort, c, tc);
  ASSERT_EQ(r.loss_history.size(), 3u);
  EXPECT_EQ(r.loss_history[0], r.loss_history[1]);
  EXPECT_EQ(r.loss_history[1], r.loss_history[2]);
}

TEST(Train, LossDecreasesOnSmallCohort) {
  const auto cohort = small_cohort(3, 60);
  TrainConfig tc;
  tc.epochs = 15;
  const TrainResult r = train(cohort, small_model(), tc);
  EXPECT_LT(r.loss_history.back(), r.loss_history.front());
  EXPECT_EQ(r.train_ids.size() + r.test_ids.size(), cohort.size());
}

TEST(Train, RejectsBadInput) {
  TrainConfig tc;
  EXPECT_THROW(train(std::vector<VisitSeries>{}, small_model(), tc), ValidationError);
  const auto cohort = small_cohort(4);
  ModelConfig wrong = small_model();
  wrong.input_size = 5;
  EXPECT_THROW(train(cohort, wrong, tc), ValidationError);
  tc.clip_norm = 0.0;
  EXPECT_THROW(train(cohort, small_model(), tc), ValidationError);
}
