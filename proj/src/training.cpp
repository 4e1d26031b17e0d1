// SPDX-License-Identifier: Apache-2.0
#include "robustseq/training.hpp"

#include "robustseq/data_io.hpp"
#include "robustseq/errors.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>
#include <random>

namespace robustseq {

namespace {

// Stream tags keep the generators used for different purposes apart.
constexpr std::uint64_t kInitStream = 1;
constexpr std::uint64_t kShuffleStream = 2;
constexpr std::uint64_t kNoiseStream = 3;

}  // namespace

void TrainConfig::validate() const {
  if (epochs < 1) throw ValidationError("epochs must be >= 1");
  if (!(learning_rate >= 0.0) || !std::isfinite(learning_rate))
    throw ValidationError("learning rate must be finite and >= 0");
  if (!(clip_norm > 0.0)) throw ValidationError("clip norm must be > 0");
  if (!(l2_lambda >= 0.0)) throw ValidationError("l2 lambda must be >= 0");
  if (!(split_fraction > 0.0 && split_fraction < 1.0))
    throw ValidationError("split fraction must lie in (0, 1)");
  if (bptt_window < 0) throw ValidationError("bptt window must be >= 0");
}

int TrainConfig::averaging_start() const {
  if (averaging_start_epoch >= 0) return averaging_start_epoch;
  return (3 * epochs) / 4;
}

Mat orthogonal_init(Index rows, Index cols, Rng& rng) {
  if (rows < 1 || cols < 1) throw ValidationError("orthogonal_init: empty shape");
  std::normal_distribution<double> normal(0.0, 1.0);
  Mat g(rows, cols);
  for (Index j = 0; j < cols; ++j)
    for (Index i = 0; i < rows; ++i) g(i, j) = normal(rng);
  Eigen::BDCSVD<Mat> svd(g, Eigen::ComputeThinU | Eigen::ComputeThinV);
  return svd.matrixU() * svd.matrixV().transpose();
}

ModelState init_model(const ModelConfig& config, EmpiricalMeans means, std::uint64_t seed) {
  config.validate();
  if (means.means.size() != config.input_size)
    throw ValidationError("init_model: mean vector width does not match input size");
  ModelState state;
  state.config = config;
  state.means = std::move(means);
  state.params = Parameters::zeros(config);

  Rng rng = make_stream(seed, {kInitStream});
  // A diagonal orthogonal matrix; +1 keeps the rectifier active at start.
  state.params.decay.w_gamma.setOnes();
  for (auto& layer : state.params.layers) {
    const Index H = layer.hidden_size();
    const Index D = layer.input_size();
    layer.w_z = orthogonal_init(H, D, rng);
    layer.w_r = orthogonal_init(H, D, rng);
    layer.w_h = orthogonal_init(H, D, rng);
    layer.u_z = orthogonal_init(H, H, rng);
    layer.u_r = orthogonal_init(H, H, rng);
    layer.u_h = orthogonal_init(H, H, rng);
  }
  state.params.head.w_code = orthogonal_init(config.num_codes, config.hidden_size, rng);
  return state;
}

GradientResult bptt_gradients(const ModelState& state, const VisitSeries& series, Rng& rng,
                              double l2_lambda, int bptt_window) {
  const auto& cfg = state.config;
  const Index T = series.length();
  GradientResult out;
  out.grads = Parameters::zeros(cfg);
  const ModelForward fwd = model_forward(state, series, rng, Mode::train);
  if (T < 2) return out;

  const auto& head = state.params.head;
  const Mat preds = fwd.probs.topRows(T - 1);
  const Mat truths = series.labels.bottomRows(T - 1);
  out.loss = sequence_loss(preds, truths, head, l2_lambda);
  if (!std::isfinite(out.loss))
    throw NumericalError("non-finite loss on series '" + series.patient_id + "'");

  // Head.
  const Mat dlogit = loss_logit_gradient(preds, truths);  // (T-1) x C
  const auto& top = fwd.trace.top;
  auto& gh = out.grads.head;
  gh.w_code.noalias() = dlogit.transpose() * top.leftCols(T - 1).transpose();
  gh.w_code += 2.0 * l2_lambda * head.w_code;
  gh.b_code = dlogit.colwise().sum().transpose();
  Mat d_top = Mat::Zero(cfg.hidden_size, T);
  d_top.leftCols(T - 1).noalias() = head.w_code.transpose() * dlogit.transpose();

  // Recurrence, newest step first; within a step, top layer first.
  const std::size_t L = state.params.layers.size();
  const Index H = cfg.hidden_size;
  std::vector<Vec> carry(L, Vec::Zero(H));
  Mat d_inputs = Mat::Zero(cfg.input_size, T);
  const Vec zero_h = Vec::Zero(H);
  for (Index t = T - 1; t >= 0; --t) {
    if (bptt_window > 0 && t + 1 < T && (t + 1) % bptt_window == 0)
      for (auto& c : carry) c.setZero();
    Vec d_up = d_top.col(t);
    for (std::size_t li = L; li-- > 0;) {
      const auto& p = state.params.layers[li];
      const auto& lt = fwd.trace.layers[li];
      auto& g = out.grads.layers[li];

      const Vec dh = carry[li] + lt.drop.col(t).cwiseProduct(d_up);
      const Vec h_prev = t > 0 ? Vec(lt.h.col(t - 1)) : zero_h;
      const Vec x = lt.inputs.col(t);
      const auto z = lt.z.col(t).array();
      const auto r = lt.r.col(t).array();
      const auto cand = lt.cand.col(t).array();

      const Vec dg = lt.eps.col(t).cwiseProduct(dh);
      const Vec da_z = (dg.array() * (cand - h_prev.array()) * z * (1.0 - z)).matrix();
      const Vec da_h = (dg.array() * z * (1.0 - cand.square())).matrix();
      const Vec rh = (r * h_prev.array()).matrix();
      const Vec drh = p.u_h.transpose() * da_h;
      const Vec da_r = (drh.array() * h_prev.array() * r * (1.0 - r)).matrix();

      g.w_z.noalias() += da_z * x.transpose();
      g.w_r.noalias() += da_r * x.transpose();
      g.w_h.noalias() += da_h * x.transpose();
      g.u_z.noalias() += da_z * h_prev.transpose();
      g.u_r.noalias() += da_r * h_prev.transpose();
      g.u_h.noalias() += da_h * rh.transpose();
      g.b_z += da_z;
      g.b_r += da_r;
      g.b_h += da_h;

      carry[li] = (dg.array() * (1.0 - z) + drh.array() * r).matrix();
      carry[li].noalias() += p.u_z.transpose() * da_z;
      carry[li].noalias() += p.u_r.transpose() * da_r;

      d_up.noalias() = p.w_z.transpose() * da_z;
      d_up.noalias() += p.w_r.transpose() * da_r;
      d_up.noalias() += p.w_h.transpose() * da_h;
    }
    d_inputs.col(t) = d_up;
  }

  // Decay: only missing cells depend on w_gamma / b_gamma, and only while
  // the rectifier is open (subgradient 0 at the kink).
  if (cfg.imputation == ImputationKind::decay) {
    const auto& im = fwd.imputation;
    auto& gd = out.grads.decay;
    for (Index t = 0; t < T; ++t)
      for (Index d = 0; d < cfg.input_size; ++d) {
        if (series.mask(t, d) == 1.0 || !(im.preact(t, d) > 0.0)) continue;
        const double d_gamma = d_inputs(d, t) * (im.last_seen(t, d) - state.means.means[d]);
        const double d_pre = -im.gammas(t, d) * d_gamma;
        gd.w_gamma[d] += d_pre * im.intervals(t, d);
        gd.b_gamma[d] += d_pre;
      }
  }
  return out;
}

double series_loss(const ModelState& state, const VisitSeries& series, Rng& rng,
                   double l2_lambda) {
  const Index T = series.length();
  const ModelForward fwd = model_forward(state, series, rng, Mode::train);
  if (T < 2) return 0.0;
  return sequence_loss(fwd.probs.topRows(T - 1), series.labels.bottomRows(T - 1),
                       state.params.head, l2_lambda);
}

double global_norm(Parameters& grads) {
  double sq = 0.0;
  for (const auto& v : tensor_views(grads))
    sq += Eigen::Map<const Vec>(v.data, v.size()).squaredNorm();
  return std::sqrt(sq);
}

double clip_gradients(Parameters& grads, double clip_norm) {
  if (!(clip_norm > 0.0)) throw ValidationError("clip norm must be > 0");
  const double norm = global_norm(grads);
  if (!std::isfinite(norm)) throw NumericalError("non-finite gradient norm");
  if (norm > clip_norm) {
    const double scale = clip_norm / norm;
    for (const auto& v : tensor_views(grads)) Eigen::Map<Vec>(v.data, v.size()) *= scale;
  }
  return norm;
}

void asgd_step(ModelState& state, Parameters& grads, const TrainConfig& config) {
  auto params = tensor_views(state.params);
  auto g = tensor_views(grads);
  if (params.size() != g.size()) throw ValidationError("asgd_step: gradient layout mismatch");
  for (std::size_t i = 0; i < params.size(); ++i) {
    if (params[i].size() != g[i].size())
      throw ValidationError("asgd_step: gradient shape mismatch for " + params[i].name);
    Eigen::Map<Vec>(params[i].data, params[i].size()) -=
        config.learning_rate * Eigen::Map<const Vec>(g[i].data, g[i].size());
  }
  ++state.step_count;

  if (state.epoch < config.averaging_start()) return;
  ++state.average_count;
  if (state.average_count == 1) {
    state.average = state.params;
    return;
  }
  auto avg = tensor_views(state.average);
  const double inv_n = 1.0 / static_cast<double>(state.average_count);
  for (std::size_t i = 0; i < params.size(); ++i) {
    Eigen::Map<Vec> a(avg[i].data, avg[i].size());
    a += inv_n * (Eigen::Map<const Vec>(params[i].data, params[i].size()) - a);
  }
}

void export_average(ModelState& state) {
  if (state.average_count == 0) return;
  state.params = state.average;
}

TrainResult train(std::span<const VisitSeries> cohort, ModelConfig model_config,
                  const TrainConfig& train_config) {
  train_config.validate();
  if (cohort.empty()) throw ValidationError("train: cohort is empty");
  const Index D = cohort.front().num_vars();
  const Index C = cohort.front().num_codes();
  for (const auto& s : cohort) {
    validate_series(s);
    if (s.num_vars() != D || s.num_codes() != C)
      throw ValidationError("train: series '" + s.patient_id + "' differs in width");
  }
  if (model_config.input_size == 0) model_config.input_size = static_cast<int>(D);
  if (model_config.num_codes == 0) model_config.num_codes = static_cast<int>(C);
  if (model_config.input_size != D || model_config.num_codes != C)
    throw ValidationError("train: model dimensions do not match the cohort");
  model_config.validate();

  TrainResult result;
  std::tie(result.train_ids, result.test_ids) =
      split_indices(cohort.size(), train_config.split_fraction, train_config.seed);

  std::vector<VisitSeries> train_split;
  train_split.reserve(result.train_ids.size());
  for (auto id : result.train_ids) train_split.push_back(cohort[id]);

  auto& state = result.state;
  state = init_model(model_config, empirical_means(train_split), train_config.seed);

  const std::size_t n = train_split.size();
  std::vector<std::size_t> order(n);
  std::vector<double> losses(n);
  for (int epoch = 0; epoch < train_config.epochs; ++epoch) {
    state.epoch = epoch;
    std::iota(order.begin(), order.end(), std::size_t{0});
    Rng shuffle_rng =
        make_stream(train_config.seed, {kShuffleStream, static_cast<std::uint64_t>(epoch)});
    std::shuffle(order.begin(), order.end(), shuffle_rng);
    for (std::size_t pos : order) {
      Rng noise_rng = make_stream(train_config.seed, {kNoiseStream, static_cast<std::uint64_t>(epoch),
                                                      result.train_ids[pos]});
      GradientResult gr = bptt_gradients(state, train_split[pos], noise_rng, train_config.l2_lambda,
                                         train_config.bptt_window);
      clip_gradients(gr.grads, train_config.clip_norm);
      asgd_step(state, gr.grads, train_config);
      losses[pos] = gr.loss;
    }
    result.loss_history.push_back(std::accumulate(losses.begin(), losses.end(), 0.0) /
                                  static_cast<double>(n));
  }
  export_average(state);
  return result;
}

GradCheckReport gradient_check(const ModelState& state, const VisitSeries& series,
                               std::uint64_t noise_seed, double l2_lambda, double step) {
  Rng rng = make_stream(noise_seed);
  GradientResult analytic = bptt_gradients(state, series, rng, l2_lambda);

  ModelState probe = state;
  auto params = tensor_views(probe.params);
  auto grads = tensor_views(analytic.grads);
  GradCheckReport report;
  auto loss_at = [&] {
    Rng replay = make_stream(noise_seed);
    return series_loss(probe, series, replay, l2_lambda);
  };
  for (std::size_t i = 0; i < params.size(); ++i) {
    for (Index k = 0; k < params[i].size(); ++k) {
      double& theta = params[i].data[k];
      const double saved = theta;
      theta = saved + step;
      const double up = loss_at();
      theta = saved - step;
      const double down = loss_at();
      theta = saved;
      const double numeric = (up - down) / (2.0 * step);
      const double exact = grads[i].data[k];
      const double denom = std::max({std::abs(exact), std::abs(numeric), kGradCheckFloor});
      const double rel = std::abs(exact - numeric) / denom;
      if (rel > report.max_relative_error || report.worst_tensor.empty()) {
        report.max_relative_error = rel;
        report.worst_tensor = params[i].name;
      }
      ++report.entries_checked;
    }
  }
  return report;
}

GradCheckProblem make_gradcheck_problem(std::uint64_t seed, NoiseSpec noise,
                                        double interlayer_dropout) {
  ModelConfig cfg;
  cfg.num_layers = 2;
  cfg.input_size = 5;
  cfg.hidden_size = 7;
  cfg.num_codes = 4;
  cfg.interlayer_dropout = interlayer_dropout;
  cfg.noise = noise;
  cfg.seed = seed;

  Rng rng = make_stream(seed, {0xC4EC});
  std::normal_distribution<double> normal(0.0, 1.0);
  std::uniform_real_distribution<double> unif(0.0, 1.0);

  EmpiricalMeans means{Vec::Zero(cfg.input_size)};
  for (Index d = 0; d < cfg.input_size; ++d) means.means[d] = normal(rng);

  GradCheckProblem prob{init_model(cfg, means, seed), {}};
  for (const auto& v : tensor_views(prob.state.params))
    for (Index k = 0; k < v.size(); ++k) v.data[k] += 0.5 * normal(rng);
  auto& decay = prob.state.params.decay;
  for (Index d = 0; d < cfg.input_size; ++d) {
    decay.w_gamma[d] = 0.2 + 0.8 * unif(rng);
    decay.b_gamma[d] = 0.5 * normal(rng);
  }

  const Index T = 6;
  auto& s = prob.series;
  s.patient_id = "gradcheck";
  s.values = Mat::Constant(T, cfg.input_size, kMissing);
  s.mask = Mat::Zero(T, cfg.input_size);
  s.labels = Mat::Zero(T, cfg.num_codes);
  double time = 0.0;
  for (Index t = 0; t < T; ++t) {
    s.timestamps.push_back(time);
    time += 0.5 + 1.5 * unif(rng);
    for (Index d = 0; d < cfg.input_size; ++d) {
      if (t == 0 || unif(rng) < 0.5) {
        s.mask(t, d) = 1.0;
        s.values(t, d) = normal(rng);
      }
    }
    for (Index c = 0; c < cfg.num_codes; ++c) s.labels(t, c) = unif(rng) < 0.4 ? 1.0 : 0.0;
  }
  return prob;
}

}  // namespace robustseq
