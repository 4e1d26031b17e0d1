// SPDX-License-Identifier: Apache-2.0
#include "robustseq/gru.hpp"

#include "robustseq/errors.hpp"

#include <cmath>
#include <random>
#include <string>

namespace robustseq {

namespace {

Vec sigmoid(const Vec& a) { return (1.0 + (-a.array()).exp()).inverse().matrix(); }

}  // namespace

std::string_view to_string(NoiseKind kind) {
  return kind == NoiseKind::gaussian ? "gaussian" : "bernoulli";
}

NoiseKind parse_noise_kind(std::string_view text) {
  if (text == "bernoulli" || text == "scaled_bernoulli") return NoiseKind::scaled_bernoulli;
  if (text == "gaussian") return NoiseKind::gaussian;
  throw ValidationError("unknown noise kind '" + std::string(text) + "'");
}

std::string_view to_string(ImputationKind kind) {
  return kind == ImputationKind::mean ? "mean" : "decay";
}

ImputationKind parse_imputation_kind(std::string_view text) {
  if (text == "decay") return ImputationKind::decay;
  if (text == "mean") return ImputationKind::mean;
  throw ValidationError("unknown imputation kind '" + std::string(text) + "'");
}

GruParams GruParams::zeros(Index input_size, Index hidden_size) {
  GruParams p;
  for (Mat* w : {&p.w_z, &p.w_r, &p.w_h}) *w = Mat::Zero(hidden_size, input_size);
  for (Mat* u : {&p.u_z, &p.u_r, &p.u_h}) *u = Mat::Zero(hidden_size, hidden_size);
  for (Vec* b : {&p.b_z, &p.b_r, &p.b_h}) *b = Vec::Zero(hidden_size);
  return p;
}

void GruParams::check_shapes() const {
  const Index H = hidden_size();
  const Index D = input_size();
  bool ok = true;
  for (const Mat* w : {&w_z, &w_r, &w_h}) ok = ok && w->rows() == H && w->cols() == D;
  for (const Mat* u : {&u_z, &u_r, &u_h}) ok = ok && u->rows() == H && u->cols() == H;
  for (const Vec* b : {&b_z, &b_r, &b_h}) ok = ok && b->size() == H;
  if (!ok) throw ValidationError("GRU parameter shapes are inconsistent");
}

void NoiseSpec::validate() const {
  if (kind == NoiseKind::scaled_bernoulli && !(drop_prob >= 0.0 && drop_prob < 1.0))
    throw ValidationError("drop probability must lie in [0, 1), got " + std::to_string(drop_prob));
  if (kind == NoiseKind::gaussian && !(sigma >= 0.0 && std::isfinite(sigma)))
    throw ValidationError("noise sigma must be finite and >= 0");
}

void ModelConfig::validate() const {
  if (num_layers < 1) throw ValidationError("num_layers must be >= 1");
  if (hidden_size < 1) throw ValidationError("hidden_size must be >= 1");
  if (input_size < 1) throw ValidationError("input_size must be >= 1");
  if (num_codes < 1) throw ValidationError("num_codes must be >= 1");
  if (!(interlayer_dropout >= 0.0 && interlayer_dropout < 1.0))
    throw ValidationError("inter-layer dropout must lie in [0, 1)");
  noise.validate();
}

Vec sample_noise(const NoiseSpec& spec, Index size, Rng& rng) {
  spec.validate();
  Vec eps = Vec::Ones(size);
  if (spec.mode == Mode::eval) return eps;
  if (spec.kind == NoiseKind::scaled_bernoulli) {
    const double keep = 1.0 / (1.0 - spec.drop_prob);
    for (Index i = 0; i < size; ++i) eps[i] = uniform01(rng) < spec.drop_prob ? 0.0 : keep;
  } else {
    std::normal_distribution<double> normal(1.0, spec.sigma);
    for (Index i = 0; i < size; ++i) eps[i] = normal(rng);
  }
  return eps;
}

Vec gru_step(const GruParams& p, const Vec& x, const Vec& h_prev, GateCache* cache) {
  if (x.size() != p.input_size() || h_prev.size() != p.hidden_size())
    throw ValidationError("gru_step: input is " + std::to_string(x.size()) + "/" +
                          std::to_string(h_prev.size()) + ", layer expects " +
                          std::to_string(p.input_size()) + "/" + std::to_string(p.hidden_size()));
  Vec z = sigmoid(p.w_z * x + p.u_z * h_prev + p.b_z);
  Vec r = sigmoid(p.w_r * x + p.u_r * h_prev + p.b_r);
  Vec cand = (p.w_h * x + p.u_h * r.cwiseProduct(h_prev) + p.b_h).array().tanh().matrix();
  Vec h = (1.0 - z.array()) * h_prev.array() + z.array() * cand.array();
  if (cache) {
    cache->z = std::move(z);
    cache->r = std::move(r);
    cache->cand = std::move(cand);
  }
  return h;
}

Vec noisy_gru_step(const GruParams& p, const Vec& x, const Vec& h_prev, const Vec& eps,
                   GateCache* cache) {
  if (eps.size() != p.hidden_size()) throw ValidationError("noisy_gru_step: noise length mismatch");
  return gru_step(p, x, h_prev, cache).cwiseProduct(eps);
}

SequenceTrace forward_sequence(const ModelConfig& config, std::span<const GruParams> layers,
                               const Mat& inputs, Rng& rng, Mode mode) {
  if (static_cast<int>(layers.size()) != config.num_layers)
    throw ValidationError("forward_sequence: expected " + std::to_string(config.num_layers) +
                          " layers, got " + std::to_string(layers.size()));
  const Index T = inputs.rows();
  const Index H = config.hidden_size;
  for (std::size_t l = 0; l < layers.size(); ++l) {
    layers[l].check_shapes();
    const Index expect_in = l == 0 ? config.input_size : H;
    if (layers[l].hidden_size() != H || layers[l].input_size() != expect_in)
      throw ValidationError("forward_sequence: layer " + std::to_string(l) +
                            " does not match the model configuration");
  }
  if (inputs.cols() != config.input_size)
    throw ValidationError("forward_sequence: input width does not match the configuration");
  if (!inputs.allFinite()) throw ValidationError("forward_sequence: inputs contain missing values");

  NoiseSpec hidden_noise = config.noise;
  hidden_noise.mode = mode;
  const NoiseSpec dropout{NoiseKind::scaled_bernoulli, config.interlayer_dropout, 0.0, mode};

  SequenceTrace out;
  out.layers.resize(layers.size());
  for (std::size_t l = 0; l < layers.size(); ++l) {
    auto& lt = out.layers[l];
    lt.inputs.resize(layers[l].input_size(), T);
    for (Mat* m : {&lt.z, &lt.r, &lt.cand, &lt.eps, &lt.drop, &lt.h}) m->resize(H, T);
  }
  out.top.resize(H, T);

  std::vector<Vec> h(layers.size(), Vec::Zero(H));
  GateCache cache;
  for (Index t = 0; t < T; ++t) {
    Vec x = inputs.row(t).transpose();
    for (std::size_t l = 0; l < layers.size(); ++l) {
      auto& lt = out.layers[l];
      Vec eps = sample_noise(hidden_noise, H, rng);
      Vec mask = sample_noise(dropout, H, rng);
      lt.inputs.col(t) = x;
      h[l] = noisy_gru_step(layers[l], x, h[l], eps, &cache);
      lt.z.col(t) = cache.z;
      lt.r.col(t) = cache.r;
      lt.cand.col(t) = cache.cand;
      lt.eps.col(t) = eps;
      lt.drop.col(t) = mask;
      lt.h.col(t) = h[l];
      x = h[l].cwiseProduct(mask);
    }
    out.top.col(t) = x;
  }
  return out;
}

}  // namespace robustseq
