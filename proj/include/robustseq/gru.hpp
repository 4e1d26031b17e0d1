// SPDX-License-Identifier: Apache-2.0
#pragma once

#include "robustseq/rng.hpp"
#include "robustseq/types.hpp"

#include <cstdint>
#include <span>
#include <string_view>
#include <vector>

namespace robustseq {

/// Weights of one GRU layer. W_* map the layer input, U_* the previous hidden
/// state.
struct GruParams {
  Mat w_z, w_r, w_h;  // H x D_in
  Mat u_z, u_r, u_h;  // H x H
  Vec b_z, b_r, b_h;  // H

  static GruParams zeros(Index input_size, Index hidden_size);
  Index input_size() const { return w_z.cols(); }
  Index hidden_size() const { return w_z.rows(); }
  void check_shapes() const;
};

enum class NoiseKind { scaled_bernoulli, gaussian };
enum class Mode { train, eval };
enum class ImputationKind { decay, mean };

std::string_view to_string(NoiseKind kind);
NoiseKind parse_noise_kind(std::string_view text);
std::string_view to_string(ImputationKind kind);
ImputationKind parse_imputation_kind(std::string_view text);

/// Multiplicative mean-1 noise applied to hidden states.
///
/// scaled_bernoulli: each unit is 0 with probability drop_prob and
/// 1 / (1 - drop_prob) otherwise. gaussian: each unit ~ N(1, sigma^2).
/// In eval mode every draw is exactly 1.
struct NoiseSpec {
  NoiseKind kind = NoiseKind::scaled_bernoulli;
  double drop_prob = 0.1;
  double sigma = 0.0;
  Mode mode = Mode::train;

  void validate() const;
};

struct ModelConfig {
  int num_layers = 2;
  int hidden_size = 64;
  int input_size = 0;
  int num_codes = 0;
  double interlayer_dropout = 0.3;
  NoiseSpec noise;
  ImputationKind imputation = ImputationKind::decay;
  std::uint64_t seed = 0;

  void validate() const;
};

Vec sample_noise(const NoiseSpec& spec, Index size, Rng& rng);

struct GateCache {
  Vec z, r, cand;
};

/// One GRU transition. `cache`, when given, receives the gate activations.
Vec gru_step(const GruParams& p, const Vec& x, const Vec& h_prev, GateCache* cache = nullptr);

/// GRU transition whose output is multiplied by `eps`; both branches of the
/// convex combination share the factor, so this equals eps * gru_step.
Vec noisy_gru_step(const GruParams& p, const Vec& x, const Vec& h_prev, const Vec& eps,
                   GateCache* cache = nullptr);

/// Per-layer activations for a whole sequence. Matrices are stored one
/// column per step.
struct LayerTrace {
  Mat inputs;  // D_in x T, after inter-layer dropout
  Mat z, r, cand;
  Mat eps;   // H x T, hidden-state noise
  Mat drop;  // H x T, dropout mask applied on the way to the next layer / head
  Mat h;     // H x T, noisy hidden state (the recurrent carry)
};

struct SequenceTrace {
  std::vector<LayerTrace> layers;
  Mat top;  // H x T, top hidden state after dropout, fed to the head
};

/// Runs the stacked noisy GRU over `inputs` (T x D, already imputed) with
/// h_0 = 0 in every layer.
///
/// Train mode draws, for each step and then each layer, the hidden noise
/// vector followed by the inter-layer dropout mask for that layer's output.
/// Eval mode draws nothing and uses all-ones factors.
SequenceTrace forward_sequence(const ModelConfig& config, std::span<const GruParams> layers,
                               const Mat& inputs, Rng& rng, Mode mode);

}  // namespace robustseq
