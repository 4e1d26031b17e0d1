// SPDX-License-Identifier: Apache-2.0
#include "robustseq/model.hpp"

#include "robustseq/errors.hpp"

namespace robustseq {

Parameters Parameters::zeros(const ModelConfig& config) {
  Parameters p;
  p.decay = DecayParams::zeros(config.input_size);
  for (int l = 0; l < config.num_layers; ++l)
    p.layers.push_back(
        GruParams::zeros(l == 0 ? config.input_size : config.hidden_size, config.hidden_size));
  p.head = HeadParams::zeros(config.num_codes, config.hidden_size);
  return p;
}

std::vector<TensorView> tensor_views(Parameters& params) {
  std::vector<TensorView> views;
  auto add_mat = [&](std::string name, Mat& m) {
    views.push_back({std::move(name), m.data(), m.rows(), m.cols(), false});
  };
  auto add_vec = [&](std::string name, Vec& v) {
    views.push_back({std::move(name), v.data(), v.size(), 1, true});
  };
  add_vec("decay.w_gamma", params.decay.w_gamma);
  add_vec("decay.b_gamma", params.decay.b_gamma);
  for (std::size_t l = 0; l < params.layers.size(); ++l) {
    auto& g = params.layers[l];
    const std::string p = "gru" + std::to_string(l) + ".";
    add_mat(p + "w_z", g.w_z);
    add_mat(p + "w_r", g.w_r);
    add_mat(p + "w_h", g.w_h);
    add_mat(p + "u_z", g.u_z);
    add_mat(p + "u_r", g.u_r);
    add_mat(p + "u_h", g.u_h);
    add_vec(p + "b_z", g.b_z);
    add_vec(p + "b_r", g.b_r);
    add_vec(p + "b_h", g.b_h);
  }
  add_mat("head.w_code", params.head.w_code);
  add_vec("head.b_code", params.head.b_code);
  return views;
}

ModelForward model_forward(const ModelState& state, const VisitSeries& series, Rng& rng,
                           Mode mode) {
  const auto& cfg = state.config;
  if (series.num_vars() != cfg.input_size)
    throw ValidationError("series '" + series.patient_id + "' has " +
                          std::to_string(series.num_vars()) + " variables, model expects " +
                          std::to_string(cfg.input_size));
  ModelForward out;
  out.imputation = impute_with_trace(series, state.params.decay, state.means);
  if (cfg.imputation == ImputationKind::mean) {
    out.imputation.inputs = impute_with_means(series, state.means);
    out.imputation.gammas.setOnes();
  }
  out.trace = forward_sequence(cfg, state.params.layers, out.imputation.inputs, rng, mode);

  const auto& head = state.params.head;
  Mat logits = (head.w_code * out.trace.top).colwise() + head.b_code;
  out.probs = (1.0 + (-logits.array()).exp()).inverse().matrix().transpose();
  return out;
}

Mat predict_sequence(const ModelState& state, const VisitSeries& series) {
  Rng unused(0);
  return model_forward(state, series, unused, Mode::eval).probs;
}

Vec predict_next(const ModelState& state, const VisitSeries& series) {
  Mat probs = predict_sequence(state, series);
  return probs.row(probs.rows() - 1).transpose();
}

}  // namespace robustseq
