// SPDX-License-Identifier: Apache-2.0
#include "robustseq/cli.hpp"

#include "robustseq/data_io.hpp"
#include "robustseq/errors.hpp"
#include "robustseq/evaluation.hpp"

#include <CLI11.hpp>

#include <algorithm>
#include <cstdio>
#include <numeric>
#include <ostream>
#include <vector>

namespace robustseq {

namespace {

struct ModelFlags {
  int hidden = 64;
  int layers = 2;
  std::string noise = "bernoulli";
  double drop_prob = ModelConfig{}.noise.drop_prob;
  double sigma = 1.10;
  double dropout = 0.3;
  std::string imputation = "decay";
};

struct TrainFlags {
  int epochs = 50;
  double lr = 0.05;
  double clip = 0.25;
  double l2 = 1e-5;
  double split = 0.85;
  std::uint64_t seed = 0;
  int bptt = 0;
  int average_start = -1;
};

void add_model_flags(CLI::App* cmd, ModelFlags& f) {
  cmd->add_option("--hidden", f.hidden, "Hidden units per GRU layer")->capture_default_str();
  cmd->add_option("--layers", f.layers, "Stacked GRU layers")->capture_default_str();
  cmd->add_option("--noise", f.noise, "Hidden-state noise family")
      ->check(CLI::IsMember({"bernoulli", "gaussian"}))
      ->capture_default_str();
  cmd->add_option("--drop-prob", f.drop_prob, "Bernoulli hidden-noise drop probability")
      ->capture_default_str();
  cmd->add_option("--sigma", f.sigma, "Gaussian hidden-noise standard deviation")
      ->capture_default_str();
  cmd->add_option("--dropout", f.dropout, "Dropout between layers and before the head")
      ->capture_default_str();
  cmd->add_option("--imputation", f.imputation, "Missing-value handling")
      ->check(CLI::IsMember({"decay", "mean"}))
      ->capture_default_str();
}

void add_train_flags(CLI::App* cmd, TrainFlags& f) {
  cmd->add_option("--epochs", f.epochs, "Passes over the training split")->capture_default_str();
  cmd->add_option("--lr", f.lr, "SGD learning rate")->capture_default_str();
  cmd->add_option("--clip", f.clip, "Global gradient norm limit")->capture_default_str();
  cmd->add_option("--l2", f.l2, "L2 penalty on the output weights")->capture_default_str();
  cmd->add_option("--split", f.split, "Fraction of patients used for training")
      ->capture_default_str();
  cmd->add_option("--seed", f.seed, "Seed for split, init, shuffling and noise")
      ->capture_default_str();
  cmd->add_option("--bptt", f.bptt, "Truncated BPTT window (0 = full sequence)")
      ->capture_default_str();
  cmd->add_option("--average-start", f.average_start,
                  "First epoch (0-based) in the parameter average; -1 = last quarter")
      ->capture_default_str();
}

ModelConfig to_model_config(const ModelFlags& f) {
  ModelConfig c;
  c.hidden_size = f.hidden;
  c.num_layers = f.layers;
  c.noise.kind = parse_noise_kind(f.noise);
  c.noise.drop_prob = f.drop_prob;
  c.noise.sigma = f.sigma;
  c.interlayer_dropout = f.dropout;
  c.imputation = parse_imputation_kind(f.imputation);
  return c;
}

TrainConfig to_train_config(const TrainFlags& f) {
  TrainConfig c;
  c.epochs = f.epochs;
  c.learning_rate = f.lr;
  c.clip_norm = f.clip;
  c.l2_lambda = f.l2;
  c.split_fraction = f.split;
  c.seed = f.seed;
  c.bptt_window = f.bptt;
  c.averaging_start_epoch = f.average_start;
  c.validate();
  return c;
}

std::string fmt(const char* pattern, double v) {
  char buf[64];
  std::snprintf(buf, sizeof buf, pattern, v);
  return buf;
}

}  // namespace

int run_cli(int argc, const char* const* argv, std::ostream& out, std::ostream& err) {
  CLI::App app{"Robust GRU with decay imputation and hidden-state noise"};
  app.require_subcommand(1);

  // gen
  GenConfig gen;
  std::string gen_out;
  auto* gen_cmd = app.add_subcommand("gen", "Generate a synthetic cohort file");
  gen_cmd->add_option("--patients", gen.num_patients)->capture_default_str();
  gen_cmd->add_option("--vars", gen.num_vars)->capture_default_str();
  gen_cmd->add_option("--codes", gen.num_codes)->capture_default_str();
  gen_cmd->add_option("--states", gen.num_states)->capture_default_str();
  gen_cmd->add_option("--min-visits", gen.min_visits)->capture_default_str();
  gen_cmd->add_option("--max-visits", gen.max_visits)->capture_default_str();
  gen_cmd->add_option("--missing", gen.missing_rate, "Base missing rate")->capture_default_str();
  gen_cmd->add_option("--mnar", gen.mnar_strength, "Missing-not-at-random strength")
      ->capture_default_str();
  gen_cmd->add_option("--persistence", gen.persistence, "Probability of keeping the latent state")
      ->capture_default_str();
  gen_cmd->add_option("--emission-sd", gen.emission_sd, "Within-state spread of each variable")
      ->capture_default_str();
  gen_cmd->add_option("--label-noise", gen.label_noise, "Code indicator flip probability")
      ->capture_default_str();
  gen_cmd->add_option("--seed", gen.seed)->capture_default_str();
  gen_cmd->add_option("--out", gen_out, "Output cohort file (JSON lines)")->required();

  // train
  ModelFlags model_flags;
  TrainFlags train_flags;
  std::string train_data, train_out, history_out;
  auto* train_cmd = app.add_subcommand("train", "Train a model on a cohort file");
  train_cmd->add_option("--data", train_data, "Cohort file")->required();
  train_cmd->add_option("--out", train_out, "Checkpoint to write")->required();
  train_cmd->add_option("--history", history_out, "Loss history file (default: <out>.history)");
  add_model_flags(train_cmd, model_flags);
  add_train_flags(train_cmd, train_flags);

  // eval
  std::string eval_model, eval_data, eval_out, eval_ties = "ge";
  std::vector<int> eval_ks(std::begin(kDefaultRecallKs), std::end(kDefaultRecallKs));
  bool eval_heldout = false;
  auto* eval_cmd = app.add_subcommand("eval", "Score a cohort with a checkpoint");
  eval_cmd->add_option("--model", eval_model, "Checkpoint")->required();
  eval_cmd->add_option("--data", eval_data, "Cohort file")->required();
  eval_cmd->add_option("--topk", eval_ks, "Recall cut-offs")->capture_default_str();
  eval_cmd->add_flag("--heldout", eval_heldout,
                     "Score only the test split recorded in the checkpoint");
  eval_cmd->add_option("--ties", eval_ties, "AUC tie rule: ge (tie counts) or half")
      ->check(CLI::IsMember({"ge", "half"}))
      ->capture_default_str();
  eval_cmd->add_option("--out", eval_out, "Also write the report as JSON");

  // predict
  std::string pred_model, pred_data, pred_patient, pred_out;
  int pred_topk = 0;
  auto* pred_cmd = app.add_subcommand("predict", "Rank next-visit codes for one patient");
  pred_cmd->add_option("--model", pred_model, "Checkpoint")->required();
  pred_cmd->add_option("--data", pred_data, "Cohort file holding the patient")->required();
  pred_cmd->add_option("--patient", pred_patient, "patient_id (default: first record)");
  pred_cmd->add_option("--topk", pred_topk, "Rows to list (0 = all codes)")->capture_default_str();
  pred_cmd->add_option("--out", pred_out, "Write the listing to a file instead of stdout");

  // gradcheck
  std::uint64_t gc_seed = 1;
  double gc_tol = 1e-4, gc_step = 1e-5, gc_l2 = 1e-3;
  ModelFlags gc_flags;
  gc_flags.drop_prob = 0.3;
  auto* gc_cmd = app.add_subcommand("gradcheck", "Finite-difference check of the analytic gradients");
  gc_cmd->add_option("--seed", gc_seed)->capture_default_str();
  gc_cmd->add_option("--tol", gc_tol, "Maximum accepted relative error")->capture_default_str();
  gc_cmd->add_option("--step", gc_step, "Central difference step")->capture_default_str();
  gc_cmd->add_option("--l2", gc_l2)->capture_default_str();
  gc_cmd->add_option("--noise", gc_flags.noise)
      ->check(CLI::IsMember({"bernoulli", "gaussian"}))
      ->capture_default_str();
  gc_cmd->add_option("--drop-prob", gc_flags.drop_prob)->capture_default_str();
  gc_cmd->add_option("--sigma", gc_flags.sigma)->capture_default_str();
  gc_cmd->add_option("--dropout", gc_flags.dropout)->capture_default_str();

  // sweep
  ModelFlags sweep_model;
  TrainFlags sweep_train;
  std::string sweep_data, sweep_out;
  auto* sweep_cmd = app.add_subcommand(
      "sweep", "Train one model per noise setting and tabulate held-out metrics");
  sweep_cmd->add_option("--data", sweep_data, "Cohort file")->required();
  sweep_cmd->add_option("--out", sweep_out, "Write the table to a file instead of stdout");
  add_model_flags(sweep_cmd, sweep_model);
  add_train_flags(sweep_cmd, sweep_train);

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int code = app.exit(e, out, err);
    return code == 0 ? 0 : 1;
  }

  try {
    if (*gen_cmd) {
      const auto cohort = generate_cohort(gen);
      save_cohort(cohort.series, gen_out);
      out << "wrote " << cohort.series.size() << " patients to " << gen_out << '\n';
    } else if (*train_cmd) {
      const auto cohort = load_cohort(train_data);
      ModelConfig mc = to_model_config(model_flags);
      TrainConfig tc = to_train_config(train_flags);
      mc.seed = tc.seed;
      const TrainResult result = train(cohort, mc, tc);
      save_checkpoint(result.state, train_out, tc);
      if (history_out.empty()) history_out = train_out + ".history";
      write_file(history_out, format_loss_history(result.loss_history));
      out << "epochs " << result.loss_history.size() << '\n'
          << "first_epoch_loss " << fmt("%.6f", result.loss_history.front()) << '\n'
          << "final_epoch_loss " << fmt("%.6f", result.loss_history.back()) << '\n'
          << "checkpoint " << train_out << '\n'
          << "history " << history_out << '\n';
    } else if (*eval_cmd) {
      const Checkpoint ckpt = load_checkpoint_full(eval_model);
      auto cohort = load_cohort(eval_data);
      if (eval_heldout) {
        if (!ckpt.train_config)
          throw ValidationError("--heldout needs a checkpoint that records its train_config");
        auto ids = split_indices(cohort.size(), ckpt.train_config->split_fraction,
                                 ckpt.train_config->seed)
                       .second;
        cohort = select(cohort, ids);
      }
      const auto ties = eval_ties == "half" ? TiePolicy::half : TiePolicy::positive_wins;
      const EvalReport report = evaluate(ckpt.state, cohort, eval_ks, ties);
      out << report.to_text();
      if (!eval_out.empty()) write_file(eval_out, report.to_json().dump(2) + "\n");
    } else if (*pred_cmd) {
      const ModelState state = load_checkpoint(pred_model);
      const auto cohort = load_cohort(pred_data);
      if (cohort.empty()) throw ValidationError("cohort file holds no patients");
      auto it = cohort.begin();
      if (!pred_patient.empty()) {
        it = std::find_if(cohort.begin(), cohort.end(),
                          [&](const VisitSeries& s) { return s.patient_id == pred_patient; });
        if (it == cohort.end()) throw ValidationError("patient '" + pred_patient + "' not found");
      }
      validate_series(*it);
      const Vec probs = predict_next(state, *it);
      std::vector<Index> order(static_cast<std::size_t>(probs.size()));
      std::iota(order.begin(), order.end(), Index{0});
      std::stable_sort(order.begin(), order.end(),
                       [&](Index a, Index b) { return probs[a] > probs[b]; });
      const std::size_t rows =
          pred_topk > 0 ? std::min<std::size_t>(pred_topk, order.size()) : order.size();
      std::string listing = "patient " + it->patient_id + "\nrank\tcode\tprobability\n";
      for (std::size_t r = 0; r < rows; ++r)
        listing += std::to_string(r + 1) + "\t" + std::to_string(order[r]) + "\t" +
                   fmt("%.6f", probs[order[r]]) + "\n";
      if (pred_out.empty())
        out << listing;
      else
        write_file(pred_out, listing);
    } else if (*gc_cmd) {
      ModelConfig noise_cfg = to_model_config(gc_flags);
      const auto problem = make_gradcheck_problem(gc_seed, noise_cfg.noise, gc_flags.dropout);
      const auto report = gradient_check(problem.state, problem.series, gc_seed, gc_l2, gc_step);
      out << "entries_checked " << report.entries_checked << '\n'
          << "max_relative_error " << fmt("%.3e", report.max_relative_error) << '\n'
          << "worst_tensor " << report.worst_tensor << '\n';
      if (!(report.max_relative_error < gc_tol)) {
        err << "gradient check failed: " << report.max_relative_error << " >= " << gc_tol << '\n';
        return 2;
      }
    } else if (*sweep_cmd) {
      const auto cohort = load_cohort(sweep_data);
      ModelConfig mc = to_model_config(sweep_model);
      TrainConfig tc = to_train_config(sweep_train);
      mc.seed = tc.seed;
      const auto settings = default_noise_settings();
      const auto rows = noise_sweep(cohort, mc, tc, settings);
      const std::string table = format_sweep_table(rows);
      if (sweep_out.empty())
        out << table;
      else
        write_file(sweep_out, table);
    }
  } catch (const ValidationError& e) {
    err << "error: " << e.what() << '\n';
    return 1;
  } catch (const UndefinedMetricError& e) {
    err << "error: " << e.what() << '\n';
    return 1;
  } catch (const std::exception& e) {
    err << "failure: " << e.what() << '\n';
    return 2;
  }
  return 0;
}

}  // namespace robustseq
