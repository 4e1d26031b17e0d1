// SPDX-License-Identifier: Apache-2.0
#pragma once

#include "robustseq/model.hpp"
#include "robustseq/training.hpp"

#include <cstdint>
#include <filesystem>
#include <optional>
#include <span>
#include <string>
#include <utility>
#include <vector>

namespace robustseq {

/// Synthetic cohort settings.
///
/// Each patient follows a latent Markov chain over `num_states` conditions.
/// The state sets the Gaussian mean of every variable and the set of active
/// codes; a cell goes missing with probability
/// 1 - (1 - missing_rate) * exp(-mnar_strength * |value|), so large values
/// are hidden more often when mnar_strength > 0.
struct GenConfig {
  int num_patients = 200;
  int num_vars = 20;
  int num_codes = 10;
  int min_visits = 4;
  int max_visits = 16;
  int num_states = 4;
  double missing_rate = 0.3;
  double mnar_strength = 0.5;
  double persistence = 0.97;   // probability of keeping the state between visits
  double emission_sd = 1.5;    // within-state spread of each variable
  double label_noise = 0.005;  // probability of flipping each code indicator
  double mean_gap_hours = 1.0; // visit gaps are 0.25 h plus an exponential draw
  std::uint64_t seed = 0;

  void validate() const;
};

/// A generated cohort together with the generator's ground truth.
struct GeneratedCohort {
  std::vector<VisitSeries> series;
  Mat state_means;  // K x D
  Mat code_probs;   // K x C, P(code active | state)
};

GeneratedCohort generate_cohort(const GenConfig& gen);

/// Scores of the label-given-latent-state oracle for every visit of every
/// series (needs latent_states), stacked with the matching labels.
std::pair<Mat, Mat> latent_oracle_scores(const GeneratedCohort& truth);

/// Newline-delimited JSON, one patient per line:
///   {"patient_id": ..., "num_vars": D, "num_codes": C,
///    "visits": [{"time_hours": h, "observations": {"<var>": value, ...}}, ...],
///    "labels": [[code, ...], ...], "latent_states": [k, ...]}
/// Absent observation keys are missing cells; "latent_states" is optional.
void save_cohort(std::span<const VisitSeries> cohort, const std::filesystem::path& path);
std::vector<VisitSeries> load_cohort(const std::filesystem::path& path);

/// Parses one record; `line` is only used in error messages.
VisitSeries parse_cohort_record(const std::string& text, std::size_t line);
std::string format_cohort_record(const VisitSeries& series);

/// Seeded shuffle of 0..n-1 split into a prefix of round(fraction * n)
/// training indices and the remaining test indices.
std::pair<std::vector<std::size_t>, std::vector<std::size_t>> split_indices(
    std::size_t n, double fraction, std::uint64_t seed);

std::pair<std::vector<VisitSeries>, std::vector<VisitSeries>> split_cohort(
    std::span<const VisitSeries> cohort, double fraction, std::uint64_t seed);

inline constexpr int kCheckpointVersion = 1;

struct Checkpoint {
  ModelState state;
  std::optional<TrainConfig> train_config;
};

/// Single JSON document:
///   {"format_version": 1, "model_config": {...}, "train_config": {...},
///    "step_count": n,
///    "tensors": {name: {"dims": [...], "values": [row-major...]}}}
/// Doubles are written in shortest round-trip form, so reloading is exact.
std::string checkpoint_to_string(const ModelState& state,
                                 const std::optional<TrainConfig>& train_config = std::nullopt);
Checkpoint checkpoint_from_string(const std::string& text);

void save_checkpoint(const ModelState& state, const std::filesystem::path& path,
                     const std::optional<TrainConfig>& train_config = std::nullopt);
ModelState load_checkpoint(const std::filesystem::path& path);
Checkpoint load_checkpoint_full(const std::filesystem::path& path);

/// "epoch<TAB>mean_loss" per line, epochs counted from 1.
std::string format_loss_history(std::span<const double> history);

std::string read_file(const std::filesystem::path& path);
/// Writes through a temporary file in the same directory, then renames.
void write_file(const std::filesystem::path& path, const std::string& contents);

}  // namespace robustseq
