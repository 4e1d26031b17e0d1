// SPDX-License-Identifier: Apache-2.0
#include "robustseq/data_io.hpp"

#include "robustseq/errors.hpp"

#include <json.hpp>

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <numeric>
#include <random>
#include <sstream>

namespace robustseq {

using nlohmann::json;
using ojson = nlohmann::ordered_json;

// ---------------------------------------------------------------------------
// Generation

void GenConfig::validate() const {
  if (num_patients < 1) throw ValidationError("num_patients must be >= 1");
  if (num_vars < 1 || num_codes < 1) throw ValidationError("num_vars and num_codes must be >= 1");
  if (min_visits < 2) throw ValidationError("min_visits must be >= 2");
  if (max_visits < min_visits) throw ValidationError("max_visits must be >= min_visits");
  if (num_states < 1) throw ValidationError("num_states must be >= 1");
  if (!(missing_rate >= 0.0 && missing_rate < 1.0))
    throw ValidationError("missing_rate must lie in [0, 1)");
  if (!(mnar_strength >= 0.0)) throw ValidationError("mnar_strength must be >= 0");
  if (!(persistence >= 0.0 && persistence <= 1.0))
    throw ValidationError("persistence must lie in [0, 1]");
  if (!(emission_sd >= 0.0)) throw ValidationError("emission_sd must be >= 0");
  if (!(label_noise >= 0.0 && label_noise < 0.5))
    throw ValidationError("label_noise must lie in [0, 0.5)");
  if (!(mean_gap_hours > 0.0)) throw ValidationError("mean_gap_hours must be > 0");
}

GeneratedCohort generate_cohort(const GenConfig& gen) {
  gen.validate();
  const int K = gen.num_states;
  const int D = gen.num_vars;
  const int C = gen.num_codes;
  std::normal_distribution<double> normal(0.0, 1.0);

  GeneratedCohort out;
  {
    Rng rng = make_stream(gen.seed, {0});
    out.state_means.resize(K, D);
    for (int k = 0; k < K; ++k)
      for (int d = 0; d < D; ++d) out.state_means(k, d) = normal(rng);
    out.code_probs.resize(K, C);
    for (int k = 0; k < K; ++k) {
      std::vector<bool> active(C);
      int count = 0;
      for (int c = 0; c < C; ++c) {
        active[c] = uniform01(rng) < 0.3;
        count += active[c];
      }
      if (count == 0) active[static_cast<std::size_t>(k % C)] = true;
      for (int c = 0; c < C; ++c)
        out.code_probs(k, c) = active[c] ? 1.0 - gen.label_noise : gen.label_noise;
    }
  }

  out.series.resize(gen.num_patients);
  for (int i = 0; i < gen.num_patients; ++i) {
    Rng rng = make_stream(gen.seed, {1, static_cast<std::uint64_t>(i)});
    const int T = gen.min_visits +
                  static_cast<int>(uniform01(rng) * (gen.max_visits - gen.min_visits + 1));
    auto& s = out.series[i];
    char id[32];
    std::snprintf(id, sizeof id, "p%06d", i);
    s.patient_id = id;
    s.values = Mat::Constant(T, D, kMissing);
    s.mask = Mat::Zero(T, D);
    s.labels = Mat::Zero(T, C);

    int state = static_cast<int>(uniform01(rng) * K);
    double time = 0.0;
    for (int t = 0; t < T; ++t) {
      if (t > 0) {
        time += 0.25 - gen.mean_gap_hours * std::log(1.0 - uniform01(rng));
        if (K > 1 && uniform01(rng) >= gen.persistence) {
          const int shift = 1 + static_cast<int>(uniform01(rng) * (K - 1));
          state = (state + shift) % K;
        }
      }
      s.timestamps.push_back(time);
      s.latent_states.push_back(state);
      for (int d = 0; d < D; ++d) {
        const double value = out.state_means(state, d) + gen.emission_sd * normal(rng);
        const double p_missing =
            1.0 - (1.0 - gen.missing_rate) * std::exp(-gen.mnar_strength * std::abs(value));
        if (uniform01(rng) >= p_missing) {
          s.values(t, d) = value;
          s.mask(t, d) = 1.0;
        }
      }
      for (int c = 0; c < C; ++c)
        s.labels(t, c) = uniform01(rng) < out.code_probs(state, c) ? 1.0 : 0.0;
    }
  }
  return out;
}

std::pair<Mat, Mat> latent_oracle_scores(const GeneratedCohort& truth) {
  Index rows = 0;
  for (const auto& s : truth.series) {
    if (static_cast<Index>(s.latent_states.size()) != s.length())
      throw ValidationError("latent_oracle_scores: series '" + s.patient_id +
                            "' has no latent states");
    rows += s.length();
  }
  const Index C = truth.code_probs.cols();
  Mat scores(rows, C), labels(rows, C);
  Index at = 0;
  for (const auto& s : truth.series)
    for (Index t = 0; t < s.length(); ++t, ++at) {
      scores.row(at) = truth.code_probs.row(s.latent_states[t]);
      labels.row(at) = s.labels.row(t);
    }
  return {scores, labels};
}

// ---------------------------------------------------------------------------
// Cohort files

std::string format_cohort_record(const VisitSeries& s) {
  ojson rec;
  rec["patient_id"] = s.patient_id;
  rec["num_vars"] = s.num_vars();
  rec["num_codes"] = s.num_codes();
  ojson visits = ojson::array();
  ojson labels = ojson::array();
  for (Index t = 0; t < s.length(); ++t) {
    ojson obs = ojson::object();
    for (Index d = 0; d < s.num_vars(); ++d)
      if (s.mask(t, d) == 1.0) obs[std::to_string(d)] = s.values(t, d);
    visits.push_back({{"time_hours", s.timestamps[t]}, {"observations", std::move(obs)}});
    ojson active = ojson::array();
    for (Index c = 0; c < s.num_codes(); ++c)
      if (s.labels(t, c) == 1.0) active.push_back(c);
    labels.push_back(std::move(active));
  }
  rec["visits"] = std::move(visits);
  rec["labels"] = std::move(labels);
  if (!s.latent_states.empty()) rec["latent_states"] = s.latent_states;
  return rec.dump();
}

VisitSeries parse_cohort_record(const std::string& text, std::size_t line) {
  std::string pid = "?";
  auto fail = [&](const std::string& what) -> FormatError {
    return FormatError("line " + std::to_string(line) + " (patient " + pid + "): " + what);
  };
  json rec;
  try {
    rec = json::parse(text);
  } catch (const json::exception& e) {
    throw fail(std::string("malformed JSON: ") + e.what());
  }
  VisitSeries s;
  try {
    if (!rec.is_object()) throw fail("record is not an object");
    if (rec.contains("patient_id")) pid = rec.at("patient_id").get<std::string>();
    s.patient_id = pid;
    const auto D = rec.at("num_vars").get<Index>();
    const auto C = rec.at("num_codes").get<Index>();
    if (D < 1 || C < 1) throw fail("num_vars and num_codes must be positive");
    const auto& visits = rec.at("visits");
    const auto& labels = rec.at("labels");
    if (!visits.is_array() || visits.empty()) throw fail("'visits' must be a non-empty array");
    if (!labels.is_array() || labels.size() != visits.size())
      throw fail("'labels' must have one entry per visit");
    const auto T = static_cast<Index>(visits.size());
    s.values = Mat::Constant(T, D, kMissing);
    s.mask = Mat::Zero(T, D);
    s.labels = Mat::Zero(T, C);
    for (Index t = 0; t < T; ++t) {
      const auto& v = visits[static_cast<std::size_t>(t)];
      const double time = v.at("time_hours").get<double>();
      if (!std::isfinite(time)) throw fail("non-finite time_hours");
      if (t > 0 && time < s.timestamps.back())
        throw ValidationError("line " + std::to_string(line) + " (patient " + pid +
                              "): visit times decrease at visit " + std::to_string(t));
      s.timestamps.push_back(time);
      for (const auto& [key, value] : v.at("observations").items()) {
        Index d = -1;
        std::size_t used = 0;
        try {
          d = std::stoll(key, &used);
        } catch (const std::exception&) {
        }
        if (used != key.size() || d < 0)
          throw fail("observation key '" + key + "' is not a variable index");
        if (d >= D)
          throw ValidationError("line " + std::to_string(line) + " (patient " + pid +
                                "): variable index " + key + " out of range for " +
                                std::to_string(D) + " variables");
        const double x = value.get<double>();
        if (!std::isfinite(x)) throw fail("non-finite observation value");
        s.values(t, d) = x;
        s.mask(t, d) = 1.0;
      }
      for (const auto& code : labels[static_cast<std::size_t>(t)]) {
        const auto c = code.get<Index>();
        if (c < 0 || c >= C)
          throw ValidationError("line " + std::to_string(line) + " (patient " + pid +
                                "): code index " + std::to_string(c) + " out of range for " +
                                std::to_string(C) + " codes");
        s.labels(t, c) = 1.0;
      }
    }
    if (rec.contains("latent_states")) {
      s.latent_states = rec.at("latent_states").get<std::vector<int>>();
      if (static_cast<Index>(s.latent_states.size()) != T)
        throw fail("'latent_states' must have one entry per visit");
    }
  } catch (const json::exception& e) {
    throw fail(e.what());
  }
  return s;
}

void save_cohort(std::span<const VisitSeries> cohort, const std::filesystem::path& path) {
  std::string out;
  for (const auto& s : cohort) {
    out += format_cohort_record(s);
    out += '\n';
  }
  write_file(path, out);
}

std::vector<VisitSeries> load_cohort(const std::filesystem::path& path) {
  std::istringstream in(read_file(path));
  std::vector<VisitSeries> cohort;
  std::string text;
  std::size_t line = 0;
  while (std::getline(in, text)) {
    ++line;
    if (text.find_first_not_of(" \t\r") == std::string::npos) continue;
    cohort.push_back(parse_cohort_record(text, line));
  }
  return cohort;
}

std::pair<std::vector<std::size_t>, std::vector<std::size_t>> split_indices(
    std::size_t n, double fraction, std::uint64_t seed) {
  if (!(fraction > 0.0 && fraction < 1.0))
    throw ValidationError("split fraction must lie in (0, 1)");
  const auto n_train = static_cast<std::size_t>(std::llround(fraction * static_cast<double>(n)));
  if (n_train == 0 || n_train >= n)
    throw ValidationError("split of " + std::to_string(n) + " patients at fraction " +
                          std::to_string(fraction) + " leaves one side empty");
  std::vector<std::size_t> ids(n);
  std::iota(ids.begin(), ids.end(), std::size_t{0});
  Rng rng = make_stream(seed, {0x5B117});
  std::shuffle(ids.begin(), ids.end(), rng);
  std::vector<std::size_t> train(ids.begin(), ids.begin() + static_cast<std::ptrdiff_t>(n_train));
  std::vector<std::size_t> test(ids.begin() + static_cast<std::ptrdiff_t>(n_train), ids.end());
  return {train, test};
}

std::pair<std::vector<VisitSeries>, std::vector<VisitSeries>> split_cohort(
    std::span<const VisitSeries> cohort, double fraction, std::uint64_t seed) {
  auto [train_ids, test_ids] = split_indices(cohort.size(), fraction, seed);
  std::pair<std::vector<VisitSeries>, std::vector<VisitSeries>> out;
  for (auto i : train_ids) out.first.push_back(cohort[i]);
  for (auto i : test_ids) out.second.push_back(cohort[i]);
  return out;
}

// ---------------------------------------------------------------------------
// Checkpoints

namespace {

ojson model_config_to_json(const ModelConfig& c) {
  ojson j;
  j["num_layers"] = c.num_layers;
  j["hidden_size"] = c.hidden_size;
  j["input_size"] = c.input_size;
  j["num_codes"] = c.num_codes;
  j["interlayer_dropout"] = c.interlayer_dropout;
  j["noise"] = {{"kind", std::string(to_string(c.noise.kind))},
                {"drop_prob", c.noise.drop_prob},
                {"sigma", c.noise.sigma}};
  j["imputation"] = std::string(to_string(c.imputation));
  j["seed"] = c.seed;
  return j;
}

ModelConfig model_config_from_json(const json& j) {
  ModelConfig c;
  c.num_layers = j.at("num_layers").get<int>();
  c.hidden_size = j.at("hidden_size").get<int>();
  c.input_size = j.at("input_size").get<int>();
  c.num_codes = j.at("num_codes").get<int>();
  c.interlayer_dropout = j.at("interlayer_dropout").get<double>();
  const auto& n = j.at("noise");
  c.noise.kind = parse_noise_kind(n.at("kind").get<std::string>());
  c.noise.drop_prob = n.at("drop_prob").get<double>();
  c.noise.sigma = n.at("sigma").get<double>();
  c.imputation = parse_imputation_kind(j.at("imputation").get<std::string>());
  c.seed = j.at("seed").get<std::uint64_t>();
  c.validate();
  return c;
}

ojson train_config_to_json(const TrainConfig& c) {
  ojson j;
  j["epochs"] = c.epochs;
  j["learning_rate"] = c.learning_rate;
  j["clip_norm"] = c.clip_norm;
  j["l2_lambda"] = c.l2_lambda;
  j["averaging_start_epoch"] = c.averaging_start();
  j["split_fraction"] = c.split_fraction;
  j["seed"] = c.seed;
  j["bptt_window"] = c.bptt_window;
  return j;
}

TrainConfig train_config_from_json(const json& j) {
  TrainConfig c;
  c.epochs = j.at("epochs").get<int>();
  c.learning_rate = j.at("learning_rate").get<double>();
  c.clip_norm = j.at("clip_norm").get<double>();
  c.l2_lambda = j.at("l2_lambda").get<double>();
  c.averaging_start_epoch = j.at("averaging_start_epoch").get<int>();
  c.split_fraction = j.at("split_fraction").get<double>();
  c.seed = j.at("seed").get<std::uint64_t>();
  c.bptt_window = j.at("bptt_window").get<int>();
  c.validate();
  return c;
}

ojson tensor_to_json(const TensorView& v) {
  ojson dims = v.is_vector ? ojson::array({v.rows}) : ojson::array({v.rows, v.cols});
  ojson values = ojson::array();
  for (Index i = 0; i < v.rows; ++i)
    for (Index j = 0; j < v.cols; ++j) values.push_back(v.data[j * v.rows + i]);
  return {{"dims", std::move(dims)}, {"values", std::move(values)}};
}

void tensor_from_json(const json& tensors, const TensorView& v) {
  if (!tensors.contains(v.name)) throw FormatError("checkpoint is missing tensor '" + v.name + "'");
  const auto& t = tensors.at(v.name);
  const auto dims = t.at("dims").get<std::vector<Index>>();
  const std::vector<Index> expect =
      v.is_vector ? std::vector<Index>{v.rows} : std::vector<Index>{v.rows, v.cols};
  if (dims != expect) {
    std::ostringstream os;
    os << "tensor '" << v.name << "' has dims [";
    for (std::size_t i = 0; i < dims.size(); ++i) os << (i ? "," : "") << dims[i];
    os << "] but the model configuration implies [";
    for (std::size_t i = 0; i < expect.size(); ++i) os << (i ? "," : "") << expect[i];
    os << "]";
    throw FormatError(os.str());
  }
  const auto& values = t.at("values");
  if (!values.is_array() || static_cast<Index>(values.size()) != v.size())
    throw FormatError("tensor '" + v.name + "' holds " + std::to_string(values.size()) +
                      " values, expected " + std::to_string(v.size()));
  std::size_t k = 0;
  for (Index i = 0; i < v.rows; ++i)
    for (Index j = 0; j < v.cols; ++j) {
      const auto& x = values[k++];
      if (!x.is_number()) throw FormatError("tensor '" + v.name + "' holds a non-numeric value");
      v.data[j * v.rows + i] = x.get<double>();
    }
}

}  // namespace

std::string checkpoint_to_string(const ModelState& state,
                                 const std::optional<TrainConfig>& train_config) {
  ojson doc;
  doc["format_version"] = kCheckpointVersion;
  doc["model_config"] = model_config_to_json(state.config);
  if (train_config) doc["train_config"] = train_config_to_json(*train_config);
  doc["step_count"] = state.step_count;
  ojson tensors = ojson::object();
  Parameters params = state.params;
  for (const auto& v : tensor_views(params)) tensors[v.name] = tensor_to_json(v);
  Vec means = state.means.means;
  tensors["means"] = tensor_to_json({"means", means.data(), means.size(), 1, true});
  doc["tensors"] = std::move(tensors);
  return doc.dump() + "\n";
}

Checkpoint checkpoint_from_string(const std::string& text) {
  json doc;
  try {
    doc = json::parse(text);
  } catch (const json::exception& e) {
    throw FormatError(std::string("checkpoint is not valid JSON: ") + e.what());
  }
  Checkpoint out;
  try {
    if (!doc.is_object() || !doc.contains("format_version"))
      throw FormatError("checkpoint has no format_version");
    const int version = doc.at("format_version").get<int>();
    if (version != kCheckpointVersion)
      throw VersionError("checkpoint format_version " + std::to_string(version) +
                         " is not supported (expected " + std::to_string(kCheckpointVersion) + ")");
    auto& state = out.state;
    state.config = model_config_from_json(doc.at("model_config"));
    if (doc.contains("train_config")) out.train_config = train_config_from_json(doc.at("train_config"));
    state.step_count = doc.value("step_count", std::uint64_t{0});
    state.params = Parameters::zeros(state.config);
    const auto& tensors = doc.at("tensors");
    for (const auto& v : tensor_views(state.params)) tensor_from_json(tensors, v);
    state.means.means = Vec::Zero(state.config.input_size);
    tensor_from_json(tensors, {"means", state.means.means.data(), state.means.means.size(), 1, true});
  } catch (const json::exception& e) {
    throw FormatError(std::string("corrupted checkpoint: ") + e.what());
  }
  return out;
}

void save_checkpoint(const ModelState& state, const std::filesystem::path& path,
                     const std::optional<TrainConfig>& train_config) {
  write_file(path, checkpoint_to_string(state, train_config));
}

ModelState load_checkpoint(const std::filesystem::path& path) {
  return load_checkpoint_full(path).state;
}

Checkpoint load_checkpoint_full(const std::filesystem::path& path) {
  return checkpoint_from_string(read_file(path));
}

std::string format_loss_history(std::span<const double> history) {
  std::string out;
  char buf[64];
  for (std::size_t e = 0; e < history.size(); ++e) {
    std::snprintf(buf, sizeof buf, "%zu\t%.17g\n", e + 1, history[e]);
    out += buf;
  }
  return out;
}

std::string read_file(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw IoError("cannot open '" + path.string() + "' for reading");
  std::ostringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

void write_file(const std::filesystem::path& path, const std::string& contents) {
  auto tmp = path;
  tmp += ".tmp";
  {
    std::ofstream out(tmp, std::ios::binary | std::ios::trunc);
    if (!out) throw IoError("cannot open '" + tmp.string() + "' for writing");
    out << contents;
    if (!out) throw IoError("failed writing '" + tmp.string() + "'");
  }
  std::error_code ec;
  std::filesystem::rename(tmp, path, ec);
  if (ec) throw IoError("cannot move '" + tmp.string() + "' to '" + path.string() + "': " + ec.message());
}

}  // namespace robustseq
