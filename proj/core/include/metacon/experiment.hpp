#pragma once

#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <functional>
#include <optional>
#include <ostream>
#include <string>
#include <string_view>
#include <vector>

#include "metacon/analysis.hpp"
#include "metacon/meta.hpp"
#include "metacon/meta_config.hpp"
#include "metacon/oracle.hpp"

namespace metacon {

/// Geometry shared by the meta-train and meta-test banks; the two banks
/// draw disjoint classes from independent streams.
struct BankParams {
  std::size_t train_classes = 64;
  std::size_t test_classes = 20;
  std::size_t input_dim = 32;
  std::size_t informative_dims = 0;  // 0 = all
  double separation = 1.0;
  double stddev = 1.0;
  /// Directories of per-class CSV files; replace the synthetic banks when set.
  std::string train_csv_dir;
  std::string test_csv_dir;

  bool operator==(const BankParams&) const = default;
};

enum class TaskSource { episodic, fixed_overfit };

struct ExperimentConfig {
  MetaConfig meta;
  std::vector<std::size_t> encoder_sizes{32, 64, 16};
  BankParams bank;
  std::size_t iterations = 2000;
  std::size_t eval_every = 100;
  std::size_t eval_episodes = 400;
  std::size_t test_steps = 5;
  bool zero_head_at_test = true;
  std::optional<std::size_t> nme_L;
  TaskSource task_source = TaskSource::episodic;
  bool log_contrast = true;
  std::uint64_t seed = 1;
  std::size_t verify_trials = 100;

  /// Throws ConfigError naming the offending field.
  void validate() const;
  bool operator==(const ExperimentConfig&) const = default;
};

/// Flat `key = value` text with [meta], [encoder], [bank], [run] sections.
/// A leading `preset = NAME` starts from a named preset. eta, rho, n_step,
/// variant and head_init must be given (by the file or its preset).
ExperimentConfig parse_config(std::string_view text);
ExperimentConfig load_config(const std::filesystem::path& path);
/// Canonical text; parse_config(render_config(c)) == c.
std::string render_config(const ExperimentConfig& config);

std::vector<std::string> preset_names();
/// Throws ConfigError for unknown names.
ExperimentConfig preset(std::string_view name);
std::string preset_text(std::string_view name);

/// Model file: version line, layer sizes, N_way, N_f, then row-major parameters.
void write_model(std::ostream& out, const MetaModel& model);
void save_model(const std::filesystem::path& path, const MetaModel& model);
/// Throws FormatError on unreadable or malformed input.
MetaModel read_model(std::istream& in);
MetaModel load_model(const std::filesystem::path& path);

struct MetricsRow {
  std::size_t iteration = 0;
  double train_query_loss = 0.0;
  double test_acc_raw = 0.0;
  double test_acc_zeroed = 0.0;
  double contrast_score = 0.0;  // NaN when contrast logging is off
  double head_norm = 0.0;
};

inline constexpr std::string_view kMetricsHeader =
    "iteration,train_query_loss,test_acc_raw,test_acc_zeroed,contrast_score,head_norm";
std::string format_metrics_row(const MetricsRow& row);

/// Banks, fixed sets and evaluation episodes derived from a config's seed.
struct ExperimentData {
  ClassBank train_bank;
  ClassBank test_bank;
  FixedOverfitSet contrast_set;
  std::vector<Episode> eval_episodes;
};
ExperimentData make_experiment_data(const ExperimentConfig& config);

/// Encoder-feature contrast score of the model on the fixed set (unshuffled labels).
double fixed_set_contrast(const MetaModel& model, const FixedOverfitSet& set);

enum class TrainTasks { standard, non_mutually_exclusive };

struct TrainResult {
  std::vector<MetricsRow> rows;
  MetaModel initial_model;
  MetaModel final_model;
};

/// Outer loop over `iterations`. Rows are emitted at iteration 0, every
/// eval_every, and at the last iteration; `on_row` fires before the next
/// outer iteration starts. Throws NumericError on a non-finite loss after
/// calling `on_abort` with the last finite model.
TrainResult train(const ExperimentConfig& config, TrainTasks tasks, std::size_t threads = 1,
                  const std::function<void(const MetricsRow&)>& on_row = {},
                  const std::function<void(const MetaModel&)>& on_abort = {});

/// Writes metrics.csv, model.txt and config.resolved.txt under `out_dir`.
TrainResult run_train(const ExperimentConfig& config, const std::filesystem::path& out_dir, std::size_t threads = 1);

struct MemorizationRun {
  HeadInitPolicy policy;
  TrainResult result;
};

/// Trains on non-mutually-exclusive tasks (requires nme_L) with the
/// configured head policy and, unless that already is the zeroing trick, a
/// zeroing-trick counterpart on the same seed. Writes metrics_<policy>.csv
/// per run plus memorization.json.
std::vector<MemorizationRun> run_memorization(const ExperimentConfig& config, const std::filesystem::path& out_dir,
                                              std::size_t threads = 1);

/// Runs the head and encoder verifications, writes verify.json, returns 0
/// when every report passes and 1 otherwise.
int run_verify(const ExperimentConfig& config, const std::filesystem::path& out_dir, std::ostream& log,
               const HeadGradForms& forms = {});

/// Writes heatmap.json (fixed set) and spectral.json (one report per channel).
struct AnalyzeResult {
  SimilarityHeatmap heatmap;
  double contrast = 0.0;
  std::vector<SpectralReport> spectra;
};
AnalyzeResult run_analyze(const MetaModel& model, const ExperimentConfig& config,
                          const std::filesystem::path& out_dir);

}  // namespace metacon
