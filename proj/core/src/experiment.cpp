#include "metacon/experiment.hpp"

#include <cmath>
#include <cstdio>
#include <fstream>
#include <limits>

#include <nlohmann/json.hpp>

#include "metacon/errors.hpp"

namespace metacon {

namespace {

// Child streams of the config seed.
constexpr std::uint64_t kTaskStream = 10;
constexpr std::uint64_t kEvalStream = 11;
constexpr std::uint64_t kBankStream = 12;
constexpr std::uint64_t kInitStream = 13;
constexpr std::uint64_t kFixedSetStream = 14;
constexpr std::uint64_t kVerifyStream = 15;

ClassBank build_bank(const BankParams& p, std::size_t classes, const std::string& csv_dir, RngStream rng) {
  if (!csv_dir.empty()) return load_bank_csv_dir(csv_dir);
  return make_bank(classes, p.input_dim, p.separation, p.stddev, rng, p.informative_dims);
}

std::ofstream open_output(const std::filesystem::path& path) {
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw FormatError("cannot write " + path.string());
  return out;
}

void write_text(const std::filesystem::path& path, const std::string& text) {
  auto out = open_output(path);
  out << text;
}

std::vector<Episode> sample_batch(const ExperimentConfig& config, const ExperimentData& data, TrainTasks tasks,
                                  RngStream& rng) {
  std::vector<Episode> batch;
  batch.reserve(config.meta.n_batch);
  for (std::size_t b = 0; b < config.meta.n_batch; ++b) {
    if (config.task_source == TaskSource::fixed_overfit)
      batch.push_back(data.contrast_set.episode(rng));
    else if (tasks == TrainTasks::non_mutually_exclusive)
      batch.push_back(sample_nme_episode(data.train_bank, config.meta, *config.nme_L, rng));
    else
      batch.push_back(sample_episode(data.train_bank, config.meta, rng));
  }
  return batch;
}

double batch_loss(const MetaModel& model, std::span<const Episode> batch, const MetaConfig& config) {
  double sum = 0.0;
  for (const auto& ep : batch) sum += meta_loss(model.head, model.encoder, ep, config);
  return sum / static_cast<double>(batch.size());
}

std::string policy_file_tag(const HeadInitPolicy& p) {
  std::string s = to_string(p);
  for (char& c : s)
    if (c == '(' || c == ')') c = '_';
  while (!s.empty() && s.back() == '_') s.pop_back();
  return s;
}

}  // namespace

std::string format_metrics_row(const MetricsRow& row) {
  char buf[256];
  std::snprintf(buf, sizeof buf, "%zu,%.17g,%.17g,%.17g,%.17g,%.17g", row.iteration, row.train_query_loss,
                row.test_acc_raw, row.test_acc_zeroed, row.contrast_score, row.head_norm);
  return buf;
}

ExperimentData make_experiment_data(const ExperimentConfig& config) {
  const RngStream root(config.seed);
  const RngStream banks = root.split(kBankStream);
  ExperimentData data;
  data.train_bank = build_bank(config.bank, config.bank.train_classes, config.bank.train_csv_dir, banks.split(0));
  data.test_bank = build_bank(config.bank, config.bank.test_classes, config.bank.test_csv_dir, banks.split(1));
  if (data.train_bank.input_dim() != config.encoder_sizes.front() ||
      data.test_bank.input_dim() != config.encoder_sizes.front())
    throw ConfigError("encoder.layers", "first size must equal the bank input dimension");
  if (config.nme_L && data.train_bank.num_classes() != config.meta.n_way * *config.nme_L)
    throw ConfigError("run.nme_L", "meta-train bank must hold exactly n_way * nme_L classes");

  RngStream fixed_rng = root.split(kFixedSetStream);
  data.contrast_set = fixed_overfit_set(data.train_bank, fixed_rng);

  RngStream eval_rng = root.split(kEvalStream);
  data.eval_episodes.reserve(config.eval_episodes);
  for (std::size_t i = 0; i < config.eval_episodes; ++i)
    data.eval_episodes.push_back(sample_episode(data.test_bank, config.meta, eval_rng));
  return data;
}

double fixed_set_contrast(const MetaModel& model, const FixedOverfitSet& set) {
  const auto groups = group_features(model.encoder, set.unshuffled_episode(), FixedOverfitSet::kClasses);
  return contrast_score(similarity_heatmap(groups));
}

TrainResult train(const ExperimentConfig& config, TrainTasks tasks, std::size_t threads,
                  const std::function<void(const MetricsRow&)>& on_row,
                  const std::function<void(const MetaModel&)>& on_abort) {
  config.validate();
  if (tasks == TrainTasks::non_mutually_exclusive && !config.nme_L)
    throw ConfigError("run.nme_L", "required for non-mutually-exclusive training");
  const ExperimentData data = make_experiment_data(config);
  const RngStream root(config.seed);
  RngStream init_rng = root.split(kInitStream);
  RngStream task_rng = root.split(kTaskStream);

  TrainResult result;
  result.initial_model = init_model(config.encoder_sizes, config.meta, init_rng);
  MetaModel model = result.initial_model;

  // The model before the most recent update; saved if the current one overflows.
  MetaModel previous = model;
  auto abort_with = [&](const MetaModel& last_good, const std::string& what, std::size_t it) {
    if (on_abort) on_abort(last_good);
    throw NumericError(what + " at iteration " + std::to_string(it));
  };

  for (std::size_t it = 0; it <= config.iterations; ++it) {
    const auto batch = sample_batch(config, data, tasks, task_rng);
    const bool boundary = it % config.eval_every == 0 || it == config.iterations;
    MetricsRow row;
    double loss = 0.0;
    std::optional<MetaModel> next;
    try {
      if (boundary) {
        const auto eval = evaluate_paired(model, data.eval_episodes, config.meta, config.test_steps, threads);
        row.iteration = it;
        row.test_acc_raw = eval.raw.accuracy;
        row.test_acc_zeroed = eval.zeroed.accuracy;
        row.contrast_score = config.log_contrast ? fixed_set_contrast(model, data.contrast_set)
                                                 : std::numeric_limits<double>::quiet_NaN();
        row.head_norm = frobenius_norm(model.head.w);
      }
      if (it < config.iterations)
        next = outer_update(model, batch, config.meta, threads, &loss);
      else
        loss = batch_loss(model, batch, config.meta);
    } catch (const NumericError& e) {
      abort_with(previous, e.what(), it);
    }
    if (!std::isfinite(loss)) abort_with(previous, "non-finite loss", it);
    if (next) {
      if (!all_finite(next->head.w.data()) || !all_finite(next->encoder.flat()))
        abort_with(model, "non-finite parameters", it);
      previous = std::move(model);
      model = std::move(*next);
    }
    if (boundary) {
      row.train_query_loss = loss;
      result.rows.push_back(row);
      if (on_row) on_row(row);
    }
  }
  result.final_model = std::move(model);
  return result;
}

TrainResult run_train(const ExperimentConfig& config, const std::filesystem::path& out_dir, std::size_t threads) {
  config.validate();
  std::filesystem::create_directories(out_dir);
  write_text(out_dir / "config.resolved.txt", render_config(config));
  auto csv = open_output(out_dir / "metrics.csv");
  csv << kMetricsHeader << '\n' << std::flush;
  auto result = train(
      config, TrainTasks::standard, threads, [&](const MetricsRow& row) { csv << format_metrics_row(row) << '\n' << std::flush; },
      [&](const MetaModel& last_good) { save_model(out_dir / "model.last_good.txt", last_good); });
  save_model(out_dir / "model.txt", result.final_model);
  return result;
}

std::vector<MemorizationRun> run_memorization(const ExperimentConfig& config, const std::filesystem::path& out_dir,
                                              std::size_t threads) {
  if (!config.nme_L) throw ConfigError("run.nme_L", "memorization requires nme_L");
  config.validate();
  std::filesystem::create_directories(out_dir);
  write_text(out_dir / "config.resolved.txt", render_config(config));

  std::vector<HeadInitPolicy> policies{config.meta.head_init};
  if (config.meta.head_init.kind != HeadInitPolicy::Kind::zeroing_trick)
    policies.push_back(HeadInitPolicy::zeroing_trick());

  std::vector<MemorizationRun> runs;
  nlohmann::ordered_json summary = nlohmann::ordered_json::array();
  for (const auto& policy : policies) {
    ExperimentConfig c = config;
    c.meta.head_init = policy;
    const std::string tag = policy_file_tag(policy);
    auto csv = open_output(out_dir / ("metrics_" + tag + ".csv"));
    csv << kMetricsHeader << '\n' << std::flush;
    auto result = train(
        c, TrainTasks::non_mutually_exclusive, threads,
        [&](const MetricsRow& row) { csv << format_metrics_row(row) << '\n' << std::flush; },
        [&](const MetaModel& last_good) { save_model(out_dir / ("model_" + tag + ".last_good.txt"), last_good); });
    save_model(out_dir / ("model_" + tag + ".txt"), result.final_model);
    const auto& last = result.rows.back();
    summary.push_back({{"policy", to_string(policy)},
                       {"metrics", "metrics_" + tag + ".csv"},
                       {"final_test_acc_raw", last.test_acc_raw},
                       {"final_test_acc_zeroed", last.test_acc_zeroed},
                       {"eval_episodes", c.eval_episodes}});
    runs.push_back({policy, std::move(result)});
  }
  write_text(out_dir / "memorization.json", summary.dump(2) + "\n");
  return runs;
}

int run_verify(const ExperimentConfig& config, const std::filesystem::path& out_dir, std::ostream& log,
               const HeadGradForms& forms) {
  VerifyOptions options;
  options.trials = config.verify_trials;
  const RngStream root = RngStream(config.seed).split(kVerifyStream);
  RngStream head_rng = root.split(0);
  RngStream encoder_rng = root.split(1);

  auto reports = verify_head_grads(options, head_rng, forms);
  reports.push_back(verify_encoder_grad(options, encoder_rng));

  bool ok = true;
  nlohmann::ordered_json all = nlohmann::ordered_json::array();
  for (const auto& r : reports) {
    char line[256];
    std::snprintf(line, sizeof line, "%-14s trials=%zu max_rel_err=%.3e tol=%.1e %s", r.variant.c_str(), r.trials,
                  r.max_rel_err, r.tolerance, r.passed() ? "PASS" : "FAIL");
    log << line << '\n';
    for (const auto& f : r.failures)
      log << "  trial " << f.trial << ": " << f.reason << " (rel_err " << f.rel_err << ")\n" << f.instance;
    ok = ok && r.passed();
    all.push_back(nlohmann::ordered_json::parse(report_to_json(r)));
  }
  if (!out_dir.empty()) {
    std::filesystem::create_directories(out_dir);
    write_text(out_dir / "verify.json", all.dump(2) + "\n");
  }
  return ok ? 0 : 1;
}

AnalyzeResult run_analyze(const MetaModel& model, const ExperimentConfig& config,
                          const std::filesystem::path& out_dir) {
  if (model.encoder.input_dim() != config.encoder_sizes.front() || model.head.n_way() != config.meta.n_way ||
      model.head.n_features() != model.encoder.feature_dim())
    throw FormatError("model shape does not match the config");
  ExperimentConfig c = config;
  c.eval_episodes = 1;
  const ExperimentData data = make_experiment_data(c);
  const Episode fixed = data.contrast_set.unshuffled_episode();

  AnalyzeResult res;
  res.heatmap = similarity_heatmap(group_features(model.encoder, fixed, FixedOverfitSet::kClasses));
  res.contrast = contrast_score(res.heatmap);
  if (model.head.n_way() == FixedOverfitSet::kClasses) {
    const auto support = encode_samples(model.encoder, fixed.support);
    for (std::size_t k = 0; k < model.head.n_way(); ++k)
      res.spectra.push_back(preconditioner_report(support, model.head, k, config.meta.eta));
  }
  if (!out_dir.empty()) {
    std::filesystem::create_directories(out_dir);
    write_text(out_dir / "heatmap.json", heatmap_to_json(res.heatmap) + "\n");
    write_text(out_dir / "spectral.json", spectral_reports_to_json(res.spectra) + "\n");
  }
  return res;
}

}  // namespace metacon
