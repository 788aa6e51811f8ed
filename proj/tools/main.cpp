// metacon: command-line front end for training, verification and analysis.

#include <cstdio>
#include <filesystem>
#include <iostream>
#include <optional>
#include <string>

#include <CLI11.hpp>

#include "metacon/errors.hpp"
#include "metacon/experiment.hpp"

namespace {

struct CommonOptions {
  std::string config_path;
  std::string preset_name;
  std::optional<std::uint64_t> seed;
  std::string out_dir = "out";
  std::size_t threads = 1;
};

void add_common(CLI::App* sub, CommonOptions& o) {
  sub->add_option("--config", o.config_path, "Config file (key = value with sections)");
  sub->add_option("--preset", o.preset_name, "Named preset used when no --config is given");
  sub->add_option("--seed", o.seed, "Override run.seed");
  sub->add_option("--out", o.out_dir, "Output directory");
  sub->add_option("--threads", o.threads, "Worker threads for per-task gradients and evaluation")
      ->check(CLI::PositiveNumber);
}

metacon::ExperimentConfig resolve(const CommonOptions& o) {
  if (!o.config_path.empty() && !o.preset_name.empty())
    throw metacon::ConfigError("", "give either --config or --preset, not both");
  metacon::ExperimentConfig c = !o.config_path.empty()     ? metacon::load_config(o.config_path)
                                : !o.preset_name.empty()   ? metacon::preset(o.preset_name)
                                                           : metacon::preset("miniimagenet-like-1shot");
  if (o.seed) c.seed = *o.seed;
  c.validate();
  return c;
}

void print_final(const metacon::MetricsRow& row) {
  std::printf("final iteration=%zu train_query_loss=%.6f test_acc_raw=%.4f test_acc_zeroed=%.4f contrast=%.4f\n",
              row.iteration, row.train_query_loss, row.test_acc_raw, row.test_acc_zeroed, row.contrast_score);
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Meta-learning engine with closed-form head updates, gradient verification and analysis"};
  app.require_subcommand(1);

  CommonOptions verify_opts, train_opts, eval_opts, analyze_opts, memo_opts;
  std::optional<std::size_t> trials;
  std::string eval_model, analyze_model;

  auto* verify = app.add_subcommand("verify", "Certify closed-form gradients against finite differences");
  add_common(verify, verify_opts);
  verify->add_option("--trials", trials, "Override run.verify_trials")->check(CLI::PositiveNumber);

  auto* train = app.add_subcommand("train", "Run the outer loop and write metrics.csv and model.txt");
  add_common(train, train_opts);

  auto* eval = app.add_subcommand("eval", "Evaluate a model file on meta-test episodes");
  add_common(eval, eval_opts);
  eval->add_option("--model", eval_model, "Model file")->required();

  auto* analyze = app.add_subcommand("analyze", "Write heatmap.json and spectral.json for a model file");
  add_common(analyze, analyze_opts);
  analyze->add_option("--model", analyze_model, "Model file")->required();

  auto* memo = app.add_subcommand("memorization", "Non-mutually-exclusive training, configured head vs zeroing trick");
  add_common(memo, memo_opts);

  app.add_subcommand("presets", "List the named presets")->callback([] {
    for (const auto& n : metacon::preset_names()) std::cout << n << '\n';
  });

  CLI11_PARSE(app, argc, argv);

  try {
    if (*verify) {
      auto c = resolve(verify_opts);
      if (trials) c.verify_trials = *trials;
      return metacon::run_verify(c, verify_opts.out_dir, std::cout);
    }
    if (*train) {
      const auto c = resolve(train_opts);
      const auto res = metacon::run_train(c, train_opts.out_dir, train_opts.threads);
      print_final(res.rows.back());
      return 0;
    }
    if (*eval) {
      const auto c = resolve(eval_opts);
      const auto model = metacon::load_model(eval_model);
      const auto data = metacon::make_experiment_data(c);
      const auto r = metacon::evaluate_paired(model, data.eval_episodes, c.meta, c.test_steps, eval_opts.threads);
      const std::size_t n = data.eval_episodes.size() * c.meta.n_query * c.meta.n_way;
      std::printf("episodes=%zu steps=%zu\n", data.eval_episodes.size(), c.test_steps);
      std::printf("test_acc_raw=%.4f +- %.4f\n", r.raw.accuracy, metacon::binomial_stderr(r.raw.accuracy, n));
      std::printf("test_acc_zeroed=%.4f +- %.4f\n", r.zeroed.accuracy, metacon::binomial_stderr(r.zeroed.accuracy, n));
      std::printf("reported (%s)=%.4f\n", c.zero_head_at_test ? "zeroed" : "raw",
                  c.zero_head_at_test ? r.zeroed.accuracy : r.raw.accuracy);
      return 0;
    }
    if (*analyze) {
      const auto c = resolve(analyze_opts);
      const auto res = metacon::run_analyze(metacon::load_model(analyze_model), c, analyze_opts.out_dir);
      std::printf("contrast_score=%.6f\n", res.contrast);
      for (const auto& s : res.spectra)
        std::printf("channel %zu: lambda_max=%.6g contraction=%.6g\n", s.channel, s.eigenvalues.front(),
                    s.contraction.front());
      return 0;
    }
    if (*memo) {
      const auto c = resolve(memo_opts);
      for (const auto& run : metacon::run_memorization(c, memo_opts.out_dir, memo_opts.threads)) {
        std::printf("%s: ", metacon::to_string(run.policy).c_str());
        print_final(run.result.rows.back());
      }
      return 0;
    }
  } catch (const metacon::ConfigError& e) {
    std::cerr << "config error: " << e.what() << '\n';
    return 2;
  } catch (const metacon::FormatError& e) {
    std::cerr << "format error: " << e.what() << '\n';
    return 2;
  } catch (const metacon::NumericError& e) {
    std::cerr << "numeric error: " << e.what() << '\n';
    return 3;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << '\n';
    return 1;
  }
  return 0;
}
