#include <exception>

#if __has_include(<CLI/CLI.hpp>)
#include <CLI/CLI.hpp>
#else
#include <CLI11.hpp>
#endif

#include "vqfuzz/cli/commands.hpp"
#include "vqfuzz/error.hpp"
#include "vqfuzz/manifest.hpp"

namespace vqfuzz::cli {

int run(int argc, const char* const* argv, std::ostream& out, std::ostream& err) {
  CLI::App app{"Latent-interpolation test generation for image classifiers", "vqfuzz"};
  app.set_version_flag("--version", tool_version());
  app.require_subcommand(1);
  app.fallthrough();

  CommandOptions opts;
  std::string config_path;
  std::uint64_t seed = 0;
  app.add_option("--config", config_path, "Experiment config (INI)");
  auto* seed_opt = app.add_option("--seed", seed, "Run seed; overrides [runtime] seed");
  app.add_option("--out", opts.out, "Output directory")->required();

  auto* pretrain = app.add_subcommand("pretrain", "Pretrain the VQ-VAE");
  auto* train_clf = app.add_subcommand("train-classifier", "Train the classifier under test");

  auto* adv = app.add_subcommand("adv-train", "Joint training against both discriminators");
  adv->add_option("--vqvae", opts.vqvae, "Pretrained VQ-VAE directory")->required();
  adv->add_flag("--no-quantizer", opts.no_quantizer, "Ablation: decode latents without quantizing");
  adv->add_flag("--no-discriminators", opts.no_discriminators, "Ablation: no discriminator losses");

  auto* gen = app.add_subcommand("generate", "Generate the adversarial dataset");
  gen->add_option("--model", opts.model, "adv-train output directory")->required();

  double lambda = 0.0;
  CLI::Option* lambda_opts[] = {
      adv->add_option("--lambda", lambda, "Perturbation factor in [0, 1]"),
      gen->add_option("--lambda", lambda, "Perturbation factor; must match the trained model"),
  };

  auto* eval = app.add_subcommand("evaluate", "Score a generated dataset against a classifier");
  eval->add_option("--dataset", opts.dataset, "generate output directory")->required();
  eval->add_option("--classifier", opts.classifier, "Classifier directory")->required();
  eval->add_option("--model-name", opts.model_name, "Label for the model column");

  auto* retrain = app.add_subcommand("retrain", "Fine-tune a classifier on generated samples");
  retrain->add_option("--classifier", opts.classifier, "Classifier directory")->required();
  retrain->add_option("--dataset", opts.dataset, "generate output directory");
  retrain->add_option("--model-name", opts.model_name, "Label for the model column");
  std::string mode = "fine-tune";
  retrain->add_option("--mode", mode, "fine-tune or random-control")
      ->check(CLI::IsMember({"fine-tune", "random-control"}));

  auto* report = app.add_subcommand("report", "Merge metrics CSVs into a report");
  report->add_option("--input", opts.inputs, "Run directories or metrics.csv files")->required();

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int code = app.exit(e, out, err);
    return code == 0 ? 0 : exit_code_for(ErrorKind::InvalidConfig);
  }

  if (!config_path.empty()) opts.config_path = config_path;
  if (seed_opt->count() > 0) opts.seed = seed;
  for (auto* o : lambda_opts)
    if (o->count() > 0) opts.lambda = lambda;
  opts.mode = mode == "random-control" ? RetrainMode::RandomControl : RetrainMode::FineTune;

  try {
    if (pretrain->parsed()) {
      cmd_pretrain(opts, err);
    } else if (train_clf->parsed()) {
      cmd_train_classifier(opts, err);
    } else if (adv->parsed()) {
      cmd_adv_train(opts, err);
    } else if (gen->parsed()) {
      cmd_generate(opts, err);
    } else if (eval->parsed()) {
      cmd_evaluate(opts, err);
    } else if (retrain->parsed()) {
      if (opts.mode == RetrainMode::FineTune && opts.dataset.empty())
        fail(ErrorKind::InvalidConfig, "retrain --mode fine-tune needs --dataset");
      cmd_retrain(opts, err);
    } else if (report->parsed()) {
      cmd_report(opts, err);
    }
  } catch (const Error& e) {
    err << "vqfuzz: " << to_string(e.kind()) << ": " << e.what() << '\n';
    return exit_code_for(e.kind());
  } catch (const std::exception& e) {
    err << "vqfuzz: internal error: " << e.what() << '\n';
    return 1;
  }
  return 0;
}

}  // namespace vqfuzz::cli
