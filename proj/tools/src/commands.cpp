#include "vqfuzz/cli/commands.hpp"

#include <algorithm>
#include <cstdlib>
#include <fstream>
#include <iomanip>
#include <map>
#include <set>
#include <sstream>

#include <torch/torch.h>

#include "vqfuzz/adversary.hpp"
#include "vqfuzz/checkpoint.hpp"
#include "vqfuzz/cli/lockfile.hpp"
#include "vqfuzz/cli/records_table.hpp"
#include "vqfuzz/digest.hpp"
#include "vqfuzz/error.hpp"
#include "vqfuzz/generate.hpp"
#include "vqfuzz/image_io.hpp"
#include "vqfuzz/manifest.hpp"
#include "vqfuzz/model_store.hpp"
#include "vqfuzz/random.hpp"

namespace vqfuzz::cli {

namespace fs = std::filesystem;

namespace {

RunManifest start_manifest(const char* command, const ExperimentConfig& config) {
  RunManifest m;
  m.command = command;
  m.config = canonical_text(config);
  m.config_hash = config_hash(config);
  m.seed = config.runtime.seed;
  m.tool_version = tool_version();
  m.timestamp = utc_timestamp();
  return m;
}

void apply_runtime(const ExperimentConfig& config) {
  torch::set_num_threads(static_cast<int>(config.runtime.threads));
}

std::string file_digest(const fs::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) fail(ErrorKind::MissingArtifact, "missing " + path.string());
  std::ostringstream bytes;
  bytes << in.rdbuf();
  return sha256_hex(bytes.str());
}

std::ofstream open_output(const fs::path& path) {
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) fail(ErrorKind::Internal, "cannot write " + path.string());
  return out;
}

double reconstruction_mse(Vqvae& model, std::span<const LabeledImage> images, bool use_quantizer) {
  torch::NoGradGuard no_grad;
  model->eval();
  double sum = 0.0;
  constexpr std::size_t chunk = 1000;
  for (std::size_t s = 0; s < images.size(); s += chunk) {
    auto part = images.subspan(s, std::min(chunk, images.size() - s));
    auto x = stack_pixels(part);
    auto recon = model->forward(x, use_quantizer).x_recon;
    sum += (recon.to(torch::kFloat64) - x.to(torch::kFloat64)).square().sum().item<double>();
  }
  const auto per_image = images.empty() ? 1 : images.front().pixels.numel();
  return sum / static_cast<double>(images.size() * static_cast<std::size_t>(per_image));
}

// A generated dataset directory read back from disk.
struct GeneratedSet {
  RunManifest manifest;
  std::vector<RecordRow> rows;
  torch::Tensor adversarial;  // (N, C, H, W)
  torch::Tensor reference;    // original or reconstruction per row
};

GeneratedSet load_generated(const fs::path& dir, const ImageShape& shape, const std::string& reference) {
  GeneratedSet set;
  set.manifest = read_manifest(dir);
  set.rows = read_records(dir / "records.csv");
  require(!set.rows.empty(), ErrorKind::InvalidArgument,
          "adversarial dataset " + dir.string() + " has no records");
  const auto ref_dir = dir / (reference == "reconstruction" ? "reconstructions" : "originals");
  std::map<std::string, torch::Tensor> refs;
  std::vector<torch::Tensor> adv, ref;
  adv.reserve(set.rows.size());
  ref.reserve(set.rows.size());
  auto read_checked = [&](const fs::path& path) {
    if (!fs::exists(path)) fail(ErrorKind::MissingArtifact, "missing image " + path.string());
    auto px = read_png(path, shape.channels);
    require(px.size(1) == shape.height && px.size(2) == shape.width, ErrorKind::ShapeMismatch,
            path.string() + " does not match the classifier input shape " + to_string(shape));
    return px;
  };
  for (const auto& row : set.rows) {
    adv.push_back(read_checked(dir / "images" / row.file));
    auto it = refs.find(row.original_file());
    if (it == refs.end())
      it = refs.emplace(row.original_file(), read_checked(ref_dir / row.original_file())).first;
    ref.push_back(it->second);
  }
  set.adversarial = torch::stack(adv);
  set.reference = torch::stack(ref);
  return set;
}

std::vector<EvaluatedRecord> score_generated(const GeneratedSet& set, const BlackBoxModel& model,
                                             const ExperimentConfig& config,
                                             const std::string& model_name) {
  const auto preds = model.predict_batch(set.adversarial);
  const auto mses = mse_batch(set.adversarial, set.reference);
  const auto ssims = ssim_batch(set.adversarial, set.reference);
  std::vector<EvaluatedRecord> out;
  out.reserve(set.rows.size());
  for (std::size_t i = 0; i < set.rows.size(); ++i) {
    EvaluatedRecord r;
    r.dataset = config.data.spec.name;
    r.model = model_name;
    r.lambda = set.rows[i].lambda;
    r.original_id = set.rows[i].original_id;
    r.source_class = set.rows[i].source_class;
    r.predicted = preds[i].label;
    r.mse = mses[i];
    r.ssim = ssims[i];
    out.push_back(std::move(r));
  }
  return out;
}

void write_metrics_file(const fs::path& path, const MetricsReport& report) {
  auto out = open_output(path);
  write_metrics_csv(out, report);
}

void write_loss_csv(const fs::path& path, const std::vector<EpochLoss>& history) {
  auto out = open_output(path);
  out << "epoch,learning_rate,rec,cb,com,total\n";
  for (const auto& e : history)
    out << e.epoch << ',' << format_number(e.learning_rate) << ',' << format_number(e.mean.rec) << ','
        << format_number(e.mean.cb) << ',' << format_number(e.mean.com) << ','
        << format_number(e.mean.total) << '\n';
}

std::string model_label(const ClassifierHandle& handle, const std::string& override_name) {
  return override_name.empty() ? std::string(to_string(handle.arch())) : override_name;
}

}  // namespace

ExperimentConfig resolve_config(const CommandOptions& options) {
  ExperimentConfig config;
  if (options.config_path) {
    config = load_config(*options.config_path);
  } else {
    config.vqvae.image = config.data.spec.image_shape;
    config.validate();
  }
  if (options.seed) config.runtime.seed = *options.seed;
  if (const char* dir = std::getenv(kDataDirEnv); dir != nullptr && *dir != '\0') config.data.dir = dir;
  return config;
}

std::vector<LabeledImage> load_split(const ExperimentConfig& config, Split split) {
  auto spec = config.data.spec;
  spec.split = split;
  auto images = load_dataset(spec, config.data.dir);
  const auto limit = split == Split::Train ? config.data.train_limit : config.data.test_limit;
  if (limit > 0 && static_cast<std::size_t>(limit) < images.size())
    images.resize(static_cast<std::size_t>(limit));
  return images;
}

std::vector<EvaluatedRecord> evaluate_generated(const fs::path& dataset_dir, const BlackBoxModel& model,
                                                const ExperimentConfig& config,
                                                const std::string& model_name) {
  const auto set = load_generated(dataset_dir, model.input_shape(), config.metrics.reference);
  return score_generated(set, model, config, model_name);
}

void cmd_pretrain(const CommandOptions& options, std::ostream& log) {
  const auto config = resolve_config(options);
  apply_runtime(config);
  const auto train = load_split(config, Split::Train);
  const auto test = load_split(config, Split::Test);
  DirectoryLock lock(options.out);

  auto arch = config.vqvae;
  arch.image = config.data.spec.image_shape;
  std::vector<EpochLoss> history;
  auto model = pretrain(train, arch, config.pretrain_config(),
                        [&](const EpochLoss& e) {
                          log << "pretrain epoch " << e.epoch << " lr " << e.learning_rate
                              << " rec " << e.mean.rec << " total " << e.mean.total
                              << " restarted " << e.codes_restarted << '\n';
                        },
                        &history);
  const double test_mse = reconstruction_mse(model, test, true);
  log << "test reconstruction mse " << test_mse << '\n';

  save_vqvae(model, options.out);
  write_loss_csv(options.out / "losses.csv", history);

  auto manifest = start_manifest("pretrain", config);
  manifest.dataset_checksum = dataset_checksum(train);
  manifest.model_checksums["vqvae"] = weights_checksum(*model);
  manifest.properties["test_reconstruction_mse"] = format_number(test_mse);
  manifest.properties["train_samples"] = std::to_string(train.size());
  write_manifest(options.out, manifest);
}

void cmd_train_classifier(const CommandOptions& options, std::ostream& log) {
  const auto config = resolve_config(options);
  apply_runtime(config);
  const auto train = load_split(config, Split::Train);
  const auto test = load_split(config, Split::Test);
  DirectoryLock lock(options.out);

  auto handle = train_classifier(train, config.classifier.arch, config.classifier_config(),
                                 config.data.spec.class_count);
  const double accuracy = evaluate_accuracy(handle, test);
  log << to_string(handle.arch()) << " test accuracy " << accuracy << '\n';
  save_classifier(handle, options.out);

  auto manifest = start_manifest("train-classifier", config);
  manifest.dataset_checksum = dataset_checksum(train);
  manifest.model_checksums["classifier"] = handle.checksum();
  manifest.properties["arch"] = to_string(handle.arch());
  manifest.properties["test_accuracy"] = format_number(accuracy);
  write_manifest(options.out, manifest);
}

void cmd_adv_train(const CommandOptions& options, std::ostream& log) {
  auto config = resolve_config(options);
  if (options.lambda) config.adversary.lambda = *options.lambda;
  if (options.no_quantizer) config.adversary.use_quantizer = false;
  if (options.no_discriminators) config.adversary.use_discriminators = false;
  config.validate();
  apply_runtime(config);

  auto pretrained = load_vqvae(options.vqvae);
  require(pretrained->arch().image == config.data.spec.image_shape, ErrorKind::ShapeMismatch,
          "VQ-VAE checkpoint image shape " + to_string(pretrained->arch().image) +
              " does not match the dataset " + to_string(config.data.spec.image_shape));
  const auto train = load_split(config, Split::Train);
  DirectoryLock lock(options.out);

  const auto joint = config.joint_config();
  std::vector<JointEpochStats> history;
  auto model = joint_train(pretrained, train, joint, [&](const JointEpochStats& e) {
    log << "adv-train epoch " << e.epoch << " disc_z " << e.discriminator.loss_z << " disc_x "
        << e.discriminator.loss_x << " rec " << e.generator.vqvae.rec << " total "
        << e.generator.total << '\n';
    history.push_back(e);
  });
  save_adversary(model, options.out);
  {
    auto out = open_output(options.out / "losses.csv");
    out << "epoch,disc_z,disc_x,rec,cb,com,vqvae,gen_z,gen_x,total\n";
    for (const auto& e : history)
      out << e.epoch << ',' << format_number(e.discriminator.loss_z) << ','
          << format_number(e.discriminator.loss_x) << ',' << format_number(e.generator.vqvae.rec)
          << ',' << format_number(e.generator.vqvae.cb) << ',' << format_number(e.generator.vqvae.com)
          << ',' << format_number(e.generator.vqvae.total) << ',' << format_number(e.generator.gen_z)
          << ',' << format_number(e.generator.gen_x) << ',' << format_number(e.generator.total) << '\n';
  }

  auto manifest = start_manifest("adv-train", config);
  manifest.dataset_checksum = dataset_checksum(train);
  manifest.trained_lambda = model.trained_lambda;
  manifest.model_checksums["pretrained_vqvae"] = weights_checksum(*pretrained);
  manifest.model_checksums["vqvae"] = weights_checksum(*model.vqvae);
  manifest.model_checksums["z_discriminator"] = weights_checksum(*model.z_discriminator);
  manifest.model_checksums["x_discriminator"] = weights_checksum(*model.x_discriminator);
  manifest.properties["use_quantizer"] = model.use_quantizer ? "true" : "false";
  manifest.properties["use_discriminators"] = model.use_discriminators ? "true" : "false";
  write_manifest(options.out, manifest);
}

void cmd_generate(const CommandOptions& options, std::ostream& log) {
  auto config = resolve_config(options);
  if (options.lambda) config.generate.lambda = *options.lambda;
  config.validate();
  apply_runtime(config);

  const double lambda = config.generation_lambda();
  check_lambda_consistency(lambda, options.model / kManifestFile);
  auto model = load_adversary(options.model);
  require(model.vqvae->arch().image == config.data.spec.image_shape, ErrorKind::ShapeMismatch,
          "model image shape does not match the dataset");
  const auto images = load_split(config, config.generate.split);
  const auto partition = partition_by_class(images, config.data.spec.class_count);
  const auto generated = generate_adversarial_dataset(model, partition, config.generation_config());
  log << "generated " << generated.records.size() << " samples at lambda " << lambda << '\n';

  DirectoryLock lock(options.out);
  for (const char* sub : {"images", "originals", "reconstructions"}) {
    fs::remove_all(options.out / sub);
    fs::create_directories(options.out / sub);
  }
  std::vector<RecordRow> rows;
  rows.reserve(generated.records.size());
  std::set<std::string> written;
  for (const auto& rec : generated.records) {
    rows.push_back(to_row(rec));
    write_png(options.out / "images" / rows.back().file, rec.pixels);
    const auto orig_file = rows.back().original_file();
    if (written.insert(orig_file).second) {
      write_png(options.out / "originals" / orig_file, generated.originals.at(rec.original_id).pixels);
      write_png(options.out / "reconstructions" / orig_file,
                generated.reconstructions.at(rec.original_id));
    }
  }
  {
    auto out = open_output(options.out / "records.csv");
    write_records(out, rows);
  }

  auto manifest = start_manifest("generate", config);
  manifest.dataset_checksum = dataset_checksum(images);
  manifest.trained_lambda = model.trained_lambda;
  manifest.model_checksums["vqvae"] = generated.model_checksum;
  manifest.properties["lambda"] = format_number(lambda);
  manifest.properties["split"] = to_string(config.generate.split);
  manifest.properties["records"] = std::to_string(rows.size());
  manifest.properties["use_quantizer"] = model.use_quantizer ? "true" : "false";
  manifest.properties["use_discriminators"] = model.use_discriminators ? "true" : "false";
  write_manifest(options.out, manifest);
}

void cmd_evaluate(const CommandOptions& options, std::ostream& log) {
  const auto config = resolve_config(options);
  apply_runtime(config);
  auto handle = load_classifier(options.classifier);
  handle.set_opaque(true);
  const auto set = load_generated(options.dataset, handle.input_shape(), config.metrics.reference);
  const auto name = model_label(handle, options.model_name);
  const auto records = score_generated(set, handle, config, name);
  const auto test = load_split(config, Split::Test);
  const double accuracy = evaluate_accuracy(handle, test);

  DirectoryLock lock(options.out);
  const auto report = build_report(records, config.metrics.label_diversity);
  write_metrics_file(options.out / "metrics.csv", report);
  {
    auto out = open_output(options.out / "evaluation.csv");
    out << "file,original_id,source_class,perturber_class,predicted,mse,ssim\n";
    for (std::size_t i = 0; i < records.size(); ++i)
      out << set.rows[i].file << ',' << records[i].original_id << ',' << records[i].source_class
          << ',' << set.rows[i].perturber_class << ',' << records[i].predicted << ','
          << format_number(records[i].mse) << ',' << format_number(records[i].ssim) << '\n';
  }
  if (config.metrics.grid_pairs > 0) {
    // Rows of (reference, adversarial): the least similar pairs first, then the most similar.
    std::vector<std::int64_t> order(records.size());
    for (std::size_t i = 0; i < order.size(); ++i) order[i] = static_cast<std::int64_t>(i);
    std::stable_sort(order.begin(), order.end(), [&](std::int64_t a, std::int64_t b) {
      return records[static_cast<std::size_t>(a)].ssim < records[static_cast<std::size_t>(b)].ssim;
    });
    const auto k = std::min<std::int64_t>(config.metrics.grid_pairs, static_cast<std::int64_t>(order.size()));
    std::vector<torch::Tensor> tiles;
    auto add = [&](std::int64_t i) {
      tiles.push_back(set.reference[i]);
      tiles.push_back(set.adversarial[i]);
    };
    for (std::int64_t i = 0; i < k; ++i) add(order[static_cast<std::size_t>(i)]);
    for (std::int64_t i = 0; i < k; ++i) add(order[order.size() - 1 - static_cast<std::size_t>(i)]);
    write_png(options.out / "grid.png", tile_images(torch::stack(tiles), 2));
  }

  for (const auto& row : report.rows)
    log << row.dataset << ' ' << row.model << " lambda " << row.lambda << ": mse " << row.mse
        << " ssim " << row.ssim << " ld " << row.ld << " er " << row.er << " sr " << row.sr << '\n';

  auto manifest = start_manifest("evaluate", config);
  manifest.dataset_checksum = file_digest(options.dataset / "records.csv");
  manifest.model_checksums["classifier"] = handle.checksum();
  manifest.model_checksums["generator_vqvae"] = set.manifest.model_checksums.count("vqvae")
                                                    ? set.manifest.model_checksums.at("vqvae")
                                                    : std::string();
  manifest.properties["test_accuracy"] = format_number(accuracy);
  manifest.properties["label_diversity"] = to_string(config.metrics.label_diversity);
  manifest.properties["reference"] = config.metrics.reference;
  write_manifest(options.out, manifest);
}

void cmd_retrain(const CommandOptions& options, std::ostream& log) {
  const auto config = resolve_config(options);
  apply_runtime(config);
  auto handle = load_classifier(options.classifier);
  const auto k = config.data.spec.class_count;
  const auto train = load_split(config, Split::Train);
  const auto test = load_split(config, Split::Test);
  const auto retrain = config.retrain_config();

  DirectoryLock lock(options.out);
  MetricsRow row;
  row.dataset = config.data.spec.name;
  std::optional<ClassifierHandle> tuned;
  auto manifest = start_manifest("retrain", config);

  if (options.mode == RetrainMode::FineTune) {
    const auto set = load_generated(options.dataset, handle.input_shape(), config.metrics.reference);
    std::vector<LabeledImage> candidates;
    candidates.reserve(set.rows.size());
    for (std::size_t i = 0; i < set.rows.size(); ++i)
      candidates.push_back(LabeledImage{set.adversarial[static_cast<std::int64_t>(i)],
                                        set.rows[i].source_class, set.rows[i].file});
    const auto selected = select_retraining_samples(
        candidates, handle, k, config.classifier.retrain_samples / k,
        config.classifier.retrain_selection, derive_seed(config.runtime.seed, {0x73656cULL}));
    log << "retraining with " << selected.size() << " adversarial samples\n";

    const auto records = score_generated(set, handle, config, model_label(handle, options.model_name));
    row = build_report(records, config.metrics.label_diversity).rows.front();
    row.ica_before = evaluate_accuracy(handle, test);
    tuned = fine_tune(handle, train, selected, retrain);
    row.ica_after = evaluate_accuracy(*tuned, test);

    auto out = open_output(options.out / "selected.csv");
    out << "file,label\n";
    for (const auto& s : selected) out << s.id << ',' << s.label << '\n';
    manifest.dataset_checksum = file_digest(options.dataset / "records.csv");
    manifest.properties["mode"] = "fine-tune";
    manifest.properties["selected"] = std::to_string(selected.size());
  } else {
    const auto split = random_control_split(train, test, k, config.classifier.random_control_count,
                                            derive_seed(config.runtime.seed, {0x726e64ULL}));
    log << "random control: moved " << split.moved.size() << " test images into training\n";
    row.model = model_label(handle, options.model_name) + "-random-control";
    row.sample_metrics = false;
    row.ica_before = evaluate_accuracy(handle, split.test);
    tuned = fine_tune(handle, train, split.moved, retrain);
    row.ica_after = evaluate_accuracy(*tuned, split.test);
    manifest.dataset_checksum = dataset_checksum(split.moved);
    manifest.properties["mode"] = "random-control";
    manifest.properties["moved"] = std::to_string(split.moved.size());
  }

  save_classifier(*tuned, options.out / "classifier");
  write_metrics_file(options.out / "metrics.csv", MetricsReport{{row}});
  const double ica = improved_classification_accuracy(*row.ica_before, *row.ica_after);
  log << "accuracy " << *row.ica_before << " -> " << *row.ica_after << " (ica " << ica << ")\n";

  manifest.model_checksums["classifier_before"] = handle.checksum();
  manifest.model_checksums["classifier_after"] = tuned->checksum();
  manifest.properties["accuracy_before"] = format_number(*row.ica_before);
  manifest.properties["accuracy_after"] = format_number(*row.ica_after);
  manifest.properties["ica"] = format_number(ica);
  write_manifest(options.out, manifest);
}

void cmd_report(const CommandOptions& options, std::ostream& log) {
  const auto config = resolve_config(options);
  require(!options.inputs.empty(), ErrorKind::InvalidArgument, "report needs at least one --input");
  std::vector<fs::path> files;
  for (const auto& input : options.inputs) {
    if (fs::is_regular_file(input)) {
      files.push_back(input);
    } else if (fs::is_directory(input)) {
      std::vector<fs::path> found;
      for (const auto& entry : fs::recursive_directory_iterator(input))
        if (entry.is_regular_file() && entry.path().filename() == "metrics.csv") found.push_back(entry.path());
      std::sort(found.begin(), found.end());
      files.insert(files.end(), found.begin(), found.end());
    } else {
      fail(ErrorKind::MissingArtifact, "report input " + input.string() + " does not exist");
    }
  }
  require(!files.empty(), ErrorKind::MissingArtifact, "no metrics.csv found under the report inputs");

  MetricsReport merged;
  std::string digest_input;
  for (const auto& file : files) {
    std::ifstream in(file);
    auto part = read_metrics_csv(in);
    merged.rows.insert(merged.rows.end(), part.rows.begin(), part.rows.end());
    digest_input += file_digest(file);
  }

  DirectoryLock lock(options.out);
  write_metrics_file(options.out / "report.csv", merged);
  {
    const SsimParams ssim;
    auto out = open_output(options.out / "report.md");
    out << "# vqfuzz report\n\n"
        << "SSIM: Gaussian window " << ssim.window << "x" << ssim.window << ", sigma "
        << format_number(ssim.sigma) << ", C1 " << format_number(ssim.c1) << ", C2 "
        << format_number(ssim.c2) << ", valid windows only.\n"
        << "MSE and SSIM are averaged over all generated samples against the "
        << config.metrics.reference << " image. LD counts "
        << (config.metrics.label_diversity == LabelDiversityMode::Misclassified
                ? "distinct wrong labels"
                : "all distinct predicted labels")
        << " per original.\n\n"
        << "| dataset | model | lambda | MSE | SSIM | LD | ER | SR | ICA |\n"
        << "|---|---|---|---|---|---|---|---|---|\n";
    auto fixed = [](double v, int digits) {
      std::ostringstream s;
      s << std::fixed << std::setprecision(digits) << v;
      return s.str();
    };
    for (const auto& r : merged.rows) {
      out << "| " << r.dataset << " | " << r.model << " | " << format_number(r.lambda) << " | ";
      if (r.sample_metrics)
        out << fixed(r.mse, 4) << " | " << fixed(r.ssim, 4) << " | " << fixed(r.ld, 2) << " | "
            << fixed(r.er * 100, 2) << "% | " << fixed(r.sr * 100, 1) << "% | ";
      else
        out << "| | | | | ";
      if (r.ica_before && r.ica_after)
        out << fixed(*r.ica_before * 100, 2) << " -> " << fixed(*r.ica_after * 100, 2);
      out << " |\n";
    }
  }
  log << "report: " << merged.rows.size() << " rows from " << files.size() << " files\n";

  auto manifest = start_manifest("report", config);
  manifest.dataset_checksum = sha256_hex(digest_input);
  manifest.properties["rows"] = std::to_string(merged.rows.size());
  write_manifest(options.out, manifest);
}

}  // namespace vqfuzz::cli
