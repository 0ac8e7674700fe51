#include "vqfuzz/config.hpp"

#include <algorithm>
#include <charconv>
#include <fstream>
#include <functional>
#include <set>
#include <sstream>

#include <boost/property_tree/ini_parser.hpp>
#include <boost/property_tree/ptree.hpp>

#include "vqfuzz/digest.hpp"
#include "vqfuzz/error.hpp"
#include "vqfuzz/random.hpp"

namespace vqfuzz {

namespace {

[[noreturn]] void bad_value(const std::string& where, const std::string& text, const char* expected) {
  fail(ErrorKind::InvalidConfig, where + ": '" + text + "' is not " + expected);
}

template <typename T>
T parse_integer(const std::string& where, const std::string& text) {
  T value{};
  auto res = std::from_chars(text.data(), text.data() + text.size(), value);
  if (text.empty() || res.ec != std::errc{} || res.ptr != text.data() + text.size())
    bad_value(where, text, "an integer");
  return value;
}

double parse_real(const std::string& where, const std::string& text) {
  double value = 0.0;
  auto res = std::from_chars(text.data(), text.data() + text.size(), value);
  if (text.empty() || res.ec != std::errc{} || res.ptr != text.data() + text.size())
    bad_value(where, text, "a number");
  return value;
}

bool parse_bool(const std::string& where, const std::string& text) {
  if (text == "true" || text == "1") return true;
  if (text == "false" || text == "0") return false;
  bad_value(where, text, "true or false");
}

// Rethrows enum parse failures with the offending key attached.
template <typename F>
auto parse_enum(const std::string& where, F&& parse) {
  try {
    return parse();
  } catch (const Error& e) {
    fail(ErrorKind::InvalidConfig, where + ": " + e.what());
  }
}

struct Field {
  const char* section;
  const char* key;
  std::function<std::string(const ExperimentConfig&)> get;
  std::function<void(ExperimentConfig&, const std::string& where, const std::string&)> set;
};

#define VQ_INT(sec, name, member)                                                              \
  Field{sec, name, [](const ExperimentConfig& c) { return std::to_string(c.member); },          \
        [](ExperimentConfig& c, const std::string& w, const std::string& v) {                   \
          c.member = parse_integer<std::decay_t<decltype(c.member)>>(w, v);                     \
        }}
#define VQ_REAL(sec, name, member)                                                             \
  Field{sec, name, [](const ExperimentConfig& c) { return format_number(c.member); },           \
        [](ExperimentConfig& c, const std::string& w, const std::string& v) {                   \
          c.member = parse_real(w, v);                                                          \
        }}
#define VQ_BOOL(sec, name, member)                                                             \
  Field{sec, name, [](const ExperimentConfig& c) { return std::string(c.member ? "true" : "false"); }, \
        [](ExperimentConfig& c, const std::string& w, const std::string& v) {                   \
          c.member = parse_bool(w, v);                                                          \
        }}
#define VQ_ENUM(sec, name, member, parser)                                                     \
  Field{sec, name, [](const ExperimentConfig& c) { return std::string(to_string(c.member)); },   \
        [](ExperimentConfig& c, const std::string& w, const std::string& v) {                   \
          c.member = parse_enum(w, [&] { return parser(v); });                                  \
        }}

const std::vector<Field>& fields() {
  static const std::vector<Field> table = {
      Field{"data", "name", [](const ExperimentConfig& c) { return c.data.spec.name; },
            [](ExperimentConfig& c, const std::string&, const std::string& v) { c.data.spec.name = v; }},
      Field{"data", "dir", [](const ExperimentConfig& c) { return c.data.dir.string(); },
            [](ExperimentConfig& c, const std::string&, const std::string& v) { c.data.dir = v; }},
      VQ_INT("data", "class_count", data.spec.class_count),
      VQ_INT("data", "channels", data.spec.image_shape.channels),
      VQ_INT("data", "height", data.spec.image_shape.height),
      VQ_INT("data", "width", data.spec.image_shape.width),
      VQ_INT("data", "train_limit", data.train_limit),
      VQ_INT("data", "test_limit", data.test_limit),

      VQ_INT("vqvae", "hidden_channels", vqvae.hidden_channels),
      VQ_INT("vqvae", "residual_channels", vqvae.residual_channels),
      VQ_INT("vqvae", "residual_blocks", vqvae.residual_blocks),
      VQ_INT("vqvae", "embedding_dim", vqvae.embedding_dim),
      VQ_INT("vqvae", "num_codes", vqvae.num_codes),

      VQ_INT("pretrain", "epochs", pretrain.epochs),
      VQ_INT("pretrain", "batch_size", pretrain.batch_size),
      VQ_REAL("pretrain", "learning_rate", pretrain.learning_rate),
      VQ_REAL("pretrain", "lr_decay", pretrain.lr_decay),
      VQ_INT("pretrain", "lr_decay_every", pretrain.lr_decay_every),
      VQ_REAL("pretrain", "alpha", pretrain.alpha),
      VQ_REAL("pretrain", "beta", pretrain.beta),
      VQ_ENUM("pretrain", "codebook_loss_convention", pretrain.convention,
              parse_codebook_loss_convention),
      VQ_INT("pretrain", "dead_code_restart_every", pretrain.dead_code_restart_every),

      VQ_REAL("adversary", "lambda", adversary.lambda),
      VQ_INT("adversary", "epochs", adversary.epochs),
      VQ_INT("adversary", "batch_size", adversary.batch_size),
      VQ_REAL("adversary", "gan_weight_z", adversary.gan_weight_z),
      VQ_REAL("adversary", "gan_weight_x", adversary.gan_weight_x),
      VQ_REAL("adversary", "discriminator_lr", adversary.discriminator_lr),
      VQ_REAL("adversary", "generator_lr", adversary.generator_lr),
      VQ_BOOL("adversary", "use_quantizer", adversary.use_quantizer),
      VQ_BOOL("adversary", "use_discriminators", adversary.use_discriminators),

      Field{"generate", "lambda",
            [](const ExperimentConfig& c) {
              return c.generate.lambda ? format_number(*c.generate.lambda) : std::string("auto");
            },
            [](ExperimentConfig& c, const std::string& w, const std::string& v) {
              if (v == "auto")
                c.generate.lambda.reset();
              else
                c.generate.lambda = parse_real(w, v);
            }},
      VQ_INT("generate", "originals_per_class", generate.originals_per_class),
      VQ_INT("generate", "perturbers_per_class", generate.perturbers_per_class),
      VQ_ENUM("generate", "split", generate.split, parse_split),

      VQ_ENUM("classifier", "arch", classifier.arch, parse_classifier_arch),
      VQ_INT("classifier", "epochs", classifier.train.epochs),
      VQ_INT("classifier", "batch_size", classifier.train.batch_size),
      VQ_REAL("classifier", "learning_rate", classifier.train.learning_rate),
      VQ_INT("classifier", "retrain_epochs", classifier.retrain_epochs),
      VQ_INT("classifier", "retrain_samples", classifier.retrain_samples),
      VQ_ENUM("classifier", "retrain_selection", classifier.retrain_selection,
              parse_retrain_selection),
      VQ_INT("classifier", "random_control_count", classifier.random_control_count),

      VQ_ENUM("metrics", "label_diversity", metrics.label_diversity, parse_label_diversity_mode),
      Field{"metrics", "reference", [](const ExperimentConfig& c) { return c.metrics.reference; },
            [](ExperimentConfig& c, const std::string&, const std::string& v) {
              c.metrics.reference = v;
            }},
      VQ_INT("metrics", "grid_pairs", metrics.grid_pairs),

      VQ_INT("runtime", "seed", runtime.seed),
      VQ_INT("runtime", "threads", runtime.threads),
  };
  return table;
}

#undef VQ_INT
#undef VQ_REAL
#undef VQ_BOOL
#undef VQ_ENUM

const char* const kSectionOrder[] = {"data",       "vqvae",   "pretrain", "adversary",
                                     "generate",   "classifier", "metrics", "runtime"};

}  // namespace

void ExperimentConfig::validate() const {
  auto check = [](bool ok, const std::string& msg) {
    if (!ok) fail(ErrorKind::InvalidConfig, msg);
  };
  try {
    data.spec.validate();
    auto arch = vqvae;
    arch.image = data.spec.image_shape;
    arch.validate();
    pretrain.validate();
    adversary.validate();
    generation_config().validate();
    classifier.train.validate();
  } catch (const Error& e) {
    if (e.kind() == ErrorKind::InvalidConfig) throw;
    fail(ErrorKind::InvalidConfig, e.what());
  }
  check(data.train_limit >= 0 && data.test_limit >= 0, "data limits must be >= 0");
  check(classifier.retrain_epochs >= 0, "classifier.retrain_epochs must be >= 0");
  check(classifier.retrain_samples >= 0 && classifier.retrain_samples % data.spec.class_count == 0,
        "classifier.retrain_samples must be a non-negative multiple of data.class_count");
  check(classifier.random_control_count >= 0 &&
            classifier.random_control_count % data.spec.class_count == 0,
        "classifier.random_control_count must be a non-negative multiple of data.class_count");
  check(metrics.reference == "original" || metrics.reference == "reconstruction",
        "metrics.reference must be 'original' or 'reconstruction'");
  check(metrics.grid_pairs >= 0, "metrics.grid_pairs must be >= 0");
  check(runtime.threads >= 1, "runtime.threads must be >= 1");
}

PretrainConfig ExperimentConfig::pretrain_config() const {
  auto c = pretrain;
  c.seed = derive_seed(runtime.seed, {0x7072657472ULL});
  return c;
}

JointTrainingConfig ExperimentConfig::joint_config() const {
  auto c = adversary;
  c.alpha = pretrain.alpha;
  c.beta = pretrain.beta;
  c.convention = pretrain.convention;
  c.seed = derive_seed(runtime.seed, {0x6a6f696eULL});
  return c;
}

GenerationConfig ExperimentConfig::generation_config() const {
  GenerationConfig c;
  c.lambda = generation_lambda();
  c.originals_per_class = generate.originals_per_class;
  c.perturbers_per_class = generate.perturbers_per_class;
  c.seed = derive_seed(runtime.seed, {0x67656eULL});
  return c;
}

ClassifierTrainConfig ExperimentConfig::classifier_config() const {
  auto c = classifier.train;
  c.seed = derive_seed(runtime.seed, {0x636c66ULL});
  return c;
}

ClassifierTrainConfig ExperimentConfig::retrain_config() const {
  auto c = classifier.train;
  c.epochs = classifier.retrain_epochs;
  c.seed = derive_seed(runtime.seed, {0x726574ULL});
  return c;
}

ExperimentConfig parse_config(const std::string& text) {
  boost::property_tree::ptree tree;
  std::istringstream in(text);
  try {
    boost::property_tree::ini_parser::read_ini(in, tree);
  } catch (const boost::property_tree::ini_parser_error& e) {
    fail(ErrorKind::InvalidConfig, std::string("config syntax error: ") + e.what());
  }

  ExperimentConfig config;
  std::set<std::string> known_sections(std::begin(kSectionOrder), std::end(kSectionOrder));
  for (const auto& [section, body] : tree) {
    if (!known_sections.count(section)) {
      if (body.empty())
        fail(ErrorKind::InvalidConfig, "key '" + section + "' appears outside any section");
      fail(ErrorKind::InvalidConfig, "unknown config section [" + section + "]");
    }
    for (const auto& [key, value] : body) {
      const std::string where = section + "." + key;
      auto it = std::find_if(fields().begin(), fields().end(), [&](const Field& f) {
        return section == f.section && key == f.key;
      });
      if (it == fields().end()) fail(ErrorKind::InvalidConfig, "unknown config key '" + where + "'");
      it->set(config, where, value.data());
    }
  }
  config.vqvae.image = config.data.spec.image_shape;
  config.validate();
  return config;
}

ExperimentConfig load_config(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) fail(ErrorKind::InvalidConfig, "cannot read config file " + path.string());
  std::ostringstream text;
  text << in.rdbuf();
  return parse_config(text.str());
}

std::string canonical_text(const ExperimentConfig& config) {
  std::ostringstream out;
  for (const char* section : kSectionOrder) {
    out << '[' << section << "]\n";
    for (const auto& f : fields())
      if (std::string_view(f.section) == section) out << f.key << " = " << f.get(config) << '\n';
  }
  return out.str();
}

std::string config_hash(const ExperimentConfig& config) { return sha256_hex(canonical_text(config)); }

}  // namespace vqfuzz
