#include "vqfuzz/classifier.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <numeric>

#include <nlohmann/json.hpp>

#include "vqfuzz/checkpoint.hpp"
#include "vqfuzz/error.hpp"
#include "vqfuzz/random.hpp"

namespace nn = torch::nn;
namespace fs = std::filesystem;

namespace vqfuzz {

const char* to_string(ClassifierArch arch) noexcept {
  switch (arch) {
    case ClassifierArch::LeNet4: return "lenet4";
    case ClassifierArch::LeNet5: return "lenet5";
    case ClassifierArch::VggSmall: return "vgg-small";
    case ClassifierArch::Vgg19: return "vgg19";
    case ClassifierArch::ResNet50: return "resnet50";
  }
  return "unknown";
}

ClassifierArch parse_classifier_arch(const std::string& text) {
  for (auto a : {ClassifierArch::LeNet4, ClassifierArch::LeNet5, ClassifierArch::VggSmall,
                 ClassifierArch::Vgg19, ClassifierArch::ResNet50})
    if (text == to_string(a)) return a;
  fail(ErrorKind::InvalidConfig, "unknown classifier architecture '" + text + "'");
}

namespace {

nn::Conv2d conv(std::int64_t in, std::int64_t out, std::int64_t k, std::int64_t pad) {
  return nn::Conv2d(nn::Conv2dOptions(in, out, k).padding(pad));
}

nn::MaxPool2d pool2() { return nn::MaxPool2d(nn::MaxPool2dOptions(2)); }

}  // namespace

ClassifierNetImpl::ClassifierNetImpl(ClassifierArch arch, const ImageShape& shape,
                                     std::int64_t class_count) {
  require(class_count >= 2, ErrorKind::InvalidArgument, "classifier needs at least 2 classes");
  const auto c = shape.channels;
  switch (arch) {
    case ClassifierArch::LeNet4:
      features_ = nn::Sequential(conv(c, 4, 5, 2), nn::ReLU(), pool2(), conv(4, 16, 5, 0),
                                 nn::ReLU(), pool2());
      break;
    case ClassifierArch::LeNet5:
      features_ = nn::Sequential(conv(c, 6, 5, 2), nn::ReLU(), pool2(), conv(6, 16, 5, 0),
                                 nn::ReLU(), pool2());
      break;
    case ClassifierArch::VggSmall:
      features_ = nn::Sequential(conv(c, 32, 3, 1), nn::ReLU(), conv(32, 32, 3, 1), nn::ReLU(),
                                 pool2(), conv(32, 64, 3, 1), nn::ReLU(), conv(64, 64, 3, 1),
                                 nn::ReLU(), pool2(), conv(64, 128, 3, 1), nn::ReLU(), pool2());
      break;
    case ClassifierArch::Vgg19:
    case ClassifierArch::ResNet50:
      fail(ErrorKind::InvalidArgument, std::string("architecture '") + to_string(arch) +
                                           "' is an ImageNet-scale descriptor and cannot be "
                                           "built at desk scale");
  }
  register_module("features", features_);

  std::int64_t flat = 0;
  {
    torch::NoGradGuard no_grad;
    flat = features_->forward(torch::zeros({1, c, shape.height, shape.width})).numel();
  }
  switch (arch) {
    case ClassifierArch::LeNet4:
      head_ = nn::Sequential(nn::Linear(flat, 120), nn::ReLU(), nn::Linear(120, class_count));
      break;
    case ClassifierArch::LeNet5:
      head_ = nn::Sequential(nn::Linear(flat, 120), nn::ReLU(), nn::Linear(120, 84), nn::ReLU(),
                             nn::Linear(84, class_count));
      break;
    default:
      head_ = nn::Sequential(nn::Linear(flat, 256), nn::ReLU(), nn::Linear(256, class_count));
      break;
  }
  register_module("head", head_);
}

torch::Tensor ClassifierNetImpl::forward(const torch::Tensor& x) {
  return head_->forward(features_->forward(x).flatten(1));
}

ClassifierHandle::ClassifierHandle(ClassifierArch arch, const ImageShape& shape,
                                   std::int64_t class_count, std::uint64_t init_seed)
    : arch_(arch), shape_(shape), class_count_(class_count) {
  torch::manual_seed(init_seed);
  net_ = ClassifierNet(arch, shape, class_count);
  net_->eval();
}

torch::Tensor ClassifierHandle::logits(const torch::Tensor& xs) const {
  require(xs.dim() == 4 && xs.size(1) == shape_.channels && xs.size(2) == shape_.height &&
              xs.size(3) == shape_.width,
          ErrorKind::ShapeMismatch,
          "classifier expects (N, " + to_string(shape_) + ") input, got " +
              std::string(c10::str(xs.sizes())));
  torch::NoGradGuard no_grad;
  auto net = net_;  // the holder copy shares weights; forward() is not const
  return net->forward(xs.to(torch::kFloat32));
}

std::vector<Prediction> ClassifierHandle::predict_batch(const torch::Tensor& xs) const {
  std::vector<Prediction> out;
  out.reserve(static_cast<std::size_t>(xs.size(0)));
  constexpr std::int64_t chunk = 1024;
  for (std::int64_t s = 0; s < xs.size(0); s += chunk) {
    auto probs = logits(xs.narrow(0, s, std::min(chunk, xs.size(0) - s)))
                     .to(torch::kFloat64)
                     .softmax(1)
                     .contiguous();
    const auto* p = probs.data_ptr<double>();
    for (std::int64_t r = 0; r < probs.size(0); ++r, p += class_count_) {
      Prediction pred;
      pred.probabilities.assign(p, p + class_count_);
      pred.label = std::max_element(pred.probabilities.begin(), pred.probabilities.end()) -
                   pred.probabilities.begin();
      out.push_back(std::move(pred));
    }
  }
  return out;
}

Prediction ClassifierHandle::predict(const torch::Tensor& x) const {
  require(x.dim() == 3, ErrorKind::ShapeMismatch, "predict expects a single (C, H, W) image");
  return predict_batch(x.unsqueeze(0)).front();
}

ClassifierNet& ClassifierHandle::network() {
  ++*white_box_accesses_;
  if (opaque_)
    fail(ErrorKind::BlackBoxViolation, "white-box access to an opaque classifier handle");
  return net_;
}

std::string ClassifierHandle::checksum() const { return weights_checksum(*net_); }

ClassifierHandle ClassifierHandle::clone() const {
  ClassifierHandle copy(arch_, shape_, class_count_, 0);
  torch::NoGradGuard no_grad;
  auto src = net_->named_parameters(true);
  for (auto& item : copy.net_->named_parameters(true)) item.value().copy_(src[item.key()]);
  copy.opaque_ = opaque_;
  return copy;
}

void ClassifierTrainConfig::validate() const {
  require(epochs >= 0, ErrorKind::InvalidArgument, "classifier epochs must be >= 0");
  require(batch_size >= 1, ErrorKind::InvalidArgument, "classifier batch_size must be >= 1");
  require(learning_rate > 0.0, ErrorKind::InvalidArgument, "classifier learning_rate must be positive");
}

void train_in_place(ClassifierHandle& handle, const torch::Tensor& data, const torch::Tensor& labels,
                    const ClassifierTrainConfig& config) {
  auto& net = handle.net_;
  torch::optim::Adam opt(net->parameters(), torch::optim::AdamOptions(config.learning_rate));
  const auto n = data.size(0);
  std::vector<std::int64_t> order(static_cast<std::size_t>(n));
  net->train();
  for (std::int64_t epoch = 0; epoch < config.epochs; ++epoch) {
    std::iota(order.begin(), order.end(), std::int64_t{0});
    Rng rng(config.seed, {0x636c73ULL, static_cast<std::uint64_t>(epoch)});
    rng.shuffle(std::span<std::int64_t>(order));
    const auto perm = torch::tensor(order, torch::kInt64);
    for (std::int64_t s = 0; s < n; s += config.batch_size) {
      const auto idx = perm.narrow(0, s, std::min(config.batch_size, n - s));
      opt.zero_grad();
      auto loss = torch::nn::functional::cross_entropy(net->forward(data.index_select(0, idx)),
                                                       labels.index_select(0, idx));
      const double value = loss.item<double>();
      if (!std::isfinite(value))
        fail(ErrorKind::NonFinite, "non-finite classifier loss in epoch " + std::to_string(epoch));
      loss.backward();
      opt.step();
    }
  }
  net->eval();
}

ClassifierHandle train_classifier(std::span<const LabeledImage> train, ClassifierArch arch,
                                  const ClassifierTrainConfig& config, std::int64_t class_count) {
  require(!train.empty(), ErrorKind::InvalidArgument, "cannot train a classifier on an empty dataset");
  config.validate();
  const ImageShape shape{train.front().pixels.size(0), train.front().pixels.size(1),
                         train.front().pixels.size(2)};
  ClassifierHandle handle(arch, shape, class_count, derive_seed(config.seed, {0x696e6974ULL}));
  for (const auto& img : train)
    require(img.label >= 0 && img.label < class_count, ErrorKind::InvalidArgument,
            "training label " + std::to_string(img.label) + " outside [0, " +
                std::to_string(class_count) + ")");
  train_in_place(handle, stack_pixels(train), stack_labels(train), config);
  return handle;
}

double evaluate_accuracy(const BlackBoxModel& model, std::span<const LabeledImage> test) {
  require(!test.empty(), ErrorKind::InvalidArgument, "cannot evaluate on an empty test set");
  std::int64_t correct = 0;
  constexpr std::size_t chunk = 2048;
  for (std::size_t s = 0; s < test.size(); s += chunk) {
    auto part = test.subspan(s, std::min(chunk, test.size() - s));
    auto preds = model.predict_batch(stack_pixels(part));
    for (std::size_t i = 0; i < part.size(); ++i) correct += preds[i].label == part[i].label ? 1 : 0;
  }
  return static_cast<double>(correct) / static_cast<double>(test.size());
}

ClassifierHandle fine_tune(const ClassifierHandle& handle, std::span<const LabeledImage> base_train,
                           std::span<const LabeledImage> adversarial,
                           const ClassifierTrainConfig& config) {
  config.validate();
  for (const auto& img : adversarial)
    require(img.label >= 0 && img.label < handle.class_count_, ErrorKind::InvalidArgument,
            "adversarial sample " + img.id + " has label " + std::to_string(img.label) +
                " outside [0, " + std::to_string(handle.class_count_) + ")");
  auto tuned = handle.clone();
  if (config.epochs == 0) return tuned;

  std::vector<LabeledImage> mixed(base_train.begin(), base_train.end());
  mixed.insert(mixed.end(), adversarial.begin(), adversarial.end());
  require(!mixed.empty(), ErrorKind::InvalidArgument, "fine-tuning needs training samples");
  train_in_place(tuned, stack_pixels(mixed), stack_labels(mixed), config);
  return tuned;
}

const char* to_string(RetrainSelection selection) noexcept {
  return selection == RetrainSelection::MisclassifiedFirst ? "misclassified-first" : "uniform";
}

RetrainSelection parse_retrain_selection(const std::string& text) {
  if (text == "misclassified-first") return RetrainSelection::MisclassifiedFirst;
  if (text == "uniform") return RetrainSelection::Uniform;
  fail(ErrorKind::InvalidConfig, "retrain selection must be 'misclassified-first' or 'uniform'");
}

std::vector<LabeledImage> select_retraining_samples(std::span<const LabeledImage> candidates,
                                                    const BlackBoxModel& model,
                                                    std::int64_t class_count,
                                                    std::int64_t per_class,
                                                    RetrainSelection policy, std::uint64_t seed) {
  require(per_class >= 0, ErrorKind::InvalidArgument, "per-class retraining count must be >= 0");
  std::vector<bool> wrong(candidates.size(), false);
  if (policy == RetrainSelection::MisclassifiedFirst && !candidates.empty()) {
    auto preds = model.predict_batch(stack_pixels(candidates));
    for (std::size_t i = 0; i < candidates.size(); ++i) wrong[i] = preds[i].label != candidates[i].label;
  }
  std::vector<LabeledImage> out;
  for (std::int64_t k = 0; k < class_count; ++k) {
    std::vector<std::size_t> pool;
    for (std::size_t i = 0; i < candidates.size(); ++i)
      if (candidates[i].label == k) pool.push_back(i);
    if (static_cast<std::int64_t>(pool.size()) < per_class)
      fail(ErrorKind::InsufficientSamples,
           "class " + std::to_string(k) + " has " + std::to_string(pool.size()) +
               " retraining candidates, " + std::to_string(per_class) + " requested");
    Rng rng(seed, {0x72657472ULL, static_cast<std::uint64_t>(k)});
    rng.shuffle(std::span<std::size_t>(pool));
    std::stable_partition(pool.begin(), pool.end(), [&](std::size_t i) { return wrong[i]; });
    for (std::int64_t i = 0; i < per_class; ++i) out.push_back(candidates[pool[static_cast<std::size_t>(i)]]);
  }
  return out;
}

RandomControlSplit random_control_split(std::span<const LabeledImage> train,
                                        std::span<const LabeledImage> test,
                                        std::int64_t class_count, std::int64_t count,
                                        std::uint64_t seed) {
  require(count >= 0 && count % class_count == 0, ErrorKind::InvalidArgument,
          "random-control count must be a multiple of the class count");
  const auto per_class = count / class_count;
  std::vector<bool> moved(test.size(), false);
  for (std::int64_t k = 0; k < class_count; ++k) {
    std::vector<std::size_t> pool;
    for (std::size_t i = 0; i < test.size(); ++i)
      if (test[i].label == k) pool.push_back(i);
    if (static_cast<std::int64_t>(pool.size()) < per_class)
      fail(ErrorKind::InsufficientSamples, "test class " + std::to_string(k) + " is too small");
    Rng rng(seed, {0x726e64ULL, static_cast<std::uint64_t>(k)});
    rng.shuffle(std::span<std::size_t>(pool));
    for (std::int64_t i = 0; i < per_class; ++i) moved[pool[static_cast<std::size_t>(i)]] = true;
  }
  RandomControlSplit split;
  split.train.assign(train.begin(), train.end());
  for (std::size_t i = 0; i < test.size(); ++i) {
    if (moved[i]) {
      split.moved.push_back(test[i]);
      split.train.push_back(test[i]);
    } else {
      split.test.push_back(test[i]);
    }
  }
  return split;
}

void save_classifier(const ClassifierHandle& handle, const fs::path& dir) {
  fs::create_directories(dir);
  save_weights(*handle.net_, dir / "weights.pt");
  nlohmann::json meta;
  meta["arch"] = to_string(handle.arch_);
  meta["channels"] = handle.shape_.channels;
  meta["height"] = handle.shape_.height;
  meta["width"] = handle.shape_.width;
  meta["class_count"] = handle.class_count_;
  meta["weights_checksum"] = handle.checksum();
  std::ofstream(dir / "classifier.json") << meta.dump(2) << "\n";
}

ClassifierHandle load_classifier(const fs::path& dir) {
  const auto meta_path = dir / "classifier.json";
  if (!fs::exists(meta_path)) fail(ErrorKind::MissingArtifact, "missing classifier descriptor " + meta_path.string());
  nlohmann::json meta;
  try {
    std::ifstream(meta_path) >> meta;
    ClassifierHandle handle(parse_classifier_arch(meta.at("arch").get<std::string>()),
                            ImageShape{meta.at("channels").get<std::int64_t>(),
                                       meta.at("height").get<std::int64_t>(),
                                       meta.at("width").get<std::int64_t>()},
                            meta.at("class_count").get<std::int64_t>(), 0);
    load_weights(*handle.net_, dir / "weights.pt");
    handle.net_->eval();
    return handle;
  } catch (const nlohmann::json::exception& e) {
    fail(ErrorKind::CorruptData, "cannot parse " + meta_path.string() + ": " + e.what());
  }
}

}  // namespace vqfuzz
