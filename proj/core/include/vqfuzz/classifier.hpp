#pragma once

#include <cstdint>
#include <filesystem>
#include <memory>
#include <span>
#include <string>
#include <vector>

#include <torch/torch.h>

#include "vqfuzz/data.hpp"

namespace vqfuzz {

struct ClassifierTrainConfig;

// LeNet-4 / LeNet-5 style CNNs for 28x28 digits and a small VGG-style CNN for
// 32x32 colour images. Vgg19 and ResNet50 are named so configs can refer to
// them, but only as descriptors: building one throws InvalidArgument.
enum class ClassifierArch { LeNet4, LeNet5, VggSmall, Vgg19, ResNet50 };

const char* to_string(ClassifierArch arch) noexcept;
ClassifierArch parse_classifier_arch(const std::string& text);

struct Prediction {
  std::int64_t label = 0;                // argmax, ties to the lowest index
  std::vector<double> probabilities;    // length K, sums to 1
};

// Query-only view of a model under test.
class BlackBoxModel {
 public:
  virtual ~BlackBoxModel() = default;
  // x: (C, H, W)
  virtual Prediction predict(const torch::Tensor& x) const = 0;
  // xs: (N, C, H, W)
  virtual std::vector<Prediction> predict_batch(const torch::Tensor& xs) const = 0;
  virtual ImageShape input_shape() const = 0;
  virtual std::int64_t class_count() const = 0;
};

class ClassifierNetImpl : public torch::nn::Module {
 public:
  ClassifierNetImpl(ClassifierArch arch, const ImageShape& shape, std::int64_t class_count);
  torch::Tensor forward(const torch::Tensor& x);  // logits (N, K)

 private:
  torch::nn::Sequential features_{nullptr};
  torch::nn::Sequential head_{nullptr};
};
TORCH_MODULE(ClassifierNet);

class ClassifierHandle : public BlackBoxModel {
 public:
  ClassifierHandle(ClassifierArch arch, const ImageShape& shape, std::int64_t class_count,
                   std::uint64_t init_seed);

  Prediction predict(const torch::Tensor& x) const override;
  std::vector<Prediction> predict_batch(const torch::Tensor& xs) const override;
  ImageShape input_shape() const override { return shape_; }
  std::int64_t class_count() const override { return class_count_; }

  ClassifierArch arch() const { return arch_; }

  // With the flag set, only predict / predict_batch may be used.
  bool opaque() const { return opaque_; }
  void set_opaque(bool opaque) { opaque_ = opaque; }

  // White-box access. Throws BlackBoxViolation on an opaque handle; every
  // call is counted so audits can check that nothing outside the classifier
  // module reads weights.
  ClassifierNet& network();
  std::int64_t white_box_accesses() const { return *white_box_accesses_; }

  std::string checksum() const;
  ClassifierHandle clone() const;

 private:
  friend ClassifierHandle train_classifier(std::span<const LabeledImage>, ClassifierArch,
                                           const ClassifierTrainConfig&, std::int64_t);
  friend ClassifierHandle fine_tune(const ClassifierHandle&, std::span<const LabeledImage>,
                                    std::span<const LabeledImage>,
                                    const ClassifierTrainConfig&);
  friend void save_classifier(const ClassifierHandle&, const std::filesystem::path&);
  friend ClassifierHandle load_classifier(const std::filesystem::path&);
  friend void train_in_place(ClassifierHandle&, const torch::Tensor&, const torch::Tensor&,
                             const ClassifierTrainConfig&);

  torch::Tensor logits(const torch::Tensor& xs) const;

  ClassifierArch arch_;
  ImageShape shape_;
  std::int64_t class_count_;
  bool opaque_ = false;
  ClassifierNet net_{nullptr};
  std::shared_ptr<std::int64_t> white_box_accesses_ = std::make_shared<std::int64_t>(0);
};

struct ClassifierTrainConfig {
  std::int64_t epochs = 4;
  std::int64_t batch_size = 128;
  double learning_rate = 1e-3;
  std::uint64_t seed = 0;

  void validate() const;
};

// Cross-entropy training with Adam; deterministic given config.seed.
ClassifierHandle train_classifier(std::span<const LabeledImage> train, ClassifierArch arch,
                                  const ClassifierTrainConfig& config,
                                  std::int64_t class_count = 10);

// Fraction of samples whose predicted label equals the ground truth.
double evaluate_accuracy(const BlackBoxModel& model, std::span<const LabeledImage> test);

// Mixes `adversarial` (labelled with their source class) into `base_train`
// and continues training a copy of `handle`. The input handle is unchanged;
// with zero epochs the copy is returned as is.
ClassifierHandle fine_tune(const ClassifierHandle& handle, std::span<const LabeledImage> base_train,
                           std::span<const LabeledImage> adversarial,
                           const ClassifierTrainConfig& config);

enum class RetrainSelection { MisclassifiedFirst, Uniform };

const char* to_string(RetrainSelection selection) noexcept;
RetrainSelection parse_retrain_selection(const std::string& text);

// Picks `per_class` candidates from every class. MisclassifiedFirst prefers
// samples the model currently gets wrong, in seeded random order.
std::vector<LabeledImage> select_retraining_samples(std::span<const LabeledImage> candidates,
                                                    const BlackBoxModel& model,
                                                    std::int64_t class_count,
                                                    std::int64_t per_class,
                                                    RetrainSelection policy, std::uint64_t seed);

// The "random" control: moves `count` test images (equal share per class)
// into the training set.
struct RandomControlSplit {
  std::vector<LabeledImage> train;
  std::vector<LabeledImage> test;
  std::vector<LabeledImage> moved;
};

RandomControlSplit random_control_split(std::span<const LabeledImage> train,
                                        std::span<const LabeledImage> test,
                                        std::int64_t class_count, std::int64_t count,
                                        std::uint64_t seed);

// weights.pt + classifier.json inside `dir`.
void save_classifier(const ClassifierHandle& handle, const std::filesystem::path& dir);
ClassifierHandle load_classifier(const std::filesystem::path& dir);

}  // namespace vqfuzz
