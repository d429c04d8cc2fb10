#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "advkit/autodiff.hpp"
#include "advkit/dataset.hpp"

namespace advkit {

/// A parameterized classifier: ordered layer stack plus metadata. Parameters
/// are named "layer<i>.W" / "layer<i>.b" in declared order.
struct Classifier {
    std::string id;
    std::vector<Layer> layers;
    std::vector<int64_t> input_shape; // per-sample, e.g. {28,28}
    int num_classes = 0;
};

struct NamedParam {
    std::string name;
    Tensor* tensor;
};

std::vector<NamedParam> named_params(Classifier& model);
std::vector<NamedParam> named_params(const Classifier& model); // const_cast-free copy view
int64_t param_count(const Classifier& model);

/// 784-(width x D)-10 fully connected ReLU stack behind the fixed
/// normalization layer. D = number of hidden layers; D=0 is a single
/// affine map.
Classifier build_fnn(int depth, int64_t width = 500, uint64_t seed = 1,
                     double mean_pixel = 0.0, int64_t input_side = 28, int num_classes = 10);

/// Small convnet (two conv/pool stages, three affine layers) for 28x28
/// single-channel input.
Classifier build_lenet(uint64_t seed = 1, double mean_pixel = 0.0);

/// Batched logits for images [B,H,W] (or a stack matching input_shape).
Tensor model_forward(const Classifier& model, const Tensor& images);

/// Forward for one image given as [H,W] or [1,H,W]; returns logits [K].
Tensor model_forward_single(const Classifier& model, const Tensor& image);

std::vector<int> predict(const Classifier& model, const Tensor& images);
double accuracy(const Classifier& model, const LabeledImages& data);

struct TrainConfig {
    int epochs = 10;
    int batch_size = 64;
    double learning_rate = 0.1;
    double momentum = 0.9;
    uint64_t seed = 1;
};

struct EpochStats {
    int epoch = 0;
    double mean_loss = 0.0;
    double train_acc = 0.0;
    double test_acc = -1.0; // -1 when no test set was given
};

struct TrainLog {
    std::vector<EpochStats> epochs;
};

std::string training_log_csv(const TrainLog& log);

/// SGD with momentum on mean cross-entropy. Deterministic per seed;
/// raises Diverged (naming the epoch) if the loss stops being finite.
TrainLog train(Classifier& model, const LabeledImages& train_data,
               const LabeledImages* test_data, const TrainConfig& cfg);

// Checkpoints: magic, format version, JSON arch descriptor, then raw
// little-endian 64-bit reals per named parameter in declared order.
void save_checkpoint(const Classifier& model, const std::string& path);
Classifier load_checkpoint(const std::string& path);

/// Loads parameters from `path` into an existing model; errors if the
/// architectures differ.
void load_checkpoint_into(Classifier& model, const std::string& path);

std::string arch_json(const Classifier& model);
Classifier classifier_from_arch_json(const std::string& json_text);

} // namespace advkit
