#pragma once

#include <cstdint>
#include <optional>
#include <string>
#include <vector>

#include "advkit/dataset.hpp"
#include "advkit/models.hpp"
#include "advkit/rng.hpp"

namespace advkit {

enum class AttackMethod { Fgsm, Igsm, MomentumIgsm, VrFgsm, VrIgsm, MomentumVrIgsm };

const char* method_name(AttackMethod m);
AttackMethod method_from_name(const std::string& name);

/// How ensemble members are combined before the loss: weighted logits
/// (default) or weighted softmax probabilities.
enum class EnsembleAverage { Logits, Probs };

struct AttackConfig {
    AttackMethod method = AttackMethod::Igsm;
    double epsilon = 15.0; // L-inf budget, pixel units
    double alpha = 5.0;    // step size
    int iterations = 5;    // T
    double mu = 1.0;       // momentum decay
    int m = 20;            // smoothing sample count
    double sigma = 15.0;   // smoothing noise std, pixel units
    bool targeted = false;
    bool clip_noise = false; // clip x+noise into [0,255] before the gradient eval
    EnsembleAverage average = EnsembleAverage::Logits;
    uint64_t seed = 0;

    bool uses_smoothing() const {
        return method == AttackMethod::VrFgsm || method == AttackMethod::VrIgsm ||
               method == AttackMethod::MomentumVrIgsm;
    }
    bool uses_momentum() const {
        return method == AttackMethod::MomentumIgsm || method == AttackMethod::MomentumVrIgsm;
    }

    void validate() const;

    std::string to_json() const;
    static AttackConfig from_json(const std::string& text);

    /// Named hyperparameter presets ("paper-mnist-fgsm", "paper-igsm",
    /// "paper-vr", "paper-imagenet-igsm", "paper-targeted", "paper-momentum").
    static AttackConfig preset(const std::string& name);
    static std::vector<std::string> preset_names();
};

/// One or more source models attacked jointly with convex weights.
struct EnsembleSource {
    std::vector<const Classifier*> models;
    std::vector<double> weights;

    static EnsembleSource single(const Classifier& m) { return {{&m}, {1.0}}; }
    static EnsembleSource equal(std::vector<const Classifier*> ms);

    void validate() const;
    std::string id() const;
    int num_classes() const { return models.front()->num_classes; }
};

/// Paired clean/adversarial images plus provenance.
struct AdvBatch {
    LabeledImages clean;
    Tensor adv; // same shape as clean.images
    std::vector<int> y_target; // empty for non-targeted attacks
    std::string source_id;
    AttackConfig config;
    std::vector<std::string> warnings;

    int64_t count() const { return clean.count(); }
};

/// Clamp candidate into the L-inf ball around `clean` intersected with the
/// [0,255] box. Idempotent.
Tensor project(const Tensor& cand, const Tensor& clean, double epsilon);

/// x + alpha * sign(direction), with sign(0) = 0. The caller projects.
Tensor sign_step(const Tensor& x, const Tensor& direction, double alpha);

struct LossGrad {
    double loss = 0.0;
    Tensor grad; // same shape as the input
};

/// Cross-entropy of the weighted ensemble output and its gradient w.r.t. a
/// single image ([H,W] or [1,H,W]).
LossGrad loss_and_grad(const EnsembleSource& source, const Tensor& x, int label,
                       EnsembleAverage average = EnsembleAverage::Logits);

/// Batched variant: images [B,H,W], one label per row; per-row losses are
/// summed into LossGrad::loss.
LossGrad loss_and_grad_batch(const EnsembleSource& source, const Tensor& x,
                             const std::vector<int>& labels,
                             EnsembleAverage average = EnsembleAverage::Logits);

/// Monte-Carlo estimate of the Gaussian-smoothed input gradient: mean of
/// gradients at m points x + sigma*xi. sigma=0 short-circuits to the plain
/// gradient (bitwise).
Tensor smoothed_grad(const EnsembleSource& source, const Tensor& x, int label, int m,
                     double sigma, Rng& rng, bool clip_noise = false,
                     EnsembleAverage average = EnsembleAverage::Logits);

/// Full attack loop over a batch of images; embarrassingly parallel across
/// images (worker pool, deterministic results independent of `workers`).
AdvBatch run_attack(const EnsembleSource& source, const LabeledImages& batch,
                    const AttackConfig& cfg, const std::vector<int>* y_target = nullptr,
                    int workers = 0);

// Persistence: manifest JSON + raw tensor blobs next to it.
void save_adv_batch(const AdvBatch& batch, const std::string& dir);
AdvBatch load_adv_batch(const std::string& dir);

// Raw tensor blob (shared with checkpoints' parameter encoding).
void save_tensor(const Tensor& t, const std::string& path);
Tensor load_tensor(const std::string& path);

} // namespace advkit
