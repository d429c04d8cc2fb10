#pragma once

#include <map>
#include <optional>
#include <string>
#include <vector>

#include "advkit/attack.hpp"

namespace advkit {

/// Success/destruction metrics keyed by (source, target, method).
struct EvalEntry {
    double top1_nontarget = -1.0;
    double top5_nontarget = -1.0;
    double top1_target = -1.0; // -1 when not applicable
    double top5_target = -1.0;
    int64_t n = 0;
};

struct EvalReport {
    std::map<std::tuple<std::string, std::string, std::string>, EvalEntry> entries;

    std::string to_csv() const;  // source,target,method,metric,value,n
    std::string to_json() const;
};

/// True label pushed out of the top-k logits (k=1: plain misclassification).
/// Ties are broken toward the lowest class index.
double success_rate_nontarget(const Classifier& target_model, const AdvBatch& adv, int topk = 1);

/// Target label pulled into the top-k logits.
double success_rate_target(const Classifier& target_model, const AdvBatch& adv, int topk = 1);

/// True iff `label` is among the k largest entries of `logits` (ties broken
/// toward lower indices).
bool in_topk(const double* logits, int64_t K, int label, int k);

struct TransferOptions {
    bool include_diagonal = false; // white-box cells
    int topk_extra = 5;            // also report this top-k
    int workers = 0;
};

/// Attack from every source model, evaluate on every other model.
/// `data` should already be filtered with select_correct over all models.
EvalReport transfer_matrix(const std::vector<const Classifier*>& models,
                           const LabeledImages& data, const AttackConfig& cfg,
                           const TransferOptions& opts = {});

/// Fraction of originally-correct, successfully-attacked images whose
/// adversarial effect is undone by the transform.
double destruction_rate(const Classifier& model, const LabeledImages& clean,
                        const Tensor& adv, const Tensor& transformed);

// ---------------------------------------------------------------------------
// image transforms

enum class TransformKind { Rotation, GaussianNoise, GaussianBlur, JpegLike };

struct TransformSpec {
    TransformKind kind = TransformKind::Rotation;
    double value = 0.0; // degrees / noise std / blur std / quality

    void validate() const;
    std::string name() const;
};

/// Applies the transform to every image of [N,H,W]; deterministic given
/// (spec, seed). The seed only matters for the noise transform.
Tensor apply_transform(const Tensor& images, const TransformSpec& spec, uint64_t seed = 0);

} // namespace advkit
