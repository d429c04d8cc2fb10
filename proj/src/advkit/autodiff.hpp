#pragma once

#include <optional>
#include <string>
#include <variant>
#include <vector>

#include "advkit/tensor.hpp"

namespace advkit {

// Layer kinds. Exactly the set needed for the bundled model families:
// fully connected stacks and a small convnet. A fixed elementwise
// normalization is the first (non-trainable) layer of every model, so
// callers work in raw [0,255] pixel space.

struct NormalizeLayer {
    double divisor = 255.0;
    double mean = 0.0; // subtracted after division
};

struct FlattenLayer {}; // [B, ...] -> [B, prod]

struct ReshapeLayer {
    std::vector<int64_t> target; // per-sample shape, e.g. {1,28,28}
};

struct AffineLayer {
    Tensor W; // [out, in]
    Tensor b; // [out]
};

/// Stride-1 convolution with symmetric zero padding.
struct Conv2dLayer {
    Tensor W; // [out_ch, in_ch, kh, kw]
    Tensor b; // [out_ch]
    int64_t pad = 0;
};

struct ReluLayer {};

struct MaxPool2Layer {}; // 2x2 window, stride 2

using Layer = std::variant<NormalizeLayer, FlattenLayer, ReshapeLayer,
                           AffineLayer, Conv2dLayer, ReluLayer, MaxPool2Layer>;

const char* layer_kind_name(const Layer& l);
bool layer_has_params(const Layer& l);

/// One recorded op application: which layer ran, which node fed it, and the
/// cached activation needed for the backward sweep.
struct TapeNode {
    const Layer* op = nullptr; // null for the input node
    int input = -1;            // node id of the argument
    Tensor out;                // cached activation
    std::vector<int32_t> aux;  // max-pool argmax indices
};

/// Per-call computation record. Rebuilt on every forward; holds exactly one
/// backward's worth of cached activations. Insertion order is topological.
struct Tape {
    std::vector<TapeNode> nodes;
    int output = -1;

    const Tensor& out() const { return nodes[static_cast<size_t>(output)].out; }
};

struct ParamGrad {
    Tensor dW;
    Tensor db;
};

/// Gradients of a scalar loss: always w.r.t. the input, optionally w.r.t.
/// parameters (one slot per layer; empty tensors for parameterless layers).
struct Gradient {
    Tensor wrt_input;
    std::vector<ParamGrad> wrt_params;
};

/// Runs the layer stack on a batch ([B, ...]); records the tape for one
/// backward. Shape errors name the offending layer.
Tensor forward(const std::vector<Layer>& layers, const Tensor& x, Tape* tape);

/// Forward without a tape (inference only).
Tensor forward(const std::vector<Layer>& layers, const Tensor& x);

/// Backpropagates d(loss)/d(output) through the tape. When `param_grads` is
/// null only the input gradient is produced.
Tensor backward(const std::vector<Layer>& layers, const Tape& tape,
                const Tensor& dout, std::vector<ParamGrad>* param_grads);

/// -log softmax(logits)[label], stabilized with log-sum-exp.
double cross_entropy(const Tensor& logits, int64_t label);

/// Mean cross-entropy over a batch of logits [B, K].
double cross_entropy_batch(const Tensor& logits, const std::vector<int>& labels);

/// d(cross_entropy)/d(logits) = softmax - onehot, one row per sample.
Tensor cross_entropy_grad(const Tensor& logits, const std::vector<int>& labels);

/// softmax per row, stabilized.
Tensor softmax_rows(const Tensor& logits);

/// argmax with ties broken by lowest index.
int argmax_row(const double* row, int64_t k);

} // namespace advkit
