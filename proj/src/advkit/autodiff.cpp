#include "advkit/autodiff.hpp"

#include <algorithm>
#include <cmath>
#include <cstring>
#include <sstream>

namespace advkit {

namespace {

[[noreturn]] void shape_fail(size_t layer_idx, const Layer& l,
                             const std::string& expect, const std::vector<int64_t>& got) {
    std::ostringstream os;
    os << "layer " << layer_idx << " (" << layer_kind_name(l) << "): expected input "
       << expect << ", got " << shape_str(got);
    fail(ErrorCode::Shape, os.str());
}

int64_t per_sample_numel(const Tensor& t) {
    int64_t n = 1;
    for (size_t i = 1; i < t.shape.size(); ++i) n *= t.shape[i];
    return n;
}

} // namespace

const char* layer_kind_name(const Layer& l) {
    switch (l.index()) {
        case 0: return "normalize";
        case 1: return "flatten";
        case 2: return "reshape";
        case 3: return "affine";
        case 4: return "conv2d";
        case 5: return "relu";
        case 6: return "maxpool2";
    }
    return "?";
}

bool layer_has_params(const Layer& l) {
    return std::holds_alternative<AffineLayer>(l) || std::holds_alternative<Conv2dLayer>(l);
}

// ---------------------------------------------------------------------------
// per-layer forward

static Tensor fwd_normalize(const NormalizeLayer& l, const Tensor& x) {
    Tensor y(x.shape);
    const double inv = 1.0 / l.divisor;
    for (int64_t i = 0; i < x.numel(); ++i) y.data[i] = x.data[i] * inv - l.mean;
    return y;
}

static Tensor fwd_affine(const AffineLayer& l, const Tensor& x, size_t idx, const Layer& self) {
    const int64_t out = l.W.dim(0), in = l.W.dim(1);
    if (x.rank() != 2 || x.dim(1) != in)
        shape_fail(idx, self, "[*," + std::to_string(in) + "]", x.shape);
    const int64_t B = x.dim(0);
    Tensor y({B, out});
    matmul_wt(x.ptr(), l.W.ptr(), y.ptr(), B, in, out);
    for (int64_t b = 0; b < B; ++b) {
        double* yr = y.ptr() + b * out;
        for (int64_t o = 0; o < out; ++o) yr[o] += l.b.data[static_cast<size_t>(o)];
    }
    return y;
}

static Tensor fwd_conv(const Conv2dLayer& l, const Tensor& x, size_t idx, const Layer& self) {
    const int64_t oc = l.W.dim(0), ic = l.W.dim(1), kh = l.W.dim(2), kw = l.W.dim(3);
    if (x.rank() != 4 || x.dim(1) != ic)
        shape_fail(idx, self, "[*," + std::to_string(ic) + ",H,W]", x.shape);
    const int64_t B = x.dim(0), H = x.dim(2), W = x.dim(3), p = l.pad;
    const int64_t OH = H + 2 * p - kh + 1, OW = W + 2 * p - kw + 1;
    if (OH <= 0 || OW <= 0)
        shape_fail(idx, self, "input at least as large as the kernel", x.shape);
    Tensor y({B, oc, OH, OW});
    for (int64_t b = 0; b < B; ++b) {
        const double* xb = x.ptr() + b * ic * H * W;
        double* yb = y.ptr() + b * oc * OH * OW;
        for (int64_t o = 0; o < oc; ++o) {
            const double* wo = l.W.ptr() + o * ic * kh * kw;
            const double bias = l.b.data[static_cast<size_t>(o)];
            for (int64_t oy = 0; oy < OH; ++oy) {
                for (int64_t ox = 0; ox < OW; ++ox) {
                    double acc = bias;
                    for (int64_t c = 0; c < ic; ++c) {
                        const double* xc = xb + c * H * W;
                        const double* wc = wo + c * kh * kw;
                        for (int64_t ky = 0; ky < kh; ++ky) {
                            const int64_t iy = oy + ky - p;
                            if (iy < 0 || iy >= H) continue;
                            for (int64_t kx = 0; kx < kw; ++kx) {
                                const int64_t ix = ox + kx - p;
                                if (ix < 0 || ix >= W) continue;
                                acc += xc[iy * W + ix] * wc[ky * kw + kx];
                            }
                        }
                    }
                    yb[(o * OH + oy) * OW + ox] = acc;
                }
            }
        }
    }
    return y;
}

static Tensor fwd_maxpool(const Tensor& x, std::vector<int32_t>& aux,
                          size_t idx, const Layer& self) {
    if (x.rank() != 4 || x.dim(2) % 2 != 0 || x.dim(3) % 2 != 0)
        shape_fail(idx, self, "[*,C,H,W] with even H and W", x.shape);
    const int64_t B = x.dim(0), C = x.dim(1), H = x.dim(2), W = x.dim(3);
    const int64_t OH = H / 2, OW = W / 2;
    Tensor y({B, C, OH, OW});
    aux.assign(static_cast<size_t>(y.numel()), 0);
    int64_t oi = 0;
    for (int64_t bc = 0; bc < B * C; ++bc) {
        const double* plane = x.ptr() + bc * H * W;
        for (int64_t oy = 0; oy < OH; ++oy) {
            for (int64_t ox = 0; ox < OW; ++ox, ++oi) {
                int64_t base = (2 * oy) * W + 2 * ox;
                int64_t best = base;
                double bv = plane[base];
                for (int k = 1; k < 4; ++k) {
                    int64_t cand = base + (k >> 1) * W + (k & 1);
                    if (plane[cand] > bv) {
                        bv = plane[cand];
                        best = cand;
                    }
                }
                y.data[static_cast<size_t>(oi)] = bv;
                aux[static_cast<size_t>(oi)] = static_cast<int32_t>(bc * H * W + best);
            }
        }
    }
    return y;
}

Tensor forward(const std::vector<Layer>& layers, const Tensor& x, Tape* tape) {
    if (x.rank() < 1) fail(ErrorCode::Shape, "forward: input tensor has no shape");
    Tensor cur = x;
    if (tape) {
        tape->nodes.clear();
        tape->nodes.push_back(TapeNode{nullptr, -1, cur, {}});
    }
    for (size_t i = 0; i < layers.size(); ++i) {
        const Layer& l = layers[i];
        std::vector<int32_t> aux;
        Tensor next;
        switch (l.index()) {
            case 0:
                next = fwd_normalize(std::get<NormalizeLayer>(l), cur);
                break;
            case 1:
                next = cur.reshaped({cur.dim(0), per_sample_numel(cur)});
                break;
            case 2: {
                const auto& target = std::get<ReshapeLayer>(l).target;
                std::vector<int64_t> s;
                s.push_back(cur.dim(0));
                s.insert(s.end(), target.begin(), target.end());
                if (Tensor::numel_of(s) != cur.numel())
                    shape_fail(i, l, "per-sample numel " + std::to_string(Tensor::numel_of(target)), cur.shape);
                next = cur.reshaped(std::move(s));
                break;
            }
            case 3:
                next = fwd_affine(std::get<AffineLayer>(l), cur, i, l);
                break;
            case 4:
                next = fwd_conv(std::get<Conv2dLayer>(l), cur, i, l);
                break;
            case 5: {
                next = Tensor(cur.shape);
                for (int64_t j = 0; j < cur.numel(); ++j)
                    next.data[j] = cur.data[j] > 0.0 ? cur.data[j] : 0.0;
                break;
            }
            case 6:
                next = fwd_maxpool(cur, aux, i, l);
                break;
        }
        cur = next;
        if (tape) {
            TapeNode node;
            node.op = &l;
            node.input = static_cast<int>(tape->nodes.size()) - 1;
            node.out = cur;
            node.aux = std::move(aux);
            tape->nodes.push_back(std::move(node));
        }
    }
    if (tape) tape->output = static_cast<int>(tape->nodes.size()) - 1;
    return cur;
}

Tensor forward(const std::vector<Layer>& layers, const Tensor& x) {
    return forward(layers, x, nullptr);
}

// ---------------------------------------------------------------------------
// backward

Tensor backward(const std::vector<Layer>& layers, const Tape& tape,
                const Tensor& dout, std::vector<ParamGrad>* param_grads) {
    if (tape.output < 0) fail(ErrorCode::Runtime, "backward: tape is empty");
    if (!dout.same_shape(tape.out()))
        fail(ErrorCode::Shape, "backward: cotangent shape " + shape_str(dout.shape) +
                                   " does not match output " + shape_str(tape.out().shape));
    if (param_grads) param_grads->assign(layers.size(), ParamGrad{});

    Tensor d = dout;
    // Sequential stack: walk the tape backwards, node k applied layers[k-1].
    for (size_t k = tape.nodes.size() - 1; k >= 1; --k) {
        const TapeNode& node = tape.nodes[k];
        const Tensor& in = tape.nodes[static_cast<size_t>(node.input)].out;
        const Layer& l = *node.op;
        const size_t li = k - 1;
        Tensor dx;
        switch (l.index()) {
            case 0: {
                const double inv = 1.0 / std::get<NormalizeLayer>(l).divisor;
                dx = Tensor(in.shape);
                for (int64_t i = 0; i < d.numel(); ++i) dx.data[i] = d.data[i] * inv;
                break;
            }
            case 1:
            case 2:
                dx = d.reshaped(in.shape);
                break;
            case 3: {
                const auto& a = std::get<AffineLayer>(l);
                const int64_t B = in.dim(0), I = a.W.dim(1), O = a.W.dim(0);
                dx = Tensor({B, I});
                for (int64_t b = 0; b < B; ++b) {
                    const double* dr = d.ptr() + b * O;
                    double* dxr = dx.ptr() + b * I;
                    for (int64_t o = 0; o < O; ++o) {
                        const double g = dr[o];
                        if (g == 0.0) continue;
                        const double* wr = a.W.ptr() + o * I;
                        for (int64_t i = 0; i < I; ++i) dxr[i] += g * wr[i];
                    }
                }
                if (param_grads) {
                    ParamGrad& pg = (*param_grads)[li];
                    pg.dW = Tensor({O, I});
                    pg.db = Tensor({O});
                    for (int64_t b = 0; b < B; ++b) {
                        const double* dr = d.ptr() + b * O;
                        const double* xr = in.ptr() + b * I;
                        for (int64_t o = 0; o < O; ++o) {
                            const double g = dr[o];
                            pg.db.data[static_cast<size_t>(o)] += g;
                            if (g == 0.0) continue;
                            double* wr = pg.dW.ptr() + o * I;
                            for (int64_t i = 0; i < I; ++i) wr[i] += g * xr[i];
                        }
                    }
                }
                break;
            }
            case 4: {
                const auto& c = std::get<Conv2dLayer>(l);
                const int64_t oc = c.W.dim(0), ic = c.W.dim(1), kh = c.W.dim(2), kw = c.W.dim(3);
                const int64_t B = in.dim(0), H = in.dim(2), W = in.dim(3), p = c.pad;
                const int64_t OH = node.out.dim(2), OW = node.out.dim(3);
                dx = Tensor(in.shape);
                ParamGrad* pg = nullptr;
                if (param_grads) {
                    pg = &(*param_grads)[li];
                    pg->dW = Tensor({oc, ic, kh, kw});
                    pg->db = Tensor({oc});
                }
                for (int64_t b = 0; b < B; ++b) {
                    const double* xb = in.ptr() + b * ic * H * W;
                    const double* db_ = d.ptr() + b * oc * OH * OW;
                    double* dxb = dx.ptr() + b * ic * H * W;
                    for (int64_t o = 0; o < oc; ++o) {
                        const double* wo = c.W.ptr() + o * ic * kh * kw;
                        double* dwo = pg ? pg->dW.ptr() + o * ic * kh * kw : nullptr;
                        for (int64_t oy = 0; oy < OH; ++oy) {
                            for (int64_t ox = 0; ox < OW; ++ox) {
                                const double g = db_[(o * OH + oy) * OW + ox];
                                if (pg) pg->db.data[static_cast<size_t>(o)] += g;
                                if (g == 0.0) continue;
                                for (int64_t cch = 0; cch < ic; ++cch) {
                                    const double* xc = xb + cch * H * W;
                                    double* dxc = dxb + cch * H * W;
                                    const double* wc = wo + cch * kh * kw;
                                    double* dwc = dwo ? dwo + cch * kh * kw : nullptr;
                                    for (int64_t ky = 0; ky < kh; ++ky) {
                                        const int64_t iy = oy + ky - p;
                                        if (iy < 0 || iy >= H) continue;
                                        for (int64_t kx = 0; kx < kw; ++kx) {
                                            const int64_t ix = ox + kx - p;
                                            if (ix < 0 || ix >= W) continue;
                                            dxc[iy * W + ix] += g * wc[ky * kw + kx];
                                            if (dwc) dwc[ky * kw + kx] += g * xc[iy * W + ix];
                                        }
                                    }
                                }
                            }
                        }
                    }
                }
                break;
            }
            case 5: {
                dx = Tensor(in.shape);
                for (int64_t i = 0; i < d.numel(); ++i)
                    dx.data[i] = node.out.data[i] > 0.0 ? d.data[i] : 0.0;
                break;
            }
            case 6: {
                dx = Tensor(in.shape);
                for (int64_t i = 0; i < d.numel(); ++i)
                    dx.data[static_cast<size_t>(node.aux[static_cast<size_t>(i)])] += d.data[i];
                break;
            }
        }
        d = std::move(dx);
    }
    return d;
}

// ---------------------------------------------------------------------------
// loss

static void check_logits_row(const Tensor& logits, int64_t label, int64_t k) {
    if (label < 0 || label >= k)
        fail(ErrorCode::InvalidArgument,
             "label " + std::to_string(label) + " out of range [0," + std::to_string(k) + ")");
    if (!logits.all_finite())
        fail(ErrorCode::Runtime, "cross_entropy: non-finite logits");
}

double cross_entropy(const Tensor& logits, int64_t label) {
    const Tensor* z = &logits;
    Tensor flat;
    if (logits.rank() == 2 && logits.dim(0) == 1) {
        flat = logits.reshaped({logits.dim(1)});
        z = &flat;
    }
    if (z->rank() != 1) fail(ErrorCode::Shape, "cross_entropy: logits must be a vector");
    const int64_t k = z->dim(0);
    check_logits_row(*z, label, k);
    double mx = z->data[0];
    for (int64_t i = 1; i < k; ++i) mx = std::max(mx, z->data[i]);
    double s = 0.0;
    for (int64_t i = 0; i < k; ++i) s += std::exp(z->data[i] - mx);
    return std::log(s) + mx - z->data[static_cast<size_t>(label)];
}

double cross_entropy_batch(const Tensor& logits, const std::vector<int>& labels) {
    if (logits.rank() != 2) fail(ErrorCode::Shape, "cross_entropy_batch: logits must be [B,K]");
    const int64_t B = logits.dim(0), K = logits.dim(1);
    if (static_cast<int64_t>(labels.size()) != B)
        fail(ErrorCode::Shape, "cross_entropy_batch: label count mismatch");
    if (B == 0) fail(ErrorCode::InvalidArgument, "cross_entropy_batch: empty batch");
    double total = 0.0;
    for (int64_t b = 0; b < B; ++b) {
        Tensor row({K});
        std::memcpy(row.ptr(), logits.ptr() + b * K, static_cast<size_t>(K) * sizeof(double));
        total += cross_entropy(row, labels[static_cast<size_t>(b)]);
    }
    return total / static_cast<double>(B);
}

Tensor softmax_rows(const Tensor& logits) {
    if (logits.rank() != 2) fail(ErrorCode::Shape, "softmax_rows: logits must be [B,K]");
    const int64_t B = logits.dim(0), K = logits.dim(1);
    Tensor p({B, K});
    for (int64_t b = 0; b < B; ++b) {
        const double* z = logits.ptr() + b * K;
        double* pr = p.ptr() + b * K;
        double mx = z[0];
        for (int64_t i = 1; i < K; ++i) mx = std::max(mx, z[i]);
        double s = 0.0;
        for (int64_t i = 0; i < K; ++i) {
            pr[i] = std::exp(z[i] - mx);
            s += pr[i];
        }
        const double inv = 1.0 / s;
        for (int64_t i = 0; i < K; ++i) pr[i] *= inv;
    }
    return p;
}

Tensor cross_entropy_grad(const Tensor& logits, const std::vector<int>& labels) {
    const int64_t B = logits.dim(0), K = logits.dim(1);
    if (static_cast<int64_t>(labels.size()) != B)
        fail(ErrorCode::Shape, "cross_entropy_grad: label count mismatch");
    Tensor g = softmax_rows(logits);
    for (int64_t b = 0; b < B; ++b) {
        const int y = labels[static_cast<size_t>(b)];
        if (y < 0 || y >= K)
            fail(ErrorCode::InvalidArgument, "label " + std::to_string(y) + " out of range");
        g.data[static_cast<size_t>(b * K + y)] -= 1.0;
    }
    return g;
}

int argmax_row(const double* row, int64_t k) {
    int best = 0;
    for (int64_t i = 1; i < k; ++i)
        if (row[i] > row[best]) best = static_cast<int>(i);
    return best;
}

} // namespace advkit
