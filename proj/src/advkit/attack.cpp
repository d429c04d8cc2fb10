#include "advkit/attack.hpp"

#include <algorithm>
#include <atomic>
#include <cmath>
#include <cstring>
#include <filesystem>
#include <fstream>

#include <json.hpp>

#include "advkit/parallel.hpp"

namespace advkit {

using nlohmann::json;
namespace fs = std::filesystem;

const char* method_name(AttackMethod m) {
    switch (m) {
        case AttackMethod::Fgsm: return "fgsm";
        case AttackMethod::Igsm: return "igsm";
        case AttackMethod::MomentumIgsm: return "m-igsm";
        case AttackMethod::VrFgsm: return "vr-fgsm";
        case AttackMethod::VrIgsm: return "vr-igsm";
        case AttackMethod::MomentumVrIgsm: return "m-vr-igsm";
    }
    return "?";
}

AttackMethod method_from_name(const std::string& name) {
    if (name == "fgsm") return AttackMethod::Fgsm;
    if (name == "igsm") return AttackMethod::Igsm;
    if (name == "m-igsm") return AttackMethod::MomentumIgsm;
    if (name == "vr-fgsm") return AttackMethod::VrFgsm;
    if (name == "vr-igsm") return AttackMethod::VrIgsm;
    if (name == "m-vr-igsm") return AttackMethod::MomentumVrIgsm;
    fail(ErrorCode::InvalidArgument, "unknown attack method '" + name + "'");
}

void AttackConfig::validate() const {
    if (epsilon <= 0.0) fail(ErrorCode::InvalidArgument, "attack config: epsilon must be > 0");
    if (iterations < 1) fail(ErrorCode::InvalidArgument, "attack config: T must be >= 1");
    if (alpha <= 0.0) fail(ErrorCode::InvalidArgument, "attack config: alpha must be > 0");
    if (mu < 0.0) fail(ErrorCode::InvalidArgument, "attack config: mu must be >= 0");
    if (sigma < 0.0) fail(ErrorCode::InvalidArgument, "attack config: sigma must be >= 0");
    if (uses_smoothing() && m < 1)
        fail(ErrorCode::InvalidArgument, "attack config: m must be >= 1 for vr methods");
    if ((method == AttackMethod::Fgsm || method == AttackMethod::VrFgsm) &&
        (iterations != 1 || alpha != epsilon))
        fail(ErrorCode::InvalidArgument,
             "attack config: fgsm variants require T=1 and alpha=epsilon");
}

std::string AttackConfig::to_json() const {
    json j;
    j["method"] = method_name(method);
    j["epsilon"] = epsilon;
    j["alpha"] = alpha;
    j["T"] = iterations;
    j["mu"] = mu;
    j["m"] = m;
    j["sigma"] = sigma;
    j["targeted"] = targeted;
    j["clip_noise"] = clip_noise;
    j["average"] = average == EnsembleAverage::Logits ? "logits" : "probs";
    j["seed"] = seed;
    return j.dump();
}

AttackConfig AttackConfig::from_json(const std::string& text) {
    json j;
    try {
        j = json::parse(text);
    } catch (const json::exception& e) {
        fail(ErrorCode::Format, std::string("attack config: invalid JSON: ") + e.what());
    }
    AttackConfig c;
    if (j.contains("preset")) c = preset(j.at("preset").get<std::string>());
    if (j.contains("method")) c.method = method_from_name(j.at("method").get<std::string>());
    if (j.contains("epsilon")) c.epsilon = j.at("epsilon").get<double>();
    if (j.contains("alpha")) c.alpha = j.at("alpha").get<double>();
    if (j.contains("T")) c.iterations = j.at("T").get<int>();
    if (j.contains("mu")) c.mu = j.at("mu").get<double>();
    if (j.contains("m")) c.m = j.at("m").get<int>();
    if (j.contains("sigma")) c.sigma = j.at("sigma").get<double>();
    if (j.contains("targeted")) c.targeted = j.at("targeted").get<bool>();
    if (j.contains("clip_noise")) c.clip_noise = j.at("clip_noise").get<bool>();
    if (j.contains("seed")) c.seed = j.at("seed").get<uint64_t>();
    if (j.contains("average")) {
        const std::string a = j.at("average").get<std::string>();
        if (a == "logits") c.average = EnsembleAverage::Logits;
        else if (a == "probs") c.average = EnsembleAverage::Probs;
        else fail(ErrorCode::InvalidArgument, "attack config: average must be 'logits' or 'probs'");
    }
    c.validate();
    return c;
}

AttackConfig AttackConfig::preset(const std::string& name) {
    AttackConfig c;
    if (name == "paper-mnist-fgsm") {
        c.method = AttackMethod::Fgsm;
        c.epsilon = 40.0;
        c.alpha = 40.0;
        c.iterations = 1;
    } else if (name == "paper-igsm") {
        c.method = AttackMethod::Igsm;
        c.epsilon = 15.0;
        c.alpha = 5.0;
        c.iterations = 5;
    } else if (name == "paper-vr" || name == "paper-imagenet-igsm") {
        c.method = AttackMethod::VrIgsm;
        c.epsilon = 15.0;
        c.alpha = 5.0;
        c.iterations = 5;
        c.m = 20;
        c.sigma = 15.0;
    } else if (name == "paper-targeted") {
        c.method = AttackMethod::Igsm;
        c.epsilon = 20.0;
        c.alpha = 15.0;
        c.iterations = 20;
        c.targeted = true;
    } else if (name == "paper-momentum") {
        c.method = AttackMethod::MomentumIgsm;
        c.epsilon = 15.0;
        c.alpha = 5.0;
        c.iterations = 5;
        c.mu = 1.0;
    } else {
        std::string names;
        for (const auto& n : preset_names()) names += (names.empty() ? "" : ", ") + n;
        fail(ErrorCode::InvalidArgument, "unknown preset '" + name + "' (known: " + names + ")");
    }
    return c;
}

std::vector<std::string> AttackConfig::preset_names() {
    return {"paper-mnist-fgsm", "paper-igsm", "paper-vr", "paper-imagenet-igsm",
            "paper-targeted", "paper-momentum"};
}

EnsembleSource EnsembleSource::equal(std::vector<const Classifier*> ms) {
    EnsembleSource s;
    s.models = std::move(ms);
    if (s.models.empty()) fail(ErrorCode::InvalidArgument, "ensemble: no models");
    s.weights.assign(s.models.size(), 1.0 / static_cast<double>(s.models.size()));
    return s;
}

void EnsembleSource::validate() const {
    if (models.empty()) fail(ErrorCode::InvalidArgument, "ensemble: no models");
    if (weights.size() != models.size())
        fail(ErrorCode::InvalidArgument, "ensemble: weight count does not match model count");
    double sum = 0.0;
    for (double w : weights) {
        if (w < 0.0) fail(ErrorCode::InvalidArgument, "ensemble: weights must be >= 0");
        sum += w;
    }
    if (std::fabs(sum - 1.0) > 1e-12)
        fail(ErrorCode::InvalidArgument, "ensemble: weights must sum to 1");
    const Classifier* first = models.front();
    for (const Classifier* m : models) {
        if (m->num_classes != first->num_classes)
            fail(ErrorCode::InvalidArgument, "ensemble: inconsistent class counts across models");
        if (m->input_shape != first->input_shape)
            fail(ErrorCode::InvalidArgument, "ensemble: inconsistent input shapes across models");
    }
}

std::string EnsembleSource::id() const {
    std::string s;
    for (size_t i = 0; i < models.size(); ++i) {
        if (i) s += "+";
        s += models[i]->id;
    }
    return s;
}

// ---------------------------------------------------------------------------

Tensor project(const Tensor& cand, const Tensor& clean, double epsilon) {
    if (!cand.same_shape(clean)) fail(ErrorCode::Shape, "project: shape mismatch");
    Tensor out(cand.shape);
    for (int64_t i = 0; i < cand.numel(); ++i) {
        const double lo = std::max(0.0, clean.data[i] - epsilon);
        const double hi = std::min(255.0, clean.data[i] + epsilon);
        out.data[i] = std::clamp(cand.data[i], lo, hi);
    }
    return out;
}

Tensor sign_step(const Tensor& x, const Tensor& direction, double alpha) {
    if (!x.same_shape(direction)) fail(ErrorCode::Shape, "sign_step: shape mismatch");
    Tensor out(x.shape);
    for (int64_t i = 0; i < x.numel(); ++i) {
        const double d = direction.data[i];
        const double s = d > 0.0 ? 1.0 : (d < 0.0 ? -1.0 : 0.0);
        out.data[i] = x.data[i] + alpha * s;
    }
    return out;
}

// ---------------------------------------------------------------------------
// ensemble loss/gradient

namespace {

Tensor as_batch(const Tensor& x, const std::vector<int64_t>& input_shape) {
    if (x.rank() == input_shape.size()) {
        std::vector<int64_t> s = {1};
        s.insert(s.end(), x.shape.begin(), x.shape.end());
        return x.reshaped(s);
    }
    return x;
}

} // namespace

LossGrad loss_and_grad_batch(const EnsembleSource& source, const Tensor& x,
                             const std::vector<int>& labels, EnsembleAverage average) {
    source.validate();
    const int64_t B = x.dim(0);
    if (static_cast<int64_t>(labels.size()) != B)
        fail(ErrorCode::Shape, "loss_and_grad: label count mismatch");
    const int K = source.num_classes();
    const size_t Q = source.models.size();

    std::vector<Tape> tapes(Q);
    std::vector<Tensor> logits(Q);
    for (size_t q = 0; q < Q; ++q)
        logits[q] = forward(source.models[q]->layers, x, &tapes[q]);

    // combined output: weighted logits or weighted probabilities
    Tensor combined({B, K});
    std::vector<Tensor> probs;
    if (average == EnsembleAverage::Logits) {
        for (size_t q = 0; q < Q; ++q) {
            const double w = source.weights[q];
            for (int64_t i = 0; i < combined.numel(); ++i)
                combined.data[i] += w * logits[q].data[i];
        }
    } else {
        probs.reserve(Q);
        for (size_t q = 0; q < Q; ++q) {
            probs.push_back(softmax_rows(logits[q]));
            const double w = source.weights[q];
            for (int64_t i = 0; i < combined.numel(); ++i)
                combined.data[i] += w * probs[q].data[i];
        }
    }

    LossGrad out;
    out.grad = Tensor(x.shape);

    if (average == EnsembleAverage::Logits) {
        double loss = 0.0;
        for (int64_t b = 0; b < B; ++b) {
            Tensor row({K});
            std::memcpy(row.ptr(), combined.ptr() + b * K, static_cast<size_t>(K) * sizeof(double));
            loss += cross_entropy(row, labels[static_cast<size_t>(b)]);
        }
        out.loss = loss;
        Tensor dcomb = cross_entropy_grad(combined, labels);
        for (size_t q = 0; q < Q; ++q) {
            Tensor dq(dcomb.shape);
            const double w = source.weights[q];
            for (int64_t i = 0; i < dq.numel(); ++i) dq.data[i] = w * dcomb.data[i];
            Tensor gx = backward(source.models[q]->layers, tapes[q], dq, nullptr);
            for (int64_t i = 0; i < out.grad.numel(); ++i) out.grad.data[i] += gx.data[i];
        }
    } else {
        // L = -log(pbar[y]); d L / d z_qj = w_q / pbar_y * p_qj * (p_qy - [j==y])
        double loss = 0.0;
        for (int64_t b = 0; b < B; ++b) {
            const int y = labels[static_cast<size_t>(b)];
            if (y < 0 || y >= K) fail(ErrorCode::InvalidArgument, "label out of range");
            loss += -std::log(combined.data[static_cast<size_t>(b * K + y)]);
        }
        out.loss = loss;
        for (size_t q = 0; q < Q; ++q) {
            Tensor dq({B, K});
            const double w = source.weights[q];
            for (int64_t b = 0; b < B; ++b) {
                const int y = labels[static_cast<size_t>(b)];
                const double pbar_y = combined.data[static_cast<size_t>(b * K + y)];
                const double* pq = probs[q].ptr() + b * K;
                double* dr = dq.ptr() + b * K;
                const double pqy = pq[y];
                for (int64_t j = 0; j < K; ++j)
                    dr[j] = w / pbar_y * pq[j] * (pqy - (j == y ? 1.0 : 0.0));
            }
            Tensor gx = backward(source.models[q]->layers, tapes[q], dq, nullptr);
            for (int64_t i = 0; i < out.grad.numel(); ++i) out.grad.data[i] += gx.data[i];
        }
    }
    return out;
}

LossGrad loss_and_grad(const EnsembleSource& source, const Tensor& x, int label,
                       EnsembleAverage average) {
    const Tensor xb = as_batch(x, source.models.front()->input_shape);
    LossGrad lg = loss_and_grad_batch(source, xb, {label}, average);
    lg.grad = lg.grad.reshaped(x.shape);
    return lg;
}

Tensor smoothed_grad(const EnsembleSource& source, const Tensor& x, int label, int m,
                     double sigma, Rng& rng, bool clip_noise, EnsembleAverage average) {
    if (m < 1) fail(ErrorCode::InvalidArgument, "smoothed_grad: m must be >= 1");
    if (sigma < 0.0) fail(ErrorCode::InvalidArgument, "smoothed_grad: sigma must be >= 0");
    if (sigma == 0.0) {
        LossGrad lg = loss_and_grad(source, x, label, average);
        return lg.grad;
    }
    const Tensor xb = as_batch(x, source.models.front()->input_shape);
    const int64_t d = xb.numel();
    std::vector<int64_t> shape = xb.shape;
    shape[0] = m;
    Tensor pts(shape);
    for (int i = 0; i < m; ++i) {
        double* row = pts.ptr() + static_cast<int64_t>(i) * d;
        for (int64_t j = 0; j < d; ++j) {
            double v = xb.data[j] + sigma * rng.gaussian();
            if (clip_noise) v = std::clamp(v, 0.0, 255.0);
            row[j] = v;
        }
    }
    std::vector<int> labels(static_cast<size_t>(m), label);
    LossGrad lg = loss_and_grad_batch(source, pts, labels, average);
    Tensor mean(x.shape);
    for (int i = 0; i < m; ++i) {
        const double* row = lg.grad.ptr() + static_cast<int64_t>(i) * d;
        for (int64_t j = 0; j < d; ++j) mean.data[j] += row[j];
    }
    const double inv = 1.0 / static_cast<double>(m);
    for (int64_t j = 0; j < d; ++j) mean.data[j] *= inv;
    return mean;
}

// ---------------------------------------------------------------------------
// attack loop

AdvBatch run_attack(const EnsembleSource& source, const LabeledImages& batch,
                    const AttackConfig& cfg, const std::vector<int>* y_target, int workers) {
    cfg.validate();
    source.validate();
    batch.validate();
    const int64_t N = batch.count();
    if (N == 0) fail(ErrorCode::InvalidArgument, "run_attack: empty batch");
    const int64_t px = batch.pixels();

    if (cfg.targeted) {
        if (!y_target || static_cast<int64_t>(y_target->size()) != N)
            fail(ErrorCode::InvalidArgument, "run_attack: targeted attack needs one target per image");
        for (int64_t i = 0; i < N; ++i) {
            const int yt = (*y_target)[static_cast<size_t>(i)];
            if (yt < 0 || yt >= source.num_classes())
                fail(ErrorCode::InvalidArgument, "run_attack: target label out of range");
            if (yt == batch.labels[static_cast<size_t>(i)])
                fail(ErrorCode::InvalidArgument,
                     "run_attack: target label equals true label for image " + std::to_string(i));
        }
    } else if (y_target) {
        fail(ErrorCode::InvalidArgument, "run_attack: y_target given for a non-targeted attack");
    }

    AdvBatch out;
    out.clean = batch;
    out.adv = batch.images;
    out.source_id = source.id();
    out.config = cfg;
    if (cfg.targeted) out.y_target = *y_target;

    Tensor momentum; // [N, px] accumulators
    if (cfg.uses_momentum()) momentum = Tensor({N, px});

    std::atomic<int64_t> zero_grad_events(0);

    // Fixed task size keeps results independent of the worker count.
    const int64_t kChunk = 16;
    const int64_t tasks = (N + kChunk - 1) / kChunk;
    const double step_sign = cfg.targeted ? -1.0 : 1.0;

    for (int t = 0; t < cfg.iterations; ++t) {
        parallel_for(tasks, workers, [&](int64_t task) {
            const int64_t lo = task * kChunk;
            const int64_t hi = std::min(N, lo + kChunk);
            const int64_t nb = hi - lo;

            // direction of steepest ascent for every image of this chunk
            Tensor dirs({nb, px});
            if (!cfg.uses_smoothing()) {
                std::vector<int64_t> shape = batch.images.shape;
                shape[0] = nb;
                Tensor xs(shape);
                std::memcpy(xs.ptr(), out.adv.ptr() + lo * px,
                            static_cast<size_t>(nb * px) * sizeof(double));
                std::vector<int> labels(static_cast<size_t>(nb));
                for (int64_t i = 0; i < nb; ++i)
                    labels[static_cast<size_t>(i)] =
                        cfg.targeted ? (*y_target)[static_cast<size_t>(lo + i)]
                                     : batch.labels[static_cast<size_t>(lo + i)];
                LossGrad lg = loss_and_grad_batch(source, xs, labels, cfg.average);
                std::memcpy(dirs.ptr(), lg.grad.ptr(),
                            static_cast<size_t>(nb * px) * sizeof(double));
            } else {
                for (int64_t i = 0; i < nb; ++i) {
                    const int64_t img = lo + i;
                    Tensor x({1, batch.height(), batch.width()});
                    std::memcpy(x.ptr(), out.adv.ptr() + img * px,
                                static_cast<size_t>(px) * sizeof(double));
                    const int label = cfg.targeted ? (*y_target)[static_cast<size_t>(img)]
                                                   : batch.labels[static_cast<size_t>(img)];
                    Rng rng = Rng::stream(cfg.seed, static_cast<uint64_t>(img),
                                          static_cast<uint64_t>(t));
                    Tensor g = smoothed_grad(source, x, label, cfg.m, cfg.sigma, rng,
                                             cfg.clip_noise, cfg.average);
                    std::memcpy(dirs.ptr() + i * px, g.ptr(),
                                static_cast<size_t>(px) * sizeof(double));
                }
            }

            for (int64_t i = 0; i < nb; ++i) {
                const int64_t img = lo + i;
                double* dir = dirs.ptr() + i * px;
                const double* step_dir = dir;
                if (cfg.uses_momentum()) {
                    double l1 = 0.0;
                    for (int64_t j = 0; j < px; ++j) l1 += std::fabs(dir[j]);
                    double* acc = momentum.ptr() + img * px;
                    if (l1 == 0.0) {
                        // zero gradient: decay only, no normalized contribution
                        for (int64_t j = 0; j < px; ++j) acc[j] = cfg.mu * acc[j];
                        zero_grad_events.fetch_add(1);
                    } else {
                        const double inv = 1.0 / l1;
                        for (int64_t j = 0; j < px; ++j)
                            acc[j] = cfg.mu * acc[j] + dir[j] * inv;
                    }
                    step_dir = acc;
                }
                double* xi = out.adv.ptr() + img * px;
                const double* ci = batch.images.ptr() + img * px;
                for (int64_t j = 0; j < px; ++j) {
                    const double dj = step_dir[j];
                    const double s = dj > 0.0 ? 1.0 : (dj < 0.0 ? -1.0 : 0.0);
                    double v = xi[j] + step_sign * cfg.alpha * s;
                    const double lo_b = std::max(0.0, ci[j] - cfg.epsilon);
                    const double hi_b = std::min(255.0, ci[j] + cfg.epsilon);
                    xi[j] = std::clamp(v, lo_b, hi_b);
                }
            }
        });
    }

    if (int64_t ev = zero_grad_events.load(); ev > 0)
        out.warnings.push_back("momentum normalization skipped for " + std::to_string(ev) +
                               " image-iterations with zero gradient");
    return out;
}

// ---------------------------------------------------------------------------
// persistence

namespace {
constexpr char kTensorMagic[] = "ADVKITTNSR";
constexpr uint32_t kTensorVersion = 1;
} // namespace

void save_tensor(const Tensor& t, const std::string& path) {
    std::ofstream os(path, std::ios::binary);
    if (!os) fail(ErrorCode::Io, "tensor: cannot write " + path);
    os.write(kTensorMagic, sizeof(kTensorMagic) - 1);
    os.write(reinterpret_cast<const char*>(&kTensorVersion), sizeof(kTensorVersion));
    const uint32_t rank = static_cast<uint32_t>(t.rank());
    os.write(reinterpret_cast<const char*>(&rank), sizeof(rank));
    for (int64_t e : t.shape) os.write(reinterpret_cast<const char*>(&e), sizeof(e));
    os.write(reinterpret_cast<const char*>(t.ptr()),
             static_cast<std::streamsize>(t.numel() * sizeof(double)));
    if (!os) fail(ErrorCode::Io, "tensor: write failed for " + path);
}

Tensor load_tensor(const std::string& path) {
    std::ifstream is(path, std::ios::binary);
    if (!is) fail(ErrorCode::Io, "tensor: cannot open " + path);
    char magic[sizeof(kTensorMagic) - 1];
    if (!is.read(magic, sizeof(magic)) || std::memcmp(magic, kTensorMagic, sizeof(magic)) != 0)
        fail(ErrorCode::Format, "tensor: corrupt header in " + path);
    uint32_t version = 0, rank = 0;
    if (!is.read(reinterpret_cast<char*>(&version), sizeof(version)) || version != kTensorVersion)
        fail(ErrorCode::Format, "tensor: unsupported version in " + path);
    if (!is.read(reinterpret_cast<char*>(&rank), sizeof(rank)) || rank == 0 || rank > 8)
        fail(ErrorCode::Format, "tensor: corrupt header in " + path);
    std::vector<int64_t> shape(rank);
    for (auto& e : shape)
        if (!is.read(reinterpret_cast<char*>(&e), sizeof(e)))
            fail(ErrorCode::Format, "tensor: corrupt header in " + path);
    Tensor t(shape);
    if (!is.read(reinterpret_cast<char*>(t.ptr()),
                 static_cast<std::streamsize>(t.numel() * sizeof(double))))
        fail(ErrorCode::Format, "tensor: truncated data in " + path);
    return t;
}

void save_adv_batch(const AdvBatch& batch, const std::string& dir) {
    fs::create_directories(dir);
    save_tensor(batch.adv, (fs::path(dir) / "adv.tensor").string());
    save_tensor(batch.clean.images, (fs::path(dir) / "clean.tensor").string());
    json j;
    j["config"] = json::parse(batch.config.to_json());
    j["source_id"] = batch.source_id;
    j["seed"] = batch.config.seed;
    j["labels"] = batch.clean.labels;
    if (!batch.y_target.empty()) j["y_target"] = batch.y_target;
    j["n"] = batch.count();
    j["warnings"] = batch.warnings;
    std::ofstream os(fs::path(dir) / "manifest.json");
    if (!os) fail(ErrorCode::Io, "adv batch: cannot write manifest in " + dir);
    os << j.dump(2) << "\n";
}

AdvBatch load_adv_batch(const std::string& dir) {
    std::ifstream is(fs::path(dir) / "manifest.json");
    if (!is) fail(ErrorCode::Io, "adv batch: cannot open manifest in " + dir);
    json j;
    try {
        is >> j;
    } catch (const json::exception& e) {
        fail(ErrorCode::Format, std::string("adv batch: invalid manifest: ") + e.what());
    }
    AdvBatch b;
    b.config = AttackConfig::from_json(j.at("config").dump());
    b.source_id = j.at("source_id").get<std::string>();
    b.clean.labels = j.at("labels").get<std::vector<int>>();
    if (j.contains("y_target")) b.y_target = j.at("y_target").get<std::vector<int>>();
    if (j.contains("warnings")) b.warnings = j.at("warnings").get<std::vector<std::string>>();
    b.adv = load_tensor((fs::path(dir) / "adv.tensor").string());
    b.clean.images = load_tensor((fs::path(dir) / "clean.tensor").string());
    b.clean.validate();
    if (!b.adv.same_shape(b.clean.images))
        fail(ErrorCode::Format, "adv batch: clean/adv shape mismatch in " + dir);
    return b;
}

} // namespace advkit
