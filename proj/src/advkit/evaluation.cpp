#include "advkit/evaluation.hpp"

#include <algorithm>
#include <cmath>
#include <cstring>
#include <numeric>
#include <sstream>

#include <json.hpp>

#include "advkit/parallel.hpp"
#include "advkit/rng.hpp"

namespace advkit {

using nlohmann::json;

bool in_topk(const double* logits, int64_t K, int label, int k) {
    if (k >= K) return true;
    // rank = number of entries strictly greater, plus equal entries with a
    // lower index (lowest-index tie break)
    int rank = 0;
    const double v = logits[label];
    for (int64_t j = 0; j < K; ++j) {
        if (logits[j] > v || (logits[j] == v && j < label)) ++rank;
    }
    return rank < k;
}

namespace {

Tensor forward_all(const Classifier& model, const Tensor& images) {
    const int64_t n = images.dim(0);
    const int64_t px = images.numel() / n;
    const int64_t chunk = 256;
    Tensor logits({n, static_cast<int64_t>(model.num_classes)});
    for (int64_t start = 0; start < n; start += chunk) {
        const int64_t b = std::min(chunk, n - start);
        std::vector<int64_t> shape = images.shape;
        shape[0] = b;
        Tensor part(shape);
        std::memcpy(part.ptr(), images.ptr() + start * px,
                    static_cast<size_t>(b * px) * sizeof(double));
        Tensor lg = model_forward(model, part);
        std::memcpy(logits.ptr() + start * model.num_classes, lg.ptr(),
                    static_cast<size_t>(lg.numel()) * sizeof(double));
    }
    return logits;
}

} // namespace

double success_rate_nontarget(const Classifier& target_model, const AdvBatch& adv, int topk) {
    const int64_t n = adv.count();
    if (n == 0) fail(ErrorCode::InvalidArgument, "success_rate: empty batch");
    const Tensor logits = forward_all(target_model, adv.adv);
    const int64_t K = target_model.num_classes;
    int64_t hits = 0;
    for (int64_t i = 0; i < n; ++i)
        if (!in_topk(logits.ptr() + i * K, K, adv.clean.labels[static_cast<size_t>(i)], topk))
            ++hits;
    return 100.0 * static_cast<double>(hits) / static_cast<double>(n);
}

double success_rate_target(const Classifier& target_model, const AdvBatch& adv, int topk) {
    const int64_t n = adv.count();
    if (n == 0) fail(ErrorCode::InvalidArgument, "success_rate: empty batch");
    if (static_cast<int64_t>(adv.y_target.size()) != n)
        fail(ErrorCode::InvalidArgument, "success_rate_target: batch has no target labels");
    const Tensor logits = forward_all(target_model, adv.adv);
    const int64_t K = target_model.num_classes;
    int64_t hits = 0;
    for (int64_t i = 0; i < n; ++i)
        if (in_topk(logits.ptr() + i * K, K, adv.y_target[static_cast<size_t>(i)], topk)) ++hits;
    return 100.0 * static_cast<double>(hits) / static_cast<double>(n);
}

std::string EvalReport::to_csv() const {
    std::ostringstream os;
    os << "source,target,method,metric,value,n\n";
    auto row = [&](const auto& key, const char* metric, double v, int64_t n) {
        if (v < 0.0) return;
        char buf[32];
        std::snprintf(buf, sizeof(buf), "%.4f", v);
        os << std::get<0>(key) << "," << std::get<1>(key) << "," << std::get<2>(key) << ","
           << metric << "," << buf << "," << n << "\n";
    };
    for (const auto& [key, e] : entries) {
        row(key, "top1_nontarget", e.top1_nontarget, e.n);
        row(key, "top5_nontarget", e.top5_nontarget, e.n);
        row(key, "top1_target", e.top1_target, e.n);
        row(key, "top5_target", e.top5_target, e.n);
    }
    return os.str();
}

std::string EvalReport::to_json() const {
    json arr = json::array();
    for (const auto& [key, e] : entries) {
        json o;
        o["source"] = std::get<0>(key);
        o["target"] = std::get<1>(key);
        o["method"] = std::get<2>(key);
        if (e.top1_nontarget >= 0.0) o["top1_nontarget"] = e.top1_nontarget;
        if (e.top5_nontarget >= 0.0) o["top5_nontarget"] = e.top5_nontarget;
        if (e.top1_target >= 0.0) o["top1_target"] = e.top1_target;
        if (e.top5_target >= 0.0) o["top5_target"] = e.top5_target;
        o["n"] = e.n;
        arr.push_back(o);
    }
    return arr.dump(2);
}

EvalReport transfer_matrix(const std::vector<const Classifier*>& models,
                           const LabeledImages& data, const AttackConfig& cfg,
                           const TransferOptions& opts) {
    if (models.size() < 2)
        fail(ErrorCode::InvalidArgument, "transfer_matrix: need at least two models");
    EvalReport report;
    const std::string method = method_name(cfg.method);

    std::vector<int> targets;
    if (cfg.targeted) {
        // deterministic random wrong labels
        Rng rng = Rng::stream(cfg.seed, 0x7A46E7ULL);
        const int K = models.front()->num_classes;
        targets.resize(static_cast<size_t>(data.count()));
        for (size_t i = 0; i < targets.size(); ++i) {
            int t = static_cast<int>(rng.below(static_cast<uint64_t>(K - 1)));
            if (t >= data.labels[i]) ++t;
            targets[i] = t;
        }
    }

    for (const Classifier* src : models) {
        EnsembleSource source = EnsembleSource::single(*src);
        AdvBatch batch = run_attack(source, data, cfg, cfg.targeted ? &targets : nullptr,
                                    opts.workers);
        for (const Classifier* tgt : models) {
            if (tgt == src && !opts.include_diagonal) continue;
            EvalEntry e;
            e.n = batch.count();
            e.top1_nontarget = success_rate_nontarget(*tgt, batch, 1);
            if (opts.topk_extra > 1)
                e.top5_nontarget = success_rate_nontarget(*tgt, batch, opts.topk_extra);
            if (cfg.targeted) {
                e.top1_target = success_rate_target(*tgt, batch, 1);
                if (opts.topk_extra > 1)
                    e.top5_target = success_rate_target(*tgt, batch, opts.topk_extra);
            }
            report.entries[{src->id, tgt->id, method}] = e;
        }
    }
    return report;
}

double destruction_rate(const Classifier& model, const LabeledImages& clean,
                        const Tensor& adv, const Tensor& transformed) {
    const int64_t n = clean.count();
    if (!adv.same_shape(clean.images) || !transformed.same_shape(clean.images))
        fail(ErrorCode::Shape, "destruction_rate: shape mismatch");
    std::vector<int> p_clean = predict(model, clean.images);
    std::vector<int> p_adv = predict(model, adv);
    std::vector<int> p_tr = predict(model, transformed);
    double num = 0.0, den = 0.0;
    for (int64_t i = 0; i < n; ++i) {
        const int y = clean.labels[static_cast<size_t>(i)];
        const double c_clean = p_clean[static_cast<size_t>(i)] == y ? 1.0 : 0.0;
        const double c_adv = p_adv[static_cast<size_t>(i)] == y ? 1.0 : 0.0;
        const double c_tr = p_tr[static_cast<size_t>(i)] == y ? 1.0 : 0.0;
        den += c_clean * (1.0 - c_adv);
        num += c_clean * (1.0 - c_adv) * c_tr;
    }
    if (den == 0.0)
        fail(ErrorCode::InvalidArgument,
             "destruction_rate: no successfully attacked, originally-correct images");
    return num / den;
}

// ---------------------------------------------------------------------------
// transforms

void TransformSpec::validate() const {
    switch (kind) {
        case TransformKind::Rotation:
            if (value < -180.0 || value > 180.0)
                fail(ErrorCode::InvalidArgument, "rotation: degrees must be in [-180,180]");
            break;
        case TransformKind::GaussianNoise:
            if (value < 0.0) fail(ErrorCode::InvalidArgument, "gaussian_noise: std must be >= 0");
            break;
        case TransformKind::GaussianBlur:
            if (value < 0.0) fail(ErrorCode::InvalidArgument, "gaussian_blur: std must be >= 0");
            break;
        case TransformKind::JpegLike:
            if (value < 1.0 || value > 100.0)
                fail(ErrorCode::InvalidArgument, "jpeg_like: quality must be in [1,100]");
            break;
    }
}

std::string TransformSpec::name() const {
    switch (kind) {
        case TransformKind::Rotation: return "rotation";
        case TransformKind::GaussianNoise: return "gaussian_noise";
        case TransformKind::GaussianBlur: return "gaussian_blur";
        case TransformKind::JpegLike: return "jpeg_like";
    }
    return "?";
}

namespace {

void rotate_image(const double* src, double* dst, int64_t H, int64_t W, double degrees) {
    const double rad = degrees * 3.14159265358979323846 / 180.0;
    const double c = std::cos(rad), s = std::sin(rad);
    const double cy = (static_cast<double>(H) - 1.0) / 2.0;
    const double cx = (static_cast<double>(W) - 1.0) / 2.0;
    for (int64_t y = 0; y < H; ++y) {
        for (int64_t x = 0; x < W; ++x) {
            // inverse map: sample source at the back-rotated position
            const double dy = static_cast<double>(y) - cy;
            const double dx = static_cast<double>(x) - cx;
            const double sy = cy + (s * dx + c * dy);
            const double sx = cx + (c * dx - s * dy);
            double v = 0.0;
            const int64_t y0 = static_cast<int64_t>(std::floor(sy));
            const int64_t x0 = static_cast<int64_t>(std::floor(sx));
            const double fy = sy - static_cast<double>(y0);
            const double fx = sx - static_cast<double>(x0);
            for (int k = 0; k < 4; ++k) {
                const int64_t yy = y0 + (k >> 1);
                const int64_t xx = x0 + (k & 1);
                const double wgt = ((k >> 1) ? fy : 1.0 - fy) * ((k & 1) ? fx : 1.0 - fx);
                if (wgt == 0.0) continue;
                const double pix =
                    (yy >= 0 && yy < H && xx >= 0 && xx < W) ? src[yy * W + xx] : 0.0;
                v += wgt * pix;
            }
            dst[y * W + x] = std::clamp(v, 0.0, 255.0);
        }
    }
}

void blur_image(const double* src, double* dst, int64_t H, int64_t W, double std_) {
    if (std_ <= 0.0) {
        std::memcpy(dst, src, static_cast<size_t>(H * W) * sizeof(double));
        return;
    }
    const int64_t radius = static_cast<int64_t>(std::ceil(3.0 * std_));
    std::vector<double> kernel(static_cast<size_t>(2 * radius + 1));
    double sum = 0.0;
    for (int64_t i = -radius; i <= radius; ++i) {
        const double v = std::exp(-0.5 * (static_cast<double>(i) / std_) * (static_cast<double>(i) / std_));
        kernel[static_cast<size_t>(i + radius)] = v;
        sum += v;
    }
    for (auto& v : kernel) v /= sum;

    auto clampi = [](int64_t v, int64_t n) { return std::clamp<int64_t>(v, 0, n - 1); };
    std::vector<double> tmp(static_cast<size_t>(H * W));
    for (int64_t y = 0; y < H; ++y)
        for (int64_t x = 0; x < W; ++x) {
            double acc = 0.0;
            for (int64_t i = -radius; i <= radius; ++i)
                acc += kernel[static_cast<size_t>(i + radius)] * src[y * W + clampi(x + i, W)];
            tmp[static_cast<size_t>(y * W + x)] = acc;
        }
    for (int64_t y = 0; y < H; ++y)
        for (int64_t x = 0; x < W; ++x) {
            double acc = 0.0;
            for (int64_t i = -radius; i <= radius; ++i)
                acc += kernel[static_cast<size_t>(i + radius)] * tmp[static_cast<size_t>(clampi(y + i, H) * W + x)];
            dst[y * W + x] = std::clamp(acc, 0.0, 255.0);
        }
}

// Standard luminance quantization table.
constexpr int kQuantBase[64] = {
    16, 11, 10, 16, 24,  40,  51,  61,  //
    12, 12, 14, 19, 26,  58,  60,  55,  //
    14, 13, 16, 24, 40,  57,  69,  56,  //
    14, 17, 22, 29, 51,  87,  80,  62,  //
    18, 22, 37, 56, 68,  109, 103, 77,  //
    24, 35, 55, 64, 81,  104, 113, 92,  //
    49, 64, 78, 87, 103, 121, 120, 101, //
    72, 92, 95, 98, 112, 100, 103, 99};

struct Dct8 {
    double c[8][8]; // c[k][n] = a(k) cos((2n+1)k pi/16)
    Dct8() {
        for (int k = 0; k < 8; ++k) {
            const double a = k == 0 ? std::sqrt(1.0 / 8.0) : std::sqrt(2.0 / 8.0);
            for (int n = 0; n < 8; ++n)
                c[k][n] = a * std::cos((2.0 * n + 1.0) * k * 3.14159265358979323846 / 16.0);
        }
    }
};

void jpeg_like_image(const double* src, double* dst, int64_t H, int64_t W, double quality) {
    static const Dct8 dct;
    int q[64];
    const double scale = quality < 50.0 ? 5000.0 / quality : 200.0 - 2.0 * quality;
    for (int i = 0; i < 64; ++i) {
        int v = static_cast<int>(std::floor((kQuantBase[i] * scale + 50.0) / 100.0));
        q[i] = std::clamp(v, 1, 255);
    }
    const int64_t BH = (H + 7) / 8, BW = (W + 7) / 8;
    auto sample = [&](int64_t y, int64_t x) { // edge-replicated padding
        return src[std::min(y, H - 1) * W + std::min(x, W - 1)];
    };
    for (int64_t by = 0; by < BH; ++by) {
        for (int64_t bx = 0; bx < BW; ++bx) {
            double blk[8][8], f[8][8], t[8][8];
            for (int y = 0; y < 8; ++y)
                for (int x = 0; x < 8; ++x)
                    blk[y][x] = sample(by * 8 + y, bx * 8 + x) - 128.0;
            // F = C * blk * C^T
            for (int k = 0; k < 8; ++k)
                for (int x = 0; x < 8; ++x) {
                    double acc = 0.0;
                    for (int n = 0; n < 8; ++n) acc += dct.c[k][n] * blk[n][x];
                    t[k][x] = acc;
                }
            for (int k = 0; k < 8; ++k)
                for (int l = 0; l < 8; ++l) {
                    double acc = 0.0;
                    for (int n = 0; n < 8; ++n) acc += t[k][n] * dct.c[l][n];
                    const double qv = static_cast<double>(q[k * 8 + l]);
                    f[k][l] = std::round(acc / qv) * qv;
                }
            // blk = C^T * F * C
            for (int n = 0; n < 8; ++n)
                for (int l = 0; l < 8; ++l) {
                    double acc = 0.0;
                    for (int k = 0; k < 8; ++k) acc += dct.c[k][n] * f[k][l];
                    t[n][l] = acc;
                }
            for (int y = 0; y < 8; ++y)
                for (int x = 0; x < 8; ++x) {
                    double acc = 0.0;
                    for (int l = 0; l < 8; ++l) acc += t[y][l] * dct.c[l][x];
                    const int64_t iy = by * 8 + y, ix = bx * 8 + x;
                    if (iy < H && ix < W)
                        dst[iy * W + ix] = std::clamp(acc + 128.0, 0.0, 255.0);
                }
        }
    }
}

} // namespace

Tensor apply_transform(const Tensor& images, const TransformSpec& spec, uint64_t seed) {
    spec.validate();
    if (images.rank() != 3) fail(ErrorCode::Shape, "apply_transform: images must be [N,H,W]");
    const int64_t N = images.dim(0), H = images.dim(1), W = images.dim(2);
    Tensor out(images.shape);
    for (int64_t i = 0; i < N; ++i) {
        const double* src = images.ptr() + i * H * W;
        double* dst = out.ptr() + i * H * W;
        switch (spec.kind) {
            case TransformKind::Rotation:
                rotate_image(src, dst, H, W, spec.value);
                break;
            case TransformKind::GaussianNoise: {
                if (spec.value == 0.0) {
                    std::memcpy(dst, src, static_cast<size_t>(H * W) * sizeof(double));
                    break;
                }
                Rng rng = Rng::stream(seed, 0x4015EULL, static_cast<uint64_t>(i));
                for (int64_t j = 0; j < H * W; ++j)
                    dst[j] = std::clamp(src[j] + spec.value * rng.gaussian(), 0.0, 255.0);
                break;
            }
            case TransformKind::GaussianBlur:
                blur_image(src, dst, H, W, spec.value);
                break;
            case TransformKind::JpegLike:
                jpeg_like_image(src, dst, H, W, spec.value);
                break;
        }
    }
    return out;
}

} // namespace advkit
