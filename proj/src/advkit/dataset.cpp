#include "advkit/dataset.hpp"

#include <algorithm>
#include <cmath>
#include <cstring>
#include <fstream>

#include <zlib.h>

#include "advkit/models.hpp"
#include "advkit/rng.hpp"

namespace advkit {

Tensor LabeledImages::image(int64_t i) const {
    const int64_t px = pixels();
    Tensor t({1, height(), width()});
    std::memcpy(t.ptr(), images.ptr() + i * px, static_cast<size_t>(px) * sizeof(double));
    return t;
}

void LabeledImages::validate() const {
    if (images.rank() != 3) fail(ErrorCode::Shape, "images must be [N,H,W]");
    if (static_cast<int64_t>(labels.size()) != count())
        fail(ErrorCode::Shape, "label count does not match image count");
    for (double v : images.data)
        if (!(v >= 0.0 && v <= 255.0))
            fail(ErrorCode::InvalidArgument, "pixel value outside [0,255]");
}

// ---------------------------------------------------------------------------
// synthetic data

namespace {
// Contrast/noise levels picked so that 0-255-scale sign attacks with the
// usual epsilon ranges land near the decision boundaries instead of
// saturating: background 16, per-class bright pattern of d/16 pixels lifted
// by ~48..80, pixel noise sigma 32.
constexpr double kBackground = 16.0;
constexpr double kContrastLo = 48.0;
constexpr double kContrastHi = 80.0;
constexpr double kNoiseSigma = 32.0;
} // namespace

LabeledImages synth_blobs(int64_t n_per_class, int num_classes, int64_t d, uint64_t seed) {
    if (n_per_class < 1) fail(ErrorCode::InvalidArgument, "synth_blobs: n_per_class must be >= 1");
    if (num_classes < 2) fail(ErrorCode::InvalidArgument, "synth_blobs: need at least 2 classes");
    const int64_t side = static_cast<int64_t>(std::llround(std::sqrt(static_cast<double>(d))));
    if (side * side != d)
        fail(ErrorCode::InvalidArgument, "synth_blobs: d must be a perfect square");

    Rng rng(seed);
    const int64_t support = std::max<int64_t>(8, d / 16);
    std::vector<std::vector<double>> means(static_cast<size_t>(num_classes),
                                           std::vector<double>(static_cast<size_t>(d), kBackground));
    std::vector<int64_t> pix(static_cast<size_t>(d));
    for (int64_t i = 0; i < d; ++i) pix[static_cast<size_t>(i)] = i;
    for (int k = 0; k < num_classes; ++k) {
        Rng cls = Rng::stream(seed, 0xC1A55ULL, static_cast<uint64_t>(k));
        std::vector<int64_t> order = pix;
        cls.shuffle(order.begin(), order.end());
        for (int64_t j = 0; j < support; ++j)
            means[static_cast<size_t>(k)][static_cast<size_t>(order[static_cast<size_t>(j)])] +=
                cls.uniform(kContrastLo, kContrastHi);
    }

    const int64_t n = n_per_class * num_classes;
    LabeledImages out;
    out.images = Tensor({n, side, side});
    out.labels.resize(static_cast<size_t>(n));
    for (int64_t i = 0; i < n; ++i) {
        const int k = static_cast<int>(i % num_classes);
        out.labels[static_cast<size_t>(i)] = k;
        Rng samp = Rng::stream(seed, 0x5A3B1EULL, static_cast<uint64_t>(i));
        double* img = out.images.ptr() + i * d;
        const auto& mu = means[static_cast<size_t>(k)];
        for (int64_t j = 0; j < d; ++j) {
            double v = mu[static_cast<size_t>(j)] + kNoiseSigma * samp.gaussian();
            v = std::clamp(v, 0.0, 255.0);
            img[j] = std::round(v);
        }
    }
    return out;
}

std::pair<LabeledImages, LabeledImages> split(const LabeledImages& data,
                                              double test_fraction, uint64_t seed) {
    if (test_fraction < 0.0 || test_fraction > 1.0)
        fail(ErrorCode::InvalidArgument, "split: test_fraction must be in [0,1]");
    const int64_t n = data.count();
    std::vector<int64_t> idx(static_cast<size_t>(n));
    for (int64_t i = 0; i < n; ++i) idx[static_cast<size_t>(i)] = i;
    Rng rng(seed);
    rng.shuffle(idx.begin(), idx.end());
    const int64_t n_test = static_cast<int64_t>(std::floor(test_fraction * static_cast<double>(n)));
    std::vector<int64_t> test_idx(idx.begin(), idx.begin() + n_test);
    std::vector<int64_t> train_idx(idx.begin() + n_test, idx.end());
    std::sort(train_idx.begin(), train_idx.end());
    std::sort(test_idx.begin(), test_idx.end());
    return {subset(data, train_idx), subset(data, test_idx)};
}

LabeledImages subset(const LabeledImages& data, const std::vector<int64_t>& indices) {
    if (indices.empty()) fail(ErrorCode::InvalidArgument, "subset: empty index list");
    const int64_t px = data.pixels();
    LabeledImages out;
    out.images = Tensor({static_cast<int64_t>(indices.size()), data.height(), data.width()});
    out.labels.resize(indices.size());
    for (size_t i = 0; i < indices.size(); ++i) {
        const int64_t src = indices[i];
        if (src < 0 || src >= data.count()) fail(ErrorCode::InvalidArgument, "subset: index out of range");
        std::memcpy(out.images.ptr() + static_cast<int64_t>(i) * px, data.images.ptr() + src * px,
                    static_cast<size_t>(px) * sizeof(double));
        out.labels[i] = data.labels[static_cast<size_t>(src)];
    }
    return out;
}

LabeledImages select_correct(const std::vector<const Classifier*>& models,
                             const LabeledImages& data, int64_t n, uint64_t seed) {
    if (models.empty()) fail(ErrorCode::InvalidArgument, "select_correct: no models given");
    const int64_t total = data.count();
    std::vector<char> ok(static_cast<size_t>(total), 1);
    for (const Classifier* m : models) {
        std::vector<int> pred = predict(*m, data.images);
        for (int64_t i = 0; i < total; ++i)
            if (pred[static_cast<size_t>(i)] != data.labels[static_cast<size_t>(i)])
                ok[static_cast<size_t>(i)] = 0;
    }
    std::vector<int64_t> candidates;
    for (int64_t i = 0; i < total; ++i)
        if (ok[static_cast<size_t>(i)]) candidates.push_back(i);
    if (static_cast<int64_t>(candidates.size()) < n)
        fail(ErrorCode::InsufficientData,
             "select_correct: only " + std::to_string(candidates.size()) + " of " +
                 std::to_string(total) + " images are correctly classified by all models (need " +
                 std::to_string(n) + ")");
    Rng rng(seed);
    rng.shuffle(candidates.begin(), candidates.end());
    candidates.resize(static_cast<size_t>(n));
    std::sort(candidates.begin(), candidates.end());
    return subset(data, candidates);
}

double mean_pixel(const LabeledImages& data) {
    double s = 0.0;
    for (double v : data.images.data) s += v;
    return s / static_cast<double>(data.images.numel());
}

// ---------------------------------------------------------------------------
// IDX

namespace {

constexpr uint32_t kImagesMagic = 0x00000803;
constexpr uint32_t kLabelsMagic = 0x00000801;

std::vector<unsigned char> read_file_maybe_gz(const std::string& path) {
    // gzopen falls back to plain reads when the file is not gzip.
    gzFile f = gzopen(path.c_str(), "rb");
    if (!f) fail(ErrorCode::Io, "idx: cannot open " + path);
    std::vector<unsigned char> buf;
    unsigned char chunk[1 << 16];
    int got;
    while ((got = gzread(f, chunk, sizeof(chunk))) > 0)
        buf.insert(buf.end(), chunk, chunk + got);
    const bool bad = got < 0;
    gzclose(f);
    if (bad) fail(ErrorCode::Io, "idx: read error in " + path);
    return buf;
}

uint32_t be32(const unsigned char* p) {
    return (static_cast<uint32_t>(p[0]) << 24) | (static_cast<uint32_t>(p[1]) << 16) |
           (static_cast<uint32_t>(p[2]) << 8) | static_cast<uint32_t>(p[3]);
}

void put_be32(std::ofstream& os, uint32_t v) {
    unsigned char b[4] = {static_cast<unsigned char>(v >> 24), static_cast<unsigned char>(v >> 16),
                          static_cast<unsigned char>(v >> 8), static_cast<unsigned char>(v)};
    os.write(reinterpret_cast<const char*>(b), 4);
}

} // namespace

LabeledImages load_idx(const std::string& images_path, const std::string& labels_path) {
    const auto ibuf = read_file_maybe_gz(images_path);
    if (ibuf.size() < 16) fail(ErrorCode::Format, "idx: truncated file " + images_path);
    if (be32(ibuf.data()) != kImagesMagic)
        fail(ErrorCode::Format, "idx: bad magic in " + images_path);
    const uint32_t n = be32(ibuf.data() + 4);
    const uint32_t h = be32(ibuf.data() + 8);
    const uint32_t w = be32(ibuf.data() + 12);
    const uint64_t need = 16ull + static_cast<uint64_t>(n) * h * w;
    if (ibuf.size() < need) fail(ErrorCode::Format, "idx: truncated file " + images_path);

    const auto lbuf = read_file_maybe_gz(labels_path);
    if (lbuf.size() < 8) fail(ErrorCode::Format, "idx: truncated file " + labels_path);
    if (be32(lbuf.data()) != kLabelsMagic)
        fail(ErrorCode::Format, "idx: bad magic in " + labels_path);
    const uint32_t ln = be32(lbuf.data() + 4);
    if (lbuf.size() < 8ull + ln) fail(ErrorCode::Format, "idx: truncated file " + labels_path);
    if (ln != n)
        fail(ErrorCode::Format, "idx: image/label count mismatch (" + std::to_string(n) + " images vs " +
                                    std::to_string(ln) + " labels)");

    LabeledImages out;
    out.images = Tensor({static_cast<int64_t>(n), static_cast<int64_t>(h), static_cast<int64_t>(w)});
    out.labels.resize(n);
    const unsigned char* px = ibuf.data() + 16;
    for (uint64_t i = 0; i < static_cast<uint64_t>(n) * h * w; ++i)
        out.images.data[i] = static_cast<double>(px[i]);
    for (uint32_t i = 0; i < n; ++i) out.labels[i] = static_cast<int>(lbuf[8 + i]);
    return out;
}

void save_idx(const LabeledImages& data, const std::string& images_path,
              const std::string& labels_path) {
    std::ofstream io(images_path, std::ios::binary);
    if (!io) fail(ErrorCode::Io, "idx: cannot write " + images_path);
    put_be32(io, kImagesMagic);
    put_be32(io, static_cast<uint32_t>(data.count()));
    put_be32(io, static_cast<uint32_t>(data.height()));
    put_be32(io, static_cast<uint32_t>(data.width()));
    for (double v : data.images.data) {
        const auto b = static_cast<unsigned char>(std::clamp(std::llround(v), 0ll, 255ll));
        io.put(static_cast<char>(b));
    }
    if (!io) fail(ErrorCode::Io, "idx: write failed for " + images_path);

    std::ofstream lo(labels_path, std::ios::binary);
    if (!lo) fail(ErrorCode::Io, "idx: cannot write " + labels_path);
    put_be32(lo, kLabelsMagic);
    put_be32(lo, static_cast<uint32_t>(data.count()));
    for (int l : data.labels) lo.put(static_cast<char>(static_cast<unsigned char>(l)));
    if (!lo) fail(ErrorCode::Io, "idx: write failed for " + labels_path);
}

} // namespace advkit
