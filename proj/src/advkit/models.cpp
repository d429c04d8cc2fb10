#include "advkit/models.hpp"

#include <algorithm>
#include <cmath>
#include <cstring>
#include <fstream>

#include <json.hpp>

#include "advkit/rng.hpp"

namespace advkit {

using nlohmann::json;

std::vector<NamedParam> named_params(Classifier& model) {
    std::vector<NamedParam> out;
    for (size_t i = 0; i < model.layers.size(); ++i) {
        Layer& l = model.layers[i];
        const std::string prefix = "layer" + std::to_string(i);
        if (auto* a = std::get_if<AffineLayer>(&l)) {
            out.push_back({prefix + ".W", &a->W});
            out.push_back({prefix + ".b", &a->b});
        } else if (auto* c = std::get_if<Conv2dLayer>(&l)) {
            out.push_back({prefix + ".W", &c->W});
            out.push_back({prefix + ".b", &c->b});
        }
    }
    return out;
}

std::vector<NamedParam> named_params(const Classifier& model) {
    return named_params(const_cast<Classifier&>(model));
}

int64_t param_count(const Classifier& model) {
    int64_t n = 0;
    for (const auto& p : named_params(model)) n += p.tensor->numel();
    return n;
}

namespace {

Tensor he_init(std::vector<int64_t> shape, int64_t fan_in, Rng& rng) {
    Tensor t(std::move(shape));
    const double std = std::sqrt(2.0 / static_cast<double>(fan_in));
    for (auto& v : t.data) v = std * rng.gaussian();
    return t;
}

} // namespace

Classifier build_fnn(int depth, int64_t width, uint64_t seed, double mean_pixel,
                     int64_t input_side, int num_classes) {
    if (depth < 0) fail(ErrorCode::InvalidArgument, "build_fnn: depth must be >= 0");
    if (width < 1) fail(ErrorCode::InvalidArgument, "build_fnn: width must be >= 1");
    Classifier m;
    m.id = "fnn-d" + std::to_string(depth);
    m.input_shape = {input_side, input_side};
    m.num_classes = num_classes;
    m.layers.push_back(NormalizeLayer{255.0, mean_pixel / 255.0});
    m.layers.push_back(FlattenLayer{});
    int64_t in = input_side * input_side;
    int layer_seed = 0;
    for (int d = 0; d < depth; ++d) {
        Rng rng = Rng::stream(seed, 0xFEEDULL, static_cast<uint64_t>(layer_seed++));
        AffineLayer a;
        a.W = he_init({width, in}, in, rng);
        a.b = Tensor({width});
        m.layers.push_back(std::move(a));
        m.layers.push_back(ReluLayer{});
        in = width;
    }
    Rng rng = Rng::stream(seed, 0xFEEDULL, static_cast<uint64_t>(layer_seed++));
    AffineLayer out;
    out.W = he_init({num_classes, in}, in, rng);
    out.b = Tensor({num_classes});
    m.layers.push_back(std::move(out));
    return m;
}

Classifier build_lenet(uint64_t seed, double mean_pixel) {
    Classifier m;
    m.id = "lenet";
    m.input_shape = {28, 28};
    m.num_classes = 10;
    m.layers.push_back(NormalizeLayer{255.0, mean_pixel / 255.0});
    m.layers.push_back(ReshapeLayer{{1, 28, 28}});

    int ls = 0;
    auto conv = [&](int64_t ic, int64_t oc, int64_t k, int64_t pad) {
        Rng rng = Rng::stream(seed, 0xC04FULL, static_cast<uint64_t>(ls++));
        Conv2dLayer c;
        c.W = he_init({oc, ic, k, k}, ic * k * k, rng);
        c.b = Tensor({oc});
        c.pad = pad;
        return c;
    };
    auto affine = [&](int64_t in, int64_t out) {
        Rng rng = Rng::stream(seed, 0xAFF1ULL, static_cast<uint64_t>(ls++));
        AffineLayer a;
        a.W = he_init({out, in}, in, rng);
        a.b = Tensor({out});
        return a;
    };

    m.layers.push_back(conv(1, 6, 5, 2));   // 28 -> 28
    m.layers.push_back(ReluLayer{});
    m.layers.push_back(MaxPool2Layer{});    // 28 -> 14
    m.layers.push_back(conv(6, 16, 5, 0));  // 14 -> 10
    m.layers.push_back(ReluLayer{});
    m.layers.push_back(MaxPool2Layer{});    // 10 -> 5
    m.layers.push_back(FlattenLayer{});     // 16*5*5 = 400
    m.layers.push_back(affine(400, 120));
    m.layers.push_back(ReluLayer{});
    m.layers.push_back(affine(120, 84));
    m.layers.push_back(ReluLayer{});
    m.layers.push_back(affine(84, 10));
    return m;
}

Tensor model_forward(const Classifier& model, const Tensor& images) {
    if (images.rank() != model.input_shape.size() + 1)
        fail(ErrorCode::Shape, "model input: expected batch of " + shape_str(model.input_shape) +
                                   ", got " + shape_str(images.shape));
    for (size_t i = 0; i < model.input_shape.size(); ++i)
        if (images.shape[i + 1] != model.input_shape[i])
            fail(ErrorCode::Shape, "model input: expected batch of " + shape_str(model.input_shape) +
                                       ", got " + shape_str(images.shape));
    return forward(model.layers, images);
}

Tensor model_forward_single(const Classifier& model, const Tensor& image) {
    Tensor batched = image;
    if (image.rank() == model.input_shape.size()) {
        std::vector<int64_t> s = {1};
        s.insert(s.end(), image.shape.begin(), image.shape.end());
        batched = image.reshaped(s);
    }
    Tensor logits = model_forward(model, batched);
    return logits.reshaped({logits.dim(1)});
}

std::vector<int> predict(const Classifier& model, const Tensor& images) {
    const int64_t n = images.dim(0);
    std::vector<int> out(static_cast<size_t>(n));
    const int64_t chunk = 256;
    const int64_t px = images.numel() / n;
    for (int64_t start = 0; start < n; start += chunk) {
        const int64_t b = std::min(chunk, n - start);
        std::vector<int64_t> shape = images.shape;
        shape[0] = b;
        Tensor part(shape);
        std::memcpy(part.ptr(), images.ptr() + start * px,
                    static_cast<size_t>(b * px) * sizeof(double));
        Tensor logits = model_forward(model, part);
        for (int64_t i = 0; i < b; ++i)
            out[static_cast<size_t>(start + i)] =
                argmax_row(logits.ptr() + i * logits.dim(1), logits.dim(1));
    }
    return out;
}

double accuracy(const Classifier& model, const LabeledImages& data) {
    std::vector<int> pred = predict(model, data.images);
    int64_t correct = 0;
    for (size_t i = 0; i < pred.size(); ++i)
        if (pred[i] == data.labels[i]) ++correct;
    return static_cast<double>(correct) / static_cast<double>(pred.size());
}

// ---------------------------------------------------------------------------
// training

TrainLog train(Classifier& model, const LabeledImages& train_data,
               const LabeledImages* test_data, const TrainConfig& cfg) {
    if (train_data.count() == 0) fail(ErrorCode::InvalidArgument, "train: empty dataset");
    if (cfg.epochs < 1 || cfg.batch_size < 1 || cfg.learning_rate < 0.0 || cfg.momentum < 0.0)
        fail(ErrorCode::InvalidArgument, "train: invalid config");

    auto params = named_params(model);
    std::vector<Tensor> velocity;
    velocity.reserve(params.size());
    for (auto& p : params) velocity.emplace_back(p.tensor->shape);

    const int64_t n = train_data.count();
    const int64_t px = train_data.pixels();
    std::vector<int64_t> order(static_cast<size_t>(n));
    for (int64_t i = 0; i < n; ++i) order[static_cast<size_t>(i)] = i;

    TrainLog log;
    for (int epoch = 1; epoch <= cfg.epochs; ++epoch) {
        Rng shuf = Rng::stream(cfg.seed, 0x5076ULL, static_cast<uint64_t>(epoch));
        shuf.shuffle(order.begin(), order.end());

        double loss_sum = 0.0;
        int64_t batches = 0;
        for (int64_t start = 0; start < n; start += cfg.batch_size) {
            const int64_t b = std::min<int64_t>(cfg.batch_size, n - start);
            Tensor batch({b, train_data.height(), train_data.width()});
            std::vector<int> labels(static_cast<size_t>(b));
            for (int64_t i = 0; i < b; ++i) {
                const int64_t src = order[static_cast<size_t>(start + i)];
                std::memcpy(batch.ptr() + i * px, train_data.images.ptr() + src * px,
                            static_cast<size_t>(px) * sizeof(double));
                labels[static_cast<size_t>(i)] = train_data.labels[static_cast<size_t>(src)];
            }

            Tape tape;
            Tensor logits = forward(model.layers, batch, &tape);
            const double loss = cross_entropy_batch(logits, labels);
            if (!std::isfinite(loss))
                fail(ErrorCode::Diverged,
                     "training diverged (loss is not finite) at epoch " + std::to_string(epoch));
            loss_sum += loss;
            ++batches;

            Tensor dlogits = cross_entropy_grad(logits, labels);
            const double scale = 1.0 / static_cast<double>(b);
            for (auto& v : dlogits.data) v *= scale;

            std::vector<ParamGrad> grads;
            backward(model.layers, tape, dlogits, &grads);

            size_t pi = 0;
            for (size_t li = 0; li < model.layers.size(); ++li) {
                if (!layer_has_params(model.layers[li])) continue;
                Tensor* slots[2] = {nullptr, nullptr};
                Tensor* gsrc[2] = {&grads[li].dW, &grads[li].db};
                slots[0] = params[pi].tensor;
                slots[1] = params[pi + 1].tensor;
                for (int s = 0; s < 2; ++s) {
                    Tensor& vel = velocity[pi + static_cast<size_t>(s)];
                    Tensor& g = *gsrc[s];
                    Tensor& th = *slots[s];
                    for (int64_t i = 0; i < th.numel(); ++i) {
                        vel.data[i] = cfg.momentum * vel.data[i] + g.data[i];
                        th.data[i] -= cfg.learning_rate * vel.data[i];
                    }
                }
                pi += 2;
            }
        }

        EpochStats st;
        st.epoch = epoch;
        st.mean_loss = loss_sum / static_cast<double>(batches);
        st.train_acc = accuracy(model, train_data);
        st.test_acc = test_data ? accuracy(model, *test_data) : -1.0;
        log.epochs.push_back(st);
    }
    return log;
}

std::string training_log_csv(const TrainLog& log) {
    std::string out = "epoch,mean_loss,train_acc,test_acc\n";
    char buf[128];
    for (const auto& e : log.epochs) {
        std::snprintf(buf, sizeof(buf), "%d,%.6g,%.6g,%.6g\n", e.epoch, e.mean_loss, e.train_acc,
                      e.test_acc);
        out += buf;
    }
    return out;
}

// ---------------------------------------------------------------------------
// arch descriptor + checkpoints

std::string arch_json(const Classifier& model) {
    json j;
    j["id"] = model.id;
    j["input_shape"] = model.input_shape;
    j["num_classes"] = model.num_classes;
    json layers = json::array();
    for (const Layer& l : model.layers) {
        json e;
        e["kind"] = layer_kind_name(l);
        if (auto* nz = std::get_if<NormalizeLayer>(&l)) {
            e["divisor"] = nz->divisor;
            e["mean"] = nz->mean;
        } else if (auto* rs = std::get_if<ReshapeLayer>(&l)) {
            e["target"] = rs->target;
        } else if (auto* a = std::get_if<AffineLayer>(&l)) {
            e["out"] = a->W.dim(0);
            e["in"] = a->W.dim(1);
        } else if (auto* c = std::get_if<Conv2dLayer>(&l)) {
            e["out_ch"] = c->W.dim(0);
            e["in_ch"] = c->W.dim(1);
            e["kh"] = c->W.dim(2);
            e["kw"] = c->W.dim(3);
            e["pad"] = c->pad;
        }
        layers.push_back(e);
    }
    j["layers"] = layers;
    return j.dump();
}

Classifier classifier_from_arch_json(const std::string& json_text) {
    json j;
    try {
        j = json::parse(json_text);
    } catch (const json::exception& e) {
        fail(ErrorCode::Format, std::string("arch descriptor: invalid JSON: ") + e.what());
    }
    Classifier m;
    try {
        m.id = j.at("id").get<std::string>();
        m.input_shape = j.at("input_shape").get<std::vector<int64_t>>();
        m.num_classes = j.at("num_classes").get<int>();
        for (const auto& e : j.at("layers")) {
            const std::string kind = e.at("kind").get<std::string>();
            if (kind == "normalize") {
                m.layers.push_back(NormalizeLayer{e.at("divisor").get<double>(), e.at("mean").get<double>()});
            } else if (kind == "flatten") {
                m.layers.push_back(FlattenLayer{});
            } else if (kind == "reshape") {
                m.layers.push_back(ReshapeLayer{e.at("target").get<std::vector<int64_t>>()});
            } else if (kind == "affine") {
                AffineLayer a;
                a.W = Tensor({e.at("out").get<int64_t>(), e.at("in").get<int64_t>()});
                a.b = Tensor({e.at("out").get<int64_t>()});
                m.layers.push_back(std::move(a));
            } else if (kind == "conv2d") {
                Conv2dLayer c;
                c.W = Tensor({e.at("out_ch").get<int64_t>(), e.at("in_ch").get<int64_t>(),
                              e.at("kh").get<int64_t>(), e.at("kw").get<int64_t>()});
                c.b = Tensor({e.at("out_ch").get<int64_t>()});
                c.pad = e.at("pad").get<int64_t>();
                m.layers.push_back(std::move(c));
            } else if (kind == "relu") {
                m.layers.push_back(ReluLayer{});
            } else if (kind == "maxpool2") {
                m.layers.push_back(MaxPool2Layer{});
            } else {
                fail(ErrorCode::Format, "arch descriptor: unknown layer kind '" + kind + "'");
            }
        }
    } catch (const json::exception& e) {
        fail(ErrorCode::Format, std::string("arch descriptor: missing field: ") + e.what());
    }
    return m;
}

namespace {
constexpr char kCkptMagic[] = "ADVKITCKPT";
constexpr uint32_t kCkptVersion = 1;
} // namespace

void save_checkpoint(const Classifier& model, const std::string& path) {
    std::ofstream os(path, std::ios::binary);
    if (!os) fail(ErrorCode::Io, "checkpoint: cannot write " + path);
    os.write(kCkptMagic, sizeof(kCkptMagic) - 1);
    os.write(reinterpret_cast<const char*>(&kCkptVersion), sizeof(kCkptVersion));
    const std::string arch = arch_json(model);
    const uint64_t len = arch.size();
    os.write(reinterpret_cast<const char*>(&len), sizeof(len));
    os.write(arch.data(), static_cast<std::streamsize>(arch.size()));
    for (const auto& p : named_params(model))
        os.write(reinterpret_cast<const char*>(p.tensor->ptr()),
                 static_cast<std::streamsize>(p.tensor->numel() * sizeof(double)));
    if (!os) fail(ErrorCode::Io, "checkpoint: write failed for " + path);
}

Classifier load_checkpoint(const std::string& path) {
    std::ifstream is(path, std::ios::binary);
    if (!is) fail(ErrorCode::Io, "checkpoint: cannot open " + path);
    char magic[sizeof(kCkptMagic) - 1];
    if (!is.read(magic, sizeof(magic)) || std::memcmp(magic, kCkptMagic, sizeof(magic)) != 0)
        fail(ErrorCode::Format, "checkpoint: corrupt header in " + path);
    uint32_t version = 0;
    if (!is.read(reinterpret_cast<char*>(&version), sizeof(version)))
        fail(ErrorCode::Format, "checkpoint: corrupt header in " + path);
    if (version != kCkptVersion)
        fail(ErrorCode::Format, "checkpoint: unsupported version " + std::to_string(version));
    uint64_t len = 0;
    if (!is.read(reinterpret_cast<char*>(&len), sizeof(len)))
        fail(ErrorCode::Format, "checkpoint: corrupt header in " + path);
    std::string arch(len, '\0');
    if (!is.read(arch.data(), static_cast<std::streamsize>(len)))
        fail(ErrorCode::Format, "checkpoint: truncated arch descriptor in " + path);
    Classifier m = classifier_from_arch_json(arch);
    for (auto& p : named_params(m)) {
        if (!is.read(reinterpret_cast<char*>(p.tensor->ptr()),
                     static_cast<std::streamsize>(p.tensor->numel() * sizeof(double))))
            fail(ErrorCode::Format, "checkpoint: truncated parameter data in " + path);
    }
    return m;
}

void load_checkpoint_into(Classifier& model, const std::string& path) {
    Classifier loaded = load_checkpoint(path);
    const std::string want = arch_json(model);
    Classifier probe = model; // compare descriptors with ids masked
    probe.id = loaded.id;
    if (arch_json(probe) != arch_json(loaded))
        fail(ErrorCode::InvalidArgument,
             "checkpoint: architecture mismatch loading " + path + " into model '" + model.id + "'");
    model.layers = std::move(loaded.layers);
}

} // namespace advkit
