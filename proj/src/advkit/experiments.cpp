#include "advkit/experiments.hpp"

#include <algorithm>
#include <chrono>
#include <cmath>
#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <map>
#include <set>
#include <sstream>

#include <json.hpp>

#include "advkit/analysis.hpp"
#include "advkit/attack.hpp"
#include "advkit/evaluation.hpp"
#include "advkit/models.hpp"
#include "advkit/rng.hpp"

namespace advkit {

using nlohmann::json;
namespace fs = std::filesystem;

namespace {

std::string fmt_rate(double v) {
    char buf[32];
    std::snprintf(buf, sizeof(buf), "%.4f", v);
    return buf;
}

std::string fmt_g(double v) {
    char buf[32];
    std::snprintf(buf, sizeof(buf), "%.6g", v);
    return buf;
}

void write_text(const fs::path& path, const std::string& body) {
    std::ofstream os(path, std::ios::binary);
    if (!os) fail(ErrorCode::Io, "cannot write " + path.string());
    os << body;
    if (!os) fail(ErrorCode::Io, "write failed for " + path.string());
}

json parse_config(const std::string& text) {
    try {
        return json::parse(text);
    } catch (const json::exception& e) {
        fail(ErrorCode::Format, std::string("experiment config: invalid JSON: ") + e.what());
    }
}

DatasetBundle load_dataset(const json& spec) {
    DatasetBundle bundle;
    const std::string kind = spec.value("kind", "synth");
    if (kind == "synth") {
        const int64_t n_per_class = spec.value("n_per_class", static_cast<int64_t>(600));
        const int classes = spec.value("classes", 10);
        const int64_t d = spec.value("d", static_cast<int64_t>(784));
        const uint64_t seed = spec.value("seed", static_cast<uint64_t>(13));
        const double test_fraction = spec.value("test_fraction", 1.0 / 6.0);
        LabeledImages full = synth_blobs(n_per_class, classes, d, seed);
        auto [train, test] = split(full, test_fraction, seed ^ 0x5EEDULL);
        bundle.train = std::move(train);
        bundle.test = std::move(test);
    } else if (kind == "idx") {
        bundle.train = load_idx(spec.at("train_images").get<std::string>(),
                                spec.at("train_labels").get<std::string>());
        if (spec.contains("test_images")) {
            bundle.test = load_idx(spec.at("test_images").get<std::string>(),
                                   spec.at("test_labels").get<std::string>());
        } else {
            auto [train, test] = split(bundle.train, spec.value("test_fraction", 1.0 / 6.0),
                                       spec.value("seed", static_cast<uint64_t>(13)));
            bundle.train = std::move(train);
            bundle.test = std::move(test);
        }
    } else if (kind == "mnist") {
        std::string root = spec.value("root", "");
        if (root.empty()) {
            const char* env = std::getenv("ADVKIT_DATA");
            if (!env || !*env)
                fail(ErrorCode::InvalidArgument,
                     "dataset kind 'mnist' needs a root (config key 'root' or ADVKIT_DATA)");
            root = env;
        }
        auto pick = [&](const char* a, const char* b) {
            const fs::path pa = fs::path(root) / a;
            if (fs::exists(pa)) return pa.string();
            return (fs::path(root) / b).string();
        };
        bundle.train = load_idx(pick("train-images-idx3-ubyte", "train-images-idx3-ubyte.gz"),
                                pick("train-labels-idx1-ubyte", "train-labels-idx1-ubyte.gz"));
        bundle.test = load_idx(pick("t10k-images-idx3-ubyte", "t10k-images-idx3-ubyte.gz"),
                               pick("t10k-labels-idx1-ubyte", "t10k-labels-idx1-ubyte.gz"));
    } else {
        fail(ErrorCode::InvalidArgument, "unknown dataset kind '" + kind + "'");
    }
    bundle.train.validate();
    bundle.test.validate();
    return bundle;
}

struct LoadedModels {
    std::vector<Classifier> storage;
    std::vector<const Classifier*> ptrs;
};

LoadedModels load_models(const json& paths) {
    LoadedModels lm;
    lm.storage.reserve(paths.size());
    for (const auto& p : paths) lm.storage.push_back(load_checkpoint(p.get<std::string>()));
    for (const auto& m : lm.storage) lm.ptrs.push_back(&m);
    return lm;
}

AttackConfig attack_config_from(const json& j) {
    return AttackConfig::from_json(j.dump());
}

std::vector<int> random_targets(const std::vector<int>& labels, int num_classes, uint64_t seed) {
    Rng rng = Rng::stream(seed, 0x7A46E7ULL);
    std::vector<int> out(labels.size());
    for (size_t i = 0; i < labels.size(); ++i) {
        int t = static_cast<int>(rng.below(static_cast<uint64_t>(num_classes - 1)));
        if (t >= labels[i]) ++t;
        out[i] = t;
    }
    return out;
}

void write_common(const fs::path& out, const json& resolved, ExperimentOutcome& oc) {
    write_text(out / "resolved_config.json", resolved.dump(2) + "\n");
    oc.files.push_back("resolved_config.json");
    json meta;
    meta["timestamp_unix_ms"] =
        std::chrono::duration_cast<std::chrono::milliseconds>(
            std::chrono::system_clock::now().time_since_epoch())
            .count();
    write_text(out / "run_meta.json", meta.dump(2) + "\n");
}

void finish(const fs::path& out, const json& result, ExperimentOutcome& oc) {
    oc.result_json = result.dump(2) + "\n";
    write_text(out / "result.json", oc.result_json);
    oc.files.push_back("result.json");
}

// ---------------------------------------------------------------------------

ExperimentOutcome run_train(const json& cfg, const fs::path& out, int /*workers*/) {
    ExperimentOutcome oc;
    DatasetBundle data = load_dataset(cfg.value("dataset", json::object()));

    const std::string arch = cfg.value("arch", "fnn");
    const uint64_t seed = cfg.value("seed", static_cast<uint64_t>(1));
    const double mean = mean_pixel(data.train);
    Classifier model;
    if (arch == "fnn") {
        model = build_fnn(cfg.value("depth", 2), cfg.value("width", static_cast<int64_t>(500)),
                          seed, mean, data.train.height(), 10);
    } else if (arch == "lenet") {
        if (data.train.height() != 28 || data.train.width() != 28)
            fail(ErrorCode::InvalidArgument, "lenet expects 28x28 input");
        model = build_lenet(seed, mean);
    } else {
        fail(ErrorCode::InvalidArgument, "unknown arch '" + arch + "' (fnn or lenet)");
    }
    if (cfg.contains("model_id")) model.id = cfg.at("model_id").get<std::string>();

    TrainConfig tc;
    const json& tj = cfg.value("train", json::object());
    tc.epochs = tj.value("epochs", 10);
    tc.batch_size = tj.value("batch_size", 64);
    tc.learning_rate = tj.value("learning_rate", 0.1);
    tc.momentum = tj.value("momentum", 0.9);
    tc.seed = seed;

    TrainLog log = train(model, data.train, &data.test, tc);

    const std::string ckpt = model.id + ".ckpt";
    save_checkpoint(model, (out / ckpt).string());
    oc.files.push_back(ckpt);

    write_text(out / "training_log.csv", training_log_csv(log));
    oc.files.push_back("training_log.csv");

    json result;
    result["model_id"] = model.id;
    result["checkpoint"] = ckpt;
    result["final_train_acc"] = log.epochs.back().train_acc;
    result["final_test_acc"] = log.epochs.back().test_acc;
    finish(out, result, oc);
    return oc;
}

ExperimentOutcome run_attack_exp(const json& cfg, const fs::path& out, int workers) {
    ExperimentOutcome oc;
    DatasetBundle data = load_dataset(cfg.value("dataset", json::object()));
    LoadedModels sources = load_models(cfg.at("models"));
    LoadedModels targets;
    if (cfg.contains("targets")) targets = load_models(cfg.at("targets"));

    EnsembleSource source;
    source.models = sources.ptrs;
    if (cfg.contains("weights"))
        source.weights = cfg.at("weights").get<std::vector<double>>();
    else
        source.weights.assign(source.models.size(), 1.0 / static_cast<double>(source.models.size()));
    source.validate();

    AttackConfig ac = attack_config_from(cfg.at("attack"));
    const int64_t n_eval = cfg.value("n_eval", static_cast<int64_t>(1000));
    const uint64_t eval_seed = cfg.value("eval_seed", static_cast<uint64_t>(7));

    std::vector<const Classifier*> all = sources.ptrs;
    for (auto* t : targets.ptrs) all.push_back(t);
    LabeledImages eval = select_correct(all, data.test, n_eval, eval_seed);

    std::vector<int> tlabels;
    const std::vector<int>* tptr = nullptr;
    if (ac.targeted) {
        tlabels = random_targets(eval.labels, source.num_classes(), ac.seed);
        tptr = &tlabels;
    }
    AdvBatch batch = run_attack(source, eval, ac, tptr, workers);
    oc.warnings = batch.warnings;
    save_adv_batch(batch, (out / "advbatch").string());
    oc.files.push_back("advbatch/manifest.json");

    json result;
    result["source"] = batch.source_id;
    result["n"] = batch.count();
    if (!targets.ptrs.empty()) {
        EvalReport report;
        for (const Classifier* tgt : targets.ptrs) {
            EvalEntry e;
            e.n = batch.count();
            e.top1_nontarget = success_rate_nontarget(*tgt, batch, 1);
            e.top5_nontarget = success_rate_nontarget(*tgt, batch, 5);
            if (ac.targeted) {
                e.top1_target = success_rate_target(*tgt, batch, 1);
                e.top5_target = success_rate_target(*tgt, batch, 5);
            }
            report.entries[{batch.source_id, tgt->id, method_name(ac.method)}] = e;
        }
        write_text(out / "eval.csv", report.to_csv());
        oc.files.push_back("eval.csv");
        result["eval"] = json::parse(report.to_json());
    }
    finish(out, result, oc);
    return oc;
}

ExperimentOutcome run_transfer(const json& cfg, const fs::path& out, int workers) {
    ExperimentOutcome oc;
    DatasetBundle data = load_dataset(cfg.value("dataset", json::object()));
    LoadedModels models = load_models(cfg.at("models"));
    AttackConfig ac = attack_config_from(cfg.at("attack"));
    const int64_t n_eval = cfg.value("n_eval", static_cast<int64_t>(1000));
    const uint64_t eval_seed = cfg.value("eval_seed", static_cast<uint64_t>(7));

    LabeledImages eval = select_correct(models.ptrs, data.test, n_eval, eval_seed);

    TransferOptions opts;
    opts.include_diagonal = cfg.value("include_diagonal", false);
    opts.workers = workers;
    EvalReport report = transfer_matrix(models.ptrs, eval, ac, opts);

    write_text(out / "transfer.csv", report.to_csv());
    write_text(out / "transfer.json", report.to_json() + "\n");
    oc.files.push_back("transfer.csv");
    oc.files.push_back("transfer.json");

    json result;
    result["n"] = eval.count();
    result["cells"] = report.entries.size();
    finish(out, result, oc);
    return oc;
}

ExperimentOutcome run_sweep_sigma_m(const json& cfg, const fs::path& out, int workers) {
    ExperimentOutcome oc;
    DatasetBundle data = load_dataset(cfg.value("dataset", json::object()));

    json source_paths = cfg.contains("sources") ? cfg.at("sources") : json::array({cfg.at("source")});
    LoadedModels sources = load_models(source_paths);
    Classifier target = load_checkpoint(cfg.at("target").get<std::string>());

    AttackConfig base = attack_config_from(cfg.at("base"));
    if (!base.uses_smoothing())
        fail(ErrorCode::InvalidArgument, "sweep-sigma-m: base method must be a vr method");
    const std::vector<double> sigmas = cfg.at("sigmas").get<std::vector<double>>();
    const std::vector<int> ms = cfg.at("ms").get<std::vector<int>>();
    const std::vector<double> epsilons =
        cfg.contains("epsilons") ? cfg.at("epsilons").get<std::vector<double>>()
                                 : std::vector<double>{base.epsilon};
    const int64_t n_eval = cfg.value("n_eval", static_cast<int64_t>(1000));
    const uint64_t eval_seed = cfg.value("eval_seed", static_cast<uint64_t>(7));

    std::ostringstream csv;
    csv << "source,target,sigma,m,epsilon,top1_nontarget,n\n";
    json rows = json::array();
    for (const Classifier& src : sources.storage) {
        std::vector<const Classifier*> both = {&src, &target};
        LabeledImages eval = select_correct(both, data.test, n_eval, eval_seed);
        EnsembleSource es = EnsembleSource::single(src);
        for (double eps : epsilons) {
            for (double sigma : sigmas) {
                for (int m : ms) {
                    AttackConfig ac = base;
                    ac.epsilon = eps;
                    if (ac.method == AttackMethod::VrFgsm) ac.alpha = eps;
                    ac.sigma = sigma;
                    ac.m = m;
                    ac.validate();
                    AdvBatch batch = run_attack(es, eval, ac, nullptr, workers);
                    const double rate = success_rate_nontarget(target, batch, 1);
                    csv << src.id << "," << target.id << "," << fmt_g(sigma) << "," << m << ","
                        << fmt_g(eps) << "," << fmt_rate(rate) << "," << batch.count() << "\n";
                    json r;
                    r["source"] = src.id;
                    r["sigma"] = sigma;
                    r["m"] = m;
                    r["epsilon"] = eps;
                    r["top1_nontarget"] = rate;
                    rows.push_back(r);
                }
            }
        }
    }
    write_text(out / "sweep_sigma_m.csv", csv.str());
    oc.files.push_back("sweep_sigma_m.csv");

    json result;
    result["target"] = target.id;
    result["rows"] = rows;
    finish(out, result, oc);
    return oc;
}

ExperimentOutcome run_sweep_step_size(const json& cfg, const fs::path& out, int workers) {
    ExperimentOutcome oc;
    DatasetBundle data = load_dataset(cfg.value("dataset", json::object()));
    Classifier source = load_checkpoint(cfg.at("source").get<std::string>());
    Classifier target = load_checkpoint(cfg.at("target").get<std::string>());

    const double eps = cfg.value("epsilon", 20.0);
    const std::vector<double> alphas =
        cfg.contains("alphas") ? cfg.at("alphas").get<std::vector<double>>()
                               : std::vector<double>{eps / 4.0, eps / 2.0, 3.0 * eps / 4.0, eps};
    const std::vector<int> Ts = cfg.contains("Ts") ? cfg.at("Ts").get<std::vector<int>>()
                                                   : std::vector<int>{1, 5, 20};
    const int64_t n_eval = cfg.value("n_eval", static_cast<int64_t>(500));
    const uint64_t eval_seed = cfg.value("eval_seed", static_cast<uint64_t>(7));
    const uint64_t seed = cfg.value("seed", static_cast<uint64_t>(1));

    std::vector<const Classifier*> both = {&source, &target};
    LabeledImages eval = select_correct(both, data.test, n_eval, eval_seed);
    std::vector<int> tlabels = random_targets(eval.labels, source.num_classes, seed);
    EnsembleSource es = EnsembleSource::single(source);

    std::ostringstream csv;
    csv << "source,target,alpha,T,epsilon,top1_target,top5_target,n\n";
    for (double alpha : alphas) {
        for (int T : Ts) {
            AttackConfig ac;
            ac.method = AttackMethod::Igsm;
            ac.targeted = true;
            ac.epsilon = eps;
            ac.alpha = alpha;
            ac.iterations = T;
            ac.seed = seed;
            ac.validate();
            AdvBatch batch = run_attack(es, eval, ac, &tlabels, workers);
            csv << source.id << "," << target.id << "," << fmt_g(alpha) << "," << T << ","
                << fmt_g(eps) << "," << fmt_rate(success_rate_target(target, batch, 1)) << ","
                << fmt_rate(success_rate_target(target, batch, 5)) << "," << batch.count() << "\n";
        }
    }
    write_text(out / "sweep_step_size.csv", csv.str());
    oc.files.push_back("sweep_step_size.csv");

    json result;
    result["n"] = eval.count();
    finish(out, result, oc);
    return oc;
}

TransformSpec transform_from_json(const std::string& kind, double value) {
    TransformSpec spec;
    if (kind == "rotation") spec.kind = TransformKind::Rotation;
    else if (kind == "gaussian_noise") spec.kind = TransformKind::GaussianNoise;
    else if (kind == "gaussian_blur") spec.kind = TransformKind::GaussianBlur;
    else if (kind == "jpeg_like") spec.kind = TransformKind::JpegLike;
    else fail(ErrorCode::InvalidArgument, "unknown transform kind '" + kind + "'");
    spec.value = value;
    spec.validate();
    return spec;
}

json default_transform_sweeps() {
    return json::parse(R"([
        {"kind":"rotation","values":[0,10,20,30]},
        {"kind":"gaussian_noise","values":[0,10,20,40]},
        {"kind":"gaussian_blur","values":[0,1,2,3]},
        {"kind":"jpeg_like","values":[10,30,60,90]}
    ])");
}

ExperimentOutcome run_robustness(const json& cfg, const fs::path& out, int workers) {
    ExperimentOutcome oc;
    DatasetBundle data = load_dataset(cfg.value("dataset", json::object()));
    Classifier source = load_checkpoint(cfg.at("source").get<std::string>());
    Classifier target = load_checkpoint(cfg.at("target").get<std::string>());

    const int64_t n_eval = cfg.value("n_eval", static_cast<int64_t>(1000));
    const uint64_t eval_seed = cfg.value("eval_seed", static_cast<uint64_t>(7));
    const uint64_t tseed = cfg.value("transform_seed", static_cast<uint64_t>(3));
    std::vector<const Classifier*> both = {&source, &target};
    LabeledImages eval = select_correct(both, data.test, n_eval, eval_seed);
    EnsembleSource es = EnsembleSource::single(source);

    const json methods = cfg.at("methods");
    const json sweeps = cfg.contains("transforms") ? cfg.at("transforms") : default_transform_sweeps();

    std::ostringstream csv;
    csv << "source,target,method,transform,param,destruction_rate,n_attacked\n";
    json rows = json::array();
    for (const auto& mj : methods) {
        AttackConfig ac = attack_config_from(mj);
        AdvBatch batch = run_attack(es, eval, ac, nullptr, workers);
        // denominator of the destruction rate: originally-correct images whose
        // adversarial version fools the target
        std::vector<int> p_adv = predict(target, batch.adv);
        int64_t attacked = 0;
        for (int64_t i = 0; i < batch.count(); ++i)
            if (p_adv[static_cast<size_t>(i)] != eval.labels[static_cast<size_t>(i)]) ++attacked;
        for (const auto& sj : sweeps) {
            const std::string kind = sj.at("kind").get<std::string>();
            for (double value : sj.at("values").get<std::vector<double>>()) {
                TransformSpec spec = transform_from_json(kind, value);
                Tensor transformed = apply_transform(batch.adv, spec, tseed);
                double rate;
                try {
                    rate = destruction_rate(target, eval, batch.adv, transformed);
                } catch (const Error&) {
                    oc.warnings.push_back("no successfully attacked images for method " +
                                          std::string(method_name(ac.method)));
                    continue;
                }
                csv << source.id << "," << target.id << "," << method_name(ac.method) << ","
                    << kind << "," << fmt_g(value) << "," << fmt_rate(rate) << "," << attacked
                    << "\n";
                json r;
                r["method"] = method_name(ac.method);
                r["transform"] = kind;
                r["param"] = value;
                r["destruction_rate"] = rate;
                r["n_attacked"] = attacked;
                rows.push_back(r);
            }
        }
    }
    write_text(out / "robustness.csv", csv.str());
    oc.files.push_back("robustness.csv");

    json result;
    result["rows"] = rows;
    finish(out, result, oc);
    return oc;
}

ExperimentOutcome run_similarity(const json& cfg, const fs::path& out, int workers) {
    ExperimentOutcome oc;
    DatasetBundle data = load_dataset(cfg.value("dataset", json::object()));
    Classifier source = load_checkpoint(cfg.at("source").get<std::string>());
    Classifier target = load_checkpoint(cfg.at("target").get<std::string>());

    const int64_t n_eval = cfg.value("n_eval", static_cast<int64_t>(200));
    const uint64_t eval_seed = cfg.value("eval_seed", static_cast<uint64_t>(7));
    const uint64_t seed = cfg.value("seed", static_cast<uint64_t>(1));
    const double sigma = cfg.value("sigma", 15.0);
    const std::vector<int> m_values = cfg.contains("m_values")
                                          ? cfg.at("m_values").get<std::vector<int>>()
                                          : std::vector<int>{1, 2, 5, 10, 20, 50, 100};

    std::vector<const Classifier*> both = {&source, &target};
    LabeledImages eval = select_correct(both, data.test, n_eval, eval_seed);

    SimilarityCurve curve = similarity_curve(source, target, eval, m_values, sigma, seed, workers);
    write_text(out / "similarity.csv", similarity_csv(curve));
    oc.files.push_back("similarity.csv");

    json result;
    result["m"] = curve.m_values;
    result["mean_cos"] = curve.mean_cos;
    result["sigma"] = curve.sigma;
    result["n"] = curve.n_samples;
    finish(out, result, oc);
    return oc;
}

ExperimentOutcome run_boundary(const json& cfg, const fs::path& out, int workers) {
    ExperimentOutcome oc;
    DatasetBundle data = load_dataset(cfg.value("dataset", json::object()));
    Classifier model = load_checkpoint(cfg.at("model").get<std::string>());
    Classifier dir_source = cfg.contains("direction_source")
                                ? load_checkpoint(cfg.at("direction_source").get<std::string>())
                                : load_checkpoint(cfg.at("model").get<std::string>());

    const int64_t index = cfg.value("image_index", static_cast<int64_t>(0));
    if (index < 0 || index >= data.test.count())
        fail(ErrorCode::InvalidArgument, "boundary: image_index out of range");
    const Tensor x = data.test.image(index);
    const int label = data.test.labels[static_cast<size_t>(index)];

    const int m = cfg.value("m", 1000);
    const double sigma = cfg.value("sigma", 15.0);
    const uint64_t seed = cfg.value("seed", static_cast<uint64_t>(1));

    EnsembleSource es = EnsembleSource::single(dir_source);
    Rng rng = Rng::stream(seed, 0xB0DABULL);
    Tensor G = smoothed_grad(es, x, label, m, sigma, rng);
    Tensor g = loss_and_grad(es, x, label).grad;
    Tensor h = orthogonal_part(g, G);

    const json uj = cfg.value("u", json::object());
    const json vj = cfg.value("v", json::object());
    auto range = [&](const json& rj) {
        return linspace(rj.value("min", -40.0), rj.value("max", 40.0), rj.value("count", 41));
    };
    BoundaryGrid grid = boundary_scan(model, x, G, h, range(uj), range(vj), workers);
    write_text(out / "boundary.csv", boundary_csv(grid));
    oc.files.push_back("boundary.csv");

    json result;
    result["origin_pred"] = grid.origin_pred;
    result["true_label"] = label;
    result["model"] = model.id;
    result["direction_source"] = dir_source.id;
    finish(out, result, oc);
    return oc;
}

} // namespace

DatasetBundle load_dataset_spec(const std::string& spec_json) {
    return load_dataset(parse_config(spec_json));
}

ExperimentOutcome run_experiment(const std::string& config_json, const std::string& out_dir,
                                 int workers) {
    json cfg = parse_config(config_json);
    const std::string kind = cfg.value("kind", "");
    if (kind.empty()) fail(ErrorCode::InvalidArgument, "experiment config: missing 'kind'");

    fs::path out(out_dir);
    std::error_code ec;
    fs::create_directories(out, ec);
    if (ec) fail(ErrorCode::Io, "cannot create output directory " + out_dir);

    ExperimentOutcome oc;
    if (kind == "train") oc = run_train(cfg, out, workers);
    else if (kind == "attack") oc = run_attack_exp(cfg, out, workers);
    else if (kind == "transfer") oc = run_transfer(cfg, out, workers);
    else if (kind == "sweep-sigma-m") oc = run_sweep_sigma_m(cfg, out, workers);
    else if (kind == "sweep-step-size") oc = run_sweep_step_size(cfg, out, workers);
    else if (kind == "robustness") oc = run_robustness(cfg, out, workers);
    else if (kind == "similarity") oc = run_similarity(cfg, out, workers);
    else if (kind == "boundary") oc = run_boundary(cfg, out, workers);
    else fail(ErrorCode::InvalidArgument, "unknown experiment kind '" + kind + "'");

    write_common(out, cfg, oc);
    return oc;
}

// ---------------------------------------------------------------------------
// report

ExperimentOutcome render_report(const std::string& dir) {
    ExperimentOutcome oc;
    if (!fs::exists(dir)) fail(ErrorCode::Io, "report: directory does not exist: " + dir);

    std::vector<fs::path> csvs;
    for (const auto& e : fs::recursive_directory_iterator(dir)) {
        if (!e.is_regular_file()) continue;
        const std::string name = e.path().filename().string();
        if (e.path().extension() == ".csv" && name != "report.csv") csvs.push_back(e.path());
    }
    std::sort(csvs.begin(), csvs.end());

    // key = source,target,method,metric -> (value string, n)
    std::map<std::array<std::string, 4>, std::pair<std::string, std::string>> rows;
    std::vector<std::string> conflicts;
    for (const auto& p : csvs) {
        std::ifstream is(p);
        std::string header;
        if (!std::getline(is, header)) {
            oc.warnings.push_back("malformed artifact (empty): " + p.string());
            continue;
        }
        if (header != "source,target,method,metric,value,n") continue; // other schema
        std::string line;
        size_t lineno = 1;
        while (std::getline(is, line)) {
            ++lineno;
            if (line.empty()) continue;
            std::array<std::string, 6> f;
            size_t start = 0;
            bool ok = true;
            for (int i = 0; i < 6; ++i) {
                const size_t comma = line.find(',', start);
                if (i < 5) {
                    if (comma == std::string::npos) {
                        ok = false;
                        break;
                    }
                    f[static_cast<size_t>(i)] = line.substr(start, comma - start);
                    start = comma + 1;
                } else {
                    f[5] = line.substr(start);
                }
            }
            if (!ok) {
                oc.warnings.push_back("malformed artifact: " + p.string() + " line " +
                                      std::to_string(lineno));
                continue;
            }
            const std::array<std::string, 4> key = {f[0], f[1], f[2], f[3]};
            auto it = rows.find(key);
            if (it == rows.end()) {
                rows[key] = {f[4], f[5]};
            } else if (it->second.first != f[4]) {
                conflicts.push_back(f[0] + "/" + f[1] + "/" + f[2] + "/" + f[3]);
            }
        }
    }
    if (!conflicts.empty()) {
        std::string list;
        for (const auto& c : conflicts) list += (list.empty() ? "" : ", ") + c;
        fail(ErrorCode::InvalidArgument, "report: conflicting duplicate keys: " + list);
    }
    if (rows.empty()) oc.warnings.push_back("report: no success-rate artifacts found under " + dir);

    std::ostringstream merged;
    merged << "source,target,method,metric,value,n\n";
    for (const auto& [k, v] : rows)
        merged << k[0] << "," << k[1] << "," << k[2] << "," << k[3] << "," << v.first << ","
               << v.second << "\n";
    write_text(fs::path(dir) / "report.csv", merged.str());
    oc.files.push_back("report.csv");

    json jr = json::array();
    for (const auto& [k, v] : rows) {
        json o;
        o["source"] = k[0];
        o["target"] = k[1];
        o["method"] = k[2];
        o["metric"] = k[3];
        o["value"] = v.first;
        o["n"] = v.second;
        jr.push_back(o);
    }
    write_text(fs::path(dir) / "report.json", jr.dump(2) + "\n");
    oc.files.push_back("report.json");

    // markdown: one table per metric, rows = source, cols = target,
    // "left / right" cells when exactly two methods are present
    std::set<std::string> metrics, methods;
    std::set<std::string> sources, targets_set;
    for (const auto& [k, v] : rows) {
        sources.insert(k[0]);
        targets_set.insert(k[1]);
        methods.insert(k[2]);
        metrics.insert(k[3]);
    }
    std::ostringstream md;
    md << "# Evaluation report\n";
    for (const auto& metric : metrics) {
        md << "\n## " << metric;
        if (!methods.empty()) {
            md << " (";
            bool first = true;
            for (const auto& m : methods) {
                if (!first) md << " / ";
                md << m;
                first = false;
            }
            md << ")";
        }
        md << "\n\n| source \\ target |";
        for (const auto& t : targets_set) md << " " << t << " |";
        md << "\n|---|";
        for (size_t i = 0; i < targets_set.size(); ++i) md << "---|";
        md << "\n";
        for (const auto& s : sources) {
            md << "| " << s << " |";
            for (const auto& t : targets_set) {
                std::string cell;
                for (const auto& m : methods) {
                    auto it = rows.find({s, t, m, metric});
                    if (!cell.empty()) cell += " / ";
                    cell += it == rows.end() ? "-" : it->second.first;
                }
                md << " " << cell << " |";
            }
            md << "\n";
        }
    }
    write_text(fs::path(dir) / "report.md", md.str());
    oc.files.push_back("report.md");

    json result;
    result["rows"] = rows.size();
    result["warnings"] = oc.warnings;
    oc.result_json = result.dump(2) + "\n";
    return oc;
}

} // namespace advkit
