#include "advkit/analysis.hpp"

#include <algorithm>
#include <cmath>
#include <cstring>
#include <sstream>

#include "advkit/parallel.hpp"

namespace advkit {

double cosine(const Tensor& u, const Tensor& v) {
    if (!u.same_shape(v)) fail(ErrorCode::Shape, "cosine: shape mismatch");
    const double nu = norm2(u), nv = norm2(v);
    if (nu == 0.0 || nv == 0.0) fail(ErrorCode::InvalidArgument, "cosine: zero vector");
    return dot(u, v) / (nu * nv);
}

Tensor orthogonal_part(const Tensor& g, const Tensor& G) {
    if (!g.same_shape(G)) fail(ErrorCode::Shape, "orthogonal_part: shape mismatch");
    const double nG = norm2(G);
    if (nG == 0.0) fail(ErrorCode::InvalidArgument, "orthogonal_part: zero reference vector");
    const double proj = dot(g, G) / (nG * nG);
    Tensor h(g.shape);
    for (int64_t i = 0; i < g.numel(); ++i) h.data[i] = g.data[i] - proj * G.data[i];
    return h;
}

SimilarityCurve similarity_curve(const Classifier& source, const Classifier& target,
                                 const LabeledImages& data, std::vector<int> m_values,
                                 double sigma, uint64_t seed, int workers) {
    if (source.input_shape != target.input_shape)
        fail(ErrorCode::InvalidArgument, "similarity_curve: models have different input shapes");
    if (data.count() == 0) fail(ErrorCode::InvalidArgument, "similarity_curve: empty dataset");
    std::sort(m_values.begin(), m_values.end());
    m_values.erase(std::unique(m_values.begin(), m_values.end()), m_values.end());
    if (!m_values.empty() && m_values.front() == 0) m_values.erase(m_values.begin());
    for (int m : m_values)
        if (m < 1) fail(ErrorCode::InvalidArgument, "similarity_curve: m values must be >= 1");

    const int64_t N = data.count();
    const size_t M = m_values.size();
    const int max_m = m_values.empty() ? 0 : m_values.back();

    EnsembleSource src = EnsembleSource::single(source);
    EnsembleSource tgt = EnsembleSource::single(target);

    // per image: cos(g_A, g_B) baseline plus one prefix-mean estimate per m
    std::vector<double> base(static_cast<size_t>(N));
    std::vector<std::vector<double>> per_m(M, std::vector<double>(static_cast<size_t>(N)));

    parallel_for(N, workers, [&](int64_t i) {
        const Tensor x = data.image(i);
        const int label = data.labels[static_cast<size_t>(i)];
        const Tensor gB = loss_and_grad(tgt, x, label).grad;
        const Tensor gA = loss_and_grad(src, x, label).grad;
        base[static_cast<size_t>(i)] = cosine(gA, gB);

        if (max_m == 0) return;
        if (sigma == 0.0) {
            for (size_t k = 0; k < M; ++k) per_m[k][static_cast<size_t>(i)] = base[static_cast<size_t>(i)];
            return;
        }
        const int64_t d = x.numel();
        Tensor running_sum(x.shape);
        Rng rng = Rng::stream(seed, static_cast<uint64_t>(i), 0x51A10ULL);
        size_t next = 0;
        for (int k = 1; k <= max_m; ++k) {
            Tensor pt(x.shape);
            for (int64_t j = 0; j < d; ++j) pt.data[j] = x.data[j] + sigma * rng.gaussian();
            const Tensor g = loss_and_grad(src, pt, label).grad;
            for (int64_t j = 0; j < d; ++j) running_sum.data[j] += g.data[j];
            while (next < M && m_values[next] == k) {
                Tensor mean(x.shape);
                const double inv = 1.0 / static_cast<double>(k);
                for (int64_t j = 0; j < d; ++j) mean.data[j] = running_sum.data[j] * inv;
                per_m[next][static_cast<size_t>(i)] = cosine(mean, gB);
                ++next;
            }
        }
    });

    SimilarityCurve curve;
    curve.sigma = sigma;
    curve.n_samples = N;
    curve.m_values.push_back(0);
    double mean_base = 0.0;
    for (double v : base) mean_base += v;
    curve.mean_cos.push_back(mean_base / static_cast<double>(N));
    for (size_t k = 0; k < M; ++k) {
        curve.m_values.push_back(m_values[k]);
        double s = 0.0;
        for (double v : per_m[k]) s += v;
        curve.mean_cos.push_back(s / static_cast<double>(N));
    }
    return curve;
}

BoundaryGrid boundary_scan(const Classifier& model, const Tensor& x_clean,
                           const Tensor& dirA, const Tensor& dirB,
                           const std::vector<double>& u_range,
                           const std::vector<double>& v_range, int workers) {
    if (u_range.empty() || v_range.empty())
        fail(ErrorCode::InvalidArgument, "boundary_scan: empty grid range");
    const double nA = norm2(dirA);
    if (nA == 0.0) fail(ErrorCode::InvalidArgument, "boundary_scan: zero direction A");
    Tensor a(dirA.shape);
    for (int64_t i = 0; i < a.numel(); ++i) a.data[i] = dirA.data[i] / nA;
    Tensor b = orthogonal_part(dirB, a);
    const double nB = norm2(b);
    if (nB == 0.0) fail(ErrorCode::InvalidArgument, "boundary_scan: direction B parallel to A");
    for (int64_t i = 0; i < b.numel(); ++i) b.data[i] /= nB;

    if (x_clean.numel() != a.numel())
        fail(ErrorCode::Shape, "boundary_scan: direction/image size mismatch");

    BoundaryGrid grid;
    grid.u_values = u_range;
    grid.v_values = v_range;
    grid.pred.assign(u_range.size(), std::vector<int>(v_range.size(), 0));
    {
        Tensor logits = model_forward_single(model, x_clean);
        grid.origin_pred = argmax_row(logits.ptr(), logits.numel());
    }

    const int64_t cells = static_cast<int64_t>(u_range.size() * v_range.size());
    parallel_for(cells, workers, [&](int64_t c) {
        const size_t i = static_cast<size_t>(c) / v_range.size();
        const size_t j = static_cast<size_t>(c) % v_range.size();
        Tensor pt(x_clean.shape);
        for (int64_t k = 0; k < pt.numel(); ++k) {
            double v = x_clean.data[k] + u_range[i] * a.data[k] + v_range[j] * b.data[k];
            pt.data[k] = std::clamp(v, 0.0, 255.0);
        }
        Tensor logits = model_forward_single(model, pt);
        grid.pred[i][j] = argmax_row(logits.ptr(), logits.numel());
    });
    return grid;
}

std::vector<double> linspace(double lo, double hi, int count) {
    if (count < 1) fail(ErrorCode::InvalidArgument, "linspace: count must be >= 1");
    std::vector<double> out(static_cast<size_t>(count));
    if (count == 1) {
        out[0] = lo;
        return out;
    }
    const double step = (hi - lo) / static_cast<double>(count - 1);
    for (int i = 0; i < count; ++i) out[static_cast<size_t>(i)] = lo + step * i;
    return out;
}

namespace {
std::string fmt(double v) {
    char buf[32];
    std::snprintf(buf, sizeof(buf), "%.6g", v);
    return buf;
}
} // namespace

std::string similarity_csv(const SimilarityCurve& c) {
    std::ostringstream os;
    os << "m,mean_cos,n_samples,sigma\n";
    for (size_t i = 0; i < c.m_values.size(); ++i)
        os << c.m_values[i] << "," << fmt(c.mean_cos[i]) << "," << c.n_samples << ","
           << fmt(c.sigma) << "\n";
    return os.str();
}

std::string boundary_csv(const BoundaryGrid& g) {
    std::ostringstream os;
    os << "u\\v";
    for (double v : g.v_values) os << "," << fmt(v);
    os << "\n";
    for (size_t i = 0; i < g.u_values.size(); ++i) {
        os << fmt(g.u_values[i]);
        for (size_t j = 0; j < g.v_values.size(); ++j) os << "," << g.pred[i][j];
        os << "\n";
    }
    return os.str();
}

} // namespace advkit
