#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "advkit/attack.hpp"

namespace advkit {

/// Mean cosine similarity between smoothed source gradients and plain target
/// gradients, per smoothing sample count. m_values[0] == 0 is the
/// plain-gradient baseline.
struct SimilarityCurve {
    std::vector<int> m_values;
    std::vector<double> mean_cos;
    int64_t n_samples = 0;
    double sigma = 0.0;
};

/// Predicted class over a 2-D grid of perturbations around a clean image.
struct BoundaryGrid {
    std::vector<double> u_values;
    std::vector<double> v_values;
    std::vector<std::vector<int>> pred; // pred[i][j] for (u_values[i], v_values[j])
    int origin_pred = 0;
};

/// <u,v> / (|u||v|); errors on a zero vector.
double cosine(const Tensor& u, const Tensor& v);

/// Component of g orthogonal to G: g - <g, Ghat> Ghat.
Tensor orthogonal_part(const Tensor& g, const Tensor& G);

/// For each m in m_values, mean over the images of
/// cos(smoothed source gradient with m samples, plain target gradient).
/// Sample estimates share one noise stream per image (prefix means), so the
/// curve is comparable across m. A leading m=0 baseline entry is always
/// included.
SimilarityCurve similarity_curve(const Classifier& source, const Classifier& target,
                                 const LabeledImages& data, std::vector<int> m_values,
                                 double sigma, uint64_t seed, int workers = 0);

/// Class predictions over clip(x + u*dirA_hat + v*dirB_hat, 0, 255). dirB is
/// orthonormalized against dirA internally.
BoundaryGrid boundary_scan(const Classifier& model, const Tensor& x_clean,
                           const Tensor& dirA, const Tensor& dirB,
                           const std::vector<double>& u_range,
                           const std::vector<double>& v_range, int workers = 0);

std::vector<double> linspace(double lo, double hi, int count);

std::string similarity_csv(const SimilarityCurve& c);
std::string boundary_csv(const BoundaryGrid& g);

} // namespace advkit
