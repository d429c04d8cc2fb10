#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "advkit/tensor.hpp"

namespace advkit {

struct Classifier; // models.hpp

/// Images in raw pixel units: [N, H, W] with values in [0,255], plus one
/// class index per image.
struct LabeledImages {
    Tensor images; // [N, H, W]
    std::vector<int> labels;

    int64_t count() const { return images.rank() ? images.dim(0) : 0; }
    int64_t height() const { return images.dim(1); }
    int64_t width() const { return images.dim(2); }
    int64_t pixels() const { return images.dim(1) * images.dim(2); }

    /// Copy of image i as a [1, H, W] tensor.
    Tensor image(int64_t i) const;

    void validate() const;
};

/// Synthetic stand-in for byte-image datasets: per class, a sparse bright
/// mean pattern on a dark background plus isotropic Gaussian pixel noise,
/// clipped to [0,255] and rounded to whole pixel values. Deterministic per
/// seed. d must be a perfect square (images are sqrt(d) x sqrt(d)).
LabeledImages synth_blobs(int64_t n_per_class, int num_classes, int64_t d, uint64_t seed);

/// Deterministic shuffled split; `test_fraction` of the images go to the
/// second part.
std::pair<LabeledImages, LabeledImages> split(const LabeledImages& data,
                                              double test_fraction, uint64_t seed);

LabeledImages subset(const LabeledImages& data, const std::vector<int64_t>& indices);

/// n images that every listed model classifies correctly, sampled
/// deterministically per seed. Errors with the available count when fewer
/// than n qualify.
LabeledImages select_correct(const std::vector<const Classifier*>& models,
                             const LabeledImages& data, int64_t n, uint64_t seed);

/// Mean pixel value over the whole set (raw [0,255] units).
double mean_pixel(const LabeledImages& data);

// IDX file format (big-endian; magic 2051 for images, 2049 for labels).
// Paths ending in .gz, or files starting with the gzip magic, are inflated
// transparently on read.
LabeledImages load_idx(const std::string& images_path, const std::string& labels_path);
void save_idx(const LabeledImages& data, const std::string& images_path,
              const std::string& labels_path);

} // namespace advkit
