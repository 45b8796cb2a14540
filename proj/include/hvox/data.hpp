#pragma once

#include <string>
#include <utility>

#include "hvox/tensor.hpp"

namespace hvox {

// Images are float tensors [H,W,3] in [-1,1] (rows top to bottom); batches
// stack to [N,H,W,3].

/// Decodes an 8-bit PNG (any color type) to RGB in [-1,1].
Tensor<float> decode_png(const std::string& path);

/// Writes an 8-bit RGB PNG. value -1 -> pixel 0, value 1 -> pixel 255.
/// Atomic: temp file + rename.
void write_png(const Tensor<float>& image, const std::string& path);

/// Tiles images row-major with 2-pixel white separators.
void write_grid(const std::vector<Tensor<float>>& images, int cols, const std::string& path);

/// Center crop to square, then bilinear resize.
Tensor<float> center_crop_resize(const Tensor<float>& image, int resolution);

// ---------------------------------------------------------------------------
// Procedural dataset: flat-shaded orthographic boxes on a plain background.
// The pose factor is known by construction, which is what the verification
// suite needs; the true azimuth never reaches the training interface.

struct SyntheticSpec {
    enum class Primitive { kCube, kChair };

    Primitive primitive = Primitive::kChair;
    int palette = 6;
    double bg_min = -0.85, bg_max = 0.6;  // background shade, value units
    double azimuth_min = -180, azimuth_max = 180;
    int size = 32;
    uint64_t seed = 1;

    void validate() const;
};

/// Deterministic per (spec, index). Returns the image and the azimuth it was
/// rendered at (evaluation only).
std::pair<Tensor<float>, double> synthesize_item(const SyntheticSpec& spec, int64_t index);

// ---------------------------------------------------------------------------

class Dataset {
public:
    Dataset() = default;

    /// Loads every decodable PNG under path (sorted by filename); undecodable
    /// files are skipped with a warning, zero usable files is an error.
    static Dataset folder(const std::string& path, int resolution);
    static Dataset synthetic(const SyntheticSpec& spec, int64_t count);

    int64_t size() const { return count_; }
    int resolution() const { return resolution_; }
    Tensor<float> item(int64_t i) const;

    /// [n,H,W,3]. Reshuffles once per epoch with the supplied rng; if n
    /// exceeds the dataset size, samples with replacement (warns once).
    Tensor<float> next_batch(Rng& rng, int64_t n);

    // Shuffle state, persisted in checkpoints so resume is bit-exact.
    const std::vector<int64_t>& permutation() const { return perm_; }
    int64_t cursor() const { return cursor_; }
    void set_shuffle_state(std::vector<int64_t> perm, int64_t cursor);

    bool is_synthetic() const { return synthetic_; }

private:
    bool synthetic_ = false;
    SyntheticSpec spec_;
    std::vector<Tensor<float>> items_;  // folder mode
    int64_t count_ = 0;
    int resolution_ = 0;
    std::vector<int64_t> perm_;
    int64_t cursor_ = 0;
    bool warned_replacement_ = false;
};

}  // namespace hvox
