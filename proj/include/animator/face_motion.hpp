#pragma once

#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <string>
#include <vector>

#include "animator/face_renderer.hpp"
#include "animator/layers.hpp"
#include "animator/tensor.hpp"

namespace animator {

// t x 3 x 224 x 224 face crops in [0, 1].
struct FaceCrop {
    Tensor pixels;
};

// t x c tokens in [-1, 1].
struct FaceMotionTokens {
    Tensor tokens;
};

struct FaceEncoderConfig {
    std::size_t c = 64;
    std::size_t width = 16;  // channels of the first conv; later layers use 2x
    std::size_t crop = 224;
};

void validate_face_crop(const FaceCrop& crop, std::size_t size = 224);

// conv4x4/4 -> 3 x conv3x3/2 -> global mean pool -> linear -> tanh.
class FaceEncoder {
public:
    static constexpr const char* kGroup = "face_encoder";

    FaceEncoder() = default;
    FaceEncoder(nn::ParamStore& store, const FaceEncoderConfig& cfg);

    const FaceEncoderConfig& config() const { return cfg_; }

    // pixels: t x 3 x S x S. Returns t x c.
    nn::Var forward(const Tensor& pixels) const;
    // Head output before the tanh bound.
    nn::Var pre_activation(const Tensor& pixels) const;
    const nn::Linear& head() const { return head_; }
    FaceMotionTokens encode(const FaceCrop& crop) const;

private:
    FaceEncoderConfig cfg_;
    std::vector<nn::Conv2d> convs_;
    nn::Linear head_;
};

FaceMotionTokens encode_face(const FaceEncoder& enc, const FaceCrop& crop);

struct FaceTrainConfig {
    std::size_t steps = 400;
    std::size_t batch = 16;
    double lr = 3e-3;
    double identity_weight = 0.3;  // on the identity-swapped token gap relative to the batch spread
    double identity_delay = 0.5;   // fraction of steps before the gap penalty starts ramping in
    std::size_t erase_samples = 1024;  // faces used to fit the identity eraser (0 disables it)
    std::size_t probe_train = 256;
    std::size_t probe_test = 256;
    std::uint64_t seed = 7;
};

struct ProbeScores {
    double expression_r2 = 0.0;
    double identity_r2 = 0.0;
};

struct FaceTrainReport {
    std::vector<double> losses;
    ProbeScores before;
    ProbeScores trained;  // after gradient training, before erasure
    ProbeScores after;
};

// Least-squares linear probe (with bias) fitted on one set and scored on
// another; returns the mean R^2 over target columns.
double linear_probe_r2(const nn::Mat& x_fit, const nn::Mat& y_fit, const nn::Mat& x_eval, const nn::Mat& y_eval);

// Held-out probe protocol: fresh faces from `seed`, probe fitted on the first
// half, scored on the second.
ProbeScores probe_face_encoder(const FaceEncoder& enc, std::size_t n_fit, std::size_t n_eval, std::uint64_t seed,
                               const FaceGenConfig& gen = {});

// Expression regression through a linear head plus a penalty on the token gap
// between faces that share expression but not identity, followed by identity
// erasure on the head. Mutates the encoder's parameters in `store`.
FaceTrainReport train_face_encoder(nn::ParamStore& store, const FaceEncoder& enc, const FaceTrainConfig& cfg,
                                   const FaceGenConfig& gen = {});

// Closed-form least-squares concept erasure folded into the head: removes the
// directions of the pre-tanh output that linearly predict identity on n fresh faces.
void erase_identity(const FaceEncoder& enc, std::size_t n, std::uint64_t seed, const FaceGenConfig& gen = {});

// Checkpoint: one container for the encoder group plus a sidecar
// {"c", "arch": "conv4", "version": 1}.
void save_face_encoder(const std::filesystem::path& dir, const nn::ParamStore& store, const FaceEncoderConfig& cfg);
FaceEncoderConfig read_face_encoder_config(const std::filesystem::path& dir);

}  // namespace animator
