#pragma once

#include <cstddef>
#include <cstdint>
#include <functional>
#include <optional>
#include <vector>

#include "animator/dit.hpp"
#include "animator/train.hpp"

namespace animator {

inline constexpr std::size_t kDeskSegmentLength = 17;
inline constexpr std::size_t kPaperSegmentLength = 73;

struct Segment {
    std::size_t begin = 0;
    std::size_t end = 0;
    int reference_set = 0;

    std::size_t size() const { return end - begin; }
};

// Segment k + 1 starts from the last latent frame of segment k.
struct SegmentPlan {
    std::vector<Segment> segments;
    std::size_t segment_length = kDeskSegmentLength;
};

SegmentPlan plan_segments(std::size_t track_len, std::size_t segment_length = kDeskSegmentLength);

struct SamplerConfig {
    std::size_t n_steps = 16;
    CfgWeights weights;
    std::uint64_t seed = 0;
};

void validate_sampler_config(const SamplerConfig& cfg);

// Velocity over latent rows (t*h*w) x c in double precision.
using RowVelocityFn = std::function<nn::Mat(const nn::Mat& x_rows, double s)>;

// Starting noise of a segment (float draws, so reruns are bit-identical).
Tensor initial_noise(const Shape& latent_shape, std::uint64_t seed);

// Euler integration from s = 0 to 1 in n_steps uniform steps. When
// init_frame (h x w x c) is given it overwrites latent frame 0 before and
// after every step.
LatentVideo sample_segment(const RowVelocityFn& v, const Shape& latent_shape, const std::optional<Tensor>& init_frame,
                           const SamplerConfig& cfg, std::size_t segment_index = 0);
LatentVideo sample_segment(const DiT& model, const Conditioning& cond, const std::optional<Tensor>& init_frame,
                           const SamplerConfig& cfg, std::size_t segment_index = 0);

enum class RefMode { Single, MultiPseudo };

struct ReferenceImage {
    Tensor image;    // H x W x 3
    PoseFrame pose;  // pose of the subject in the image (same tree and camera as the track)
    bool full_body = true;
};

struct GenerateOptions {
    RefMode mode = RefMode::Single;
    std::size_t segment_length = kDeskSegmentLength;
    std::size_t turnaround_frames = 33;
    SamplerConfig sampler;
};

struct GenerationResult {
    PixelVideo video;
    SegmentPlan plan;
    std::vector<LatentVideo> segments;  // raw latents per segment, clamped frame included for k > 0
    RefSelection pseudo_refs;           // multi-pseudo only
    std::optional<PixelVideo> turnaround;
    std::size_t reference_count = 0;
};

// Neutral A-pose turning from yaw -pi/2 to pi/2, placed at the reference's pelvis.
PoseTrack turnaround_track(const ReferenceImage& ref, const PoseTrack& like, std::size_t frames);

// face_crops, when given, cover every frame of the track (T x 3 x 224 x 224).
GenerationResult generate_long_video(const DiT& model, const std::vector<ReferenceImage>& refs, const PoseTrack& track,
                                     const std::optional<Tensor>& face_crops, const GenerateOptions& opt);

struct VideoMetrics {
    double psnr = 0.0;
    double ssim = 0.0;
    double temporal = 0.0;
};

inline constexpr double kPsnrCap = 99.0;

double psnr(const Tensor& a, const Tensor& b);
// Mean SSIM over channels for two H x W x 3 images (11x11 Gaussian window, sigma 1.5).
double ssim(const Tensor& a, const Tensor& b);
VideoMetrics evaluate(const PixelVideo& generated, const PixelVideo& truth);

// Mean squared error over pixels where mask (T x H x W) is set.
double masked_mse(const PixelVideo& a, const PixelVideo& b, const Tensor& mask);

}  // namespace animator
