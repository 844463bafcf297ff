#pragma once

#include <array>
#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <random>
#include <string>
#include <vector>

#include <json.hpp>

#include "animator/face_renderer.hpp"
#include "animator/latent_codec.hpp"
#include "animator/pose_model.hpp"

namespace animator {

using Color8 = std::array<std::uint8_t, 3>;

// Seed-derived look of one subject. The back texture is a fixed function of
// the front one (inverted colours, horizontal stripes instead of the front
// pattern). Colours are 8-bit so rendered frames survive PNG storage exactly.
struct Appearance {
    std::uint64_t seed = 0;
    Color8 arm{};
    Color8 leg{};
    Color8 skin{};
    Color8 hair{};
    Color8 front_a{};
    Color8 front_b{};
    int front_pattern = 0;  // 0 vertical stripes, 1 checker, 2 diagonal bands
    int stripes = 3;
};

Appearance make_appearance(std::uint64_t seed);

struct MotionScript {
    double yaw_start = 0.0;
    double yaw_end = 0.0;
    double walk_amplitude = 0.0;  // hip swing in radians
    double walk_period = 12.0;    // frames per stride
    double wave_amplitude = 0.0;  // elbow swing of the raised right arm, radians (0 = arm down)
    double drift = 0.0;           // sideways travel over the clip in metres
};

struct WorldConfig {
    std::size_t width = 64;
    std::size_t height = 64;
    std::uint64_t appearance_seed = 1;
    MotionScript motion;
    std::size_t frames = 17;
    bool full_body = true;
    double fps = 24.0;
};

void validate_world_config(const WorldConfig& cfg, const CodecConfig& codec = {}, std::size_t patch = 1);

struct Sample {
    PoseTrack track;
    PixelVideo video;
    std::vector<ExpressionFactors> face_factors;  // per frame; identity is constant
    std::vector<double> yaw_per_frame;
    bool full_body = true;
    Appearance appearance;
};

// Per-pixel provenance of one rendered frame.
enum class PixelLabel : std::uint8_t { Background, Limb, TorsoFront, TorsoBack, Head };

struct RenderedFrame {
    Tensor image;                    // H x W x 3
    std::vector<PixelLabel> labels;  // H * W
};

// Body yaw recovered from the shoulder line; 0 faces the camera.
double body_yaw(const JointSet& j, const KinematicTree& tree);

RenderedFrame render_frame(const PoseFrame& frame, const KinematicTree& tree, const Camera& cam, const Appearance& app,
                           const std::vector<double>& expression, std::size_t width, std::size_t height);

// Deterministic function of (track, appearance, expressions).
PixelVideo render_track(const PoseTrack& track, const Appearance& app, const std::vector<ExpressionFactors>& faces,
                        std::size_t width, std::size_t height);

// T x H x W mask (1 where the torso shows its back texture).
Tensor back_texture_mask(const PoseTrack& track, const Appearance& app, const std::vector<ExpressionFactors>& faces,
                         std::size_t width, std::size_t height);

// Posed joints for the script at frame i (world units, y up, camera on -z).
PoseFrame pose_at(const MotionScript& m, std::size_t frame, std::size_t frames);
Camera world_camera(bool full_body, std::size_t width, std::size_t height);

// Neutral standing pose used for calibration.
JointSet world_apose();

Sample generate_sample(const WorldConfig& cfg, std::uint64_t seed);

// Face crops (t x 3 x 224 x 224) for the per-frame factors.
Tensor face_crops(const std::vector<ExpressionFactors>& faces);

struct DatasetConfig {
    std::size_t min_frames = 9;
    std::size_t max_frames = 33;
    WorldConfig world;  // template; per-sample fields are drawn from the seed
};

// Paper-scale clip lengths, used to record the desk scaling factor.
inline constexpr std::size_t kPaperMinFrames = 25;
inline constexpr std::size_t kPaperMaxFrames = 121;

// Writes <root>/sample_%04d/{poses.json, frames/%05d.png, factors.json} and
// <root>/manifest.json; returns the manifest.
nlohmann::json make_dataset(const std::filesystem::path& root, std::size_t n, const DatasetConfig& cfg,
                            std::uint64_t seed);

// Reads one sample directory back (video from PNG, track, factors).
Sample load_sample(const std::filesystem::path& dir);
std::vector<Sample> load_dataset(const std::filesystem::path& manifest_path);

// Random per-sample world description drawn exactly as make_dataset does.
WorldConfig draw_world(const DatasetConfig& cfg, std::mt19937_64& rng);

}  // namespace animator
