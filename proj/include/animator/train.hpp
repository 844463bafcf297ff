#pragma once

#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <functional>
#include <optional>
#include <random>
#include <string>
#include <vector>

#include <json.hpp>

#include "animator/dit.hpp"
#include "animator/synthetic_world.hpp"

namespace animator {

enum class RefKind { MinYaw, MaxYaw, MedianYaw, HalfBodyCrop };
const char* ref_kind_name(RefKind k);

struct RefSelection {
    std::vector<std::size_t> indices;
    std::vector<RefKind> kinds;
};

// Order is min, max, median, then the half-body crop frame when full_body.
// Equal yaws rank by frame index; max and median skip frames already taken.
RefSelection select_reference_frames(const std::vector<double>& yaw, bool full_body, std::mt19937_64& rng);

struct StageSpec {
    int stage = 1;
    std::size_t steps = 0;
    double lr = 5e-6;
    bool uses_face = false;
};

bool stage_trains_group(int stage, const std::string& group);
std::vector<StageSpec> default_schedule(bool paper_scale = false);

struct TrainOptions {
    std::optional<double> lr;  // overrides StageSpec::lr
    double beta1 = 0.9;
    double beta2 = 0.999;
    double weight_decay = 0.01;
    double p_drop_ref = 0.1;
    double p_drop_motion = 0.1;
    double p_single_ref = 0.25;  // train some steps with one reference frame only
    std::size_t clip_frames = 9;  // pixel frames per training window
    std::size_t warmup = 50;
    std::size_t batch = 1;        // examples per optimiser step
    double final_lr_scale = 1.0;  // cosine decay after warmup down to lr * final_lr_scale
    std::uint64_t seed = 0;
};

Drop draw_drop(double p_ref, double p_motion, std::mt19937_64& rng);

// Upper-body crop of a frame, upscaled 2x, and the camera that sees it.
struct HalfBodyCrop {
    Tensor image;  // H x W x 3
    Camera camera;
};
HalfBodyCrop half_body_crop(const Tensor& image, const PoseFrame& frame, const KinematicTree& tree, const Camera& cam);

// Latents and guidance canvases for a set of reference frames of one sample.
struct ReferenceSet {
    Tensor latents;  // t_R x h x w x c_lat
    Tensor canvases;  // t_R x H x W x 6
};
ReferenceSet build_references(const Sample& s, const RefSelection& sel, const ModelConfig& cfg);

// Guidance canvases for frames [begin, end) of a track. A non-positive
// head_radius uses the projected head radius of the track's first frame.
Tensor track_canvases(const PoseTrack& track, std::size_t begin, std::size_t end, std::size_t width, std::size_t height,
                      double head_radius = 0.0);

struct TrainExample {
    LatentVideo x1;
    Conditioning cond;
    RefSelection refs;
    std::size_t begin = 0;
};

TrainExample make_example(const Sample& s, const ModelConfig& cfg, const TrainOptions& opt, bool with_face,
                          std::mt19937_64& rng);

struct StageReport {
    int stage = 0;
    std::vector<double> losses;
    std::size_t face_branch_calls = 0;
};

// Runs one stage in place on `model`; metrics go to `metrics_log` as JSON lines.
StageReport run_stage(DiT& model, const StageSpec& spec, const std::vector<Sample>& data, const TrainOptions& opt,
                      const std::filesystem::path& metrics_log = {});

// Checkpoint-to-checkpoint form with stage ordering and a lock on ckpt_out.
StageReport run_stage(const StageSpec& spec, const std::vector<Sample>& data, const TrainOptions& opt,
                      const std::optional<std::filesystem::path>& ckpt_in, const std::filesystem::path& ckpt_out,
                      const ModelConfig& init_cfg = {}, const std::function<void(DiT&)>& prepare = {});

// Stage recorded in a checkpoint manifest (0 for a fresh initialisation).
int checkpoint_stage(const std::filesystem::path& dir);

// Exclusive lock file; throws if another run holds it.
class DirectoryLock {
public:
    explicit DirectoryLock(const std::filesystem::path& dir);
    ~DirectoryLock();
    DirectoryLock(const DirectoryLock&) = delete;
    DirectoryLock& operator=(const DirectoryLock&) = delete;

private:
    std::filesystem::path path_;
};

}  // namespace animator
