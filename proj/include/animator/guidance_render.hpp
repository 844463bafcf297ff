#pragma once

#include <array>
#include <cstddef>
#include <vector>

#include "animator/pose_model.hpp"
#include "animator/tensor.hpp"

namespace animator {

using Rgb = std::array<double, 3>;

struct RasterSpec {
    std::size_t width = 64;
    std::size_t height = 64;
    double line_width = 1.0;
    std::vector<Rgb> palette;  // one colour per bone, in tree.bones() order

    // Evenly spaced fully saturated hues, one per bone.
    static std::vector<Rgb> default_palette(std::size_t bones);
    static RasterSpec with_default_palette(std::size_t width, std::size_t height, double line_width = 1.0,
                                           std::size_t bones = 16);
};

void validate_raster_spec(const RasterSpec& spec, std::size_t bones);

// Skeleton map (channels 0-2) and head-sphere map (channels 3-5) for one frame.
struct GuidanceCanvas {
    Tensor skeleton;  // H x W x 3
    Tensor sphere;    // H x W x 3
    Tensor combined;  // H x W x 6

    static GuidanceCanvas from_parts(Tensor skeleton, Tensor sphere);
};

// Pixel (x, y) has its centre at integer coordinates (x, y).
Tensor rasterize_skeleton(const JointSet& j, const KinematicTree& tree, const Camera& cam, const RasterSpec& spec);

// Per-axis linear map of (yaw, pitch, roll) in [-pi, pi] onto RGB in [0, 1].
Rgb orientation_color(double yaw, double pitch, double roll);
inline Rgb orientation_color(const HeadPose& h) { return orientation_color(h.yaw, h.pitch, h.roll); }

// Flat disc at the projected head centre. The radius is the reference head's
// pixel radius, not the driving head's projected size.
Tensor render_head_sphere(const HeadPose& h, const Camera& cam, double ref_radius_px, const RasterSpec& spec);

// Worker threads used by build_canvas (0 = hardware concurrency).
void set_canvas_workers(std::size_t n);

// One canvas per frame; frames are rendered concurrently.
std::vector<GuidanceCanvas> build_canvas(const PoseTrack& track, double ref_head_radius_px, const RasterSpec& spec);

// Stack of combined canvases as T x H x W x 6.
Tensor stack_canvases(const std::vector<GuidanceCanvas>& canvases);

// Projected head radius in pixels for a given frame (used to pick the reference scale).
double projected_head_radius(const HeadPose& h, const Camera& cam);

}  // namespace animator
