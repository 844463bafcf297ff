#include "animator/guidance_render.hpp"

#include <algorithm>
#include <cmath>
#include <exception>
#include <numbers>
#include <numeric>
#include <atomic>
#include <thread>

#include "animator/error.hpp"

namespace animator {

namespace {

Rgb hsv_to_rgb(double h, double s, double v) {
    const double c = v * s;
    const double hp = std::fmod(h * 6.0, 6.0);
    const double x = c * (1.0 - std::fabs(std::fmod(hp, 2.0) - 1.0));
    Rgb rgb{};
    switch (static_cast<int>(hp)) {
        case 0: rgb = {c, x, 0}; break;
        case 1: rgb = {x, c, 0}; break;
        case 2: rgb = {0, c, x}; break;
        case 3: rgb = {0, x, c}; break;
        case 4: rgb = {x, 0, c}; break;
        default: rgb = {c, 0, x}; break;
    }
    const double m = v - c;
    for (auto& ch : rgb) ch += m;
    return rgb;
}

double segment_distance(double px, double py, const Vec2& a, const Vec2& b) {
    const double dx = b.x() - a.x(), dy = b.y() - a.y();
    const double len2 = dx * dx + dy * dy;
    double t = len2 > 0.0 ? ((px - a.x()) * dx + (py - a.y()) * dy) / len2 : 0.0;
    t = std::clamp(t, 0.0, 1.0);
    const double qx = a.x() + t * dx - px, qy = a.y() + t * dy - py;
    return std::sqrt(qx * qx + qy * qy);
}

// Two sub-pixel samples on the pixel diagonal.
constexpr double kSampleOffsets[2] = {-0.25, 0.25};

void draw_line(Tensor& img, const Vec2& a, const Vec2& b, double width, const Rgb& color) {
    const auto H = static_cast<long>(img.dim(0)), W = static_cast<long>(img.dim(1));
    const double r = width / 2.0;
    const long x0 = std::max(0L, static_cast<long>(std::floor(std::min(a.x(), b.x()) - r - 1)));
    const long x1 = std::min(W - 1, static_cast<long>(std::ceil(std::max(a.x(), b.x()) + r + 1)));
    const long y0 = std::max(0L, static_cast<long>(std::floor(std::min(a.y(), b.y()) - r - 1)));
    const long y1 = std::min(H - 1, static_cast<long>(std::ceil(std::max(a.y(), b.y()) + r + 1)));
    for (long y = y0; y <= y1; ++y) {
        for (long x = x0; x <= x1; ++x) {
            int inside = 0;
            for (double o : kSampleOffsets) {
                if (segment_distance(static_cast<double>(x) + o, static_cast<double>(y) + o, a, b) <= r) ++inside;
            }
            if (inside == 0) continue;
            const double cov = inside / 2.0;
            float* px = &img[(static_cast<std::size_t>(y) * img.dim(1) + static_cast<std::size_t>(x)) * 3];
            for (int c = 0; c < 3; ++c) px[c] = static_cast<float>(cov * color[c] + (1.0 - cov) * px[c]);
        }
    }
}

}  // namespace

std::vector<Rgb> RasterSpec::default_palette(std::size_t bones) {
    std::vector<Rgb> out;
    for (std::size_t i = 0; i < bones; ++i) out.push_back(hsv_to_rgb(static_cast<double>(i) / static_cast<double>(bones), 1.0, 1.0));
    return out;
}

RasterSpec RasterSpec::with_default_palette(std::size_t width, std::size_t height, double line_width, std::size_t bones) {
    return RasterSpec{width, height, line_width, default_palette(bones)};
}

void validate_raster_spec(const RasterSpec& spec, std::size_t bones) {
    if (spec.width == 0 || spec.height == 0) throw ValidationError("raster size must be positive");
    if (!(spec.line_width >= 1.0)) throw ValidationError("line width must be >= 1");
    if (spec.palette.size() < bones) throw ValidationError("palette must cover every bone");
    for (std::size_t i = 0; i < bones; ++i) {
        for (double c : spec.palette[i]) {
            if (!(c >= 0.0 && c <= 1.0)) throw ValidationError("palette colours must lie in [0,1]");
        }
        for (std::size_t k = i + 1; k < bones; ++k) {
            if (spec.palette[i] == spec.palette[k]) throw ValidationError("palette colours must be distinct");
        }
    }
}

GuidanceCanvas GuidanceCanvas::from_parts(Tensor skeleton, Tensor sphere) {
    if (skeleton.shape() != sphere.shape() || skeleton.rank() != 3 || skeleton.dim(2) != 3) {
        throw ShapeError("skeleton and sphere maps must both be H x W x 3");
    }
    const std::size_t H = skeleton.dim(0), W = skeleton.dim(1);
    Tensor combined({H, W, 6});
    for (std::size_t p = 0; p < H * W; ++p) {
        for (std::size_t c = 0; c < 3; ++c) {
            combined[p * 6 + c] = skeleton[p * 3 + c];
            combined[p * 6 + 3 + c] = sphere[p * 3 + c];
        }
    }
    return {std::move(skeleton), std::move(sphere), std::move(combined)};
}

Tensor rasterize_skeleton(const JointSet& j, const KinematicTree& tree, const Camera& cam, const RasterSpec& spec) {
    validate_raster_spec(spec, tree.bones().size());
    validate_joint_set(j, tree);
    std::vector<Vec2> px(tree.size());
    std::vector<double> depth(tree.size());
    for (std::size_t i = 0; i < tree.size(); ++i) {
        depth[i] = cam.to_camera(j.positions[i]).z();
        try {
            px[i] = project_point(j.positions[i], cam);
        } catch (const ProjectionError& e) {
            throw ProjectionError("joint '" + tree.joints()[i] + "': " + e.what());
        }
    }

    const auto& bones = tree.bones();
    std::vector<std::size_t> order(bones.size());
    std::iota(order.begin(), order.end(), 0);
    auto mean_depth = [&](std::size_t b) { return 0.5 * (depth[bones[b].parent] + depth[bones[b].child]); };
    // Far to near so nearer bones overwrite.
    std::stable_sort(order.begin(), order.end(), [&](std::size_t a, std::size_t b) { return mean_depth(a) > mean_depth(b); });

    Tensor img({spec.height, spec.width, 3});
    for (std::size_t b : order) draw_line(img, px[bones[b].parent], px[bones[b].child], spec.line_width, spec.palette[b]);
    return img;
}

Rgb orientation_color(double yaw, double pitch, double roll) {
    const double two_pi = 2.0 * std::numbers::pi;
    return {(yaw + std::numbers::pi) / two_pi, (pitch + std::numbers::pi) / two_pi, (roll + std::numbers::pi) / two_pi};
}

Tensor render_head_sphere(const HeadPose& h, const Camera& cam, double ref_radius_px, const RasterSpec& spec) {
    if (!(ref_radius_px > 0.0)) throw ValidationError("reference head radius must be > 0");
    if (spec.width == 0 || spec.height == 0) throw ValidationError("raster size must be positive");
    validate_head_pose(h);
    const Vec2 c = project_point(h.center, cam);
    const Rgb color = orientation_color(h);
    Tensor img({spec.height, spec.width, 3});
    const double r2 = ref_radius_px * ref_radius_px;
    const long H = static_cast<long>(spec.height), W = static_cast<long>(spec.width);
    const long x0 = std::max(0L, static_cast<long>(std::floor(c.x() - ref_radius_px)));
    const long x1 = std::min(W - 1, static_cast<long>(std::ceil(c.x() + ref_radius_px)));
    const long y0 = std::max(0L, static_cast<long>(std::floor(c.y() - ref_radius_px)));
    const long y1 = std::min(H - 1, static_cast<long>(std::ceil(c.y() + ref_radius_px)));
    for (long y = y0; y <= y1; ++y) {
        for (long x = x0; x <= x1; ++x) {
            const double dx = static_cast<double>(x) - c.x(), dy = static_cast<double>(y) - c.y();
            if (dx * dx + dy * dy > r2) continue;
            float* px = &img[(static_cast<std::size_t>(y) * spec.width + static_cast<std::size_t>(x)) * 3];
            for (int k = 0; k < 3; ++k) px[k] = static_cast<float>(color[k]);
        }
    }
    return img;
}

double projected_head_radius(const HeadPose& h, const Camera& cam) {
    const Vec3 pc = cam.to_camera(h.center);
    if (!(pc.z() > 0.0)) throw ProjectionError("head centre has non-positive depth");
    return cam.focal * h.radius / pc.z();
}

namespace {
std::atomic<std::size_t> canvas_workers{0};
}

void set_canvas_workers(std::size_t n) { canvas_workers = n; }

std::vector<GuidanceCanvas> build_canvas(const PoseTrack& track, double ref_head_radius_px, const RasterSpec& spec) {
    validate_track(track);
    const std::size_t n = track.frames.size();
    std::vector<GuidanceCanvas> out(n);
    std::vector<std::exception_ptr> errors(n);

    auto render = [&](std::size_t f) {
        try {
            const auto& fr = track.frames[f];
            out[f] = GuidanceCanvas::from_parts(rasterize_skeleton(fr.joints, track.tree, track.camera, spec),
                                                render_head_sphere(fr.head, track.camera, ref_head_radius_px, spec));
        } catch (...) {
            errors[f] = std::current_exception();
        }
    };

    const std::size_t limit = canvas_workers.load();
    const std::size_t workers = std::clamp<std::size_t>(limit ? limit : std::thread::hardware_concurrency(), 1, n);
    if (workers <= 1) {
        for (std::size_t f = 0; f < n; ++f) render(f);
    } else {
        std::vector<std::jthread> pool;
        for (std::size_t w = 0; w < workers; ++w) {
            pool.emplace_back([&, w] {
                for (std::size_t f = w; f < n; f += workers) render(f);
            });
        }
    }

    for (std::size_t f = 0; f < n; ++f) {
        if (!errors[f]) continue;
        try {
            std::rethrow_exception(errors[f]);
        } catch (const ProjectionError& e) {
            throw ProjectionError("frame " + std::to_string(f) + ": " + e.what());
        } catch (const Error& e) {
            throw Error("frame " + std::to_string(f) + ": " + e.what());
        }
    }
    return out;
}

Tensor stack_canvases(const std::vector<GuidanceCanvas>& canvases) {
    if (canvases.empty()) throw ShapeError("no canvases to stack");
    const auto& s = canvases.front().combined.shape();
    std::vector<Tensor> parts;
    parts.reserve(canvases.size());
    for (const auto& c : canvases) {
        if (c.combined.shape() != s) throw ShapeError("canvas sizes differ");
        parts.push_back(c.combined.reshaped({1, s[0], s[1], s[2]}));
    }
    return concat0(parts);
}

}  // namespace animator
