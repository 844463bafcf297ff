#include "animator/infer.hpp"

#include <algorithm>
#include <cmath>
#include <numbers>

#include "animator/error.hpp"
#include "animator/guidance_render.hpp"

namespace animator {

using nn::Mat;

SegmentPlan plan_segments(std::size_t track_len, std::size_t segment_length) {
    if (track_len == 0) throw ValidationError("cannot plan segments for an empty track");
    if (segment_length < 2) throw ValidationError("segment length must be at least 2");
    SegmentPlan plan;
    plan.segment_length = segment_length;
    for (std::size_t b = 0; b < track_len; b += segment_length) {
        plan.segments.push_back({b, std::min(track_len, b + segment_length), 0});
    }
    return plan;
}

void validate_sampler_config(const SamplerConfig& cfg) {
    if (cfg.n_steps == 0) throw ValidationError("sampler needs at least one step");
    if (!(cfg.weights.w_ref >= 0.0) || !(cfg.weights.w_motion >= 0.0)) {
        throw ValidationError("guidance weights must be non-negative");
    }
}

Tensor initial_noise(const Shape& latent_shape, std::uint64_t seed) {
    std::mt19937_64 rng(seed);
    std::normal_distribution<float> n(0.0f, 1.0f);
    Tensor x(latent_shape);
    for (auto& v : x.vec()) v = n(rng);
    return x;
}

LatentVideo sample_segment(const RowVelocityFn& v, const Shape& latent_shape, const std::optional<Tensor>& init_frame,
                           const SamplerConfig& cfg, std::size_t segment_index) {
    validate_sampler_config(cfg);
    const std::string where = "segment " + std::to_string(segment_index) + ": ";
    if (latent_shape.size() != 4) throw ShapeError(where + "latent shape must be t x h x w x c");
    const auto frame_rows = static_cast<Eigen::Index>(latent_shape[1] * latent_shape[2]);
    Mat init;
    if (init_frame) {
        const Shape want{latent_shape[1], latent_shape[2], latent_shape[3]};
        if (init_frame->shape() != want) {
            throw ShapeError(where + "initial latent frame " + shape_str(init_frame->shape()) + " does not match " +
                             shape_str(want));
        }
        init = tensor_rows(init_frame->reshaped({1, want[0], want[1], want[2]}));
    }
    auto clamp = [&](Mat& x) {
        if (init_frame) x.topRows(frame_rows) = init;
    };

    Mat x = tensor_rows(initial_noise(latent_shape, cfg.seed));
    clamp(x);
    const double dt = 1.0 / static_cast<double>(cfg.n_steps);
    for (std::size_t k = 0; k < cfg.n_steps; ++k) {
        Mat vel;
        try {
            vel = v(x, static_cast<double>(k) * dt);
        } catch (const ShapeError& e) {
            throw ShapeError(where + e.what());
        }
        if (vel.rows() != x.rows() || vel.cols() != x.cols()) throw ShapeError(where + "velocity field has the wrong shape");
        x += dt * vel;
        clamp(x);
    }
    return {rows_tensor(x, latent_shape)};
}

LatentVideo sample_segment(const DiT& model, const Conditioning& cond, const std::optional<Tensor>& init_frame,
                           const SamplerConfig& cfg, std::size_t segment_index) {
    const auto& mc = model.config();
    const auto codec = mc.codec();
    if (cond.pose.rank() != 4 || cond.pose.dim(0) == 0) {
        throw ShapeError("segment " + std::to_string(segment_index) + ": pose canvases must be T x H x W x 6");
    }
    const std::size_t t = codec.latent_frames(cond.pose.dim(0));
    const Shape shape{t, cond.pose.dim(1) / mc.f_s, cond.pose.dim(2) / mc.f_s, mc.latent_channels()};
    auto v = [&](const Mat& x, double s) {
        const LatentVideo xs{rows_tensor(x, shape)};
        return tensor_rows(cfg_velocity(model, xs, s, cond, cfg.weights).latent);
    };
    return sample_segment(RowVelocityFn(v), shape, init_frame, cfg, segment_index);
}

PoseTrack turnaround_track(const ReferenceImage& ref, const PoseTrack& like, std::size_t frames) {
    if (frames < 3) throw ValidationError("turnaround needs at least 3 frames");
    if (like.tree.size() != 17) throw ValidationError("turnaround track expects the standard 17-joint tree");
    const auto pelvis = like.tree.index_of("pelvis");
    MotionScript m;
    m.yaw_start = -std::numbers::pi / 2;
    m.yaw_end = std::numbers::pi / 2;
    PoseTrack t;
    t.tree = like.tree;
    t.camera = like.camera;
    t.fps = like.fps;
    for (std::size_t i = 0; i < frames; ++i) {
        PoseFrame f = pose_at(m, i, frames);
        const Vec3 shift = ref.pose.joints.positions.at(pelvis) - f.joints.positions.at(pelvis);
        for (auto& p : f.joints.positions) p += shift;
        f.head.center += shift;
        f.head.radius = ref.pose.head.radius;
        t.frames.push_back(std::move(f));
    }
    return t;
}

namespace {

struct RefTensors {
    Tensor latents;
    Tensor canvases;
};

std::uint64_t segment_seed(std::uint64_t seed, std::size_t k) {
    return seed ^ (0x9e3779b97f4a7c15ULL * static_cast<std::uint64_t>(k + 1));
}

RefTensors reference_tensors(const std::vector<ReferenceImage>& refs, const std::vector<bool>& crop, const PoseTrack& like,
                             const ModelConfig& mc) {
    if (refs.empty()) throw ValidationError("generation needs at least one reference image");
    std::vector<Tensor> lat, can;
    for (std::size_t r = 0; r < refs.size(); ++r) {
        const auto& ref = refs[r];
        if (ref.image.rank() != 3 || ref.image.dim(2) != 3) {
            throw ShapeError("reference image " + std::to_string(r) + " must be H x W x 3, got " + shape_str(ref.image.shape()));
        }
        PoseTrack one;
        one.tree = like.tree;
        one.camera = like.camera;
        one.frames = {ref.pose};
        Tensor img = ref.image;
        if (crop[r]) {
            auto c = half_body_crop(img, ref.pose, like.tree, like.camera);
            img = std::move(c.image);
            one.camera = c.camera;
        }
        const Tensor l = encode_image(img, mc.codec());
        lat.push_back(l.reshaped({1, l.dim(0), l.dim(1), l.dim(2)}));
        can.push_back(track_canvases(one, 0, 1, img.dim(1), img.dim(0)));
    }
    return {concat0(lat), concat0(can)};
}

struct Chain {
    PixelVideo video;
    std::vector<LatentVideo> segments;
};

Chain run_chain(const DiT& model, const RefTensors& refs, double head_radius, const PoseTrack& track,
                const std::optional<Tensor>& faces, const SegmentPlan& plan, const SamplerConfig& sampler,
                std::size_t width, std::size_t height) {
    const auto& mc = model.config();
    const auto codec = mc.codec();
    Chain out;
    std::vector<Tensor> frames;
    std::optional<Tensor> carry;
    for (std::size_t k = 0; k < plan.segments.size(); ++k) {
        const auto& seg = plan.segments[k];
        // later segments regenerate the previous last frame as their clamped first frame
        const std::size_t lead = k == 0 ? 0 : 1;
        const std::size_t first = seg.begin - lead;
        const std::size_t wanted = seg.end - first;
        const std::size_t padded = codec.pixel_frames(codec.latent_frames(wanted) + ((wanted - 1) % codec.temporal ? 1 : 0));

        PoseTrack part;
        part.tree = track.tree;
        part.camera = track.camera;
        part.fps = track.fps;
        for (std::size_t i = 0; i < padded; ++i) part.frames.push_back(track.frames[std::min(first + i, seg.end - 1)]);

        Conditioning cond;
        cond.pose = track_canvases(part, 0, padded, width, height, head_radius);
        cond.ref_latents = refs.latents;
        cond.ref_pose = refs.canvases;
        if (faces) {
            std::vector<Tensor> fc;
            for (std::size_t i = 0; i < padded; ++i) {
                const std::size_t f = std::min(first + i, seg.end - 1);
                fc.push_back(faces->slice0(f, f + 1));
            }
            cond.face_crops = concat0(fc);
        }
        SamplerConfig sc = sampler;
        sc.seed = segment_seed(sampler.seed, k);
        LatentVideo lat = sample_segment(model, cond, carry, sc, k);
        PixelVideo px = decode_video(lat, codec, track.fps);
        for (float& v : px.frames.vec()) v = std::clamp(v, 0.0f, 1.0f);
        for (std::size_t i = lead; i < wanted; ++i) frames.push_back(px.frames.slice0(i, i + 1));
        const std::size_t last = codec.latent_frames(wanted) - 1;
        if (codec.temporal == 1) {
            carry = lat.latent.slice0(last, last + 1).reshaped({lat.height(), lat.width(), lat.channels()});
        } else {
            carry = encode_image(px.frames.slice0(wanted - 1, wanted).reshaped({height, width, 3}), codec);
        }
        out.segments.push_back(std::move(lat));
    }
    out.video = {concat0(frames), track.fps};
    return out;
}

}  // namespace

GenerationResult generate_long_video(const DiT& model, const std::vector<ReferenceImage>& refs, const PoseTrack& track,
                                     const std::optional<Tensor>& face_crops, const GenerateOptions& opt) {
    validate_track(track);
    validate_sampler_config(opt.sampler);
    if (refs.empty()) throw ValidationError("generation needs at least one reference image");
    const std::size_t h = refs.front().image.dim(0), w = refs.front().image.dim(1);
    if (face_crops && face_crops->dim(0) != track.size()) {
        throw ShapeError("face crops cover " + std::to_string(face_crops->dim(0)) + " of " + std::to_string(track.size()) +
                         " frames");
    }
    const double radius = projected_head_radius(refs.front().pose.head, track.camera);

    GenerationResult res;
    res.plan = plan_segments(track.size(), opt.segment_length);
    std::vector<ReferenceImage> final_refs = refs;
    std::vector<bool> crop(refs.size(), false);

    if (opt.mode == RefMode::MultiPseudo) {
        const PoseTrack turn = turnaround_track(refs.front(), track, opt.turnaround_frames);
        const auto turn_plan = plan_segments(turn.size(), opt.segment_length);
        SamplerConfig sa = opt.sampler;
        sa.seed = segment_seed(opt.sampler.seed, 1000);
        const RefTensors single = reference_tensors({refs.front()}, {false}, track, model.config());
        Chain a = run_chain(model, single, radius, turn, std::nullopt, turn_plan, sa, w, h);

        std::vector<double> yaw;
        for (const auto& f : turn.frames) yaw.push_back(f.head.yaw);
        std::mt19937_64 rng(segment_seed(opt.sampler.seed, 2000));
        res.pseudo_refs = select_reference_frames(yaw, refs.front().full_body, rng);
        final_refs.clear();
        crop.clear();
        for (std::size_t r = 0; r < res.pseudo_refs.indices.size(); ++r) {
            const std::size_t i = res.pseudo_refs.indices[r];
            final_refs.push_back({a.video.frames.slice0(i, i + 1).reshaped({h, w, 3}), turn.frames[i], refs.front().full_body});
            crop.push_back(res.pseudo_refs.kinds[r] == RefKind::HalfBodyCrop);
        }
        res.turnaround = std::move(a.video);
    }

    const RefTensors rt = reference_tensors(final_refs, crop, track, model.config());
    res.reference_count = final_refs.size();
    Chain b = run_chain(model, rt, radius, track, face_crops, res.plan, opt.sampler, w, h);
    res.video = std::move(b.video);
    res.segments = std::move(b.segments);
    return res;
}

double psnr(const Tensor& a, const Tensor& b) {
    if (a.shape() != b.shape()) throw ShapeError("psnr: " + shape_str(a.shape()) + " vs " + shape_str(b.shape()));
    if (a.numel() == 0) throw ShapeError("psnr: empty input");
    double sq = 0.0;
    for (std::size_t i = 0; i < a.numel(); ++i) {
        const double d = static_cast<double>(a[i]) - static_cast<double>(b[i]);
        sq += d * d;
    }
    const double mse = sq / static_cast<double>(a.numel());
    if (mse == 0.0) return kPsnrCap;
    return std::min(kPsnrCap, 10.0 * std::log10(1.0 / mse));
}

double ssim(const Tensor& a, const Tensor& b) {
    if (a.shape() != b.shape() || a.rank() != 3) throw ShapeError("ssim needs two H x W x C images of equal shape");
    const std::size_t h = a.dim(0), w = a.dim(1), ch = a.dim(2);
    constexpr int r = 5;
    constexpr double sigma = 1.5, c1 = 0.01 * 0.01, c2 = 0.03 * 0.03;
    double g[2 * r + 1];
    double gs = 0.0;
    for (int i = -r; i <= r; ++i) gs += g[i + r] = std::exp(-(i * i) / (2 * sigma * sigma));
    for (double& v : g) v /= gs;

    double total = 0.0;
    std::size_t count = 0;
    for (std::size_t c = 0; c < ch; ++c) {
        auto at = [&](const Tensor& t, long y, long x) {
            y = std::clamp(y, 0L, static_cast<long>(h) - 1);
            x = std::clamp(x, 0L, static_cast<long>(w) - 1);
            return static_cast<double>(t[(static_cast<std::size_t>(y) * w + static_cast<std::size_t>(x)) * ch + c]);
        };
        for (std::size_t y = 0; y < h; ++y)
            for (std::size_t x = 0; x < w; ++x) {
                double ma = 0, mb = 0, saa = 0, sbb = 0, sab = 0;
                for (int dy = -r; dy <= r; ++dy)
                    for (int dx = -r; dx <= r; ++dx) {
                        const double k = g[dy + r] * g[dx + r];
                        const double va = at(a, long(y) + dy, long(x) + dx), vb = at(b, long(y) + dy, long(x) + dx);
                        ma += k * va;
                        mb += k * vb;
                        saa += k * va * va;
                        sbb += k * vb * vb;
                        sab += k * va * vb;
                    }
                const double va = saa - ma * ma, vb = sbb - mb * mb, cov = sab - ma * mb;
                total += ((2 * ma * mb + c1) * (2 * cov + c2)) / ((ma * ma + mb * mb + c1) * (va + vb + c2));
                ++count;
            }
    }
    return total / static_cast<double>(count);
}

namespace {

Tensor frame_of(const PixelVideo& v, std::size_t i) {
    return v.frames.slice0(i, i + 1).reshaped({v.height(), v.width(), 3});
}

double mean_consecutive_ssim(const PixelVideo& v) {
    if (v.num_frames() < 2) return 1.0;
    double s = 0.0;
    for (std::size_t i = 1; i < v.num_frames(); ++i) s += ssim(frame_of(v, i - 1), frame_of(v, i));
    return s / static_cast<double>(v.num_frames() - 1);
}

}  // namespace

VideoMetrics evaluate(const PixelVideo& generated, const PixelVideo& truth) {
    if (generated.frames.shape() != truth.frames.shape()) {
        throw ShapeError("evaluate: generated " + shape_str(generated.frames.shape()) + " vs truth " +
                         shape_str(truth.frames.shape()));
    }
    VideoMetrics m;
    m.psnr = psnr(generated.frames, truth.frames);
    double s = 0.0;
    for (std::size_t i = 0; i < truth.num_frames(); ++i) s += ssim(frame_of(generated, i), frame_of(truth, i));
    m.ssim = s / static_cast<double>(truth.num_frames());
    m.temporal = mean_consecutive_ssim(generated) - mean_consecutive_ssim(truth);
    return m;
}

double masked_mse(const PixelVideo& a, const PixelVideo& b, const Tensor& mask) {
    if (a.frames.shape() != b.frames.shape()) throw ShapeError("masked_mse: videos differ in shape");
    if (mask.shape() != Shape{a.num_frames(), a.height(), a.width()}) throw ShapeError("masked_mse: mask must be T x H x W");
    double sq = 0.0, n = 0.0;
    for (std::size_t p = 0; p < mask.numel(); ++p) {
        if (mask[p] == 0.0f) continue;
        for (std::size_t k = 0; k < 3; ++k) {
            const double d = static_cast<double>(a.frames[p * 3 + k]) - static_cast<double>(b.frames[p * 3 + k]);
            sq += d * d;
        }
        n += 3.0;
    }
    if (n == 0.0) throw ValidationError("masked_mse: mask selects no pixels");
    return sq / n;
}

}  // namespace animator
