#include "animator/train.hpp"

#include <algorithm>
#include <cmath>
#include <fcntl.h>
#include <fstream>
#include <numeric>
#include <unistd.h>

#include "animator/error.hpp"
#include "animator/guidance_render.hpp"

namespace animator {

using json = nlohmann::json;

const char* ref_kind_name(RefKind k) {
    switch (k) {
        case RefKind::MinYaw: return "min_yaw";
        case RefKind::MaxYaw: return "max_yaw";
        case RefKind::MedianYaw: return "median_yaw";
        case RefKind::HalfBodyCrop: return "half_body_crop";
    }
    return "?";
}

RefSelection select_reference_frames(const std::vector<double>& yaw, bool full_body, std::mt19937_64& rng) {
    if (yaw.empty()) throw ValidationError("reference selection needs at least one frame");
    const std::size_t n = yaw.size();
    std::vector<std::size_t> order(n);
    std::iota(order.begin(), order.end(), 0);
    std::stable_sort(order.begin(), order.end(), [&](std::size_t a, std::size_t b) { return yaw[a] < yaw[b]; });

    RefSelection sel;
    std::vector<bool> taken(n, false);
    auto pick = [&](std::size_t i, RefKind k) {
        sel.indices.push_back(i);
        sel.kinds.push_back(k);
        taken[i] = true;
    };
    pick(order.front(), RefKind::MinYaw);

    // lowest index among the maximal yaws that is still free
    const double top = yaw[order.back()];
    std::size_t max_i = order.back();
    for (std::size_t i = 0; i < n; ++i) {
        if (yaw[i] == top && !taken[i]) {
            max_i = i;
            break;
        }
    }
    pick(max_i, RefKind::MaxYaw);

    const std::size_t mid = (n - 1) / 2;
    std::size_t med_i = order[mid];
    for (std::size_t r = mid; r < n && taken[med_i]; ++r) med_i = order[r];
    if (taken[med_i]) med_i = order[mid];  // fewer than three frames
    pick(med_i, RefKind::MedianYaw);

    if (full_body) {
        std::uniform_int_distribution<std::size_t> u(0, n - 1);
        sel.indices.push_back(u(rng));
        sel.kinds.push_back(RefKind::HalfBodyCrop);
    }
    return sel;
}

bool stage_trains_group(int stage, const std::string& group) {
    const bool face = group == FaceEncoder::kGroup || group == "face_mlp" || group == "face_null" ||
                      (group.rfind("blocks.", 0) == 0 && group.size() > 10 &&
                       group.compare(group.size() - 10, 10, ".face_attn") == 0);
    switch (stage) {
        case 1: return !face;
        case 2: return face;
        case 3: return true;
        default: throw ValidationError("stage must be 1, 2 or 3, got " + std::to_string(stage));
    }
}

std::vector<StageSpec> default_schedule(bool paper_scale) {
    const std::size_t k = paper_scale ? 10000 : 1000;
    return {{1, 2 * k, 5e-6, false}, {2, 2 * k, 5e-6, true}, {3, 3 * k, 5e-6, true}};
}

Drop draw_drop(double p_ref, double p_motion, std::mt19937_64& rng) {
    std::uniform_real_distribution<double> u(0.0, 1.0);
    const bool ref = u(rng) < p_ref;
    const bool motion = u(rng) < p_motion;
    if (ref && motion) return Drop::Both;
    if (ref) return Drop::Ref;
    if (motion) return Drop::Motion;
    return Drop::Keep;
}

HalfBodyCrop half_body_crop(const Tensor& image, const PoseFrame& frame, const KinematicTree& tree, const Camera& cam) {
    const std::size_t h = image.dim(0), w = image.dim(1);
    if (h % 2 != 0 || w % 2 != 0) throw ShapeError("half-body crop needs even image sides, got " + shape_str(image.shape()));
    const std::size_t ch = h / 2, cw = w / 2;
    const Vec2 head = project_point(frame.head.center, cam);
    const Vec2 pelvis = project_point(frame.joints.positions.at(tree.index_of("pelvis")), cam);
    const Vec2 centre = 0.5 * (head + pelvis);
    auto corner = [](double c, std::size_t span, std::size_t full) {
        const long v = std::lround(c - static_cast<double>(span) / 2.0);
        return static_cast<std::size_t>(std::clamp(v, 0L, static_cast<long>(full - span)));
    };
    const std::size_t x0 = corner(centre.x(), cw, w), y0 = corner(centre.y(), ch, h);

    HalfBodyCrop out{Tensor({h, w, 3}), cam};
    for (std::size_t y = 0; y < h; ++y)
        for (std::size_t x = 0; x < w; ++x)
            for (std::size_t k = 0; k < 3; ++k)
                out.image[(y * w + x) * 3 + k] = image[((y0 + y / 2) * w + (x0 + x / 2)) * 3 + k];
    out.camera.focal = 2.0 * cam.focal;
    out.camera.principal_point = 2.0 * (cam.principal_point - Vec2(double(x0), double(y0))) + Vec2(0.5, 0.5);
    return out;
}

namespace {

Tensor canvases_for(const PoseTrack& track, std::size_t width, std::size_t height, double radius = 0.0) {
    if (radius <= 0.0) radius = projected_head_radius(track.frames.front().head, track.camera);
    const auto spec = RasterSpec::with_default_palette(width, height, 1.0, track.tree.bones().size());
    return stack_canvases(build_canvas(track, radius, spec));
}

PoseTrack sub_track(const PoseTrack& track, std::size_t begin, std::size_t end) {
    PoseTrack t;
    t.tree = track.tree;
    t.camera = track.camera;
    t.fps = track.fps;
    t.frames.assign(track.frames.begin() + static_cast<long>(begin), track.frames.begin() + static_cast<long>(end));
    return t;
}

}  // namespace

Tensor track_canvases(const PoseTrack& track, std::size_t begin, std::size_t end, std::size_t width, std::size_t height,
                      double head_radius) {
    if (begin >= end || end > track.size()) throw ShapeError("canvas range outside the track");
    return canvases_for(sub_track(track, begin, end), width, height, head_radius);
}

ReferenceSet build_references(const Sample& s, const RefSelection& sel, const ModelConfig& cfg) {
    const std::size_t h = s.video.height(), w = s.video.width();
    std::vector<Tensor> lat, can;
    for (std::size_t r = 0; r < sel.indices.size(); ++r) {
        const std::size_t i = sel.indices[r];
        if (i >= s.video.num_frames()) throw ShapeError("reference frame " + std::to_string(i) + " outside the clip");
        Tensor img = s.video.frames.slice0(i, i + 1).reshaped({h, w, 3});
        PoseTrack one = sub_track(s.track, i, i + 1);
        if (sel.kinds[r] == RefKind::HalfBodyCrop) {
            auto crop = half_body_crop(img, one.frames[0], one.tree, one.camera);
            img = std::move(crop.image);
            one.camera = crop.camera;
        }
        const Tensor l = encode_image(img, cfg.codec());
        lat.push_back(l.reshaped({1, l.dim(0), l.dim(1), l.dim(2)}));
        can.push_back(canvases_for(one, w, h));
    }
    return {concat0(lat), concat0(can)};
}

TrainExample make_example(const Sample& s, const ModelConfig& cfg, const TrainOptions& opt, bool with_face,
                          std::mt19937_64& rng) {
    const auto codec = cfg.codec();
    const std::size_t n = s.video.num_frames();
    const std::size_t clip = codec.pixel_frames(codec.latent_frames(std::min(opt.clip_frames, n)));
    std::uniform_int_distribution<std::size_t> start(0, n - clip);
    TrainExample ex;
    ex.begin = start(rng);

    std::uniform_real_distribution<double> u(0.0, 1.0);
    if (u(rng) < opt.p_single_ref) {
        std::uniform_int_distribution<std::size_t> any(0, n - 1);
        ex.refs.indices = {any(rng)};
        ex.refs.kinds = {RefKind::MedianYaw};
    } else {
        ex.refs = select_reference_frames(s.yaw_per_frame, s.full_body, rng);
    }

    PixelVideo window{s.video.frames.slice0(ex.begin, ex.begin + clip), s.video.fps};
    ex.x1 = encode_video(window, codec);
    auto refs = build_references(s, ex.refs, cfg);
    ex.cond.ref_latents = std::move(refs.latents);
    ex.cond.ref_pose = std::move(refs.canvases);
    ex.cond.pose = track_canvases(s.track, ex.begin, ex.begin + clip, s.video.width(), s.video.height());
    if (with_face) {
        std::vector<ExpressionFactors> faces(s.face_factors.begin() + static_cast<long>(ex.begin),
                                             s.face_factors.begin() + static_cast<long>(ex.begin + clip));
        ex.cond.face_crops = face_crops(faces);
    }
    return ex;
}

StageReport run_stage(DiT& model, const StageSpec& spec, const std::vector<Sample>& data, const TrainOptions& opt,
                      const std::filesystem::path& metrics_log) {
    if (data.empty()) throw ValidationError("training needs at least one sample");
    auto& store = model.params();
    store.set_trainable([&](const std::string& g) { return stage_trains_group(spec.stage, g); });
    const double lr = opt.lr.value_or(spec.lr);
    nn::AdamW adam({lr, opt.beta1, opt.beta2, 1e-8, opt.weight_decay});

    std::ofstream log;
    if (!metrics_log.empty()) {
        log.open(metrics_log, std::ios::app);
        if (!log) throw Error("cannot open metrics log " + metrics_log.string());
    }

    std::mt19937_64 rng(opt.seed ^ (0x9e3779b97f4a7c15ULL * static_cast<std::uint64_t>(spec.stage)));
    std::uniform_real_distribution<double> u(0.0, 1.0);
    StageReport report;
    report.stage = spec.stage;
    const std::size_t calls_before = model.face_branch_calls();

    if (opt.batch == 0) throw ValidationError("training batch must be positive");
    auto lr_at = [&](std::size_t step) {
        if (step < opt.warmup) return lr * static_cast<double>(step + 1) / static_cast<double>(opt.warmup);
        const std::size_t span = spec.steps > opt.warmup ? spec.steps - opt.warmup : 1;
        const double t = static_cast<double>(step - opt.warmup) / static_cast<double>(span);
        const double lo = opt.final_lr_scale;
        return lr * (lo + (1.0 - lo) * 0.5 * (1.0 + std::cos(M_PI * t)));
    };

    for (std::size_t step = 0; step < spec.steps; ++step) {
        std::vector<TrainExample> examples;
        std::vector<FlowSample> flows;
        std::vector<Drop> drops;
        for (std::size_t b = 0; b < opt.batch; ++b) {
            const Sample& s = data[rng() % data.size()];
            examples.push_back(make_example(s, model.config(), opt, spec.uses_face, rng));
            drops.push_back(draw_drop(opt.p_drop_ref, opt.p_drop_motion, rng));
            flows.push_back(make_flow_sample(examples.back().x1.latent, u(rng), rng));
        }
        std::vector<const Conditioning*> conds;
        for (const auto& ex : examples) conds.push_back(&ex.cond);

        const double cur = lr_at(step);
        adam.set_lr(cur);
        store.zero_grad();
        nn::Var loss;
        try {
            loss = flow_matching_loss(model, flows, conds, drops);
        } catch (const NumericError&) {
            throw TrainingError("stage " + std::to_string(spec.stage) + " loss is not finite at step " + std::to_string(step));
        }
        nn::backward(loss);
        adam.step(store);
        report.losses.push_back(loss->scalar());
        if (log) {
            log << json{{"step", step}, {"loss", loss->scalar()}, {"lr", cur}, {"stage", spec.stage}}.dump() << '\n';
        }
    }
    report.face_branch_calls = model.face_branch_calls() - calls_before;
    return report;
}

int checkpoint_stage(const std::filesystem::path& dir) {
    std::ifstream in(dir / "manifest.json");
    if (!in) throw FormatError("no checkpoint manifest in " + dir.string());
    try {
        return json::parse(in).at("stage").get<int>();
    } catch (const json::exception& e) {
        throw FormatError(dir.string() + ": " + e.what());
    }
}

DirectoryLock::DirectoryLock(const std::filesystem::path& dir) : path_(dir / ".lock") {
    std::filesystem::create_directories(dir);
    const int fd = ::open(path_.c_str(), O_CREAT | O_EXCL | O_WRONLY, 0644);
    if (fd < 0) throw Error("checkpoint directory " + dir.string() + " is locked by another run");
    const std::string pid = std::to_string(::getpid()) + "\n";
    [[maybe_unused]] const auto n = ::write(fd, pid.data(), pid.size());
    ::close(fd);
}

DirectoryLock::~DirectoryLock() {
    std::error_code ec;
    std::filesystem::remove(path_, ec);
}

StageReport run_stage(const StageSpec& spec, const std::vector<Sample>& data, const TrainOptions& opt,
                      const std::optional<std::filesystem::path>& ckpt_in, const std::filesystem::path& ckpt_out,
                      const ModelConfig& init_cfg, const std::function<void(DiT&)>& prepare) {
    stage_trains_group(spec.stage, "");
    const int have = ckpt_in ? checkpoint_stage(*ckpt_in) : 0;
    if (have != spec.stage - 1) {
        throw ValidationError("stage " + std::to_string(spec.stage) + " needs a stage " + std::to_string(spec.stage - 1) +
                              " checkpoint, got stage " + std::to_string(have));
    }
    DirectoryLock lock(ckpt_out);
    std::unique_ptr<DiT> model = ckpt_in ? DiT::load(*ckpt_in) : std::make_unique<DiT>(init_cfg, opt.seed);
    if (prepare) prepare(*model);
    auto report = run_stage(*model, spec, data, opt, ckpt_out / "metrics.jsonl");
    model->save(ckpt_out, spec.stage, static_cast<long>(spec.steps));
    return report;
}

}  // namespace animator
