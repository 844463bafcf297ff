#include "animator/synthetic_world.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <numbers>

#include "animator/error.hpp"
#include "animator/image_io.hpp"

namespace animator {

using json = nlohmann::json;

namespace {

constexpr double kPi = std::numbers::pi;
constexpr double kTorsoRadius = 0.17;
constexpr double kLimbRadius = 0.045;
constexpr double kHeadRadius = 0.13;
constexpr double kCameraDistance = 4.0;

enum J : std::size_t {
    Pelvis, Spine, Chest, Neck, HeadJ, LShoulder, LElbow, LWrist, RShoulder, RElbow, RWrist,
    LHip, LKnee, LAnkle, RHip, RKnee, RAnkle
};

double wrap(double a) {
    a = std::fmod(a + kPi, 2.0 * kPi);
    if (a < 0) a += 2.0 * kPi;
    return a - kPi;
}

float channel(std::uint8_t v) { return static_cast<float>(v) / 255.0f; }

Color8 invert(const Color8& c) {
    return {static_cast<std::uint8_t>(255 - c[0]), static_cast<std::uint8_t>(255 - c[1]),
            static_cast<std::uint8_t>(255 - c[2])};
}

Color8 hsv8(double h, double s, double v) {
    h = std::fmod(h, 1.0) * 6.0;
    const int i = static_cast<int>(h) % 6;
    const double f = h - std::floor(h);
    const double p = v * (1 - s), q = v * (1 - f * s), t = v * (1 - (1 - f) * s);
    double r = v, g = t, b = p;
    switch (i) {
        case 1: r = q, g = v, b = p; break;
        case 2: r = p, g = v, b = t; break;
        case 3: r = p, g = q, b = v; break;
        case 4: r = t, g = p, b = v; break;
        case 5: r = v, g = p, b = q; break;
        default: break;
    }
    auto q8 = [](double x) { return static_cast<std::uint8_t>(std::lround(std::clamp(x, 0.0, 1.0) * 255.0)); };
    return {q8(r), q8(g), q8(b)};
}

Vec3 rot_x(const Vec3& p, double a) {
    return {p.x(), p.y() * std::cos(a) - p.z() * std::sin(a), p.y() * std::sin(a) + p.z() * std::cos(a)};
}

Vec3 rot_z(const Vec3& p, double a) {
    return {p.x() * std::cos(a) - p.y() * std::sin(a), p.x() * std::sin(a) + p.y() * std::cos(a), p.z()};
}

Vec3 rot_y(const Vec3& p, double a) {
    return {p.x() * std::cos(a) + p.z() * std::sin(a), p.y(), -p.x() * std::sin(a) + p.z() * std::cos(a)};
}

// Rotate the listed joints about `pivot`.
template <typename F>
void rotate_chain(std::vector<Vec3>& p, std::size_t pivot, std::initializer_list<std::size_t> chain, F rot) {
    for (auto j : chain) p[j] = p[pivot] + rot(p[j] - p[pivot]);
}

struct Canvas {
    std::size_t w, h;
    Tensor image;
    std::vector<PixelLabel> labels;

    void put(std::size_t x, std::size_t y, const Color8& c, PixelLabel l) {
        const std::size_t o = y * w + x;
        for (std::size_t k = 0; k < 3; ++k) image[o * 3 + k] = channel(c[k]);
        labels[o] = l;
    }
};

struct Bounds {
    long x0, x1, y0, y1;
};

Bounds clip_box(double cx0, double cy0, double cx1, double cy1, double pad, std::size_t w, std::size_t h) {
    auto lo = [](double v) { return static_cast<long>(std::floor(v)); };
    auto hi = [](double v) { return static_cast<long>(std::ceil(v)); };
    return {std::max(0L, lo(std::min(cx0, cx1) - pad)), std::min(static_cast<long>(w) - 1, hi(std::max(cx0, cx1) + pad)),
            std::max(0L, lo(std::min(cy0, cy1) - pad)), std::min(static_cast<long>(h) - 1, hi(std::max(cy0, cy1) + pad))};
}

double segment_distance(const Vec2& p, const Vec2& a, const Vec2& b, double* t_out = nullptr) {
    const Vec2 d = b - a;
    const double len2 = d.squaredNorm();
    double t = len2 > 0 ? (p - a).dot(d) / len2 : 0.0;
    t = std::clamp(t, 0.0, 1.0);
    if (t_out) *t_out = t;
    return (p - (a + t * d)).norm();
}

Color8 torso_color(const Appearance& app, double phi, double v, bool& back) {
    phi = wrap(phi);
    back = std::fabs(phi) > kPi / 2;
    const int n = app.stripes;
    if (back) {
        const int band = static_cast<int>(std::floor(v * 2 * n)) % 2;
        return band ? invert(app.front_a) : invert(app.front_b);
    }
    const double s = phi / (kPi / 2);  // (-1, 1) across the front
    int cell = 0;
    switch (app.front_pattern) {
        case 0: cell = static_cast<int>(std::floor((s + 1) * n)); break;
        case 1: cell = static_cast<int>(std::floor((s + 1) * n)) + static_cast<int>(std::floor(v * 2 * n)); break;
        default: cell = static_cast<int>(std::floor(((s + 1) + 2 * v) * n)); break;
    }
    return cell % 2 ? app.front_a : app.front_b;
}

}  // namespace

Appearance make_appearance(std::uint64_t seed) {
    std::mt19937_64 rng(seed);
    std::uniform_real_distribution<double> u(0.0, 1.0);
    Appearance a;
    a.seed = seed;
    const double hue = u(rng);
    a.front_a = hsv8(hue, 0.55 + 0.4 * u(rng), 0.75 + 0.25 * u(rng));
    a.front_b = hsv8(hue + 0.15 + 0.2 * u(rng), 0.3 + 0.3 * u(rng), 0.35 + 0.25 * u(rng));
    a.front_pattern = static_cast<int>(rng() % 3);
    a.stripes = 2 + static_cast<int>(rng() % 2);
    a.arm = hsv8(u(rng), 0.6, 0.8);
    a.leg = hsv8(u(rng), 0.5, 0.5 + 0.3 * u(rng));
    a.skin = hsv8(0.05 + 0.05 * u(rng), 0.3 + 0.3 * u(rng), 0.55 + 0.4 * u(rng));
    a.hair = hsv8(0.08 * u(rng), 0.6, 0.15 + 0.4 * u(rng));
    return a;
}

void validate_world_config(const WorldConfig& cfg, const CodecConfig& codec, std::size_t patch) {
    const std::size_t m = codec.spatial * std::max<std::size_t>(patch, 1);
    if (cfg.width == 0 || cfg.height == 0 || cfg.width % m != 0 || cfg.height % m != 0) {
        throw ValidationError("world resolution " + std::to_string(cfg.width) + "x" + std::to_string(cfg.height) +
                              " not divisible by " + std::to_string(m));
    }
    if (cfg.frames < 9) throw ValidationError("world clips need at least 9 frames");
    if (!(cfg.fps > 0)) throw ValidationError("fps must be positive");
    const auto& s = cfg.motion;
    for (double v : {s.yaw_start, s.yaw_end, s.walk_amplitude, s.walk_period, s.wave_amplitude, s.drift}) {
        if (!std::isfinite(v)) throw ValidationError("motion script values must be finite");
    }
    if (s.walk_period <= 0) throw ValidationError("walk period must be positive");
}

JointSet world_apose() {
    JointSet j;
    j.positions = {
        {0, 0.95, 0},      {0, 1.15, 0},     {0, 1.35, 0},      {0, 1.50, 0},      {0, 1.60, 0},     {0.20, 1.45, 0},
        {0.30, 1.20, 0},   {0.36, 0.97, 0},  {-0.20, 1.45, 0},  {-0.30, 1.20, 0},  {-0.36, 0.97, 0}, {0.10, 0.92, 0},
        {0.11, 0.50, 0},   {0.12, 0.08, 0},  {-0.10, 0.92, 0},  {-0.11, 0.50, 0},  {-0.12, 0.08, 0},
    };
    return j;
}

PoseFrame pose_at(const MotionScript& m, std::size_t frame, std::size_t frames) {
    const double u = frames > 1 ? static_cast<double>(frame) / static_cast<double>(frames - 1) : 0.0;
    const double yaw = m.yaw_start + (m.yaw_end - m.yaw_start) * u;
    const double phase = 2.0 * kPi * static_cast<double>(frame) / m.walk_period;
    const double swing = m.walk_amplitude * std::sin(phase);

    auto p = world_apose().positions;
    rotate_chain(p, LHip, {LKnee, LAnkle}, [&](const Vec3& v) { return rot_x(v, swing); });
    rotate_chain(p, RHip, {RKnee, RAnkle}, [&](const Vec3& v) { return rot_x(v, -swing); });
    rotate_chain(p, LShoulder, {LElbow, LWrist}, [&](const Vec3& v) { return rot_x(v, -0.6 * swing); });
    if (m.wave_amplitude > 0) {
        rotate_chain(p, RShoulder, {RElbow, RWrist}, [&](const Vec3& v) { return rot_z(v, -2.3); });
        rotate_chain(p, RElbow, {RWrist}, [&](const Vec3& v) { return rot_z(v, m.wave_amplitude * std::sin(phase)); });
    } else {
        rotate_chain(p, RShoulder, {RElbow, RWrist}, [&](const Vec3& v) { return rot_x(v, 0.6 * swing); });
    }

    const Vec3 shift(m.drift * (u - 0.5), 0.0, 0.0);
    PoseFrame f;
    for (auto& q : p) q = rot_y(q, yaw) + shift;
    f.joints.positions = p;
    f.head.yaw = wrap(yaw);
    f.head.pitch = 0.1 * std::sin(0.5 * phase);
    f.head.roll = 0.0;
    f.head.center = p[HeadJ] + Vec3(0, 0.08, 0);
    f.head.radius = kHeadRadius;
    return f;
}

Camera world_camera(bool full_body, std::size_t width, std::size_t height) {
    Camera cam;
    const double span = full_body ? 1.8 : 1.0;
    const double look_y = full_body ? 0.9 : 1.3;
    cam.focal = 0.85 * static_cast<double>(height) * kCameraDistance / span;
    cam.principal_point = Vec2(static_cast<double>(width) / 2.0, static_cast<double>(height) / 2.0);
    cam.rotation = Mat3::Identity();
    cam.rotation(1, 1) = -1.0;
    cam.translation = Vec3(0.0, look_y, kCameraDistance);
    return cam;
}

double body_yaw(const JointSet& j, const KinematicTree& tree) {
    const Vec3 l = j.positions.at(tree.index_of("l_shoulder")) - j.positions.at(tree.index_of("r_shoulder"));
    return std::atan2(-l.z(), l.x());
}

RenderedFrame render_frame(const PoseFrame& frame, const KinematicTree& tree, const Camera& cam, const Appearance& app,
                           const std::vector<double>& expression, std::size_t width, std::size_t height) {
    if (expression.size() != 4) throw ShapeError("world renderer needs 4 expression factors");
    if (tree.size() != 17) throw ValidationError("world renderer expects the standard 17-joint tree");
    Canvas cv{width, height, Tensor({height, width, 3}), std::vector<PixelLabel>(width * height, PixelLabel::Background)};
    const auto& P = frame.joints.positions;
    auto idx = [&](const char* n) { return tree.index_of(n); };
    auto proj = [&](const Vec3& p) { return project_point(p, cam); };
    auto depth = [&](const Vec3& p) { return cam.to_camera(p).z(); };

    struct Item {
        double depth;
        int kind;  // 0 limb, 1 torso, 2 head
        std::size_t a = 0, b = 0;
        Color8 color{};
    };
    std::vector<Item> items;
    const std::pair<const char*, const char*> arms[] = {{"l_shoulder", "l_elbow"}, {"l_elbow", "l_wrist"},
                                                        {"r_shoulder", "r_elbow"}, {"r_elbow", "r_wrist"}};
    const std::pair<const char*, const char*> legs[] = {{"l_hip", "l_knee"}, {"l_knee", "l_ankle"},
                                                        {"r_hip", "r_knee"}, {"r_knee", "r_ankle"}};
    for (const auto& [a, b] : arms) items.push_back({0.5 * (depth(P[idx(a)]) + depth(P[idx(b)])), 0, idx(a), idx(b), app.arm});
    for (const auto& [a, b] : legs) items.push_back({0.5 * (depth(P[idx(a)]) + depth(P[idx(b)])), 0, idx(a), idx(b), app.leg});
    const std::size_t neck = idx("neck"), pelvis = idx("pelvis");
    items.push_back({0.5 * (depth(P[neck]) + depth(P[pelvis])), 1, neck, pelvis, {}});
    items.push_back({depth(frame.head.center), 2, 0, 0, app.skin});
    std::stable_sort(items.begin(), items.end(), [](const Item& x, const Item& y) { return x.depth > y.depth; });

    const double yaw = body_yaw(frame.joints, tree);
    for (const auto& it : items) {
        if (it.kind == 0) {
            const Vec2 a = proj(P[it.a]), b = proj(P[it.b]);
            const double r = std::max(0.75, kLimbRadius * cam.focal / it.depth);
            const auto bb = clip_box(a.x(), a.y(), b.x(), b.y(), r + 1, width, height);
            for (long y = bb.y0; y <= bb.y1; ++y)
                for (long x = bb.x0; x <= bb.x1; ++x)
                    if (segment_distance(Vec2(double(x), double(y)), a, b) <= r)
                        cv.put(static_cast<std::size_t>(x), static_cast<std::size_t>(y), it.color, PixelLabel::Limb);
        } else if (it.kind == 1) {
            const Vec2 a = proj(P[it.a]), b = proj(P[it.b]);
            const double r = kTorsoRadius * cam.focal / it.depth;
            Vec2 d = b - a;
            const double len = d.norm();
            if (len <= 0) continue;
            d /= len;
            const Vec2 n(d.y(), -d.x());
            const auto bb = clip_box(a.x(), a.y(), b.x(), b.y(), r + 1, width, height);
            for (long y = bb.y0; y <= bb.y1; ++y)
                for (long x = bb.x0; x <= bb.x1; ++x) {
                    const Vec2 q = Vec2(double(x), double(y)) - a;
                    const double along = q.dot(d) / len;
                    const double u = q.dot(n) / r;
                    if (along < 0 || along > 1 || std::fabs(u) >= 1) continue;
                    bool back = false;
                    const Color8 c = torso_color(app, yaw + std::asin(u), along, back);
                    cv.put(static_cast<std::size_t>(x), static_cast<std::size_t>(y), c,
                           back ? PixelLabel::TorsoBack : PixelLabel::TorsoFront);
                }
        } else {
            const Vec2 c = proj(frame.head.center);
            const double r = frame.head.radius * cam.focal / it.depth;
            const double hy = frame.head.yaw;
            const bool facing = std::cos(hy) > 0.15;
            const double shift = -0.6 * r * std::sin(hy);
            const double spread = 0.38 * r * std::cos(hy);
            const double eye_r = 0.1 * r + 0.18 * r * expression[2];
            const double mouth_w = 0.3 * r * std::cos(hy) * (0.7 + 0.6 * expression[1]);
            const double mouth_h = 0.06 * r + 0.3 * r * expression[0];
            const Color8 dark{20, 20, 28}, lips{120, 16, 24};
            const auto bb = clip_box(c.x(), c.y(), c.x(), c.y(), r + 1, width, height);
            for (long y = bb.y0; y <= bb.y1; ++y)
                for (long x = bb.x0; x <= bb.x1; ++x) {
                    const double dx = double(x) - c.x(), dy = double(y) - c.y();
                    if (dx * dx + dy * dy > r * r) continue;
                    Color8 col = app.skin;
                    if (!facing || dy < -0.55 * r) {
                        col = app.hair;
                    } else {
                        const double ey = dy + 0.15 * r;
                        for (double side : {-1.0, 1.0}) {
                            const double ex = dx - shift - side * spread;
                            if (ex * ex + ey * ey <= eye_r * eye_r) col = dark;
                        }
                        const double mx = (dx - shift) / std::max(mouth_w, 0.5);
                        const double my = (dy - 0.45 * r) / std::max(mouth_h, 0.5);
                        if (mx * mx + my * my <= 1.0) col = lips;
                    }
                    cv.put(static_cast<std::size_t>(x), static_cast<std::size_t>(y), col, PixelLabel::Head);
                }
        }
    }
    return {std::move(cv.image), std::move(cv.labels)};
}

PixelVideo render_track(const PoseTrack& track, const Appearance& app, const std::vector<ExpressionFactors>& faces,
                        std::size_t width, std::size_t height) {
    if (faces.size() != track.size()) throw ShapeError("one face factor set per frame required");
    std::vector<Tensor> frames;
    frames.reserve(track.size());
    for (std::size_t i = 0; i < track.size(); ++i) {
        auto r = render_frame(track.frames[i], track.tree, track.camera, app, faces[i].expression, width, height);
        frames.push_back(r.image.reshaped({1, height, width, 3}));
    }
    return {concat0(frames), track.fps};
}

Tensor back_texture_mask(const PoseTrack& track, const Appearance& app, const std::vector<ExpressionFactors>& faces,
                         std::size_t width, std::size_t height) {
    if (faces.size() != track.size()) throw ShapeError("one face factor set per frame required");
    Tensor mask({track.size(), height, width});
    for (std::size_t i = 0; i < track.size(); ++i) {
        const auto r = render_frame(track.frames[i], track.tree, track.camera, app, faces[i].expression, width, height);
        for (std::size_t k = 0; k < r.labels.size(); ++k) {
            mask[i * width * height + k] = r.labels[k] == PixelLabel::TorsoBack ? 1.0f : 0.0f;
        }
    }
    return mask;
}

Sample generate_sample(const WorldConfig& cfg, std::uint64_t seed) {
    validate_world_config(cfg);
    std::mt19937_64 rng(seed);
    std::uniform_real_distribution<double> u(0.0, 1.0);
    Sample s;
    s.full_body = cfg.full_body;
    s.appearance = make_appearance(cfg.appearance_seed);

    std::vector<double> identity(4);
    for (auto& v : identity) v = u(rng);
    std::array<double, 4> period{}, phase{};
    for (std::size_t k = 0; k < 4; ++k) {
        period[k] = 8.0 + 16.0 * u(rng);
        phase[k] = 2.0 * kPi * u(rng);
    }

    s.track.tree = KinematicTree::standard17();
    s.track.camera = world_camera(cfg.full_body, cfg.width, cfg.height);
    s.track.fps = cfg.fps;
    for (std::size_t i = 0; i < cfg.frames; ++i) {
        s.track.frames.push_back(pose_at(cfg.motion, i, cfg.frames));
        ExpressionFactors f;
        f.identity = identity;
        for (std::size_t k = 0; k < 4; ++k) {
            const double v = 0.5 + 0.45 * std::sin(2.0 * kPi * static_cast<double>(i) / period[k] + phase[k]);
            f.expression.push_back(std::clamp(v, 0.0, 1.0));
        }
        s.face_factors.push_back(std::move(f));
        s.yaw_per_frame.push_back(s.track.frames.back().head.yaw);
    }
    validate_track(s.track);
    s.video = render_track(s.track, s.appearance, s.face_factors, cfg.width, cfg.height);
    return s;
}

Tensor face_crops(const std::vector<ExpressionFactors>& faces) { return render_faces(faces); }

WorldConfig draw_world(const DatasetConfig& cfg, std::mt19937_64& rng) {
    if (cfg.min_frames < 9 || cfg.max_frames < cfg.min_frames) throw ValidationError("clip length range must satisfy 9 <= min <= max");
    std::uniform_real_distribution<double> u(0.0, 1.0);
    std::uniform_int_distribution<std::size_t> len(cfg.min_frames, cfg.max_frames);
    WorldConfig w = cfg.world;
    w.frames = len(rng);
    w.appearance_seed = rng();
    w.full_body = u(rng) < 0.5;
    w.motion.yaw_start = kPi * (2.0 * u(rng) - 1.0);
    w.motion.yaw_end = w.motion.yaw_start + kPi * (2.0 * u(rng) - 1.0);
    w.motion.walk_amplitude = u(rng) < 0.5 ? 0.2 + 0.3 * u(rng) : 0.0;
    w.motion.walk_period = 10.0 + 8.0 * u(rng);
    w.motion.wave_amplitude = u(rng) < 0.3 ? 0.3 + 0.5 * u(rng) : 0.0;
    w.motion.drift = 0.6 * u(rng) - 0.3;
    return w;
}

namespace {

json factors_json(const Sample& s) {
    json expr = json::array();
    for (const auto& f : s.face_factors) expr.push_back(f.expression);
    return {{"identity", s.face_factors.empty() ? std::vector<double>{} : s.face_factors.front().identity},
            {"expression", expr},
            {"yaw", s.yaw_per_frame},
            {"full_body", s.full_body},
            {"appearance_seed", s.appearance.seed}};
}

std::string sample_name(std::size_t i) {
    char buf[32];
    std::snprintf(buf, sizeof buf, "sample_%04zu", i);
    return buf;
}

}  // namespace

json make_dataset(const std::filesystem::path& root, std::size_t n, const DatasetConfig& cfg, std::uint64_t seed) {
    if (n == 0) throw ValidationError("make_dataset needs n >= 1");
    validate_world_config(cfg.world);
    std::filesystem::create_directories(root);
    std::mt19937_64 rng(seed);
    json samples = json::array();
    for (std::size_t i = 0; i < n; ++i) {
        const WorldConfig w = draw_world(cfg, rng);
        const std::uint64_t sample_seed = rng();
        const Sample s = generate_sample(w, sample_seed);
        const auto dir = root / sample_name(i);
        try {
            std::filesystem::create_directories(dir / "frames");
            save_pose_track(dir / "poses.json", s.track);
            for (std::size_t t = 0; t < s.video.num_frames(); ++t) {
                char buf[32];
                std::snprintf(buf, sizeof buf, "%05zu.png", t);
                write_png(dir / "frames" / buf, s.video.frames.slice0(t, t + 1).reshaped({w.height, w.width, 3}));
            }
            std::ofstream out(dir / "factors.json");
            out << factors_json(s).dump(2) << '\n';
            if (!out) throw Error("cannot write factors.json");
        } catch (const std::exception& e) {
            throw Error("sample " + std::to_string(i) + ": " + e.what());
        }
        samples.push_back({{"dir", sample_name(i)},
                           {"frames", w.frames},
                           {"full_body", w.full_body},
                           {"seed", sample_seed},
                           {"hash", hex64(hash_tensor(s.video.frames))}});
    }
    json manifest = {{"version", 1},
                     {"n", n},
                     {"seed", seed},
                     {"resolution", {cfg.world.width, cfg.world.height}},
                     {"clip_range", {cfg.min_frames, cfg.max_frames}},
                     {"paper_clip_range", {kPaperMinFrames, kPaperMaxFrames}},
                     {"clip_scale", static_cast<double>(kPaperMaxFrames) / static_cast<double>(cfg.max_frames)},
                     {"samples", samples}};
    std::ofstream out(root / "manifest.json");
    out << manifest.dump(2) << '\n';
    if (!out) throw Error("cannot write dataset manifest in " + root.string());
    return manifest;
}

Sample load_sample(const std::filesystem::path& dir) {
    Sample s;
    s.track = load_pose_track(dir / "poses.json");
    std::ifstream in(dir / "factors.json");
    if (!in) throw FormatError("missing factors.json in " + dir.string());
    json f;
    try {
        f = json::parse(in);
        const auto identity = f.at("identity").get<std::vector<double>>();
        for (const auto& e : f.at("expression")) s.face_factors.push_back({e.get<std::vector<double>>(), identity});
        s.yaw_per_frame = f.at("yaw").get<std::vector<double>>();
        s.full_body = f.at("full_body").get<bool>();
        s.appearance = make_appearance(f.at("appearance_seed").get<std::uint64_t>());
    } catch (const json::exception& e) {
        throw FormatError(dir.string() + "/factors.json: " + e.what());
    }
    if (s.face_factors.size() != s.track.size() || s.yaw_per_frame.size() != s.track.size()) {
        throw FormatError(dir.string() + ": factors do not cover every frame");
    }
    std::vector<Tensor> frames;
    for (std::size_t t = 0; t < s.track.size(); ++t) {
        char buf[32];
        std::snprintf(buf, sizeof buf, "%05zu.png", t);
        const Tensor img = read_png(dir / "frames" / buf);
        frames.push_back(img.reshaped({1, img.dim(0), img.dim(1), 3}));
    }
    s.video = {concat0(frames), s.track.fps};
    return s;
}

std::vector<Sample> load_dataset(const std::filesystem::path& manifest_path) {
    std::ifstream in(manifest_path);
    if (!in) throw FormatError("cannot open dataset manifest " + manifest_path.string());
    json m;
    try {
        m = json::parse(in);
    } catch (const json::exception& e) {
        throw FormatError(manifest_path.string() + ": " + e.what());
    }
    std::vector<Sample> out;
    const auto root = manifest_path.parent_path();
    for (const auto& e : m.at("samples")) out.push_back(load_sample(root / e.at("dir").get<std::string>()));
    return out;
}

}  // namespace animator
