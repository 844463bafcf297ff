#include "animator/dit.hpp"

#include <cmath>
#include <fstream>

#include "animator/error.hpp"

namespace animator {

using json = nlohmann::json;
using nn::Mat;
using nn::Var;

namespace {

constexpr double kRefTimePosition = -8.0;
constexpr double kPositionPeriod = 100.0;

bool is_pow2(std::size_t v) { return v != 0 && (v & (v - 1)) == 0; }

std::string strip_prefix(const std::string& what) {
    const std::string p = "shape error: ";
    return what.rfind(p, 0) == 0 ? what.substr(p.size()) : what;
}

// Rows repeating `row` n times.
Var broadcast_rows(const Var& row, Eigen::Index n) {
    return nn::add_row(nn::constant(Mat::Zero(n, row->cols())), row);
}

}  // namespace

// --- config -----------------------------------------------------------------

void validate_model_config(const ModelConfig& cfg) {
    if (cfg.c_model == 0 || cfg.n_heads == 0 || cfg.c_model % cfg.n_heads != 0) {
        throw ValidationError("c_model must be a positive multiple of n_heads");
    }
    if (cfg.c_model % 2 != 0 || cfg.c_model < 6) throw ValidationError("c_model must be even and at least 6");
    if (cfg.n_blocks == 0) throw ValidationError("n_blocks must be positive");
    if (!is_pow2(cfg.f_s) || cfg.f_t == 0) throw ValidationError("f_s must be a power of two and f_t positive");
    if (cfg.patch == 0) throw ValidationError("patch must be positive");
    if (cfg.c_face != cfg.face.c) throw ValidationError("c_face must match the face encoder token width");
    if (cfg.c_pose == 0 || cfg.pose_width == 0 || cfg.mlp_ratio == 0) throw ValidationError("widths must be positive");
    if (cfg.time_width == 0 || cfg.time_width % 2 != 0) throw ValidationError("time_width must be even");
    if (!(cfg.ref_time >= 0.0 && cfg.ref_time <= 1.0)) throw ValidationError("ref_time must lie in [0, 1]");
}

json model_config_to_json(const ModelConfig& cfg) {
    return {{"c_model", cfg.c_model},   {"n_blocks", cfg.n_blocks},     {"n_heads", cfg.n_heads},
            {"c_face", cfg.c_face},     {"c_pose", cfg.c_pose},         {"f_s", cfg.f_s},
            {"f_t", cfg.f_t},           {"patch", cfg.patch},           {"mlp_ratio", cfg.mlp_ratio},
            {"pose_width", cfg.pose_width}, {"time_width", cfg.time_width}, {"ref_time", cfg.ref_time},
            {"face_width", cfg.face.width}};
}

ModelConfig model_config_from_json(const json& j) {
    ModelConfig cfg;
    for (const auto& [key, value] : j.items()) {
        if (key == "c_model") cfg.c_model = value.get<std::size_t>();
        else if (key == "n_blocks") cfg.n_blocks = value.get<std::size_t>();
        else if (key == "n_heads") cfg.n_heads = value.get<std::size_t>();
        else if (key == "c_face") cfg.c_face = value.get<std::size_t>();
        else if (key == "c_pose") cfg.c_pose = value.get<std::size_t>();
        else if (key == "f_s") cfg.f_s = value.get<std::size_t>();
        else if (key == "f_t") cfg.f_t = value.get<std::size_t>();
        else if (key == "patch") cfg.patch = value.get<std::size_t>();
        else if (key == "mlp_ratio") cfg.mlp_ratio = value.get<std::size_t>();
        else if (key == "pose_width") cfg.pose_width = value.get<std::size_t>();
        else if (key == "time_width") cfg.time_width = value.get<std::size_t>();
        else if (key == "ref_time") cfg.ref_time = value.get<double>();
        else if (key == "face_width") cfg.face.width = value.get<std::size_t>();
        else throw ValidationError("unknown model config key '" + key + "'");
    }
    cfg.face.c = cfg.c_face;
    validate_model_config(cfg);
    return cfg;
}

// --- flow samples -------------------------------------------------------------

Tensor FlowSample::x_s() const {
    if (x0.shape() != x1.shape()) throw ShapeError("flow sample endpoints differ in shape");
    Tensor out(x1.shape());
    for (std::size_t i = 0; i < out.numel(); ++i) {
        out[i] = static_cast<float>((1.0 - s) * static_cast<double>(x0[i]) + s * static_cast<double>(x1[i]));
    }
    return out;
}

Tensor FlowSample::v_target() const {
    if (x0.shape() != x1.shape()) throw ShapeError("flow sample endpoints differ in shape");
    Tensor out(x1.shape());
    for (std::size_t i = 0; i < out.numel(); ++i) out[i] = x1[i] - x0[i];
    return out;
}

FlowSample make_flow_sample(const Tensor& x1, double s, std::mt19937_64& rng) {
    std::normal_distribution<float> n(0.0f, 1.0f);
    Tensor x0(x1.shape());
    for (auto& v : x0.vec()) v = n(rng);
    return {std::move(x0), x1, s};
}

const char* drop_name(Drop d) {
    switch (d) {
        case Drop::Keep: return "keep";
        case Drop::Ref: return "drop_ref";
        case Drop::Motion: return "drop_motion";
        case Drop::Both: return "drop_both";
    }
    return "?";
}

Mat tensor_rows(const Tensor& t) {
    if (t.rank() < 2) throw ShapeError("expected a tensor of rank >= 2, got " + shape_str(t.shape()));
    const auto c = static_cast<Eigen::Index>(t.shape().back());
    const auto r = static_cast<Eigen::Index>(t.numel()) / c;
    Mat m(r, c);
    for (Eigen::Index i = 0; i < m.size(); ++i) m.data()[i] = t[static_cast<std::size_t>(i)];
    return m;
}

Tensor rows_tensor(const Mat& m, Shape shape) {
    if (shape_numel(shape) != static_cast<std::size_t>(m.size())) throw ShapeError("row matrix does not fit " + shape_str(shape));
    Tensor t(std::move(shape));
    for (Eigen::Index i = 0; i < m.size(); ++i) t[static_cast<std::size_t>(i)] = static_cast<float>(m.data()[i]);
    return t;
}

// --- model ------------------------------------------------------------------

DiT::DiT(const ModelConfig& cfg, std::uint64_t seed) : cfg_(cfg), store_(seed) {
    validate_model_config(cfg_);
    const auto c = static_cast<Eigen::Index>(cfg_.c_model);
    const auto pw = static_cast<Eigen::Index>(cfg_.pose_width);
    const auto cp = static_cast<Eigen::Index>(cfg_.c_pose);
    const auto cl = static_cast<Eigen::Index>(cfg_.latent_channels());
    const auto p2 = static_cast<Eigen::Index>(cfg_.patch * cfg_.patch);

    face_encoder_ = FaceEncoder(store_, cfg_.face);

    std::size_t downs = 0;
    while ((std::size_t{1} << downs) < cfg_.f_s) ++downs;
    if (downs == 0) {
        pose_convs_.push_back(nn::Conv2d::create(store_, "pose_encoder", "conv0", 6, pw, 3, 1, 1));
    }
    for (std::size_t i = 0; i < downs; ++i) {
        pose_convs_.push_back(
            nn::Conv2d::create(store_, "pose_encoder", "conv" + std::to_string(i), i == 0 ? 6 : pw, pw, 3, 2, 1));
    }
    pose_out_ = nn::Conv2d::create(store_, "pose_encoder", "out", pw, cp, 1, 1, 0, true);

    patch_embed_ = nn::Linear::create(store_, "patch_embed", "proj", p2 * (cl + cp), c);
    time_in_ = nn::Linear::create(store_, "time_embed", "in", static_cast<Eigen::Index>(cfg_.time_width), c);
    time_out_ = nn::Linear::create(store_, "time_embed", "out", c, c);
    face_mlp_ = nn::Linear::create(store_, "face_mlp", "proj", static_cast<Eigen::Index>(cfg_.c_face), c);
    null_ref_ = &store_.add("null", "ref", 1, c, nn::Init::Normal, 0.02);
    null_pose_ = &store_.add("null", "pose", 1, cp, nn::Init::Normal, 0.02);
    null_face_ = &store_.add("face_null", "face", 1, c, nn::Init::Normal, 0.02);

    for (std::size_t b = 0; b < cfg_.n_blocks; ++b) {
        const std::string g = "blocks." + std::to_string(b) + ".";
        auto attention = [&](const std::string& group) {
            return Attention{nn::Linear::create(store_, g + group, "q", c, c), nn::Linear::create(store_, g + group, "k", c, c),
                             nn::Linear::create(store_, g + group, "v", c, c),
                             nn::Linear::create(store_, g + group, "out", c, c, true)};
        };
        Block blk;
        blk.ada = nn::Linear::create(store_, g + "ada", "proj", c, 8 * c, true);
        blk.self_attn = attention("self_attn");
        blk.ref_attn = attention("ref_attn");
        blk.face_attn = attention("face_attn");
        const auto hidden = c * static_cast<Eigen::Index>(cfg_.mlp_ratio);
        blk.mlp_in = nn::Linear::create(store_, g + "mlp", "in", c, hidden);
        blk.mlp_out = nn::Linear::create(store_, g + "mlp", "out", hidden, c, true);
        blocks_.push_back(blk);
    }
    final_ada_ = nn::Linear::create(store_, "final", "ada", c, 2 * c, true);
    final_out_ = nn::Linear::create(store_, "final", "out", c, p2 * cl, true);
}

void DiT::check_block(std::size_t block) const {
    if (block >= blocks_.size()) throw ShapeError("block index " + std::to_string(block) + " out of range");
}

Var DiT::time_embedding(double s) const {
    const Var x = nn::constant(nn::sinusoid(s * 1000.0, static_cast<Eigen::Index>(cfg_.time_width)));
    return time_out_(nn::silu(time_in_(x)));
}

Var DiT::modulation(std::size_t block, const Var& temb) const {
    return blocks_[block].ada(nn::silu(temb));
}

Var DiT::pose_features(const Tensor& canvases) const {
    if (canvases.rank() != 4 || canvases.dim(3) != 6) {
        throw ShapeError("pose canvases must be T x H x W x 6, got " + shape_str(canvases.shape()));
    }
    const std::size_t n = canvases.dim(0), H = canvases.dim(1), W = canvases.dim(2);
    if (H % cfg_.f_s != 0 || W % cfg_.f_s != 0) {
        throw ShapeError("canvas size " + std::to_string(H) + "x" + std::to_string(W) + " not divisible by f_s=" +
                         std::to_string(cfg_.f_s));
    }
    Var x = nn::constant(tensor_rows(canvases.reshaped({n * H * W, 6})));
    std::size_t h = H, w = W;
    for (const auto& conv : pose_convs_) {
        x = nn::silu(conv(x, h, w, n));
        h = conv.out_size(h);
        w = conv.out_size(w);
    }
    return pose_out_(x, h, w, n);
}

PoseFeature DiT::encode_pose(const Tensor& canvases) const {
    const Var f = pose_features(canvases);
    const std::size_t n = canvases.dim(0), h = canvases.dim(1) / cfg_.f_s, w = canvases.dim(2) / cfg_.f_s;
    return {rows_tensor(f->value, {n, h, w, cfg_.c_pose})};
}

PoseFeature DiT::encode_pose(const std::vector<GuidanceCanvas>& canvases) const {
    if (canvases.empty()) throw ShapeError("encode_pose needs at least one canvas");
    return encode_pose(stack_canvases(canvases));
}

Var DiT::positional(std::size_t t, std::size_t hp, std::size_t wp, double time_offset, bool shared_time) const {
    const auto c = static_cast<Eigen::Index>(cfg_.c_model);
    const Eigen::Index ws = 2 * (c / 6);
    const Eigen::Index wt = c - 2 * ws;
    Mat pe(static_cast<Eigen::Index>(t * hp * wp), c);
    Eigen::Index r = 0;
    for (std::size_t f = 0; f < t; ++f) {
        const double tf = shared_time ? time_offset : time_offset + static_cast<double>(f);
        const Mat et = nn::sinusoid(tf, wt, kPositionPeriod);
        for (std::size_t y = 0; y < hp; ++y) {
            const Mat ey = nn::sinusoid(static_cast<double>(y), ws, kPositionPeriod);
            for (std::size_t x = 0; x < wp; ++x, ++r) {
                pe.block(r, 0, 1, wt) = et;
                if (ws > 0) {
                    pe.block(r, wt, 1, ws) = ey;
                    pe.block(r, wt + ws, 1, ws) = nn::sinusoid(static_cast<double>(x), ws, kPositionPeriod);
                }
            }
        }
    }
    return nn::constant(std::move(pe));
}

TokenGrid DiT::assemble_tokens(const Var& latent_rows, const Var& pose_rows, std::size_t t, std::size_t h,
                               std::size_t w) const {
    const auto rows = static_cast<Eigen::Index>(t * h * w);
    if (latent_rows->rows() != rows || latent_rows->cols() != static_cast<Eigen::Index>(cfg_.latent_channels())) {
        throw ShapeError("latent rows " + std::to_string(latent_rows->rows()) + "x" + std::to_string(latent_rows->cols()) +
                         " do not match t*h*w=" + std::to_string(rows) + " x c_lat=" + std::to_string(cfg_.latent_channels()));
    }
    if (pose_rows->rows() != rows || pose_rows->cols() != static_cast<Eigen::Index>(cfg_.c_pose)) {
        throw ShapeError("pose feature " + std::to_string(pose_rows->rows()) + "x" + std::to_string(pose_rows->cols()) +
                         " does not match latent grid " + std::to_string(rows) + "x" + std::to_string(cfg_.c_pose));
    }
    if (h % cfg_.patch != 0 || w % cfg_.patch != 0) {
        throw ShapeError("patch " + std::to_string(cfg_.patch) + " does not divide latent " + std::to_string(h) + "x" +
                         std::to_string(w));
    }
    const Var joined = nn::concat_cols({latent_rows, pose_rows});
    return {patch_embed_(nn::patchify(joined, h, w, cfg_.patch, t)), t, (h / cfg_.patch) * (w / cfg_.patch)};
}

TokenGrid DiT::assemble_noise_tokens(const LatentVideo& x_s, const PoseFeature& pose) const {
    const auto& l = x_s.latent;
    const auto& p = pose.feature;
    if (l.rank() != 4 || p.rank() != 4 || l.dim(0) != p.dim(0) || l.dim(1) != p.dim(1) || l.dim(2) != p.dim(2)) {
        throw ShapeError("latent " + shape_str(l.shape()) + " and pose feature " + shape_str(p.shape()) + " disagree");
    }
    return assemble_tokens(nn::constant(tensor_rows(l)), nn::constant(tensor_rows(p)), l.dim(0), l.dim(1), l.dim(2));
}

std::pair<TokenGrid, TokenGrid> DiT::joint_self_attention(std::size_t block, const TokenGrid& ref,
                                                          const TokenGrid& noise) const {
    check_block(block);
    if (ref.hw != noise.hw || ref.width() != noise.width() || ref.width() != cfg_.c_model) {
        throw ShapeError("self-attention streams differ: ref " + std::to_string(ref.t) + "x" + std::to_string(ref.hw) + "x" +
                         std::to_string(ref.width()) + ", noise " + std::to_string(noise.t) + "x" + std::to_string(noise.hw) +
                         "x" + std::to_string(noise.width()));
    }
    const auto& a = blocks_[block].self_attn;
    // T in R^{((t_R + t_D) * h * w) x c}
    const Var all = nn::concat_rows({ref.tokens, noise.tokens});
    const auto n_ref = static_cast<Eigen::Index>(ref.t * ref.hw);
    const auto n_all = static_cast<Eigen::Index>((ref.t + noise.t) * noise.hw);
    if (all->rows() != n_all) throw ShapeError("joint token sequence has " + std::to_string(all->rows()) + " rows");
    const Var out = a.out(nn::attention(a.q(all), a.k(all), a.v(all), cfg_.n_heads));
    return {TokenGrid{nn::slice_rows(out, 0, n_ref), ref.t, ref.hw},
            TokenGrid{nn::slice_rows(out, n_ref, n_all - n_ref), noise.t, noise.hw}};
}

TokenGrid DiT::ref_cross_attention(std::size_t block, const TokenGrid& ref, const TokenGrid& noise,
                                   const std::vector<bool>* ref_frame_mask) const {
    check_block(block);
    if (ref.hw != noise.hw || ref.width() != noise.width() || ref.width() != cfg_.c_model) {
        throw ShapeError("reference attention streams differ in token layout");
    }
    if (ref.tokens->rows() != static_cast<Eigen::Index>(ref.t * ref.hw)) {
        throw ShapeError("reference grid holds " + std::to_string(ref.tokens->rows()) + " tokens, expected t_R*h*w");
    }
    const auto& a = blocks_[block].ref_attn;
    // Reference tokens reshaped to 1 x (h*w*t_R) x c: one key sequence shared by every noised frame.
    std::vector<bool> key_mask;
    if (ref_frame_mask) {
        if (ref_frame_mask->size() != ref.t) throw ShapeError("reference mask length differs from t_R");
        key_mask.reserve(ref.t * ref.hw);
        for (std::size_t f = 0; f < ref.t; ++f) key_mask.insert(key_mask.end(), ref.hw, (*ref_frame_mask)[f]);
    }
    const Var out = nn::attention(a.q(noise.tokens), a.k(ref.tokens), a.v(ref.tokens), cfg_.n_heads,
                                  ref_frame_mask ? &key_mask : nullptr);
    return {a.out(out), noise.t, noise.hw};
}

std::pair<std::size_t, std::size_t> DiT::face_window(std::size_t latent_frame) const {
    if (latent_frame == 0) return {0, 1};
    return {1 + (latent_frame - 1) * cfg_.f_t, 1 + latent_frame * cfg_.f_t};
}

TokenGrid DiT::face_cross_attention(std::size_t block, const TokenGrid& noise, const Var& face) const {
    check_block(block);
    ++face_calls_;
    const std::size_t frames = cfg_.codec().pixel_frames(noise.t);
    if (face->rows() != static_cast<Eigen::Index>(frames) || face->cols() != static_cast<Eigen::Index>(cfg_.c_model)) {
        throw ShapeError("face context has " + std::to_string(face->rows()) + " tokens for " + std::to_string(noise.t) +
                         " latent frames (expected " + std::to_string(frames) + ")");
    }
    const auto& a = blocks_[block].face_attn;
    const Var k = a.k(face), v = a.v(face);
    const Var q = a.q(noise.tokens);
    std::vector<Var> parts;
    parts.reserve(noise.t);
    const auto hw = static_cast<Eigen::Index>(noise.hw);
    for (std::size_t i = 0; i < noise.t; ++i) {
        const auto [b, e] = face_window(i);
        const auto len = static_cast<Eigen::Index>(e - b);
        parts.push_back(nn::attention(nn::slice_rows(q, static_cast<Eigen::Index>(i) * hw, hw),
                                      nn::slice_rows(k, static_cast<Eigen::Index>(b), len),
                                      nn::slice_rows(v, static_cast<Eigen::Index>(b), len), cfg_.n_heads));
    }
    return {a.out(nn::concat_rows(parts)), noise.t, noise.hw};
}

Var DiT::face_context(const Conditioning& cond, Drop drop, std::size_t pixel_frames) const {
    if (!cond.has_face()) return nullptr;
    const auto n = static_cast<Eigen::Index>(pixel_frames);
    if (drops_motion(drop)) return broadcast_rows(nn::param(*null_face_), n);
    Var tokens;
    if (cond.face_crops) {
        tokens = face_encoder_.forward(*cond.face_crops);
    } else {
        const auto& t = *cond.face_tokens;
        if (t.rank() != 2 || t.dim(1) != cfg_.c_face) {
            throw ShapeError("face tokens must be T x " + std::to_string(cfg_.c_face) + ", got " + shape_str(t.shape()));
        }
        tokens = nn::constant(tensor_rows(t));
    }
    if (tokens->rows() != n) {
        throw ShapeError("face input covers " + std::to_string(tokens->rows()) + " frames, segment has " +
                         std::to_string(pixel_frames));
    }
    return nn::silu(face_mlp_(tokens));
}

Var DiT::forward(const Tensor& x_s, double s, const Conditioning& cond, Drop drop) const {
    if (!(s >= 0.0 && s <= 1.0)) throw ValidationError("flow time s must lie in [0, 1]");
    if (x_s.rank() != 4 || x_s.dim(3) != cfg_.latent_channels()) {
        throw ShapeError("noised latent must be t x h x w x " + std::to_string(cfg_.latent_channels()) + ", got " +
                         shape_str(x_s.shape()));
    }
    const std::size_t t = x_s.dim(0), h = x_s.dim(1), w = x_s.dim(2);
    const std::size_t frames = cfg_.codec().pixel_frames(t);
    const auto rows = static_cast<Eigen::Index>(t * h * w);
    const auto c = static_cast<Eigen::Index>(cfg_.c_model);

    // pose branch
    Var pose;
    if (drops_motion(drop)) {
        pose = broadcast_rows(nn::param(*null_pose_), rows);
    } else {
        const auto& cv = cond.pose;
        if (cv.rank() != 4 || cv.dim(0) != frames || cv.dim(1) != h * cfg_.f_s || cv.dim(2) != w * cfg_.f_s) {
            throw ShapeError("pose canvases " + shape_str(cv.shape()) + " do not cover latent " + shape_str(x_s.shape()));
        }
        Tensor picked = cv;
        if (cfg_.f_t > 1) {
            std::vector<Tensor> sel;
            for (std::size_t lt = 0; lt < t; ++lt) {
                const std::size_t src = lt == 0 ? 0 : lt * cfg_.f_t;
                sel.push_back(cv.slice0(src, src + 1));
            }
            picked = concat0(sel);
        }
        pose = pose_features(picked);
    }
    const std::size_t hp = h / cfg_.patch, wp = w / cfg_.patch;
    TokenGrid noise = assemble_tokens(nn::constant(tensor_rows(x_s)), pose, t, h, w);
    noise.tokens = nn::add(noise.tokens, positional(t, hp, wp, 0.0, false));

    // reference branch, same weights as the noise branch
    TokenGrid ref;
    if (drops_ref(drop)) {
        const std::size_t hw = noise.hw;
        ref = {nn::add(broadcast_rows(nn::param(*null_ref_), static_cast<Eigen::Index>(hw)),
                       positional(1, hp, wp, kRefTimePosition, true)),
               1, hw};
    } else {
        const auto& rl = cond.ref_latents;
        if (rl.rank() != 4 || rl.dim(0) == 0 || rl.dim(1) != h || rl.dim(2) != w || rl.dim(3) != cfg_.latent_channels()) {
            throw ShapeError("reference latents " + shape_str(rl.shape()) + " incompatible with latent " +
                             shape_str(x_s.shape()));
        }
        const std::size_t tr = rl.dim(0);
        Var ref_pose;
        if (cond.ref_pose.empty()) {
            ref_pose = broadcast_rows(nn::param(*null_pose_), static_cast<Eigen::Index>(tr * h * w));
        } else {
            const auto& rp = cond.ref_pose;
            if (rp.rank() != 4 || rp.dim(0) != tr || rp.dim(1) != h * cfg_.f_s || rp.dim(2) != w * cfg_.f_s) {
                throw ShapeError("reference pose canvases " + shape_str(rp.shape()) + " do not match " +
                                 std::to_string(tr) + " references");
            }
            ref_pose = pose_features(rp);
        }
        ref = assemble_tokens(nn::constant(tensor_rows(rl)), ref_pose, tr, h, w);
        ref.tokens = nn::add(ref.tokens, positional(tr, hp, wp, kRefTimePosition, true));
    }

    const Var face = face_context(cond, drop, frames);
    if (face) ++face_calls_;

    const Var temb = time_embedding(s);
    const Var temb_ref = time_embedding(cfg_.ref_time);

    auto part = [c](const Var& mod, Eigen::Index k) { return nn::slice_cols(mod, k * c, c); };
    for (std::size_t b = 0; b < blocks_.size(); ++b) {
        try {
            const Var mn = modulation(b, temb);
            const Var mr = modulation(b, temb_ref);
            const auto& blk = blocks_[b];

            TokenGrid rn{nn::modulate(nn::layer_norm(ref.tokens), part(mr, 0), part(mr, 1)), ref.t, ref.hw};
            TokenGrid nn_{nn::modulate(nn::layer_norm(noise.tokens), part(mn, 0), part(mn, 1)), noise.t, noise.hw};
            auto [dr, dn] = joint_self_attention(b, rn, nn_);
            ref.tokens = nn::add(ref.tokens, dr.tokens);
            noise.tokens = nn::add(noise.tokens, dn.tokens);

            TokenGrid rk{nn::modulate(nn::layer_norm(ref.tokens), part(mr, 2), part(mr, 3)), ref.t, ref.hw};
            TokenGrid nq{nn::modulate(nn::layer_norm(noise.tokens), part(mn, 2), part(mn, 3)), noise.t, noise.hw};
            noise.tokens = nn::add(noise.tokens, ref_cross_attention(b, rk, nq).tokens);

            if (face) {
                TokenGrid nf{nn::modulate(nn::layer_norm(noise.tokens), part(mn, 4), part(mn, 5)), noise.t, noise.hw};
                noise.tokens = nn::add(noise.tokens, face_cross_attention(b, nf, face).tokens);
            }

            auto mlp = [&](const Var& x, const Var& mod) {
                const Var y = nn::modulate(nn::layer_norm(x), part(mod, 6), part(mod, 7));
                return nn::add(x, blk.mlp_out(nn::silu(blk.mlp_in(y))));
            };
            noise.tokens = mlp(noise.tokens, mn);
            ref.tokens = mlp(ref.tokens, mr);
        } catch (const ShapeError& e) {
            throw ShapeError("block " + std::to_string(b) + ": " + strip_prefix(e.what()));
        }
    }

    const Var fm = final_ada_(nn::silu(temb));
    const Var y = final_out_(nn::modulate(nn::layer_norm(noise.tokens), part(fm, 0), part(fm, 1)));
    return nn::unpatchify(y, h, w, cfg_.patch, t);
}

LatentVideo DiT::predict_velocity(const LatentVideo& x_s, double s, const Conditioning& cond, Drop drop) const {
    const Var v = forward(x_s.latent, s, cond, drop);
    return {rows_tensor(v->value, x_s.latent.shape())};
}

LatentVideo predict_velocity(const DiT& model, const LatentVideo& x_s, double s, const Conditioning& cond, Drop drop) {
    return model.predict_velocity(x_s, s, cond, drop);
}

// --- objectives ---------------------------------------------------------------

Var flow_matching_loss(const DiT& model, const std::vector<FlowSample>& batch, const std::vector<const Conditioning*>& cond,
                       const std::vector<Drop>& drops) {
    if (batch.empty() || batch.size() != cond.size() || batch.size() != drops.size()) {
        throw ShapeError("flow matching batch, conditioning and drop flags must have equal non-zero length");
    }
    Var total;
    for (std::size_t i = 0; i < batch.size(); ++i) {
        const auto& smp = batch[i];
        const Var v = model.forward(smp.x_s(), smp.s, *cond[i], drops[i]);
        const Var l = nn::mse(v, tensor_rows(smp.v_target()));
        total = total ? nn::add(total, l) : l;
    }
    total = nn::scale(total, 1.0 / static_cast<double>(batch.size()));
    if (!std::isfinite(total->scalar())) throw NumericError("flow matching loss is not finite");
    return total;
}

double flow_matching_loss(const VelocityFn& v, const std::vector<FlowSample>& batch) {
    if (batch.empty()) throw ShapeError("flow matching batch is empty");
    double total = 0.0;
    for (const auto& smp : batch) {
        const Tensor pred = v(smp.x_s(), smp.s);
        const Tensor target = smp.v_target();
        if (pred.shape() != target.shape()) throw ShapeError("velocity field returned " + shape_str(pred.shape()));
        double sq = 0.0;
        for (std::size_t i = 0; i < pred.numel(); ++i) {
            const double d = static_cast<double>(pred[i]) - static_cast<double>(target[i]);
            sq += d * d;
        }
        total += sq / static_cast<double>(pred.numel());
    }
    total /= static_cast<double>(batch.size());
    if (!std::isfinite(total)) throw NumericError("flow matching loss is not finite");
    return total;
}

Tensor combine_cfg(const Tensor& v_uncond, const Tensor& v_ref, const Tensor& v_full, const CfgWeights& w) {
    if (v_uncond.shape() != v_ref.shape() || v_ref.shape() != v_full.shape()) throw ShapeError("cfg branches differ in shape");
    if (!(w.w_ref >= 0.0) || !(w.w_motion >= 0.0)) throw ValidationError("cfg weights must be non-negative");
    Tensor out(v_full.shape());
    for (std::size_t i = 0; i < out.numel(); ++i) {
        const double u = v_uncond[i], r = v_ref[i], f = v_full[i];
        out[i] = static_cast<float>(u + w.w_ref * (r - u) + w.w_motion * (f - r));
    }
    return out;
}

LatentVideo cfg_velocity(const DiT& model, const LatentVideo& x_s, double s, const Conditioning& cond, const CfgWeights& w) {
    if (!(w.w_ref >= 0.0) || !(w.w_motion >= 0.0)) throw ValidationError("cfg weights must be non-negative");
    const auto vu = model.predict_velocity(x_s, s, cond, Drop::Both);
    const auto vr = model.predict_velocity(x_s, s, cond, Drop::Motion);
    const auto vf = model.predict_velocity(x_s, s, cond, Drop::Keep);
    return {combine_cfg(vu.latent, vr.latent, vf.latent, w)};
}

// --- checkpoints --------------------------------------------------------------

void DiT::save(const std::filesystem::path& dir, int stage, long step) const {
    store_.save(dir, {{"config", model_config_to_json(cfg_)}, {"stage", stage}, {"step", step}});
}

std::unique_ptr<DiT> DiT::load(const std::filesystem::path& dir, json* manifest) {
    std::ifstream in(dir / "manifest.json");
    if (!in) throw FormatError("no model checkpoint in " + dir.string());
    json m;
    try {
        m = json::parse(in);
    } catch (const json::exception& e) {
        throw FormatError(dir.string() + "/manifest.json: " + e.what());
    }
    if (!m.contains("config")) throw FormatError(dir.string() + ": checkpoint manifest lacks a model config");
    auto model = std::make_unique<DiT>(model_config_from_json(m.at("config")));
    model->store_.load(dir, model->store_.groups());
    if (manifest) *manifest = m;
    return model;
}

}  // namespace animator
