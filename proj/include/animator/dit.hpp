#pragma once

#include <atomic>
#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <functional>
#include <memory>
#include <optional>
#include <random>
#include <string>
#include <vector>

#include <json.hpp>

#include "animator/face_motion.hpp"
#include "animator/guidance_render.hpp"
#include "animator/latent_codec.hpp"
#include "animator/layers.hpp"

namespace animator {

struct ModelConfig {
    std::size_t c_model = 64;
    std::size_t n_blocks = 2;
    std::size_t n_heads = 4;
    std::size_t c_face = 64;
    std::size_t c_pose = 16;
    std::size_t f_s = 4;
    std::size_t f_t = 1;
    std::size_t patch = 1;
    std::size_t mlp_ratio = 4;
    std::size_t pose_width = 16;
    std::size_t time_width = 64;
    double ref_time = 1.0;  // flow time given to reference tokens
    FaceEncoderConfig face;

    CodecConfig codec() const { return {f_s, f_t}; }
    std::size_t latent_channels() const { return codec().latent_channels(); }
};

void validate_model_config(const ModelConfig& cfg);
nlohmann::json model_config_to_json(const ModelConfig& cfg);
ModelConfig model_config_from_json(const nlohmann::json& j);

// Tokens of t frames, each with hw spatial tokens, stored as (t*hw) x c rows.
struct TokenGrid {
    nn::Var tokens;
    std::size_t t = 0;
    std::size_t hw = 0;

    std::size_t width() const { return static_cast<std::size_t>(tokens->cols()); }
};

// t_lat x h x w x c_pose.
struct PoseFeature {
    Tensor feature;
};

struct FlowSample {
    Tensor x0;
    Tensor x1;
    double s = 0.0;

    Tensor x_s() const;
    Tensor v_target() const;
};

FlowSample make_flow_sample(const Tensor& x1, double s, std::mt19937_64& rng);

enum class Drop { Keep, Ref, Motion, Both };
const char* drop_name(Drop d);
inline bool drops_ref(Drop d) { return d == Drop::Ref || d == Drop::Both; }
inline bool drops_motion(Drop d) { return d == Drop::Motion || d == Drop::Both; }

// Everything the denoiser is conditioned on for one segment. Face input is
// absent in stage 1; when present it is either raw crops (run through the
// model's face encoder) or precomputed tokens.
struct Conditioning {
    Tensor pose;         // T x H x W x 6 canvases of the noised frames
    Tensor ref_latents;  // t_R x h x w x c_lat
    Tensor ref_pose;     // t_R x H x W x 6 canvases of the reference frames
    std::optional<Tensor> face_crops;   // T x 3 x 224 x 224
    std::optional<Tensor> face_tokens;  // T x c_face

    bool has_face() const { return face_crops.has_value() || face_tokens.has_value(); }
};

class DiT {
public:
    explicit DiT(const ModelConfig& cfg, std::uint64_t seed = 0);

    const ModelConfig& config() const { return cfg_; }
    nn::ParamStore& params() { return store_; }
    const nn::ParamStore& params() const { return store_; }
    const FaceEncoder& face_encoder() const { return face_encoder_; }

    // Canvas stack T x H x W x 6 (H = h * f_s) -> (t_lat*h*w) x c_pose.
    nn::Var pose_features(const Tensor& canvases) const;
    PoseFeature encode_pose(const std::vector<GuidanceCanvas>& canvases) const;
    PoseFeature encode_pose(const Tensor& canvases) const;

    // Channel-concatenate latent and pose, patchify, project to c_model. The
    // forward pass adds the positional encoding afterwards.
    TokenGrid assemble_tokens(const nn::Var& latent_rows, const nn::Var& pose_rows, std::size_t t, std::size_t h,
                              std::size_t w) const;
    TokenGrid assemble_noise_tokens(const LatentVideo& x_s, const PoseFeature& pose) const;

    std::pair<TokenGrid, TokenGrid> joint_self_attention(std::size_t block, const TokenGrid& ref,
                                                         const TokenGrid& noise) const;
    TokenGrid ref_cross_attention(std::size_t block, const TokenGrid& ref, const TokenGrid& noise,
                                  const std::vector<bool>* ref_frame_mask = nullptr) const;
    // face: (pixel frames) x c_model after the face MLP.
    TokenGrid face_cross_attention(std::size_t block, const TokenGrid& noise, const nn::Var& face) const;

    // Face tokens T x c_face (crops are encoded first) -> T x c_model.
    nn::Var face_context(const Conditioning& cond, Drop drop, std::size_t pixel_frames) const;

    // Full forward pass; returns (t_lat*h*w) x c_lat rows.
    nn::Var forward(const Tensor& x_s, double s, const Conditioning& cond, Drop drop) const;
    LatentVideo predict_velocity(const LatentVideo& x_s, double s, const Conditioning& cond, Drop drop) const;

    // Latent frame i attends to face tokens [begin, end).
    std::pair<std::size_t, std::size_t> face_window(std::size_t latent_frame) const;

    std::size_t face_branch_calls() const { return face_calls_.load(); }
    void reset_face_branch_calls() { face_calls_ = 0; }

    // Factorised sinusoidal (time, y, x) encoding; with shared_time every frame
    // sits at time_offset.
    nn::Var positional(std::size_t t, std::size_t hp, std::size_t wp, double time_offset, bool shared_time) const;

    // Flattened time-embedding used for the given flow time (1 x c_model).
    nn::Var time_embedding(double s) const;

    void save(const std::filesystem::path& dir, int stage, long step) const;
    static std::unique_ptr<DiT> load(const std::filesystem::path& dir, nlohmann::json* manifest = nullptr);

private:
    struct Attention {
        nn::Linear q, k, v, out;
    };
    struct Block {
        nn::Linear ada;  // time embedding -> 8 modulation vectors
        Attention self_attn;
        Attention ref_attn;
        Attention face_attn;
        nn::Linear mlp_in, mlp_out;
    };

    nn::Var modulation(std::size_t block, const nn::Var& temb) const;
    void check_block(std::size_t block) const;

    ModelConfig cfg_;
    nn::ParamStore store_;
    FaceEncoder face_encoder_;
    std::vector<nn::Conv2d> pose_convs_;
    nn::Conv2d pose_out_;
    nn::Linear patch_embed_;
    nn::Linear time_in_, time_out_;
    nn::Linear face_mlp_;
    nn::Parameter* null_ref_ = nullptr;
    nn::Parameter* null_pose_ = nullptr;
    nn::Parameter* null_face_ = nullptr;
    std::vector<Block> blocks_;
    nn::Linear final_ada_, final_out_;
    mutable std::atomic<std::size_t> face_calls_{0};
};

LatentVideo predict_velocity(const DiT& model, const LatentVideo& x_s, double s, const Conditioning& cond, Drop drop);

using VelocityFn = std::function<Tensor(const Tensor& x_s, double s)>;

// Same objective for an arbitrary velocity field (analytic oracles).
double flow_matching_loss(const VelocityFn& v, const std::vector<FlowSample>& batch);

// Mean squared error between predicted and target velocity over the batch.
// Returns a graph node so callers can backpropagate.
nn::Var flow_matching_loss(const DiT& model, const std::vector<FlowSample>& batch,
                           const std::vector<const Conditioning*>& cond, const std::vector<Drop>& drops);

struct CfgWeights {
    double w_ref = 2.5;
    double w_motion = 2.5;
};

// v_u + w_ref (v_ref - v_u) + w_motion (v_full - v_ref).
Tensor combine_cfg(const Tensor& v_uncond, const Tensor& v_ref, const Tensor& v_full, const CfgWeights& w);
LatentVideo cfg_velocity(const DiT& model, const LatentVideo& x_s, double s, const Conditioning& cond,
                         const CfgWeights& w);

// Rows (t*h*w) x c <-> tensors t x h x w x c.
nn::Mat tensor_rows(const Tensor& t);
Tensor rows_tensor(const nn::Mat& m, Shape shape);

}  // namespace animator
