#pragma once

#include <cstddef>

#include "animator/tensor.hpp"

namespace animator {

struct CodecConfig {
    std::size_t spatial = 4;   // f_s
    std::size_t temporal = 1;  // f_t; the first frame is kept whole when > 1

    std::size_t latent_channels() const { return 3 * spatial * spatial * temporal; }
    std::size_t latent_frames(std::size_t pixel_frames) const { return 1 + (pixel_frames - 1) / temporal; }
    std::size_t pixel_frames(std::size_t latent_frames) const { return 1 + (latent_frames - 1) * temporal; }
};

struct PixelVideo {
    Tensor frames;  // T x H x W x 3, values in [0,1]
    double fps = 24.0;

    std::size_t num_frames() const { return frames.dim(0); }
    std::size_t height() const { return frames.dim(1); }
    std::size_t width() const { return frames.dim(2); }
};

struct LatentVideo {
    Tensor latent;  // t_lat x h x w x c_lat

    std::size_t num_frames() const { return latent.dim(0); }
    std::size_t height() const { return latent.dim(1); }
    std::size_t width() const { return latent.dim(2); }
    std::size_t channels() const { return latent.dim(3); }
};

// Lossless space(-time)-to-channel rearrangement standing in for a learned 3D VAE.
// Latent channel index is ((dt * f_s + dy) * f_s + dx) * 3 + rgb; when f_t > 1 the
// first latent frame holds pixel frame 0 replicated over dt.
LatentVideo encode_video(const PixelVideo& video, const CodecConfig& cfg = {});
PixelVideo decode_video(const LatentVideo& latent, const CodecConfig& cfg = {}, double fps = 24.0);

// Single-image helpers (a reference image is a one-frame video).
Tensor encode_image(const Tensor& image, const CodecConfig& cfg = {});  // h x w x c_lat
Tensor decode_image(const Tensor& latent_frame, const CodecConfig& cfg = {});

}  // namespace animator
