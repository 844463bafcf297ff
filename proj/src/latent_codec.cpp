#include "animator/latent_codec.hpp"

#include "animator/error.hpp"

namespace animator {

namespace {

void check_cfg(const CodecConfig& cfg) {
    if (cfg.spatial == 0 || cfg.temporal == 0) throw ShapeError("codec factors must be positive");
}

// Pixel frame feeding latent frame `lt` at temporal sub-index `dt`.
std::size_t source_frame(std::size_t lt, std::size_t dt, const CodecConfig& cfg) {
    return lt == 0 ? 0 : 1 + (lt - 1) * cfg.temporal + dt;
}

}  // namespace

LatentVideo encode_video(const PixelVideo& video, const CodecConfig& cfg) {
    check_cfg(cfg);
    const auto& px = video.frames;
    if (px.rank() != 4 || px.dim(3) != 3 || px.dim(0) == 0) {
        throw ShapeError("pixel video must be T x H x W x 3 with T >= 1, got " + shape_str(px.shape()));
    }
    const std::size_t T = px.dim(0), H = px.dim(1), W = px.dim(2);
    const std::size_t fs = cfg.spatial, ft = cfg.temporal;
    if (H % fs != 0 || W % fs != 0) throw ShapeError("H, W must be divisible by spatial factor " + std::to_string(fs));
    if ((T - 1) % ft != 0) throw ShapeError("frame count must be 1 mod temporal factor " + std::to_string(ft));

    const std::size_t t = cfg.latent_frames(T), h = H / fs, w = W / fs, c = cfg.latent_channels();
    Tensor out({t, h, w, c});
    for (std::size_t lt = 0; lt < t; ++lt)
        for (std::size_t y = 0; y < h; ++y)
            for (std::size_t x = 0; x < w; ++x) {
                float* dst = &out[((lt * h + y) * w + x) * c];
                for (std::size_t dt = 0; dt < ft; ++dt) {
                    const std::size_t src_t = source_frame(lt, dt, cfg);
                    for (std::size_t dy = 0; dy < fs; ++dy)
                        for (std::size_t dx = 0; dx < fs; ++dx) {
                            const float* src = &px[((src_t * H + y * fs + dy) * W + x * fs + dx) * 3];
                            float* d = dst + ((dt * fs + dy) * fs + dx) * 3;
                            d[0] = src[0];
                            d[1] = src[1];
                            d[2] = src[2];
                        }
                }
            }
    return {std::move(out)};
}

PixelVideo decode_video(const LatentVideo& latent, const CodecConfig& cfg, double fps) {
    check_cfg(cfg);
    const auto& lat = latent.latent;
    if (lat.rank() != 4 || lat.dim(0) == 0 || lat.dim(3) != cfg.latent_channels()) {
        throw ShapeError("latent " + shape_str(lat.shape()) + " inconsistent with codec (c_lat=" +
                         std::to_string(cfg.latent_channels()) + ")");
    }
    const std::size_t t = lat.dim(0), h = lat.dim(1), w = lat.dim(2), c = lat.dim(3);
    const std::size_t fs = cfg.spatial, ft = cfg.temporal;
    const std::size_t T = cfg.pixel_frames(t), H = h * fs, W = w * fs;
    Tensor out({T, H, W, 3});
    for (std::size_t lt = 0; lt < t; ++lt)
        for (std::size_t y = 0; y < h; ++y)
            for (std::size_t x = 0; x < w; ++x) {
                const float* src = &lat[((lt * h + y) * w + x) * c];
                // Frame 0 is replicated across dt; the first copy is authoritative.
                const std::size_t dt_count = lt == 0 ? 1 : ft;
                for (std::size_t dt = 0; dt < dt_count; ++dt) {
                    const std::size_t dst_t = source_frame(lt, dt, cfg);
                    for (std::size_t dy = 0; dy < fs; ++dy)
                        for (std::size_t dx = 0; dx < fs; ++dx) {
                            const float* s = src + ((dt * fs + dy) * fs + dx) * 3;
                            float* d = &out[((dst_t * H + y * fs + dy) * W + x * fs + dx) * 3];
                            d[0] = s[0];
                            d[1] = s[1];
                            d[2] = s[2];
                        }
                }
            }
    return {std::move(out), fps};
}

Tensor encode_image(const Tensor& image, const CodecConfig& cfg) {
    if (image.rank() != 3) throw ShapeError("image must be H x W x 3, got " + shape_str(image.shape()));
    CodecConfig single = cfg;
    PixelVideo v{image.reshaped({1, image.dim(0), image.dim(1), image.dim(2)})};
    auto lat = encode_video(v, single).latent;
    return lat.reshaped({lat.dim(1), lat.dim(2), lat.dim(3)});
}

Tensor decode_image(const Tensor& latent_frame, const CodecConfig& cfg) {
    if (latent_frame.rank() != 3) throw ShapeError("latent frame must be h x w x c, got " + shape_str(latent_frame.shape()));
    LatentVideo l{latent_frame.reshaped({1, latent_frame.dim(0), latent_frame.dim(1), latent_frame.dim(2)})};
    auto px = decode_video(l, cfg).frames;
    return px.reshaped({px.dim(1), px.dim(2), px.dim(3)});
}

}  // namespace animator
