#include "animator/face_renderer.hpp"

#include <algorithm>
#include <array>
#include <cmath>
#include <string>

#include "animator/error.hpp"

namespace animator {
namespace {

using Color = std::array<double, 3>;

double clamp01(double v) { return std::clamp(v, 0.0, 1.0); }

Color lerp(const Color& a, const Color& b, double t) {
    return {a[0] + (b[0] - a[0]) * t, a[1] + (b[1] - a[1]) * t, a[2] + (b[2] - a[2]) * t};
}

// Approximate one-pixel-wide antialiased coverage of an axis-aligned ellipse.
double ellipse_cover(double x, double y, double cx, double cy, double ax, double ay) {
    const double dx = (x - cx) / ax, dy = (y - cy) / ay;
    const double d = (std::sqrt(dx * dx + dy * dy) - 1.0) * std::min(ax, ay);
    return clamp01(0.5 - d);
}

struct Layout {
    double cx, cy, ax, ay;
    Color skin, hair;
    double eye_y, eye_dx, eye_h;
    double brow_y;
    double mouth_y, mouth_w, mouth_h, lift;
};

Layout layout_of(const ExpressionFactors& f, double s) {
    const auto& e = f.expression;
    const auto& id = f.identity;
    Layout l{};
    l.cx = 112.0 * s;
    l.cy = 118.0 * s;
    l.ax = (62.0 + 22.0 * id[0]) * s;
    l.ay = (76.0 + 20.0 * id[1]) * s;
    l.skin = lerp({0.96, 0.82, 0.68}, {0.42, 0.28, 0.18}, id[2]);
    l.hair = lerp({0.12, 0.07, 0.03}, {0.92, 0.78, 0.32}, id[3]);
    l.eye_y = l.cy - 0.18 * l.ay;
    l.eye_dx = (0.28 + 0.16 * id[3]) * l.ax;
    l.eye_h = (2.0 + 16.0 * e[2]) * s;
    l.brow_y = l.eye_y - (10.0 + 20.0 * e[3]) * s;
    l.mouth_y = l.cy + 0.42 * l.ay;
    l.mouth_w = 0.45 * l.ax;
    l.mouth_h = (2.0 + 28.0 * e[0]) * s;
    l.lift = (2.0 * e[1] - 1.0) * 16.0 * s;
    return l;
}

}  // namespace

void validate_factors(const ExpressionFactors& f, const FaceGenConfig& cfg) {
    if (f.expression.size() != cfg.expression_dims || f.identity.size() != cfg.identity_dims) {
        throw ShapeError("face factors need " + std::to_string(cfg.expression_dims) + " expression and " +
                         std::to_string(cfg.identity_dims) + " identity entries");
    }
    if (cfg.expression_dims != 4 || cfg.identity_dims != 4) {
        throw ValidationError("the cartoon face renderer is defined for 4 expression and 4 identity factors");
    }
    for (const auto* v : {&f.expression, &f.identity}) {
        for (double x : *v) {
            if (!std::isfinite(x) || x < 0.0 || x > 1.0) {
                throw ValidationError("face factor " + std::to_string(x) + " outside [0, 1]");
            }
        }
    }
}

std::vector<double> sample_expression(std::mt19937_64& rng, const FaceGenConfig& cfg) {
    std::uniform_real_distribution<double> u(0.0, 1.0);
    std::vector<double> e(cfg.expression_dims);
    for (auto& x : e) x = u(rng);
    return e;
}

ExpressionFactors sample_face_factors(std::mt19937_64& rng, const FaceGenConfig& cfg) {
    std::uniform_real_distribution<double> u(0.0, 1.0);
    ExpressionFactors f;
    f.expression = sample_expression(rng, cfg);
    f.identity.resize(cfg.identity_dims);
    for (auto& x : f.identity) x = u(rng);
    return f;
}

Tensor render_face(const ExpressionFactors& f, const FaceGenConfig& cfg) {
    validate_factors(f, cfg);
    if (cfg.size < 16) throw ValidationError("face size must be at least 16");
    const std::size_t n = cfg.size;
    const double s = static_cast<double>(n) / 224.0;
    const Layout l = layout_of(f, s);
    const Color bg{0.15, 0.15, 0.18};
    const Color eye{0.04, 0.04, 0.06};
    const Color brow{0.18, 0.1, 0.05};
    const Color mouth{0.45, 0.05, 0.08};

    Tensor out({3, n, n});
    const std::size_t plane = n * n;
    for (std::size_t py = 0; py < n; ++py) {
        for (std::size_t px = 0; px < n; ++px) {
            const double x = static_cast<double>(px) + 0.5, y = static_cast<double>(py) + 0.5;
            Color c = bg;
            c = lerp(c, l.skin, ellipse_cover(x, y, l.cx, l.cy, l.ax, l.ay));

            // hair cap: top slice of the head ellipse
            const double cap = ellipse_cover(x, y, l.cx, l.cy, l.ax, l.ay) * clamp01((l.cy - 0.62 * l.ay) - y + 0.5);
            c = lerp(c, l.hair, cap);

            for (double side : {-1.0, 1.0}) {
                const double ex = l.cx + side * l.eye_dx;
                c = lerp(c, eye, ellipse_cover(x, y, ex, l.eye_y, 12.0 * s, 0.5 * l.eye_h + 0.5));
                const double bx = clamp01(14.0 * s - std::fabs(x - ex) + 0.5);
                const double by = clamp01(2.5 * s - std::fabs(y - l.brow_y) + 0.5);
                c = lerp(c, brow, bx * by);
            }

            const double u = (x - l.cx) / l.mouth_w;
            if (std::fabs(u) < 1.2) {
                const double centre = l.mouth_y - l.lift * u * u;
                const double half = 1.5 * s + 0.5 * l.mouth_h * std::sqrt(std::max(0.0, 1.0 - u * u));
                const double mx = clamp01(l.mouth_w - std::fabs(x - l.cx) + 0.5);
                const double my = clamp01(half - std::fabs(y - centre) + 0.5);
                c = lerp(c, mouth, mx * my);
            }

            const std::size_t o = py * n + px;
            for (std::size_t ch = 0; ch < 3; ++ch) out[ch * plane + o] = static_cast<float>(clamp01(c[ch]));
        }
    }
    return out;
}

Tensor render_faces(const std::vector<ExpressionFactors>& faces, const FaceGenConfig& cfg) {
    std::vector<Tensor> parts;
    parts.reserve(faces.size());
    for (const auto& f : faces) {
        auto t = render_face(f, cfg);
        parts.push_back(t.reshaped({1, 3, cfg.size, cfg.size}));
    }
    if (parts.empty()) return Tensor({0, 3, cfg.size, cfg.size});
    return concat0(parts);
}

}  // namespace animator
