#include <doctest.h>

#include <cmath>
#include <numbers>
#include <set>

#include "animator/error.hpp"
#include "animator/guidance_render.hpp"
#include "pose_fixtures.hpp"

using namespace animator;

namespace {

std::size_t colored_pixels(const Tensor& img) {
    std::size_t n = 0;
    for (std::size_t p = 0; p < img.dim(0) * img.dim(1); ++p) {
        if (img[p * 3] > 0 || img[p * 3 + 1] > 0 || img[p * 3 + 2] > 0) ++n;
    }
    return n;
}

Vec2 colored_centroid(const Tensor& img) {
    Vec2 c = Vec2::Zero();
    double n = 0;
    for (std::size_t y = 0; y < img.dim(0); ++y)
        for (std::size_t x = 0; x < img.dim(1); ++x) {
            const float* p = &img[(y * img.dim(1) + x) * 3];
            if (p[0] > 0 || p[1] > 0 || p[2] > 0) {
                c += Vec2(static_cast<double>(x), static_cast<double>(y));
                n += 1;
            }
        }
    return c / n;
}

// DDA enumeration of the pixels a one-pixel line between integer endpoints covers.
std::size_t dda_pixel_count(Vec2 a, Vec2 b) {
    const double steps = std::max(std::fabs(b.x() - a.x()), std::fabs(b.y() - a.y()));
    std::set<std::pair<long, long>> px;
    for (int i = 0; i <= static_cast<int>(steps); ++i) {
        const Vec2 p = a + (b - a) * (i / std::max(steps, 1.0));
        px.insert({std::lround(p.x()), std::lround(p.y())});
    }
    return px.size();
}

const KinematicTree& chain2() {
    static const KinematicTree t({"top", "bottom"}, {-1, 0});
    return t;
}

}  // namespace

TEST_CASE("orientation_color") {
    const double pi = std::numbers::pi;
    CHECK(orientation_color(0, 0, 0) == Rgb{0.5, 0.5, 0.5});
    CHECK(orientation_color(pi, -pi, 0) == Rgb{1.0, 0.0, 0.5});

    std::mt19937_64 rng(31);
    std::uniform_real_distribution<double> ang(-pi, pi);
    std::set<Rgb> colors;
    for (int i = 0; i < 100; ++i) {
        const double y = ang(rng), p = ang(rng), r = ang(rng);
        const Rgb c = orientation_color(y, p, r);
        colors.insert(c);
        // the linear map inverts exactly
        CHECK(std::fabs(c[0] * 2 * pi - pi - y) < 1e-12);
        CHECK(std::fabs(c[1] * 2 * pi - pi - p) < 1e-12);
        CHECK(std::fabs(c[2] * 2 * pi - pi - r) < 1e-12);
    }
    CHECK(colors.size() == 100);
}

TEST_CASE("rasterize_skeleton: off-screen pose renders black") {
    const auto& tree = KinematicTree::standard17();
    auto cam = testing::front_camera(60, Vec2(5000, 5000));
    const auto img = rasterize_skeleton(testing::standard_apose(), tree, cam, RasterSpec::with_default_palette(64, 64));
    CHECK(colored_pixels(img) == 0);
}

TEST_CASE("rasterize_skeleton: single vertical bone") {
    Camera cam;
    cam.focal = 32;
    cam.principal_point = Vec2(32, 32);
    JointSet j{{Vec3(0, -0.5, 1), Vec3(0, 0.5, 1)}};
    const RasterSpec spec{64, 64, 1.0, {Rgb{1.0, 0.0, 0.0}}};
    const auto img = rasterize_skeleton(j, chain2(), cam, spec);
    const Vec2 a = project_point(j.positions[0], cam), b = project_point(j.positions[1], cam);
    const double length = (b - a).norm();
    const auto count = colored_pixels(img);
    CHECK(count >= 0.8 * length);
    CHECK(count <= 1.5 * length);
    CHECK(count == doctest::Approx(static_cast<double>(dda_pixel_count(a, b))).epsilon(0.1));
    // one column only, in palette colour
    for (std::size_t y = 0; y < 64; ++y)
        for (std::size_t x = 0; x < 64; ++x) {
            const float* p = &img[(y * 64 + x) * 3];
            if (p[0] > 0) {
                CHECK(x == 32);
                CHECK(p[1] == 0.0f);
            }
        }
}

TEST_CASE("rasterize_skeleton: doubling resolution doubles the centroid") {
    const auto& tree = KinematicTree::standard17();
    const auto j = testing::standard_apose();
    const auto lo = rasterize_skeleton(j, tree, testing::front_camera(60, Vec2(32, 32)), RasterSpec::with_default_palette(64, 64));
    const auto hi = rasterize_skeleton(j, tree, testing::front_camera(120, Vec2(64, 64)), RasterSpec::with_default_palette(128, 128));
    CHECK((colored_centroid(hi) - 2.0 * colored_centroid(lo)).norm() < 1.0);
}

TEST_CASE("rasterize_skeleton: nearer bones overwrite farther ones") {
    const KinematicTree cross({"c", "a", "b"}, {-1, 0, 0});
    Camera cam;
    cam.focal = 32;
    cam.principal_point = Vec2(32, 32);
    // bone 0 (c->a) horizontal and far, bone 1 (c->b) vertical and near; they cross at the centre pixel
    JointSet j{{Vec3(0, 0, 2), Vec3(1, 0, 2), Vec3(0, 1, 1.5)}};
    j.positions[0] = Vec3(0, 0, 1.8);
    const RasterSpec spec{64, 64, 1.0, {Rgb{1, 0, 0}, Rgb{0, 0, 1}}};
    const auto img = rasterize_skeleton(j, cross, cam, spec);
    const Vec2 c = project_point(j.positions[0], cam);
    const float* p = &img[(static_cast<std::size_t>(std::lround(c.y())) * 64 + static_cast<std::size_t>(std::lround(c.x()))) * 3];
    CHECK(p[2] > p[0]);
}

TEST_CASE("rasterize_skeleton: joint behind the camera") {
    const auto& tree = KinematicTree::standard17();
    auto j = testing::standard_apose();
    j.positions[tree.index_of("l_wrist")] = Vec3(0, 1, -10);
    CHECK_THROWS_AS(rasterize_skeleton(j, tree, testing::front_camera(), RasterSpec::with_default_palette(64, 64)), ProjectionError);
}

TEST_CASE("render_head_sphere") {
    Camera cam;
    cam.focal = 100;
    cam.principal_point = Vec2(32, 32);
    const RasterSpec spec = RasterSpec::with_default_palette(64, 64);
    HeadPose h;
    h.center = Vec3(0, 0, 2);
    h.radius = 0.6;  // projects to radius 30 px

    SUBCASE("disc of the reference radius, not the driving head's own size") {
        CHECK(projected_head_radius(h, cam) == doctest::Approx(30.0));
        const auto img = render_head_sphere(h, cam, 10.0, spec);
        const double area = std::numbers::pi * 100.0;
        const auto count = static_cast<double>(colored_pixels(img));
        CHECK(count >= 0.95 * area);
        CHECK(count <= 1.05 * area);
        const float* centre = &img[(32 * 64 + 32) * 3];
        CHECK(centre[0] == 0.5f);
        CHECK(centre[1] == 0.5f);
        CHECK(centre[2] == 0.5f);
        CHECK(img[(32 * 64 + 32 + 12) * 3] == 0.0f);
    }
    SUBCASE("orientation colour") {
        h.yaw = std::numbers::pi;
        const auto img = render_head_sphere(h, cam, 10.0, spec);
        const float* centre = &img[(32 * 64 + 32) * 3];
        CHECK(centre[0] == 1.0f);
        CHECK(centre[1] == 0.5f);
        CHECK(centre[2] == 0.5f);
    }
    SUBCASE("centre behind camera") {
        h.center = Vec3(0, 0, -1);
        CHECK_THROWS_AS(render_head_sphere(h, cam, 10.0, spec), ProjectionError);
    }
}

TEST_CASE("build_canvas") {
    const auto& tree = KinematicTree::standard17();
    std::mt19937_64 rng(32);
    const auto apose = testing::standard_apose();
    std::vector<JointSet> frames;
    for (int f = 0; f < 3; ++f) frames.push_back(testing::random_articulation(apose, tree, rng));
    auto track = testing::make_track(frames, testing::front_camera());
    track.frames[1].head.yaw = 0.7;
    const auto spec = RasterSpec::with_default_palette(64, 48);

    const auto canvases = build_canvas(track, 6.0, spec);
    REQUIRE(canvases.size() == 3);
    for (const auto& c : canvases) {
        CHECK(c.combined.shape() == Shape{48, 64, 6});
        for (std::size_t p = 0; p < 48 * 64; ++p)
            for (std::size_t k = 0; k < 3; ++k) {
                CHECK(c.combined[p * 6 + k] == c.skeleton[p * 3 + k]);
                CHECK(c.combined[p * 6 + 3 + k] == c.sphere[p * 3 + k]);
            }
        for (float v : c.combined.vec()) CHECK((v >= 0.0f && v <= 1.0f));
    }

    SUBCASE("frame-constant track gives identical canvases") {
        auto still = testing::make_track({apose, apose, apose}, testing::front_camera());
        const auto cs = build_canvas(still, 6.0, spec);
        CHECK(cs[0].combined == cs[1].combined);
        CHECK(cs[1].combined == cs[2].combined);
    }
    SUBCASE("reversed track gives reversed canvases") {
        auto rev = track;
        std::reverse(rev.frames.begin(), rev.frames.end());
        const auto cs = build_canvas(rev, 6.0, spec);
        for (std::size_t f = 0; f < 3; ++f) CHECK(cs[f].combined == canvases[2 - f].combined);
    }
    SUBCASE("errors carry the frame index") {
        auto bad = track;
        bad.camera.translation.z() = -2.0;
        CHECK_THROWS_AS(build_canvas(bad, 6.0, spec), ValidationError);
        try {
            auto bad_head = track;
            bad_head.frames[2].head.center = Vec3(0, 0, -100);
            build_canvas(bad_head, 6.0, spec);
            FAIL("expected projection error");
        } catch (const ProjectionError& e) {
            CHECK(std::string(e.what()).find("frame 2") != std::string::npos);
        }
    }
}

TEST_CASE("property: skeleton image independent of joint declaration order") {
    // Same geometry with joints declared in a different order yields the same image
    // once palettes are matched bone-for-bone.
    const KinematicTree a({"r", "x", "y"}, {-1, 0, 0});
    const KinematicTree b({"y", "r", "x"}, {1, -1, 1});
    Camera cam;
    cam.focal = 30;
    cam.principal_point = Vec2(32, 32);
    JointSet ja{{Vec3(0, 0, 2), Vec3(1, 0.3, 2.2), Vec3(-0.5, 1, 1.9)}};
    JointSet jb{{ja.positions[2], ja.positions[0], ja.positions[1]}};
    const Rgb cx{1, 0, 0}, cy{0, 1, 0};
    // a: bones ordered by child index -> (r->x), (r->y); b: (r->y), (r->x)
    const auto ia = rasterize_skeleton(ja, a, cam, RasterSpec{64, 64, 1.5, {cx, cy}});
    const auto ib = rasterize_skeleton(jb, b, cam, RasterSpec{64, 64, 1.5, {cy, cx}});
    CHECK(ia == ib);
}

TEST_CASE("rendering is deterministic") {
    const auto& tree = KinematicTree::standard17();
    const auto j = testing::standard_apose();
    const auto spec = RasterSpec::with_default_palette(64, 64, 2.0);
    CHECK(rasterize_skeleton(j, tree, testing::front_camera(), spec) == rasterize_skeleton(j, tree, testing::front_camera(), spec));
}

TEST_CASE("raster spec validation") {
    CHECK_THROWS_AS(validate_raster_spec(RasterSpec{0, 4, 1.0, RasterSpec::default_palette(16)}, 16), ValidationError);
    CHECK_THROWS_AS(validate_raster_spec(RasterSpec{4, 4, 0.5, RasterSpec::default_palette(16)}, 16), ValidationError);
    CHECK_THROWS_AS(validate_raster_spec(RasterSpec{4, 4, 1.0, RasterSpec::default_palette(15)}, 16), ValidationError);
    CHECK_THROWS_AS(validate_raster_spec(RasterSpec{4, 4, 1.0, {Rgb{1, 0, 0}, Rgb{1, 0, 0}}}, 2), ValidationError);
    CHECK_NOTHROW(validate_raster_spec(RasterSpec::with_default_palette(4, 4), 16));
}
