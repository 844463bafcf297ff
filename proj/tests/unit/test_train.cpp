#include <doctest.h>

#include <algorithm>
#include <cmath>
#include <filesystem>
#include <fstream>
#include <map>
#include <numeric>

#include "animator/error.hpp"
#include "animator/train.hpp"
#include "dit_fixtures.hpp"
#include "select_oracle.hpp"

using namespace animator;
using animator::testing::tiny_config;

namespace {

std::vector<Sample> tiny_world(std::size_t n, std::uint64_t seed) {
    std::vector<Sample> out;
    std::mt19937_64 rng(seed);
    DatasetConfig dc;
    dc.world.width = dc.world.height = 16;
    dc.max_frames = 11;
    for (std::size_t i = 0; i < n; ++i) out.push_back(generate_sample(draw_world(dc, rng), rng()));
    return out;
}

std::filesystem::path scratch(const std::string& name) {
    auto p = std::filesystem::temp_directory_path() / ("animator_train_" + name);
    std::filesystem::remove_all(p);
    return p;
}

}  // namespace

TEST_CASE("select_reference_frames worked examples") {
    std::mt19937_64 rng(1);
    auto a = select_reference_frames({-0.5, 0.0, 0.5}, false, rng);
    CHECK(a.indices == std::vector<std::size_t>{0, 2, 1});
    CHECK(a.kinds == std::vector<RefKind>{RefKind::MinYaw, RefKind::MaxYaw, RefKind::MedianYaw});

    auto b = select_reference_frames({-3, -2, -1, 0, 1, 2, 3}, false, rng);
    CHECK(b.indices == std::vector<std::size_t>{0, 6, 3});

    auto c = select_reference_frames({0.2, 0.2, 0.2, 0.2, 0.2}, false, rng);
    CHECK(c.indices == std::vector<std::size_t>{0, 1, 2});

    auto d = select_reference_frames({0.1, 0.4}, false, rng);
    CHECK(d.indices == std::vector<std::size_t>{0, 1, 0});
    auto e = select_reference_frames({0.3}, true, rng);
    CHECK(e.indices == std::vector<std::size_t>{0, 0, 0, 0});
    CHECK(e.kinds.back() == RefKind::HalfBodyCrop);

    CHECK_THROWS_AS(select_reference_frames({}, false, rng), ValidationError);
}

TEST_CASE("select_reference_frames matches the brute-force oracle on every permutation") {
    const std::vector<std::vector<double>> fixtures = {
        {-0.9, -0.2, 0.1, 0.5, 1.3}, {0.4, 0.4, 0.4, 0.4, 0.4}, {0.0, 0.7, 0.0, 0.7, 0.3}, {1.0, 1.0, -1.0, 0.0, 0.0}};
    for (const auto& base : fixtures) {
        std::vector<std::size_t> perm(base.size());
        std::iota(perm.begin(), perm.end(), 0);
        do {
            std::vector<double> yaw;
            for (auto p : perm) yaw.push_back(base[p]);
            std::mt19937_64 rng(0);
            const auto got = select_reference_frames(yaw, false, rng);
            REQUIRE(got.indices == animator::testing::brute_force_selection(yaw));
        } while (std::next_permutation(perm.begin(), perm.end()));
    }
}

TEST_CASE("selection follows a permutation of distinct yaws") {
    std::mt19937_64 gen(5);
    std::uniform_real_distribution<double> u(-3.0, 3.0);
    for (int trial = 0; trial < 50; ++trial) {
        std::vector<double> yaw(3 + static_cast<std::size_t>(trial % 9));
        for (auto& y : yaw) y = u(gen);
        std::vector<std::size_t> perm(yaw.size());
        std::iota(perm.begin(), perm.end(), 0);
        std::shuffle(perm.begin(), perm.end(), gen);
        std::vector<double> permuted(yaw.size());
        for (std::size_t i = 0; i < yaw.size(); ++i) permuted[i] = yaw[perm[i]];
        std::mt19937_64 r1(9), r2(9);
        const auto a = select_reference_frames(yaw, false, r1);
        const auto b = select_reference_frames(permuted, false, r2);
        for (std::size_t k = 0; k < 3; ++k) CHECK(perm[b.indices[k]] == a.indices[k]);
    }
}

TEST_CASE("half-body pick is seeded and only for full-body clips") {
    const std::vector<double> yaw{0.3, -0.1, 0.8, 0.2, 0.0, -0.4};
    std::mt19937_64 r1(4), r2(4);
    const auto a = select_reference_frames(yaw, true, r1);
    const auto b = select_reference_frames(yaw, true, r2);
    CHECK(a.indices == b.indices);
    REQUIRE(a.indices.size() == 4);
    CHECK(a.kinds[3] == RefKind::HalfBodyCrop);
    std::map<std::size_t, int> seen;
    std::mt19937_64 r3(8);
    for (int i = 0; i < 600; ++i) ++seen[select_reference_frames(yaw, true, r3).indices[3]];
    CHECK(seen.size() == yaw.size());
}

TEST_CASE("stage group schedule") {
    CHECK(stage_trains_group(1, "blocks.0.self_attn"));
    CHECK_FALSE(stage_trains_group(1, "blocks.0.face_attn"));
    CHECK_FALSE(stage_trains_group(1, "face_encoder"));
    CHECK(stage_trains_group(2, "face_encoder"));
    CHECK(stage_trains_group(2, "face_mlp"));
    CHECK(stage_trains_group(2, "face_null"));
    CHECK(stage_trains_group(2, "blocks.1.face_attn"));
    CHECK_FALSE(stage_trains_group(2, "pose_encoder"));
    CHECK_FALSE(stage_trains_group(2, "blocks.1.ref_attn"));
    CHECK(stage_trains_group(3, "pose_encoder"));
    CHECK_THROWS_AS(stage_trains_group(4, "final"), ValidationError);
}

TEST_CASE("default schedule keeps the 2:2:3 ratio") {
    const auto desk = default_schedule();
    REQUIRE(desk.size() == 3);
    CHECK(desk[0].steps * 3 == desk[2].steps * 2);
    CHECK(desk[0].steps == desk[1].steps);
    CHECK(desk[0].steps + desk[1].steps + desk[2].steps == 7000);
    for (const auto& s : desk) CHECK(s.lr == 5e-6);
    CHECK_FALSE(desk[0].uses_face);
    CHECK(desk[1].uses_face);
    const auto paper = default_schedule(true);
    CHECK(paper[0].steps == 20000);
    CHECK(paper[2].steps == 30000);
}

TEST_CASE("conditioning dropout rates") {
    std::mt19937_64 rng(12);
    const int n = 10000;
    int ref = 0, motion = 0, both = 0;
    for (int i = 0; i < n; ++i) {
        const Drop d = draw_drop(0.1, 0.1, rng);
        ref += drops_ref(d);
        motion += drops_motion(d);
        both += d == Drop::Both;
    }
    const double sigma = std::sqrt(0.1 * 0.9 / n);
    CHECK(std::fabs(ref / double(n) - 0.1) < 3 * sigma);
    CHECK(std::fabs(motion / double(n) - 0.1) < 3 * sigma);
    const double sigma_b = std::sqrt(0.01 * 0.99 / n);
    CHECK(std::fabs(both / double(n) - 0.01) < 3 * sigma_b);
}

TEST_CASE("half-body crop keeps the projection consistent") {
    WorldConfig w;
    w.frames = 9;
    const auto s = generate_sample(w, 3);
    const Tensor img = s.video.frames.slice0(0, 1).reshaped({64, 64, 3});
    const auto& f = s.track.frames[0];
    const auto crop = half_body_crop(img, f, s.track.tree, s.track.camera);
    CHECK(crop.image.shape() == Shape{64, 64, 3});
    CHECK(crop.camera.focal == doctest::Approx(2 * s.track.camera.focal));
    // every crop pixel comes from the original pixel its centre maps back to
    const Vec2 p = project_point(f.head.center, s.track.camera);
    const Vec2 q = project_point(f.head.center, crop.camera);
    CHECK(q.x() == doctest::Approx(2 * p.x() + (crop.camera.principal_point.x() - 2 * s.track.camera.principal_point.x())));
    for (std::size_t k = 0; k < 3; ++k) {
        const auto qx = static_cast<std::size_t>(std::lround(q.x())), qy = static_cast<std::size_t>(std::lround(q.y()));
        const auto px = static_cast<std::size_t>(std::lround(p.x())), py = static_cast<std::size_t>(std::lround(p.y()));
        CHECK(crop.image[(qy * 64 + qx) * 3 + k] == img[(py * 64 + px) * 3 + k]);
    }
    CHECK_THROWS_AS(half_body_crop(Tensor({5, 4, 3}), f, s.track.tree, s.track.camera), ShapeError);
}

TEST_CASE("make_example shapes") {
    const auto cfg = tiny_config();
    const auto data = tiny_world(1, 3);
    TrainOptions opt;
    opt.clip_frames = 5;
    opt.p_single_ref = 0.0;
    std::mt19937_64 rng(1);
    const auto ex = make_example(data[0], cfg, opt, false, rng);
    CHECK(ex.x1.latent.shape() == Shape{5, 8, 8, cfg.latent_channels()});
    CHECK(ex.cond.pose.shape() == Shape{5, 16, 16, 6});
    const std::size_t refs = data[0].full_body ? 4 : 3;
    CHECK(ex.cond.ref_latents.dim(0) == refs);
    CHECK(ex.cond.ref_pose.dim(0) == refs);
    CHECK_FALSE(ex.cond.has_face());
    const auto with_face = make_example(data[0], cfg, opt, true, rng);
    REQUIRE(with_face.cond.face_crops.has_value());
    CHECK(with_face.cond.face_crops->shape() == Shape{5, 3, 224, 224});
}

TEST_CASE("stage 2 leaves every non-face group bit-identical; stage 1 never runs the face branch") {
    const auto cfg = tiny_config();
    const auto data = tiny_world(2, 7);
    DiT model(cfg, 3);
    TrainOptions opt;
    opt.lr = 1e-3;
    opt.clip_frames = 3;
    opt.warmup = 0;

    const auto s1 = run_stage(model, {1, 3, 5e-6, false}, data, opt);
    CHECK(s1.face_branch_calls == 0);
    CHECK(s1.losses.size() == 3);

    std::map<std::string, std::uint64_t> before;
    for (const auto& g : model.params().groups()) before[g] = model.params().group_hash(g);
    const auto s2 = run_stage(model, {2, 3, 5e-6, true}, data, opt);
    CHECK(s2.face_branch_calls > 0);
    bool face_moved = false;
    for (const auto& g : model.params().groups()) {
        const bool same = model.params().group_hash(g) == before[g];
        if (stage_trains_group(2, g)) {
            face_moved = face_moved || !same;
        } else {
            CHECK_MESSAGE(same, g);
        }
    }
    CHECK(face_moved);
}

TEST_CASE("checkpointed stages enforce order, lock and log") {
    const auto cfg = tiny_config();
    const auto data = tiny_world(1, 2);
    TrainOptions opt;
    opt.lr = 1e-3;
    opt.clip_frames = 3;
    const auto d1 = scratch("s1"), d2 = scratch("s2");

    CHECK_THROWS_AS(run_stage({2, 1, 5e-6, true}, data, opt, std::nullopt, d2, cfg), ValidationError);
    run_stage({1, 2, 5e-6, false}, data, opt, std::nullopt, d1, cfg);
    CHECK(checkpoint_stage(d1) == 1);
    CHECK_FALSE(std::filesystem::exists(d1 / ".lock"));
    CHECK_THROWS_AS(run_stage({3, 1, 5e-6, true}, data, opt, d1, d2), ValidationError);

    std::ifstream log(d1 / "metrics.jsonl");
    std::string line;
    int lines = 0;
    while (std::getline(log, line)) {
        const auto j = nlohmann::json::parse(line);
        CHECK(j.at("stage") == 1);
        CHECK(j.at("step") == lines);
        CHECK(std::isfinite(j.at("loss").get<double>()));
        CHECK(j.contains("lr"));
        ++lines;
    }
    CHECK(lines == 2);

    {
        DirectoryLock held(d2);
        CHECK_THROWS_AS(run_stage({2, 1, 5e-6, true}, data, opt, d1, d2), Error);
    }
    run_stage({2, 1, 5e-6, true}, data, opt, d1, d2);
    CHECK(checkpoint_stage(d2) == 2);
}

TEST_CASE("training is reproducible under a fixed seed") {
    const auto cfg = tiny_config();
    const auto data = tiny_world(2, 5);
    TrainOptions opt;
    opt.lr = 1e-3;
    opt.clip_frames = 3;
    opt.seed = 17;
    DiT a(cfg, 1), b(cfg, 1);
    const auto ra = run_stage(a, {1, 4, 5e-6, false}, data, opt);
    const auto rb = run_stage(b, {1, 4, 5e-6, false}, data, opt);
    CHECK(ra.losses == rb.losses);
    for (const auto& g : a.params().groups()) CHECK(a.params().group_hash(g) == b.params().group_hash(g));
}

TEST_CASE("learning-rate warmup and cosine decay; batched steps") {
    const auto cfg = tiny_config();
    const auto data = tiny_world(2, 5);
    TrainOptions opt;
    opt.lr = 1e-3;
    opt.clip_frames = 3;
    opt.warmup = 2;
    opt.final_lr_scale = 0.1;
    opt.batch = 2;
    const auto dir = scratch("sched");
    std::filesystem::create_directories(dir);
    DiT model(cfg, 1);
    run_stage(model, {1, 6, 5e-6, false}, data, opt, dir / "metrics.jsonl");

    std::ifstream log(dir / "metrics.jsonl");
    std::vector<double> lrs;
    for (std::string line; std::getline(log, line);) lrs.push_back(nlohmann::json::parse(line).at("lr").get<double>());
    REQUIRE(lrs.size() == 6);
    CHECK(lrs[0] == doctest::Approx(0.5e-3));
    CHECK(lrs[1] == doctest::Approx(1e-3));
    CHECK(lrs[2] == doctest::Approx(1e-3));
    for (std::size_t i = 2; i < 6; ++i) {
        const double t = (static_cast<double>(i) - 2.0) / 4.0;
        CHECK(lrs[i] == doctest::Approx(1e-3 * (0.1 + 0.45 * (1.0 + std::cos(std::acos(-1.0) * t)))));
    }
    for (std::size_t i = 3; i < 6; ++i) CHECK(lrs[i] < lrs[i - 1]);

    opt.batch = 0;
    CHECK_THROWS_AS(run_stage(model, {1, 1, 5e-6, false}, data, opt), ValidationError);
}
