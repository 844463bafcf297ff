#include <doctest.h>

#include <algorithm>
#include <numeric>
#include <random>

#include "animator/error.hpp"
#include "animator/face_motion.hpp"
#include "test_util.hpp"

using namespace animator;
using nn::Mat;

namespace {

ExpressionFactors neutral() { return {{0.5, 0.5, 0.5, 0.5}, {0.5, 0.5, 0.5, 0.5}}; }

double region_mean_abs_diff(const Tensor& a, const Tensor& b, std::size_t y0, std::size_t y1) {
    double s = 0.0;
    std::size_t n = 0;
    for (std::size_t c = 0; c < 3; ++c)
        for (std::size_t y = y0; y < y1; ++y)
            for (std::size_t x = 0; x < 224; ++x) {
                s += std::fabs(a.at({c, y, x}) - b.at({c, y, x}));
                ++n;
            }
    return s / static_cast<double>(n);
}

}  // namespace

TEST_CASE("cartoon faces are deterministic and factor-driven") {
    const auto f = neutral();
    const auto a = render_face(f);
    CHECK(a.shape() == Shape{3, 224, 224});
    CHECK(a == render_face(f));
    for (float v : a.vec()) CHECK((v >= 0.0f && v <= 1.0f));

    auto open = f;
    open.expression[0] = 1.0;
    const auto b = render_face(open);
    // the mouth lives in the lower part of the face; the brows and eyes above are untouched
    CHECK(region_mean_abs_diff(a, b, 150, 224) > 0.0);
    CHECK(region_mean_abs_diff(a, b, 0, 110) == 0.0);

    auto pale = f;
    pale.identity[2] = 0.0;
    CHECK(region_mean_abs_diff(a, render_face(pale), 0, 224) > 0.05);

    CHECK_THROWS_AS(render_face({{0.5, 0.5, 0.5}, {0.5, 0.5, 0.5, 0.5}}), ShapeError);
    CHECK_THROWS_AS(render_face({{0.5, 0.5, 0.5, 1.5}, {0.5, 0.5, 0.5, 0.5}}), ValidationError);
}

TEST_CASE("encode_face contracts") {
    nn::ParamStore store(11);
    FaceEncoder enc(store, {});

    SUBCASE("zero crop through a fresh encoder gives zero tokens") {
        const auto tok = encode_face(enc, {Tensor({2, 3, 224, 224}, 0.0f)});
        CHECK(tok.tokens.shape() == Shape{2, 64});
        for (float v : tok.tokens.vec()) CHECK(v == 0.0f);
    }
    SUBCASE("shape, duplicates, bound and permutation equivariance") {
        std::mt19937_64 rng(1);
        std::vector<ExpressionFactors> faces;
        for (int i = 0; i < 4; ++i) faces.push_back(sample_face_factors(rng));
        faces.push_back(faces[1]);
        const auto px = render_faces(faces);
        const auto tok = encode_face(enc, {px}).tokens;
        CHECK(tok.shape() == Shape{5, 64});
        for (std::size_t j = 0; j < 64; ++j) CHECK(tok.at({1, j}) == tok.at({4, j}));
        for (float v : tok.vec()) CHECK((v >= -1.0f && v <= 1.0f));

        std::vector<std::size_t> perm{3, 0, 4, 2, 1};
        std::vector<ExpressionFactors> shuffled;
        for (auto p : perm) shuffled.push_back(faces[p]);
        const auto tok2 = encode_face(enc, {render_faces(shuffled)}).tokens;
        for (std::size_t i = 0; i < 5; ++i)
            for (std::size_t j = 0; j < 64; ++j) CHECK(tok2.at({i, j}) == tok.at({perm[i], j}));
    }
    SUBCASE("wrong spatial size") {
        CHECK_THROWS_AS(encode_face(enc, {Tensor({1, 3, 112, 112})}), ShapeError);
        CHECK_THROWS_AS(encode_face(enc, {Tensor({1, 224, 224, 3})}), ShapeError);
    }
}

TEST_CASE("linear probe R^2 oracle") {
    std::mt19937_64 rng(2);
    std::normal_distribution<double> n(0.0, 1.0);
    Mat x(200, 5), noise(200, 2);
    for (Eigen::Index i = 0; i < x.size(); ++i) x.data()[i] = n(rng);
    for (Eigen::Index i = 0; i < noise.size(); ++i) noise.data()[i] = n(rng);
    Mat w(5, 2);
    w << 1, 0, -2, 1, 0.5, 0, 0, 3, 1, 1;
    const Mat y = x * w;
    CHECK(linear_probe_r2(x.topRows(100), y.topRows(100), x.bottomRows(100), y.bottomRows(100)) ==
          doctest::Approx(1.0).epsilon(1e-9));
    const double r = linear_probe_r2(x.topRows(100), noise.topRows(100), x.bottomRows(100), noise.bottomRows(100));
    CHECK(r < 0.1);
    CHECK_THROWS_AS(linear_probe_r2(x, y, x.leftCols(2), y), ShapeError);
}

TEST_CASE("short face encoder training lowers its loss") {
    nn::ParamStore store(3);
    FaceEncoder enc(store, {});
    FaceTrainConfig cfg;
    cfg.steps = 40;
    cfg.batch = 8;
    cfg.probe_train = 16;
    cfg.probe_test = 16;
    cfg.erase_samples = 0;
    cfg.identity_weight = 0.0;
    const auto report = train_face_encoder(store, enc, cfg);
    REQUIRE(report.losses.size() == 40);
    const double head = std::accumulate(report.losses.begin(), report.losses.begin() + 10, 0.0);
    const double tail = std::accumulate(report.losses.end() - 10, report.losses.end(), 0.0);
    CHECK(tail < head);
}

TEST_CASE("face encoder training rejects odd batches") {
    nn::ParamStore store(3);
    FaceEncoder enc(store, {});
    FaceTrainConfig cfg;
    cfg.batch = 7;
    CHECK_THROWS_AS(train_face_encoder(store, enc, cfg), ValidationError);
}

TEST_CASE("identity erasure removes the linear identity signal on its fitting faces") {
    nn::ParamStore store(6);
    FaceEncoderConfig small;
    small.c = 8;
    small.width = 4;
    FaceEncoder enc(store, small);
    const std::size_t n = 64;
    erase_identity(enc, n, 31);

    std::mt19937_64 rng(31);
    std::vector<ExpressionFactors> faces;
    for (std::size_t i = 0; i < n; ++i) faces.push_back(sample_face_factors(rng));
    const Mat z = enc.pre_activation(render_faces(faces))->value;
    Mat id(static_cast<Eigen::Index>(n), 4);
    for (std::size_t i = 0; i < n; ++i)
        for (std::size_t j = 0; j < 4; ++j) id(static_cast<Eigen::Index>(i), static_cast<Eigen::Index>(j)) = faces[i].identity[j];
    const Mat zc = z.rowwise() - z.colwise().mean();
    const Mat ic = id.rowwise() - id.colwise().mean();
    const Mat cross = zc.transpose() * ic / static_cast<double>(n);
    CHECK(cross.cwiseAbs().maxCoeff() < 1e-5 * (1.0 + zc.cwiseAbs().maxCoeff()));
    CHECK(zc.cwiseAbs().maxCoeff() > 1e-4);
    CHECK_THROWS_AS(erase_identity(enc, 8, 1), ValidationError);
}

TEST_CASE("face encoder checkpoint round trip") {
    nn::ParamStore a(4), b(5);
    FaceEncoder ea(a, {}), eb(b, {});
    const auto dir = testing::scratch_dir("face_ckpt");
    save_face_encoder(dir, a, ea.config());
    CHECK(read_face_encoder_config(dir).c == 64);
    b.load(dir, {FaceEncoder::kGroup});
    CHECK(a.group_hash(FaceEncoder::kGroup) == b.group_hash(FaceEncoder::kGroup));
}
