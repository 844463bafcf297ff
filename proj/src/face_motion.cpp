#include "animator/face_motion.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <random>

#include <Eigen/Eigenvalues>
#include <Eigen/QR>
#include <json.hpp>

#include "animator/error.hpp"

namespace animator {

using nn::Mat;
using nn::Var;
using json = nlohmann::json;

namespace {

// t x 3 x S x S -> (t*S*S) x 3 rows.
Mat channels_last(const Tensor& px) {
    const std::size_t t = px.dim(0), s = px.dim(2), plane = s * s;
    Mat m(static_cast<Eigen::Index>(t * plane), 3);
    for (std::size_t i = 0; i < t; ++i)
        for (std::size_t c = 0; c < 3; ++c)
            for (std::size_t o = 0; o < plane; ++o)
                m(static_cast<Eigen::Index>(i * plane + o), static_cast<Eigen::Index>(c)) = px[(i * 3 + c) * plane + o];
    return m;
}

Mat pool_matrix(std::size_t batch, std::size_t cells) {
    Mat p = Mat::Zero(static_cast<Eigen::Index>(batch), static_cast<Eigen::Index>(batch * cells));
    for (std::size_t b = 0; b < batch; ++b)
        p.block(static_cast<Eigen::Index>(b), static_cast<Eigen::Index>(b * cells), 1, static_cast<Eigen::Index>(cells))
            .setConstant(1.0 / static_cast<double>(cells));
    return p;
}

Mat factor_matrix(const std::vector<ExpressionFactors>& faces, bool identity) {
    const auto& first = identity ? faces.front().identity : faces.front().expression;
    Mat m(static_cast<Eigen::Index>(faces.size()), static_cast<Eigen::Index>(first.size()));
    for (std::size_t i = 0; i < faces.size(); ++i) {
        const auto& v = identity ? faces[i].identity : faces[i].expression;
        for (std::size_t j = 0; j < v.size(); ++j) m(static_cast<Eigen::Index>(i), static_cast<Eigen::Index>(j)) = v[j];
    }
    return m;
}

Mat encode_batched(const FaceEncoder& enc, const Tensor& pixels, std::size_t chunk = 32) {
    const std::size_t t = pixels.dim(0);
    Mat out(static_cast<Eigen::Index>(t), static_cast<Eigen::Index>(enc.config().c));
    for (std::size_t b = 0; b < t; b += chunk) {
        const std::size_t e = std::min(t, b + chunk);
        out.middleRows(static_cast<Eigen::Index>(b), static_cast<Eigen::Index>(e - b)) =
            enc.forward(pixels.slice0(b, e))->value;
    }
    return out;
}

}  // namespace

void validate_face_crop(const FaceCrop& crop, std::size_t size) {
    const auto& p = crop.pixels;
    if (p.rank() != 4 || p.dim(1) != 3 || p.dim(2) != size || p.dim(3) != size) {
        throw ShapeError("face crop must be t x 3 x " + std::to_string(size) + " x " + std::to_string(size) + ", got " +
                         shape_str(p.shape()));
    }
    for (float v : p.vec()) {
        if (!(v >= 0.0f && v <= 1.0f)) throw ValidationError("face crop values must lie in [0, 1]");
    }
}

FaceEncoder::FaceEncoder(nn::ParamStore& store, const FaceEncoderConfig& cfg) : cfg_(cfg) {
    if (cfg.c == 0 || cfg.width == 0) throw ValidationError("face encoder widths must be positive");
    if (cfg.crop % 32 != 0) throw ValidationError("face crop size must be divisible by 32");
    const auto w = static_cast<Eigen::Index>(cfg.width);
    const double gain = std::sqrt(2.0);
    convs_.push_back(nn::Conv2d::create(store, kGroup, "conv1", 3, w, 4, 4, 0, false, gain));
    convs_.push_back(nn::Conv2d::create(store, kGroup, "conv2", w, 2 * w, 3, 2, 1, false, gain));
    convs_.push_back(nn::Conv2d::create(store, kGroup, "conv3", 2 * w, 2 * w, 3, 2, 1, false, gain));
    convs_.push_back(nn::Conv2d::create(store, kGroup, "conv4", 2 * w, 4 * w, 3, 2, 1, false, gain));
    head_ = nn::Linear::create(store, kGroup, "head", 4 * w, static_cast<Eigen::Index>(cfg.c));
}

Var FaceEncoder::forward(const Tensor& pixels) const { return nn::tanh(pre_activation(pixels)); }

Var FaceEncoder::pre_activation(const Tensor& pixels) const {
    validate_face_crop({pixels}, cfg_.crop);
    const std::size_t t = pixels.dim(0);
    if (t == 0) return nn::constant(Mat::Zero(0, static_cast<Eigen::Index>(cfg_.c)));
    Mat rows = channels_last(pixels);
    const auto plane = static_cast<Eigen::Index>(cfg_.crop * cfg_.crop);
    for (std::size_t i = 0; i < t; ++i) {
        auto img = rows.middleRows(static_cast<Eigen::Index>(i) * plane, plane);
        const double mean = img.mean();
        const double sd = std::sqrt((img.array() - mean).square().mean());
        img = (img.array() - mean) / (sd + 1e-3);
    }
    Var x = nn::constant(std::move(rows));
    std::size_t size = cfg_.crop;
    for (const auto& conv : convs_) {
        x = nn::silu(conv(x, size, size, t));
        size = conv.out_size(size);
    }
    x = nn::matmul(nn::constant(pool_matrix(t, size * size)), x);
    return head_(x);
}

FaceMotionTokens FaceEncoder::encode(const FaceCrop& crop) const {
    const Mat m = forward(crop.pixels)->value;
    Tensor out({static_cast<std::size_t>(m.rows()), cfg_.c});
    for (Eigen::Index i = 0; i < m.size(); ++i) out[static_cast<std::size_t>(i)] = static_cast<float>(m.data()[i]);
    return {std::move(out)};
}

FaceMotionTokens encode_face(const FaceEncoder& enc, const FaceCrop& crop) { return enc.encode(crop); }

double linear_probe_r2(const Mat& x_fit, const Mat& y_fit, const Mat& x_eval, const Mat& y_eval) {
    if (x_fit.rows() != y_fit.rows() || x_eval.rows() != y_eval.rows() || x_fit.cols() != x_eval.cols() ||
        y_fit.cols() != y_eval.cols()) {
        throw ShapeError("probe inputs disagree in shape");
    }
    auto with_bias = [](const Mat& x) {
        Mat a(x.rows(), x.cols() + 1);
        a << x, Mat::Ones(x.rows(), 1);
        return a;
    };
    const Mat a = with_bias(x_fit);
    const Eigen::MatrixXd w = Eigen::MatrixXd(a).colPivHouseholderQr().solve(Eigen::MatrixXd(y_fit));
    const Mat pred = with_bias(x_eval) * w;
    double total = 0.0;
    for (Eigen::Index j = 0; j < y_eval.cols(); ++j) {
        const auto col = y_eval.col(j);
        const double mean = col.mean();
        const double ss_tot = (col.array() - mean).square().sum();
        const double ss_res = (col - pred.col(j)).squaredNorm();
        total += ss_tot > 0 ? 1.0 - ss_res / ss_tot : 0.0;
    }
    return total / static_cast<double>(y_eval.cols());
}

ProbeScores probe_face_encoder(const FaceEncoder& enc, std::size_t n_fit, std::size_t n_eval, std::uint64_t seed,
                               const FaceGenConfig& gen) {
    std::mt19937_64 rng(seed);
    std::vector<ExpressionFactors> faces;
    for (std::size_t i = 0; i < n_fit + n_eval; ++i) faces.push_back(sample_face_factors(rng, gen));
    const Mat tokens = encode_batched(enc, render_faces(faces, gen));
    const Mat expr = factor_matrix(faces, false), id = factor_matrix(faces, true);
    const auto f = static_cast<Eigen::Index>(n_fit), e = static_cast<Eigen::Index>(n_eval);
    ProbeScores s;
    s.expression_r2 = linear_probe_r2(tokens.topRows(f), expr.topRows(f), tokens.bottomRows(e), expr.bottomRows(e));
    s.identity_r2 = linear_probe_r2(tokens.topRows(f), id.topRows(f), tokens.bottomRows(e), id.bottomRows(e));
    return s;
}

FaceTrainReport train_face_encoder(nn::ParamStore& store, const FaceEncoder& enc, const FaceTrainConfig& cfg,
                                   const FaceGenConfig& gen) {
    if (cfg.batch < 2 || cfg.batch % 2 != 0) throw ValidationError("face encoder training needs an even batch of at least 2");
    FaceTrainReport report;
    report.before = probe_face_encoder(enc, cfg.probe_train, cfg.probe_test, cfg.seed + 1, gen);

    nn::ParamStore head_store(cfg.seed);
    const auto head = nn::Linear::create(head_store, "face_probe_head", "linear", static_cast<Eigen::Index>(enc.config().c),
                                         static_cast<Eigen::Index>(gen.expression_dims));

    store.set_trainable([](const std::string& g) { return g == FaceEncoder::kGroup; });
    nn::AdamW opt({cfg.lr, 0.9, 0.999, 1e-8, 0.0});
    nn::AdamW head_opt({cfg.lr, 0.9, 0.999, 1e-8, 0.0});
    std::mt19937_64 rng(cfg.seed);
    const std::size_t half = cfg.batch / 2;

    for (std::size_t step = 0; step < cfg.steps; ++step) {
        // rows i and i + half share the expression and differ in identity
        std::vector<ExpressionFactors> faces;
        for (std::size_t i = 0; i < half; ++i) faces.push_back(sample_face_factors(rng, gen));
        for (std::size_t i = 0; i < half; ++i) {
            ExpressionFactors f = sample_face_factors(rng, gen);
            f.expression = faces[i].expression;
            faces.push_back(std::move(f));
        }
        const Mat expr = factor_matrix(faces, false);

        store.zero_grad();
        head_store.zero_grad();
        const Var tokens = enc.forward(render_faces(faces, gen));
        const Var regress = nn::mse(head(tokens), expr);
        const Var gap = nn::sub(nn::slice_rows(tokens, 0, static_cast<Eigen::Index>(half)),
                                nn::slice_rows(tokens, static_cast<Eigen::Index>(half), static_cast<Eigen::Index>(half)));
        const Var centred = nn::sub(tokens, nn::matmul(nn::constant(Mat::Constant(tokens->rows(), tokens->rows(),
                                                                                    1.0 / static_cast<double>(cfg.batch))),
                                                       tokens));
        // identity-driven spread relative to total spread; shrinking the tokens leaves it unchanged
        const Var ratio = nn::divide(nn::mean_all(nn::mul(gap, gap)), nn::mean_all(nn::mul(centred, centred)));
        const double ramp = std::clamp((static_cast<double>(step) / static_cast<double>(cfg.steps) - cfg.identity_delay) /
                                           std::max(1e-9, 1.0 - cfg.identity_delay), 0.0, 1.0);
        const Var loss = nn::add(regress, nn::scale(ratio, ramp * cfg.identity_weight));
        const double value = loss->scalar();
        if (!std::isfinite(value)) throw TrainingError("face encoder loss is not finite at step " + std::to_string(step));
        report.losses.push_back(value);
        nn::backward(loss);
        opt.step(store);
        head_opt.step(head_store);
    }
    report.trained = probe_face_encoder(enc, cfg.probe_train, cfg.probe_test, cfg.seed + 1, gen);
    if (cfg.erase_samples > 0) erase_identity(enc, cfg.erase_samples, cfg.seed + 2, gen);
    report.after = probe_face_encoder(enc, cfg.probe_train, cfg.probe_test, cfg.seed + 1, gen);
    return report;
}

void erase_identity(const FaceEncoder& enc, std::size_t n, std::uint64_t seed, const FaceGenConfig& gen) {
    if (n < 2 * enc.config().c) throw ValidationError("identity eraser needs at least 2c faces");
    std::mt19937_64 rng(seed);
    std::vector<ExpressionFactors> faces;
    for (std::size_t i = 0; i < n; ++i) faces.push_back(sample_face_factors(rng, gen));
    const Tensor px = render_faces(faces, gen);
    Mat z(static_cast<Eigen::Index>(n), static_cast<Eigen::Index>(enc.config().c));
    for (std::size_t b = 0; b < n; b += 32) {
        const std::size_t e = std::min(n, b + 32);
        z.middleRows(static_cast<Eigen::Index>(b), static_cast<Eigen::Index>(e - b)) = enc.pre_activation(px.slice0(b, e))->value;
    }
    Mat id = factor_matrix(faces, true);
    const Eigen::RowVectorXd mu = z.colwise().mean();
    const Mat zc = z.rowwise() - mu;
    id.rowwise() -= id.colwise().mean();
    const double inv = 1.0 / static_cast<double>(n);
    const Mat cov = zc.transpose() * zc * inv;
    const Mat cross = zc.transpose() * id * inv;

    Eigen::SelfAdjointEigenSolver<Mat> eig(cov);
    const auto& vals = eig.eigenvalues();
    const double floor = 1e-10 * std::max(vals.maxCoeff(), 1e-300);
    Eigen::VectorXd isq(vals.size()), sq(vals.size());
    for (Eigen::Index i = 0; i < vals.size(); ++i) {
        isq(i) = vals(i) > floor ? 1.0 / std::sqrt(vals(i)) : 0.0;
        sq(i) = vals(i) > floor ? std::sqrt(vals(i)) : 0.0;
    }
    const Mat whiten = eig.eigenvectors() * isq.asDiagonal() * eig.eigenvectors().transpose();
    const Mat unwhiten = eig.eigenvectors() * sq.asDiagonal() * eig.eigenvectors().transpose();
    const Mat basis = Eigen::HouseholderQR<Mat>(whiten * cross).householderQ() * Mat::Identity(cross.rows(), cross.cols());
    const Mat erase = unwhiten * basis * basis.transpose() * whiten;  // z' = z - erase (z - mu)
    const Mat keep = Mat::Identity(erase.rows(), erase.cols()) - erase;

    const auto& head = enc.head();
    Mat w = head.weight->value * keep.transpose();
    Mat b = head.bias->value * keep.transpose() + mu * erase.transpose();
    nn::round_to_float(w);
    nn::round_to_float(b);
    head.weight->value = std::move(w);
    head.bias->value = std::move(b);
}

void save_face_encoder(const std::filesystem::path& dir, const nn::ParamStore& store, const FaceEncoderConfig& cfg) {
    std::filesystem::create_directories(dir);
    nn::ParamStore only;
    for (const auto* p : store.group(FaceEncoder::kGroup)) {
        auto& q = only.add(FaceEncoder::kGroup, p->name.substr(std::string(FaceEncoder::kGroup).size() + 1),
                           p->value.rows(), p->value.cols(), nn::Init::Zero);
        q.value = p->value;
    }
    only.save(dir, {{"c", cfg.c}, {"width", cfg.width}, {"arch", "conv4"}, {"version", 1}});
}

FaceEncoderConfig read_face_encoder_config(const std::filesystem::path& dir) {
    std::ifstream in(dir / "manifest.json");
    if (!in) throw FormatError("no face encoder manifest in " + dir.string());
    json m;
    try {
        m = json::parse(in);
    } catch (const json::exception& e) {
        throw FormatError(dir.string() + ": " + e.what());
    }
    if (m.value("arch", "") != "conv4" || m.value("version", 0) != 1) {
        throw FormatError(dir.string() + ": not a conv4 face encoder checkpoint");
    }
    FaceEncoderConfig cfg;
    cfg.c = m.at("c").get<std::size_t>();
    cfg.width = m.value("width", cfg.width);
    return cfg;
}

}  // namespace animator
