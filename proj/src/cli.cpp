#include "animator/cli.hpp"

#include <CLI11.hpp>

#include <algorithm>
#include <fstream>
#include <sstream>

#include "animator/error.hpp"
#include "animator/guidance_render.hpp"
#include "animator/image_io.hpp"
#include "animator/infer.hpp"
#include "animator/train.hpp"

namespace animator {

using json = nlohmann::json;
namespace fs = std::filesystem;

namespace {

std::vector<std::string> split_key(const std::string& dotted) {
    std::vector<std::string> parts;
    std::stringstream ss(dotted);
    std::string p;
    while (std::getline(ss, p, '.')) parts.push_back(p);
    return parts;
}

void flatten(const json& j, const std::string& prefix, std::vector<std::string>& out) {
    for (const auto& [k, v] : j.items()) {
        const std::string key = prefix.empty() ? k : prefix + "." + k;
        if (v.is_object()) {
            flatten(v, key, out);
        } else {
            out.push_back(key);
        }
    }
}

bool same_kind(const json& a, const json& b) {
    if (a.is_number() && b.is_number()) return !(a.is_number_float() == false && b.is_number_float());
    return a.type() == b.type();
}

json read_json(const fs::path& p) {
    std::ifstream in(p);
    if (!in) throw FormatError("cannot open " + p.string());
    try {
        return json::parse(in);
    } catch (const json::exception& e) {
        throw ParseError(p.string() + ": " + e.what());
    }
}

void write_json(const fs::path& p, const json& j) {
    if (p.has_parent_path()) fs::create_directories(p.parent_path());
    std::ofstream out(p);
    out << j.dump(2) << '\n';
    if (!out) throw Error("cannot write " + p.string());
}

}  // namespace

const json& RunConfig::at(const std::string& dotted) const {
    const json* cur = &values;
    for (const auto& part : split_key(dotted)) {
        if (!cur->is_object() || !cur->contains(part)) throw UsageError("unknown config key '" + dotted + "'");
        cur = &(*cur)[part];
    }
    return *cur;
}

void RunConfig::set(const std::string& dotted, const json& v, const std::string& source) {
    json* cur = &values;
    for (const auto& part : split_key(dotted)) {
        if (!cur->is_object() || !cur->contains(part)) throw UsageError("unknown config key '" + dotted + "'");
        cur = &(*cur)[part];
    }
    if (cur->is_object()) throw UsageError("config key '" + dotted + "' is a section");
    if (!same_kind(*cur, v)) throw UsageError("config key '" + dotted + "' expects " + std::string(cur->type_name()));
    *cur = v;
    provenance[dotted] = source;
}

RunConfig default_run_config() {
    RunConfig c;
    const ModelConfig m;
    c.values = {
        {"seed", 0},
        {"model",
         {{"c_model", m.c_model},
          {"n_blocks", m.n_blocks},
          {"n_heads", m.n_heads},
          {"c_face", m.c_face},
          {"c_pose", m.c_pose},
          {"patch", m.patch},
          {"mlp_ratio", m.mlp_ratio},
          {"pose_width", m.pose_width},
          {"time_width", m.time_width},
          {"ref_time", m.ref_time},
          {"face_width", m.face.width}}},
        {"codec", {{"f_s", m.f_s}, {"f_t", m.f_t}}},
        {"world", {{"width", 64}, {"height", 64}, {"min_frames", 9}, {"max_frames", 33}, {"fps", 24.0}, {"samples", 64}}},
        {"train",
         {{"steps", 0},
          {"lr", 5e-6},
          {"beta1", 0.9},
          {"beta2", 0.999},
          {"weight_decay", 0.01},
          {"p_drop_ref", 0.1},
          {"p_drop_motion", 0.1},
          {"p_single_ref", 0.25},
          {"clip_frames", 9},
          {"warmup", 50},
          {"batch", 1},
          {"final_lr_scale", 1.0},
          {"paper_scale", false},
          {"face_steps", 400},
          {"face_lr", 3e-3},
          {"face_identity_weight", 0.3}}},
        {"sampler",
         {{"steps", 16},
          {"cfg_ref", 2.5},
          {"cfg_motion", 2.5},
          {"segment_len", static_cast<int>(kDeskSegmentLength)},
          {"turnaround_frames", 33},
          {"paper_scale", false}}},
    };
    std::vector<std::string> keys;
    flatten(c.values, "", keys);
    for (const auto& k : keys) c.provenance[k] = "default";
    return c;
}

void merge_config(RunConfig& cfg, const json& file) {
    if (!file.is_object()) throw UsageError("config file must hold a JSON object");
    std::vector<std::string> keys;
    flatten(file, "", keys);
    for (const auto& k : keys) {
        const json* cur = &file;
        for (const auto& part : split_key(k)) cur = &(*cur)[part];
        cfg.set(k, *cur, "file");
    }
}

std::uint64_t config_hash(const RunConfig& cfg) {
    const std::string s = cfg.values.dump();
    return hash_bytes(std::as_bytes(std::span<const char>(s.data(), s.size())));
}

std::uint64_t derive_seed(std::uint64_t root, std::string_view stream) {
    std::uint64_t h = hash_bytes(std::as_bytes(std::span<const char>(stream.data(), stream.size())));
    h = hash_bytes(std::as_bytes(std::span<const std::uint64_t>(&root, 1)), h);
    return h;
}

std::uint64_t hash_path(const fs::path& p) {
    auto file_hash = [](const fs::path& f, std::uint64_t seed) {
        std::ifstream in(f, std::ios::binary);
        if (!in) throw FormatError("cannot read " + f.string());
        const std::string bytes((std::istreambuf_iterator<char>(in)), std::istreambuf_iterator<char>());
        return hash_bytes(std::as_bytes(std::span<const char>(bytes.data(), bytes.size())), seed);
    };
    if (!fs::exists(p)) throw FormatError("input " + p.string() + " does not exist");
    if (!fs::is_directory(p)) return file_hash(p, 1469598103934665603ULL);
    std::vector<fs::path> files;
    for (const auto& e : fs::recursive_directory_iterator(p))
        if (e.is_regular_file() && e.path().filename() != ".lock") files.push_back(e.path());
    std::sort(files.begin(), files.end());
    std::uint64_t h = 1469598103934665603ULL;
    for (const auto& f : files) {
        const std::string rel = fs::relative(f, p).generic_string();
        h = hash_bytes(std::as_bytes(std::span<const char>(rel.data(), rel.size())), h);
        h = file_hash(f, h);
    }
    return h;
}

namespace {

struct Common {
    std::string config_path;
    bool strict = false;
    std::optional<std::uint64_t> seed;
};

void add_common(CLI::App* sub, Common& c) {
    sub->add_option("--config", c.config_path, "JSON config file");
    sub->add_flag("--strict-deterministic", c.strict, "single-threaded, fixed reduction order");
    sub->add_option("--seed", c.seed, "root seed");
}

struct Context {
    RunConfig cfg = default_run_config();
    std::vector<std::string> argv;
    std::map<std::string, std::string> inputs;  // label -> path

    std::uint64_t root() const { return cfg.get<std::uint64_t>("seed"); }
    std::uint64_t seed(std::string_view stream) const { return derive_seed(root(), stream); }

    ModelConfig model() const {
        json m = cfg.at("model");
        m["f_s"] = cfg.at("codec.f_s");
        m["f_t"] = cfg.at("codec.f_t");
        auto mc = model_config_from_json(m);
        validate_model_config(mc);
        return mc;
    }

    void write_manifest(const fs::path& dir) const {
        json hashes = json::object();
        for (const auto& [label, path] : inputs) hashes[label] = hex64(hash_path(path));
        json prov = json::object();
        for (const auto& [k, v] : cfg.provenance) prov[k] = v;
        write_json(dir / "run_manifest.json", {{"config_hash", hex64(config_hash(cfg))},
                                               {"root_seed", root()},
                                               {"input_hashes", hashes},
                                               {"command", argv},
                                               {"version", kVersion},
                                               {"config", cfg.values},
                                               {"provenance", prov}});
    }
};

void load_config(Context& ctx, const Common& c) {
    if (!c.config_path.empty()) {
        json file;
        try {
            file = read_json(c.config_path);
        } catch (const Error& e) {
            throw UsageError(std::string("--config: ") + e.what());
        }
        merge_config(ctx.cfg, file);
        ctx.inputs["config"] = c.config_path;
    }
    if (c.seed) ctx.cfg.set("seed", *c.seed, "flag");
    set_canvas_workers(c.strict ? 1 : 0);
}

std::string frame_name(std::size_t i) {
    char buf[32];
    std::snprintf(buf, sizeof buf, "%05zu.png", i);
    return buf;
}

void write_frames(const fs::path& dir, const PixelVideo& v) {
    fs::create_directories(dir);
    for (std::size_t i = 0; i < v.num_frames(); ++i) {
        write_png(dir / frame_name(i), v.frames.slice0(i, i + 1).reshaped({v.height(), v.width(), 3}));
    }
}

PixelVideo read_frames(const fs::path& dir) {
    fs::path root = fs::is_directory(dir / "frames") ? dir / "frames" : dir;
    if (!fs::is_directory(root)) throw FormatError(dir.string() + " is not a directory of frames");
    std::vector<fs::path> files;
    for (const auto& e : fs::directory_iterator(root))
        if (e.is_regular_file() && e.path().extension() == ".png") files.push_back(e.path());
    std::sort(files.begin(), files.end());
    if (files.empty()) throw FormatError("no PNG frames in " + root.string());
    std::vector<Tensor> frames;
    for (const auto& f : files) {
        const Tensor img = read_png(f);
        frames.push_back(img.reshaped({1, img.dim(0), img.dim(1), img.dim(2)}));
    }
    return {concat0(frames), 24.0};
}

std::vector<double> track_yaw(const PoseTrack& t) {
    std::vector<double> yaw;
    for (const auto& f : t.frames) yaw.push_back(f.head.yaw);
    return yaw;
}

TrainOptions train_options(const Context& ctx) {
    TrainOptions o;
    o.lr = ctx.cfg.get<double>("train.lr");
    o.beta1 = ctx.cfg.get<double>("train.beta1");
    o.beta2 = ctx.cfg.get<double>("train.beta2");
    o.weight_decay = ctx.cfg.get<double>("train.weight_decay");
    o.p_drop_ref = ctx.cfg.get<double>("train.p_drop_ref");
    o.p_drop_motion = ctx.cfg.get<double>("train.p_drop_motion");
    o.p_single_ref = ctx.cfg.get<double>("train.p_single_ref");
    o.clip_frames = ctx.cfg.get<std::size_t>("train.clip_frames");
    o.warmup = ctx.cfg.get<std::size_t>("train.warmup");
    o.batch = ctx.cfg.get<std::size_t>("train.batch");
    o.final_lr_scale = ctx.cfg.get<double>("train.final_lr_scale");
    o.seed = ctx.seed("train");
    return o;
}

// ---- subcommands ----

int cmd_render_guidance(Context& ctx, const std::string& poses, const std::string& out_dir, double radius,
                        double line_width, std::ostream& out) {
    ctx.inputs["poses"] = poses;
    const PoseTrack track = load_pose_track(poses);
    const auto w = ctx.cfg.get<std::size_t>("world.width"), h = ctx.cfg.get<std::size_t>("world.height");
    if (radius <= 0.0) radius = projected_head_radius(track.frames.front().head, track.camera);
    const auto spec = RasterSpec::with_default_palette(w, h, line_width, track.tree.bones().size());
    const auto canvases = build_canvas(track, radius, spec);
    fs::create_directories(fs::path(out_dir) / "skeleton");
    fs::create_directories(fs::path(out_dir) / "sphere");
    for (std::size_t i = 0; i < canvases.size(); ++i) {
        write_png(fs::path(out_dir) / "skeleton" / frame_name(i), canvases[i].skeleton);
        write_png(fs::path(out_dir) / "sphere" / frame_name(i), canvases[i].sphere);
    }
    ctx.write_manifest(out_dir);
    out << json{{"frames", canvases.size()}, {"head_radius_px", radius}}.dump() << '\n';
    return 0;
}

int cmd_retarget(Context& ctx, const std::string& poses, const std::string& ref_apose, const std::string& drv_apose,
                 const std::string& out_file, std::ostream& out) {
    ctx.inputs["poses"] = poses;
    ctx.inputs["ref_apose"] = ref_apose;
    ctx.inputs["driving_apose"] = drv_apose;
    const PoseTrack track = load_pose_track(poses);
    const PoseTrack ref = load_pose_track(ref_apose), drv = load_pose_track(drv_apose);
    const PoseTrack result = retarget_track(track, {ref.frames.front().joints, drv.frames.front().joints});
    save_pose_track(out_file, result);
    ctx.write_manifest(fs::path(out_file).parent_path().empty() ? fs::path(".") : fs::path(out_file).parent_path());
    out << json{{"frames", result.size()}}.dump() << '\n';
    return 0;
}

int cmd_make_data(Context& ctx, const std::string& out_dir, std::ostream& out) {
    DatasetConfig dc;
    dc.min_frames = ctx.cfg.get<std::size_t>("world.min_frames");
    dc.max_frames = ctx.cfg.get<std::size_t>("world.max_frames");
    dc.world.width = ctx.cfg.get<std::size_t>("world.width");
    dc.world.height = ctx.cfg.get<std::size_t>("world.height");
    dc.world.fps = ctx.cfg.get<double>("world.fps");
    const ModelConfig mc = ctx.model();
    validate_world_config(dc.world, mc.codec(), mc.patch);
    const auto n = ctx.cfg.get<std::size_t>("world.samples");
    const json manifest = make_dataset(out_dir, n, dc, ctx.seed("data"));
    ctx.write_manifest(out_dir);
    out << json{{"samples", n}, {"manifest", (fs::path(out_dir) / "manifest.json").string()}}.dump() << '\n';
    return 0;
}

int cmd_train(Context& ctx, int stage, const std::string& data, const std::string& ckpt_in, const std::string& ckpt_out,
              const std::string& face_dir, std::ostream& out) {
    ctx.inputs["data"] = data;
    if (!ckpt_in.empty()) ctx.inputs["ckpt_in"] = ckpt_in;
    if (!face_dir.empty()) ctx.inputs["face_encoder"] = face_dir;
    const auto schedule = default_schedule(ctx.cfg.get<bool>("train.paper_scale"));
    if (stage < 1 || stage > 3) throw UsageError("--stage must be 1, 2 or 3");
    StageSpec spec = schedule[static_cast<std::size_t>(stage - 1)];
    const auto steps = ctx.cfg.get<std::size_t>("train.steps");
    if (steps > 0) spec.steps = steps;
    const auto samples = load_dataset(data);
    const TrainOptions opt = train_options(ctx);

    std::optional<FaceTrainReport> face_report;
    auto prepare = [&](DiT& model) {
        if (stage != 2) return;
        if (!face_dir.empty()) {
            model.params().load(face_dir, {FaceEncoder::kGroup});
            return;
        }
        FaceTrainConfig fc;
        fc.steps = ctx.cfg.get<std::size_t>("train.face_steps");
        fc.lr = ctx.cfg.get<double>("train.face_lr");
        fc.identity_weight = ctx.cfg.get<double>("train.face_identity_weight");
        fc.seed = ctx.seed("face");
        face_report = train_face_encoder(model.params(), model.face_encoder(), fc);
        save_face_encoder(fs::path(ckpt_out) / "face_encoder", model.params(), model.face_encoder().config());
    };
    const std::optional<fs::path> in = ckpt_in.empty() ? std::nullopt : std::optional<fs::path>(ckpt_in);
    const StageReport report = run_stage(spec, samples, opt, in, ckpt_out, ctx.model(), prepare);
    ctx.write_manifest(ckpt_out);

    json summary = {{"stage", stage}, {"steps", report.losses.size()}, {"face_branch_calls", report.face_branch_calls}};
    if (!report.losses.empty()) {
        summary["first_loss"] = report.losses.front();
        summary["last_loss"] = report.losses.back();
    }
    if (face_report) {
        summary["face_probe"] = {{"expression_r2", face_report->after.expression_r2},
                                 {"identity_r2", face_report->after.identity_r2}};
    }
    out << summary.dump() << '\n';
    return 0;
}

struct AnimateArgs {
    std::vector<std::string> refs;
    std::string ref_poses;
    std::string poses;
    std::string mode = "single";
    std::string ckpt;
    std::string out;
    std::string faces;
    std::string truth;
    bool half_body = false;
};

int cmd_animate(Context& ctx, const AnimateArgs& a, std::ostream& out) {
    ctx.inputs["poses"] = a.poses;
    ctx.inputs["ckpt"] = a.ckpt;
    for (std::size_t i = 0; i < a.refs.size(); ++i) ctx.inputs["ref" + std::to_string(i)] = a.refs[i];
    const PoseTrack track = load_pose_track(a.poses);
    std::optional<PoseTrack> ref_track;
    if (!a.ref_poses.empty()) {
        ctx.inputs["ref_poses"] = a.ref_poses;
        ref_track = load_pose_track(a.ref_poses);
        if (ref_track->size() != a.refs.size()) throw ValidationError("--ref-poses needs one frame per reference image");
    }
    std::vector<ReferenceImage> refs;
    for (std::size_t i = 0; i < a.refs.size(); ++i) {
        refs.push_back({read_png(a.refs[i]), ref_track ? ref_track->frames[i] : track.frames.front(), !a.half_body});
    }
    std::optional<Tensor> faces;
    if (!a.faces.empty()) {
        ctx.inputs["faces"] = a.faces;
        const json f = read_json(a.faces);
        std::vector<ExpressionFactors> ff;
        const auto identity = f.at("identity").get<std::vector<double>>();
        for (const auto& e : f.at("expression")) ff.push_back({e.get<std::vector<double>>(), identity});
        if (ff.size() != track.size()) throw ValidationError("--faces must cover every driving frame");
        faces = face_crops(ff);
    }
    const auto model = DiT::load(a.ckpt);

    GenerateOptions opt;
    if (a.mode == "single") {
        opt.mode = RefMode::Single;
    } else if (a.mode == "multi-pseudo") {
        opt.mode = RefMode::MultiPseudo;
    } else {
        throw UsageError("--mode must be single or multi-pseudo");
    }
    opt.segment_length = ctx.cfg.get<bool>("sampler.paper_scale") ? kPaperSegmentLength
                                                                   : ctx.cfg.get<std::size_t>("sampler.segment_len");
    opt.turnaround_frames = ctx.cfg.get<std::size_t>("sampler.turnaround_frames");
    opt.sampler.n_steps = ctx.cfg.get<std::size_t>("sampler.steps");
    opt.sampler.weights = {ctx.cfg.get<double>("sampler.cfg_ref"), ctx.cfg.get<double>("sampler.cfg_motion")};
    opt.sampler.seed = ctx.seed("sampler");

    const auto res = generate_long_video(*model, refs, track, faces, opt);
    write_frames(fs::path(a.out) / "frames", res.video);
    json info = {{"frames", res.video.num_frames()},
                 {"segments", res.plan.segments.size()},
                 {"segment_length", res.plan.segment_length},
                 {"reference_count", res.reference_count},
                 {"mode", a.mode},
                 {"video_hash", hex64(hash_tensor(res.video.frames))}};
    if (opt.mode == RefMode::MultiPseudo) {
        json kinds = json::array();
        for (auto k : res.pseudo_refs.kinds) kinds.push_back(ref_kind_name(k));
        info["pseudo_refs"] = {{"indices", res.pseudo_refs.indices}, {"kinds", kinds}};
    }
    if (!a.truth.empty()) {
        ctx.inputs["truth"] = a.truth;
        const auto m = evaluate(res.video, read_frames(a.truth));
        info["metrics"] = {{"psnr", m.psnr}, {"ssim", m.ssim}, {"temporal", m.temporal}};
    }
    write_json(fs::path(a.out) / "metrics.json", info);
    ctx.write_manifest(a.out);
    out << info.dump() << '\n';
    return 0;
}

int cmd_select_refs(Context& ctx, const std::string& poses, bool full_body, std::ostream& out) {
    ctx.inputs["poses"] = poses;
    const PoseTrack track = load_pose_track(poses);
    std::mt19937_64 rng(ctx.seed("select"));
    const auto sel = select_reference_frames(track_yaw(track), full_body, rng);
    json kinds = json::array();
    for (auto k : sel.kinds) kinds.push_back(ref_kind_name(k));
    out << json{{"indices", sel.indices}, {"kinds", kinds}}.dump() << '\n';
    return 0;
}

int cmd_eval(Context& ctx, const std::string& generated, const std::string& truth, const std::string& out_file,
             std::ostream& out) {
    ctx.inputs["generated"] = generated;
    ctx.inputs["truth"] = truth;
    const auto m = evaluate(read_frames(generated), read_frames(truth));
    const json j = {{"psnr", m.psnr}, {"ssim", m.ssim}, {"temporal", m.temporal}};
    if (!out_file.empty()) {
        write_json(out_file, j);
        ctx.write_manifest(fs::path(out_file).parent_path().empty() ? fs::path(".") : fs::path(out_file).parent_path());
    }
    out << j.dump() << '\n';
    return 0;
}

std::string error_kind(const std::exception& e) {
    if (dynamic_cast<const ShapeError*>(&e)) return "shape";
    if (dynamic_cast<const ValidationError*>(&e)) return "validation";
    if (dynamic_cast<const FormatError*>(&e)) return "format";
    if (dynamic_cast<const ParseError*>(&e)) return "parse";
    if (dynamic_cast<const TrainingError*>(&e)) return "training";
    if (dynamic_cast<const NumericError*>(&e)) return "numeric";
    return "runtime";
}

}  // namespace

int dispatch(const std::vector<std::string>& args, std::ostream& out, std::ostream& err) {
    CLI::App app{"Pose-driven human image animation toolkit", "animator"};
    app.set_version_flag("--version", kVersion);
    app.require_subcommand(1);
    Common common;
    Context ctx;
    ctx.argv = args;
    std::function<int()> run;

    auto* rg = app.add_subcommand("render-guidance", "rasterise skeleton and head-sphere canvases");
    std::string rg_poses, rg_out;
    double rg_radius = 0.0, rg_line = 1.0;
    rg->add_option("--poses", rg_poses)->required();
    rg->add_option("--out", rg_out)->required();
    rg->add_option("--ref-radius", rg_radius, "head sphere radius in pixels (default: first frame)");
    rg->add_option("--line-width", rg_line);
    add_common(rg, common);
    rg->callback([&] { run = [&] { return cmd_render_guidance(ctx, rg_poses, rg_out, rg_radius, rg_line, out); }; });

    auto* rt = app.add_subcommand("retarget", "bone length adjustment from an A-pose pair");
    std::string rt_poses, rt_ref, rt_drv, rt_out;
    rt->add_option("--poses", rt_poses)->required();
    rt->add_option("--ref-apose", rt_ref)->required();
    rt->add_option("--driving-apose", rt_drv)->required();
    rt->add_option("--out", rt_out)->required();
    add_common(rt, common);
    rt->callback([&] { run = [&] { return cmd_retarget(ctx, rt_poses, rt_ref, rt_drv, rt_out, out); }; });

    auto* md = app.add_subcommand("make-data", "write a synthetic dataset");
    std::string md_out;
    std::optional<std::size_t> md_n;
    md->add_option("--out", md_out)->required();
    md->add_option("--n", md_n, "number of samples");
    add_common(md, common);
    md->callback([&] {
        run = [&] {
            if (md_n) ctx.cfg.set("world.samples", *md_n, "flag");
            return cmd_make_data(ctx, md_out, out);
        };
    });

    auto* tr = app.add_subcommand("train", "run one training stage");
    int tr_stage = 0;
    std::string tr_data, tr_in, tr_out, tr_face;
    std::optional<std::size_t> tr_steps;
    std::optional<double> tr_lr;
    bool tr_paper = false;
    tr->add_option("--stage", tr_stage)->required();
    tr->add_option("--data", tr_data)->required();
    tr->add_option("--ckpt-in", tr_in);
    tr->add_option("--ckpt-out", tr_out)->required();
    tr->add_option("--steps", tr_steps);
    tr->add_option("--lr", tr_lr);
    tr->add_option("--face-encoder", tr_face, "pretrained face encoder checkpoint for stage 2");
    tr->add_flag("--paper-scale", tr_paper, "paper step counts");
    add_common(tr, common);
    tr->callback([&] {
        run = [&] {
            if (tr_steps) ctx.cfg.set("train.steps", *tr_steps, "flag");
            if (tr_lr) ctx.cfg.set("train.lr", *tr_lr, "flag");
            if (tr_paper) ctx.cfg.set("train.paper_scale", true, "flag");
            return cmd_train(ctx, tr_stage, tr_data, tr_in, tr_out, tr_face, out);
        };
    });

    auto* an = app.add_subcommand("animate", "generate a video from reference images and a pose track");
    AnimateArgs aa;
    std::optional<std::size_t> an_seg, an_steps;
    std::optional<double> an_cref, an_cmot;
    bool an_paper = false;
    an->add_option("--ref", aa.refs)->required();
    an->add_option("--ref-poses", aa.ref_poses, "pose track with one frame per reference image");
    an->add_option("--poses", aa.poses)->required();
    an->add_option("--mode", aa.mode);
    an->add_option("--ckpt", aa.ckpt)->required();
    an->add_option("--out", aa.out)->required();
    an->add_option("--faces", aa.faces, "factors.json with per-frame expressions");
    an->add_option("--truth", aa.truth, "ground-truth frames for metrics");
    an->add_flag("--half-body", aa.half_body, "references are not full-body shots");
    an->add_option("--segment-len", an_seg);
    an->add_option("--cfg-ref", an_cref);
    an->add_option("--cfg-motion", an_cmot);
    an->add_option("--steps", an_steps);
    an->add_flag("--paper-scale", an_paper, "paper segment length");
    add_common(an, common);
    an->callback([&] {
        run = [&] {
            if (an_seg) ctx.cfg.set("sampler.segment_len", *an_seg, "flag");
            if (an_cref) ctx.cfg.set("sampler.cfg_ref", *an_cref, "flag");
            if (an_cmot) ctx.cfg.set("sampler.cfg_motion", *an_cmot, "flag");
            if (an_steps) ctx.cfg.set("sampler.steps", *an_steps, "flag");
            if (an_paper) ctx.cfg.set("sampler.paper_scale", true, "flag");
            return cmd_animate(ctx, aa, out);
        };
    });

    auto* sr = app.add_subcommand("select-refs", "pick min/max/median-yaw reference frames");
    std::string sr_poses;
    bool sr_full = false;
    sr->add_option("--poses", sr_poses)->required();
    sr->add_flag("--full-body", sr_full, "also pick a half-body crop frame");
    add_common(sr, common);
    sr->callback([&] { run = [&] { return cmd_select_refs(ctx, sr_poses, sr_full, out); }; });

    auto* ev = app.add_subcommand("eval", "PSNR, SSIM and temporal consistency");
    std::string ev_gen, ev_truth, ev_out;
    ev->add_option("--generated", ev_gen)->required();
    ev->add_option("--truth", ev_truth)->required();
    ev->add_option("--out", ev_out);
    add_common(ev, common);
    ev->callback([&] { run = [&] { return cmd_eval(ctx, ev_gen, ev_truth, ev_out, out); }; });

    std::vector<std::string> reversed(args.rbegin(), args.rend());
    try {
        app.parse(reversed);
    } catch (const CLI::CallForHelp&) {
        out << app.help();
        return 0;
    } catch (const CLI::CallForVersion&) {
        out << kVersion << '\n';
        return 0;
    } catch (const CLI::ParseError& e) {
        err << "usage error: " << e.what() << '\n';
        return 2;
    }

    try {
        load_config(ctx, common);
        return run();
    } catch (const UsageError& e) {
        err << e.what() << '\n';
        return 2;
    } catch (const std::exception& e) {
        err << json{{"error", {{"kind", error_kind(e)}, {"message", e.what()}}}}.dump() << '\n';
        return 1;
    }
}

}  // namespace animator
