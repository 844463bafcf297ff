#include <doctest.h>

#include <filesystem>
#include <fstream>
#include <sstream>

#include "animator/cli.hpp"
#include "animator/synthetic_world.hpp"

using namespace animator;
namespace fs = std::filesystem;
using json = nlohmann::json;

namespace {

struct Run {
    int code;
    std::string out;
    std::string err;
};

Run run(const std::vector<std::string>& args) {
    std::ostringstream out, err;
    const int code = dispatch(args, out, err);
    return {code, out.str(), err.str()};
}

fs::path scratch(const std::string& name) {
    const fs::path p = fs::temp_directory_path() / ("animator_cli_" + name);
    fs::remove_all(p);
    fs::create_directories(p);
    return p;
}

// Track whose head yaw increases with the frame index.
fs::path monotone_track(const fs::path& dir, std::size_t n) {
    WorldConfig w;
    w.width = w.height = 16;
    w.frames = n;
    w.motion.yaw_start = -1.0;
    w.motion.yaw_end = 1.0;
    w.motion.walk_amplitude = 0.0;
    w.motion.wave_amplitude = 0.0;
    w.motion.drift = 0.0;
    const auto s = generate_sample(w, 5);
    const fs::path p = dir / "poses.json";
    save_pose_track(p, s.track);
    return p;
}

json read(const fs::path& p) {
    std::ifstream in(p);
    return json::parse(in);
}

}  // namespace

TEST_CASE("select-refs on a monotone yaw track") {
    const auto dir = scratch("select");
    const auto poses = monotone_track(dir, 9);
    const auto r = run({"select-refs", "--poses", poses.string()});
    REQUIRE(r.code == 0);
    const auto j = json::parse(r.out);
    CHECK(j["indices"] == json({0, 8, 4}));
    CHECK(j["kinds"][0] == "min_yaw");

    const auto full = json::parse(run({"select-refs", "--poses", poses.string(), "--full-body"}).out);
    CHECK(full["indices"].size() == 4);
}

TEST_CASE("usage errors exit with 2") {
    CHECK(run({}).code == 2);
    CHECK(run({"select-refs", "--poses", "x.json", "--no-such-flag"}).code == 2);
    CHECK(run({"frobnicate"}).code == 2);
    CHECK(run({"train", "--data", "d"}).code == 2);

    const auto dir = scratch("usage");
    const auto poses = monotone_track(dir, 9);
    std::ofstream(dir / "bad.json") << R"({"model": {"c_modle": 32}})";
    const auto bad = run({"select-refs", "--poses", poses.string(), "--config", (dir / "bad.json").string()});
    CHECK(bad.code == 2);
    CHECK(bad.err.find("c_modle") != std::string::npos);
    std::ofstream(dir / "typed.json") << R"({"seed": "seven"})";
    CHECK(run({"select-refs", "--poses", poses.string(), "--config", (dir / "typed.json").string()}).code == 2);
}

TEST_CASE("runtime errors exit with 1 and a JSON message") {
    const auto r = run({"select-refs", "--poses", "/nonexistent/poses.json"});
    CHECK(r.code == 1);
    const auto j = json::parse(r.err);
    CHECK(j.contains("error"));
}

TEST_CASE("identical runs write identical manifests") {
    const auto dir = scratch("manifest");
    const auto poses = monotone_track(dir, 9);
    std::ofstream(dir / "cfg.json") << R"({"world": {"width": 16, "height": 16}})";
    auto once = [&](const std::string& out) {
        const auto r = run({"render-guidance", "--poses", poses.string(), "--out", (dir / out).string(), "--config",
                            (dir / "cfg.json").string(), "--seed", "11", "--strict-deterministic"});
        REQUIRE(r.code == 0);
        return read(dir / out / "run_manifest.json");
    };
    auto a = once("a"), b = once("b");
    CHECK(a["config_hash"] == b["config_hash"]);
    CHECK(a["input_hashes"] == b["input_hashes"]);
    CHECK(a["root_seed"] == 11);
    CHECK(a["version"] == kVersion);
    CHECK(a["provenance"]["world.width"] == "file");
    CHECK(a["provenance"]["seed"] == "flag");
    CHECK(a["provenance"]["model.c_model"] == "default");
    CHECK(a["config"]["world"]["width"] == 16);
    CHECK(fs::exists(dir / "a" / "skeleton" / "00008.png"));
}

TEST_CASE("config helpers") {
    auto cfg = default_run_config();
    const auto h0 = config_hash(cfg);
    cfg.set("train.lr", 1e-3, "flag");
    CHECK(config_hash(cfg) != h0);
    CHECK(cfg.get<double>("train.lr") == 1e-3);
    CHECK_THROWS(cfg.set("train.nope", 1, "flag"));
    CHECK_THROWS(cfg.set("train", 1, "flag"));
    CHECK(derive_seed(1, "a") != derive_seed(1, "b"));
    CHECK(derive_seed(1, "a") != derive_seed(2, "a"));
    CHECK(derive_seed(1, "a") == derive_seed(1, "a"));
}
