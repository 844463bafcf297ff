#include "animator/pose_model.hpp"

#include <cmath>
#include <fstream>
#include <numbers>

#include <Eigen/Dense>

#include "animator/error.hpp"

namespace animator {

using nlohmann::json;

KinematicTree::KinematicTree(std::vector<std::string> joints, std::vector<int> parents)
    : joints_(std::move(joints)), parents_(std::move(parents)) {
    const std::size_t n = joints_.size();
    if (n == 0) throw ValidationError("kinematic tree has no joints");
    if (parents_.size() != n) throw ValidationError("tree parents length differs from joints length");
    for (std::size_t i = 0; i < n; ++i) {
        for (std::size_t k = i + 1; k < n; ++k) {
            if (joints_[i] == joints_[k]) throw ValidationError("duplicate joint name '" + joints_[i] + "'");
        }
    }

    std::size_t roots = 0;
    for (std::size_t i = 0; i < n; ++i) {
        const int p = parents_[i];
        if (p < 0) {
            ++roots;
            root_ = i;
        } else if (static_cast<std::size_t>(p) >= n || static_cast<std::size_t>(p) == i) {
            throw ValidationError("joint '" + joints_[i] + "' has invalid parent index " + std::to_string(p));
        }
    }
    if (roots != 1) throw ValidationError("tree must have exactly one root, found " + std::to_string(roots));

    // Walk up from every joint; a cycle never reaches the root.
    for (std::size_t i = 0; i < n; ++i) {
        std::size_t cur = i;
        for (std::size_t steps = 0; parents_[cur] >= 0; ++steps) {
            if (steps > n) throw ValidationError("tree contains a cycle through '" + joints_[i] + "'");
            cur = static_cast<std::size_t>(parents_[cur]);
        }
    }

    bone_of_child_.assign(n, n);
    for (std::size_t i = 0; i < n; ++i) {
        if (parents_[i] >= 0) {
            bone_of_child_[i] = bones_.size();
            bones_.push_back({static_cast<std::size_t>(parents_[i]), i});
        }
    }

    // Breadth-first from the root, children in index order.
    topo_.push_back(root_);
    for (std::size_t head = 0; head < topo_.size(); ++head) {
        for (std::size_t i = 0; i < n; ++i) {
            if (parents_[i] == static_cast<int>(topo_[head])) topo_.push_back(i);
        }
    }
}

const KinematicTree& KinematicTree::standard17() {
    static const KinematicTree tree(
        {"pelvis", "spine", "chest", "neck", "head", "l_shoulder", "l_elbow", "l_wrist", "r_shoulder", "r_elbow",
         "r_wrist", "l_hip", "l_knee", "l_ankle", "r_hip", "r_knee", "r_ankle"},
        {-1, 0, 1, 2, 3, 2, 5, 6, 2, 8, 9, 0, 11, 12, 0, 14, 15});
    return tree;
}

std::optional<std::size_t> KinematicTree::find(const std::string& name) const {
    for (std::size_t i = 0; i < joints_.size(); ++i) {
        if (joints_[i] == name) return i;
    }
    return std::nullopt;
}

std::size_t KinematicTree::index_of(const std::string& name) const {
    auto i = find(name);
    if (!i) throw ValidationError("unknown joint '" + name + "'");
    return *i;
}

std::size_t KinematicTree::bone_into(std::size_t joint) const {
    if (joint >= bone_of_child_.size() || bone_of_child_[joint] >= bones_.size()) {
        throw ValidationError("joint index " + std::to_string(joint) + " has no incoming bone");
    }
    return bone_of_child_[joint];
}

// ---------------------------------------------------------------------------
// validation

namespace {

std::string ctx(const std::string& context) { return context.empty() ? std::string() : context + ": "; }

bool finite(const Vec3& v) { return v.allFinite(); }

}  // namespace

void validate_joint_set(const JointSet& j, const KinematicTree& tree, const std::string& context) {
    if (j.positions.size() != tree.size()) {
        throw ValidationError(ctx(context) + "joint set has " + std::to_string(j.positions.size()) + " joints, tree has " +
                              std::to_string(tree.size()));
    }
    for (std::size_t i = 0; i < tree.size(); ++i) {
        if (!finite(j.positions[i])) throw ValidationError(ctx(context) + "joint '" + tree.joints()[i] + "' is not finite");
    }
}

void validate_head_pose(const HeadPose& h, const std::string& context) {
    const double pi = std::numbers::pi;
    const std::pair<const char*, double> angles[] = {{"yaw", h.yaw}, {"pitch", h.pitch}, {"roll", h.roll}};
    for (const auto& [name, a] : angles) {
        if (!std::isfinite(a) || a < -pi || a > pi) {
            throw ValidationError(ctx(context) + "head " + name + " = " + std::to_string(a) + " outside [-pi, pi]");
        }
    }
    if (!finite(h.center)) throw ValidationError(ctx(context) + "head center is not finite");
    if (!std::isfinite(h.radius) || h.radius <= 0.0) throw ValidationError(ctx(context) + "head radius must be > 0");
}

void validate_camera(const Camera& cam) {
    if (!std::isfinite(cam.focal) || cam.focal <= 0.0) throw ValidationError("camera focal must be > 0");
    if (!cam.principal_point.allFinite() || !cam.translation.allFinite() || !cam.rotation.allFinite()) {
        throw ValidationError("camera parameters must be finite");
    }
    const double err = (cam.rotation * cam.rotation.transpose() - Mat3::Identity()).cwiseAbs().maxCoeff();
    if (err > 1e-6) throw ValidationError("camera rotation is not orthonormal (error " + std::to_string(err) + ")");
}

void validate_track(const PoseTrack& track) {
    if (track.frames.empty()) throw ValidationError("pose track has no frames");
    if (!std::isfinite(track.fps) || track.fps <= 0.0) throw ValidationError("fps must be > 0");
    validate_camera(track.camera);
    for (std::size_t f = 0; f < track.frames.size(); ++f) {
        const std::string where = "frame " + std::to_string(f);
        validate_joint_set(track.frames[f].joints, track.tree, where);
        validate_head_pose(track.frames[f].head, where);
        for (std::size_t i = 0; i < track.tree.size(); ++i) {
            if (track.camera.to_camera(track.frames[f].joints.positions[i]).z() <= 0.0) {
                throw ValidationError(where + ": joint '" + track.tree.joints()[i] + "' has non-positive depth");
            }
        }
    }
}

// ---------------------------------------------------------------------------
// JSON

namespace {

double num(const json& j, const std::string& where) {
    if (!j.is_number()) throw ParseError(where + " must be a number");
    return j.get<double>();
}

template <int N>
Eigen::Matrix<double, N, 1> vec(const json& j, const std::string& where) {
    if (!j.is_array() || j.size() != static_cast<std::size_t>(N)) {
        throw ParseError(where + " must be an array of " + std::to_string(N) + " numbers");
    }
    Eigen::Matrix<double, N, 1> v;
    for (int i = 0; i < N; ++i) v[i] = num(j[static_cast<std::size_t>(i)], where);
    return v;
}

const json& field(const json& obj, const char* key, const std::string& where) {
    if (!obj.is_object()) throw ParseError(where + " must be an object");
    auto it = obj.find(key);
    if (it == obj.end()) throw ParseError(where + " is missing \"" + key + "\"");
    return *it;
}

json vec_json(const Eigen::Ref<const Eigen::VectorXd>& v) {
    json a = json::array();
    for (Eigen::Index i = 0; i < v.size(); ++i) a.push_back(v[i]);
    return a;
}

}  // namespace

PoseTrack parse_pose_track(const json& doc) {
    PoseTrack track;
    track.fps = num(field(doc, "fps", "document"), "fps");

    const json& cam = field(doc, "camera", "document");
    track.camera.focal = num(field(cam, "focal", "camera"), "camera.focal");
    track.camera.principal_point = vec<2>(field(cam, "principal_point", "camera"), "camera.principal_point");
    const json& rot = field(cam, "rotation", "camera");
    if (!rot.is_array() || rot.size() != 9) throw ParseError("camera.rotation must hold 9 row-major numbers");
    for (int r = 0; r < 3; ++r)
        for (int c = 0; c < 3; ++c) track.camera.rotation(r, c) = num(rot[static_cast<std::size_t>(r * 3 + c)], "camera.rotation");
    track.camera.translation = vec<3>(field(cam, "translation", "camera"), "camera.translation");

    const json& tree = field(doc, "tree", "document");
    const json& names = field(tree, "joints", "tree");
    const json& parents = field(tree, "parents", "tree");
    if (!names.is_array() || !parents.is_array()) throw ParseError("tree.joints and tree.parents must be arrays");
    std::vector<std::string> joint_names;
    std::vector<int> parent_idx;
    for (const auto& n : names) {
        if (!n.is_string()) throw ParseError("tree.joints entries must be strings");
        joint_names.push_back(n.get<std::string>());
    }
    for (const auto& p : parents) {
        if (!p.is_number_integer()) throw ParseError("tree.parents entries must be integers");
        parent_idx.push_back(p.get<int>());
    }
    track.tree = KinematicTree(std::move(joint_names), std::move(parent_idx));

    const json& frames = field(doc, "frames", "document");
    if (!frames.is_array()) throw ParseError("frames must be an array");
    for (std::size_t f = 0; f < frames.size(); ++f) {
        const std::string where = "frame " + std::to_string(f);
        const json& fr = frames[f];
        const json& joints = field(fr, "joints", where);
        if (!joints.is_object()) throw ParseError(where + ": joints must be an object");
        PoseFrame frame;
        frame.joints.positions.resize(track.tree.size());
        for (std::size_t i = 0; i < track.tree.size(); ++i) {
            const auto& name = track.tree.joints()[i];
            auto it = joints.find(name);
            if (it == joints.end()) throw ValidationError(where + ": missing joint '" + name + "'");
            frame.joints.positions[i] = vec<3>(*it, where + ", joint '" + name + "'");
        }
        for (const auto& [name, _] : joints.items()) {
            if (!track.tree.find(name)) throw ParseError(where + ": joint '" + name + "' is not in the tree");
        }
        const json& head = field(fr, "head", where);
        frame.head.yaw = num(field(head, "yaw", where + " head"), where + " head.yaw");
        frame.head.pitch = num(field(head, "pitch", where + " head"), where + " head.pitch");
        frame.head.roll = num(field(head, "roll", where + " head"), where + " head.roll");
        frame.head.center = vec<3>(field(head, "center", where + " head"), where + " head.center");
        frame.head.radius = num(field(head, "radius", where + " head"), where + " head.radius");
        track.frames.push_back(std::move(frame));
    }
    validate_track(track);
    return track;
}

json pose_track_to_json(const PoseTrack& track) {
    json rot = json::array();
    for (int r = 0; r < 3; ++r)
        for (int c = 0; c < 3; ++c) rot.push_back(track.camera.rotation(r, c));
    json doc = {
        {"fps", track.fps},
        {"camera",
         {{"focal", track.camera.focal},
          {"principal_point", vec_json(track.camera.principal_point)},
          {"rotation", rot},
          {"translation", vec_json(track.camera.translation)}}},
        {"tree", {{"joints", track.tree.joints()}, {"parents", track.tree.parents()}}},
    };
    json frames = json::array();
    for (const auto& f : track.frames) {
        json joints = json::object();
        for (std::size_t i = 0; i < track.tree.size(); ++i) joints[track.tree.joints()[i]] = vec_json(f.joints.positions[i]);
        frames.push_back({{"joints", joints},
                          {"head",
                           {{"yaw", f.head.yaw},
                            {"pitch", f.head.pitch},
                            {"roll", f.head.roll},
                            {"center", vec_json(f.head.center)},
                            {"radius", f.head.radius}}}});
    }
    doc["frames"] = std::move(frames);
    return doc;
}

PoseTrack load_pose_track(const std::filesystem::path& path) {
    std::ifstream in(path);
    if (!in) throw ParseError("cannot open pose file " + path.string());
    json doc;
    try {
        doc = json::parse(in);
    } catch (const json::out_of_range& e) {
        throw ValidationError(path.string() + ": non-finite coordinate (" + e.what() + ")");
    } catch (const json::exception& e) {
        throw ParseError(path.string() + ": " + e.what());
    }
    return parse_pose_track(doc);
}

void save_pose_track(const std::filesystem::path& path, const PoseTrack& track) {
    std::ofstream out(path);
    if (!out) throw Error("cannot write " + path.string());
    out << pose_track_to_json(track).dump(1) << '\n';
}

// ---------------------------------------------------------------------------
// geometry

Vec2 project_point(const Vec3& p, const Camera& cam) {
    const Vec3 pc = cam.to_camera(p);
    if (!(pc.z() > 0.0)) throw ProjectionError("point has non-positive depth " + std::to_string(pc.z()));
    return {cam.focal * pc.x() / pc.z() + cam.principal_point.x(), cam.focal * pc.y() / pc.z() + cam.principal_point.y()};
}

std::vector<double> bone_lengths(const JointSet& j, const KinematicTree& tree) {
    validate_joint_set(j, tree);
    std::vector<double> out;
    out.reserve(tree.bones().size());
    for (const auto& b : tree.bones()) {
        const double len = (j.positions[b.child] - j.positions[b.parent]).norm();
        if (!(len > 0.0)) {
            throw DegeneratePoseError("bone " + tree.joints()[b.parent] + "->" + tree.joints()[b.child] + " has zero length");
        }
        out.push_back(len);
    }
    return out;
}

JointSet regrow_skeleton(const JointSet& j, const KinematicTree& tree, const std::vector<double>& ratios) {
    if (ratios.size() != tree.bones().size()) throw ValidationError("one ratio per bone required");
    JointSet out;
    out.positions.resize(tree.size());
    out.positions[tree.root()] = j.positions[tree.root()];
    for (std::size_t joint : tree.topological_order()) {
        if (joint == tree.root()) continue;
        const std::size_t b = tree.bone_into(joint);
        const std::size_t parent = tree.bones()[b].parent;
        out.positions[joint] = out.positions[parent] + ratios[b] * (j.positions[joint] - j.positions[parent]);
    }
    return out;
}

PoseTrack retarget_track(const PoseTrack& track, const APoseCalibration& calib) {
    const auto& tree = track.tree;
    const auto ref = bone_lengths(calib.reference_apose, tree);
    const auto drv = bone_lengths(calib.driving_apose, tree);
    std::vector<double> ratios(ref.size());
    for (std::size_t b = 0; b < ref.size(); ++b) ratios[b] = ref[b] / drv[b];

    const auto head_joint = tree.find("head");
    const double head_ratio = head_joint ? ratios[tree.bone_into(*head_joint)] : 1.0;

    PoseTrack out = track;
    for (std::size_t f = 0; f < track.frames.size(); ++f) {
        const auto& src = track.frames[f];
        auto& dst = out.frames[f];
        dst.joints = regrow_skeleton(src.joints, tree, ratios);
        dst.head.radius = src.head.radius * head_ratio;
        if (head_joint) {
            // The head centre rides on the head joint with its offset scaled like the head bone.
            const Vec3 offset = src.head.center - src.joints.positions[*head_joint];
            dst.head.center = dst.joints.positions[*head_joint] + head_ratio * offset;
        }
    }
    return out;
}

}  // namespace animator
