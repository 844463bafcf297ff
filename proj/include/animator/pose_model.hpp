#pragma once

#include <cstddef>
#include <filesystem>
#include <optional>
#include <string>
#include <vector>

#include <Eigen/Core>

#include <json.hpp>

namespace animator {

using Vec2 = Eigen::Vector2d;
using Vec3 = Eigen::Vector3d;
using Mat3 = Eigen::Matrix3d;

struct Bone {
    std::size_t parent = 0;
    std::size_t child = 0;
    bool operator==(const Bone&) const = default;
};

// Ordered joint list plus parent links. Bones are derived in a canonical order
// (by child index) so everything downstream is independent of map iteration order.
class KinematicTree {
public:
    KinematicTree() = default;
    // parents[i] < 0 marks the root. Throws ValidationError unless the links form
    // a single rooted tree.
    KinematicTree(std::vector<std::string> joints, std::vector<int> parents);

    // pelvis-rooted 17-joint body: pelvis, spine, chest, neck, head, shoulders,
    // elbows, wrists, hips, knees, ankles.
    static const KinematicTree& standard17();

    std::size_t size() const { return joints_.size(); }
    const std::vector<std::string>& joints() const { return joints_; }
    const std::vector<int>& parents() const { return parents_; }
    const std::vector<Bone>& bones() const { return bones_; }
    std::size_t root() const { return root_; }
    // Joints ordered so every parent precedes its children.
    const std::vector<std::size_t>& topological_order() const { return topo_; }

    std::optional<std::size_t> find(const std::string& name) const;
    std::size_t index_of(const std::string& name) const;
    // Bone whose child is `joint`; throws for the root.
    std::size_t bone_into(std::size_t joint) const;

    bool operator==(const KinematicTree& other) const {
        return joints_ == other.joints_ && parents_ == other.parents_;
    }

private:
    std::vector<std::string> joints_;
    std::vector<int> parents_;
    std::vector<Bone> bones_;
    std::vector<std::size_t> topo_;
    std::vector<std::size_t> bone_of_child_;
    std::size_t root_ = 0;
};

// Per-frame 3D joint positions (metres), indexed like the active tree's joints.
struct JointSet {
    std::vector<Vec3> positions;
};

struct HeadPose {
    double yaw = 0.0;  // radians, each angle in [-pi, pi]
    double pitch = 0.0;
    double roll = 0.0;
    Vec3 center = Vec3::Zero();
    double radius = 0.1;
};

struct Camera {
    double focal = 1.0;
    Vec2 principal_point = Vec2::Zero();
    Mat3 rotation = Mat3::Identity();
    Vec3 translation = Vec3::Zero();

    Vec3 to_camera(const Vec3& p) const { return rotation * p + translation; }
};

struct PoseFrame {
    JointSet joints;
    HeadPose head;
};

struct PoseTrack {
    std::vector<PoseFrame> frames;
    Camera camera;
    double fps = 24.0;
    KinematicTree tree;

    std::size_t size() const { return frames.size(); }
};

struct APoseCalibration {
    JointSet reference_apose;
    JointSet driving_apose;
};

// Validation (ValidationError on failure).
void validate_joint_set(const JointSet& j, const KinematicTree& tree, const std::string& context = {});
void validate_head_pose(const HeadPose& h, const std::string& context = {});
void validate_camera(const Camera& cam);
void validate_track(const PoseTrack& track);

// Pose JSON schema:
// {"fps", "camera": {"focal","principal_point":[u,v],"rotation":[9 row-major],"translation":[3]},
//  "tree": {"joints":[...],"parents":[...]},
//  "frames": [{"joints": {name:[x,y,z]}, "head": {"yaw","pitch","roll","center":[3],"radius"}}]}
PoseTrack parse_pose_track(const nlohmann::json& doc);
nlohmann::json pose_track_to_json(const PoseTrack& track);
PoseTrack load_pose_track(const std::filesystem::path& path);
void save_pose_track(const std::filesystem::path& path, const PoseTrack& track);

// Pinhole projection: extrinsic, perspective divide, focal scale, principal point.
Vec2 project_point(const Vec3& p, const Camera& cam);

// Length of every bone in tree.bones() order.
std::vector<double> bone_lengths(const JointSet& j, const KinematicTree& tree);

// Re-grow the skeleton from the root with per-bone length ratios, keeping every
// bone direction and the root position.
JointSet regrow_skeleton(const JointSet& j, const KinematicTree& tree, const std::vector<double>& ratios);

// Bone length adjustment: every driving bone is scaled by
// len_ref(b) / len_drv(b) measured on the A-pose calibration pair.
PoseTrack retarget_track(const PoseTrack& track, const APoseCalibration& calib);

}  // namespace animator
