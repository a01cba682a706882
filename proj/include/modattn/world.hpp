#pragma once

#include <array>
#include <cmath>
#include <cstdint>
#include <optional>
#include <string>
#include <vector>

#include "modattn/nn.hpp"
#include "modattn/util.hpp"

namespace modattn {

// Deterministic 2D tabletop world on the unit workspace [0,1]^2.
// Image convention: x right, y DOWN, so world y maps directly to image rows.
// The arm base sits at the bottom; the staging zone is the top band.

struct Vec2 {
    double x = 0.0, y = 0.0;
    Vec2 operator+(Vec2 o) const { return {x + o.x, y + o.y}; }
    Vec2 operator-(Vec2 o) const { return {x - o.x, y - o.y}; }
    Vec2 operator*(double k) const { return {x * k, y * k}; }
    double norm() const { return std::sqrt(x * x + y * y); }
};
inline double dist(Vec2 a, Vec2 b) { return (a - b).norm(); }

struct Color {
    float r = 0, g = 0, b = 0;
};

enum class ObjectClass : int { Cube = 0, Coke, Pepsi, Carton, Bottle, Bread };
constexpr int kNumObjectClasses = 6;
const char* object_class_name(ObjectClass c);

enum class Task : int { Pick = 0, Push, Putdown };
const char* task_name(Task t);

// World-geometry constants. Thresholds sized so the scripted experts succeed.
namespace geom {
constexpr int kImage = 48;
constexpr double kStepClip = 0.05;       // max end-effector displacement per step
constexpr double kGraspRadius = 0.03;    // closing this near an object binds it
constexpr double kContactRadius = 0.04;  // closed-gripper pushing contact
constexpr double kPushSuccess = 0.15;    // displacement for push success
constexpr double kStagingY = 0.15;       // pick success band: ee.y <= this
constexpr double kGoalRadius = 0.05;     // putdown zone radius
constexpr double kObstacleRadius = 0.06;
constexpr double kIkDamping = 0.1;
}  // namespace geom

enum class RobotId : int { A = 0, B, C };
const char* robot_name(RobotId id);
RobotId robot_from_name(const std::string& s);

// Variants differ in kinematics (link count/lengths, base) and appearance
// (arm color, gripper color and glyph).
struct RobotVariant {
    RobotId id = RobotId::A;
    int links = 2;
    std::array<double, 3> length{};  // first `links` entries used
    Vec2 base;
    Vec2 home_ee;
    Color arm_color;
    Color gripper_color;
    int gripper_glyph = 0;  // 0 square, 1 circle, 2 diamond

    static RobotVariant preset(RobotId id);
};

struct ObjectState {
    ObjectClass cls = ObjectClass::Cube;
    Color color;
    Vec2 pos;
    double sx = 1.0, sy = 1.0;  // glyph scale factors
};

struct Obstacle {
    Vec2 pos;
    double radius = geom::kObstacleRadius;
};

struct OcclusionSpec {
    int size_px = 0;  // black square side, anchored to the target center; 0 = off
};

struct Scenario {
    Task task = Task::Push;
    int target = 0;  // index into the object list
    uint64_t layout_seed = 0;
    OcclusionSpec occlusion;
    std::optional<std::array<Color, 6>> color_remap;
    std::optional<std::array<Vec2, 6>> scale_remap;  // (sx, sy) per object
    bool obstacle = false;
    std::string instruction_override;  // raw text; empty = template-generated
};

struct WorldState {
    std::array<ObjectState, 6> objects;
    RobotVariant robot;
    std::vector<double> joints;  // radians, length robot.links
    double gripper_open = 1.0;   // 1 open, 0 closed
    Vec2 ee;
    std::optional<Obstacle> obstacle;
    int grasped = -1;
    bool collided = false;
    bool released_in_goal = false;
    int target = 0;
    Vec2 target_start;
    Vec2 goal_zone;
    int step_count = 0;
};

// End-effector displacement plus gripper command (1 = close). The
// displacement is norm-clipped to the per-step limit.
struct Action {
    double dx = 0.0, dy = 0.0;
    double gripper = 0.0;

    static Action clipped(double dx, double dy, double gripper) {
        Action a;
        const double n = std::sqrt(dx * dx + dy * dy);
        if (n > geom::kStepClip) {
            dx *= geom::kStepClip / n;
            dy *= geom::kStepClip / n;
        }
        a.dx = dx;
        a.dy = dy;
        a.gripper = std::clamp(gripper, 0.0, 1.0);
        return a;
    }
};

struct Image {
    int h = geom::kImage, w = geom::kImage;
    std::vector<float> px;  // h*w*3, row-major, [0,1]
    float* at(int y, int x) { return px.data() + (y * w + x) * 3; }
    const float* at(int y, int x) const { return px.data() + (y * w + x) * 3; }
};

Vec2 forward_kinematics(const RobotVariant& r, const std::vector<double>& joints);

WorldState reset(uint64_t seed, const Scenario& scenario, const RobotVariant& robot);
WorldState step(const WorldState& state, const Action& action);
Image render(const WorldState& state, const OcclusionSpec& occlusion = {});
bool success(const WorldState& state, const Scenario& scenario);

// World position -> pixel -> row-major patch index.
int world_to_patch(Vec2 pos, const PatchGrid& grid);
inline int world_to_px(double v) {
    return std::clamp(static_cast<int>(v * geom::kImage), 0, geom::kImage - 1);
}

enum class RemapKind { Color, Scale };
Scenario remap_scenario(const Scenario& scenario, RemapKind kind, uint64_t seed);

// Unseen-color palette used by remap_scenario (disjoint from training colors).
struct PaletteEntry {
    const char* name;
    Color color;
};
const std::array<PaletteEntry, 6>& unseen_palette();
Color training_color(ObjectClass cls);

std::string to_ppm(const Image& img);
void write_ppm(const std::string& path, const Image& img);

}  // namespace modattn
