#include "modattn/world.hpp"

#include <algorithm>

namespace modattn {

const char* object_class_name(ObjectClass c) {
    switch (c) {
        case ObjectClass::Cube: return "cube";
        case ObjectClass::Coke: return "coke";
        case ObjectClass::Pepsi: return "pepsi";
        case ObjectClass::Carton: return "carton";
        case ObjectClass::Bottle: return "bottle";
        case ObjectClass::Bread: return "bread";
    }
    return "?";
}

const char* task_name(Task t) {
    switch (t) {
        case Task::Pick: return "pick";
        case Task::Push: return "push";
        case Task::Putdown: return "putdown";
    }
    return "?";
}

const char* robot_name(RobotId id) {
    switch (id) {
        case RobotId::A: return "A";
        case RobotId::B: return "B";
        case RobotId::C: return "C";
    }
    return "?";
}

RobotId robot_from_name(const std::string& s) {
    if (s == "A" || s == "a") return RobotId::A;
    if (s == "B" || s == "b") return RobotId::B;
    if (s == "C" || s == "c") return RobotId::C;
    throw ConfigError("unknown robot variant '" + s + "' (expected A, B or C)");
}

Color training_color(ObjectClass cls) {
    switch (cls) {
        case ObjectClass::Cube: return {0.88f, 0.16f, 0.12f};
        case ObjectClass::Coke: return {0.72f, 0.04f, 0.08f};
        case ObjectClass::Pepsi: return {0.12f, 0.25f, 0.80f};
        case ObjectClass::Carton: return {0.92f, 0.92f, 0.88f};
        case ObjectClass::Bottle: return {0.10f, 0.65f, 0.18f};
        case ObjectClass::Bread: return {0.62f, 0.42f, 0.16f};
    }
    return {};
}

const std::array<PaletteEntry, 6>& unseen_palette() {
    static const std::array<PaletteEntry, 6> p{{
        {"purple", {0.55f, 0.15f, 0.75f}},
        {"cyan", {0.10f, 0.80f, 0.85f}},
        {"orange", {0.95f, 0.55f, 0.10f}},
        {"pink", {0.95f, 0.45f, 0.70f}},
        {"teal", {0.10f, 0.55f, 0.50f}},
        {"navy", {0.08f, 0.12f, 0.45f}},
    }};
    return p;
}

RobotVariant RobotVariant::preset(RobotId id) {
    RobotVariant r;
    r.id = id;
    switch (id) {
        case RobotId::A:
            r.links = 2;
            r.length = {0.55, 0.52, 0.0};
            r.base = {0.50, 0.985};
            r.home_ee = {0.50, 0.74};
            r.arm_color = {0.62f, 0.62f, 0.66f};
            r.gripper_color = {0.95f, 0.80f, 0.15f};
            r.gripper_glyph = 0;
            break;
        case RobotId::B:
            r.links = 3;
            r.length = {0.42, 0.36, 0.30};
            r.base = {0.34, 0.985};
            r.home_ee = {0.44, 0.72};
            r.arm_color = {0.48f, 0.56f, 0.68f};
            r.gripper_color = {0.90f, 0.20f, 0.80f};
            r.gripper_glyph = 1;
            break;
        case RobotId::C:
            r.links = 3;
            r.length = {0.50, 0.34, 0.26};
            r.base = {0.66, 0.985};
            r.home_ee = {0.56, 0.72};
            r.arm_color = {0.66f, 0.58f, 0.50f};
            r.gripper_color = {0.15f, 0.85f, 0.90f};
            r.gripper_glyph = 2;
            break;
    }
    return r;
}

Vec2 forward_kinematics(const RobotVariant& r, const std::vector<double>& joints) {
    Vec2 p = r.base;
    double phi = 0.0;
    for (int i = 0; i < r.links; ++i) {
        phi += joints[static_cast<size_t>(i)];
        p.x += r.length[static_cast<size_t>(i)] * std::cos(phi);
        p.y += r.length[static_cast<size_t>(i)] * std::sin(phi);
    }
    return p;
}

namespace {

// One damped-least-squares update toward `target`.
void ik_iterate(const RobotVariant& r, std::vector<double>& joints, Vec2 target) {
    const int n = r.links;
    // joint positions and cumulative angles
    std::array<Vec2, 4> pts;
    std::array<double, 3> phi{};
    pts[0] = r.base;
    double acc = 0.0;
    for (int i = 0; i < n; ++i) {
        acc += joints[static_cast<size_t>(i)];
        phi[static_cast<size_t>(i)] = acc;
        pts[static_cast<size_t>(i + 1)] =
            pts[static_cast<size_t>(i)] +
            Vec2{r.length[static_cast<size_t>(i)] * std::cos(acc),
                 r.length[static_cast<size_t>(i)] * std::sin(acc)};
    }
    const Vec2 ee = pts[static_cast<size_t>(n)];
    const Vec2 e{target.x - ee.x, target.y - ee.y};

    // J columns: d ee / d theta_i
    std::array<double, 3> jx{}, jy{};
    for (int i = 0; i < n; ++i) {
        double cx = 0.0, cy = 0.0;
        for (int k = i; k < n; ++k) {
            cx += -r.length[static_cast<size_t>(k)] * std::sin(phi[static_cast<size_t>(k)]);
            cy += r.length[static_cast<size_t>(k)] * std::cos(phi[static_cast<size_t>(k)]);
        }
        jx[static_cast<size_t>(i)] = cx;
        jy[static_cast<size_t>(i)] = cy;
    }

    // A = J J^T + lambda^2 I (2x2), solve A z = e, dtheta = J^T z
    const double lam2 = geom::kIkDamping * geom::kIkDamping;
    double a00 = lam2, a01 = 0.0, a11 = lam2;
    for (int i = 0; i < n; ++i) {
        a00 += jx[static_cast<size_t>(i)] * jx[static_cast<size_t>(i)];
        a01 += jx[static_cast<size_t>(i)] * jy[static_cast<size_t>(i)];
        a11 += jy[static_cast<size_t>(i)] * jy[static_cast<size_t>(i)];
    }
    const double det = a00 * a11 - a01 * a01;
    if (std::abs(det) < 1e-12) return;
    const double zx = (a11 * e.x - a01 * e.y) / det;
    const double zy = (a00 * e.y - a01 * e.x) / det;
    for (int i = 0; i < n; ++i)
        joints[static_cast<size_t>(i)] += jx[static_cast<size_t>(i)] * zx + jy[static_cast<size_t>(i)] * zy;
}

void ik_solve(const RobotVariant& r, std::vector<double>& joints, Vec2 target, int iters) {
    for (int i = 0; i < iters; ++i) {
        ik_iterate(r, joints, target);
        if (dist(forward_kinematics(r, joints), target) < 1e-4) return;
    }
    // slow convergence near folds/stretch: walk the target in from the
    // current pose instead of jumping to it
    const Vec2 from = forward_kinematics(r, joints);
    if (dist(from, target) < 1e-4) return;
    for (int sub = 1; sub <= 10; ++sub) {
        const double t = sub / 10.0;
        const Vec2 waypoint{from.x + (target.x - from.x) * t, from.y + (target.y - from.y) * t};
        for (int i = 0; i < 30; ++i) {
            ik_iterate(r, joints, waypoint);
            if (dist(forward_kinematics(r, joints), waypoint) < 1e-5) break;
        }
    }
}

std::vector<double> canonical_start(const RobotVariant& r) {
    switch (r.id) {
        case RobotId::A: return {-1.9, 1.0};
        case RobotId::B: return {-1.8, 0.7, 0.5};
        case RobotId::C: return {-1.5, 0.6, 0.4};
    }
    return {};
}

constexpr double kObjMinDist = 0.18;
constexpr double kPlaceX0 = 0.10, kPlaceX1 = 0.90;
constexpr double kPlaceY0 = 0.17, kPlaceY1 = 0.68;

}  // namespace

WorldState reset(uint64_t seed, const Scenario& scenario, const RobotVariant& robot) {
    Rng rng(derive_seed(seed, scenario.layout_seed));
    WorldState s;
    s.robot = robot;
    s.target = scenario.target;
    if (scenario.target < 0 || scenario.target >= 6)
        throw ScenarioError("scenario target index out of range");

    // home pose: canonical joints refined toward the variant's home point
    s.joints = canonical_start(robot);
    ik_solve(robot, s.joints, robot.home_ee, 60);
    s.ee = forward_kinematics(robot, s.joints);

    // six non-overlapping objects via rejection sampling
    bool placed = false;
    for (int attempt = 0; attempt < 100 && !placed; ++attempt) {
        std::array<Vec2, 6> pos;
        bool ok = true;
        for (int i = 0; i < 6 && ok; ++i) {
            bool found = false;
            for (int t = 0; t < 40 && !found; ++t) {
                Vec2 p{rng.uniform(kPlaceX0, kPlaceX1), rng.uniform(kPlaceY0, kPlaceY1)};
                bool clear = dist(p, s.ee) > 0.10;
                for (int j = 0; j < i && clear; ++j)
                    if (dist(p, pos[static_cast<size_t>(j)]) < kObjMinDist) clear = false;
                if (clear) {
                    pos[static_cast<size_t>(i)] = p;
                    found = true;
                }
            }
            ok = found;
        }
        if (ok) {
            for (int i = 0; i < 6; ++i) {
                auto& o = s.objects[static_cast<size_t>(i)];
                o.cls = static_cast<ObjectClass>(i);
                o.color = scenario.color_remap ? (*scenario.color_remap)[static_cast<size_t>(i)]
                                               : training_color(o.cls);
                o.pos = pos[static_cast<size_t>(i)];
                if (scenario.scale_remap) {
                    o.sx = (*scenario.scale_remap)[static_cast<size_t>(i)].x;
                    o.sy = (*scenario.scale_remap)[static_cast<size_t>(i)].y;
                }
            }
            placed = true;
        }
    }
    if (!placed) throw ScenarioError("could not place six objects after 100 layout attempts");

    // goal zone clear of objects
    for (int t = 0; t < 200; ++t) {
        Vec2 p{rng.uniform(0.15, 0.85), rng.uniform(0.20, 0.62)};
        bool clear = true;
        for (const auto& o : s.objects)
            if (dist(p, o.pos) < 0.15) clear = false;
        if (clear || t == 199) {
            s.goal_zone = p;
            break;
        }
    }

    if (scenario.obstacle) {
        const Vec2 tgt = s.objects[static_cast<size_t>(s.target)].pos;
        const Vec2 mid{(s.ee.x + tgt.x) * 0.5, (s.ee.y + tgt.y) * 0.5};
        Obstacle ob;
        double best = -1e9;
        for (int t = 0; t < 50; ++t) {
            Vec2 p{mid.x + 0.05 * rng.normal(), mid.y + 0.05 * rng.normal()};
            p.x = std::clamp(p.x, 0.08, 0.92);
            p.y = std::clamp(p.y, 0.12, 0.90);
            const double dt = dist(p, tgt), de = dist(p, s.ee);
            if (dt > 0.15 && de > 0.10) {
                ob.pos = p;
                break;
            }
            const double score = std::min(dt - 0.15, de - 0.10);
            if (score > best) {
                best = score;
                ob.pos = p;
            }
        }
        s.obstacle = ob;
    }

    // putdown episodes start holding the target at the home pose
    if (scenario.task == Task::Putdown) {
        s.grasped = s.target;
        s.gripper_open = 0.0;
        s.objects[static_cast<size_t>(s.target)].pos = s.ee;
    }
    s.target_start = s.objects[static_cast<size_t>(s.target)].pos;
    return s;
}

WorldState step(const WorldState& state, const Action& action) {
    WorldState s = state;
    const Action a = Action::clipped(action.dx, action.dy, action.gripper);

    Vec2 target{std::clamp(s.ee.x + a.dx, 0.02, 0.98), std::clamp(s.ee.y + a.dy, 0.02, 0.98)};
    const Vec2 prev_ee = s.ee;
    ik_solve(s.robot, s.joints, target, 80);
    s.ee = forward_kinematics(s.robot, s.joints);

    const double prev_open = s.gripper_open;
    s.gripper_open = 1.0 - a.gripper;
    const bool closing = prev_open >= 0.5 && s.gripper_open < 0.5;
    const bool closed = s.gripper_open < 0.5;

    if (s.grasped >= 0) {
        if (!closed) {
            // release: latch putdown success at the release point
            const bool was_target = s.grasped == s.target;
            const Vec2 at = s.objects[static_cast<size_t>(s.grasped)].pos;
            if (was_target && dist(at, s.goal_zone) <= geom::kGoalRadius) s.released_in_goal = true;
            s.grasped = -1;
        } else {
            s.objects[static_cast<size_t>(s.grasped)].pos = s.ee;
        }
    } else if (closing) {
        int best = -1;
        double best_d = geom::kGraspRadius;
        for (int i = 0; i < 6; ++i) {
            const double d = dist(s.objects[static_cast<size_t>(i)].pos, s.ee);
            if (d <= best_d) {
                best_d = d;
                best = i;
            }
        }
        if (best >= 0) {
            s.grasped = best;
            s.objects[static_cast<size_t>(best)].pos = s.ee;
        }
    }

    // closed-gripper pushing: contacted objects are expelled along the contact
    // normal. Contact is swept along the step's ee path (the per-step motion
    // can exceed the contact radius), and a normal opposing the motion has its
    // backward component reflected forward so objects never tunnel behind.
    if (closed) {
        const Vec2 motion = s.ee - prev_ee;
        const double mlen = motion.norm();
        for (int i = 0; i < 6; ++i) {
            if (i == s.grasped) continue;
            auto& o = s.objects[static_cast<size_t>(i)];
            double tseg = 0.0;
            if (mlen > 1e-12) {
                const Vec2 rel = o.pos - prev_ee;
                tseg = std::clamp((rel.x * motion.x + rel.y * motion.y) / (mlen * mlen), 0.0, 1.0);
            }
            const Vec2 closest = prev_ee + motion * tseg;
            if (dist(o.pos, closest) >= geom::kContactRadius &&
                dist(o.pos, s.ee) >= geom::kContactRadius)
                continue;
            Vec2 n = o.pos - s.ee;
            if (mlen > 1e-12) {
                const Vec2 mh = motion * (1.0 / mlen);
                const double along = n.x * mh.x + n.y * mh.y;
                if (along < 0) n = n - mh * (2.0 * along);
            }
            if (n.norm() < 1e-9) n = mlen > 1e-12 ? motion : Vec2{1.0, 0.0};
            o.pos = s.ee + n * (geom::kContactRadius / n.norm());
            o.pos.x = std::clamp(o.pos.x, 0.03, 0.97);
            o.pos.y = std::clamp(o.pos.y, 0.03, 0.97);
        }
    }

    if (s.obstacle && dist(s.ee, s.obstacle->pos) < s.obstacle->radius) s.collided = true;

    ++s.step_count;
    return s;
}

bool success(const WorldState& s, const Scenario& sc) {
    if (sc.obstacle && s.collided) return false;
    const auto& target = s.objects[static_cast<size_t>(s.target)];
    switch (sc.task) {
        case Task::Pick:
            return s.grasped == s.target && s.ee.y <= geom::kStagingY;
        case Task::Push:
            return dist(target.pos, s.target_start) >= geom::kPushSuccess;
        case Task::Putdown:
            return s.released_in_goal;
    }
    return false;
}

int world_to_patch(Vec2 pos, const PatchGrid& grid) {
    const int px = std::clamp(static_cast<int>(pos.x * grid.width), 0, grid.width - 1);
    const int py = std::clamp(static_cast<int>(pos.y * grid.height), 0, grid.height - 1);
    return (py / grid.stride) * grid.patches_per_row() + (px / grid.stride);
}

Scenario remap_scenario(const Scenario& scenario, RemapKind kind, uint64_t seed) {
    Rng rng(derive_seed(seed, 0x7265'6d61'70ull));
    Scenario out = scenario;
    if (kind == RemapKind::Color) {
        // random palette permutation; no object keeps a training color
        std::vector<int> perm{0, 1, 2, 3, 4, 5};
        rng.shuffle(perm);
        std::array<Color, 6> remap;
        for (int i = 0; i < 6; ++i)
            remap[static_cast<size_t>(i)] = unseen_palette()[static_cast<size_t>(perm[static_cast<size_t>(i)])].color;
        out.color_remap = remap;
        out.instruction_override =
            std::string("push the ") +
            unseen_palette()[static_cast<size_t>(perm[static_cast<size_t>(scenario.target)])].name +
            " object";
    } else {
        std::array<Vec2, 6> remap;
        for (int i = 0; i < 6; ++i) {
            Vec2 sc{1.0, 1.0};
            const int dims = 1 + rng.uniform_int(2);  // 1 or 2 dimensions modified
            if (dims == 2) {
                sc.x = rng.uniform(0.5, 3.0);
                sc.y = rng.uniform(0.5, 3.0);
            } else if (rng.uniform_int(2) == 0) {
                sc.x = rng.uniform(0.5, 3.0);
            } else {
                sc.y = rng.uniform(0.5, 3.0);
            }
            remap[static_cast<size_t>(i)] = sc;
        }
        out.scale_remap = remap;
    }
    return out;
}

// ---------------------------------------------------------------------------
// Rasterizer. Pure integer/pixel-loop drawing; bit-identical across calls.
// ---------------------------------------------------------------------------
namespace {

void put(Image& img, int x, int y, Color c) {
    if (x < 0 || y < 0 || x >= img.w || y >= img.h) return;
    float* p = img.at(y, x);
    p[0] = c.r;
    p[1] = c.g;
    p[2] = c.b;
}

void fill_rect(Image& img, int cx, int cy, int hx, int hy, Color c) {
    for (int y = cy - hy; y <= cy + hy; ++y)
        for (int x = cx - hx; x <= cx + hx; ++x) put(img, x, y, c);
}

void fill_ellipse(Image& img, int cx, int cy, double rx, double ry, Color c) {
    const int bx = static_cast<int>(rx) + 1, by = static_cast<int>(ry) + 1;
    for (int y = -by; y <= by; ++y)
        for (int x = -bx; x <= bx; ++x) {
            const double u = x / rx, v = y / ry;
            if (u * u + v * v <= 1.0) put(img, cx + x, cy + y, c);
        }
}

void fill_triangle(Image& img, int cx, int cy, int hx, int hy, Color c) {
    // apex up, flat base down
    for (int y = -hy; y <= hy; ++y) {
        const double t = (y + hy) / static_cast<double>(2 * hy);  // 0 apex .. 1 base
        const int half = static_cast<int>(t * hx + 0.5);
        for (int x = -half; x <= half; ++x) put(img, cx + x, cy + y, c);
    }
}

void draw_line(Image& img, Vec2 a, Vec2 b, double half_width_px, Color c) {
    const double ax = a.x * geom::kImage, ay = a.y * geom::kImage;
    const double bx = b.x * geom::kImage, by = b.y * geom::kImage;
    const int x0 = std::max(0, static_cast<int>(std::min(ax, bx) - half_width_px - 1));
    const int x1 = std::min(geom::kImage - 1, static_cast<int>(std::max(ax, bx) + half_width_px + 1));
    const int y0 = std::max(0, static_cast<int>(std::min(ay, by) - half_width_px - 1));
    const int y1 = std::min(geom::kImage - 1, static_cast<int>(std::max(ay, by) + half_width_px + 1));
    const double dx = bx - ax, dy = by - ay;
    const double len2 = dx * dx + dy * dy;
    for (int y = y0; y <= y1; ++y)
        for (int x = x0; x <= x1; ++x) {
            const double px = x + 0.5 - ax, py = y + 0.5 - ay;
            double t = len2 > 1e-12 ? (px * dx + py * dy) / len2 : 0.0;
            t = std::clamp(t, 0.0, 1.0);
            const double ex = px - t * dx, ey = py - t * dy;
            if (ex * ex + ey * ey <= half_width_px * half_width_px) put(img, x, y, c);
        }
}

void draw_object(Image& img, const ObjectState& o) {
    const int cx = world_to_px(o.pos.x), cy = world_to_px(o.pos.y);
    const double sx = o.sx, sy = o.sy;
    switch (o.cls) {
        case ObjectClass::Cube:
            fill_rect(img, cx, cy, std::max(1, static_cast<int>(4 * sx + 0.5)),
                      std::max(1, static_cast<int>(4 * sy + 0.5)), o.color);
            break;
        case ObjectClass::Coke:
            fill_ellipse(img, cx, cy, std::max(1.0, 5.0 * sx), std::max(1.0, 5.0 * sy), o.color);
            break;
        case ObjectClass::Pepsi:
            fill_ellipse(img, cx, cy, std::max(1.0, 5.0 * sx), std::max(1.0, 5.0 * sy), o.color);
            break;
        case ObjectClass::Carton:
            fill_rect(img, cx, cy, std::max(1, static_cast<int>(3 * sx + 0.5)),
                      std::max(1, static_cast<int>(5 * sy + 0.5)), o.color);
            break;
        case ObjectClass::Bottle:
            fill_triangle(img, cx, cy, std::max(1, static_cast<int>(5 * sx + 0.5)),
                          std::max(1, static_cast<int>(5 * sy + 0.5)), o.color);
            break;
        case ObjectClass::Bread:
            fill_ellipse(img, cx, cy, std::max(1.0, 6.0 * sx), std::max(1.0, 3.5 * sy), o.color);
            break;
    }
}

void draw_gripper(Image& img, const WorldState& s) {
    const int cx = world_to_px(s.ee.x), cy = world_to_px(s.ee.y);
    const Color c = s.robot.gripper_color;
    const bool open = s.gripper_open >= 0.5;
    switch (s.robot.gripper_glyph) {
        case 0:  // square
            if (open) {
                fill_rect(img, cx, cy, 2, 2, c);
                put(img, cx, cy, {0.05f, 0.05f, 0.05f});
            } else {
                fill_rect(img, cx, cy, 2, 2, c);
            }
            break;
        case 1:  // circle
            fill_ellipse(img, cx, cy, 2.5, 2.5, c);
            if (open) put(img, cx, cy, {0.05f, 0.05f, 0.05f});
            break;
        default:  // diamond
            for (int dy = -3; dy <= 3; ++dy)
                for (int dx = -3; dx <= 3; ++dx)
                    if (std::abs(dx) + std::abs(dy) <= 3) put(img, cx + dx, cy + dy, c);
            if (open) put(img, cx, cy, {0.05f, 0.05f, 0.05f});
            break;
    }
}

}  // namespace

Image render(const WorldState& s, const OcclusionSpec& occlusion) {
    Image img;
    img.px.assign(static_cast<size_t>(img.h * img.w * 3), 0.0f);
    const Color bg{0.10f, 0.11f, 0.13f};
    const Color table{0.17f, 0.16f, 0.15f};
    for (int y = 0; y < img.h; ++y)
        for (int x = 0; x < img.w; ++x) put(img, x, y, y >= 7 ? table : bg);

    // goal zone marker
    fill_ellipse(img, world_to_px(s.goal_zone.x), world_to_px(s.goal_zone.y), 3.0, 3.0,
                 {0.38f, 0.36f, 0.50f});

    if (s.obstacle)
        fill_ellipse(img, world_to_px(s.obstacle->pos.x), world_to_px(s.obstacle->pos.y),
                     std::max(3.0, s.obstacle->radius * geom::kImage),
                     std::max(3.0, s.obstacle->radius * geom::kImage), {0.95f, 0.50f, 0.10f});

    for (const auto& o : s.objects) draw_object(img, o);

    // arm links and joints
    Vec2 p = s.robot.base;
    double phi = 0.0;
    for (int i = 0; i < s.robot.links; ++i) {
        phi += s.joints[static_cast<size_t>(i)];
        const Vec2 q{p.x + s.robot.length[static_cast<size_t>(i)] * std::cos(phi),
                     p.y + s.robot.length[static_cast<size_t>(i)] * std::sin(phi)};
        draw_line(img, p, q, 1.1, s.robot.arm_color);
        p = q;
    }
    draw_gripper(img, s);

    if (occlusion.size_px > 0) {
        const auto& target = s.objects[static_cast<size_t>(s.target)];
        const int cx = world_to_px(target.pos.x), cy = world_to_px(target.pos.y);
        const int h = occlusion.size_px / 2;
        for (int y = cy - h; y < cy - h + occlusion.size_px; ++y)
            for (int x = cx - h; x < cx - h + occlusion.size_px; ++x)
                put(img, x, y, {0.0f, 0.0f, 0.0f});
    }
    return img;
}

std::string to_ppm(const Image& img) {
    std::string out = "P6\n" + std::to_string(img.w) + " " + std::to_string(img.h) + "\n255\n";
    out.reserve(out.size() + static_cast<size_t>(img.w * img.h * 3));
    for (float v : img.px) {
        const int b = std::clamp(static_cast<int>(v * 255.0f + 0.5f), 0, 255);
        out.push_back(static_cast<char>(b));
    }
    return out;
}

void write_ppm(const std::string& path, const Image& img) { write_file(path, to_ppm(img)); }

}  // namespace modattn
