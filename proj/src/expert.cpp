#include "modattn/expert.hpp"

#include "vendor_json.hpp"

namespace modattn {

Vec2 potential_field_step(Vec2 pos, Vec2 goal, Vec2 obstacle, double obstacle_radius,
                          const PfGains& gains) {
    (void)obstacle_radius;  // the influence radius, not the body radius, shapes the field
    Vec2 v = (goal - pos) * gains.k_attract;
    const Vec2 away = pos - obstacle;
    const double d = away.norm();
    if (d > 1e-12 && d < gains.influence) {
        const double mag = gains.k_repulse * (1.0 / d - 1.0 / gains.influence) / (d * d);
        v = v + away * (mag / d);
    }
    const double n = v.norm();
    if (n > geom::kStepClip) v = v * (geom::kStepClip / n);
    return v;
}

namespace {

constexpr double kApproachStandoff = 0.07;
constexpr double kPushMargin = 0.02;
constexpr double kLiftY = 0.10;

double segment_distance(Vec2 p, Vec2 a, Vec2 b) {
    const Vec2 ab = b - a;
    const double len2 = ab.x * ab.x + ab.y * ab.y;
    double t = len2 > 1e-12 ? ((p.x - a.x) * ab.x + (p.y - a.y) * ab.y) / len2 : 0.0;
    t = std::clamp(t, 0.0, 1.0);
    return dist(p, a + ab * t);
}

// Horizontal push, away from walls; with an obstacle present the freer of the
// two feasible lanes is taken so the advance clears it.
Vec2 push_direction(const WorldState& s) {
    const double tx = s.target_start.x;
    const Vec2 right{1.0, 0.0}, left{-1.0, 0.0};
    if (!s.obstacle) return tx <= 0.5 ? right : left;
    const bool right_ok = tx <= 0.75;
    const bool left_ok = tx >= 0.25;
    auto lane_clearance = [&](Vec2 dir) {
        const Vec2 from = s.target_start - dir * kApproachStandoff;
        const Vec2 to = s.target_start + dir * 0.24;
        return segment_distance(s.obstacle->pos, from, to);
    };
    if (right_ok && left_ok)
        return lane_clearance(right) >= lane_clearance(left) ? right : left;
    return right_ok ? right : left;
}

}  // namespace

Vec2 ExpertController::move_toward(const WorldState& s, Vec2 goal) const {
    if (s.obstacle) {
        Vec2 v = potential_field_step(s.ee, goal, s.obstacle->pos, s.obstacle->radius);
        if (v.norm() < 5e-3 && dist(s.ee, goal) > 0.02) {
            // field equilibrium short of the goal: deterministic tangential escape
            const Vec2 a = goal - s.ee;
            const double n = a.norm();
            if (n > 1e-9) v = Vec2{-a.y / n, a.x / n} * 0.04;
        }
        return v;
    }
    Vec2 d = goal - s.ee;
    const double n = d.norm();
    if (n > geom::kStepClip) d = d * (geom::kStepClip / n);
    return d;
}

Action ExpertController::act(const WorldState& s) const {
    const auto& target = s.objects[static_cast<size_t>(s.target)];
    switch (scenario_.task) {
        case Task::Pick: {
            if (s.grasped == s.target) {
                if (s.ee.y <= kLiftY) return Action{0, 0, 1};
                const Vec2 v = move_toward(s, {s.ee.x, kLiftY - 0.02});
                return Action{v.x, v.y, 1};
            }
            if (dist(s.ee, target.pos) <= 0.015) return Action{0, 0, 1};  // close
            const Vec2 v = move_toward(s, target.pos);
            return Action{v.x, v.y, 0};
        }
        case Task::Push: {
            if (dist(target.pos, s.target_start) >= geom::kPushSuccess + kPushMargin)
                return Action{0, 0, 1};  // done, hold
            const Vec2 dir = push_direction(s);
            const Vec2 rel = target.pos - s.ee;
            const double along = rel.x * dir.x + rel.y * dir.y;
            const double perp = std::abs(rel.x * dir.y - rel.y * dir.x);
            const bool behind = along > 0.02 && along <= 0.14 && perp < 0.035;
            const bool closed = s.gripper_open < 0.5;
            if (behind && closed) {
                const Vec2 v = move_toward(s, s.ee + dir * 0.12);
                return Action{v.x, v.y, 1};
            }
            if (behind) return Action{0, 0, 1};  // on the lane: make a fist
            const Vec2 v = move_toward(s, target.pos - dir * kApproachStandoff);
            return Action{v.x, v.y, 0};
        }
        case Task::Putdown: {
            if (s.grasped == s.target) {
                if (dist(s.ee, s.goal_zone) <= 0.012) return Action{0, 0, 0};  // release
                const Vec2 v = move_toward(s, s.goal_zone);
                return Action{v.x, v.y, 1};
            }
            return Action{0, 0, 0};  // released (or lost): hold
        }
    }
    return Action{};
}

std::vector<Action> plan_expert(const WorldState& start, const Scenario& scenario) {
    ExpertController expert(scenario);
    WorldState s = start;
    std::vector<Action> plan;
    for (int t = 0; t < kMaxEpisodeSteps; ++t) {
        const Action a = expert.act(s);
        plan.push_back(a);
        s = step(s, a);
        if (static_cast<int>(plan.size()) >= kMinEpisodeSteps && success(s, scenario)) return plan;
    }
    return {};
}

std::optional<Demonstration> record_episode(uint64_t seed, const Scenario& scenario,
                                            const RobotVariant& robot, const Vocabulary& vocab) {
    WorldState s = reset(seed, scenario, robot);
    ExpertController expert(scenario);

    // Start-pose and execution noise: a short seeded drift before recording and
    // small displacement perturbations during it. Labels stay the clean expert
    // actions, so off-path states come with recovery targets.
    Rng noise(derive_seed(seed, 0x6e6f6973ull));
    const int warmup = noise.uniform_int(13);
    if (warmup > 0) {
        const Vec2 wp{noise.uniform(0.12, 0.88), noise.uniform(0.15, 0.72)};
        const double hold = s.grasped >= 0 ? 1.0 : 0.0;
        for (int w = 0; w < warmup; ++w) {
            const Vec2 d = wp - s.ee;
            s = step(s, Action::clipped(d.x, d.y, hold));
        }
    }

    Demonstration demo;
    demo.robot = robot.id;
    demo.links = robot.links;
    demo.scenario = scenario;
    if (!scenario.instruction_override.empty()) {
        demo.instruction.raw = scenario.instruction_override;
        demo.instruction.ids = tokenize(scenario.instruction_override, vocab);
        demo.instruction.verb_class = scenario.task;
        demo.instruction.target_class = static_cast<int>(s.objects[static_cast<size_t>(scenario.target)].cls);
    } else {
        Rng irng(derive_seed(seed, 0x696e7374ull));
        demo.instruction = generate_instruction(
            scenario.task, s.objects[static_cast<size_t>(scenario.target)].cls, irng, vocab);
    }

    bool done = false;
    for (int t = 0; t < kMaxEpisodeSteps; ++t) {
        const Action a = expert.act(s);
        StepRecord rec;
        rec.image = render(s, scenario.occlusion);
        rec.joints.assign(s.joints.begin(), s.joints.end());
        rec.gripper_open = static_cast<float>(s.gripper_open);
        rec.act = a;
        rec.ee = s.ee;
        rec.tar = s.objects[static_cast<size_t>(s.target)].pos;
        if (s.obstacle) rec.obst = s.obstacle->pos;
        demo.steps.push_back(std::move(rec));

        const Action executed = Action::clipped(a.dx + 0.01 * noise.normal(),
                                                a.dy + 0.01 * noise.normal(), a.gripper);
        s = step(s, executed);
        if (static_cast<int>(demo.steps.size()) >= kMinEpisodeSteps && success(s, scenario)) {
            done = true;
            break;
        }
    }
    if (!done) return std::nullopt;
    return demo;
}

Dataset generate_dataset(const GenSpec& spec, const Vocabulary& vocab) {
    Dataset ds;
    ds.manifest.robot = spec.robot;
    ds.manifest.vocab_hash = vocab.hash;
    ds.manifest.vocab_words = vocab.words;
    const RobotVariant robot = RobotVariant::preset(spec.robot);

    uint64_t attempt = 0;
    for (int i = 0; i < spec.episodes; ++i) {
        for (;;) {
            const uint64_t seed = derive_seed(spec.seed, attempt++);
            Rng srng(derive_seed(seed, 0x7363656eull));
            Scenario sc;
            sc.task = spec.obstacle ? Task::Push
                      : spec.only_task ? *spec.only_task
                                       : static_cast<Task>(i % 3);
            sc.target = srng.uniform_int(6);
            sc.layout_seed = seed;
            sc.obstacle = spec.obstacle;
            auto demo = record_episode(seed, sc, robot, vocab);
            if (demo) {
                ds.episodes.push_back(std::move(*demo));
                break;
            }
        }
    }
    ds.manifest.episodes = static_cast<uint32_t>(ds.episodes.size());
    return ds;
}

// ---------------------------------------------------------------------------
// Binary format: "MADS" | u32 version | u64 manifest length | manifest JSON |
// per episode: header, token ids (u32), then f32 arrays in fixed order
// (images, joints, gripper, actions, ee, tar, obst?). Everything little-endian.
// ---------------------------------------------------------------------------
namespace {
constexpr uint32_t kDatasetMagic = 0x5344414d;  // "MADS"
constexpr uint32_t kDatasetVersion = 1;
}  // namespace

std::string encode_dataset(const Dataset& ds) {
    nlohmann::json m;
    m["version"] = kDatasetVersion;
    m["robot"] = robot_name(ds.manifest.robot);
    m["episodes"] = ds.episodes.size();
    m["image_h"] = ds.manifest.image_h;
    m["image_w"] = ds.manifest.image_w;
    m["patch_stride"] = ds.manifest.patch_stride;
    char hex[32];
    std::snprintf(hex, sizeof hex, "%016llx",
                  static_cast<unsigned long long>(ds.manifest.vocab_hash));
    m["vocab_hash"] = hex;
    m["vocabulary"] = ds.manifest.vocab_words;
    const std::string manifest = m.dump();

    std::string out;
    put_u32(out, kDatasetMagic);
    put_u32(out, kDatasetVersion);
    put_u64(out, manifest.size());
    out += manifest;

    for (const auto& ep : ds.episodes) {
        const uint32_t T = static_cast<uint32_t>(ep.steps.size());
        put_u32(out, T);
        put_u32(out, static_cast<uint32_t>(ep.instruction.ids.size()));
        put_u32(out, static_cast<uint32_t>(ep.robot));
        put_u32(out, static_cast<uint32_t>(ep.links));
        put_u32(out, static_cast<uint32_t>(ep.scenario.task));
        put_u32(out, static_cast<uint32_t>(ep.instruction.target_class));
        put_u32(out, static_cast<uint32_t>(ep.scenario.target));
        put_u32(out, ep.scenario.obstacle ? 1u : 0u);
        put_u32(out, static_cast<uint32_t>(ep.scenario.occlusion.size_px));
        put_u64(out, ep.scenario.layout_seed);
        put_u32(out, static_cast<uint32_t>(ep.instruction.raw.size()));
        out += ep.instruction.raw;
        for (int32_t id : ep.instruction.ids) put_u32(out, static_cast<uint32_t>(id));
        for (const auto& st : ep.steps)
            for (float v : st.image.px) put_f32(out, v);
        for (const auto& st : ep.steps)
            for (float v : st.joints) put_f32(out, v);
        for (const auto& st : ep.steps) put_f32(out, st.gripper_open);
        for (const auto& st : ep.steps) {
            put_f32(out, static_cast<float>(st.act.dx));
            put_f32(out, static_cast<float>(st.act.dy));
            put_f32(out, static_cast<float>(st.act.gripper));
        }
        for (const auto& st : ep.steps) {
            put_f32(out, static_cast<float>(st.ee.x));
            put_f32(out, static_cast<float>(st.ee.y));
        }
        for (const auto& st : ep.steps) {
            put_f32(out, static_cast<float>(st.tar.x));
            put_f32(out, static_cast<float>(st.tar.y));
        }
        if (ep.scenario.obstacle)
            for (const auto& st : ep.steps) {
                put_f32(out, static_cast<float>(st.obst ? st.obst->x : 0.0));
                put_f32(out, static_cast<float>(st.obst ? st.obst->y : 0.0));
            }
    }
    return out;
}

Dataset decode_dataset(const std::string& bytes) {
    ByteReader r(bytes, "dataset");
    if (r.u32() != kDatasetMagic) throw FormatError("dataset: bad magic");
    const uint32_t version = r.u32();
    if (version != kDatasetVersion)
        throw FormatError("dataset: unsupported version " + std::to_string(version));
    const uint64_t mlen = r.u64();
    const std::string mstr = r.bytes(mlen);
    nlohmann::json m = nlohmann::json::parse(mstr, nullptr, false);
    if (m.is_discarded()) throw FormatError("dataset: manifest is not valid JSON");

    Dataset ds;
    ds.manifest.version = version;
    ds.manifest.robot = robot_from_name(m.at("robot").get<std::string>());
    ds.manifest.image_h = m.at("image_h").get<int>();
    ds.manifest.image_w = m.at("image_w").get<int>();
    ds.manifest.patch_stride = m.at("patch_stride").get<int>();
    ds.manifest.vocab_words = m.at("vocabulary").get<std::vector<std::string>>();
    const auto vocab = Vocabulary::from_words(ds.manifest.vocab_words);
    ds.manifest.vocab_hash = vocab.hash;
    const std::string stored_hash = m.at("vocab_hash").get<std::string>();
    char hex[32];
    std::snprintf(hex, sizeof hex, "%016llx", static_cast<unsigned long long>(vocab.hash));
    if (stored_hash != hex)
        throw FormatError("dataset: vocabulary hash mismatch (stored " + stored_hash +
                          ", computed " + hex + ")");
    const uint64_t count = m.at("episodes").get<uint64_t>();

    const int img_px = ds.manifest.image_h * ds.manifest.image_w * 3;
    for (uint64_t e = 0; e < count; ++e) {
        Demonstration ep;
        const uint32_t T = r.u32();
        const uint32_t ntok = r.u32();
        ep.robot = static_cast<RobotId>(r.u32());
        ep.links = static_cast<int>(r.u32());
        ep.scenario.task = static_cast<Task>(r.u32());
        ep.instruction.target_class = static_cast<int>(r.u32());
        ep.scenario.target = static_cast<int>(r.u32());
        ep.scenario.obstacle = r.u32() != 0;
        ep.scenario.occlusion.size_px = static_cast<int>(r.u32());
        ep.scenario.layout_seed = r.u64();
        const uint32_t raw_len = r.u32();
        ep.instruction.raw = r.bytes(raw_len);
        ep.instruction.verb_class = ep.scenario.task;
        for (uint32_t i = 0; i < ntok; ++i)
            ep.instruction.ids.push_back(static_cast<int32_t>(r.u32()));

        ep.steps.resize(T);
        for (auto& st : ep.steps) {
            st.image.px.resize(static_cast<size_t>(img_px));
            for (int i = 0; i < img_px; ++i) st.image.px[static_cast<size_t>(i)] = r.f32();
        }
        for (auto& st : ep.steps) {
            st.joints.resize(static_cast<size_t>(ep.links));
            for (int i = 0; i < ep.links; ++i) st.joints[static_cast<size_t>(i)] = r.f32();
        }
        for (auto& st : ep.steps) st.gripper_open = r.f32();
        for (auto& st : ep.steps) {
            st.act.dx = r.f32();
            st.act.dy = r.f32();
            st.act.gripper = r.f32();
        }
        for (auto& st : ep.steps) {
            st.ee.x = r.f32();
            st.ee.y = r.f32();
        }
        for (auto& st : ep.steps) {
            st.tar.x = r.f32();
            st.tar.y = r.f32();
        }
        if (ep.scenario.obstacle)
            for (auto& st : ep.steps) {
                Vec2 o;
                o.x = r.f32();
                o.y = r.f32();
                st.obst = o;
            }
        ds.episodes.push_back(std::move(ep));
    }
    if (r.remaining() != 0)
        throw FormatError("dataset: " + std::to_string(r.remaining()) +
                          " trailing bytes after episode " + std::to_string(count) +
                          " at offset " + std::to_string(r.pos()));
    ds.manifest.episodes = static_cast<uint32_t>(ds.episodes.size());
    return ds;
}

void write_dataset(const std::string& path, const Dataset& ds) {
    write_file(path, encode_dataset(ds));
}

Dataset read_dataset(const std::string& path) { return decode_dataset(read_file(path)); }

}  // namespace modattn
