#include "modattn/eval.hpp"

#include <atomic>
#include <filesystem>
#include <thread>

#include "vendor_json.hpp"

namespace modattn {

namespace {

Instruction episode_instruction(uint64_t seed, const Scenario& sc, const WorldState& state,
                                const Vocabulary& vocab) {
    Instruction ins;
    if (!sc.instruction_override.empty()) {
        ins.raw = sc.instruction_override;
        ins.ids = tokenize(ins.raw, vocab);
        ins.verb_class = sc.task;
        ins.target_class = static_cast<int>(state.objects[static_cast<size_t>(sc.target)].cls);
        return ins;
    }
    Rng irng(derive_seed(seed, 0x696e7374ull));
    return generate_instruction(sc.task, state.objects[static_cast<size_t>(sc.target)].cls, irng,
                                vocab);
}

struct OutputIndices {
    int tar3d = -1, ee3d = -1, disp = -1, tar2d = -1;
};
OutputIndices output_indices(const HierarchyConfig& cfg) {
    OutputIndices ix;
    ix.tar3d = cfg.subtask_index("TAR3D");
    ix.ee3d = cfg.subtask_index("EE3D");
    ix.disp = cfg.subtask_index("DISP");
    ix.tar2d = cfg.subtask_index("TAR2D");
    return ix;
}

void accumulate_errors(EpisodeResult& r, const ModuleOutputs& out, const OutputIndices& ix,
                       const WorldState& s) {
    const Vec2 true_tar = s.objects[static_cast<size_t>(s.target)].pos;
    const Vec2 true_disp = true_tar - s.ee;
    if (ix.tar3d >= 0) {
        const auto& v = out.values[static_cast<size_t>(ix.tar3d)];
        r.sum_tar += dist({v[0], v[1]}, true_tar);
    }
    if (ix.ee3d >= 0) {
        const auto& v = out.values[static_cast<size_t>(ix.ee3d)];
        r.sum_ee += dist({v[0], v[1]}, s.ee);
    }
    if (ix.disp >= 0) {
        const auto& v = out.values[static_cast<size_t>(ix.disp)];
        r.sum_disp += dist({v[0], v[1]}, true_disp);
    }
    ++r.frames;
}

}  // namespace

EpisodeResult rollout(Policy<float>& policy, uint64_t seed, const Scenario& scenario,
                      const RobotVariant& robot, int max_steps, bool record) {
    const auto& cfg = policy.config();
    if (cfg.model.joint_dim != robot.links + 1 && record)
        throw ConfigError("rollout: checkpoint joint width " + std::to_string(cfg.model.joint_dim) +
                          " does not match robot variant (" + std::to_string(robot.links + 1) +
                          "); introspection requires a matching checkpoint");

    WorldState s = reset(seed, scenario, robot);
    const Instruction ins = episode_instruction(seed, scenario, s, policy.vocab());
    const OutputIndices ix = output_indices(cfg);
    const TokenLayout layout = token_layout(cfg);

    EpisodeResult result;
    for (int t = 0; t < max_steps; ++t) {
        const Image img = render(s, scenario.occlusion);
        std::vector<float> joints(s.joints.begin(), s.joints.end());
        const std::vector<float> jin =
            joint_input(joints, static_cast<float>(s.gripper_open), cfg.model.joint_dim);
        auto fw = policy.reset_and_forward(FrameView{img.px, ins.ids, jin});
        accumulate_errors(result, fw.outputs, ix, s);

        if (record) {
            RolloutRecord rec;
            rec.frame = img;
            rec.outputs = fw.outputs;
            rec.true_ee = s.ee;
            rec.true_tar = s.objects[static_cast<size_t>(s.target)].pos;
            if (ix.tar2d >= 0) {
                const auto& spec = cfg.subtasks[static_cast<size_t>(ix.tar2d)];
                const NodeId mean_map =
                    fw.maps[static_cast<size_t>(spec.layer - 1)].mean;
                auto row = policy.engine().data(mean_map);
                const int cols = policy.engine().shape(mean_map).cols;
                rec.tar2d_mass.resize(static_cast<size_t>(layout.vision_n));
                for (int i = 0; i < layout.vision_n; ++i)
                    rec.tar2d_mass[static_cast<size_t>(i)] =
                        static_cast<float>(row[static_cast<size_t>(spec.slot * cols + i)]);
            }
            result.records.push_back(std::move(rec));
        }

        s = step(s, fw.outputs.control);
        result.steps = t + 1;
        if (success(s, scenario)) {
            result.success = true;
            break;
        }
    }
    result.collided = s.collided;
    if (!result.success) result.reason = "timeout";
    return result;
}

EpisodeResult rollout_oracle(uint64_t seed, const Scenario& scenario, const RobotVariant& robot,
                             int max_steps) {
    WorldState s = reset(seed, scenario, robot);
    ExpertController expert(scenario);
    EpisodeResult result;
    for (int t = 0; t < max_steps; ++t) {
        ++result.frames;  // oracle predictions equal ground truth: zero error
        const Action a = expert.act(s);
        s = step(s, a);
        result.steps = t + 1;
        if (success(s, scenario)) {
            result.success = true;
            break;
        }
    }
    result.collided = s.collided;
    if (!result.success) result.reason = "timeout";
    return result;
}

namespace {

Scenario suite_scenario(const EvalSuite& suite, Task task, uint64_t ep_seed) {
    Scenario sc;
    sc.task = task;
    sc.layout_seed = ep_seed;
    Rng trng(derive_seed(ep_seed, 0x74617267ull));
    sc.target = trng.uniform_int(6);
    sc.occlusion.size_px = suite.occlusion_px;
    sc.obstacle = suite.obstacle;
    if (suite.color_remap) sc = remap_scenario(sc, RemapKind::Color, ep_seed);
    if (suite.scale_remap) sc = remap_scenario(sc, RemapKind::Scale, ep_seed);
    return sc;
}

Metrics aggregate(const EvalSuite& suite, const std::vector<Task>& ep_task,
                  const std::vector<uint64_t>& ep_seed, const std::vector<EpisodeResult>& results) {
    Metrics m;
    m.seeds = ep_seed;
    double sum_tar = 0, sum_ee = 0, sum_disp = 0;
    int64_t frames = 0;
    int successes = 0;
    for (size_t i = 0; i < results.size(); ++i) {
        const auto& r = results[i];
        auto& tb = m.per_task[task_name(ep_task[i])];
        ++tb.episodes;
        if (r.success) {
            ++tb.successes;
            ++successes;
        }
        sum_tar += r.sum_tar;
        sum_ee += r.sum_ee;
        sum_disp += r.sum_disp;
        frames += r.frames;
    }
    m.episodes = static_cast<int>(results.size());
    m.success_rate = m.episodes ? static_cast<double>(successes) / m.episodes : 0.0;
    if (frames > 0) {
        m.tar_err = sum_tar / static_cast<double>(frames);
        m.ee_err = sum_ee / static_cast<double>(frames);
        m.disp_err = sum_disp / static_cast<double>(frames);
    }
    (void)suite;
    return m;
}

template <typename RunEpisode>
Metrics run_suite(const EvalSuite& suite, int jobs, RunEpisode&& run) {
    if (suite.tasks.empty() || suite.episodes_per_task <= 0)
        throw ContractError("evaluate: empty suite");
    std::vector<Task> ep_task;
    std::vector<uint64_t> ep_seed;
    for (size_t ti = 0; ti < suite.tasks.size(); ++ti)
        for (int e = 0; e < suite.episodes_per_task; ++e) {
            ep_task.push_back(suite.tasks[ti]);
            ep_seed.push_back(derive_seed(suite.seed, ti * 100003u + static_cast<uint64_t>(e)));
        }

    std::vector<EpisodeResult> results(ep_task.size());
    std::atomic<size_t> next{0};
    auto worker = [&]() {
        for (;;) {
            const size_t i = next.fetch_add(1);
            if (i >= ep_task.size()) return;
            results[i] = run(ep_task[i], ep_seed[i]);
        }
    };
    const int n_threads = std::max(1, std::min<int>(jobs, static_cast<int>(ep_task.size())));
    if (n_threads == 1) {
        worker();
    } else {
        std::vector<std::thread> pool;
        for (int i = 0; i < n_threads; ++i) pool.emplace_back(worker);
        for (auto& th : pool) th.join();
    }
    return aggregate(suite, ep_task, ep_seed, results);
}

}  // namespace

Metrics evaluate(const Policy<float>& policy, const EvalSuite& suite, int jobs) {
    const RobotVariant robot = RobotVariant::preset(suite.robot);
    // one policy clone per worker, created lazily per thread
    return run_suite(suite, jobs, [&](Task task, uint64_t seed) {
        thread_local std::unique_ptr<Policy<float>> local;
        thread_local const Policy<float>* local_src = nullptr;
        if (!local || local_src != &policy) {
            local = std::make_unique<Policy<float>>(policy);
            local_src = &policy;
        }
        return rollout(*local, seed, suite_scenario(suite, task, seed), robot, suite.max_steps);
    });
}

Metrics evaluate_oracle(const EvalSuite& suite, int jobs) {
    const RobotVariant robot = RobotVariant::preset(suite.robot);
    return run_suite(suite, jobs, [&](Task task, uint64_t seed) {
        return rollout_oracle(seed, suite_scenario(suite, task, seed), robot, suite.max_steps);
    });
}

double measure_occlusion_coverage(const WorldState& state, int mask_px) {
    WorldState no_target = state;
    // move the target far off the visible range to isolate its pixels
    no_target.objects[static_cast<size_t>(state.target)].pos = {10.0, 10.0};
    const Image with = render(state);
    const Image without = render(no_target);
    const Image masked = render(state, OcclusionSpec{mask_px});

    int object_px = 0, covered = 0;
    for (int i = 0; i < with.h * with.w; ++i) {
        const bool obj = with.px[static_cast<size_t>(i * 3)] != without.px[static_cast<size_t>(i * 3)] ||
                         with.px[static_cast<size_t>(i * 3 + 1)] != without.px[static_cast<size_t>(i * 3 + 1)] ||
                         with.px[static_cast<size_t>(i * 3 + 2)] != without.px[static_cast<size_t>(i * 3 + 2)];
        if (!obj) continue;
        ++object_px;
        const bool black = masked.px[static_cast<size_t>(i * 3)] == 0.0f &&
                           masked.px[static_cast<size_t>(i * 3 + 1)] == 0.0f &&
                           masked.px[static_cast<size_t>(i * 3 + 2)] == 0.0f;
        if (black) ++covered;
    }
    return object_px ? static_cast<double>(covered) / object_px : 0.0;
}

std::vector<RobustnessRow> robustness_suite(const Policy<float>& policy, RobustnessKind kind,
                                            uint64_t seed, int episodes_per_condition, int jobs) {
    std::vector<RobustnessRow> rows;
    if (kind == RobustnessKind::Occlusion) {
        const std::vector<int> sizes{0, 4, 6, 8, 10};
        for (int px : sizes) {
            EvalSuite suite;
            suite.seed = derive_seed(seed, static_cast<uint64_t>(px));
            suite.episodes_per_task = episodes_per_condition;
            suite.occlusion_px = px;
            const Metrics m = evaluate(policy, suite, jobs);
            RobustnessRow row;
            row.condition = "occlusion_" + std::to_string(px) + "px";
            row.success_rate = m.success_rate;
            row.episodes = m.episodes;
            if (px > 0) {
                // measured coverage over the suite's initial states
                double cov = 0.0;
                int n = 0;
                for (int e = 0; e < episodes_per_condition; ++e) {
                    const uint64_t es = derive_seed(suite.seed, 100003u + static_cast<uint64_t>(e));
                    const Scenario sc = suite_scenario(suite, Task::Push, es);
                    const WorldState s = reset(es, sc, RobotVariant::preset(suite.robot));
                    cov += measure_occlusion_coverage(s, px);
                    ++n;
                }
                row.measured_coverage = n ? cov / n : 0.0;
            }
            rows.push_back(row);
        }
    } else {
        EvalSuite suite;
        suite.seed = seed;
        suite.tasks = {Task::Push};
        suite.episodes_per_task = episodes_per_condition;
        suite.color_remap = kind == RobustnessKind::Color;
        suite.scale_remap = kind == RobustnessKind::Scale;
        const Metrics m = evaluate(policy, suite, jobs);
        RobustnessRow row;
        row.condition = kind == RobustnessKind::Color ? "unseen_colors" : "scaled_objects";
        row.success_rate = m.success_rate;
        row.episodes = m.episodes;
        rows.push_back(row);

        EvalSuite plain = suite;
        plain.color_remap = plain.scale_remap = false;
        const Metrics base = evaluate(policy, plain, jobs);
        RobustnessRow ref;
        ref.condition = "unmodified";
        ref.success_rate = base.success_rate;
        ref.episodes = base.episodes;
        rows.insert(rows.begin(), ref);
    }
    return rows;
}

std::string robustness_report_json(const std::vector<RobustnessRow>& rows) {
    nlohmann::json j = nlohmann::json::array();
    for (const auto& r : rows) {
        nlohmann::json row;
        row["condition"] = r.condition;
        row["success_rate"] = r.success_rate;
        row["episodes"] = r.episodes;
        if (r.measured_coverage > 0) row["measured_coverage"] = r.measured_coverage;
        j.push_back(row);
    }
    return j.dump(2);
}

TransferCurve transfer_experiment(const Checkpoint& master, RobotId target,
                                  const std::vector<int>& budgets, const Dataset& target_data,
                                  const TrainOptions& opt, const EvalSuite& eval_suite,
                                  uint64_t seed, int jobs) {
    if (target_data.manifest.robot != target)
        throw ConfigError("transfer: dataset robot does not match the target variant");
    EvalSuite suite = eval_suite;
    suite.robot = target;

    TransferCurve curve;
    {
        auto zero = policy_from_checkpoint(master);
        curve.zero_shot = evaluate(*zero, suite, jobs);
    }
    for (int budget : budgets) {
        FineTuneBudget b;
        b.episodes = budget;
        b.max_epochs_per_stage = opt.max_epochs_per_stage;
        auto tuned = fine_tune(master, target_data, b, opt, derive_seed(seed, static_cast<uint64_t>(budget)));
        TransferPoint p;
        p.budget = budget;
        p.metrics = evaluate(*tuned.policy, suite, jobs);
        curve.points.push_back(std::move(p));
    }
    if (!budgets.empty()) {
        curve.scratch_budget = *std::max_element(budgets.begin(), budgets.end());
        TrainOptions o = opt;
        o.episode_limit = curve.scratch_budget;
        auto scratch = train_curriculum(target_data, master.config, default_plan(master.config, o),
                                        o, derive_seed(seed, 0x73637261ull));
        curve.scratch_control = evaluate(*scratch.policy, suite, jobs);
    }
    return curve;
}

std::string Metrics::to_json() const {
    nlohmann::json j;
    j["success_rate"] = success_rate;
    j["episodes"] = episodes;
    j["tar3d_error"] = tar_err;
    j["ee3d_error"] = ee_err;
    j["disp_error"] = disp_err;
    j["workspace_diagonal"] = std::sqrt(2.0);
    nlohmann::json per;
    for (const auto& [name, tb] : per_task) {
        per[name] = {{"episodes", tb.episodes},
                     {"successes", tb.successes},
                     {"success_rate",
                      tb.episodes ? static_cast<double>(tb.successes) / tb.episodes : 0.0}};
    }
    j["per_task"] = per;
    j["seeds"] = seeds;
    return j.dump(2);
}

std::string TransferCurve::to_json() const {
    nlohmann::json j;
    j["zero_shot"] = nlohmann::json::parse(zero_shot.to_json());
    nlohmann::json pts = nlohmann::json::array();
    for (const auto& p : points) {
        nlohmann::json e;
        e["budget"] = p.budget;
        e["metrics"] = nlohmann::json::parse(p.metrics.to_json());
        pts.push_back(e);
    }
    j["curve"] = pts;
    j["scratch_budget"] = scratch_budget;
    j["scratch_control"] = nlohmann::json::parse(scratch_control.to_json());
    return j.dump(2);
}

// ---------------------------------------------------------------------------
// Introspection dumps
// ---------------------------------------------------------------------------
namespace {

void blend(float* p, Color c, float alpha) {
    p[0] = (1 - alpha) * p[0] + alpha * c.r;
    p[1] = (1 - alpha) * p[1] + alpha * c.g;
    p[2] = (1 - alpha) * p[2] + alpha * c.b;
}

void draw_marker(Image& img, Vec2 pos, Color c) {
    const int cx = world_to_px(pos.x), cy = world_to_px(pos.y);
    for (int d = -2; d <= 2; ++d) {
        if (cx + d >= 0 && cx + d < img.w && cy >= 0 && cy < img.h) blend(img.at(cy, cx + d), c, 0.9f);
        if (cy + d >= 0 && cy + d < img.h && cx >= 0 && cx < img.w) blend(img.at(cy + d, cx), c, 0.9f);
    }
}

}  // namespace

void dump_introspection(Policy<float>& policy, uint64_t seed, Task task,
                        const std::string& out_dir, int max_steps) {
    namespace fs = std::filesystem;
    std::error_code ec;
    fs::create_directories(out_dir, ec);
    if (!fs::exists(out_dir))
        throw IoError("introspection: cannot create output directory " + out_dir);

    Scenario sc;
    sc.task = task;
    sc.layout_seed = seed;
    Rng trng(derive_seed(seed, 0x74617267ull));
    sc.target = trng.uniform_int(6);

    const RobotVariant robot = RobotVariant::preset(
        policy.config().model.joint_dim == 3 ? RobotId::A : RobotId::B);
    EpisodeResult res = rollout(policy, seed, sc, robot, max_steps, /*record=*/true);

    const auto& cfg = policy.config();
    const PatchGrid& grid = cfg.model.grid;
    const int tar3d = cfg.subtask_index("TAR3D");
    const int ee3d = cfg.subtask_index("EE3D");
    const int disp = cfg.subtask_index("DISP");

    std::string csv = "step";
    for (const auto& s : cfg.subtasks) {
        const int dim = cfg.output_dim(s);
        for (int i = 0; i < dim; ++i) csv += "," + s.name + "_" + std::to_string(i);
    }
    csv += ",true_ee_x,true_ee_y,true_tar_x,true_tar_y,err_ee,err_tar,err_disp\n";

    for (size_t t = 0; t < res.records.size(); ++t) {
        const auto& rec = res.records[t];
        Image overlay = rec.frame;
        // attention overlay: per-patch yellow tint proportional to mass
        for (int pi = 0; pi < grid.tokens(); ++pi) {
            const float mass = pi < static_cast<int>(rec.tar2d_mass.size())
                                   ? rec.tar2d_mass[static_cast<size_t>(pi)]
                                   : 0.0f;
            if (mass <= 1e-4f) continue;
            const float alpha = std::min(0.85f, mass);
            const int pr = pi / grid.patches_per_row(), pc = pi % grid.patches_per_row();
            for (int y = 0; y < grid.stride; ++y)
                for (int x = 0; x < grid.stride; ++x)
                    blend(overlay.at(pr * grid.stride + y, pc * grid.stride + x),
                          {0.95f, 0.90f, 0.20f}, alpha);
        }
        Vec2 pred_tar{}, pred_ee{};
        double disp_mag = 0.0;
        if (tar3d >= 0) {
            const auto& v = rec.outputs.values[static_cast<size_t>(tar3d)];
            pred_tar = {v[0], v[1]};
            draw_marker(overlay, pred_tar, {0.25f, 0.45f, 1.0f});
        }
        if (ee3d >= 0) {
            const auto& v = rec.outputs.values[static_cast<size_t>(ee3d)];
            pred_ee = {v[0], v[1]};
            draw_marker(overlay, pred_ee, {1.0f, 0.20f, 0.20f});
        }
        if (disp >= 0) {
            const auto& v = rec.outputs.values[static_cast<size_t>(disp)];
            disp_mag = std::sqrt(v[0] * v[0] + v[1] * v[1]);
            const int len = std::min(overlay.w - 2, static_cast<int>(disp_mag * 64));
            for (int x = 0; x < len; ++x) {
                blend(overlay.at(0, 1 + x), {1.0f, 1.0f, 1.0f}, 0.9f);
                blend(overlay.at(1, 1 + x), {1.0f, 1.0f, 1.0f}, 0.9f);
            }
        }
        char name[64];
        std::snprintf(name, sizeof name, "/step_%04zu.ppm", t);
        write_ppm(out_dir + name, overlay);

        csv += std::to_string(t);
        char buf[48];
        for (const auto& vals : rec.outputs.values)
            for (double v : vals) {
                std::snprintf(buf, sizeof buf, ",%.9g", v);
                csv += buf;
            }
        auto add = [&](double v) {
            std::snprintf(buf, sizeof buf, ",%.9g", v);
            csv += buf;
        };
        add(rec.true_ee.x);
        add(rec.true_ee.y);
        add(rec.true_tar.x);
        add(rec.true_tar.y);
        add(dist(pred_ee, rec.true_ee));
        add(dist(pred_tar, rec.true_tar));
        const Vec2 true_disp = rec.true_tar - rec.true_ee;
        add(std::abs(disp_mag - true_disp.norm()));
        csv += "\n";
    }
    write_file(out_dir + "/modules.csv", csv);
}

std::string run_manifest_json(const std::string& command,
                              const std::vector<std::pair<std::string, std::string>>& inputs,
                              const std::vector<uint64_t>& seeds, const std::string& out_dir) {
    nlohmann::json j;
    j["command"] = command;
    uint64_t h = 0xcbf29ce484222325ull;
    nlohmann::json in;
    for (const auto& [key, path] : inputs) {
        in[key] = path;
        if (!path.empty()) {
            try {
                const std::string bytes = read_file(path);
                h = fnv1a64_bytes(bytes.data(), bytes.size(), h);
            } catch (const IoError&) {
                h = fnv1a64(path, h);  // path-only hash for outputs that do not exist yet
            }
        }
    }
    j["inputs"] = in;
    char hex[32];
    std::snprintf(hex, sizeof hex, "%016llx", static_cast<unsigned long long>(h));
    j["content_hash"] = hex;
    j["seeds"] = seeds;
    j["out_dir"] = out_dir;
    return j.dump(2);
}

}  // namespace modattn
