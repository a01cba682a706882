// Command-line surface: dataset generation, curriculum training, evaluation,
// robustness suites, transfer experiments and introspection dumps. Every
// subcommand writes a run manifest next to its outputs.
//
// Exit codes: 0 success, 2 usage error, 1 runtime error.

#include <filesystem>
#include <iostream>

#include "CLI11.hpp"
#include "modattn/eval.hpp"

using namespace modattn;
namespace fs = std::filesystem;

namespace {

HierarchyConfig load_config(const std::string& spec) {
    if (spec == "base" || spec.empty()) return HierarchyConfig::base();
    if (spec == "obstacle") return HierarchyConfig::obstacle();
    if (spec == "paper-dims") return HierarchyConfig::paper_dims();
    return HierarchyConfig::from_json(read_file(spec));
}

void write_manifest(const std::string& command, const std::string& out_dir,
                    const std::vector<std::pair<std::string, std::string>>& inputs,
                    const std::vector<uint64_t>& seeds) {
    std::error_code ec;
    fs::create_directories(out_dir, ec);
    write_file(out_dir + "/manifest.json", run_manifest_json(command, inputs, seeds, out_dir));
}

std::vector<Task> parse_tasks(const std::string& s) {
    if (s.empty() || s == "mix") return {Task::Pick, Task::Push, Task::Putdown};
    if (s == "pick") return {Task::Pick};
    if (s == "push") return {Task::Push};
    if (s == "putdown") return {Task::Putdown};
    throw ConfigError("unknown task '" + s + "' (pick|push|putdown|mix)");
}

}  // namespace

int main(int argc, char** argv) {
    CLI::App app{"Language-conditioned modular-attention policies on a 2D tabletop"};
    app.require_subcommand(1);

    // ---- gen-data ----
    auto* gen = app.add_subcommand("gen-data", "record scripted-expert demonstrations");
    std::string gen_task = "mix", gen_robot = "A", gen_out = "dataset.mads";
    int gen_episodes = 100;
    uint64_t gen_seed = 0;
    bool gen_obstacle = false;
    gen->add_option("--task", gen_task, "pick|push|putdown|mix");
    gen->add_option("--robot", gen_robot, "robot variant A|B|C");
    gen->add_option("--episodes", gen_episodes, "episode count")->check(CLI::NonNegativeNumber);
    gen->add_option("--seed", gen_seed, "master seed");
    gen->add_option("--out", gen_out, "output dataset path")->required();
    gen->add_flag("--obstacle", gen_obstacle, "obstacle push preset (potential-field expert)");

    // ---- train ----
    auto* train = app.add_subcommand("train", "curriculum training (Adam, staged losses)");
    std::string tr_data, tr_config = "base", tr_out = "model.matn", tr_ablate, tr_csv;
    uint64_t tr_seed = 0;
    int tr_epochs = 14, tr_frames = 2048, tr_episode_limit = 0;
    train->add_option("--data", tr_data, "dataset path")->required();
    train->add_option("--config", tr_config, "base|obstacle|paper-dims|<json path>");
    train->add_option("--out", tr_out, "checkpoint output path")->required();
    train->add_option("--ablate", tr_ablate, "no-sup-attn|no-hier");
    train->add_option("--seed", tr_seed, "training seed");
    train->add_option("--epochs-per-stage", tr_epochs, "max epochs per stage");
    train->add_option("--frames-per-epoch", tr_frames, "frame subsample per epoch");
    train->add_option("--episodes", tr_episode_limit, "limit training episodes (0 = all)");
    train->add_option("--csv", tr_csv, "per-epoch loss log path");

    // ---- eval ----
    auto* ev = app.add_subcommand("eval", "closed-loop evaluation and robustness suites");
    std::string ev_ckpt, ev_suite, ev_out = "eval_out", ev_robot = "A";
    int ev_episodes = 30, ev_jobs = 4;
    uint64_t ev_seed = 0;
    ev->add_option("--ckpt", ev_ckpt, "checkpoint path")->required();
    ev->add_option("--episodes", ev_episodes, "episodes per task/condition");
    ev->add_option("--seed", ev_seed, "evaluation seed");
    ev->add_option("--suite", ev_suite, "occlusion|color|scale (default: plain metrics)");
    ev->add_option("--robot", ev_robot, "robot variant A|B|C");
    ev->add_option("--jobs", ev_jobs, "parallel rollout workers");
    ev->add_option("--out", ev_out, "output directory");

    // ---- transfer ----
    auto* tr = app.add_subcommand("transfer", "fine-tuning curve onto another robot");
    std::string x_ckpt, x_robot = "B", x_data_dir = ".", x_out = "transfer_out";
    std::vector<int> x_budgets{50, 100, 150, 200};
    uint64_t x_seed = 0;
    int x_jobs = 4, x_epochs = 5;
    tr->add_option("--ckpt", x_ckpt, "master checkpoint")->required();
    tr->add_option("--robot", x_robot, "target robot variant")->required();
    tr->add_option("--budgets", x_budgets, "episode budgets");
    tr->add_option("--data-dir", x_data_dir, "directory holding <robot>.mads");
    tr->add_option("--seed", x_seed, "seed");
    tr->add_option("--jobs", x_jobs, "parallel rollout workers");
    tr->add_option("--epochs-per-stage", x_epochs, "fine-tune epochs per stage");
    tr->add_option("--out", x_out, "output directory");

    // ---- introspect ----
    auto* in = app.add_subcommand("introspect", "per-step module outputs and attention overlays");
    std::string i_ckpt, i_out = "introspect_out", i_task = "push";
    uint64_t i_seed = 0;
    in->add_option("--ckpt", i_ckpt, "checkpoint path")->required();
    in->add_option("--seed", i_seed, "episode seed");
    in->add_option("--task", i_task, "pick|push|putdown");
    in->add_option("--out", i_out, "output directory")->required();

    try {
        app.parse(argc, argv);
    } catch (const CLI::CallForHelp& e) {
        return app.exit(e);
    } catch (const CLI::ParseError& e) {
        app.exit(e);
        return 2;
    }

    try {
        if (*gen) {
            const Vocabulary vocab = Vocabulary::standard();
            GenSpec spec;
            spec.episodes = gen_episodes;
            spec.robot = robot_from_name(gen_robot);
            spec.seed = gen_seed;
            spec.obstacle = gen_obstacle;
            const auto tasks = parse_tasks(gen_task);
            if (tasks.size() == 1) spec.only_task = tasks[0];
            const Dataset ds = generate_dataset(spec, vocab);
            write_dataset(gen_out, ds);
            const std::string dir = fs::path(gen_out).parent_path().string();
            write_manifest("gen-data", dir.empty() ? "." : dir, {{"out", gen_out}}, {gen_seed});
            std::cout << "wrote " << ds.episodes.size() << " episodes to " << gen_out << "\n";
        } else if (*train) {
            const Dataset ds = read_dataset(tr_data);
            const HierarchyConfig cfg = load_config(tr_config);
            TrainOptions opt;
            opt.max_epochs_per_stage = tr_epochs;
            opt.frames_per_epoch = tr_frames;
            opt.episode_limit = tr_episode_limit;
            opt.csv_path = tr_csv;
            TrainResult result;
            if (tr_ablate.empty()) {
                result = train_curriculum(ds, cfg, default_plan(cfg, opt), opt, tr_seed);
            } else if (tr_ablate == "no-sup-attn") {
                result = train_ablation(AblationMode::NoSupervisedAttention, ds, cfg, opt, tr_seed);
            } else if (tr_ablate == "no-hier") {
                result = train_ablation(AblationMode::NoHierarchy, ds, cfg, opt, tr_seed);
            } else {
                std::cerr << "unknown ablation '" << tr_ablate << "'\n";
                return 2;
            }
            save_checkpoint(tr_out, snapshot(*result.policy, result.stages_completed,
                                             result.total_epochs, tr_seed));
            const std::string dir = fs::path(tr_out).parent_path().string();
            write_manifest("train", dir.empty() ? "." : dir,
                           {{"data", tr_data}, {"config", tr_config}, {"out", tr_out}}, {tr_seed});
            std::cout << "trained " << result.stages_completed << " stages ("
                      << result.total_epochs << " epochs), checkpoint at " << tr_out << "\n";
        } else if (*ev) {
            const Checkpoint ck = load_checkpoint(ev_ckpt);
            auto policy = policy_from_checkpoint(ck);
            std::error_code ec;
            fs::create_directories(ev_out, ec);
            if (ev_suite.empty()) {
                EvalSuite suite;
                suite.episodes_per_task = ev_episodes;
                suite.seed = ev_seed;
                suite.robot = robot_from_name(ev_robot);
                const Metrics m = evaluate(*policy, suite, ev_jobs);
                write_file(ev_out + "/metrics.json", m.to_json());
                std::cout << m.to_json() << "\n";
            } else {
                RobustnessKind kind;
                if (ev_suite == "occlusion")
                    kind = RobustnessKind::Occlusion;
                else if (ev_suite == "color")
                    kind = RobustnessKind::Color;
                else if (ev_suite == "scale")
                    kind = RobustnessKind::Scale;
                else {
                    std::cerr << "unknown suite '" << ev_suite << "'\n";
                    return 2;
                }
                const auto rows = robustness_suite(*policy, kind, ev_seed, ev_episodes, ev_jobs);
                const std::string js = robustness_report_json(rows);
                write_file(ev_out + "/robustness.json", js);
                std::cout << js << "\n";
            }
            write_manifest("eval", ev_out, {{"ckpt", ev_ckpt}}, {ev_seed});
        } else if (*tr) {
            const Checkpoint ck = load_checkpoint(x_ckpt);
            const RobotId target = robot_from_name(x_robot);
            const std::string data_path =
                x_data_dir + "/" + std::string(robot_name(target)) + ".mads";
            const Dataset target_data = read_dataset(data_path);
            TrainOptions opt;
            opt.max_epochs_per_stage = x_epochs;
            EvalSuite suite;
            suite.seed = derive_seed(x_seed, 0xe7a1ull);
            const TransferCurve curve =
                transfer_experiment(ck, target, x_budgets, target_data, opt, suite, x_seed, x_jobs);
            std::error_code ec;
            fs::create_directories(x_out, ec);
            write_file(x_out + "/transfer.json", curve.to_json());
            write_manifest("transfer", x_out, {{"ckpt", x_ckpt}, {"data", data_path}}, {x_seed});
            std::cout << curve.to_json() << "\n";
        } else if (*in) {
            const Checkpoint ck = load_checkpoint(i_ckpt);
            auto policy = policy_from_checkpoint(ck);
            const auto tasks = parse_tasks(i_task);
            dump_introspection(*policy, i_seed, tasks[0], i_out);
            write_manifest("introspect", i_out, {{"ckpt", i_ckpt}}, {i_seed});
            std::cout << "introspection written to " << i_out << "\n";
        }
    } catch (const std::exception& e) {
        std::cerr << "error: " << e.what() << "\n";
        return 1;
    }
    return 0;
}
