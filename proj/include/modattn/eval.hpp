#pragma once

#include <map>
#include <memory>
#include <string>
#include <vector>

#include "modattn/train.hpp"

namespace modattn {

struct TaskBreakdown {
    int episodes = 0;
    int successes = 0;
};

struct Metrics {
    double success_rate = 0.0;
    std::map<std::string, TaskBreakdown> per_task;
    double tar_err = 0.0;   // mean Euclidean error, world units
    double ee_err = 0.0;
    double disp_err = 0.0;
    int episodes = 0;
    std::vector<uint64_t> seeds;
    std::string to_json() const;
};

struct RolloutRecord {
    Image frame;
    std::vector<float> tar2d_mass;  // head-mean attention over vision tokens
    ModuleOutputs outputs;
    Vec2 true_ee, true_tar;
};

struct EpisodeResult {
    bool success = false;
    std::string reason;  // "", "timeout"
    int steps = 0;
    bool collided = false;
    double sum_tar = 0.0, sum_ee = 0.0, sum_disp = 0.0;
    int frames = 0;
    std::vector<RolloutRecord> records;  // populated when recording
};

// Closed-loop rollout: render -> forward -> apply the first predicted
// waypoint -> world step, until success or max_steps.
EpisodeResult rollout(Policy<float>& policy, uint64_t seed, const Scenario& scenario,
                      const RobotVariant& robot, int max_steps = 300, bool record = false);

// Same harness driven by the scripted expert with ground-truth module
// outputs (the oracle bound: zero prediction error).
EpisodeResult rollout_oracle(uint64_t seed, const Scenario& scenario, const RobotVariant& robot,
                             int max_steps = 300);

struct EvalSuite {
    std::vector<Task> tasks{Task::Pick, Task::Push, Task::Putdown};
    int episodes_per_task = 30;
    uint64_t seed = 0;
    RobotId robot = RobotId::A;
    int occlusion_px = 0;
    bool color_remap = false;
    bool scale_remap = false;
    bool obstacle = false;
    int max_steps = 300;
};

Metrics evaluate(const Policy<float>& policy, const EvalSuite& suite, int jobs = 4);
Metrics evaluate_oracle(const EvalSuite& suite, int jobs = 4);

struct RobustnessRow {
    std::string condition;
    double success_rate = 0.0;
    double measured_coverage = 0.0;  // occlusion only: fraction of target pixels masked
    int episodes = 0;
};
enum class RobustnessKind { Occlusion, Color, Scale };
std::vector<RobustnessRow> robustness_suite(const Policy<float>& policy, RobustnessKind kind,
                                            uint64_t seed, int episodes_per_condition,
                                            int jobs = 4);
std::string robustness_report_json(const std::vector<RobustnessRow>& rows);

// Fraction of the target object's rendered pixels covered by an occlusion
// mask of the given size (measured, not assumed).
double measure_occlusion_coverage(const WorldState& state, int mask_px);

struct TransferPoint {
    int budget = 0;
    Metrics metrics;
};
struct TransferCurve {
    Metrics zero_shot;
    std::vector<TransferPoint> points;
    Metrics scratch_control;  // trained from scratch at the largest budget
    int scratch_budget = 0;
    std::string to_json() const;
};
TransferCurve transfer_experiment(const Checkpoint& master, RobotId target,
                                  const std::vector<int>& budgets, const Dataset& target_data,
                                  const TrainOptions& opt, const EvalSuite& eval_suite,
                                  uint64_t seed, int jobs = 4);

// Per-step PPM overlays (attention mass, predicted vs true positions,
// displacement bar) plus a CSV of every module output.
void dump_introspection(Policy<float>& policy, uint64_t seed, Task task,
                        const std::string& out_dir, int max_steps = 300);

std::string run_manifest_json(const std::string& command,
                              const std::vector<std::pair<std::string, std::string>>& inputs,
                              const std::vector<uint64_t>& seeds, const std::string& out_dir);

}  // namespace modattn
