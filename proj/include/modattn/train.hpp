#pragma once

#include <memory>
#include <optional>
#include <string>
#include <vector>

#include "modattn/expert.hpp"
#include "modattn/policy.hpp"

namespace modattn {

struct TrainOptions {
    int batch = 16;
    int frames_per_epoch = 2048;      // deterministic subsample per epoch
    int val_frames = 512;             // fixed validation subsample
    int max_epochs_per_stage = 14;
    int patience = 5;                 // epochs without relative improvement
    double tau = 1e-3;                // relative-improvement threshold
    double lr = 1e-4;
    double loss_lambda = 1.0;         // weight on task losses (attention losses at 1)
    bool sup_attention = true;        // false: drop all attention-loss terms
    bool staged = true;               // false: single stage on the full objective
    bool per_head_supervision = false;
    bool ce_attention = false;        // cross-entropy attention-loss variant
    bool freeze_earlier = false;      // freeze earlier stages' slots/decoders (study flag)
    double val_fraction = 0.1;        // episode-level split
    int episode_limit = 0;            // 0 = use all episodes
    std::string csv_path;             // per-epoch loss log (optional)
};

// Stage order must match the hierarchy's (topological) subtask order.
struct StagePlan {
    struct Stage {
        std::string subtask;
        int max_epochs = 14;
    };
    std::vector<Stage> stages;
    int patience = 5;
    double tau = 1e-3;
};

StagePlan default_plan(const HierarchyConfig& cfg, const TrainOptions& opt);

struct LossReport {
    int stage = 0;  // 1-based
    int epoch = 0;
    std::string split;         // "train" | "val"
    std::vector<double> attn;  // L_t per subtask (0 beyond the active stage)
    std::vector<double> task;  // Psi_t per subtask
    double total = 0.0;        // E_k
};

struct TrainResult {
    std::unique_ptr<Policy<float>> policy;
    std::vector<LossReport> history;
    int stages_completed = 0;
    int total_epochs = 0;
};

TrainResult train_curriculum(const Dataset& ds, const HierarchyConfig& cfg, const StagePlan& plan,
                             const TrainOptions& opt, uint64_t seed,
                             const Policy<float>* warm_from = nullptr);

enum class AblationMode { NoSupervisedAttention, NoHierarchy };

TrainResult train_ablation(AblationMode mode, const Dataset& ds, const HierarchyConfig& cfg,
                           const TrainOptions& opt, uint64_t seed);

// ---------------------------------------------------------------------------
// Checkpoints: magic "MATN", config + vocabulary JSON, named f32 parameter
// table, optional Adam state, training metadata. Bit-exact round trip.
// ---------------------------------------------------------------------------
struct Checkpoint {
    uint32_t version = 1;
    HierarchyConfig config;
    std::vector<std::string> vocab_words;
    uint64_t vocab_hash = 0;
    std::vector<std::pair<std::string, Shape>> shapes;
    std::vector<std::pair<std::string, std::vector<float>>> params;
    int stage_reached = 0;
    int epochs = 0;
    uint64_t seed = 0;
};

Checkpoint snapshot(const Policy<float>& policy, int stage_reached, int epochs, uint64_t seed);
std::string encode_checkpoint(const Checkpoint& ck);
Checkpoint decode_checkpoint(const std::string& bytes);
void save_checkpoint(const std::string& path, const Checkpoint& ck);
Checkpoint load_checkpoint(const std::string& path);

// Exact restore: every parameter present with a matching shape.
std::unique_ptr<Policy<float>> policy_from_checkpoint(const Checkpoint& ck);

// Throws ConfigError when the checkpoint's hierarchy/model differ from `cfg`.
void require_config(const Checkpoint& ck, const HierarchyConfig& cfg);

struct FineTuneBudget {
    int episodes = 0;             // 0 = return the master unchanged
    int max_epochs_per_stage = 5;
};

TrainResult fine_tune(const Checkpoint& master, const Dataset& new_data, FineTuneBudget budget,
                      const TrainOptions& opt, uint64_t seed);

// Shared frame plumbing (exposed for tests and the acceptance suite).
struct FrameRef {
    int ep = 0;
    int t = 0;
};
struct FrameSplit {
    std::vector<FrameRef> train, val;
};
FrameSplit split_frames(const Dataset& ds, double val_fraction, uint64_t seed, int episode_limit);

FrameTargets frame_targets(const Demonstration& ep, int t, const HierarchyConfig& cfg);
FrameLabels frame_labels(const Demonstration& ep, int t);

// Joint-encoder input: [joint angles..., gripper], padded/reduced to width
// `joint_dim` (the gripper stays last when reducing).
std::vector<float> joint_input(std::span<const float> joints, float gripper, int joint_dim);

void append_csv_header(std::string& csv, const HierarchyConfig& cfg);
void append_csv_row(std::string& csv, const LossReport& r);

}  // namespace modattn
