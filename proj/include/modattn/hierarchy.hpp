#pragma once

#include <optional>
#include <string>
#include <vector>

#include "modattn/nn.hpp"
#include "modattn/world.hpp"

namespace modattn {

// The subtask hierarchy: which register slot realizes which function, what
// its attention must look at, where its layer sits in the cascade, and how
// its slot state is decoded.

enum class OutputKind : int {
    ClassLogits = 0,  // object-class logits
    PixelPos,         // 2D pixel position, normalized to [0,1]
    WorldPos,         // 2D world position
    Displacement,     // 2D displacement vector
    Waypoints,        // horizon x (dx, dy, gripper)
};

enum class Anchor : int { None = 0, Ee, Target, Obstacle };

struct SubtaskSpec {
    std::string name;
    OutputKind out = OutputKind::WorldPos;
    Anchor anchor = Anchor::None;          // world point backing labels
    std::vector<std::string> deps;         // DAG edges to earlier subtasks
    std::vector<std::string> attend_slots; // supervision keys: register slots
    bool attend_lang = false;              // supervision key: language token
    bool attend_joint = false;             // supervision key: joint token
    bool attend_anchor_patch = false;      // supervision key: anchor's vision patch
    bool adjacent_patches = false;         //   ... plus its 4-adjacent patches
    std::vector<int> decoder_hidden;       // hidden widths; output width from `out`
    int layer = 0;                         // assigned attention layer, 1-based
    int slot = 0;                          // register-slot index

    bool operator==(const SubtaskSpec&) const = default;
};

struct ModelConfig {
    int d = 64;
    int heads = 4;
    PatchGrid grid{48, 48, 6};
    int word_dim = 32;
    std::vector<int> joint_encoder_hidden{64, 32};
    int joint_dim = 3;  // joint angles + gripper fraction (robot A default)
    int ctrl_horizon = 10;
    int lang_classes = kNumObjectClasses;
    // documented for reference only; patchify replaces the strided CNN
    std::vector<int> reference_cnn_channels;

    bool operator==(const ModelConfig&) const = default;
};

struct HierarchyConfig {
    std::string preset = "base";
    std::vector<SubtaskSpec> subtasks;  // stage order (topological)
    int layers = 0;
    ModelConfig model;

    static HierarchyConfig base();
    static HierarchyConfig obstacle();
    static HierarchyConfig paper_dims();

    int subtask_index(const std::string& name) const;
    const SubtaskSpec& subtask(const std::string& name) const;
    int num_slots() const { return static_cast<int>(subtasks.size()); }
    int output_dim(const SubtaskSpec& s) const;

    std::string to_json() const;
    static HierarchyConfig from_json(const std::string& json);

    bool operator==(const HierarchyConfig&) const = default;
};

// Recomputes layer assignments as topological longest-path depth and sorts
// subtasks by (layer, insertion order). Throws ConfigError on cycles or
// unknown dependencies. Slot indices are preserved.
void assign_layers(HierarchyConfig& cfg);

// Appends new subtasks (plus extra DAG edges, e.g. DISP2 -> CTRL) and
// reassigns layers. Existing slot indices are stable; new subtasks take the
// next free slots.
HierarchyConfig extend_hierarchy(const HierarchyConfig& cfg, std::vector<SubtaskSpec> added,
                                 const std::vector<std::pair<std::string, std::string>>& extra_edges = {});

struct TokenLayout {
    int vision0 = 0;
    int vision_n = 0;
    int lang = 0;
    int joint = 0;
    int slot0 = 0;
    int slots_n = 0;
    int tokens = 0;
};
TokenLayout token_layout(const HierarchyConfig& cfg);

// Per-frame ground truth backing supervision labels and task losses.
struct FrameLabels {
    Vec2 ee;
    Vec2 tar;
    std::optional<Vec2> obst;
    int target_class = 0;
};

// One supervision pair: a register slot (query row of the attention map at
// `layer`) that must attend to `key_token`.
struct SupPair {
    int layer = 0;      // 1-based
    int query_slot = 0; // row in the map = register-slot index
    int key_token = 0;  // column in the map
    int subtask = 0;    // owning stage index
};

struct SupervisionSet {
    std::vector<SupPair> pairs;  // grouped by subtask, ascending layer
};

SupervisionSet make_supervision(const HierarchyConfig& cfg, const FrameLabels& labels);

}  // namespace modattn
