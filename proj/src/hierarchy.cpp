#include "modattn/hierarchy.hpp"

#include <algorithm>
#include <map>

#include "vendor_json.hpp"

namespace modattn {

int HierarchyConfig::subtask_index(const std::string& name) const {
    for (size_t i = 0; i < subtasks.size(); ++i)
        if (subtasks[i].name == name) return static_cast<int>(i);
    return -1;
}

const SubtaskSpec& HierarchyConfig::subtask(const std::string& name) const {
    const int i = subtask_index(name);
    if (i < 0) throw ConfigError("unknown subtask '" + name + "'");
    return subtasks[static_cast<size_t>(i)];
}

int HierarchyConfig::output_dim(const SubtaskSpec& s) const {
    switch (s.out) {
        case OutputKind::ClassLogits: return model.lang_classes;
        case OutputKind::PixelPos: return 2;
        case OutputKind::WorldPos: return 2;
        case OutputKind::Displacement: return 2;
        case OutputKind::Waypoints: return model.ctrl_horizon * 3;
    }
    return 0;
}

void assign_layers(HierarchyConfig& cfg) {
    const size_t n = cfg.subtasks.size();
    // validate deps and slot uniqueness
    std::vector<int> slot_seen;
    for (const auto& s : cfg.subtasks) {
        for (const auto& d : s.deps) {
            if (cfg.subtask_index(d) < 0)
                throw ConfigError("subtask '" + s.name + "' depends on unknown '" + d + "'");
            if (d == s.name) throw ConfigError("subtask '" + s.name + "' depends on itself");
        }
        if (std::find(slot_seen.begin(), slot_seen.end(), s.slot) != slot_seen.end())
            throw ConfigError("duplicate register slot index " + std::to_string(s.slot));
        slot_seen.push_back(s.slot);
    }

    // longest-path depth via iterative relaxation; cycle -> no fixed point
    std::vector<int> depth(n, 1);
    for (size_t round = 0; round <= n; ++round) {
        bool changed = false;
        for (size_t i = 0; i < n; ++i)
            for (const auto& d : cfg.subtasks[i].deps) {
                const int j = cfg.subtask_index(d);
                if (depth[static_cast<size_t>(j)] + 1 > depth[i]) {
                    depth[i] = depth[static_cast<size_t>(j)] + 1;
                    changed = true;
                }
            }
        if (!changed) break;
        if (round == n) throw ConfigError("hierarchy contains a dependency cycle");
    }
    for (size_t i = 0; i < n; ++i) cfg.subtasks[i].layer = depth[i];

    std::stable_sort(cfg.subtasks.begin(), cfg.subtasks.end(),
                     [](const SubtaskSpec& a, const SubtaskSpec& b) { return a.layer < b.layer; });
    cfg.layers = 0;
    for (const auto& s : cfg.subtasks) cfg.layers = std::max(cfg.layers, s.layer);
}

HierarchyConfig extend_hierarchy(const HierarchyConfig& cfg, std::vector<SubtaskSpec> added,
                                 const std::vector<std::pair<std::string, std::string>>& extra_edges) {
    HierarchyConfig out = cfg;
    int next_slot = 0;
    for (const auto& s : out.subtasks) next_slot = std::max(next_slot, s.slot + 1);
    for (auto& s : added) {
        if (out.subtask_index(s.name) >= 0)
            throw ConfigError("extend_hierarchy: subtask '" + s.name + "' already exists");
        s.slot = next_slot++;
        out.subtasks.push_back(std::move(s));
    }
    for (const auto& [from, to] : extra_edges) {
        const int i = out.subtask_index(to);
        if (i < 0 || out.subtask_index(from) < 0)
            throw ConfigError("extend_hierarchy: edge " + from + "->" + to + " names unknown subtask");
        auto& spec = out.subtasks[static_cast<size_t>(i)];
        spec.deps.push_back(from);
        spec.attend_slots.push_back(from);
    }
    assign_layers(out);
    return out;
}

namespace {

SubtaskSpec make_spec(std::string name, OutputKind out, Anchor anchor,
                      std::vector<std::string> deps, std::vector<std::string> attend_slots,
                      std::vector<int> hidden) {
    SubtaskSpec s;
    s.name = std::move(name);
    s.out = out;
    s.anchor = anchor;
    s.deps = std::move(deps);
    s.attend_slots = std::move(attend_slots);
    s.decoder_hidden = std::move(hidden);
    return s;
}

std::vector<SubtaskSpec> base_subtasks() {
    std::vector<SubtaskSpec> v;
    auto lang = make_spec("LANG", OutputKind::ClassLogits, Anchor::None, {}, {}, {32});
    lang.attend_lang = true;
    v.push_back(lang);

    auto ee2d = make_spec("EE2D", OutputKind::PixelPos, Anchor::Ee, {}, {}, {128});
    ee2d.attend_anchor_patch = true;
    ee2d.adjacent_patches = true;
    v.push_back(ee2d);

    auto tar2d = make_spec("TAR2D", OutputKind::PixelPos, Anchor::Target, {"LANG"}, {}, {128});
    tar2d.attend_anchor_patch = true;
    v.push_back(tar2d);

    auto ee3d = make_spec("EE3D", OutputKind::WorldPos, Anchor::Ee, {"EE2D"}, {"EE2D"}, {128});
    ee3d.attend_joint = true;
    v.push_back(ee3d);

    v.push_back(make_spec("TAR3D", OutputKind::WorldPos, Anchor::Target, {"TAR2D"}, {"TAR2D"}, {128}));
    v.push_back(make_spec("DISP", OutputKind::Displacement, Anchor::Target, {"EE3D", "TAR3D"},
                          {"EE3D", "TAR3D"}, {128}));

    auto ctrl = make_spec("CTRL", OutputKind::Waypoints, Anchor::None, {"TAR3D", "DISP"},
                          {"TAR3D", "DISP"}, {256, 128});
    ctrl.attend_lang = true;
    v.push_back(ctrl);

    for (size_t i = 0; i < v.size(); ++i) v[i].slot = static_cast<int>(i);
    return v;
}

std::vector<SubtaskSpec> obstacle_subtasks() {
    std::vector<SubtaskSpec> v;
    auto o2d = make_spec("OBST2D", OutputKind::PixelPos, Anchor::Obstacle, {}, {}, {128});
    o2d.attend_anchor_patch = true;
    v.push_back(o2d);
    v.push_back(
        make_spec("OBST3D", OutputKind::WorldPos, Anchor::Obstacle, {"OBST2D"}, {"OBST2D"}, {128}));
    v.push_back(make_spec("DISP2", OutputKind::Displacement, Anchor::Obstacle, {"EE3D", "OBST3D"},
                          {"EE3D", "OBST3D"}, {128}));
    return v;
}

}  // namespace

HierarchyConfig HierarchyConfig::base() {
    HierarchyConfig cfg;
    cfg.preset = "base";
    cfg.subtasks = base_subtasks();
    assign_layers(cfg);
    return cfg;
}

HierarchyConfig HierarchyConfig::obstacle() {
    HierarchyConfig cfg = extend_hierarchy(base(), obstacle_subtasks(), {{"DISP2", "CTRL"}});
    cfg.preset = "obstacle";
    return cfg;
}

HierarchyConfig HierarchyConfig::paper_dims() {
    HierarchyConfig cfg = base();
    cfg.preset = "paper-dims";
    cfg.model.d = 192;
    cfg.model.heads = 8;
    cfg.model.word_dim = 64;
    cfg.model.joint_encoder_hidden = {256, 128};
    cfg.model.reference_cnn_channels = {64, 128, 256, 256, 256, 256, 256};
    for (auto& s : cfg.subtasks) {
        if (s.out == OutputKind::Waypoints)
            s.decoder_hidden = {2048, 1024, 256};
        else if (s.out != OutputKind::ClassLogits)
            s.decoder_hidden = {128};
    }
    return cfg;
}

TokenLayout token_layout(const HierarchyConfig& cfg) {
    TokenLayout l;
    l.vision0 = 0;
    l.vision_n = cfg.model.grid.tokens();
    l.lang = l.vision_n;
    l.joint = l.vision_n + 1;
    l.slot0 = l.vision_n + 2;
    l.slots_n = cfg.num_slots();
    l.tokens = l.slot0 + l.slots_n;
    return l;
}

SupervisionSet make_supervision(const HierarchyConfig& cfg, const FrameLabels& labels) {
    const TokenLayout layout = token_layout(cfg);
    const PatchGrid& grid = cfg.model.grid;
    SupervisionSet set;

    auto anchor_pos = [&](const SubtaskSpec& s) -> Vec2 {
        switch (s.anchor) {
            case Anchor::Ee: return labels.ee;
            case Anchor::Target: return labels.tar;
            case Anchor::Obstacle:
                if (!labels.obst)
                    throw LabelError("subtask '" + s.name + "' needs an obstacle label");
                return *labels.obst;
            case Anchor::None: break;
        }
        throw LabelError("subtask '" + s.name + "' has no label anchor");
    };

    for (size_t k = 0; k < cfg.subtasks.size(); ++k) {
        const auto& s = cfg.subtasks[k];
        auto emit = [&](int key) {
            set.pairs.push_back({s.layer, s.slot, key, static_cast<int>(k)});
        };
        if (s.attend_lang) emit(layout.lang);
        if (s.attend_joint) emit(layout.joint);
        for (const auto& dep : s.attend_slots)
            emit(layout.slot0 + cfg.subtask(dep).slot);
        if (s.attend_anchor_patch) {
            const int patch = world_to_patch(anchor_pos(s), grid);
            emit(layout.vision0 + patch);
            if (s.adjacent_patches) {
                const int ppr = grid.patches_per_row();
                const int row = patch / ppr, col = patch % ppr;
                if (row > 0) emit(layout.vision0 + patch - ppr);
                if (row + 1 < grid.patch_rows()) emit(layout.vision0 + patch + ppr);
                if (col > 0) emit(layout.vision0 + patch - 1);
                if (col + 1 < ppr) emit(layout.vision0 + patch + 1);
            }
        }
    }
    return set;
}

// ---------------------------------------------------------------------------
// JSON round trip
// ---------------------------------------------------------------------------

namespace {
using nlohmann::json;

const char* out_kind_name(OutputKind k) {
    switch (k) {
        case OutputKind::ClassLogits: return "class_logits";
        case OutputKind::PixelPos: return "pixel_pos";
        case OutputKind::WorldPos: return "world_pos";
        case OutputKind::Displacement: return "displacement";
        case OutputKind::Waypoints: return "waypoints";
    }
    return "?";
}
OutputKind out_kind_from(const std::string& s) {
    if (s == "class_logits") return OutputKind::ClassLogits;
    if (s == "pixel_pos") return OutputKind::PixelPos;
    if (s == "world_pos") return OutputKind::WorldPos;
    if (s == "displacement") return OutputKind::Displacement;
    if (s == "waypoints") return OutputKind::Waypoints;
    throw ConfigError("unknown output kind '" + s + "'");
}
const char* anchor_name(Anchor a) {
    switch (a) {
        case Anchor::None: return "none";
        case Anchor::Ee: return "ee";
        case Anchor::Target: return "target";
        case Anchor::Obstacle: return "obstacle";
    }
    return "?";
}
Anchor anchor_from(const std::string& s) {
    if (s == "none") return Anchor::None;
    if (s == "ee") return Anchor::Ee;
    if (s == "target") return Anchor::Target;
    if (s == "obstacle") return Anchor::Obstacle;
    throw ConfigError("unknown anchor '" + s + "'");
}
}  // namespace

std::string HierarchyConfig::to_json() const {
    json j;
    j["preset"] = preset;
    j["layers"] = layers;
    json subs = json::array();
    for (const auto& s : subtasks) {
        json js;
        js["name"] = s.name;
        js["out"] = out_kind_name(s.out);
        js["anchor"] = anchor_name(s.anchor);
        js["deps"] = s.deps;
        js["attend_slots"] = s.attend_slots;
        js["attend_lang"] = s.attend_lang;
        js["attend_joint"] = s.attend_joint;
        js["attend_anchor_patch"] = s.attend_anchor_patch;
        js["adjacent_patches"] = s.adjacent_patches;
        js["decoder_hidden"] = s.decoder_hidden;
        js["layer"] = s.layer;
        js["slot"] = s.slot;
        subs.push_back(js);
    }
    j["subtasks"] = subs;
    json m;
    m["d"] = model.d;
    m["heads"] = model.heads;
    m["image"] = {model.grid.height, model.grid.width};
    m["patch_stride"] = model.grid.stride;
    m["word_dim"] = model.word_dim;
    m["joint_encoder_hidden"] = model.joint_encoder_hidden;
    m["joint_dim"] = model.joint_dim;
    m["ctrl_horizon"] = model.ctrl_horizon;
    m["lang_classes"] = model.lang_classes;
    if (!model.reference_cnn_channels.empty())
        m["reference_cnn_channels"] = model.reference_cnn_channels;
    j["model"] = m;
    return j.dump(2);
}

HierarchyConfig HierarchyConfig::from_json(const std::string& text) {
    json j = json::parse(text, nullptr, false);
    if (j.is_discarded()) throw ConfigError("hierarchy config is not valid JSON");
    HierarchyConfig cfg;
    try {
        cfg.preset = j.value("preset", "custom");
        for (const auto& js : j.at("subtasks")) {
            SubtaskSpec s;
            s.name = js.at("name").get<std::string>();
            s.out = out_kind_from(js.at("out").get<std::string>());
            s.anchor = anchor_from(js.at("anchor").get<std::string>());
            s.deps = js.at("deps").get<std::vector<std::string>>();
            s.attend_slots = js.at("attend_slots").get<std::vector<std::string>>();
            s.attend_lang = js.at("attend_lang").get<bool>();
            s.attend_joint = js.at("attend_joint").get<bool>();
            s.attend_anchor_patch = js.at("attend_anchor_patch").get<bool>();
            s.adjacent_patches = js.at("adjacent_patches").get<bool>();
            s.decoder_hidden = js.at("decoder_hidden").get<std::vector<int>>();
            s.slot = js.at("slot").get<int>();
            cfg.subtasks.push_back(std::move(s));
        }
        const auto& m = j.at("model");
        cfg.model.d = m.at("d").get<int>();
        cfg.model.heads = m.at("heads").get<int>();
        cfg.model.grid.height = m.at("image").at(0).get<int>();
        cfg.model.grid.width = m.at("image").at(1).get<int>();
        cfg.model.grid.stride = m.at("patch_stride").get<int>();
        cfg.model.word_dim = m.at("word_dim").get<int>();
        cfg.model.joint_encoder_hidden = m.at("joint_encoder_hidden").get<std::vector<int>>();
        cfg.model.joint_dim = m.at("joint_dim").get<int>();
        cfg.model.ctrl_horizon = m.at("ctrl_horizon").get<int>();
        cfg.model.lang_classes = m.at("lang_classes").get<int>();
        if (m.contains("reference_cnn_channels"))
            cfg.model.reference_cnn_channels = m.at("reference_cnn_channels").get<std::vector<int>>();
    } catch (const json::exception& e) {
        throw ConfigError(std::string("hierarchy config: ") + e.what());
    }
    assign_layers(cfg);
    return cfg;
}

}  // namespace modattn
