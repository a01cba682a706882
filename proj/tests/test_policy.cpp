#include <set>

#include "doctest.h"
#include "modattn/policy.hpp"

using namespace modattn;

namespace {

FrameView zero_frame(std::vector<float>& img, std::vector<int32_t>& toks,
                     std::vector<float>& joints, const HierarchyConfig& cfg) {
    img.assign(static_cast<size_t>(cfg.model.grid.height * cfg.model.grid.width * 3), 0.1f);
    toks = {1, 2, 3};
    joints.assign(static_cast<size_t>(cfg.model.joint_dim), 0.2f);
    return FrameView{img, toks, joints};
}

}  // namespace

TEST_CASE("base hierarchy layers follow the dependency cascade") {
    const HierarchyConfig cfg = HierarchyConfig::base();
    CHECK(cfg.layers == 5);
    CHECK(cfg.subtask("LANG").layer == 1);
    CHECK(cfg.subtask("EE2D").layer == 1);
    CHECK(cfg.subtask("TAR2D").layer == 2);
    CHECK(cfg.subtask("EE3D").layer == 2);
    CHECK(cfg.subtask("TAR3D").layer == 3);
    CHECK(cfg.subtask("DISP").layer == 4);
    CHECK(cfg.subtask("CTRL").layer == 5);
    // stage order is topological: every dep sits at a strictly earlier layer
    for (const auto& s : cfg.subtasks)
        for (const auto& d : s.deps) CHECK(cfg.subtask(d).layer < s.layer);
    // slots unique
    std::set<int> slots;
    for (const auto& s : cfg.subtasks) slots.insert(s.slot);
    CHECK(slots.size() == cfg.subtasks.size());
}

TEST_CASE("extend_hierarchy") {
    const HierarchyConfig base = HierarchyConfig::base();
    SUBCASE("obstacle preset matches the documented extension") {
        const HierarchyConfig ob = HierarchyConfig::obstacle();
        CHECK(ob.subtasks.size() == 10);
        CHECK(ob.subtask("OBST2D").layer == 1);
        CHECK(ob.subtask("OBST3D").layer == 2);
        CHECK(ob.subtask("DISP2").layer == 3);
        CHECK(ob.subtask("CTRL").layer == 5);
        // CTRL gained the DISP2 dependency
        const auto& ctrl = ob.subtask("CTRL");
        CHECK(std::find(ctrl.deps.begin(), ctrl.deps.end(), "DISP2") != ctrl.deps.end());
        // existing slots stable, new slots appended
        for (const auto& s : base.subtasks) CHECK(ob.subtask(s.name).slot == s.slot);
        CHECK(ob.subtask("OBST2D").slot == 7);
        CHECK(ob.subtask("DISP2").slot == 9);
    }
    SUBCASE("dependency-free subtask lands on layer 1") {
        SubtaskSpec extra;
        extra.name = "AUX";
        extra.out = OutputKind::WorldPos;
        extra.anchor = Anchor::Target;
        extra.decoder_hidden = {16};
        const HierarchyConfig ext = extend_hierarchy(base, {extra});
        CHECK(ext.subtask("AUX").layer == 1);
    }
    SUBCASE("self-dependency is a config error") {
        SubtaskSpec bad;
        bad.name = "LOOP";
        bad.out = OutputKind::WorldPos;
        bad.anchor = Anchor::Target;
        bad.deps = {"LOOP"};
        CHECK_THROWS_AS(extend_hierarchy(base, {bad}), ConfigError);
    }
    SUBCASE("cycles are config errors") {
        HierarchyConfig cfg = base;
        cfg.subtasks[0].deps.push_back("CTRL");  // LANG -> CTRL -> ... -> LANG
        CHECK_THROWS_AS(assign_layers(cfg), ConfigError);
    }
}

TEST_CASE("hierarchy config JSON round trip") {
    for (const HierarchyConfig& cfg :
         {HierarchyConfig::base(), HierarchyConfig::obstacle(), HierarchyConfig::paper_dims()}) {
        const HierarchyConfig back = HierarchyConfig::from_json(cfg.to_json());
        CHECK(back.subtasks == cfg.subtasks);
        CHECK(back.layers == cfg.layers);
        CHECK(back.model == cfg.model);
    }
    CHECK_THROWS_AS(HierarchyConfig::from_json("not json"), ConfigError);
}

TEST_CASE("token assembly") {
    const Vocabulary vocab = Vocabulary::standard();
    SUBCASE("base: 64 + 1 + 1 + 7 tokens") {
        const HierarchyConfig cfg = HierarchyConfig::base();
        Policy<float> policy(cfg, vocab, 3);
        std::vector<float> img, joints;
        std::vector<int32_t> toks;
        const FrameView f = zero_frame(img, toks, joints, cfg);
        TokenLayout layout;
        const NodeId tokens = policy.assemble_tokens(f, &layout);
        CHECK(policy.engine().shape(tokens).rows == 73);
        CHECK(layout.tokens == 73);
        CHECK(layout.lang == 64);
        CHECK(layout.joint == 65);
        CHECK(layout.slot0 == 66);
    }
    SUBCASE("obstacle preset: 64 + 1 + 1 + 10 tokens") {
        const HierarchyConfig cfg = HierarchyConfig::obstacle();
        Policy<float> policy(cfg, vocab, 3);
        std::vector<float> img, joints;
        std::vector<int32_t> toks;
        const FrameView f = zero_frame(img, toks, joints, cfg);
        TokenLayout layout;
        const NodeId tokens = policy.assemble_tokens(f, &layout);
        CHECK(policy.engine().shape(tokens).rows == 76);
        CHECK(layout.tokens == 76);
    }
}

TEST_CASE("policy forward") {
    const Vocabulary vocab = Vocabulary::standard();
    const HierarchyConfig cfg = HierarchyConfig::base();
    Policy<float> policy(cfg, vocab, 11);
    std::vector<float> img, joints;
    std::vector<int32_t> toks;
    const FrameView f = zero_frame(img, toks, joints, cfg);

    SUBCASE("maps cover every layer with slot-row queries over all tokens") {
        auto fw = policy.reset_and_forward(f);
        REQUIRE(fw.maps.size() == 5);
        for (const auto& m : fw.maps) {
            CHECK(policy.engine().shape(m.mean).rows == 7);
            CHECK(policy.engine().shape(m.mean).cols == 73);
        }
    }
    SUBCASE("deterministic, finite outputs; repeated calls bit-identical") {
        auto fw1 = policy.reset_and_forward(f);
        const auto v1 = fw1.outputs.values;
        auto fw2 = policy.reset_and_forward(f);
        for (size_t k = 0; k < v1.size(); ++k) {
            for (size_t i = 0; i < v1[k].size(); ++i) {
                CHECK(std::isfinite(v1[k][i]));
                CHECK(v1[k][i] == fw2.outputs.values[k][i]);
            }
        }
    }
    SUBCASE("CTRL output is exactly horizon x 3 and drives the control action") {
        auto fw = policy.reset_and_forward(f);
        const int ctrl = cfg.subtask_index("CTRL");
        REQUIRE(ctrl >= 0);
        CHECK(fw.outputs.values[static_cast<size_t>(ctrl)].size() == 30);
        const auto& w = fw.outputs.values[static_cast<size_t>(ctrl)];
        const Action direct = Action::clipped(w[0] * geom::kStepClip, w[1] * geom::kStepClip, w[2]);
        CHECK(fw.outputs.control.dx == direct.dx);
        CHECK(fw.outputs.control.gripper == direct.gripper);
    }
    SUBCASE("runtime queries equal the decoded outputs (single source)") {
        auto fw = policy.reset_and_forward(f);
        for (size_t k = 0; k < cfg.subtasks.size(); ++k) {
            const auto node_vals = policy.engine().data(fw.subtask_out[k]);
            REQUIRE(node_vals.size() == fw.outputs.values[k].size());
            for (size_t i = 0; i < node_vals.size(); ++i)
                CHECK(static_cast<double>(node_vals[i]) == fw.outputs.values[k][i]);
        }
    }
    SUBCASE("wrong joint width raises a dimension error") {
        std::vector<float> bad(5, 0.0f);
        CHECK_THROWS_AS(policy.reset_and_forward(FrameView{img, toks, bad}), DimensionError);
    }
}

TEST_CASE("supervision sets") {
    const HierarchyConfig cfg = HierarchyConfig::base();
    const TokenLayout layout = token_layout(cfg);
    FrameLabels labels;
    labels.ee = {0.5, 0.5};
    labels.tar = {10.5 / 48.0, 7.5 / 48.0};  // patch row 1, col 1 -> index 9
    labels.target_class = 2;

    const SupervisionSet sup = make_supervision(cfg, labels);

    auto pairs_of = [&](const std::string& name) {
        std::vector<SupPair> out;
        const int idx = cfg.subtask_index(name);
        for (const auto& p : sup.pairs)
            if (p.subtask == idx) out.push_back(p);
        return out;
    };

    SUBCASE("TAR2D points at the target's patch") {
        const auto ps = pairs_of("TAR2D");
        REQUIRE(ps.size() == 1);
        CHECK(ps[0].key_token == layout.vision0 + 9);
        CHECK(ps[0].layer == cfg.subtask("TAR2D").layer);
        CHECK(ps[0].query_slot == cfg.subtask("TAR2D").slot);
    }
    SUBCASE("LANG attends the language token") {
        const auto ps = pairs_of("LANG");
        REQUIRE(ps.size() == 1);
        CHECK(ps[0].key_token == layout.lang);
    }
    SUBCASE("EE2D adds in-grid adjacent patches") {
        const auto ps = pairs_of("EE2D");
        CHECK(ps.size() == 5);  // interior point: center + 4 neighbors
        FrameLabels corner = labels;
        corner.ee = {0.005, 0.005};  // patch 0: only 2 neighbors exist
        const auto cp = make_supervision(cfg, corner);
        int count = 0;
        for (const auto& p : cp.pairs) count += p.subtask == cfg.subtask_index("EE2D");
        CHECK(count == 3);
    }
    SUBCASE("EE3D attends its 2D slot and the joint token") {
        const auto ps = pairs_of("EE3D");
        REQUIRE(ps.size() == 2);
        CHECK(ps[0].key_token == layout.joint);
        CHECK(ps[1].key_token == layout.slot0 + cfg.subtask("EE2D").slot);
    }
    SUBCASE("CTRL has exactly three pairs in the base hierarchy") {
        const auto ps = pairs_of("CTRL");
        REQUIRE(ps.size() == 3);
        CHECK(ps[0].key_token == layout.lang);
        CHECK(ps[1].key_token == layout.slot0 + cfg.subtask("TAR3D").slot);
        CHECK(ps[2].key_token == layout.slot0 + cfg.subtask("DISP").slot);
    }
    SUBCASE("query indices are register-slot rows only") {
        for (const auto& p : sup.pairs) {
            CHECK(p.query_slot >= 0);
            CHECK(p.query_slot < layout.slots_n);
            CHECK(p.key_token >= 0);
            CHECK(p.key_token < layout.tokens);
        }
    }
    SUBCASE("obstacle subtask without a label is a label error") {
        const HierarchyConfig ob = HierarchyConfig::obstacle();
        CHECK_THROWS_AS(make_supervision(ob, labels), LabelError);
        FrameLabels with = labels;
        with.obst = Vec2{0.4, 0.4};
        const auto sup2 = make_supervision(ob, with);
        int obst_pairs = 0;
        for (const auto& p : sup2.pairs)
            obst_pairs += p.subtask == ob.subtask_index("OBST2D");
        CHECK(obst_pairs == 1);
    }
}

TEST_CASE("policy forward gradient check at 64-bit") {
    const Vocabulary vocab = Vocabulary::standard();
    HierarchyConfig cfg = HierarchyConfig::base();
    // small model keeps the finite-difference sweep quick
    cfg.model.d = 16;
    cfg.model.heads = 2;
    cfg.model.word_dim = 8;
    cfg.model.joint_encoder_hidden = {8};
    for (auto& s : cfg.subtasks) s.decoder_hidden = {8};

    Policy<double> policy(cfg, vocab, 21);
    std::vector<float> img(48 * 48 * 3);
    Rng rng(2);
    for (auto& v : img) v = static_cast<float>(rng.uniform(0, 1));
    std::vector<int32_t> toks{1, 4, 2};
    std::vector<float> joints{0.3f, -0.7f, 1.0f};
    const FrameView f{img, toks, joints};

    FrameLabels labels;
    labels.ee = {0.4, 0.6};
    labels.tar = {0.7, 0.3};
    labels.target_class = 1;

    auto& eng = policy.engine();
    auto build = [&]() {
        auto fw = policy.forward(f);
        const SupervisionSet sup = make_supervision(cfg, labels);
        const NodeId attn = attention_loss_node(eng, fw.maps, sup,
                                                static_cast<int>(cfg.subtasks.size()) - 1);
        FrameTargets t;
        t.labels = labels;
        t.ctrl.assign(static_cast<size_t>(cfg.model.ctrl_horizon) * 3, 0.1f);
        std::vector<NodeId> terms{attn};
        for (size_t k = 0; k < cfg.subtasks.size(); ++k)
            terms.push_back(task_loss_node(eng, cfg, fw.subtask_out[k], cfg.subtasks[k], t));
        return eng.sum_scalars(terms);
    };

    // a representative slice of parameters, sampled coordinates
    const std::vector<int> coords{0, 1, 5, 11};
    for (const char* name : {"layer0.attn.q.W", "layer2.attn.k.W", "vision.proj.W", "lang.emb",
                             "slot.TAR2D", "dec.CTRL.fc0.W", "joint.fc0.W", "ln_final.g"}) {
        const NodeId p = policy.params().find(name);
        REQUIRE(p >= 0);
        const double err = grad_check(eng, p, build, 1e-5, coords);
        INFO("param ", name);
        CHECK(err <= 1e-4);
    }
}
