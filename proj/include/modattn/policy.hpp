#pragma once

#include <array>
#include <span>
#include <string>
#include <vector>

#include "modattn/hierarchy.hpp"
#include "modattn/language.hpp"
#include "modattn/nn.hpp"
#include "modattn/tensor.hpp"

namespace modattn {

// Per-frame network input. Joint input is [joint angles..., gripper fraction],
// padded/truncated to cfg.model.joint_dim by the caller.
struct FrameView {
    std::span<const float> image;        // H*W*3
    std::span<const int32_t> tokens;     // instruction ids
    std::span<const float> joint_input;  // joint_dim floats
};

// Decoded per-subtask values, in stage order, plus the control action taken
// from the first predicted waypoint.
struct ModuleOutputs {
    std::vector<std::vector<double>> values;
    Action control;
};

// The full language-conditioned policy: modality encoders, register slots,
// the layered attention trunk with exposed maps, and per-subtask decoders.
// One engine per instance; forward() rebuilds the tape (call engine().reset()
// between frames, or use reset_and_forward).
template <typename S>
class Policy {
public:
    Policy(const HierarchyConfig& cfg, const Vocabulary& vocab, uint64_t init_seed)
        : cfg_(cfg), vocab_(vocab), store_(eng_, init_seed) {
        build();
    }
    Policy(const Policy& o) : cfg_(o.cfg_), vocab_(o.vocab_), store_(eng_, 0) {
        build();
        copy_params_from(o);
    }
    Policy& operator=(const Policy&) = delete;
    Policy(Policy&&) = default;

    const HierarchyConfig& config() const { return cfg_; }
    const Vocabulary& vocab() const { return vocab_; }
    Engine<S>& engine() { return eng_; }
    ParamStore<S>& params() { return store_; }
    const ParamStore<S>& params() const { return store_; }

    struct Forward {
        TokenLayout layout;
        NodeId assembled = -1;                // [vision | lang | joint | slots] tokens
        std::vector<AttentionMaps> maps;      // per layer
        NodeId slots_final = -1;              // K x d, after final layer + norm
        std::vector<NodeId> subtask_out;      // decoded node per subtask (stage order)
        ModuleOutputs outputs;
    };

    // Token assembly alone (exposed for layout tests): initial slot states
    // appended to the encoded modalities.
    NodeId assemble_tokens(const FrameView& f, TokenLayout* layout_out = nullptr) {
        const NodeId base = encode_base(f);
        const NodeId slots = slot_block();
        const std::array<NodeId, 2> parts{base, slots};
        if (layout_out) *layout_out = token_layout(cfg_);
        return eng_.concat_rows(parts);
    }

    Forward forward(const FrameView& f) {
        Forward fw;
        fw.layout = token_layout(cfg_);
        const NodeId base = encode_base(f);
        NodeId slots = slot_block();
        {
            const std::array<NodeId, 2> parts{base, slots};
            fw.assembled = eng_.concat_rows(parts);
        }
        for (int l = 0; l < cfg_.layers; ++l) {
            const std::array<NodeId, 2> parts{base, slots};
            const NodeId all = eng_.concat_rows(parts);
            const auto& ly = layers_[static_cast<size_t>(l)];
            const NodeId q = ly.ln_q.apply(eng_, slots);
            const NodeId kv = ly.ln_kv.apply(eng_, all);
            auto res = ly.attn.apply(eng_, q, kv);
            slots = eng_.add(slots, res.out);
            fw.maps.push_back(std::move(res.maps));
        }
        fw.slots_final = ln_final_.apply(eng_, slots);

        fw.outputs.values.resize(cfg_.subtasks.size());
        for (size_t k = 0; k < cfg_.subtasks.size(); ++k) {
            const auto& spec = cfg_.subtasks[k];
            const NodeId slot_state =
                eng_.slice_rows(fw.slots_final, spec.slot, spec.slot + 1);
            const NodeId out = decoders_[k].apply(eng_, slot_state);
            fw.subtask_out.push_back(out);
            auto vals = eng_.data(out);
            fw.outputs.values[k].assign(vals.begin(), vals.end());
            if (spec.out == OutputKind::Waypoints) {
                const auto& w = fw.outputs.values[k];
                fw.outputs.control = Action::clipped(w[0] * geom::kStepClip,
                                                     w[1] * geom::kStepClip, w[2]);
            }
        }
        return fw;
    }

    Forward reset_and_forward(const FrameView& f) {
        eng_.reset();
        return forward(f);
    }

    // Source and destination must share parameter names; shapes must match.
    void copy_params_from(const Policy& src) {
        for (size_t i = 0; i < store_.size(); ++i) {
            const NodeId sid = src.store_.find(store_.name(i));
            if (sid < 0) throw ContractError("copy_params_from: missing " + store_.name(i));
            if (src.eng_.shape(sid) != eng_.shape(store_.id(i)))
                throw ContractError("copy_params_from: shape mismatch for " + store_.name(i));
            auto s = src.eng_.data(sid);
            auto d = eng_.data(store_.id(i));
            std::copy(s.begin(), s.end(), d.begin());
        }
    }

    // Warm start by name; parameters absent from the table or with a
    // different shape (e.g. the joint encoder input layer after a joint-width
    // change) keep their fresh initialization. Returns the skipped names.
    std::vector<std::string> warm_start(
        const std::vector<std::pair<std::string, std::vector<float>>>& named,
        const std::vector<std::pair<std::string, Shape>>& shapes) {
        std::vector<std::string> skipped;
        for (size_t i = 0; i < store_.size(); ++i) {
            const std::string& name = store_.name(i);
            bool loaded = false;
            for (size_t j = 0; j < named.size(); ++j) {
                if (named[j].first != name) continue;
                if (shapes[j].second == eng_.shape(store_.id(i))) {
                    auto d = eng_.data(store_.id(i));
                    for (size_t t = 0; t < d.size(); ++t)
                        d[t] = static_cast<S>(named[j].second[t]);
                    loaded = true;
                }
                break;
            }
            if (!loaded) skipped.push_back(name);
        }
        return skipped;
    }

private:
    void build() {
        const auto& m = cfg_.model;
        if (m.heads <= 0 || m.d % m.heads != 0)
            throw ConfigError("model: heads must divide d");
        m.grid.validate();
        patch_ = PatchEmbed<S>::create(store_, "vision", m.grid, m.d);
        word_emb_ = store_.add("lang.emb", vocab_.size(), m.word_dim, m.word_dim);
        lang_proj_ = Linear<S>::create(store_, "lang.proj", m.word_dim, m.d);
        std::vector<int> jw = m.joint_encoder_hidden;
        jw.push_back(m.d);
        joint_enc_ = Mlp<S>::create(store_, "joint", m.joint_dim, jw);
        for (const auto& s : cfg_.subtasks)
            slot_init_.push_back(store_.add("slot." + s.name, 1, m.d, m.d));
        for (int l = 0; l < cfg_.layers; ++l) {
            Layer ly;
            const std::string base = "layer" + std::to_string(l);
            ly.ln_q = LayerNorm<S>::create(store_, base + ".ln_q", m.d);
            ly.ln_kv = LayerNorm<S>::create(store_, base + ".ln_kv", m.d);
            ly.attn = MultiHeadAttention<S>::create(store_, base + ".attn", m.d, m.heads);
            layers_.push_back(ly);
        }
        ln_final_ = LayerNorm<S>::create(store_, "ln_final", m.d);
        for (const auto& s : cfg_.subtasks) {
            std::vector<int> w = s.decoder_hidden;
            w.push_back(cfg_.output_dim(s));
            decoders_.push_back(Mlp<S>::create(store_, "dec." + s.name, m.d, w));
        }
        eng_.commit_params();
    }

    NodeId encode_base(const FrameView& f) {
        const auto& m = cfg_.model;
        if (static_cast<int>(f.joint_input.size()) != m.joint_dim)
            throw DimensionError("frame: joint input width " +
                                 std::to_string(f.joint_input.size()) + ", config expects " +
                                 std::to_string(m.joint_dim));
        // vision
        scratch_.assign(f.image.begin(), f.image.end());
        const NodeId vision = patch_.apply(eng_, scratch_);
        // language: mean of word embeddings, projected to d
        NodeId lang;
        if (f.tokens.empty()) {
            lang = eng_.leaf(1, m.d);
        } else {
            lang = lang_proj_.apply(eng_, eng_.mean_rows(eng_.gather_rows(word_emb_, f.tokens)));
        }
        // joints
        const NodeId jin = eng_.leaf(1, m.joint_dim);
        auto jd = eng_.data(jin);
        for (size_t i = 0; i < f.joint_input.size(); ++i) jd[i] = static_cast<S>(f.joint_input[i]);
        const NodeId joint = joint_enc_.apply(eng_, jin);

        const std::array<NodeId, 3> parts{vision, lang, joint};
        return eng_.concat_rows(parts);
    }

    NodeId slot_block() { return eng_.concat_rows(slot_init_); }

    struct Layer {
        LayerNorm<S> ln_q, ln_kv;
        MultiHeadAttention<S> attn;
    };

    HierarchyConfig cfg_;
    Vocabulary vocab_;
    Engine<S> eng_;
    ParamStore<S> store_;
    PatchEmbed<S> patch_;
    NodeId word_emb_ = -1;
    Linear<S> lang_proj_;
    Mlp<S> joint_enc_;
    std::vector<NodeId> slot_init_;
    std::vector<Layer> layers_;
    LayerNorm<S> ln_final_;
    std::vector<Mlp<S>> decoders_;
    std::vector<S> scratch_;
};

// ---------------------------------------------------------------------------
// Losses (graph builders; differentiable through the policy forward).
// ---------------------------------------------------------------------------

// Supervised-attention cost: sum over pairs of (M_rs - 1)^2 on the head-mean
// map of the pair's layer (per-head and cross-entropy variants behind flags).
template <typename S>
NodeId attention_loss_node(Engine<S>& eng, const std::vector<AttentionMaps>& maps,
                           const SupervisionSet& sup, int max_stage, bool per_head = false,
                           bool ce_form = false) {
    std::vector<NodeId> terms;
    for (int layer = 1; layer <= static_cast<int>(maps.size()); ++layer) {
        std::vector<std::array<int32_t, 2>> at;
        for (const auto& p : sup.pairs) {
            if (p.layer != layer || p.subtask > max_stage) continue;
            at.push_back({p.query_slot, p.key_token});
        }
        if (at.empty()) continue;
        const auto& m = maps[static_cast<size_t>(layer - 1)];
        auto one_map = [&](NodeId map) {
            const Shape s = eng.shape(map);
            for (const auto& [r, c] : at)
                if (r < 0 || r >= s.rows || c < 0 || c >= s.cols)
                    throw DimensionError("attention loss: pair (" + std::to_string(r) + "," +
                                         std::to_string(c) + ") outside map " + s.str());
            const NodeId picked = eng.gather_elems(map, at);
            if (ce_form) return eng.scale(eng.sum_all(eng.log(picked)), S(-1));
            return eng.sum_all(eng.square(eng.affine(picked, S(1), S(-1))));
        };
        if (per_head) {
            std::vector<NodeId> hs;
            for (NodeId h : m.heads) hs.push_back(one_map(h));
            terms.push_back(eng.scale(eng.sum_scalars(hs), S(1) / static_cast<S>(m.heads.size())));
        } else {
            terms.push_back(one_map(m.mean));
        }
    }
    return eng.sum_scalars(terms);
}

// Per-subtask targets for one frame.
struct FrameTargets {
    FrameLabels labels;
    std::vector<float> ctrl;  // horizon x 3, action channels normalized by the step clip
};

// Task loss for one subtask: cross-entropy for class logits, summed squared
// error otherwise (waypoints averaged over the horizon).
template <typename S>
NodeId task_loss_node(Engine<S>& eng, const HierarchyConfig& cfg, NodeId out,
                      const SubtaskSpec& spec, const FrameTargets& t) {
    auto sq_err = [&](std::span<const double> target) {
        const NodeId tgt = eng.leaf(1, static_cast<int>(target.size()));
        auto d = eng.data(tgt);
        for (size_t i = 0; i < target.size(); ++i) d[i] = static_cast<S>(target[i]);
        return eng.sum_all(eng.square(eng.sub(out, tgt)));
    };
    auto px_norm = [&](Vec2 p) {
        return std::array<double, 2>{(world_to_px(p.x) + 0.5) / geom::kImage,
                                     (world_to_px(p.y) + 0.5) / geom::kImage};
    };
    switch (spec.out) {
        case OutputKind::ClassLogits:
            return eng.scale(eng.pick(eng.log_softmax_rows(out), 0, t.labels.target_class), S(-1));
        case OutputKind::PixelPos: {
            Vec2 p;
            switch (spec.anchor) {
                case Anchor::Ee: p = t.labels.ee; break;
                case Anchor::Target: p = t.labels.tar; break;
                case Anchor::Obstacle:
                    if (!t.labels.obst) throw LabelError(spec.name + ": obstacle label missing");
                    p = *t.labels.obst;
                    break;
                default: throw LabelError(spec.name + ": no anchor");
            }
            const auto px = px_norm(p);
            return sq_err(px);
        }
        case OutputKind::WorldPos: {
            Vec2 p;
            switch (spec.anchor) {
                case Anchor::Ee: p = t.labels.ee; break;
                case Anchor::Target: p = t.labels.tar; break;
                case Anchor::Obstacle:
                    if (!t.labels.obst) throw LabelError(spec.name + ": obstacle label missing");
                    p = *t.labels.obst;
                    break;
                default: throw LabelError(spec.name + ": no anchor");
            }
            const std::array<double, 2> w{p.x, p.y};
            return sq_err(w);
        }
        case OutputKind::Displacement: {
            Vec2 to;
            if (spec.anchor == Anchor::Obstacle) {
                if (!t.labels.obst) throw LabelError(spec.name + ": obstacle label missing");
                to = *t.labels.obst;
            } else {
                to = t.labels.tar;
            }
            const std::array<double, 2> d{to.x - t.labels.ee.x, to.y - t.labels.ee.y};
            return sq_err(d);
        }
        case OutputKind::Waypoints: {
            if (static_cast<int>(t.ctrl.size()) != cfg.model.ctrl_horizon * 3)
                throw LabelError(spec.name + ": waypoint targets missing");
            std::vector<double> w(t.ctrl.begin(), t.ctrl.end());
            return eng.scale(sq_err(w), S(1) / static_cast<S>(cfg.model.ctrl_horizon));
        }
    }
    throw ContractError("task_loss: unhandled output kind");
}

}  // namespace modattn
