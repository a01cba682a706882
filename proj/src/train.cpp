#include "modattn/train.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>

namespace modattn {

StagePlan default_plan(const HierarchyConfig& cfg, const TrainOptions& opt) {
    StagePlan plan;
    plan.patience = opt.patience;
    plan.tau = opt.tau;
    for (const auto& s : cfg.subtasks) plan.stages.push_back({s.name, opt.max_epochs_per_stage});
    return plan;
}

FrameSplit split_frames(const Dataset& ds, double val_fraction, uint64_t seed, int episode_limit) {
    int n = static_cast<int>(ds.episodes.size());
    if (episode_limit > 0) n = std::min(n, episode_limit);
    if (n == 0) throw TrainError("empty dataset");
    std::vector<int> eps(static_cast<size_t>(n));
    for (int i = 0; i < n; ++i) eps[static_cast<size_t>(i)] = i;
    Rng rng(derive_seed(seed, 0x73706c69ull));
    rng.shuffle(eps);
    int n_val = static_cast<int>(std::lround(n * val_fraction));
    n_val = std::clamp(n_val, n > 1 ? 1 : 0, n - 1);

    FrameSplit split;
    for (int i = 0; i < n; ++i) {
        const int e = eps[static_cast<size_t>(i)];
        auto& dst = i < n_val ? split.val : split.train;
        const int T = static_cast<int>(ds.episodes[static_cast<size_t>(e)].steps.size());
        for (int t = 0; t < T; ++t) dst.push_back({e, t});
    }
    if (split.train.empty() || split.val.empty())
        throw TrainError("train/validation split came up empty");
    return split;
}

FrameLabels frame_labels(const Demonstration& ep, int t) {
    const auto& st = ep.steps[static_cast<size_t>(t)];
    FrameLabels l;
    l.ee = st.ee;
    l.tar = st.tar;
    l.obst = st.obst;
    l.target_class = ep.instruction.target_class;
    return l;
}

FrameTargets frame_targets(const Demonstration& ep, int t, const HierarchyConfig& cfg) {
    FrameTargets ft;
    ft.labels = frame_labels(ep, t);
    const int T = static_cast<int>(ep.steps.size());
    ft.ctrl.reserve(static_cast<size_t>(cfg.model.ctrl_horizon) * 3);
    for (int h = 0; h < cfg.model.ctrl_horizon; ++h) {
        const auto& a = ep.steps[static_cast<size_t>(std::min(t + h, T - 1))].act;
        ft.ctrl.push_back(static_cast<float>(a.dx / geom::kStepClip));
        ft.ctrl.push_back(static_cast<float>(a.dy / geom::kStepClip));
        ft.ctrl.push_back(static_cast<float>(a.gripper));
    }
    return ft;
}

std::vector<float> joint_input(std::span<const float> joints, float gripper, int joint_dim) {
    std::vector<float> v(joints.begin(), joints.end());
    v.push_back(gripper);
    if (static_cast<int>(v.size()) > joint_dim) {
        v.resize(static_cast<size_t>(joint_dim));
        v.back() = gripper;  // keep the gripper channel when reducing
    } else {
        v.resize(static_cast<size_t>(joint_dim), 0.0f);
    }
    return v;
}

void append_csv_header(std::string& csv, const HierarchyConfig& cfg) {
    csv += "stage,epoch,split";
    for (const auto& s : cfg.subtasks) csv += ",L_" + s.name;
    for (const auto& s : cfg.subtasks) csv += ",Psi_" + s.name;
    csv += ",E\n";
}

void append_csv_row(std::string& csv, const LossReport& r) {
    char buf[64];
    csv += std::to_string(r.stage) + "," + std::to_string(r.epoch) + "," + r.split;
    auto add = [&](double v) {
        std::snprintf(buf, sizeof buf, ",%.9g", v);
        csv += buf;
    };
    for (double v : r.attn) add(v);
    for (double v : r.task) add(v);
    add(r.total);
    csv += "\n";
}

namespace {

// Per-frame loss graph: builds E_k = sum_{t<=k} (L_t + lambda * Psi_t) and
// reports the component values.
struct FrameLossValues {
    std::vector<double> attn, task;
    double total = 0.0;
};

NodeId frame_loss(Policy<float>& policy, const Dataset& ds, FrameRef ref, int max_stage,
                  const TrainOptions& opt, FrameLossValues* values) {
    const auto& cfg = policy.config();
    auto& eng = policy.engine();
    const auto& ep = ds.episodes[static_cast<size_t>(ref.ep)];
    const auto& st = ep.steps[static_cast<size_t>(ref.t)];

    const std::vector<float> jin =
        joint_input(st.joints, st.gripper_open, cfg.model.joint_dim);
    FrameView view{st.image.px, ep.instruction.ids, jin};
    auto fw = policy.forward(view);

    const FrameTargets targets = frame_targets(ep, ref.t, cfg);
    const SupervisionSet sup = make_supervision(cfg, targets.labels);

    std::vector<NodeId> terms;
    if (values) {
        values->attn.assign(cfg.subtasks.size(), 0.0);
        values->task.assign(cfg.subtasks.size(), 0.0);
    }
    for (int k = 0; k <= max_stage; ++k) {
        if (opt.sup_attention) {
            bool any = false;
            for (const auto& p : sup.pairs) any = any || p.subtask == k;
            if (any) {
                std::vector<NodeId> layer_terms;
                SupervisionSet only;
                for (const auto& p : sup.pairs)
                    if (p.subtask == k) only.pairs.push_back(p);
                const NodeId lk = attention_loss_node(eng, fw.maps, only, k,
                                                      opt.per_head_supervision, opt.ce_attention);
                terms.push_back(lk);
                if (values) values->attn[static_cast<size_t>(k)] = eng.value(lk);
            }
        }
        const auto& spec = cfg.subtasks[static_cast<size_t>(k)];
        NodeId psi = task_loss_node(eng, cfg, fw.subtask_out[static_cast<size_t>(k)], spec, targets);
        if (values) values->task[static_cast<size_t>(k)] = eng.value(psi);
        if (opt.loss_lambda != 1.0)
            psi = eng.scale(psi, static_cast<float>(opt.loss_lambda));
        terms.push_back(psi);
    }
    const NodeId total = eng.sum_scalars(terms);
    if (values) values->total = eng.value(total);
    return total;
}

struct StageOutcome {
    double open_val = 0.0;
    double close_val = 0.0;
    int epochs = 0;
};

}  // namespace

TrainResult train_curriculum(const Dataset& ds, const HierarchyConfig& cfg_in,
                             const StagePlan& plan, const TrainOptions& opt, uint64_t seed,
                             const Policy<float>* warm_from) {
    if (ds.episodes.empty()) throw TrainError("empty dataset");
    HierarchyConfig cfg = cfg_in;
    cfg.model.joint_dim = ds.episodes[0].links + 1;
    for (const auto& ep : ds.episodes)
        if (ep.links + 1 != cfg.model.joint_dim)
            throw TrainError("dataset mixes joint widths");

    const Vocabulary vocab = Vocabulary::from_words(ds.manifest.vocab_words);
    if (static_cast<int>(plan.stages.size()) > cfg.num_slots())
        throw ConfigError("stage plan longer than subtask list");
    for (size_t i = 0; i < plan.stages.size(); ++i)
        if (plan.stages[i].subtask != cfg.subtasks[i].name)
            throw ConfigError("stage plan order must match the hierarchy order (stage " +
                              std::to_string(i + 1) + " is '" + plan.stages[i].subtask +
                              "', hierarchy has '" + cfg.subtasks[i].name + "')");

    TrainResult result;
    result.policy = std::make_unique<Policy<float>>(cfg, vocab, derive_seed(seed, 0x1417ull));
    if (warm_from) {
        std::vector<std::pair<std::string, std::vector<float>>> named;
        std::vector<std::pair<std::string, Shape>> shapes;
        const auto& st = warm_from->params();
        auto& weng = const_cast<Policy<float>*>(warm_from)->engine();
        for (size_t i = 0; i < st.size(); ++i) {
            auto d = weng.data(st.id(i));
            named.emplace_back(st.name(i), std::vector<float>(d.begin(), d.end()));
            shapes.emplace_back(st.name(i), weng.shape(st.id(i)));
        }
        result.policy->warm_start(named, shapes);
    }
    Policy<float>& policy = *result.policy;
    auto& eng = policy.engine();

    const FrameSplit split = split_frames(ds, opt.val_fraction, seed, opt.episode_limit);

    // fixed validation subsample
    std::vector<FrameRef> val = split.val;
    {
        Rng vr(derive_seed(seed, 0x76616cull));
        vr.shuffle(val);
        if (static_cast<int>(val.size()) > opt.val_frames)
            val.resize(static_cast<size_t>(opt.val_frames));
    }

    Adam<float> adam(static_cast<float>(opt.lr));
    std::string csv;
    if (!opt.csv_path.empty()) append_csv_header(csv, cfg);

    const int n_stages = opt.staged ? static_cast<int>(plan.stages.size()) : 1;
    int global_epochs = 0;

    // frozen-parameter snapshot (study flag)
    auto frozen_names = [&](int stage_hi) {
        std::vector<std::string> names;
        if (!opt.freeze_earlier) return names;
        for (int k = 0; k < stage_hi; ++k) {
            const auto& nm = cfg.subtasks[static_cast<size_t>(k)].name;
            names.push_back("slot." + nm);
            for (size_t i = 0; i < policy.params().size(); ++i)
                if (policy.params().name(i).rfind("dec." + nm + ".", 0) == 0)
                    names.push_back(policy.params().name(i));
        }
        return names;
    };

    for (int stage = 0; stage < n_stages; ++stage) {
        const int max_stage = opt.staged ? stage : static_cast<int>(plan.stages.size()) - 1;
        int max_epochs = opt.staged ? plan.stages[static_cast<size_t>(stage)].max_epochs : 0;
        if (!opt.staged)
            for (const auto& s : plan.stages) max_epochs += s.max_epochs;

        const auto frozen = frozen_names(max_stage == 0 ? 0 : (opt.staged ? stage : 0));
        std::vector<std::pair<NodeId, std::vector<float>>> frozen_copy;
        for (const auto& name : frozen) {
            const NodeId id = policy.params().find(name);
            if (id >= 0)
                frozen_copy.emplace_back(id, std::vector<float>(eng.data(id).begin(),
                                                                eng.data(id).end()));
        }

        double best_val = std::numeric_limits<double>::infinity();
        int streak = 0;
        for (int epoch = 0; epoch < max_epochs; ++epoch) {
            // deterministic epoch subsample
            std::vector<FrameRef> order = split.train;
            Rng er(derive_seed(seed, 0xe0000ull + static_cast<uint64_t>(stage) * 4096u +
                                         static_cast<uint64_t>(epoch)));
            er.shuffle(order);
            if (static_cast<int>(order.size()) > opt.frames_per_epoch)
                order.resize(static_cast<size_t>(opt.frames_per_epoch));

            LossReport train_rep;
            train_rep.stage = max_stage + 1;
            train_rep.epoch = global_epochs;
            train_rep.split = "train";
            train_rep.attn.assign(cfg.subtasks.size(), 0.0);
            train_rep.task.assign(cfg.subtasks.size(), 0.0);
            int counted = 0;

            for (size_t at = 0; at < order.size(); at += static_cast<size_t>(opt.batch)) {
                const size_t hi = std::min(order.size(), at + static_cast<size_t>(opt.batch));
                const float inv_b = 1.0f / static_cast<float>(hi - at);
                for (size_t i = at; i < hi; ++i) {
                    eng.reset();
                    FrameLossValues v;
                    const NodeId loss = frame_loss(policy, ds, order[i], max_stage, opt, &v);
                    if (!std::isfinite(v.total))
                        throw TrainError("loss diverged at stage " + std::to_string(max_stage + 1) +
                                         " epoch " + std::to_string(epoch));
                    eng.backward(eng.scale(loss, inv_b));
                    for (size_t k = 0; k < v.attn.size(); ++k) {
                        train_rep.attn[k] += v.attn[k];
                        train_rep.task[k] += v.task[k];
                    }
                    train_rep.total += v.total;
                    ++counted;
                }
                adam.step(policy.params());
                for (auto& [id, saved] : frozen_copy) {
                    auto d = eng.data(id);
                    std::copy(saved.begin(), saved.end(), d.begin());
                }
            }
            if (counted > 0) {
                for (auto& v : train_rep.attn) v /= counted;
                for (auto& v : train_rep.task) v /= counted;
                train_rep.total /= counted;
            }

            // validation (forward only)
            LossReport val_rep;
            val_rep.stage = max_stage + 1;
            val_rep.epoch = global_epochs;
            val_rep.split = "val";
            val_rep.attn.assign(cfg.subtasks.size(), 0.0);
            val_rep.task.assign(cfg.subtasks.size(), 0.0);
            for (const auto& ref : val) {
                eng.reset();
                FrameLossValues v;
                frame_loss(policy, ds, ref, max_stage, opt, &v);
                for (size_t k = 0; k < v.attn.size(); ++k) {
                    val_rep.attn[k] += v.attn[k];
                    val_rep.task[k] += v.task[k];
                }
                val_rep.total += v.total;
            }
            eng.reset();
            const double nv = static_cast<double>(val.size());
            for (auto& v : val_rep.attn) v /= nv;
            for (auto& v : val_rep.task) v /= nv;
            val_rep.total /= nv;

            result.history.push_back(train_rep);
            result.history.push_back(val_rep);
            if (!opt.csv_path.empty()) {
                append_csv_row(csv, train_rep);
                append_csv_row(csv, val_rep);
            }
            ++global_epochs;

            // convergence: relative improvement under tau for `patience` epochs
            if (val_rep.total < best_val * (1.0 - plan.tau)) {
                best_val = val_rep.total;
                streak = 0;
            } else {
                best_val = std::min(best_val, val_rep.total);
                ++streak;
                if (streak >= plan.patience) break;
            }
        }
        ++result.stages_completed;
    }
    result.total_epochs = global_epochs;
    if (!opt.csv_path.empty()) write_file(opt.csv_path, csv);
    return result;
}

TrainResult train_ablation(AblationMode mode, const Dataset& ds, const HierarchyConfig& cfg,
                           const TrainOptions& opt, uint64_t seed) {
    TrainOptions o = opt;
    if (mode == AblationMode::NoSupervisedAttention)
        o.sup_attention = false;
    else
        o.staged = false;
    return train_curriculum(ds, cfg, default_plan(cfg, o), o, seed);
}

TrainResult fine_tune(const Checkpoint& master, const Dataset& new_data, FineTuneBudget budget,
                      const TrainOptions& opt, uint64_t seed) {
    const Vocabulary data_vocab = Vocabulary::from_words(new_data.manifest.vocab_words);
    if (data_vocab.hash != master.vocab_hash)
        throw FormatError("fine_tune: vocabulary hash mismatch between checkpoint and dataset");

    auto warm = policy_from_checkpoint(master);
    if (budget.episodes == 0) {
        TrainResult r;
        r.policy = std::move(warm);
        return r;
    }
    TrainOptions o = opt;
    o.episode_limit = budget.episodes;
    o.max_epochs_per_stage = budget.max_epochs_per_stage;
    return train_curriculum(new_data, master.config, default_plan(master.config, o), o, seed,
                            warm.get());
}

}  // namespace modattn
