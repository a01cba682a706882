#include "modattn/train.hpp"
#include "vendor_json.hpp"

namespace modattn {

namespace {
constexpr uint32_t kMagic = 0x4e54414d;  // "MATN"
constexpr uint32_t kVersion = 1;
}  // namespace

Checkpoint snapshot(const Policy<float>& policy, int stage_reached, int epochs, uint64_t seed) {
    Checkpoint ck;
    ck.config = policy.config();
    ck.vocab_words = policy.vocab().words;
    ck.vocab_hash = policy.vocab().hash;
    ck.stage_reached = stage_reached;
    ck.epochs = epochs;
    ck.seed = seed;
    const auto& st = policy.params();
    auto& eng = const_cast<Policy<float>&>(policy).engine();
    for (size_t i = 0; i < st.size(); ++i) {
        auto d = eng.data(st.id(i));
        ck.shapes.emplace_back(st.name(i), eng.shape(st.id(i)));
        ck.params.emplace_back(st.name(i), std::vector<float>(d.begin(), d.end()));
    }
    return ck;
}

std::string encode_checkpoint(const Checkpoint& ck) {
    nlohmann::json j;
    j["config"] = nlohmann::json::parse(ck.config.to_json());
    j["vocabulary"] = ck.vocab_words;
    char hex[32];
    std::snprintf(hex, sizeof hex, "%016llx", static_cast<unsigned long long>(ck.vocab_hash));
    j["vocab_hash"] = hex;
    j["meta"] = {{"stage_reached", ck.stage_reached}, {"epochs", ck.epochs}, {"seed", ck.seed}};
    const std::string meta = j.dump();

    std::string out;
    put_u32(out, kMagic);
    put_u32(out, kVersion);
    put_u64(out, meta.size());
    out += meta;
    put_u32(out, static_cast<uint32_t>(ck.params.size()));
    for (size_t i = 0; i < ck.params.size(); ++i) {
        const auto& [name, data] = ck.params[i];
        put_u32(out, static_cast<uint32_t>(name.size()));
        out += name;
        put_u32(out, static_cast<uint32_t>(ck.shapes[i].second.rows));
        put_u32(out, static_cast<uint32_t>(ck.shapes[i].second.cols));
        for (float v : data) put_f32(out, v);
    }
    return out;
}

Checkpoint decode_checkpoint(const std::string& bytes) {
    ByteReader r(bytes, "checkpoint");
    if (r.u32() != kMagic) throw FormatError("checkpoint: bad magic (expected MATN)");
    const uint32_t version = r.u32();
    if (version != kVersion)
        throw FormatError("checkpoint: unsupported version " + std::to_string(version));
    const std::string meta = r.bytes(r.u64());
    nlohmann::json j = nlohmann::json::parse(meta, nullptr, false);
    if (j.is_discarded()) throw FormatError("checkpoint: metadata is not valid JSON");

    Checkpoint ck;
    ck.version = version;
    ck.config = HierarchyConfig::from_json(j.at("config").dump());
    ck.vocab_words = j.at("vocabulary").get<std::vector<std::string>>();
    ck.vocab_hash = Vocabulary::from_words(ck.vocab_words).hash;
    char hex[32];
    std::snprintf(hex, sizeof hex, "%016llx", static_cast<unsigned long long>(ck.vocab_hash));
    if (j.at("vocab_hash").get<std::string>() != std::string(hex))
        throw FormatError("checkpoint: vocabulary hash mismatch");
    ck.stage_reached = j.at("meta").at("stage_reached").get<int>();
    ck.epochs = j.at("meta").at("epochs").get<int>();
    ck.seed = j.at("meta").at("seed").get<uint64_t>();

    const uint32_t n = r.u32();
    for (uint32_t i = 0; i < n; ++i) {
        const std::string name = r.bytes(r.u32());
        Shape s;
        s.rows = static_cast<int>(r.u32());
        s.cols = static_cast<int>(r.u32());
        std::vector<float> data(static_cast<size_t>(s.size()));
        for (auto& v : data) v = r.f32();
        ck.shapes.emplace_back(name, s);
        ck.params.emplace_back(name, std::move(data));
    }
    if (r.remaining() != 0)
        throw FormatError("checkpoint: " + std::to_string(r.remaining()) +
                          " trailing bytes at offset " + std::to_string(r.pos()));
    return ck;
}

void save_checkpoint(const std::string& path, const Checkpoint& ck) {
    write_file(path, encode_checkpoint(ck));
}

Checkpoint load_checkpoint(const std::string& path) {
    return decode_checkpoint(read_file(path));
}

std::unique_ptr<Policy<float>> policy_from_checkpoint(const Checkpoint& ck) {
    const Vocabulary vocab = Vocabulary::from_words(ck.vocab_words);
    auto policy = std::make_unique<Policy<float>>(ck.config, vocab, 1);
    auto& store = policy->params();
    auto& eng = policy->engine();
    for (size_t i = 0; i < store.size(); ++i) {
        const std::string& name = store.name(i);
        bool found = false;
        for (size_t j = 0; j < ck.params.size(); ++j) {
            if (ck.params[j].first != name) continue;
            if (ck.shapes[j].second != eng.shape(store.id(i)))
                throw FormatError("checkpoint: shape mismatch for parameter '" + name + "'");
            auto d = eng.data(store.id(i));
            std::copy(ck.params[j].second.begin(), ck.params[j].second.end(), d.begin());
            found = true;
            break;
        }
        if (!found) throw FormatError("checkpoint: missing parameter '" + name + "'");
    }
    return policy;
}

void require_config(const Checkpoint& ck, const HierarchyConfig& cfg) {
    if (ck.config.subtasks != cfg.subtasks || ck.config.layers != cfg.layers ||
        !(ck.config.model == cfg.model))
        throw ConfigError("checkpoint hierarchy '" + ck.config.preset +
                          "' does not match the requested config '" + cfg.preset + "'");
}

}  // namespace modattn
