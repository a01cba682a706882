#include "modattn/language.hpp"

#include <algorithm>
#include <cctype>
#include <unordered_map>

namespace modattn {

namespace {

const std::vector<std::string> kVerbsPick{"pick", "pick up", "raise"};
const std::vector<std::string> kVerbsPush{"push", "move"};
const std::vector<std::string> kVerbsPut{"put down", "place down"};

struct NounTemplate {
    std::vector<std::string> adjs;  // "" = no adjective
    std::vector<std::string> nouns;
};

const NounTemplate& noun_template(ObjectClass cls) {
    static const std::unordered_map<int, NounTemplate> t{
        {static_cast<int>(ObjectClass::Coke), {{"red", "coke", "cocacola"}, {"can", "bottle"}}},
        {static_cast<int>(ObjectClass::Pepsi), {{"blue", "pepsi", "pepsi coke"}, {"can", "bottle"}}},
        {static_cast<int>(ObjectClass::Bottle), {{"green", "glass", "", "green glass"}, {"bottle"}}},
        {static_cast<int>(ObjectClass::Carton), {{"milk", "white"}, {"carton", "box"}}},
        {static_cast<int>(ObjectClass::Cube), {{"red", "maroon"}, {"object", "cube", "square"}}},
        {static_cast<int>(ObjectClass::Bread), {{""}, {"bread", "yellow object", "brown object"}}},
    };
    return t.at(static_cast<int>(cls));
}

}  // namespace

const std::vector<std::string>& verb_phrases(Task task) {
    switch (task) {
        case Task::Pick: return kVerbsPick;
        case Task::Push: return kVerbsPush;
        case Task::Putdown: return kVerbsPut;
    }
    return kVerbsPush;
}

const std::vector<std::string>& adjective_rows(ObjectClass cls) { return noun_template(cls).adjs; }
const std::vector<std::string>& noun_rows(ObjectClass cls) { return noun_template(cls).nouns; }

Vocabulary Vocabulary::from_words(std::vector<std::string> words) {
    Vocabulary v;
    v.words = std::move(words);
    uint64_t h = 0xcbf29ce484222325ull;
    for (const auto& w : v.words) {
        h = fnv1a64(w, h);
        h = fnv1a64("\n", h);
    }
    v.hash = h;
    return v;
}

Vocabulary Vocabulary::standard() {
    std::vector<std::string> words{"<unk>"};
    auto add_phrase = [&](const std::string& phrase) {
        std::string w;
        for (char c : phrase + " ") {
            if (c == ' ') {
                if (!w.empty() && std::find(words.begin(), words.end(), w) == words.end())
                    words.push_back(w);
                w.clear();
            } else {
                w.push_back(c);
            }
        }
    };
    add_phrase("the");
    for (Task t : {Task::Pick, Task::Push, Task::Putdown})
        for (const auto& v : verb_phrases(t)) add_phrase(v);
    for (int c = 0; c < kNumObjectClasses; ++c) {
        const auto cls = static_cast<ObjectClass>(c);
        for (const auto& adj : adjective_rows(cls)) add_phrase(adj);
        for (const auto& noun : noun_rows(cls)) add_phrase(noun);
    }
    return from_words(std::move(words));
}

int Vocabulary::id_of(const std::string& w) const {
    for (size_t i = 1; i < words.size(); ++i)
        if (words[i] == w) return static_cast<int>(i);
    return 0;  // UNK
}

std::vector<int32_t> tokenize(const std::string& raw, const Vocabulary& vocab) {
    std::vector<int32_t> ids;
    std::string w;
    auto flush = [&]() {
        if (!w.empty()) {
            ids.push_back(vocab.id_of(w));
            w.clear();
        }
    };
    for (char c : raw) {
        if (std::isalnum(static_cast<unsigned char>(c)))
            w.push_back(static_cast<char>(std::tolower(static_cast<unsigned char>(c))));
        else if (std::isspace(static_cast<unsigned char>(c)))
            flush();
        // punctuation dropped
    }
    flush();
    return ids;
}

Instruction generate_instruction(Task task, ObjectClass cls, Rng& rng, const Vocabulary& vocab) {
    const auto& verbs = verb_phrases(task);
    const auto& tmpl = noun_template(cls);
    const std::string& verb = verbs[static_cast<size_t>(rng.uniform_int(static_cast<int>(verbs.size())))];
    const std::string& adj =
        tmpl.adjs[static_cast<size_t>(rng.uniform_int(static_cast<int>(tmpl.adjs.size())))];
    const std::string& noun =
        tmpl.nouns[static_cast<size_t>(rng.uniform_int(static_cast<int>(tmpl.nouns.size())))];

    Instruction ins;
    ins.raw = verb + " the " + (adj.empty() ? noun : adj + " " + noun);
    ins.ids = tokenize(ins.raw, vocab);
    ins.verb_class = task;
    ins.target_class = static_cast<int>(cls);
    return ins;
}

}  // namespace modattn
