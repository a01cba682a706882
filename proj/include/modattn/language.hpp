#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "modattn/util.hpp"
#include "modattn/world.hpp"

namespace modattn {

// Closed template lexicon plus UNK (id 0). Dense ids; stable FNV hash over
// the ordered word list.
struct Vocabulary {
    std::vector<std::string> words;
    uint64_t hash = 0;

    static Vocabulary standard();
    static Vocabulary from_words(std::vector<std::string> words);

    int id_of(const std::string& w) const;
    int size() const { return static_cast<int>(words.size()); }
};

struct Instruction {
    std::string raw;
    std::vector<int32_t> ids;
    Task verb_class = Task::Push;
    int target_class = 0;
};

// Lowercase, strip punctuation, split on whitespace; OOV words map to UNK.
std::vector<int32_t> tokenize(const std::string& raw, const Vocabulary& vocab);

// "<verb phrase> the <adj> <noun>" drawn from the task's verb list and the
// object's adjective/noun rows.
Instruction generate_instruction(Task task, ObjectClass cls, Rng& rng, const Vocabulary& vocab);

// Template tables, exposed for tests.
const std::vector<std::string>& verb_phrases(Task task);
const std::vector<std::string>& adjective_rows(ObjectClass cls);  // may contain ""
const std::vector<std::string>& noun_rows(ObjectClass cls);

}  // namespace modattn
