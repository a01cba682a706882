#include <map>
#include <set>

#include "doctest.h"
#include "modattn/language.hpp"

using namespace modattn;

TEST_CASE("vocabulary") {
    const Vocabulary v = Vocabulary::standard();
    CHECK(v.words[0] == "<unk>");
    CHECK(v.id_of("zorp") == 0);
    CHECK(v.id_of("bottle") > 0);
    // dense unique ids
    std::set<std::string> uniq(v.words.begin(), v.words.end());
    CHECK(uniq.size() == v.words.size());

    SUBCASE("hash is stable and changes with the word set") {
        const Vocabulary v2 = Vocabulary::standard();
        CHECK(v.hash == v2.hash);
        auto words = v.words;
        words.push_back("extra");
        CHECK(Vocabulary::from_words(words).hash != v.hash);
    }
}

TEST_CASE("tokenize") {
    const Vocabulary v = Vocabulary::standard();
    SUBCASE("normalizes case and strips punctuation") {
        const auto ids = tokenize("Push the Green bottle!", v);
        REQUIRE(ids.size() == 4);
        CHECK(ids[0] == v.id_of("push"));
        CHECK(ids[1] == v.id_of("the"));
        CHECK(ids[2] == v.id_of("green"));
        CHECK(ids[3] == v.id_of("bottle"));
    }
    SUBCASE("empty string gives an empty sequence") {
        CHECK(tokenize("", v).empty());
    }
    SUBCASE("unknown words map to UNK") {
        const auto ids = tokenize("zorp the bottle", v);
        REQUIRE(ids.size() == 3);
        CHECK(ids[0] == 0);
        CHECK(ids[1] == v.id_of("the"));
        CHECK(ids[2] == v.id_of("bottle"));
    }
}

TEST_CASE("instruction generation") {
    const Vocabulary v = Vocabulary::standard();
    SUBCASE("deterministic under the same seed") {
        Rng a(42), b(42);
        const auto ia = generate_instruction(Task::Push, ObjectClass::Bottle, a, v);
        const auto ib = generate_instruction(Task::Push, ObjectClass::Bottle, b, v);
        CHECK(ia.raw == ib.raw);
        CHECK(ia.ids == ib.ids);
    }
    SUBCASE("verbs come from the task's verb list") {
        Rng rng(1);
        for (int i = 0; i < 50; ++i) {
            const auto ins = generate_instruction(Task::Pick, ObjectClass::Cube, rng, v);
            bool ok = false;
            for (const auto& verb : verb_phrases(Task::Pick))
                ok = ok || ins.raw.rfind(verb + " the ", 0) == 0;
            CHECK(ok);
            CHECK(ins.target_class == static_cast<int>(ObjectClass::Cube));
        }
    }
    SUBCASE("template parser accepts every verb for the same noun phrase") {
        // "<verb> the <adj> <noun>" decomposes for all verbs of the task class
        const Vocabulary vocab = Vocabulary::standard();
        for (Task t : {Task::Pick, Task::Push, Task::Putdown}) {
            for (const auto& verb : verb_phrases(t)) {
                const std::string raw = verb + " the green bottle";
                const auto ids = tokenize(raw, vocab);
                for (int32_t id : ids) CHECK(id != 0);  // fully in-vocabulary
            }
        }
    }
    SUBCASE("no token-bag collision between classes") {
        // every (adj, noun) pair must identify its class through the bag of words
        std::map<std::multiset<std::string>, int> seen;
        for (int c = 0; c < kNumObjectClasses; ++c) {
            const auto cls = static_cast<ObjectClass>(c);
            for (const auto& adj : adjective_rows(cls))
                for (const auto& noun : noun_rows(cls)) {
                    std::multiset<std::string> bag;
                    const auto ids = tokenize(adj + " " + noun, Vocabulary::standard());
                    for (int32_t id : ids) bag.insert(Vocabulary::standard().words[static_cast<size_t>(id)]);
                    auto it = seen.find(bag);
                    if (it != seen.end()) CHECK(it->second == c);
                    seen[bag] = c;
                }
        }
    }
    SUBCASE("known template phrases appear") {
        Rng rng(7);
        bool saw_push_bottle = false;
        for (int i = 0; i < 200; ++i) {
            const auto ins = generate_instruction(Task::Push, ObjectClass::Bottle, rng, v);
            saw_push_bottle = saw_push_bottle || ins.raw == "push the green bottle";
        }
        CHECK(saw_push_bottle);
    }
}
