#include <gtest/gtest.h>

#include <mutex>
#include <set>

#include "fixtures.hpp"
#include "s2conv/conversation.hpp"
#include "s2conv/error.hpp"
#include "s2conv/mock_backend.hpp"

using namespace s2conv;
namespace oracle = s2conv::testing::oracle;

namespace {

const CharacterBank& bank() {
    static const CharacterBank b = s2conv::testing::fixture_bank();
    return b;
}

bool is_seeker_request(std::span<const ChatMessage> m) {
    return m.front().content.find("you are the seeker") != std::string::npos;
}

int own_turns(std::span<const ChatMessage> m) {
    int n = 0;
    for (const auto& msg : m) n += msg.role == Role::Assistant;
    return n;
}

// Seeker closes on its `close_on`-th turn (1-based, 0 = never); supporters
// always talk about their sister.
RulebookBackend scripted(int close_on, std::vector<std::vector<ChatMessage>>* supporter_requests = nullptr) {
    RulebookBackend backend;
    auto mutex = std::make_shared<std::mutex>();
    backend.set_default([=](std::span<const ChatMessage> m, const GenerationParams&) {
        if (is_seeker_request(m)) {
            const int k = own_turns(m) + 1;
            if (close_on != 0 && k == close_on) return std::string("Thanks, that helped. [END]");
            return "my shop lease troubles me, turn " + std::to_string(k);
        }
        if (supporter_requests) {
            std::lock_guard lock(*mutex);
            supporter_requests->emplace_back(m.begin(), m.end());
        }
        return std::string("I hear you. My brother calls me when he is in trouble too.");
    });
    return backend;
}

}  // namespace

TEST(Conversation, NextSpeakerAndViolations) {
    Conversation c;
    EXPECT_EQ(c.next_speaker(), Speaker::Seeker);
    c.turns.push_back({Speaker::Seeker, "hi", std::nullopt, 0});
    EXPECT_EQ(c.next_speaker(), Speaker::Supporter);
    EXPECT_TRUE(conversation_violations(c).empty());
    c.turns.push_back({Speaker::Seeker, "again", std::nullopt, 1});
    EXPECT_EQ(conversation_violations(c).size(), 1u);
    c.turns.push_back({Speaker::Seeker, " ", std::nullopt, 7});
    EXPECT_EQ(conversation_violations(c).size(), 3u);
}

TEST(Conversation, SeekerClosesWithMarker) {
    auto backend = scripted(3);
    const HashingEmbedder embedder;
    const auto c = simulate_conversation(bank().at("ISTP-001"), bank().at("ENFJ-001"), backend, embedder, 8, 1);
    ASSERT_EQ(c.turns.size(), 5u);
    EXPECT_EQ(c.turns.back().speaker, Speaker::Seeker);
    EXPECT_EQ(c.turns.back().text, "Thanks, that helped.");
    EXPECT_EQ(c.status, ConversationStatus::Closed);
    EXPECT_EQ(c.id, "ISTP-001__ENFJ-001");
    EXPECT_TRUE(conversation_violations(c).empty());
}

TEST(Conversation, BoundedByMaxExchanges) {
    auto backend = scripted(0);
    const HashingEmbedder embedder;
    for (int max : {1, 2, 5}) {
        const auto c = simulate_conversation(bank().at("ISTP-001"), bank().at("ENFJ-001"), backend, embedder, max, 1);
        EXPECT_EQ(c.turns.size(), static_cast<std::size_t>(2 * max));
        EXPECT_TRUE(conversation_violations(c).empty());
    }
}

TEST(Conversation, SupporterTurnsCarryOracleChosenMemory) {
    std::vector<std::vector<ChatMessage>> requests;
    auto backend = scripted(0, &requests);
    const HashingEmbedder embedder;
    const auto& supporter = bank().at("ENFJ-001");
    const auto c = simulate_conversation(bank().at("ISTP-001"), supporter, backend, embedder, 4, 3);
    std::vector<std::pair<std::string, std::string>> raw(supporter.memory.begin(), supporter.memory.end());
    std::size_t r = 0;
    for (std::size_t i = 0; i < c.turns.size(); ++i) {
        const auto& t = c.turns[i];
        if (t.speaker != Speaker::Supporter) continue;
        const std::string query = (i >= 2 ? c.turns[i - 2].text + "\n" : "") + c.turns[i - 1].text;
        ASSERT_TRUE(t.memory_aspect.has_value());
        EXPECT_EQ(*t.memory_aspect, oracle::best_aspect(query, raw)) << "turn " << i;

        const auto& m = requests.at(r++);
        ASSERT_GE(m.size(), 3u);
        EXPECT_EQ(m[0].role, Role::System);
        EXPECT_EQ(m[1].content, memory_clause(*t.memory_aspect, *supporter.memory.find(*t.memory_aspect)));
        EXPECT_EQ(m.size(), 2 + i);
        EXPECT_EQ(m.back().role, Role::User);
        EXPECT_EQ(m.back().content, c.turns[i - 1].text);
    }
    EXPECT_EQ(r, 4u);
}

TEST(Conversation, StaticSeekerMemoryOnlyGroundsTheOpener) {
    auto backend = scripted(0);
    const HashingEmbedder embedder;
    EngineOptions options;
    options.seeker_dynamic_memory = false;
    const auto c = simulate_conversation(bank().at("ISTP-001"), bank().at("ENFJ-001"), backend, embedder, 3, 1, options);
    EXPECT_EQ(c.turns[0].memory_aspect, "recent_troubles");
    EXPECT_FALSE(c.turns[2].memory_aspect.has_value());
    EXPECT_FALSE(c.turns[4].memory_aspect.has_value());
}

TEST(Conversation, ExpirationStopsTheRun) {
    RulebookBackend backend;
    backend.add("you are the supporter", "As an AI language model I cannot help.");
    backend.set_default([](std::span<const ChatMessage>, const GenerationParams&) { return std::string("Help me."); });
    const HashingEmbedder embedder;
    try {
        simulate_conversation(bank().at("ISTP-001"), bank().at("ENFJ-001"), backend, embedder, 4, 1);
        FAIL() << "expected ExpirationDetected";
    } catch (const ExpirationDetected& e) {
        EXPECT_EQ(e.turn_index(), 1u);
    }
}

TEST(Conversation, ArgumentChecks) {
    auto backend = scripted(0);
    const HashingEmbedder embedder;
    const auto& a = bank().at("ISTP-001");
    EXPECT_THROW(simulate_conversation(a, a, backend, embedder, 3, 1), SchemaError);
    EXPECT_THROW(simulate_conversation(a, bank().at("ENFJ-001"), backend, embedder, 0, 1), SchemaError);
    auto bad = bank().at("ENFJ-001");
    bad.persona.set("age", "abc");
    EXPECT_THROW(simulate_conversation(a, bad, backend, embedder, 3, 1), InvalidProfile);

    RulebookBackend closer("[END]");
    EXPECT_THROW(simulate_conversation(a, bank().at("ENFJ-001"), closer, embedder, 3, 1), MalformedOutput);
}

TEST(Conversation, NextSupporterTurnEnforcesProtocol) {
    auto backend = scripted(0);
    const HashingEmbedder embedder;
    Conversation c{"c1", "ISTP-001", "ENFJ-001", {}, ConversationStatus::Active};
    EXPECT_THROW(next_supporter_turn(c, bank().at("ENFJ-001"), backend, embedder), ProtocolError);
    c.turns.push_back({Speaker::Seeker, "My sister will not talk to me.", std::nullopt, 0});
    const auto t = next_supporter_turn(c, bank().at("ENFJ-001"), backend, embedder);
    EXPECT_EQ(t.turn_index, 1u);
    EXPECT_EQ(c.turns.size(), 2u);
    EXPECT_THROW(next_supporter_turn(c, bank().at("ENFJ-001"), backend, embedder), ProtocolError);
    c.turns.push_back({Speaker::Seeker, "ok", std::nullopt, 2});
    c.status = ConversationStatus::Closed;
    EXPECT_THROW(next_supporter_turn(c, bank().at("ENFJ-001"), backend, embedder), ClosedSession);
}

TEST(Pairing, SampleProperties) {
    const auto mock = make_mock_backend();
    const auto big = generate_bank(*mock, 2, 3);
    for (int count : {1, 3, 31}) {
        const auto pairs = sample_pairs(big, count, 17);
        ASSERT_EQ(pairs.size(), big.size() * static_cast<std::size_t>(count));
        std::set<std::pair<std::string, std::string>> unique(pairs.begin(), pairs.end());
        EXPECT_EQ(unique.size(), pairs.size());
        for (std::size_t i = 0; i < pairs.size(); ++i) {
            EXPECT_NE(pairs[i].first, pairs[i].second);
            EXPECT_EQ(pairs[i].first, big.characters()[i / static_cast<std::size_t>(count)].id);
        }
        EXPECT_EQ(pairs, sample_pairs(big, count, 17));
    }
    EXPECT_NE(sample_pairs(big, 3, 1), sample_pairs(big, 3, 2));
    EXPECT_THROW(sample_pairs(big, 0, 1), SchemaError);
    EXPECT_THROW(sample_pairs(big, 32, 1), SchemaError);
}

TEST(Synthesis, MockDatasetIsWellFormedAndOrderStable) {
    const auto mock = make_mock_backend();
    const HashingEmbedder embedder;
    const auto serial = synthesize_dataset(bank(), 2, *mock, embedder, 6, 11);
    const auto parallel = synthesize_dataset(bank(), 2, *mock, embedder, 6, 11, {}, 4);
    EXPECT_EQ(serial.conversations.size() + serial.skipped.size(), 6u);
    EXPECT_EQ(serial.conversations, parallel.conversations);
    for (const auto& c : serial.conversations) {
        EXPECT_TRUE(conversation_violations(c).empty()) << c.id;
        EXPECT_LE(c.turns.size(), 12u);
        const auto& sup = bank().at(c.supporter_id);
        for (const auto& t : c.turns) {
            if (t.speaker == Speaker::Supporter) {
                ASSERT_TRUE(t.memory_aspect.has_value());
                EXPECT_TRUE(sup.memory.contains(*t.memory_aspect));
            }
        }
    }
}

TEST(Synthesis, FailuresAreSkippedNotFatal) {
    RulebookBackend backend;
    backend.add("Tomas Reyes", "I am ChatGPT.");
    backend.set_default([](std::span<const ChatMessage>, const GenerationParams&) { return std::string("Go on."); });
    const HashingEmbedder embedder;
    const auto result = synthesize_dataset(bank(), 2, backend, embedder, 2, 1);
    EXPECT_EQ(result.conversations.size() + result.skipped.size(), 6u);
    EXPECT_FALSE(result.skipped.empty());
    for (const auto& s : result.skipped) {
        EXPECT_TRUE(s.seeker_id == "ISTP-001" || s.supporter_id == "ISTP-001");
    }
}

TEST(DatasetFiles, RoundTrip) {
    s2conv::testing::TempDir dir;
    auto backend = scripted(3);
    const HashingEmbedder embedder;
    const std::vector<Conversation> convs = {
        simulate_conversation(bank().at("ISTP-001"), bank().at("ENFJ-001"), backend, embedder, 8, 1),
        simulate_conversation(bank().at("INFP-002"), bank().at("ISTP-001"), backend, embedder, 8, 2)};
    write_dataset(dir / "d.jsonl", convs);
    EXPECT_EQ(load_dataset(dir / "d.jsonl"), convs);
    const auto text = s2conv::testing::slurp(dir / "d.jsonl");
    EXPECT_EQ(std::count(text.begin(), text.end(), '\n'), 2);

    write_skip_log(dir / "skip.jsonl", std::vector<SkipRecord>{{"a", "b", "boom"}});
    EXPECT_NE(s2conv::testing::slurp(dir / "skip.jsonl").find("\"error\":\"boom\""), std::string::npos);

    std::ofstream(dir / "bad.jsonl") << "{\"conversation_id\": 3}\n";
    EXPECT_THROW(load_dataset(dir / "bad.jsonl"), SchemaError);
    EXPECT_THROW(load_dataset(dir / "missing.jsonl"), IoError);
}

TEST(Sessions, LifecycleAndProtocol) {
    auto backend = scripted(0);
    const HashingEmbedder embedder;
    EXPECT_THROW(open_session(bank(), "s1", "NOPE-001", "me"), UnknownSupporter);
    auto s = open_session(bank(), "s1", "ENFJ-001", "a tired student");
    EXPECT_EQ(s.id(), "s1");
    EXPECT_FALSE(s.closed());
    EXPECT_THROW(append_seeker_message(s, "   "), SchemaError);
    append_seeker_message(s, "I failed my exam.");
    EXPECT_THROW(append_seeker_message(s, "hello?"), ProtocolError);
    const auto reply = next_supporter_turn(s, bank().at("ENFJ-001"), backend, embedder);
    EXPECT_EQ(reply.turn_index, 1u);
    EXPECT_TRUE(reply.memory_aspect.has_value());
    close_session(s);
    EXPECT_TRUE(s.closed());
    EXPECT_THROW(append_seeker_message(s, "wait"), ClosedSession);
    EXPECT_THROW(close_session(s), ClosedSession);
}
