#include <gtest/gtest.h>

#include <atomic>
#include <future>
#include <thread>

#include "fixtures.hpp"
#include "s2conv/error.hpp"
#include "s2conv/session_store.hpp"

using namespace s2conv;
using s2conv::testing::TempDir;

namespace {

const CharacterBank& bank() {
    static const CharacterBank b = s2conv::testing::fixture_bank();
    return b;
}

// Supporter reply that echoes the seeker, tagged with a memory aspect.
ChatTurn echo(Session& s) {
    const auto& last = s.conversation.turns.back();
    ChatTurn t{Speaker::Supporter, "You said: " + last.text, "recent_troubles", s.conversation.turns.size()};
    s.conversation.turns.push_back(t);
    return t;
}

}  // namespace

TEST(SessionStoreTest, CreateAssignsSequentialIds) {
    TempDir dir;
    SessionStore store(dir.path());
    const auto a = store.create(bank(), "ENFJ-001", "student");
    const auto b = store.create(bank(), "ISTP-001", "");
    EXPECT_EQ(a.id(), "sess-000001");
    EXPECT_EQ(b.id(), "sess-000002");
    EXPECT_EQ(store.size(), 2u);
    EXPECT_EQ(store.ids(), (std::vector<std::string>{"sess-000001", "sess-000002"}));
    EXPECT_EQ(a.supporter_id, "ENFJ-001");
    EXPECT_FALSE(a.created_at.empty());
    EXPECT_THROW(store.create(bank(), "NOPE-001", "x"), UnknownSupporter);
    EXPECT_THROW(store.get("sess-999999"), NotFound);
}

TEST(SessionStoreTest, ExchangeAppendsBothTurns) {
    TempDir dir;
    SessionStore store(dir.path());
    const auto id = store.create(bank(), "ENFJ-001", "p").id();
    const auto reply = store.exchange(id, "hello", echo);
    EXPECT_EQ(reply.text, "You said: hello");
    const auto s = store.get(id);
    ASSERT_EQ(s.conversation.turns.size(), 2u);
    EXPECT_EQ(s.conversation.turns[0].speaker, Speaker::Seeker);
    EXPECT_EQ(s.conversation.turns[1].memory_aspect, "recent_troubles");
    EXPECT_TRUE(conversation_violations(s.conversation).empty());
    EXPECT_THROW(store.exchange(id, "  ", echo), SchemaError);
    EXPECT_EQ(store.get(id).conversation.turns.size(), 2u);
}

TEST(SessionStoreTest, FailedResponderLeavesSessionUnchanged) {
    TempDir dir;
    const auto id = [&] {
        SessionStore store(dir.path());
        const auto sid = store.create(bank(), "ENFJ-001", "p").id();
        store.exchange(sid, "first", echo);
        EXPECT_THROW(store.exchange(sid, "second", [](Session&) -> ChatTurn {
            throw BackendError(BackendErrorKind::Transport, "down");
        }),
                     BackendError);
        EXPECT_EQ(store.get(sid).conversation.turns.size(), 2u);
        store.exchange(sid, "third", echo);
        return sid;
    }();
    SessionStore reopened(dir.path());
    const auto s = reopened.get(id);
    ASSERT_EQ(s.conversation.turns.size(), 4u);
    EXPECT_EQ(s.conversation.turns[2].text, "third");
}

TEST(SessionStoreTest, ReplayRestoresEverything) {
    TempDir dir;
    Session before;
    {
        SessionStore store(dir.path());
        const auto id = store.create(bank(), "INFP-002", "night owl").id();
        for (const char* m : {"one", "two", "three"}) store.exchange(id, m, echo);
        store.rate(id, {4, 3, 5});
        store.close(id);
        store.create(bank(), "ISTP-001", "other");
        before = store.get(id);
    }
    SessionStore store(dir.path());
    EXPECT_EQ(store.size(), 2u);
    const auto after = store.get(before.id());
    EXPECT_EQ(after.conversation, before.conversation);
    EXPECT_EQ(after.rating, before.rating);
    EXPECT_EQ(after.seeker_persona, "night owl");
    EXPECT_EQ(after.supporter_id, "INFP-002");
    EXPECT_TRUE(after.closed());
    EXPECT_EQ(store.create(bank(), "ENFJ-001", "").id(), "sess-000003");
}

TEST(SessionStoreTest, RatingAndCloseRules) {
    TempDir dir;
    SessionStore store(dir.path());
    const auto id = store.create(bank(), "ENFJ-001", "p").id();
    EXPECT_THROW(store.rate(id, {6, 3, 3}), SchemaError);
    EXPECT_THROW(store.rate(id, {3, 0, 3}), SchemaError);
    store.rate(id, {1, 5, 2});
    EXPECT_EQ(store.get(id).rating, (EvalScores{1, 5, 2}));
    store.close(id);
    EXPECT_THROW(store.close(id), ClosedSession);
    EXPECT_THROW(store.exchange(id, "late", echo), ClosedSession);
    EXPECT_THROW(store.rate("sess-424242", {3, 3, 3}), NotFound);
}

TEST(SessionStoreTest, ConcurrentMutationFailsFast) {
    TempDir dir;
    SessionStore store(dir.path());
    const auto id = store.create(bank(), "ENFJ-001", "p").id();
    std::promise<void> entered;
    std::promise<void> release;
    auto release_future = release.get_future().share();
    auto slow = std::async(std::launch::async, [&] {
        return store.exchange(id, "slow", [&](Session& s) {
            entered.set_value();
            release_future.wait();
            return echo(s);
        });
    });
    entered.get_future().wait();
    EXPECT_THROW(store.exchange(id, "fast", echo), ProtocolError);
    // Other sessions are unaffected.
    const auto other = store.create(bank(), "ISTP-001", "q").id();
    EXPECT_NO_THROW(store.exchange(other, "hi", echo));
    release.set_value();
    EXPECT_EQ(slow.get().text, "You said: slow");
    EXPECT_EQ(store.get(id).conversation.turns.size(), 2u);
}

TEST(SessionStoreTest, TornFinalEventIsIgnored) {
    TempDir dir;
    std::string id;
    {
        SessionStore store(dir.path());
        id = store.create(bank(), "ENFJ-001", "p").id();
        store.exchange(id, "kept", echo);
    }
    const auto log = dir.path() / "sessions" / (id + ".jsonl");
    ASSERT_TRUE(std::filesystem::exists(log));
    std::ofstream(log, std::ios::app) << R"({"event":"turn","spea)";
    {
        SessionStore store(dir.path());
        EXPECT_EQ(store.get(id).conversation.turns.size(), 2u);
        store.exchange(id, "after crash", echo);
    }
    SessionStore store(dir.path());
    EXPECT_EQ(store.get(id).conversation.turns.size(), 4u);
}

TEST(SessionStoreTest, CorruptMiddleEventIsAnError) {
    TempDir dir;
    std::string id;
    {
        SessionStore store(dir.path());
        id = store.create(bank(), "ENFJ-001", "p").id();
        store.exchange(id, "one", echo);
    }
    const auto log = dir.path() / "sessions" / (id + ".jsonl");
    auto text = s2conv::testing::slurp(log);
    text.insert(text.find('\n') + 1, "garbage\n");
    std::ofstream(log, std::ios::trunc) << text;
    EXPECT_THROW(SessionStore{dir.path()}, SchemaError);
}
