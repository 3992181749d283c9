#pragma once

#include <filesystem>
#include <functional>
#include <map>
#include <memory>
#include <mutex>
#include <optional>
#include <shared_mutex>
#include <string>
#include <vector>

#include "s2conv/character.hpp"
#include "s2conv/conversation.hpp"
#include "s2conv/scores.hpp"

namespace s2conv {

/**
 * Durable live-chat sessions.
 *
 * Each session is an append-only JSONL event log (open, turn, rating, close)
 * under <data_dir>/sessions/. Every mutation is written and fsync'ed before
 * it becomes visible, and the logs are replayed on construction. Mutations
 * of one session are serialized; a second concurrent mutation of the same
 * session fails fast with ProtocolError instead of waiting.
 */
class SessionStore {
public:
    explicit SessionStore(std::filesystem::path data_dir);

    SessionStore(const SessionStore&) = delete;
    SessionStore& operator=(const SessionStore&) = delete;

    // Throws UnknownSupporter.
    Session create(const CharacterBank& bank, std::string_view supporter_id, std::string seeker_persona);

    // Snapshot of a session; throws NotFound.
    Session get(std::string_view id) const;
    std::vector<std::string> ids() const;
    std::size_t size() const;

    using Responder = std::function<ChatTurn(Session&)>;

    /**
     * Appends the seeker message and the turn produced by `respond` as one
     * unit: both are persisted or neither is. `respond` runs on a working
     * copy, so a throwing responder leaves the session unchanged.
     */
    ChatTurn exchange(std::string_view id, std::string text, const Responder& respond);

    // Throws SchemaError for scores outside [1,5].
    void rate(std::string_view id, const EvalScores& scores);
    // Throws ClosedSession when already closed.
    void close(std::string_view id);

    const std::filesystem::path& data_dir() const { return data_dir_; }

private:
    struct Entry {
        Session session;
        std::mutex mutation;
        mutable std::mutex snapshot;
    };

    Entry& entry(std::string_view id) const;
    std::filesystem::path log_path(std::string_view id) const;
    void append_events(std::string_view id, const std::vector<std::string>& lines) const;
    void replay();

    // Runs `mutate` on a copy under the session's mutation lock, persists the
    // events it returns, then publishes the copy.
    template <typename Mutate>
    auto mutate(std::string_view id, Mutate&& mutate_fn);

    std::filesystem::path data_dir_;
    mutable std::shared_mutex index_mutex_;
    std::map<std::string, std::unique_ptr<Entry>, std::less<>> sessions_;
    std::size_t next_id_ = 1;
};

}  // namespace s2conv
