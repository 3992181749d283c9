#pragma once

#include <cstdint>
#include <filesystem>
#include <optional>
#include <span>
#include <string>
#include <string_view>
#include <vector>

#include "s2conv/character.hpp"
#include "s2conv/llm.hpp"
#include "s2conv/memory_selector.hpp"
#include "s2conv/roleplay.hpp"
#include "s2conv/scores.hpp"
#include "s2conv/turn.hpp"

namespace s2conv {

enum class ConversationStatus { Active, Closed };

struct Conversation {
    std::string id;
    std::string seeker_id;
    std::string supporter_id;
    std::vector<ChatTurn> turns;
    ConversationStatus status = ConversationStatus::Active;

    // Speaker expected to produce the next turn.
    Speaker next_speaker() const;

    friend bool operator==(const Conversation&, const Conversation&) = default;
};

// Alternation from the seeker and consecutive indices; empty when valid.
std::vector<std::string> conversation_violations(const Conversation& conversation);

struct EngineOptions {
    int memory_window = kDefaultMemoryWindow;
    // Seekers also pick a memory aspect per turn; when false only the opener
    // is grounded (in recent_troubles).
    bool seeker_dynamic_memory = true;
    std::string closing_marker{kDefaultClosingMarker};
    GenerationParams params{};
    const MemoryReranker* reranker = nullptr;
};

// The per-turn system message carrying the selected memory.
std::string memory_clause(const std::string& aspect, const std::string& content);

// Messages sent to the backend for the supporter's next reply: role prompt,
// memory clause, then the dialogue (seeker as user, supporter as assistant).
std::vector<ChatMessage> supporter_messages(const RolePrompt& prompt, const MemorySelection& memory,
                                            std::span<const ChatTurn> turns);

/**
 * Selects the supporter's memory aspect for the current context, generates
 * the reply and appends it. Throws ProtocolError unless the last turn is the
 * seeker's, ClosedSession on closed conversations, BackendError from the
 * backend.
 */
ChatTurn next_supporter_turn(Conversation& conversation, const CharacterProfile& supporter,
                             ChatBackend& backend, const Embedder& embedder,
                             const EngineOptions& options = {});

inline constexpr int kDefaultMaxExchanges = 8;

/**
 * Two agents role-play a support conversation. The seeker opens from its
 * recent troubles; the run ends after `max_exchanges` seeker/supporter
 * exchanges or when the seeker emits the closing marker. Any turn that trips
 * detect_expiration raises ExpirationDetected.
 */
Conversation simulate_conversation(const CharacterProfile& seeker, const CharacterProfile& supporter,
                                   ChatBackend& backend, const Embedder& embedder, int max_exchanges,
                                   std::uint64_t seed, const EngineOptions& options = {});

struct SkipRecord {
    std::string seeker_id;
    std::string supporter_id;
    std::string error;
};

struct SynthesisResult {
    std::vector<Conversation> conversations;
    std::vector<SkipRecord> skipped;
};

// Seeded sample, without replacement and excluding the seeker, of `count`
// supporter ids for every character in bank order.
std::vector<std::pair<std::string, std::string>> sample_pairs(const CharacterBank& bank, int count,
                                                              std::uint64_t seed);

// One conversation per sampled pair. Per-pair failures are recorded in the
// skip list and the run continues. Output order follows the pairing order
// regardless of `parallelism`.
SynthesisResult synthesize_dataset(const CharacterBank& bank, int supporters_per_seeker,
                                   ChatBackend& backend, const Embedder& embedder, int max_exchanges,
                                   std::uint64_t seed, const EngineOptions& options = {},
                                   int parallelism = 1);

// Dataset JSONL: {conversation_id, seeker_id, supporter_id, turns:[{speaker, text, memory_aspect}]}.
std::string conversation_to_jsonl(const Conversation& conversation);
void write_dataset(const std::filesystem::path& path, std::span<const Conversation> conversations);
std::vector<Conversation> load_dataset(const std::filesystem::path& path);
// Skip log JSONL: {seeker_id, supporter_id, error}.
void write_skip_log(const std::filesystem::path& path, std::span<const SkipRecord> skipped);

// A live chat between a human seeker and a bank supporter.
struct Session {
    Conversation conversation;
    std::string supporter_id;
    std::string seeker_persona;
    std::string created_at;
    std::string updated_at;
    std::optional<EvalScores> rating;

    const std::string& id() const { return conversation.id; }
    bool closed() const { return conversation.status == ConversationStatus::Closed; }
};

// Throws UnknownSupporter.
Session open_session(const CharacterBank& bank, std::string session_id, std::string_view supporter_id,
                     std::string seeker_persona);
// Throws ClosedSession, or ProtocolError when it is not the seeker's turn.
ChatTurn append_seeker_message(Session& session, std::string text);
ChatTurn next_supporter_turn(Session& session, const CharacterProfile& supporter, ChatBackend& backend,
                             const Embedder& embedder, const EngineOptions& options = {});
void close_session(Session& session);

}  // namespace s2conv
