#include "s2conv/conversation.hpp"

#include <algorithm>
#include <fstream>
#include <random>

#include <nlohmann/json.hpp>
#include <spdlog/spdlog.h>

#include "s2conv/assets.hpp"
#include "s2conv/error.hpp"
#include "s2conv/parallel.hpp"
#include "s2conv/text.hpp"

namespace s2conv {

using ojson = nlohmann::ordered_json;

Speaker Conversation::next_speaker() const {
    return turns.empty() || turns.back().speaker == Speaker::Supporter ? Speaker::Seeker
                                                                      : Speaker::Supporter;
}

std::vector<std::string> conversation_violations(const Conversation& conversation) {
    std::vector<std::string> out;
    for (std::size_t i = 0; i < conversation.turns.size(); ++i) {
        const auto& t = conversation.turns[i];
        const Speaker expected = i % 2 == 0 ? Speaker::Seeker : Speaker::Supporter;
        if (t.speaker != expected) {
            out.push_back("turn " + std::to_string(i) + " should be spoken by the " +
                          std::string(to_string(expected)));
        }
        if (t.turn_index != i) {
            out.push_back("turn " + std::to_string(i) + " has turn_index " + std::to_string(t.turn_index));
        }
        if (trim(t.text).empty()) {
            out.push_back("turn " + std::to_string(i) + " has empty text");
        }
    }
    return out;
}

std::string memory_clause(const std::string& aspect, const std::string& content) {
    return render_template(load_template("memory_clause"), {{"aspect", aspect}, {"content", content}});
}

namespace {

// Dialogue from one agent's point of view: its own turns are "assistant".
void append_dialogue(std::vector<ChatMessage>& messages, std::span<const ChatTurn> turns, Speaker self) {
    for (const auto& t : turns) {
        messages.push_back({t.speaker == self ? Role::Assistant : Role::User, t.text});
    }
}

GenerationParams turn_params(const EngineOptions& options, std::uint64_t seed, std::size_t turn_index) {
    GenerationParams params = options.params;
    params.seed = mix_seed(seed, turn_index);
    return params;
}

ChatTurn generate_supporter_turn(const Conversation& conversation, const CharacterProfile& supporter,
                                 ChatBackend& backend, const Embedder& embedder,
                                 const EngineOptions& options, std::uint64_t seed) {
    const auto selection =
        select_memory(conversation.turns, supporter.memory, embedder, options.memory_window, options.reranker);
    const auto prompt = build_role_prompt(supporter, Speaker::Supporter,
                                          {.include_presets = true, .closing_marker = options.closing_marker});
    const auto messages = supporter_messages(prompt, selection, conversation.turns);
    const std::size_t index = conversation.turns.size();
    std::string reply = trim(backend.complete(messages, turn_params(options, seed, index)));
    return {Speaker::Supporter, std::move(reply), selection.aspect, index};
}

void check_supporter_turn_allowed(const Conversation& conversation) {
    if (conversation.status == ConversationStatus::Closed) {
        throw ClosedSession("conversation '" + conversation.id + "' is closed");
    }
    if (conversation.turns.empty() || conversation.turns.back().speaker != Speaker::Seeker) {
        throw ProtocolError("the supporter may only reply after a seeker turn");
    }
}

}  // namespace

std::vector<ChatMessage> supporter_messages(const RolePrompt& prompt, const MemorySelection& memory,
                                            std::span<const ChatTurn> turns) {
    std::vector<ChatMessage> messages{{Role::System, prompt.system_text},
                                      {Role::System, memory_clause(memory.aspect, memory.content)}};
    append_dialogue(messages, turns, Speaker::Supporter);
    return messages;
}

ChatTurn next_supporter_turn(Conversation& conversation, const CharacterProfile& supporter,
                             ChatBackend& backend, const Embedder& embedder, const EngineOptions& options) {
    check_supporter_turn_allowed(conversation);
    const std::uint64_t seed = options.params.seed.value_or(fnv1a(conversation.id));
    ChatTurn turn = generate_supporter_turn(conversation, supporter, backend, embedder, options, seed);
    conversation.turns.push_back(turn);
    return turn;
}

Conversation simulate_conversation(const CharacterProfile& seeker, const CharacterProfile& supporter,
                                   ChatBackend& backend, const Embedder& embedder, int max_exchanges,
                                   std::uint64_t seed, const EngineOptions& options) {
    if (max_exchanges < 1) {
        throw SchemaError("max_exchanges must be at least 1");
    }
    if (seeker.id == supporter.id) {
        throw SchemaError("a character cannot support itself");
    }
    for (const auto* p : {&seeker, &supporter}) {
        if (const auto v = validate_profile(*p); !v.empty()) {
            throw InvalidProfile("profile '" + p->id + "' is invalid: " + describe(v));
        }
    }

    Conversation conv{seeker.id + "__" + supporter.id, seeker.id, supporter.id, {}, ConversationStatus::Active};
    const RolePromptOptions prompt_options{.include_presets = true, .closing_marker = options.closing_marker};
    const auto seeker_prompt = build_role_prompt(seeker, Speaker::Seeker, prompt_options);
    const std::string opening = load_template("seeker_opening");

    const auto check_expiration = [&](const ChatTurn& turn) {
        if (detect_expiration(turn.text)) {
            throw ExpirationDetected(turn.turn_index,
                                     "role-play expired at turn " + std::to_string(turn.turn_index) + " of " +
                                         conv.id + ": " + turn.text.substr(0, 120));
        }
    };

    for (int exchange = 0; exchange < max_exchanges; ++exchange) {
        // Seeker turn.
        std::string aspect = "recent_troubles";
        if (!conv.turns.empty() && options.seeker_dynamic_memory) {
            aspect = select_memory(conv.turns, seeker.memory, embedder, options.memory_window, options.reranker)
                         .aspect;
        }
        std::optional<std::string> seeker_aspect;
        std::vector<ChatMessage> messages{{Role::System, seeker_prompt.system_text}};
        if (conv.turns.empty() || options.seeker_dynamic_memory) {
            messages.push_back({Role::System, memory_clause(aspect, *seeker.memory.find(aspect))});
            seeker_aspect = aspect;
        }
        if (conv.turns.empty()) {
            messages.push_back({Role::User, opening});
        } else {
            append_dialogue(messages, conv.turns, Speaker::Seeker);
        }
        const std::size_t index = conv.turns.size();
        std::string text = backend.complete(messages, turn_params(options, seed, index));
        const bool closing = !options.closing_marker.empty() && contains(text, options.closing_marker);
        if (closing) {
            text = replace_all(std::move(text), options.closing_marker, "");
        }
        text = trim(text);
        if (!text.empty()) {
            ChatTurn turn{Speaker::Seeker, std::move(text), seeker_aspect, index};
            check_expiration(turn);
            conv.turns.push_back(std::move(turn));
        }
        if (closing || conv.turns.empty()) {
            break;
        }

        // Supporter turn.
        ChatTurn reply = generate_supporter_turn(conv, supporter, backend, embedder, options, seed);
        check_expiration(reply);
        conv.turns.push_back(std::move(reply));
    }
    if (conv.turns.empty()) {
        throw MalformedOutput("seeker closed the conversation before saying anything");
    }
    conv.status = ConversationStatus::Closed;
    return conv;
}

std::vector<std::pair<std::string, std::string>> sample_pairs(const CharacterBank& bank, int count,
                                                              std::uint64_t seed) {
    if (count < 1 || static_cast<std::size_t>(count) >= bank.size()) {
        throw SchemaError("supporters per seeker must be in 1.." + std::to_string(bank.size() - 1) +
                          " for a bank of " + std::to_string(bank.size()));
    }
    std::vector<std::pair<std::string, std::string>> pairs;
    const auto& chars = bank.characters();
    for (std::size_t i = 0; i < chars.size(); ++i) {
        std::vector<std::string> candidates;
        candidates.reserve(chars.size() - 1);
        for (std::size_t j = 0; j < chars.size(); ++j) {
            if (j != i) {
                candidates.push_back(chars[j].id);
            }
        }
        std::mt19937_64 rng(mix_seed(seed, i));
        std::shuffle(candidates.begin(), candidates.end(), rng);
        for (int k = 0; k < count; ++k) {
            pairs.emplace_back(chars[i].id, candidates[static_cast<std::size_t>(k)]);
        }
    }
    return pairs;
}

SynthesisResult synthesize_dataset(const CharacterBank& bank, int supporters_per_seeker,
                                   ChatBackend& backend, const Embedder& embedder, int max_exchanges,
                                   std::uint64_t seed, const EngineOptions& options, int parallelism) {
    const auto pairs = sample_pairs(bank, supporters_per_seeker, seed);
    std::vector<std::optional<Conversation>> results(pairs.size());
    std::vector<std::optional<SkipRecord>> skips(pairs.size());

    parallel_for(pairs.size(), parallelism, [&](std::size_t i) {
        const auto& [seeker_id, supporter_id] = pairs[i];
        try {
            results[i] = simulate_conversation(bank.at(seeker_id), bank.at(supporter_id), backend, embedder,
                                               max_exchanges, mix_seed(seed, fnv1a(seeker_id + "|" + supporter_id)),
                                               options);
        } catch (const Error& e) {
            spdlog::warn("skipping {} -> {}: {}", seeker_id, supporter_id, e.what());
            skips[i] = SkipRecord{seeker_id, supporter_id, e.what()};
        }
    });

    SynthesisResult out;
    for (std::size_t i = 0; i < pairs.size(); ++i) {
        if (results[i]) {
            out.conversations.push_back(std::move(*results[i]));
        } else if (skips[i]) {
            out.skipped.push_back(std::move(*skips[i]));
        }
    }
    return out;
}

// ---------------------------------------------------------------- files

std::string conversation_to_jsonl(const Conversation& conversation) {
    ojson j;
    j["conversation_id"] = conversation.id;
    j["seeker_id"] = conversation.seeker_id;
    j["supporter_id"] = conversation.supporter_id;
    auto& turns = j["turns"] = ojson::array();
    for (const auto& t : conversation.turns) {
        ojson turn;
        turn["speaker"] = to_string(t.speaker);
        turn["text"] = t.text;
        turn["memory_aspect"] = t.memory_aspect ? ojson(*t.memory_aspect) : ojson(nullptr);
        turns.push_back(std::move(turn));
    }
    return j.dump();
}

void write_dataset(const std::filesystem::path& path, std::span<const Conversation> conversations) {
    std::string content;
    for (const auto& c : conversations) {
        content += conversation_to_jsonl(c);
        content += '\n';
    }
    write_text_file(path, content);
}

std::vector<Conversation> load_dataset(const std::filesystem::path& path) {
    std::ifstream in(path);
    if (!in) {
        throw IoError("cannot open dataset " + path.string());
    }
    std::vector<Conversation> out;
    std::string line;
    std::size_t line_no = 0;
    while (std::getline(in, line)) {
        ++line_no;
        if (trim(line).empty()) {
            continue;
        }
        try {
            const auto j = ojson::parse(line);
            Conversation c;
            c.id = j.at("conversation_id").get<std::string>();
            c.seeker_id = j.at("seeker_id").get<std::string>();
            c.supporter_id = j.at("supporter_id").get<std::string>();
            c.status = ConversationStatus::Closed;
            for (const auto& t : j.at("turns")) {
                ChatTurn turn;
                turn.speaker = parse_speaker(t.at("speaker").get<std::string>());
                turn.text = t.at("text").get<std::string>();
                if (t.contains("memory_aspect") && t["memory_aspect"].is_string()) {
                    turn.memory_aspect = t["memory_aspect"].get<std::string>();
                }
                turn.turn_index = c.turns.size();
                c.turns.push_back(std::move(turn));
            }
            out.push_back(std::move(c));
        } catch (const nlohmann::json::exception& e) {
            throw SchemaError(path.string() + ":" + std::to_string(line_no) + ": " + e.what());
        }
    }
    return out;
}

void write_skip_log(const std::filesystem::path& path, std::span<const SkipRecord> skipped) {
    std::string content;
    for (const auto& s : skipped) {
        ojson j;
        j["seeker_id"] = s.seeker_id;
        j["supporter_id"] = s.supporter_id;
        j["error"] = s.error;
        content += j.dump() + "\n";
    }
    write_text_file(path, content);
}

// ------------------------------------------------------------- sessions

Session open_session(const CharacterBank& bank, std::string session_id, std::string_view supporter_id,
                     std::string seeker_persona) {
    if (!bank.find(supporter_id)) {
        throw UnknownSupporter("no supporter with id '" + std::string(supporter_id) + "'");
    }
    Session s;
    s.conversation.id = std::move(session_id);
    s.conversation.seeker_id = "human";
    s.conversation.supporter_id = std::string(supporter_id);
    s.supporter_id = std::string(supporter_id);
    s.seeker_persona = std::move(seeker_persona);
    s.created_at = s.updated_at = utc_timestamp();
    return s;
}

ChatTurn append_seeker_message(Session& session, std::string text) {
    if (session.closed()) {
        throw ClosedSession("session '" + session.id() + "' is closed");
    }
    if (session.conversation.next_speaker() != Speaker::Seeker) {
        throw ProtocolError("it is the supporter's turn in session '" + session.id() + "'");
    }
    text = trim(text);
    if (text.empty()) {
        throw SchemaError("message text must not be empty");
    }
    ChatTurn turn{Speaker::Seeker, std::move(text), std::nullopt, session.conversation.turns.size()};
    session.conversation.turns.push_back(turn);
    session.updated_at = utc_timestamp();
    return turn;
}

ChatTurn next_supporter_turn(Session& session, const CharacterProfile& supporter, ChatBackend& backend,
                             const Embedder& embedder, const EngineOptions& options) {
    ChatTurn turn = next_supporter_turn(session.conversation, supporter, backend, embedder, options);
    session.updated_at = utc_timestamp();
    return turn;
}

void close_session(Session& session) {
    if (session.closed()) {
        throw ClosedSession("session '" + session.id() + "' is already closed");
    }
    session.conversation.status = ConversationStatus::Closed;
    session.updated_at = utc_timestamp();
}

}  // namespace s2conv
