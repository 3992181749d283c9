#pragma once

#include <atomic>
#include <cstdint>
#include <filesystem>
#include <memory>
#include <optional>
#include <string>
#include <string_view>

#include <nlohmann/json.hpp>

#include "s2conv/character.hpp"
#include "s2conv/conversation.hpp"
#include "s2conv/llm.hpp"
#include "s2conv/matcher.hpp"
#include "s2conv/session_store.hpp"

namespace httplib {
class Server;
}

namespace s2conv {

inline constexpr std::string_view kVersion = "0.1.0";

struct ServiceConfig {
    std::filesystem::path bank_path;
    std::optional<std::filesystem::path> model_path;
    std::filesystem::path data_dir = "s2conv-data";
    std::string host = "127.0.0.1";
    int port = 8080;
    bool mock = false;                 // offline mock chat backend
    int mock_latency_ms = 0;           // simulated mock reply delay
    std::string embedder = "hashing";  // "hashing" or "remote"
    std::size_t embed_dim = 256;
    std::uint64_t seed = 0;

    // Keys: bank, model, data_dir, listen ("host:port"), mock, mock_latency_ms, embedder,
    // embed_dim, seed.
    // Unknown keys are rejected with SchemaError.
    static ServiceConfig from_json(const nlohmann::json& j);
    nlohmann::ordered_json to_json() const;
    // Applies S2CONV_LISTEN_ADDR and S2CONV_DATA_DIR when set.
    void apply_env();
    // "host:port" -> host, port. Throws SchemaError.
    void set_listen(std::string_view addr);
};

/**
 * Route handlers over immutable shared state (bank, matcher, supporter
 * features) and the session store. Handlers are safe to run concurrently.
 */
class ChatService {
public:
    ChatService(CharacterBank bank, std::optional<MatchModel> model, std::unique_ptr<ChatBackend> backend,
                std::unique_ptr<Embedder> embedder, std::filesystem::path data_dir, std::uint64_t seed = 0);
    ~ChatService();

    // Loads the bank (refusing to start when it is missing), the optional
    // model and the configured backends.
    static std::unique_ptr<ChatService> from_config(const ServiceConfig& config);

    void register_routes(httplib::Server& server);

    const CharacterBank& bank() const { return bank_; }
    bool has_trained_matcher() const { return model_.has_value(); }
    SessionStore& store() { return store_; }

private:
    CharacterBank bank_;
    std::optional<MatchModel> model_;
    std::unique_ptr<ChatBackend> backend_;
    std::unique_ptr<Embedder> embedder_;
    FeatureIndex features_;
    SessionStore store_;
    std::uint64_t seed_;
};

// Runs until `stop` turns true (checked periodically) or the server fails.
// Returns false when the address cannot be bound.
bool run_service(ChatService& service, const std::string& host, int port,
                 const std::atomic<bool>* stop = nullptr);

// JSON shapes shared by the API and the CLI chat client.
nlohmann::ordered_json profile_summary_json(const CharacterProfile& profile);
nlohmann::ordered_json profile_json(const CharacterProfile& profile);
nlohmann::ordered_json turn_json(const ChatTurn& turn);
nlohmann::ordered_json session_json(const Session& session);

}  // namespace s2conv
