#pragma once

#include <chrono>
#include <cstdint>
#include <filesystem>
#include <functional>
#include <memory>
#include <mutex>
#include <optional>
#include <span>
#include <string>
#include <string_view>
#include <vector>

namespace s2conv {

enum class Role { System, User, Assistant };

std::string_view to_string(Role role);
Role parse_role(std::string_view text);

struct ChatMessage {
    Role role = Role::User;
    std::string content;
};

struct GenerationParams {
    double temperature = 0.7;
    int max_tokens = 1024;
    std::optional<std::uint64_t> seed;

    // Throws SchemaError unless 0 <= temperature <= 2 and max_tokens > 0.
    void validate() const;
};

// Flat rendering used for substring matching by the mock backends.
std::string render_transcript(std::span<const ChatMessage> messages);

/**
 * Chat-completion capability.
 *
 * Non-virtual interface: complete() checks the request, delegates to the
 * backend and rejects empty output, so every implementation shares the same
 * contract. Implementations must tolerate concurrent calls.
 */
class ChatBackend {
public:
    virtual ~ChatBackend() = default;

    std::string complete(std::span<const ChatMessage> messages, const GenerationParams& params);

    virtual std::string name() const = 0;

private:
    virtual std::string do_complete(std::span<const ChatMessage> messages,
                                    const GenerationParams& params) = 0;
};

// Plays back a fixed script in order. Each step may require a substring to
// appear somewhere in the request; running past the end is an overflow.
class ReplayBackend final : public ChatBackend {
public:
    struct Step {
        std::string expect_substring;
        std::string response;
    };

    explicit ReplayBackend(std::vector<Step> script);
    // JSON list of {expect_substring, response}.
    static std::unique_ptr<ReplayBackend> from_file(const std::filesystem::path& path);

    std::string name() const override { return "replay"; }
    std::size_t position() const;
    std::size_t size() const { return script_.size(); }

private:
    std::string do_complete(std::span<const ChatMessage> messages,
                            const GenerationParams& params) override;

    std::vector<Step> script_;
    mutable std::mutex mutex_;
    std::size_t cursor_ = 0;
};

// Stateless pattern -> response table. First matching rule wins.
class RulebookBackend final : public ChatBackend {
public:
    using Responder =
        std::function<std::string(std::span<const ChatMessage>, const GenerationParams&)>;

    enum class Scope { Anywhere, LastMessage };

    struct Rule {
        std::string pattern;
        Responder respond;
        Scope scope = Scope::Anywhere;
    };

    explicit RulebookBackend(std::string default_response = "I see.");

    RulebookBackend& add(std::string pattern, std::string response, Scope scope = Scope::Anywhere);
    RulebookBackend& add(std::string pattern, Responder respond, Scope scope = Scope::Anywhere);
    RulebookBackend& set_default(Responder respond);

    std::string name() const override { return "rulebook"; }

private:
    std::string do_complete(std::span<const ChatMessage> messages,
                            const GenerationParams& params) override;

    std::vector<Rule> rules_;
    Responder default_;
};

struct RetryPolicy {
    int max_attempts = 4;
    std::chrono::milliseconds initial_backoff{500};
    double multiplier = 2.0;
};

struct RemoteConfig {
    std::string base_url;  // e.g. https://api.openai.com/v1
    std::string model;
    std::string api_key;
    std::chrono::seconds timeout{120};
    RetryPolicy retry;

    // Reads <prefix>_BASE_URL, <prefix>_MODEL and <prefix>_API_KEY.
    static RemoteConfig from_env(std::string_view prefix);
};

// Speaks the common chat-completions JSON contract over HTTP(S).
class RemoteChatBackend final : public ChatBackend {
public:
    explicit RemoteChatBackend(RemoteConfig config);

    std::string name() const override { return "remote:" + config_.model; }

private:
    std::string do_complete(std::span<const ChatMessage> messages,
                            const GenerationParams& params) override;

    RemoteConfig config_;
};

struct EmbeddingVector {
    std::vector<double> values;

    std::size_t dim() const { return values.size(); }
    double norm() const;
};

// Plain cosine similarity; zero when either vector has zero norm.
double cosine(const EmbeddingVector& a, const EmbeddingVector& b);

class Embedder {
public:
    virtual ~Embedder() = default;

    // Throws EmptyInput for empty text.
    EmbeddingVector embed(std::string_view text) const;

    virtual std::size_t dim() const = 0;
    // Identifies the feature space; models trained on it record this value.
    virtual std::string fingerprint() const = 0;

private:
    virtual EmbeddingVector do_embed(std::string_view text) const = 0;
};

/**
 * Bag-of-words feature hashing: lowercase word tokens are hashed (FNV-1a)
 * into `dim` buckets, counted, then L2-normalized. Text without any word
 * token is hashed as a single token so the output is always unit length.
 */
class HashingEmbedder final : public Embedder {
public:
    static constexpr std::size_t kDefaultDim = 256;

    explicit HashingEmbedder(std::size_t dim = kDefaultDim);

    std::size_t dim() const override { return dim_; }
    std::string fingerprint() const override;

    std::size_t bucket(std::string_view token) const;

private:
    EmbeddingVector do_embed(std::string_view text) const override;

    std::size_t dim_;
};

// OpenAI-style /embeddings endpoint. Replies whose length differs from `dim`
// are rejected.
class RemoteEmbedder final : public Embedder {
public:
    RemoteEmbedder(RemoteConfig config, std::size_t dim);

    std::size_t dim() const override { return dim_; }
    std::string fingerprint() const override { return "remote:" + config_.model + ":" + std::to_string(dim_); }

private:
    EmbeddingVector do_embed(std::string_view text) const override;

    RemoteConfig config_;
    std::size_t dim_;
};

}  // namespace s2conv
