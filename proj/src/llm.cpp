#include "s2conv/llm.hpp"

#include <cmath>
#include <cstdlib>
#include <thread>

#include <httplib.h>
#include <nlohmann/json.hpp>
#include <spdlog/spdlog.h>

#include "s2conv/error.hpp"
#include "s2conv/text.hpp"

namespace s2conv {

std::string_view to_string(BackendErrorKind kind) {
    switch (kind) {
        case BackendErrorKind::Transport: return "transport";
        case BackendErrorKind::Auth:      return "auth";
        case BackendErrorKind::RateLimit: return "rate_limit";
        case BackendErrorKind::Overflow:  return "overflow";
    }
    return "transport";
}

std::string_view to_string(Role role) {
    switch (role) {
        case Role::System:    return "system";
        case Role::User:      return "user";
        case Role::Assistant: return "assistant";
    }
    return "user";
}

Role parse_role(std::string_view text) {
    if (text == "system") return Role::System;
    if (text == "user") return Role::User;
    if (text == "assistant") return Role::Assistant;
    throw SchemaError("unknown chat role '" + std::string(text) + "'");
}

void GenerationParams::validate() const {
    if (!(temperature >= 0.0 && temperature <= 2.0)) {
        throw SchemaError("temperature must lie in [0, 2]");
    }
    if (max_tokens <= 0) {
        throw SchemaError("max_tokens must be positive");
    }
}

std::string render_transcript(std::span<const ChatMessage> messages) {
    std::string out;
    for (const auto& m : messages) {
        out += to_string(m.role);
        out += ": ";
        out += m.content;
        out += '\n';
    }
    return out;
}

std::string ChatBackend::complete(std::span<const ChatMessage> messages,
                                  const GenerationParams& params) {
    if (messages.empty()) {
        throw SchemaError("complete() needs at least one message");
    }
    for (const auto& m : messages) {
        if (m.content.empty()) {
            throw SchemaError("chat message content must be non-empty");
        }
    }
    params.validate();
    std::string reply = do_complete(messages, params);
    if (trim(reply).empty()) {
        throw BackendError(BackendErrorKind::Transport, name() + " returned an empty completion");
    }
    return reply;
}

// ---------------------------------------------------------------- replay

ReplayBackend::ReplayBackend(std::vector<Step> script) : script_(std::move(script)) {}

std::unique_ptr<ReplayBackend> ReplayBackend::from_file(const std::filesystem::path& path) {
    std::vector<Step> steps;
    try {
        const auto j = nlohmann::json::parse(read_text_file(path));
        for (const auto& item : j) {
            steps.push_back({item.value("expect_substring", std::string{}),
                             item.at("response").get<std::string>()});
        }
    } catch (const nlohmann::json::exception& e) {
        throw SchemaError("replay script " + path.string() + ": " + e.what());
    }
    return std::make_unique<ReplayBackend>(std::move(steps));
}

std::size_t ReplayBackend::position() const {
    std::lock_guard lock(mutex_);
    return cursor_;
}

std::string ReplayBackend::do_complete(std::span<const ChatMessage> messages,
                                       const GenerationParams&) {
    std::lock_guard lock(mutex_);
    if (cursor_ >= script_.size()) {
        throw BackendError(BackendErrorKind::Overflow,
                           "replay script exhausted after " + std::to_string(script_.size()) + " steps");
    }
    const Step& step = script_[cursor_];
    if (!step.expect_substring.empty() &&
        !contains(render_transcript(messages), step.expect_substring)) {
        throw BackendError(BackendErrorKind::Transport,
                           "replay step " + std::to_string(cursor_) + " expected '" +
                               step.expect_substring + "' in the request");
    }
    ++cursor_;
    return step.response;
}

// -------------------------------------------------------------- rulebook

RulebookBackend::RulebookBackend(std::string default_response)
    : default_([text = std::move(default_response)](auto, const auto&) { return text; }) {}

RulebookBackend& RulebookBackend::add(std::string pattern, std::string response, Scope scope) {
    return add(std::move(pattern),
               [text = std::move(response)](auto, const auto&) { return text; }, scope);
}

RulebookBackend& RulebookBackend::add(std::string pattern, Responder respond, Scope scope) {
    rules_.push_back({std::move(pattern), std::move(respond), scope});
    return *this;
}

RulebookBackend& RulebookBackend::set_default(Responder respond) {
    default_ = std::move(respond);
    return *this;
}

std::string RulebookBackend::do_complete(std::span<const ChatMessage> messages,
                                         const GenerationParams& params) {
    const std::string all = render_transcript(messages);
    for (const auto& rule : rules_) {
        const std::string_view target =
            rule.scope == Scope::LastMessage ? std::string_view(messages.back().content) : all;
        if (contains(target, rule.pattern)) {
            return rule.respond(messages, params);
        }
    }
    return default_(messages, params);
}

// ---------------------------------------------------------------- remote

namespace {

std::string env_or_empty(const std::string& name) {
    const char* v = std::getenv(name.c_str());
    return v ? std::string(v) : std::string{};
}

struct Endpoint {
    std::string scheme_host_port;
    std::string path_prefix;
};

Endpoint split_url(const std::string& base_url) {
    const auto scheme_end = base_url.find("://");
    if (scheme_end == std::string::npos) {
        throw SchemaError("base URL must include a scheme: '" + base_url + "'");
    }
    const auto path_start = base_url.find('/', scheme_end + 3);
    if (path_start == std::string::npos) {
        return {base_url, ""};
    }
    std::string prefix = base_url.substr(path_start);
    while (!prefix.empty() && prefix.back() == '/') {
        prefix.pop_back();
    }
    return {base_url.substr(0, path_start), prefix};
}

bool is_transient(BackendErrorKind kind) {
    return kind == BackendErrorKind::Transport || kind == BackendErrorKind::RateLimit;
}

// POSTs JSON and returns the parsed reply, retrying transient failures with
// exponential backoff.
nlohmann::json post_json(const RemoteConfig& config, const std::string& path,
                         const nlohmann::json& body) {
    if (config.base_url.empty()) {
        throw BackendError(BackendErrorKind::Transport, "remote backend has no base URL configured");
    }
    const Endpoint endpoint = split_url(config.base_url);
    const std::string payload = body.dump();
    auto backoff = config.retry.initial_backoff;
    const int attempts = std::max(1, config.retry.max_attempts);

    for (int attempt = 1;; ++attempt) {
        BackendErrorKind kind = BackendErrorKind::Transport;
        std::string reason;
        try {
            httplib::Client client(endpoint.scheme_host_port);
            client.set_connection_timeout(config.timeout);
            client.set_read_timeout(config.timeout);
            client.set_write_timeout(config.timeout);
            httplib::Headers headers;
            if (!config.api_key.empty()) {
                headers.emplace("Authorization", "Bearer " + config.api_key);
            }
            auto res = client.Post(endpoint.path_prefix + path, headers, payload, "application/json");
            if (!res) {
                reason = "request failed: " + httplib::to_string(res.error());
            } else if (res->status == 200) {
                try {
                    return nlohmann::json::parse(res->body);
                } catch (const nlohmann::json::exception& e) {
                    reason = std::string("unparseable provider reply: ") + e.what();
                }
            } else {
                reason = "HTTP " + std::to_string(res->status) + ": " + res->body.substr(0, 300);
                if (res->status == 401 || res->status == 403) {
                    kind = BackendErrorKind::Auth;
                } else if (res->status == 429) {
                    kind = BackendErrorKind::RateLimit;
                } else if (res->status == 400 && contains(res->body, "context_length")) {
                    kind = BackendErrorKind::Overflow;
                } else if (res->status < 500) {
                    // Other client errors will not improve on retry.
                    throw BackendError(BackendErrorKind::Transport, reason);
                }
            }
        } catch (const BackendError&) {
            throw;
        } catch (const std::exception& e) {
            reason = e.what();
        }

        if (!is_transient(kind) || attempt >= attempts) {
            throw BackendError(kind, reason);
        }
        spdlog::warn("remote backend attempt {}/{} failed ({}), retrying in {} ms", attempt, attempts,
                     reason, backoff.count());
        std::this_thread::sleep_for(backoff);
        backoff = std::chrono::milliseconds(
            static_cast<long long>(static_cast<double>(backoff.count()) * config.retry.multiplier));
    }
}

}  // namespace

RemoteConfig RemoteConfig::from_env(std::string_view prefix) {
    const std::string p(prefix);
    RemoteConfig config;
    config.base_url = env_or_empty(p + "_BASE_URL");
    config.model = env_or_empty(p + "_MODEL");
    config.api_key = env_or_empty(p + "_API_KEY");
    return config;
}

RemoteChatBackend::RemoteChatBackend(RemoteConfig config) : config_(std::move(config)) {}

std::string RemoteChatBackend::do_complete(std::span<const ChatMessage> messages,
                                           const GenerationParams& params) {
    nlohmann::json body;
    body["model"] = config_.model;
    body["temperature"] = params.temperature;
    body["max_tokens"] = params.max_tokens;
    if (params.seed) {
        body["seed"] = *params.seed;
    }
    auto& msgs = body["messages"] = nlohmann::json::array();
    for (const auto& m : messages) {
        msgs.push_back({{"role", to_string(m.role)}, {"content", m.content}});
    }
    const auto reply = post_json(config_, "/chat/completions", body);
    try {
        const auto& content = reply.at("choices").at(0).at("message").at("content");
        return content.is_string() ? content.get<std::string>() : std::string{};
    } catch (const nlohmann::json::exception& e) {
        throw BackendError(BackendErrorKind::Transport,
                           std::string("chat reply lacks choices[0].message.content: ") + e.what());
    }
}

// ------------------------------------------------------------ embeddings

double EmbeddingVector::norm() const {
    double sum = 0.0;
    for (const double v : values) {
        sum += v * v;
    }
    return std::sqrt(sum);
}

double cosine(const EmbeddingVector& a, const EmbeddingVector& b) {
    if (a.dim() != b.dim()) {
        throw DimensionMismatch("cosine of vectors with dims " + std::to_string(a.dim()) + " and " +
                                std::to_string(b.dim()));
    }
    const double na = a.norm();
    const double nb = b.norm();
    if (na == 0.0 || nb == 0.0) {
        return 0.0;
    }
    double dot = 0.0;
    for (std::size_t i = 0; i < a.dim(); ++i) {
        dot += a.values[i] * b.values[i];
    }
    return dot / (na * nb);
}

EmbeddingVector Embedder::embed(std::string_view text) const {
    if (text.empty()) {
        throw EmptyInput("cannot embed empty text");
    }
    return do_embed(text);
}

HashingEmbedder::HashingEmbedder(std::size_t dim) : dim_(dim) {
    if (dim == 0) {
        throw SchemaError("embedding dimension must be positive");
    }
}

std::string HashingEmbedder::fingerprint() const {
    return "hashing-fnv1a-v1:" + std::to_string(dim_);
}

std::size_t HashingEmbedder::bucket(std::string_view token) const {
    return static_cast<std::size_t>(fnv1a(to_lower(token)) % dim_);
}

EmbeddingVector HashingEmbedder::do_embed(std::string_view text) const {
    EmbeddingVector v{std::vector<double>(dim_, 0.0)};
    auto tokens = word_tokens(text);
    if (tokens.empty()) {
        tokens.push_back(std::string(text));
    }
    for (const auto& token : tokens) {
        v.values[bucket(token)] += 1.0;
    }
    const double n = v.norm();
    for (double& x : v.values) {
        x /= n;
    }
    return v;
}

RemoteEmbedder::RemoteEmbedder(RemoteConfig config, std::size_t dim)
    : config_(std::move(config)), dim_(dim) {}

EmbeddingVector RemoteEmbedder::do_embed(std::string_view text) const {
    const nlohmann::json body{{"model", config_.model}, {"input", std::string(text)}};
    const auto reply = post_json(config_, "/embeddings", body);
    EmbeddingVector v;
    try {
        v.values = reply.at("data").at(0).at("embedding").get<std::vector<double>>();
    } catch (const nlohmann::json::exception& e) {
        throw BackendError(BackendErrorKind::Transport,
                           std::string("embedding reply lacks data[0].embedding: ") + e.what());
    }
    if (v.dim() != dim_) {
        throw BackendError(BackendErrorKind::Transport,
                           "embedding reply has dim " + std::to_string(v.dim()) + ", expected " +
                               std::to_string(dim_));
    }
    return v;
}

}  // namespace s2conv
