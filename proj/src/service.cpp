#include "s2conv/service.hpp"

#include <httplib.h>

#include <algorithm>
#include <chrono>
#include <cstdio>
#include <cstdlib>
#include <thread>

#include <spdlog/spdlog.h>

#include "s2conv/error.hpp"
#include "s2conv/mock_backend.hpp"
#include "s2conv/text.hpp"

namespace s2conv {

using ojson = nlohmann::ordered_json;

// ------------------------------------------------------------------ config

void ServiceConfig::set_listen(std::string_view addr) {
    const auto colon = addr.rfind(':');
    if (colon == std::string_view::npos) {
        throw SchemaError("listen address must be host:port, got '" + std::string(addr) + "'");
    }
    const std::string port_text(addr.substr(colon + 1));
    char* end = nullptr;
    const long p = std::strtol(port_text.c_str(), &end, 10);
    if (port_text.empty() || *end != '\0' || p < 0 || p > 65535) {
        throw SchemaError("invalid port in listen address '" + std::string(addr) + "'");
    }
    host = std::string(addr.substr(0, colon));
    port = static_cast<int>(p);
}

ServiceConfig ServiceConfig::from_json(const nlohmann::json& j) {
    if (!j.is_object()) {
        throw SchemaError("service config must be a JSON object");
    }
    ServiceConfig c;
    try {
        for (const auto& [key, value] : j.items()) {
            if (key == "bank") {
                c.bank_path = value.get<std::string>();
            } else if (key == "model") {
                if (!value.is_null()) {
                    c.model_path = value.get<std::string>();
                }
            } else if (key == "data_dir") {
                c.data_dir = value.get<std::string>();
            } else if (key == "listen") {
                c.set_listen(value.get<std::string>());
            } else if (key == "mock") {
                c.mock = value.get<bool>();
            } else if (key == "mock_latency_ms") {
                c.mock_latency_ms = value.get<int>();
            } else if (key == "embedder") {
                c.embedder = value.get<std::string>();
            } else if (key == "embed_dim") {
                c.embed_dim = value.get<std::size_t>();
            } else if (key == "seed") {
                c.seed = value.get<std::uint64_t>();
            } else {
                throw SchemaError("unknown service config key '" + key + "'");
            }
        }
    } catch (const nlohmann::json::exception& e) {
        throw SchemaError(std::string("service config: ") + e.what());
    }
    return c;
}

ojson ServiceConfig::to_json() const {
    ojson j;
    j["bank"] = bank_path.string();
    j["model"] = model_path ? ojson(model_path->string()) : ojson(nullptr);
    j["data_dir"] = data_dir.string();
    j["listen"] = host + ":" + std::to_string(port);
    j["mock"] = mock;
    j["mock_latency_ms"] = mock_latency_ms;
    j["embedder"] = embedder;
    j["embed_dim"] = embed_dim;
    j["seed"] = seed;
    return j;
}

void ServiceConfig::apply_env() {
    if (const char* v = std::getenv("S2CONV_LISTEN_ADDR"); v && *v) {
        set_listen(v);
    }
    if (const char* v = std::getenv("S2CONV_DATA_DIR"); v && *v) {
        data_dir = v;
    }
}

// ------------------------------------------------------------- JSON shapes

ojson profile_summary_json(const CharacterProfile& profile) {
    ojson j;
    j["id"] = profile.id;
    j["mbti"] = profile.mbti.str();
    j["name"] = profile.name();
    for (const char* key : {"gender", "age", "tone", "occupation"}) {
        if (const auto* v = profile.persona.find(key)) {
            j[key] = *v;
        }
    }
    return j;
}

ojson profile_json(const CharacterProfile& profile) {
    ojson j;
    j["id"] = profile.id;
    j["mbti"] = profile.mbti.str();
    auto& persona = j["persona"] = ojson::object();
    for (const auto& [k, v] : profile.persona) {
        persona[k] = v;
    }
    auto& memory = j["memory"] = ojson::object();
    for (const auto& [k, v] : profile.memory) {
        memory[k] = v;
    }
    auto& presets = j["behavior_presets"] = ojson::array();
    for (const auto& p : profile.behavior_presets) {
        presets.push_back({{"trigger", p.trigger}, {"reply", p.reply}});
    }
    return j;
}

ojson turn_json(const ChatTurn& turn) {
    ojson j;
    j["turn_index"] = turn.turn_index;
    j["speaker"] = to_string(turn.speaker);
    j["text"] = turn.text;
    j["memory_aspect"] = turn.memory_aspect ? ojson(*turn.memory_aspect) : ojson(nullptr);
    return j;
}

ojson session_json(const Session& session) {
    ojson j;
    j["session_id"] = session.id();
    j["supporter_id"] = session.supporter_id;
    j["seeker_persona"] = session.seeker_persona;
    j["status"] = session.closed() ? "closed" : "active";
    j["created_at"] = session.created_at;
    j["updated_at"] = session.updated_at;
    j["rating"] = session.rating ? ojson{{"ei", session.rating->ei},
                                         {"ps", session.rating->ps},
                                         {"ae", session.rating->ae}}
                                 : ojson(nullptr);
    auto& turns = j["turns"] = ojson::array();
    for (const auto& t : session.conversation.turns) {
        turns.push_back(turn_json(t));
    }
    return j;
}

// ------------------------------------------------------------------ service

ChatService::ChatService(CharacterBank bank, std::optional<MatchModel> model,
                         std::unique_ptr<ChatBackend> backend, std::unique_ptr<Embedder> embedder,
                         std::filesystem::path data_dir, std::uint64_t seed)
    : bank_(std::move(bank)),
      model_(std::move(model)),
      backend_(std::move(backend)),
      embedder_(std::move(embedder)),
      features_(bank_, *embedder_),
      store_(std::move(data_dir)),
      seed_(seed) {
    if (model_ && model_->dim() != embedder_->dim()) {
        throw DimensionMismatch("match model dimension does not match the embedder");
    }
}

ChatService::~ChatService() = default;

std::unique_ptr<ChatService> ChatService::from_config(const ServiceConfig& config) {
    if (config.bank_path.empty()) {
        throw SchemaError("no bank file configured");
    }
    if (!std::filesystem::exists(config.bank_path)) {
        throw IoError("bank file " + config.bank_path.string() + " does not exist");
    }
    CharacterBank bank = load_bank(config.bank_path);

    std::unique_ptr<Embedder> embedder;
    if (config.embedder == "hashing") {
        embedder = std::make_unique<HashingEmbedder>(config.embed_dim);
    } else if (config.embedder == "remote") {
        embedder = std::make_unique<RemoteEmbedder>(RemoteConfig::from_env("S2CONV_EMBED"), config.embed_dim);
    } else {
        throw SchemaError("unknown embedder '" + config.embedder + "' (expected hashing or remote)");
    }

    std::optional<MatchModel> model;
    if (config.model_path) {
        model = load_match_model(*config.model_path, embedder->fingerprint());
    } else {
        spdlog::warn("no match model configured; /match falls back to a seeded random ranking");
    }

    std::unique_ptr<ChatBackend> backend =
        config.mock ? make_mock_backend({.latency = std::chrono::milliseconds(config.mock_latency_ms)})
                    : std::unique_ptr<ChatBackend>(
                          std::make_unique<RemoteChatBackend>(RemoteConfig::from_env("S2CONV_LLM")));
    return std::make_unique<ChatService>(std::move(bank), std::move(model), std::move(backend),
                                         std::move(embedder), config.data_dir, config.seed);
}

namespace {

struct ApiError {
    int status;
    std::string code;
};

ApiError classify(const Error& e) {
    const std::string& code = e.code();
    if (code == "not_found" || code == "unknown_character") return {404, "not_found"};
    if (code == "unknown_supporter") return {404, "unknown_supporter"};
    if (code == "closed_session") return {410, "closed_session"};
    if (code == "protocol_error") return {409, "protocol_error"};
    switch (e.category()) {
        case ErrorCategory::Backend: return {502, "backend_error"};
        case ErrorCategory::Validation: return {400, "validation_error"};
        case ErrorCategory::Protocol: return {409, "protocol_error"};
        case ErrorCategory::Io: return {500, "backend_error"};
    }
    return {500, "backend_error"};
}

void send_json(httplib::Response& res, int status, const ojson& body) {
    res.status = status;
    res.set_content(body.dump(), "application/json");
}

void send_error(httplib::Response& res, int status, const std::string& code, const std::string& message) {
    send_json(res, status, {{"code", code}, {"message", message}});
}

template <typename Handler>
httplib::Server::Handler guarded(Handler handler) {
    return [handler = std::move(handler)](const httplib::Request& req, httplib::Response& res) {
        try {
            handler(req, res);
        } catch (const Error& e) {
            const auto [status, code] = classify(e);
            if (status >= 500) {
                spdlog::error("{} {}: {}", req.method, req.path, e.what());
            }
            send_error(res, status, code, e.what());
        } catch (const nlohmann::json::exception& e) {
            send_error(res, 400, "validation_error", std::string("invalid request body: ") + e.what());
        } catch (const std::exception& e) {
            spdlog::error("{} {}: {}", req.method, req.path, e.what());
            send_error(res, 500, "backend_error", "internal error");
        }
    };
}

ojson parse_body(const httplib::Request& req) {
    if (trim(req.body).empty()) {
        throw SchemaError("request body must be a JSON object");
    }
    ojson body;
    try {
        body = ojson::parse(req.body);
    } catch (const nlohmann::json::parse_error& e) {
        throw SchemaError(std::string("request body is not valid JSON: ") + e.what());
    }
    if (!body.is_object()) {
        throw SchemaError("request body must be a JSON object");
    }
    return body;
}

std::size_t query_size(const httplib::Request& req, const char* key, std::size_t fallback, std::size_t lo,
                       std::size_t hi) {
    if (!req.has_param(key)) {
        return fallback;
    }
    const std::string text = req.get_param_value(key);
    char* end = nullptr;
    const long long v = std::strtoll(text.c_str(), &end, 10);
    if (text.empty() || *end != '\0' || v < static_cast<long long>(lo) || v > static_cast<long long>(hi)) {
        throw SchemaError(std::string(key) + " must be an integer in [" + std::to_string(lo) + ", " +
                          std::to_string(hi) + "]");
    }
    return static_cast<std::size_t>(v);
}

int rating_field(const ojson& body, const char* key) {
    if (!body.contains(key) || !body[key].is_number_integer()) {
        throw SchemaError(std::string("rating field '") + key + "' must be an integer between 1 and 5");
    }
    const auto v = body[key].get<long long>();
    if (v < kMinScore || v > kMaxScore) {
        throw SchemaError(std::string("rating field '") + key + "' must be between 1 and 5, got " +
                          std::to_string(v));
    }
    return static_cast<int>(v);
}

// Free text is used as is; an attribute map is rendered as "attr: value" lines.
std::string persona_text(const ojson& value) {
    if (value.is_string()) {
        return trim(value.get<std::string>());
    }
    if (value.is_object()) {
        OrderedTextMap map;
        for (const auto& [k, v] : value.items()) {
            const std::string text = v.is_string() ? v.get<std::string>() : v.dump();
            if (!trim(text).empty()) {
                map.push_back(k, trim(text));
            }
        }
        return render_persona_lines(map);
    }
    throw SchemaError("seeker_persona must be a string or an object of attributes");
}

constexpr std::size_t kDefaultPageSize = 20;
constexpr std::size_t kMaxPageSize = 200;
constexpr std::size_t kDefaultMatchK = 3;

}  // namespace

void ChatService::register_routes(httplib::Server& server) {
    server.set_post_routing_handler([](const httplib::Request&, httplib::Response& res) {
        res.set_header("Access-Control-Allow-Origin", "*");
        res.set_header("Access-Control-Allow-Headers", "Content-Type");
        res.set_header("Access-Control-Allow-Methods", "GET, POST, OPTIONS");
    });
    server.Options(R"(.*)", [](const httplib::Request&, httplib::Response& res) { res.status = 204; });
    server.set_error_handler([](const httplib::Request&, httplib::Response& res) {
        if (res.body.empty()) {
            const std::string code = res.status == 404 ? "not_found" : "validation_error";
            send_error(res, res.status, code, httplib::status_message(res.status));
        }
    });

    server.Get("/health", guarded([this](const httplib::Request&, httplib::Response& res) {
        if (bank_.empty()) {
            send_json(res, 503, {{"status", "unavailable"}, {"version", kVersion}, {"message", "bank is empty"}});
            return;
        }
        send_json(res, 200,
                  {{"status", "ok"},
                   {"version", kVersion},
                   {"matcher", model_ ? "trained" : "fallback"},
                   {"characters", bank_.size()},
                   {"sessions", store_.size()}});
    }));

    server.Get("/characters", guarded([this](const httplib::Request& req, httplib::Response& res) {
        std::optional<MbtiType> filter;
        if (req.has_param("mbti") && !req.get_param_value("mbti").empty()) {
            filter = parse_mbti(req.get_param_value("mbti"));
        }
        const std::size_t page = query_size(req, "page", 1, 1, 1'000'000);
        const std::size_t page_size = query_size(req, "page_size", kDefaultPageSize, 1, kMaxPageSize);
        std::vector<const CharacterProfile*> matching;
        for (const auto& c : bank_.characters()) {
            if (!filter || c.mbti == *filter) {
                matching.push_back(&c);
            }
        }
        std::sort(matching.begin(), matching.end(), [](auto* a, auto* b) { return a->id < b->id; });
        ojson items = ojson::array();
        for (std::size_t i = (page - 1) * page_size; i < std::min(matching.size(), page * page_size); ++i) {
            items.push_back(profile_summary_json(*matching[i]));
        }
        send_json(res, 200,
                  {{"page", page}, {"page_size", page_size}, {"total", matching.size()}, {"items", items}});
    }));

    server.Get(R"(/characters/([^/]+))", guarded([this](const httplib::Request& req, httplib::Response& res) {
        const auto* c = bank_.find(req.matches[1].str());
        if (!c) {
            throw NotFound("no character with id '" + req.matches[1].str() + "'");
        }
        send_json(res, 200, profile_json(*c));
    }));

    server.Post("/match", guarded([this](const httplib::Request& req, httplib::Response& res) {
        const ojson body = parse_body(req);
        if (!body.contains("seeker_persona")) {
            throw SchemaError("seeker_persona is required");
        }
        const std::string persona = persona_text(body["seeker_persona"]);
        if (persona.empty()) {
            throw SchemaError("seeker_persona must not be empty");
        }
        std::size_t k = kDefaultMatchK;
        if (body.contains("k")) {
            if (!body["k"].is_number_integer() || body["k"].get<long long>() < 1) {
                throw SchemaError("k must be a positive integer");
            }
            k = body["k"].get<std::size_t>();
        }
        if (k > bank_.size()) {
            throw SchemaError("k must not exceed the bank size (" + std::to_string(bank_.size()) + ")");
        }
        const auto ranked = model_ ? dispatch(*model_, embedder_->embed(persona), features_, k)
                                   : fallback_dispatch(persona, features_, k, seed_);
        ojson results = ojson::array();
        for (const auto& r : ranked) {
            results.push_back({{"supporter_id", r.supporter_id},
                               {"score", r.score},
                               {"supporter", profile_summary_json(bank_.at(r.supporter_id))}});
        }
        send_json(res, 200, {{"matcher", model_ ? "trained" : "fallback"}, {"results", results}});
    }));

    server.Post("/sessions", guarded([this](const httplib::Request& req, httplib::Response& res) {
        const ojson body = parse_body(req);
        if (!body.contains("supporter_id") || !body["supporter_id"].is_string()) {
            throw SchemaError("supporter_id is required");
        }
        const std::string persona = body.contains("seeker_persona") ? persona_text(body["seeker_persona"]) : "";
        const Session s = store_.create(bank_, body["supporter_id"].get<std::string>(), persona);
        send_json(res, 201, session_json(s));
    }));

    server.Get(R"(/sessions/([^/]+))", guarded([this](const httplib::Request& req, httplib::Response& res) {
        send_json(res, 200, session_json(store_.get(req.matches[1].str())));
    }));

    server.Post(R"(/sessions/([^/]+)/messages)",
                guarded([this](const httplib::Request& req, httplib::Response& res) {
                    const ojson body = parse_body(req);
                    if (!body.contains("text") || !body["text"].is_string()) {
                        throw SchemaError("text is required");
                    }
                    const std::string id = req.matches[1].str();
                    const ChatTurn reply =
                        store_.exchange(id, body["text"].get<std::string>(), [this](Session& s) {
                            EngineOptions options;
                            options.params.seed = mix_seed(seed_, fnv1a(s.id()) + s.conversation.turns.size());
                            return next_supporter_turn(s, bank_.at(s.supporter_id), *backend_, *embedder_,
                                                       options);
                        });
                    send_json(res, 200, turn_json(reply));
                }));

    server.Post(R"(/sessions/([^/]+)/rating)", guarded([this](const httplib::Request& req, httplib::Response& res) {
        const ojson body = parse_body(req);
        const EvalScores scores{rating_field(body, "ei"), rating_field(body, "ps"), rating_field(body, "ae")};
        store_.rate(req.matches[1].str(), scores);
        send_json(res, 200,
                  {{"status", "stored"}, {"rating", {{"ei", scores.ei}, {"ps", scores.ps}, {"ae", scores.ae}}}});
    }));

    server.Post(R"(/sessions/([^/]+)/close)", guarded([this](const httplib::Request& req, httplib::Response& res) {
        store_.close(req.matches[1].str());
        send_json(res, 200, {{"status", "closed"}, {"session_id", req.matches[1].str()}});
    }));
}

bool run_service(ChatService& service, const std::string& host, int port, const std::atomic<bool>* stop) {
    httplib::Server server;
    service.register_routes(server);
    int bound = port;
    if (port == 0) {
        bound = server.bind_to_any_port(host);
        if (bound < 0) {
            return false;
        }
    } else if (!server.bind_to_port(host, port)) {
        return false;
    }
    std::printf("listening on http://%s:%d\n", host.c_str(), bound);
    std::fflush(stdout);
    spdlog::info("serving {} characters on {}:{}", service.bank().size(), host, bound);

    std::thread watcher;
    std::atomic<bool> done{false};
    if (stop) {
        watcher = std::thread([&] {
            while (!done && !*stop) {
                std::this_thread::sleep_for(std::chrono::milliseconds(50));
            }
            server.stop();
        });
    }
    const bool ok = server.listen_after_bind();
    done = true;
    if (watcher.joinable()) {
        watcher.join();
    }
    return ok;
}

}  // namespace s2conv
