#include <csignal>
#include <cstdio>
#include <cstdlib>
#include <fstream>
#include <functional>
#include <iostream>
#include <map>
#include <memory>
#include <optional>
#include <sstream>
#include <string>
#include <vector>

#include <CLI11.hpp>
#include <nlohmann/json.hpp>
#include <spdlog/sinks/stdout_color_sinks.h>
#include <spdlog/spdlog.h>

#include "s2conv/character.hpp"
#include "s2conv/conversation.hpp"
#include "s2conv/error.hpp"
#include "s2conv/evaluator.hpp"
#include "s2conv/llm.hpp"
#include "s2conv/matcher.hpp"
#include "s2conv/memory_selector.hpp"
#include "s2conv/mock_backend.hpp"
#include "s2conv/parallel.hpp"
#include "s2conv/roleplay.hpp"
#include "s2conv/service.hpp"
#include "s2conv/text.hpp"

// After the Eigen-based headers: <resolv.h> defines an _res macro.
#include <httplib.h>

namespace {

using namespace s2conv;
using ojson = nlohmann::ordered_json;

constexpr int kExitUsage = 2;
constexpr int kExitValidation = 3;
constexpr int kExitBackend = 4;
constexpr int kExitIo = 5;

int exit_code(const Error& e) {
    switch (e.category()) {
        case ErrorCategory::Validation:
        case ErrorCategory::Protocol:
            return kExitValidation;
        case ErrorCategory::Backend:
            return kExitBackend;
        case ErrorCategory::Io:
            return kExitIo;
    }
    return kExitValidation;
}

// ---------------------------------------------------------------- shared options

struct BackendOptions {
    bool mock = false;
    double mock_expiration_rate = MockOptions{}.expiration_rate;
    int mock_latency_ms = 0;
};

struct EmbedOptions {
    std::string kind = "hashing";
    std::size_t dim = HashingEmbedder::kDefaultDim;
};

void add_backend_options(CLI::App& sub, BackendOptions& o) {
    sub.add_flag("--mock", o.mock, "Use the offline mock chat backend instead of S2CONV_LLM_*");
}

void add_embed_options(CLI::App& sub, EmbedOptions& o) {
    sub.add_option("--embedder", o.kind, "Embedding backend")->check(CLI::IsMember({"hashing", "remote"}));
    sub.add_option("--embed-dim", o.dim, "Embedding dimension")->check(CLI::PositiveNumber);
}

std::unique_ptr<ChatBackend> make_backend(const BackendOptions& o) {
    if (o.mock) {
        MockOptions mo;
        mo.expiration_rate = o.mock_expiration_rate;
        mo.latency = std::chrono::milliseconds(o.mock_latency_ms);
        return make_mock_backend(mo);
    }
    auto config = RemoteConfig::from_env("S2CONV_LLM");
    if (config.base_url.empty() || config.model.empty()) {
        throw SchemaError("no chat backend: set S2CONV_LLM_BASE_URL and S2CONV_LLM_MODEL, or pass --mock");
    }
    return std::make_unique<RemoteChatBackend>(std::move(config));
}

std::unique_ptr<Embedder> make_embedder(const EmbedOptions& o) {
    if (o.kind == "remote") {
        auto config = RemoteConfig::from_env("S2CONV_EMBED");
        if (config.base_url.empty() || config.model.empty()) {
            throw SchemaError("remote embedder needs S2CONV_EMBED_BASE_URL and S2CONV_EMBED_MODEL");
        }
        return std::make_unique<RemoteEmbedder>(std::move(config), o.dim);
    }
    return std::make_unique<HashingEmbedder>(o.dim);
}

void write_output(const std::string& path, const std::string& text) {
    if (path.empty() || path == "-") {
        std::cout << text;
        std::cout.flush();
    } else {
        write_text_file(path, text);
    }
}

std::string format(const char* fmt, double v) {
    char buf[64];
    std::snprintf(buf, sizeof buf, fmt, v);
    return buf;
}

// ---------------------------------------------------------------- stages

struct GenBankArgs {
    BackendOptions backend;
    int per_type = 64;
    int batch_size = GenerationOptions{}.batch_size;
    std::string out;
    std::uint64_t seed = 0;
};

int run_gen_bank(const GenBankArgs& a) {
    auto backend = make_backend(a.backend);
    GenerationOptions opts;
    opts.batch_size = a.batch_size;
    const CharacterBank bank = generate_bank(*backend, a.per_type, a.seed, opts);
    save_bank(bank, a.out);
    spdlog::info("wrote {} characters to {}", bank.size(), a.out);
    return 0;
}

struct GenPresetsArgs {
    BackendOptions backend;
    std::string bank;
    std::string out;
    int count = kDefaultPresetCount;
    int parallel = 1;
    std::uint64_t seed = 0;
};

int run_gen_presets(const GenPresetsArgs& a) {
    CharacterBank bank = load_bank(a.bank);
    auto backend = make_backend(a.backend);
    std::vector<CharacterProfile> profiles = bank.characters();
    parallel_for(profiles.size(), a.parallel, [&](std::size_t i) {
        auto& p = profiles[i];
        generate_behavior_presets(*backend, p, a.count, mix_seed(a.seed, fnv1a(p.id)));
    });
    const CharacterBank out(std::move(profiles), bank.per_type_target());
    save_bank(out, a.out.empty() ? a.bank : a.out);
    spdlog::info("added {} presets to each of {} characters", a.count, out.size());
    return 0;
}

struct SynthArgs {
    BackendOptions backend;
    EmbedOptions embed;
    std::string bank;
    std::string out;
    std::string skip_log;
    std::string reranker;
    int supporters = 2;
    int max_exchanges = kDefaultMaxExchanges;
    bool static_seeker_memory = false;
    int parallel = 1;
    std::uint64_t seed = 0;
};

int run_synth(const SynthArgs& a) {
    const CharacterBank bank = load_bank(a.bank);
    auto backend = make_backend(a.backend);
    auto embedder = make_embedder(a.embed);
    std::optional<MemoryReranker> reranker;
    EngineOptions options;
    options.seeker_dynamic_memory = !a.static_seeker_memory;
    if (!a.reranker.empty()) {
        reranker = load_reranker(a.reranker);
        options.reranker = &*reranker;
    }
    const auto result = synthesize_dataset(bank, a.supporters, *backend, *embedder, a.max_exchanges, a.seed,
                                           options, a.parallel);
    write_dataset(a.out, result.conversations);
    if (!a.skip_log.empty()) {
        write_skip_log(a.skip_log, result.skipped);
    }
    for (const auto& s : result.skipped) {
        spdlog::warn("skipped {} -> {}: {}", s.seeker_id, s.supporter_id, s.error);
    }
    spdlog::info("wrote {} conversations to {} ({} skipped)", result.conversations.size(), a.out,
                 result.skipped.size());
    return 0;
}

struct JudgeArgs {
    BackendOptions backend;
    std::string dataset;
    std::string bank;
    std::string out;
    int parallel = 1;
    std::uint64_t seed = 0;
};

int run_judge(const JudgeArgs& a) {
    const CharacterBank bank = load_bank(a.bank);
    const auto conversations = load_dataset(a.dataset);
    auto backend = make_backend(a.backend);
    const auto result = judge_dataset(conversations, bank, *backend, a.seed, {}, a.parallel);
    save_scores(a.out, result.scored);
    for (const auto& f : result.failed) {
        spdlog::warn("could not judge {}: {}", f.conversation_id, f.error);
    }
    spdlog::info("judged {} conversations ({} failed)", result.scored.size(), result.failed.size());
    return 0;
}

struct StatsArgs {
    std::string scores;
    bool json = false;
};

int run_stats(const StatsArgs& a) {
    const auto scores = load_scores(a.scores);
    const DatasetStats st = dataset_stats(scores);
    if (a.json) {
        ojson j;
        j["count"] = st.count;
        for (const auto c : kCriteria) {
            const auto& s = st.of(c);
            j[std::string(to_string(c))] = {{"avg", s.avg}, {"min", s.min}, {"max", s.max}, {"std", s.std}};
        }
        std::cout << j.dump(2) << "\n";
        return 0;
    }
    std::printf("%-9s %8s %8s %8s %8s\n", "criterion", "avg", "min", "max", "std");
    for (const auto c : kCriteria) {
        const auto& s = st.of(c);
        std::printf("%-9s %8.4f %8.4f %8.4f %8.4f\n", std::string(to_string(c)).c_str(), s.avg, s.min, s.max,
                    s.std);
    }
    std::printf("n=%zu\n", st.count);
    return 0;
}

struct HeatmapArgs {
    std::string scores;
    std::string criterion = "ei";
    std::string out;
};

int run_heatmap(const HeatmapArgs& a) {
    const auto scores = load_scores(a.scores);
    write_output(a.out, pair_matrix_csv(mbti_pair_matrix(scores, parse_criterion(a.criterion))));
    return 0;
}

struct PearsonArgs {
    std::string data;
};

std::vector<std::string> split_csv_line(const std::string& line) {
    std::vector<std::string> cells;
    std::stringstream ss(line);
    for (std::string cell; std::getline(ss, cell, ',');) {
        cells.push_back(trim(cell));
    }
    return cells;
}

double parse_number(const std::string& cell, std::size_t line) {
    try {
        std::size_t used = 0;
        const double v = std::stod(cell, &used);
        if (used == cell.size() && std::isfinite(v)) {
            return v;
        }
    } catch (const std::exception&) {
    }
    throw SchemaError("line " + std::to_string(line) + ": '" + cell + "' is not a number");
}

// CSV with columns x and y, plus an optional subject column. One coefficient
// per subject in first-seen order, then their plain mean.
int run_pearson(const PearsonArgs& a) {
    std::istringstream in(read_text_file(a.data));
    std::string line;
    if (!std::getline(in, line)) {
        throw EmptyInput(a.data + " is empty");
    }
    const auto header = split_csv_line(line);
    std::optional<std::size_t> xi, yi, si;
    for (std::size_t i = 0; i < header.size(); ++i) {
        const auto h = to_lower(header[i]);
        if (h == "x") xi = i;
        if (h == "y") yi = i;
        if (h == "subject") si = i;
    }
    if (!xi || !yi) {
        throw SchemaError(a.data + ": header needs x and y columns");
    }
    std::vector<std::string> order;
    std::map<std::string, std::pair<std::vector<double>, std::vector<double>>> groups;
    for (std::size_t n = 2; std::getline(in, line); ++n) {
        if (trim(line).empty()) {
            continue;
        }
        const auto cells = split_csv_line(line);
        if (cells.size() != header.size()) {
            throw SchemaError("line " + std::to_string(n) + " has " + std::to_string(cells.size()) + " cells");
        }
        const std::string subject = si ? cells[*si] : std::string("all");
        auto [it, fresh] = groups.try_emplace(subject);
        if (fresh) {
            order.push_back(subject);
        }
        it->second.first.push_back(parse_number(cells[*xi], n));
        it->second.second.push_back(parse_number(cells[*yi], n));
    }
    if (order.empty()) {
        throw EmptyInput(a.data + " has no data rows");
    }
    std::printf("subject,pearson\n");
    double sum = 0.0;
    for (const auto& s : order) {
        const auto& [x, y] = groups.at(s);
        const double r = pearson(x, y);
        sum += r;
        std::printf("%s,%.6f\n", s.c_str(), r);
    }
    if (order.size() > 1) {
        std::printf("average,%.6f\n", sum / static_cast<double>(order.size()));
    }
    return 0;
}

struct TrainMatcherArgs {
    EmbedOptions embed;
    std::string bank;
    std::string examples;
    std::string dataset;
    std::string scores;
    std::string out;
    std::string loss_trace;
    std::string optimizer = "preconditioned";
    int epochs = kDefaultMatcherEpochs;
    double lr = kDefaultMatcherLearningRate;
    std::uint64_t seed = 0;
};

int run_train_matcher(const TrainMatcherArgs& a) {
    const CharacterBank bank = load_bank(a.bank);
    auto embedder = make_embedder(a.embed);
    std::vector<MatchExample> examples;
    if (!a.examples.empty()) {
        examples = load_match_examples(a.examples);
    } else if (!a.dataset.empty() && !a.scores.empty()) {
        const auto conversations = load_dataset(a.dataset);
        const auto scores = load_scores(a.scores);
        examples = match_examples_from(conversations, scores);
    } else {
        throw SchemaError("train-matcher needs --examples, or both --dataset and --scores");
    }
    const auto optimizer =
        a.optimizer == "gd" ? MatcherOptimizer::GradientDescent : MatcherOptimizer::Preconditioned;
    const auto result = train_matcher(examples, bank, *embedder, a.epochs, a.lr, a.seed, optimizer);
    save_match_model(result.model, a.out);
    if (!a.loss_trace.empty()) {
        std::string csv = "epoch,loss\n";
        for (std::size_t i = 0; i < result.loss_trace.size(); ++i) {
            csv += std::to_string(i) + "," + format("%.10g", result.loss_trace[i]) + "\n";
        }
        write_text_file(a.loss_trace, csv);
    }
    spdlog::info("trained on {} examples: mse {:.6f} -> {:.6f}", examples.size(), result.loss_trace.front(),
                 result.best_loss);
    return 0;
}

struct MatchArgs {
    EmbedOptions embed;
    std::string bank;
    std::string model;
    std::string persona;
    std::string seeker;
    std::size_t k = 3;
    bool json = false;
    std::uint64_t seed = 0;
};

int run_match(const MatchArgs& a) {
    const CharacterBank bank = load_bank(a.bank);
    auto embedder = make_embedder(a.embed);
    if (a.persona.empty() == a.seeker.empty()) {
        throw SchemaError("pass exactly one of --persona or --seeker");
    }
    std::vector<MatchCandidate> results;
    if (!a.model.empty()) {
        const MatchModel model = load_match_model(a.model, embedder->fingerprint());
        results = a.seeker.empty() ? dispatch(model, std::string_view(a.persona), bank, *embedder, a.k)
                                   : dispatch(model, bank.at(a.seeker), bank, *embedder, a.k);
    } else {
        spdlog::warn("no --model given; ranking is a seeded shuffle");
        const std::string persona =
            a.seeker.empty() ? a.persona : render_persona_lines(bank.at(a.seeker).persona);
        results = fallback_dispatch(persona, FeatureIndex(bank, *embedder), a.k, a.seed);
    }
    if (a.json) {
        auto arr = ojson::array();
        for (std::size_t i = 0; i < results.size(); ++i) {
            const auto& p = bank.at(results[i].supporter_id);
            arr.push_back({{"rank", i + 1},
                           {"supporter_id", p.id},
                           {"score", results[i].score},
                           {"name", p.name()},
                           {"mbti", p.mbti.str()}});
        }
        std::cout << arr.dump(2) << "\n";
        return 0;
    }
    for (std::size_t i = 0; i < results.size(); ++i) {
        const auto& p = bank.at(results[i].supporter_id);
        std::printf("%zu\t%s\t%.4f\t%s\n", i + 1, p.id.c_str(), results[i].score, p.name().c_str());
    }
    return 0;
}

struct ProbeArgs {
    BackendOptions backend;
    std::string bank;
    std::string out;
    int turns = 10;
    std::size_t limit = 0;
    bool no_presets = false;
    int parallel = 1;
    std::uint64_t seed = 0;
};

int run_probe(const ProbeArgs& a) {
    const CharacterBank bank = load_bank(a.bank);
    auto backend = make_backend(a.backend);
    std::vector<CharacterProfile> profiles = bank.characters();
    if (a.limit > 0 && a.limit < profiles.size()) {
        profiles.resize(a.limit);
    }
    ProbeOptions opts;
    opts.with_presets = !a.no_presets;
    opts.parallelism = a.parallel;
    opts.params.seed = a.seed;
    write_output(a.out, expiration_curve_csv(probe_expiration(*backend, profiles, a.turns, opts)));
    return 0;
}

std::atomic<bool> g_stop{false};

extern "C" void on_stop_signal(int) { g_stop = true; }

struct ServeArgs {
    BackendOptions backend;
    EmbedOptions embed;
    std::string bank;
    std::string model;
    std::string data_dir = ServiceConfig{}.data_dir.string();
    std::string listen = "127.0.0.1:8080";
    std::uint64_t seed = 0;
};

int run_serve(const ServeArgs& a) {
    ServiceConfig config;
    config.bank_path = a.bank;
    if (!a.model.empty()) {
        config.model_path = a.model;
    }
    config.data_dir = a.data_dir;
    config.set_listen(a.listen);
    config.mock = a.backend.mock;
    config.mock_latency_ms = a.backend.mock_latency_ms;
    config.embedder = a.embed.kind;
    config.embed_dim = a.embed.dim;
    config.seed = a.seed;
    if (!config.mock) {
        make_backend(a.backend);  // fail fast on a missing remote configuration
    }
    auto service = ChatService::from_config(config);

    struct sigaction sa {};
    sa.sa_handler = on_stop_signal;
    sigemptyset(&sa.sa_mask);
    sigaction(SIGINT, &sa, nullptr);
    sigaction(SIGTERM, &sa, nullptr);

    if (!run_service(*service, config.host, config.port, &g_stop)) {
        if (g_stop) {
            return 0;
        }
        throw IoError("cannot listen on " + a.listen);
    }
    spdlog::info("shut down");
    return 0;
}

// ---------------------------------------------------------------- chat client

struct ChatArgs {
    std::string url = "http://127.0.0.1:8080";
    std::string persona;
    std::string supporter;
    std::string session;
};

class ApiClient {
public:
    explicit ApiClient(const std::string& url) : client_(url) {
        client_.set_read_timeout(std::chrono::seconds(300));
    }

    ojson call(const std::string& method, const std::string& path, const ojson& body = nullptr) {
        httplib::Result res = method == "GET" ? client_.Get(path)
                                              : client_.Post(path, body.is_null() ? "{}" : body.dump(),
                                                             "application/json");
        if (!res) {
            throw IoError("cannot reach the service: " + httplib::to_string(res.error()));
        }
        ojson j = ojson::parse(res->body, nullptr, false);
        if (res->status >= 400) {
            const std::string code = j.is_object() ? j.value("code", std::string("error")) : "error";
            const std::string message = j.is_object() ? j.value("message", res->body) : res->body;
            if (code == "backend_error") {
                throw BackendError(BackendErrorKind::Transport, message);
            }
            if (code == "closed_session") {
                throw ClosedSession(message);
            }
            if (code == "protocol_error") {
                throw ProtocolError(message);
            }
            throw SchemaError(code + ": " + message);
        }
        if (j.is_discarded()) {
            throw BackendError(BackendErrorKind::Transport, "service returned invalid JSON");
        }
        return j;
    }

private:
    httplib::Client client_;
};

int run_chat(const ChatArgs& a) {
    ApiClient api(a.url);
    std::string session_id = a.session;
    std::string supporter_name;
    if (session_id.empty()) {
        if (trim(a.persona).empty()) {
            throw SchemaError("chat needs --persona to start a session (or --session to resume one)");
        }
        std::string supporter = a.supporter;
        if (supporter.empty()) {
            const auto matched = api.call("POST", "/match", {{"seeker_persona", a.persona}, {"k", 1}});
            supporter = matched.at("results").at(0).at("supporter_id").get<std::string>();
        }
        const auto created =
            api.call("POST", "/sessions", {{"supporter_id", supporter}, {"seeker_persona", a.persona}});
        session_id = created.at("session_id").get<std::string>();
    }
    const auto session = api.call("GET", "/sessions/" + session_id);
    const auto sup = api.call("GET", "/characters/" + session.at("supporter_id").get<std::string>());
    supporter_name = sup.value("name", std::string("supporter"));
    std::printf("session %s with %s (%s). /rate EI PS AE to rate, /quit to leave.\n", session_id.c_str(),
                supporter_name.c_str(), sup.value("mbti", std::string("?")).c_str());
    for (const auto& t : session.at("turns")) {
        std::printf("%s: %s\n", t.at("speaker") == "seeker" ? "you" : supporter_name.c_str(),
                    t.at("text").get<std::string>().c_str());
    }
    std::fflush(stdout);

    bool closed = session.value("status", std::string("active")) == "closed";
    std::string line;
    while (!closed) {
        std::printf("> ");
        std::fflush(stdout);
        if (!std::getline(std::cin, line)) {
            break;
        }
        const std::string text = trim(line);
        if (text.empty()) {
            continue;
        }
        if (text == "/quit") {
            break;
        }
        try {
            if (text.starts_with("/rate")) {
                std::istringstream in(text.substr(5));
                int ei = 0, ps = 0, ae = 0;
                if (!(in >> ei >> ps >> ae)) {
                    std::printf("usage: /rate EI PS AE (integers 1-5)\n");
                    continue;
                }
                api.call("POST", "/sessions/" + session_id + "/rating", {{"ei", ei}, {"ps", ps}, {"ae", ae}});
                std::printf("rating saved\n");
                continue;
            }
            const auto turn = api.call("POST", "/sessions/" + session_id + "/messages", {{"text", text}});
            std::printf("%s: %s\n", supporter_name.c_str(), turn.at("text").get<std::string>().c_str());
            if (turn.contains("memory_aspect") && turn["memory_aspect"].is_string()) {
                std::printf("  [memory: %s]\n", turn["memory_aspect"].get<std::string>().c_str());
            }
        } catch (const Error& e) {
            if (e.category() == ErrorCategory::Io) {
                throw;
            }
            std::printf("! %s\n", e.what());
            closed = dynamic_cast<const ClosedSession*>(&e) != nullptr;
        }
    }
    if (!closed) {
        api.call("POST", "/sessions/" + session_id + "/close");
    }
    std::printf("session %s closed\n", session_id.c_str());
    return 0;
}

// ---------------------------------------------------------------- configuration

std::string env_name(const std::string& option) {
    if (option == "listen") {
        return "S2CONV_LISTEN_ADDR";
    }
    std::string name = "S2CONV_" + to_upper(option);
    for (auto& c : name) {
        if (c == '-') c = '_';
    }
    return name;
}

void attach_env_names(CLI::App& app) {
    for (CLI::Option* opt : app.get_options()) {
        const auto& names = opt->get_lnames();
        if (!names.empty() && names.front() != "help" && names.front() != "config" &&
            names.front() != "version") {
            opt->envname(env_name(names.front()));
        }
    }
    for (CLI::App* sub : app.get_subcommands({})) {
        attach_env_names(*sub);
    }
}

std::optional<std::string> config_path_from(int argc, char** argv) {
    for (int i = 1; i < argc; ++i) {
        const std::string_view arg = argv[i];
        if (arg == "--config" && i + 1 < argc) {
            return std::string(argv[i + 1]);
        }
        if (arg.starts_with("--config=")) {
            return std::string(arg.substr(9));
        }
    }
    if (const char* env = std::getenv("S2CONV_CONFIG"); env && *env) {
        return std::string(env);
    }
    return std::nullopt;
}

std::string config_value(const nlohmann::json& v, const std::string& key) {
    if (v.is_string()) return v.get<std::string>();
    if (v.is_boolean()) return v.get<bool>() ? "true" : "false";
    if (v.is_number()) return v.dump();
    throw CLI::ValidationError(key, "config values must be strings, numbers or booleans");
}

// Config values become option defaults, so flags and environment variables
// still take precedence over them.
void apply_config(CLI::App& app, const nlohmann::json& cfg, const std::string& scope) {
    if (!cfg.is_object()) {
        throw CLI::ValidationError("--config", scope + " must be a JSON object");
    }
    for (const auto& [raw_key, value] : cfg.items()) {
        std::string key = raw_key;
        for (auto& c : key) {
            if (c == '_') c = '-';
        }
        if (value.is_object()) {
            CLI::App* sub = app.get_subcommand_no_throw(key);
            if (sub == nullptr) {
                throw CLI::ValidationError("--config", "unknown section '" + raw_key + "'");
            }
            apply_config(*sub, value, key);
            continue;
        }
        CLI::Option* opt = app.get_option_no_throw("--" + key);
        if (opt == nullptr || key == "config" || key == "help") {
            throw CLI::ValidationError("--config", "unknown key '" + raw_key + "' in " + scope);
        }
        opt->default_val(config_value(value, raw_key))->force_callback();
    }
}

ojson effective_config(const CLI::App& app) {
    ojson j = ojson::object();
    for (const CLI::Option* opt : app.get_options()) {
        const auto& names = opt->get_lnames();
        if (names.empty() || names.front() == "help") {
            continue;
        }
        const auto& results = opt->results();
        j[names.front()] = results.empty() ? opt->get_default_str() : CLI::detail::join(results, ",");
    }
    return j;
}

}  // namespace

int main(int argc, char** argv) {
    spdlog::set_default_logger(spdlog::stderr_color_mt("s2conv"));
    spdlog::set_pattern("[%l] %v");
    spdlog::set_level(spdlog::level::warn);

    CLI::App app{"Persona-grounded support conversation pipeline and chat service"};
    app.option_defaults()->always_capture_default();
    app.require_subcommand(1);
    app.fallthrough();
    app.set_version_flag("--version", std::string(kVersion));
    std::string config_file;
    bool verbose = false;
    app.add_option("--config", config_file, "JSON config file; top-level keys are options, objects are "
                                            "per-subcommand sections (env S2CONV_CONFIG)");
    app.add_flag("-v,--verbose", verbose, "Log progress and print the effective configuration");

    std::vector<std::pair<CLI::App*, std::function<int()>>> actions;
    const auto stage = [&](const char* name, const char* help, auto& args, auto run) {
        CLI::App* sub = app.add_subcommand(name, help);
        actions.emplace_back(sub, [&args, run] { return run(args); });
        return sub;
    };

    GenBankArgs gen_bank;
    {
        auto* s = stage("gen-bank", "Generate the character bank", gen_bank, run_gen_bank);
        add_backend_options(*s, gen_bank.backend);
        s->add_option("--per-type", gen_bank.per_type, "Characters per MBTI type")->check(CLI::PositiveNumber);
        s->add_option("--batch-size", gen_bank.batch_size, "Characters requested per call")
            ->check(CLI::PositiveNumber);
        s->add_option("--out", gen_bank.out, "Bank JSON to write")->required();
        s->add_option("--seed", gen_bank.seed, "Random seed");
    }

    GenPresetsArgs gen_presets;
    {
        auto* s = stage("gen-presets", "Add behavior presets to every character", gen_presets, run_gen_presets);
        add_backend_options(*s, gen_presets.backend);
        s->add_option("--bank", gen_presets.bank, "Bank JSON to read")->required();
        s->add_option("--out", gen_presets.out, "Bank JSON to write (default: overwrite --bank)");
        s->add_option("-n,--count", gen_presets.count, "Presets per character")->check(CLI::PositiveNumber);
        s->add_option("--parallel", gen_presets.parallel, "Worker threads")->check(CLI::PositiveNumber);
        s->add_option("--seed", gen_presets.seed, "Random seed");
    }

    SynthArgs synth;
    {
        auto* s = stage("synth", "Simulate seeker/supporter conversations", synth, run_synth);
        add_backend_options(*s, synth.backend);
        add_embed_options(*s, synth.embed);
        s->add_option("--bank", synth.bank, "Bank JSON")->required();
        s->add_option("--out", synth.out, "Dataset JSONL to write")->required();
        s->add_option("--supporters", synth.supporters, "Supporters sampled per seeker")
            ->check(CLI::PositiveNumber);
        s->add_option("--max-exchanges", synth.max_exchanges, "Exchanges per conversation")
            ->check(CLI::PositiveNumber);
        s->add_option("--skip-log", synth.skip_log, "JSONL of pairs that failed");
        s->add_option("--reranker", synth.reranker, "Memory reranker weights JSON");
        s->add_flag("--static-seeker-memory", synth.static_seeker_memory,
                    "Ground only the seeker's opener in its memory");
        s->add_option("--parallel", synth.parallel, "Worker threads")->check(CLI::PositiveNumber);
        s->add_option("--seed", synth.seed, "Random seed");
    }

    JudgeArgs judge;
    {
        auto* s = stage("judge", "Score conversations on EI, PS and AE", judge, run_judge);
        add_backend_options(*s, judge.backend);
        s->add_option("--dataset", judge.dataset, "Dataset JSONL")->required();
        s->add_option("--bank", judge.bank, "Bank JSON")->required();
        s->add_option("--out", judge.out, "Scores JSONL to write")->required();
        s->add_option("--parallel", judge.parallel, "Worker threads")->check(CLI::PositiveNumber);
        s->add_option("--seed", judge.seed, "Random seed");
    }

    StatsArgs stats;
    {
        auto* s = stage("stats", "Average, min, max and std per criterion", stats, run_stats);
        s->add_option("--scores", stats.scores, "Scores JSONL")->required();
        s->add_flag("--json", stats.json, "Print JSON instead of a table");
    }

    HeatmapArgs heatmap;
    {
        auto* s = stage("heatmap", "Seeker x supporter MBTI mean-score matrix as CSV", heatmap, run_heatmap);
        s->add_option("--scores", heatmap.scores, "Scores JSONL")->required();
        s->add_option("--criterion", heatmap.criterion, "ei, ps or ae")
            ->check(CLI::IsMember({"ei", "ps", "ae"}, CLI::ignore_case));
        s->add_option("--out", heatmap.out, "CSV to write (default stdout)");
    }

    PearsonArgs pearson_args;
    {
        auto* s = stage("pearson", "Pearson correlation per subject from a CSV of x,y pairs", pearson_args,
                        run_pearson);
        s->add_option("--data", pearson_args.data, "CSV with columns x,y and optionally subject")->required();
    }

    TrainMatcherArgs train;
    {
        auto* s = stage("train-matcher", "Fit the bilinear compatibility model", train, run_train_matcher);
        add_embed_options(*s, train.embed);
        s->add_option("--bank", train.bank, "Bank JSON")->required();
        s->add_option("--examples", train.examples, "Examples JSONL {seeker_id, supporter_id, compatibility}");
        s->add_option("--dataset", train.dataset, "Dataset JSONL (with --scores)");
        s->add_option("--scores", train.scores, "Scores JSONL (with --dataset)");
        s->add_option("--out", train.out, "Model JSON to write")->required();
        s->add_option("--epochs", train.epochs, "Full-batch epochs")->check(CLI::NonNegativeNumber);
        s->add_option("--lr", train.lr, "Learning rate")->check(CLI::NonNegativeNumber);
        s->add_option("--optimizer", train.optimizer, "preconditioned or gd")
            ->check(CLI::IsMember({"preconditioned", "gd"}));
        s->add_option("--loss-trace", train.loss_trace, "CSV of the per-epoch loss");
        s->add_option("--seed", train.seed, "Random seed");
    }

    MatchArgs match;
    {
        auto* s = stage("match", "Rank supporters for a seeker persona", match, run_match);
        add_embed_options(*s, match.embed);
        s->add_option("--bank", match.bank, "Bank JSON")->required();
        s->add_option("--model", match.model, "Model JSON (omit for the random fallback)");
        s->add_option("--persona", match.persona, "Seeker persona text");
        s->add_option("--seeker", match.seeker, "Seeker id from the bank");
        s->add_option("-k", match.k, "Number of supporters")->check(CLI::PositiveNumber);
        s->add_flag("--json", match.json, "Print JSON");
        s->add_option("--seed", match.seed, "Seed for the fallback ranking");
    }

    ProbeArgs probe;
    {
        auto* s = stage("probe-expiration", "Ask every character its name and chart identity loss", probe,
                        run_probe);
        add_backend_options(*s, probe.backend);
        s->add_option("--mock-expiration-rate", probe.backend.mock_expiration_rate,
                      "Per-turn expiration chance of the mock backend")
            ->check(CLI::Range(0.0, 1.0));
        s->add_option("--bank", probe.bank, "Bank JSON")->required();
        s->add_option("--turns", probe.turns, "Probe turns")->check(CLI::PositiveNumber);
        s->add_option("--limit", probe.limit, "Probe only the first N characters (0 = all)");
        s->add_flag("--no-presets", probe.no_presets, "Leave behavior presets out of the prompts");
        s->add_option("--out", probe.out, "CSV to write (default stdout)");
        s->add_option("--parallel", probe.parallel, "Worker threads")->check(CLI::PositiveNumber);
        s->add_option("--seed", probe.seed, "Random seed");
    }

    ServeArgs serve;
    {
        auto* s = stage("serve", "Run the HTTP chat service", serve, run_serve);
        add_backend_options(*s, serve.backend);
        s->add_option("--mock-latency-ms", serve.backend.mock_latency_ms, "Delay added to every mock reply")
            ->check(CLI::NonNegativeNumber);
        add_embed_options(*s, serve.embed);
        s->add_option("--bank", serve.bank, "Bank JSON")->required();
        s->add_option("--model", serve.model, "Model JSON (omit for the random fallback)");
        s->add_option("--data-dir", serve.data_dir, "Session log directory");
        s->add_option("--listen", serve.listen, "host:port, port 0 picks a free port");
        s->add_option("--seed", serve.seed, "Random seed");
    }

    ChatArgs chat;
    {
        auto* s = stage("chat", "Chat with a supporter through a running service", chat, run_chat);
        s->add_option("--url", chat.url, "Service base URL");
        s->add_option("--persona", chat.persona, "Your persona, used for matching and the session");
        s->add_option("--supporter", chat.supporter, "Supporter id (default: best match)");
        s->add_option("--session", chat.session, "Resume an existing session");
    }

    attach_env_names(app);

    try {
        if (const auto path = config_path_from(argc, argv)) {
            nlohmann::json cfg;
            try {
                cfg = nlohmann::json::parse(read_text_file(*path));
            } catch (const nlohmann::json::parse_error& e) {
                throw CLI::ValidationError("--config", *path + ": " + e.what());
            }
            apply_config(app, cfg, "config");
        }
        app.parse(argc, argv);
    } catch (const CLI::ParseError& e) {
        const int rc = app.exit(e);
        return rc == 0 ? 0 : kExitUsage;
    } catch (const Error& e) {
        std::fprintf(stderr, "error: %s\n", e.what());
        return kExitIo;
    }

    if (verbose) {
        spdlog::set_level(spdlog::level::info);
    }
    for (auto& [sub, run] : actions) {
        if (!sub->parsed()) {
            continue;
        }
        if (verbose) {
            ojson eff;
            eff["subcommand"] = sub->get_name();
            eff["global"] = effective_config(app);
            eff["options"] = effective_config(*sub);
            std::fprintf(stderr, "effective config: %s\n", eff.dump().c_str());
        }
        try {
            return run();
        } catch (const Error& e) {
            std::fprintf(stderr, "error [%s]: %s\n", e.code().c_str(), e.what());
            return exit_code(e);
        } catch (const nlohmann::json::exception& e) {
            std::fprintf(stderr, "error [schema_error]: %s\n", e.what());
            return kExitValidation;
        } catch (const std::filesystem::filesystem_error& e) {
            std::fprintf(stderr, "error [io_error]: %s\n", e.what());
            return kExitIo;
        } catch (const std::exception& e) {
            std::fprintf(stderr, "error [internal]: %s\n", e.what());
            return 1;
        }
    }
    return kExitUsage;
}
