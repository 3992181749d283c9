#include "s2conv/session_store.hpp"

#include <fcntl.h>
#include <unistd.h>

#include <algorithm>
#include <cerrno>
#include <cstring>
#include <fstream>

#include <nlohmann/json.hpp>
#include <spdlog/spdlog.h>

#include "s2conv/error.hpp"
#include "s2conv/text.hpp"

namespace s2conv {

namespace {

using ojson = nlohmann::ordered_json;

constexpr std::string_view kIdPrefix = "sess-";

std::string format_session_id(std::size_t n) {
    char buf[32];
    std::snprintf(buf, sizeof buf, "%s%06zu", kIdPrefix.data(), n);
    return buf;
}

std::size_t session_number(std::string_view id) {
    if (!id.starts_with(kIdPrefix)) {
        return 0;
    }
    std::size_t n = 0;
    for (const char c : id.substr(kIdPrefix.size())) {
        if (c < '0' || c > '9') {
            return 0;
        }
        n = n * 10 + static_cast<std::size_t>(c - '0');
    }
    return n;
}

void fsync_path(const std::filesystem::path& path, int flags) {
    const int fd = ::open(path.c_str(), flags);
    if (fd < 0) {
        throw IoError("cannot open " + path.string() + ": " + std::strerror(errno));
    }
    const int rc = ::fsync(fd);
    ::close(fd);
    if (rc != 0) {
        throw IoError("fsync failed for " + path.string() + ": " + std::strerror(errno));
    }
}

std::string open_event(const Session& s) {
    ojson j;
    j["event"] = "open";
    j["session_id"] = s.id();
    j["supporter_id"] = s.supporter_id;
    j["seeker_persona"] = s.seeker_persona;
    j["at"] = s.created_at;
    return j.dump();
}

std::string turn_event(const ChatTurn& t, const std::string& at) {
    ojson j;
    j["event"] = "turn";
    j["turn_index"] = t.turn_index;
    j["speaker"] = to_string(t.speaker);
    j["text"] = t.text;
    j["memory_aspect"] = t.memory_aspect ? ojson(*t.memory_aspect) : ojson(nullptr);
    j["at"] = at;
    return j.dump();
}

std::string rating_event(const EvalScores& r, const std::string& at) {
    ojson j;
    j["event"] = "rating";
    j["ei"] = r.ei;
    j["ps"] = r.ps;
    j["ae"] = r.ae;
    j["at"] = at;
    return j.dump();
}

std::string close_event(const std::string& at) {
    ojson j;
    j["event"] = "close";
    j["at"] = at;
    return j.dump();
}

void apply_event(Session& s, const nlohmann::json& j) {
    const auto kind = j.at("event").get<std::string>();
    const auto at = j.value("at", std::string{});
    if (kind == "turn") {
        ChatTurn t;
        t.turn_index = j.at("turn_index").get<std::size_t>();
        t.speaker = parse_speaker(j.at("speaker").get<std::string>());
        t.text = j.at("text").get<std::string>();
        if (j.contains("memory_aspect") && j["memory_aspect"].is_string()) {
            t.memory_aspect = j["memory_aspect"].get<std::string>();
        }
        if (t.turn_index != s.conversation.turns.size()) {
            throw SchemaError("turn index " + std::to_string(t.turn_index) + " is out of sequence");
        }
        s.conversation.turns.push_back(std::move(t));
    } else if (kind == "rating") {
        s.rating = EvalScores{j.at("ei").get<int>(), j.at("ps").get<int>(), j.at("ae").get<int>()};
    } else if (kind == "close") {
        s.conversation.status = ConversationStatus::Closed;
    } else {
        throw SchemaError("unexpected event '" + kind + "'");
    }
    if (!at.empty()) {
        s.updated_at = at;
    }
}

}  // namespace

SessionStore::SessionStore(std::filesystem::path data_dir) : data_dir_(std::move(data_dir)) {
    std::error_code ec;
    std::filesystem::create_directories(data_dir_ / "sessions", ec);
    if (ec) {
        throw IoError("cannot create " + (data_dir_ / "sessions").string() + ": " + ec.message());
    }
    replay();
}

std::filesystem::path SessionStore::log_path(std::string_view id) const {
    return data_dir_ / "sessions" / (std::string(id) + ".jsonl");
}

void SessionStore::append_events(std::string_view id, const std::vector<std::string>& lines) const {
    std::string payload;
    for (const auto& l : lines) {
        payload += l;
        payload += '\n';
    }
    const auto path = log_path(id);
    const bool is_new = !std::filesystem::exists(path);
    const int fd = ::open(path.c_str(), O_WRONLY | O_CREAT | O_APPEND | O_CLOEXEC, 0644);
    if (fd < 0) {
        throw IoError("cannot open " + path.string() + ": " + std::strerror(errno));
    }
    std::size_t written = 0;
    while (written < payload.size()) {
        const ssize_t n = ::write(fd, payload.data() + written, payload.size() - written);
        if (n < 0) {
            if (errno == EINTR) {
                continue;
            }
            const int err = errno;
            ::close(fd);
            throw IoError("write to " + path.string() + " failed: " + std::strerror(err));
        }
        written += static_cast<std::size_t>(n);
    }
    const int rc = ::fsync(fd);
    ::close(fd);
    if (rc != 0) {
        throw IoError("fsync failed for " + path.string());
    }
    if (is_new) {
        fsync_path(path.parent_path(), O_RDONLY | O_DIRECTORY);
    }
}

void SessionStore::replay() {
    std::vector<std::filesystem::path> files;
    for (const auto& e : std::filesystem::directory_iterator(data_dir_ / "sessions")) {
        if (e.is_regular_file() && e.path().extension() == ".jsonl") {
            files.push_back(e.path());
        }
    }
    std::sort(files.begin(), files.end());
    for (const auto& path : files) {
        const std::string content = read_text_file(path);
        std::vector<std::string> lines;
        std::vector<std::size_t> offsets;  // byte offset of each kept line
        for (std::size_t pos = 0; pos < content.size();) {
            const auto end = std::min(content.find('\n', pos), content.size());
            std::string line = content.substr(pos, end - pos);
            if (!trim(line).empty()) {
                lines.push_back(std::move(line));
                offsets.push_back(pos);
            }
            pos = end + 1;
        }
        auto entry = std::make_unique<Entry>();
        bool opened = false;
        for (std::size_t i = 0; i < lines.size(); ++i) {
            nlohmann::json j;
            try {
                j = nlohmann::json::parse(lines[i]);
            } catch (const nlohmann::json::parse_error&) {
                if (i + 1 == lines.size()) {
                    // A write cut short by a crash is never acknowledged. Cut
                    // it off so later appends start on a fresh line.
                    spdlog::warn("discarding torn final event in {}", path.string());
                    std::filesystem::resize_file(path, offsets[i]);
                    break;
                }
                throw SchemaError("corrupt event on line " + std::to_string(i + 1) + " of " + path.string());
            }
            try {
                if (!opened) {
                    if (j.at("event").get<std::string>() != "open") {
                        throw SchemaError("log does not start with an open event");
                    }
                    auto& s = entry->session;
                    s.conversation.id = j.at("session_id").get<std::string>();
                    s.conversation.seeker_id = "human";
                    s.supporter_id = s.conversation.supporter_id = j.at("supporter_id").get<std::string>();
                    s.seeker_persona = j.at("seeker_persona").get<std::string>();
                    s.created_at = s.updated_at = j.value("at", std::string{});
                    opened = true;
                } else {
                    apply_event(entry->session, j);
                }
            } catch (const nlohmann::json::exception& e) {
                throw SchemaError(path.string() + ":" + std::to_string(i + 1) + ": " + e.what());
            }
        }
        if (!opened) {
            spdlog::warn("skipping empty session log {}", path.string());
            continue;
        }
        const std::string id = entry->session.id();
        next_id_ = std::max(next_id_, session_number(id) + 1);
        sessions_.emplace(id, std::move(entry));
    }
    if (!sessions_.empty()) {
        spdlog::info("restored {} sessions from {}", sessions_.size(), data_dir_.string());
    }
}

SessionStore::Entry& SessionStore::entry(std::string_view id) const {
    std::shared_lock lock(index_mutex_);
    const auto it = sessions_.find(id);
    if (it == sessions_.end()) {
        throw NotFound("no session with id '" + std::string(id) + "'");
    }
    return *it->second;
}

Session SessionStore::create(const CharacterBank& bank, std::string_view supporter_id,
                             std::string seeker_persona) {
    std::unique_lock lock(index_mutex_);
    const std::string id = format_session_id(next_id_);
    auto entry = std::make_unique<Entry>();
    entry->session = open_session(bank, id, supporter_id, std::move(seeker_persona));
    append_events(id, {open_event(entry->session)});
    ++next_id_;
    Session copy = entry->session;
    sessions_.emplace(id, std::move(entry));
    return copy;
}

Session SessionStore::get(std::string_view id) const {
    Entry& e = entry(id);
    std::lock_guard lock(e.snapshot);
    return e.session;
}

std::vector<std::string> SessionStore::ids() const {
    std::shared_lock lock(index_mutex_);
    std::vector<std::string> out;
    for (const auto& [id, _] : sessions_) {
        out.push_back(id);
    }
    return out;
}

std::size_t SessionStore::size() const {
    std::shared_lock lock(index_mutex_);
    return sessions_.size();
}

template <typename Mutate>
auto SessionStore::mutate(std::string_view id, Mutate&& mutate_fn) {
    Entry& e = entry(id);
    std::unique_lock busy(e.mutation, std::try_to_lock);
    if (!busy.owns_lock()) {
        throw ProtocolError("session '" + std::string(id) + "' is busy with another request");
    }
    Session working = get(id);
    std::vector<std::string> events;
    auto result = mutate_fn(working, events);
    append_events(id, events);
    std::lock_guard publish(e.snapshot);
    e.session = std::move(working);
    return result;
}

ChatTurn SessionStore::exchange(std::string_view id, std::string text, const Responder& respond) {
    return mutate(id, [&](Session& s, std::vector<std::string>& events) {
        const ChatTurn seeker = append_seeker_message(s, std::move(text));
        ChatTurn reply = respond(s);
        if (s.conversation.turns.size() != seeker.turn_index + 2 ||
            s.conversation.turns.back().speaker != Speaker::Supporter) {
            throw ProtocolError("responder did not append exactly one supporter turn");
        }
        events.push_back(turn_event(seeker, s.updated_at));
        events.push_back(turn_event(reply, s.updated_at));
        return reply;
    });
}

void SessionStore::rate(std::string_view id, const EvalScores& scores) {
    if (!scores.valid()) {
        throw SchemaError("ratings must be integers between 1 and 5");
    }
    mutate(id, [&](Session& s, std::vector<std::string>& events) {
        s.rating = scores;
        s.updated_at = utc_timestamp();
        events.push_back(rating_event(scores, s.updated_at));
        return 0;
    });
}

void SessionStore::close(std::string_view id) {
    mutate(id, [&](Session& s, std::vector<std::string>& events) {
        close_session(s);
        events.push_back(close_event(s.updated_at));
        return 0;
    });
}

}  // namespace s2conv
