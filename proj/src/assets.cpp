#include "s2conv/assets.hpp"

#include <cstdlib>
#include <mutex>
#include <optional>
#include <set>
#include <unordered_map>

#include "s2conv/error.hpp"
#include "s2conv/text.hpp"

namespace s2conv {

// Defined in the generated assets_embedded.cpp.
namespace detail {
struct EmbeddedAsset {
    const char* name;
    const char* content;
};
extern const EmbeddedAsset kEmbeddedAssets[];
extern const std::size_t kEmbeddedAssetCount;
}  // namespace detail

namespace {

std::mutex g_override_mutex;
std::optional<std::filesystem::path> g_override_dir;

std::optional<std::filesystem::path> override_dir() {
    std::lock_guard lock(g_override_mutex);
    if (g_override_dir) {
        return g_override_dir;
    }
    if (const char* env = std::getenv("S2CONV_ASSET_DIR"); env && *env) {
        return std::filesystem::path(env);
    }
    return std::nullopt;
}

std::string strip_trailing_newline(std::string text) {
    if (!text.empty() && text.back() == '\n') {
        text.pop_back();
    }
    return text;
}

}  // namespace

void set_asset_override_dir(std::filesystem::path dir) {
    std::lock_guard lock(g_override_mutex);
    g_override_dir = std::move(dir);
}

std::vector<std::string> embedded_asset_names() {
    std::vector<std::string> names;
    for (std::size_t i = 0; i < detail::kEmbeddedAssetCount; ++i) {
        names.emplace_back(detail::kEmbeddedAssets[i].name);
    }
    return names;
}

std::string load_asset(std::string_view relative_path) {
    if (const auto dir = override_dir()) {
        const auto candidate = *dir / relative_path;
        if (std::filesystem::exists(candidate)) {
            return strip_trailing_newline(read_text_file(candidate));
        }
    }
    for (std::size_t i = 0; i < detail::kEmbeddedAssetCount; ++i) {
        if (relative_path == detail::kEmbeddedAssets[i].name) {
            return strip_trailing_newline(detail::kEmbeddedAssets[i].content);
        }
    }
    throw IoError("unknown asset '" + std::string(relative_path) + "'");
}

std::string load_template(std::string_view name) {
    return load_asset("templates/" + std::string(name) + ".txt");
}

std::string personality_description(MbtiType type) {
    return load_asset("personalities/" + type.str() + ".txt");
}

std::string render_template(std::string_view text, const TemplateVars& vars) {
    std::string out;
    out.reserve(text.size());
    std::set<std::string, std::less<>> used;
    std::size_t pos = 0;
    while (true) {
        const auto open = text.find("{{", pos);
        if (open == std::string_view::npos) {
            out.append(text.substr(pos));
            break;
        }
        const auto close = text.find("}}", open + 2);
        if (close == std::string_view::npos) {
            throw TemplateError("unterminated placeholder in template");
        }
        out.append(text.substr(pos, open - pos));
        const auto key = text.substr(open + 2, close - open - 2);
        const auto it = vars.find(key);
        if (it == vars.end()) {
            throw TemplateError("template placeholder {{" + std::string(key) + "}} has no value");
        }
        out.append(it->second);
        used.emplace(key);
        pos = close + 2;
    }
    for (const auto& [key, value] : vars) {
        if (!used.contains(key)) {
            throw TemplateError("template does not use variable '" + key + "'");
        }
    }
    return out;
}

}  // namespace s2conv
