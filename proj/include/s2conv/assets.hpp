#pragma once

#include <filesystem>
#include <map>
#include <string>
#include <string_view>
#include <vector>

#include "s2conv/mbti.hpp"

namespace s2conv {

/**
 * Text assets (prompt templates and personality descriptions).
 *
 * The copies under assets/ are compiled into the library. Setting
 * S2CONV_ASSET_DIR, or calling set_asset_override_dir(), makes files found in
 * that directory take precedence, so prompts can be edited without a rebuild.
 * A single trailing newline is stripped from every asset.
 */
std::string load_asset(std::string_view relative_path);

std::vector<std::string> embedded_asset_names();

void set_asset_override_dir(std::filesystem::path dir);

// "templates/<name>.txt".
std::string load_template(std::string_view name);

std::string personality_description(MbtiType type);

using TemplateVars = std::map<std::string, std::string, std::less<>>;

// Substitutes {{placeholder}} markers. Unknown placeholders and unused
// variables are both errors, which keeps templates and callers in sync.
std::string render_template(std::string_view text, const TemplateVars& vars);

}  // namespace s2conv
