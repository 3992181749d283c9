#include "s2conv/structured_output.hpp"

namespace s2conv {

nlohmann::ordered_json extract_json_array(std::string_view text) {
    const auto open = text.find('[');
    const auto close = text.rfind(']');
    if (open == std::string_view::npos || close == std::string_view::npos || close < open) {
        throw MalformedOutput("reply contains no JSON array");
    }
    try {
        auto j = nlohmann::ordered_json::parse(text.substr(open, close - open + 1));
        if (!j.is_array()) {
            throw MalformedOutput("reply is not a JSON array");
        }
        return j;
    } catch (const nlohmann::json::exception& e) {
        throw MalformedOutput(std::string("reply is not valid JSON: ") + e.what());
    }
}

}  // namespace s2conv
