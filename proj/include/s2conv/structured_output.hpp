#pragma once

#include <string>
#include <string_view>
#include <vector>

#include <nlohmann/json.hpp>

#include "s2conv/assets.hpp"
#include "s2conv/error.hpp"
#include "s2conv/llm.hpp"
#include "s2conv/text.hpp"

namespace s2conv {

// Finds the outermost JSON array in free-form model output (tolerating code
// fences and chatter around it). Throws MalformedOutput.
nlohmann::ordered_json extract_json_array(std::string_view text);

/**
 * Runs one completion and hands the reply to `parse`. When `parse` throws
 * MalformedOutput the reply and a repair request are appended to the
 * conversation and the backend is asked again, up to `repair_retries` extra
 * times. The final failure is rethrown as MalformedOutput naming the number
 * of attempts.
 */
template <typename Parse>
auto complete_with_repair(ChatBackend& backend, std::vector<ChatMessage> messages,
                          GenerationParams params, int repair_retries, Parse&& parse) {
    const int attempts = 1 + std::max(0, repair_retries);
    const auto base_seed = params.seed;
    for (int attempt = 1;; ++attempt) {
        const std::string reply = backend.complete(messages, params);
        try {
            return parse(reply);
        } catch (const MalformedOutput& e) {
            if (attempt >= attempts) {
                throw MalformedOutput(std::string(e.what()) + " (after " + std::to_string(attempts) +
                                      " attempts)");
            }
            messages.push_back({Role::Assistant, reply});
            messages.push_back(
                {Role::User, render_template(load_template("repair"), {{"reason", e.what()}})});
            if (base_seed) {
                params.seed = mix_seed(*base_seed, static_cast<std::uint64_t>(attempt));
            }
        }
    }
}

}  // namespace s2conv
