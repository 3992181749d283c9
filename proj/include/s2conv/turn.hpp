#pragma once

#include <cstddef>
#include <optional>
#include <string>
#include <string_view>

namespace s2conv {

enum class Speaker { Seeker, Supporter };

std::string_view to_string(Speaker speaker);
Speaker parse_speaker(std::string_view text);

// One utterance; supporter turns produced by the engine carry the memory
// aspect that conditioned them.
struct ChatTurn {
    Speaker speaker = Speaker::Seeker;
    std::string text;
    std::optional<std::string> memory_aspect;
    std::size_t turn_index = 0;

    friend bool operator==(const ChatTurn&, const ChatTurn&) = default;
};

}  // namespace s2conv
