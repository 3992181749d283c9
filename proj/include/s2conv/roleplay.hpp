#pragma once

#include <span>
#include <string>
#include <string_view>
#include <vector>

#include "s2conv/character.hpp"
#include "s2conv/llm.hpp"
#include "s2conv/turn.hpp"

namespace s2conv {

inline constexpr std::string_view kDefaultClosingMarker = "[END]";

struct RolePrompt {
    std::string character_id;
    Speaker role = Speaker::Supporter;
    std::string system_text;
};

struct RolePromptOptions {
    bool include_presets = true;
    std::string closing_marker{kDefaultClosingMarker};
};

// Identity framing, persona attributes, the role directive, then any behavior
// presets. Memory is never inlined. Throws InvalidProfile.
RolePrompt build_role_prompt(const CharacterProfile& profile, Speaker role,
                             const RolePromptOptions& options = {});

inline constexpr int kDefaultPresetCount = 5;

// Asks the backend to imagine `n` trigger/reply pairs for the character and
// stores them on the profile. Throws MalformedOutput when the backend cannot
// produce exactly n complete pairs within the retry budget.
std::vector<BehaviorPreset> generate_behavior_presets(ChatBackend& backend, CharacterProfile& profile,
                                                      int n = kDefaultPresetCount,
                                                      std::uint64_t seed = 0, int repair_retries = 2);

/**
 * True when a response shows the agent slipping back into its assistant
 * identity: "AI" as a case-sensitive whole word, or "chatgpt" / "assistant"
 * as case-insensitive whole words.
 */
bool detect_expiration(std::string_view response);

struct ProbeOptions {
    bool with_presets = true;
    int parallelism = 1;
    GenerationParams params{};
};

// Repeatedly asks each role-played profile for its name. Entry t of the
// result is the fraction of profiles that have expired at or before turn t+1.
std::vector<double> probe_expiration(ChatBackend& backend, std::span<const CharacterProfile> profiles,
                                     int turns, const ProbeOptions& options = {});

// CSV with header "turn,ratio", turns numbered from 1.
std::string expiration_curve_csv(std::span<const double> curve);

}  // namespace s2conv
