#include "s2conv/roleplay.hpp"

#include <algorithm>

#include "s2conv/assets.hpp"
#include "s2conv/error.hpp"
#include "s2conv/parallel.hpp"
#include "s2conv/structured_output.hpp"
#include "s2conv/text.hpp"

namespace s2conv {

std::string_view to_string(Speaker speaker) {
    return speaker == Speaker::Seeker ? "seeker" : "supporter";
}

Speaker parse_speaker(std::string_view text) {
    if (text == "seeker") return Speaker::Seeker;
    if (text == "supporter") return Speaker::Supporter;
    throw SchemaError("unknown speaker '" + std::string(text) + "'");
}

RolePrompt build_role_prompt(const CharacterProfile& profile, Speaker role,
                             const RolePromptOptions& options) {
    if (const auto v = validate_profile(profile); !v.empty()) {
        throw InvalidProfile("cannot build a role prompt for '" + profile.id + "': " + describe(v));
    }
    const std::string directive =
        role == Speaker::Seeker
            ? render_template(load_template("role_directive_seeker"),
                              {{"closing_marker", options.closing_marker}})
            : load_template("role_directive_supporter");

    std::string text = render_template(load_template("role_prompt"),
                                       {{"name", profile.name()},
                                        {"persona_lines", render_persona_lines(profile.persona)},
                                        {"role_directive", directive}});

    if (options.include_presets && !profile.behavior_presets.empty()) {
        text += "\n\n";
        text += load_template("presets_header");
        const std::string clause = load_template("preset_clause");
        for (const auto& p : profile.behavior_presets) {
            text += '\n';
            text += render_template(clause, {{"trigger", p.trigger}, {"reply", p.reply}});
        }
    }
    return {profile.id, role, std::move(text)};
}

namespace {

std::vector<BehaviorPreset> parse_presets(const std::string& reply, int n) {
    const auto arr = extract_json_array(reply);
    if (static_cast<int>(arr.size()) != n) {
        throw MalformedOutput("expected " + std::to_string(n) + " behavior presets, got " +
                              std::to_string(arr.size()));
    }
    std::vector<BehaviorPreset> out;
    for (std::size_t i = 0; i < arr.size(); ++i) {
        const auto& item = arr[i];
        const auto text_of = [&](const char* key) -> std::string {
            if (!item.is_object() || !item.contains(key) || !item[key].is_string()) {
                return {};
            }
            return trim(item[key].get<std::string>());
        };
        BehaviorPreset p{text_of("trigger"), text_of("reply")};
        if (p.trigger.empty()) {
            throw MalformedOutput("behavior preset pair " + std::to_string(i) + " has an empty trigger");
        }
        if (p.reply.empty()) {
            throw MalformedOutput("behavior preset pair " + std::to_string(i) + " has an empty reply");
        }
        out.push_back(std::move(p));
    }
    return out;
}

}  // namespace

std::vector<BehaviorPreset> generate_behavior_presets(ChatBackend& backend, CharacterProfile& profile,
                                                      int n, std::uint64_t seed, int repair_retries) {
    if (n < 1) {
        throw SchemaError("preset count must be at least 1");
    }
    const std::string prompt = render_template(load_template("behavior_presets"),
                                               {{"persona_lines", render_persona_lines(profile.persona)},
                                                {"memory_lines", render_persona_lines(profile.memory)},
                                                {"count", std::to_string(n)},
                                                {"name", profile.name()}});
    GenerationParams params;
    params.temperature = 0.9;
    params.max_tokens = 120 * n + 200;
    params.seed = mix_seed(seed, fnv1a(profile.id));
    auto presets = complete_with_repair(backend, {{Role::User, prompt}}, params, repair_retries,
                                        [n](const std::string& reply) { return parse_presets(reply, n); });
    profile.behavior_presets = presets;
    return presets;
}

bool detect_expiration(std::string_view response) {
    for (const auto& token : word_tokens(response)) {
        if (token == "AI") {
            return true;
        }
        const std::string lowered = to_lower(token);
        if (lowered == "chatgpt" || lowered == "assistant") {
            return true;
        }
    }
    return false;
}

std::vector<double> probe_expiration(ChatBackend& backend, std::span<const CharacterProfile> profiles,
                                     int turns, const ProbeOptions& options) {
    if (turns < 1) {
        throw SchemaError("probe needs at least one turn");
    }
    if (profiles.empty()) {
        throw EmptyInput("probe needs at least one profile");
    }
    const std::string question = load_template("probe_question");
    RolePromptOptions prompt_options;
    prompt_options.include_presets = options.with_presets;

    // first_expired[i] is the 1-based turn profile i expired on, 0 if never.
    std::vector<int> first_expired(profiles.size(), 0);
    auto run_profile = [&](std::size_t i) {
        const auto& profile = profiles[i];
        std::vector<ChatMessage> messages{
            {Role::System, build_role_prompt(profile, Speaker::Supporter, prompt_options).system_text}};
        for (int turn = 1; turn <= turns; ++turn) {
            messages.push_back({Role::User, question});
            GenerationParams params = options.params;
            params.seed = mix_seed(options.params.seed.value_or(0) ^ fnv1a(profile.id),
                                   static_cast<std::uint64_t>(turn));
            std::string reply = backend.complete(messages, params);
            if (detect_expiration(reply)) {
                first_expired[i] = turn;
                return;
            }
            messages.push_back({Role::Assistant, std::move(reply)});
        }
    };

    parallel_for(profiles.size(), options.parallelism, run_profile);

    std::vector<double> curve(static_cast<std::size_t>(turns), 0.0);
    for (int turn = 1; turn <= turns; ++turn) {
        const auto expired = std::count_if(first_expired.begin(), first_expired.end(),
                                           [turn](int t) { return t != 0 && t <= turn; });
        curve[static_cast<std::size_t>(turn - 1)] =
            static_cast<double>(expired) / static_cast<double>(profiles.size());
    }
    return curve;
}

std::string expiration_curve_csv(std::span<const double> curve) {
    std::string out = "turn,ratio\n";
    char buf[64];
    for (std::size_t i = 0; i < curve.size(); ++i) {
        std::snprintf(buf, sizeof(buf), "%zu,%.6f\n", i + 1, curve[i]);
        out += buf;
    }
    return out;
}

}  // namespace s2conv
