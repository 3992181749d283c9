#pragma once

#include <cstdint>
#include <filesystem>
#include <optional>
#include <span>
#include <string>
#include <string_view>
#include <utility>
#include <vector>

#include "s2conv/mbti.hpp"

namespace s2conv {

class ChatBackend;

// Insertion-ordered string map. Order is part of a profile's identity: it
// drives prompt rendering and persona featurization.
class OrderedTextMap {
public:
    using Entry = std::pair<std::string, std::string>;

    OrderedTextMap() = default;
    OrderedTextMap(std::initializer_list<Entry> entries) : entries_(entries) {}

    const std::string* find(std::string_view key) const;
    bool contains(std::string_view key) const { return find(key) != nullptr; }
    // Replaces in place when present, appends otherwise.
    void set(std::string key, std::string value);
    // Appends without a uniqueness check; validate_profile reports duplicates.
    void push_back(std::string key, std::string value);

    std::size_t size() const { return entries_.size(); }
    bool empty() const { return entries_.empty(); }
    auto begin() const { return entries_.begin(); }
    auto end() const { return entries_.end(); }
    const std::vector<Entry>& entries() const { return entries_; }

    friend bool operator==(const OrderedTextMap&, const OrderedTextMap&) = default;

private:
    std::vector<Entry> entries_;
};

struct BehaviorPreset {
    std::string trigger;
    std::string reply;

    friend bool operator==(const BehaviorPreset&, const BehaviorPreset&) = default;
};

struct CharacterProfile {
    std::string id;
    MbtiType mbti;
    OrderedTextMap persona;
    OrderedTextMap memory;
    std::vector<BehaviorPreset> behavior_presets;

    std::string name() const;

    friend bool operator==(const CharacterProfile&, const CharacterProfile&) = default;
};

inline constexpr std::string_view kRequiredPersonaAttributes[] = {
    "name", "gender", "age", "tone", "personality",
};
inline constexpr std::string_view kRequiredMemoryAspects[] = {
    "recent_troubles", "growth_experience", "family_relationship",
};
inline constexpr int kMaxAge = 120;

struct Violation {
    std::string field;  // e.g. "persona.age", "memory.family_relationship"
    std::string rule;   // e.g. "required", "age_range", "conflict:pupil"
    std::string message;

    friend bool operator==(const Violation&, const Violation&) = default;
};

// Declarative consistency rule: when `attribute` mentions any keyword, the
// character's age must lie within [min_age, max_age].
struct ConflictRule {
    std::string name;
    std::string attribute;
    std::vector<std::string> keywords;
    int min_age = 0;
    int max_age = kMaxAge;
};

const std::vector<ConflictRule>& default_conflict_rules();

std::vector<Violation> validate_profile(const CharacterProfile& profile,
                                        std::span<const ConflictRule> rules = default_conflict_rules());

std::string describe(std::span<const Violation> violations);

// Parses a positive whole-number age, nullopt otherwise.
std::optional<int> parse_age(std::string_view text);

class CharacterBank {
public:
    static constexpr int kSchemaVersion = 1;

    CharacterBank() = default;
    CharacterBank(std::vector<CharacterProfile> characters, int per_type_target);

    const std::vector<CharacterProfile>& characters() const { return characters_; }
    int per_type_target() const { return per_type_target_; }
    std::size_t size() const { return characters_.size(); }
    bool empty() const { return characters_.empty(); }

    const CharacterProfile* find(std::string_view id) const;
    // Throws UnknownCharacter.
    const CharacterProfile& at(std::string_view id) const;
    CharacterProfile& mutable_at(std::string_view id);

    std::size_t count_of(MbtiType type) const;
    // True when each of the 16 types has exactly per_type_target characters.
    bool is_complete() const;

    // Throws SchemaError on duplicate ids.
    void add(CharacterProfile profile);

    friend bool operator==(const CharacterBank&, const CharacterBank&) = default;

private:
    std::vector<CharacterProfile> characters_;
    int per_type_target_ = 1;
};

void save_bank(const CharacterBank& bank, const std::filesystem::path& path);
CharacterBank load_bank(const std::filesystem::path& path);

// In-memory JSON forms shared by the bank file and the HTTP API.
std::string bank_to_json(const CharacterBank& bank);
CharacterBank bank_from_json(std::string_view text);

std::string decomposition_prompt(MbtiType mbti, std::string_view personality_description, int count);

struct GenerationOptions {
    int batch_size = 4;
    int repair_retries = 2;
    double temperature = 1.0;
};

// Asks the backend for `count` characters of one type, in batches, with
// repair retries on malformed output. Ids are "<mbti>-<nnn>", 1-based.
std::vector<CharacterProfile> generate_characters(ChatBackend& backend, MbtiType mbti, int count,
                                                  std::uint64_t seed,
                                                  const GenerationOptions& options = {});

// All 16 types in canonical order, `per_type` characters each.
CharacterBank generate_bank(ChatBackend& backend, int per_type, std::uint64_t seed,
                            const GenerationOptions& options = {});

// Persona "attr: value" lines in map order, the rendering used by prompts and
// matcher features.
std::string render_persona_lines(const OrderedTextMap& map);

}  // namespace s2conv
