#include "s2conv/character.hpp"

#include <algorithm>
#include <charconv>
#include <set>
#include <sstream>

#include <nlohmann/json.hpp>
#include <spdlog/spdlog.h>

#include "s2conv/assets.hpp"
#include "s2conv/error.hpp"
#include "s2conv/llm.hpp"
#include "s2conv/structured_output.hpp"
#include "s2conv/text.hpp"

namespace s2conv {

using ojson = nlohmann::ordered_json;

const std::string* OrderedTextMap::find(std::string_view key) const {
    for (const auto& [k, v] : entries_) {
        if (k == key) {
            return &v;
        }
    }
    return nullptr;
}

void OrderedTextMap::set(std::string key, std::string value) {
    for (auto& [k, v] : entries_) {
        if (k == key) {
            v = std::move(value);
            return;
        }
    }
    entries_.emplace_back(std::move(key), std::move(value));
}

void OrderedTextMap::push_back(std::string key, std::string value) {
    entries_.emplace_back(std::move(key), std::move(value));
}

std::string CharacterProfile::name() const {
    const auto* n = persona.find("name");
    return n ? *n : id;
}

const std::vector<ConflictRule>& default_conflict_rules() {
    static const std::vector<ConflictRule> rules{
        {"pupil", "occupation", {"pupil", "schoolchild", "primary school", "elementary school"}, 0, 14},
        {"retiree", "occupation", {"retired", "retiree", "pensioner"}, 45, kMaxAge},
    };
    return rules;
}

std::optional<int> parse_age(std::string_view text) {
    const std::string t = trim(text);
    if (t.empty()) {
        return std::nullopt;
    }
    int value = 0;
    const auto [ptr, ec] = std::from_chars(t.data(), t.data() + t.size(), value);
    if (ec != std::errc{} || ptr != t.data() + t.size() || value <= 0) {
        return std::nullopt;
    }
    return value;
}

namespace {

void check_map(const OrderedTextMap& map, std::string_view section,
               std::span<const std::string_view> required, std::vector<Violation>& out) {
    std::set<std::string_view> seen;
    for (const auto& [key, value] : map) {
        const std::string field = std::string(section) + "." + key;
        if (key.empty()) {
            out.push_back({field, "empty_name", std::string(section) + " entry has an empty name"});
        }
        if (!seen.insert(key).second) {
            out.push_back({field, "duplicate", "'" + key + "' appears more than once"});
        }
    }
    for (const auto name : required) {
        const std::string field = std::string(section) + "." + std::string(name);
        const auto* value = map.find(name);
        if (!value) {
            out.push_back({field, "required", "missing required " + std::string(section) + " entry '" +
                                                  std::string(name) + "'"});
        } else if (trim(*value).empty()) {
            out.push_back({field, "non_empty", "'" + std::string(name) + "' must not be empty"});
        }
    }
}

}  // namespace

std::vector<Violation> validate_profile(const CharacterProfile& profile,
                                        std::span<const ConflictRule> rules) {
    std::vector<Violation> out;
    if (trim(profile.id).empty()) {
        out.push_back({"id", "non_empty", "profile id must not be empty"});
    }
    check_map(profile.persona, "persona", kRequiredPersonaAttributes, out);
    check_map(profile.memory, "memory", kRequiredMemoryAspects, out);

    std::optional<int> age;
    if (const auto* age_text = profile.persona.find("age"); age_text && !trim(*age_text).empty()) {
        age = parse_age(*age_text);
        if (!age || *age > kMaxAge) {
            out.push_back({"persona.age", "age_range",
                           "age '" + *age_text + "' is not a whole number in 1.." + std::to_string(kMaxAge)});
            age.reset();
        }
    }
    if (age) {
        for (const auto& rule : rules) {
            const auto* text = profile.persona.find(rule.attribute);
            if (!text) {
                continue;
            }
            const std::string lowered = to_lower(*text);
            const bool hit = std::any_of(rule.keywords.begin(), rule.keywords.end(),
                                         [&](const std::string& k) { return contains(lowered, k); });
            if (hit && (*age < rule.min_age || *age > rule.max_age)) {
                out.push_back({"persona." + rule.attribute, "conflict:" + rule.name,
                               "age " + std::to_string(*age) + " conflicts with " + rule.attribute + " '" +
                                   *text + "' (allowed " + std::to_string(rule.min_age) + ".." +
                                   std::to_string(rule.max_age) + ")"});
            }
        }
    }
    for (std::size_t i = 0; i < profile.behavior_presets.size(); ++i) {
        const auto& p = profile.behavior_presets[i];
        if (trim(p.trigger).empty() || trim(p.reply).empty()) {
            out.push_back({"behavior_presets[" + std::to_string(i) + "]", "non_empty",
                           "behavior preset needs both a trigger and a reply"});
        }
    }
    return out;
}

std::string describe(std::span<const Violation> violations) {
    std::string out;
    for (const auto& v : violations) {
        if (!out.empty()) {
            out += "; ";
        }
        out += v.field + " [" + v.rule + "]: " + v.message;
    }
    return out;
}

// ------------------------------------------------------------------ bank

CharacterBank::CharacterBank(std::vector<CharacterProfile> characters, int per_type_target)
    : per_type_target_(per_type_target) {
    if (per_type_target <= 0) {
        throw SchemaError("per_type_target must be positive");
    }
    for (auto& c : characters) {
        add(std::move(c));
    }
}

const CharacterProfile* CharacterBank::find(std::string_view id) const {
    const auto it = std::find_if(characters_.begin(), characters_.end(),
                                 [&](const CharacterProfile& c) { return c.id == id; });
    return it == characters_.end() ? nullptr : &*it;
}

const CharacterProfile& CharacterBank::at(std::string_view id) const {
    if (const auto* c = find(id)) {
        return *c;
    }
    throw UnknownCharacter("no character with id '" + std::string(id) + "'");
}

CharacterProfile& CharacterBank::mutable_at(std::string_view id) {
    return const_cast<CharacterProfile&>(std::as_const(*this).at(id));
}

std::size_t CharacterBank::count_of(MbtiType type) const {
    return static_cast<std::size_t>(std::count_if(
        characters_.begin(), characters_.end(), [&](const CharacterProfile& c) { return c.mbti == type; }));
}

bool CharacterBank::is_complete() const {
    return std::all_of(all_mbti_types().begin(), all_mbti_types().end(), [&](MbtiType t) {
        return count_of(t) == static_cast<std::size_t>(per_type_target_);
    });
}

void CharacterBank::add(CharacterProfile profile) {
    if (find(profile.id)) {
        throw SchemaError("duplicate character id '" + profile.id + "'");
    }
    characters_.push_back(std::move(profile));
}

namespace {

ojson map_to_json(const OrderedTextMap& map) {
    ojson arr = ojson::array();
    for (const auto& [k, v] : map) {
        arr.push_back(ojson::array({k, v}));
    }
    return arr;
}

OrderedTextMap map_from_json(const ojson& j, const std::string& where) {
    if (!j.is_array()) {
        throw SchemaError(where + " must be an array of [key, value] pairs");
    }
    OrderedTextMap map;
    for (const auto& pair : j) {
        if (!pair.is_array() || pair.size() != 2 || !pair[0].is_string() || !pair[1].is_string()) {
            throw SchemaError(where + " entries must be [key, value] string pairs");
        }
        map.push_back(pair[0].get<std::string>(), pair[1].get<std::string>());
    }
    return map;
}

}  // namespace

std::string bank_to_json(const CharacterBank& bank) {
    ojson root;
    root["schema_version"] = CharacterBank::kSchemaVersion;
    root["per_type_target"] = bank.per_type_target();
    auto& chars = root["characters"] = ojson::array();
    for (const auto& c : bank.characters()) {
        ojson item;
        item["id"] = c.id;
        item["mbti"] = c.mbti.str();
        item["persona"] = map_to_json(c.persona);
        item["memory"] = map_to_json(c.memory);
        auto& presets = item["behavior_presets"] = ojson::array();
        for (const auto& p : c.behavior_presets) {
            presets.push_back({{"trigger", p.trigger}, {"reply", p.reply}});
        }
        chars.push_back(std::move(item));
    }
    return root.dump(2) + "\n";
}

CharacterBank bank_from_json(std::string_view text) {
    ojson root;
    try {
        root = ojson::parse(text);
    } catch (const nlohmann::json::exception& e) {
        throw SchemaError(std::string("bank is not valid JSON: ") + e.what());
    }
    try {
        const int version = root.at("schema_version").get<int>();
        if (version != CharacterBank::kSchemaVersion) {
            throw SchemaError("unsupported bank schema_version " + std::to_string(version));
        }
        std::vector<CharacterProfile> characters;
        for (const auto& item : root.at("characters")) {
            CharacterProfile c;
            c.id = item.at("id").get<std::string>();
            c.mbti = parse_mbti(item.at("mbti").get<std::string>());
            c.persona = map_from_json(item.at("persona"), c.id + ".persona");
            c.memory = map_from_json(item.at("memory"), c.id + ".memory");
            if (item.contains("behavior_presets")) {
                for (const auto& p : item.at("behavior_presets")) {
                    c.behavior_presets.push_back(
                        {p.at("trigger").get<std::string>(), p.at("reply").get<std::string>()});
                }
            }
            if (const auto violations = validate_profile(c); !violations.empty()) {
                throw SchemaError("character '" + c.id + "' is invalid: " + describe(violations));
            }
            characters.push_back(std::move(c));
        }
        return CharacterBank(std::move(characters), root.at("per_type_target").get<int>());
    } catch (const nlohmann::json::exception& e) {
        throw SchemaError(std::string("bank schema violation: ") + e.what());
    } catch (const InvalidMbti& e) {
        throw SchemaError(std::string("bank schema violation: ") + e.what());
    }
}

void save_bank(const CharacterBank& bank, const std::filesystem::path& path) {
    write_text_file(path, bank_to_json(bank));
}

CharacterBank load_bank(const std::filesystem::path& path) {
    return bank_from_json(read_text_file(path));
}

// ------------------------------------------------------------ generation

std::string render_persona_lines(const OrderedTextMap& map) {
    std::string out;
    for (const auto& [k, v] : map) {
        if (!out.empty()) {
            out += '\n';
        }
        out += k + ": " + v;
    }
    return out;
}

namespace {

std::string join(std::span<const std::string_view> items) {
    std::string out;
    for (const auto item : items) {
        if (!out.empty()) {
            out += ", ";
        }
        out += item;
    }
    return out;
}

std::string value_text(const ojson& v) {
    if (v.is_string()) {
        return v.get<std::string>();
    }
    if (v.is_number_integer() || v.is_number_unsigned()) {
        return std::to_string(v.get<long long>());
    }
    if (v.is_array()) {
        std::string out;
        for (const auto& item : v) {
            if (!out.empty()) {
                out += ", ";
            }
            out += value_text(item);
        }
        return out;
    }
    return v.dump();
}

OrderedTextMap object_to_map(const ojson& obj, const char* what) {
    if (!obj.is_object()) {
        throw MalformedOutput(std::string(what) + " must be a JSON object");
    }
    OrderedTextMap map;
    for (const auto& [k, v] : obj.items()) {
        map.push_back(k, value_text(v));
    }
    return map;
}

std::string format_id(MbtiType mbti, int index) {
    char buf[16];
    std::snprintf(buf, sizeof(buf), "%03d", index);
    return mbti.str() + "-" + buf;
}

std::vector<CharacterProfile> parse_batch(const std::string& reply, MbtiType mbti, int expected,
                                          int first_index) {
    const ojson arr = extract_json_array(reply);
    if (static_cast<int>(arr.size()) != expected) {
        throw MalformedOutput("expected " + std::to_string(expected) + " characters, got " +
                              std::to_string(arr.size()));
    }
    std::vector<CharacterProfile> out;
    for (std::size_t i = 0; i < arr.size(); ++i) {
        const auto& item = arr[i];
        if (!item.is_object() || !item.contains("persona") || !item.contains("memory")) {
            throw MalformedOutput("character " + std::to_string(i) + " lacks persona or memory");
        }
        CharacterProfile c;
        c.id = format_id(mbti, first_index + static_cast<int>(i));
        c.mbti = mbti;
        c.persona = object_to_map(item["persona"], "persona");
        c.memory = object_to_map(item["memory"], "memory");
        if (const auto v = validate_profile(c); !v.empty()) {
            throw MalformedOutput("character " + std::to_string(i) + " is invalid: " + describe(v));
        }
        out.push_back(std::move(c));
    }
    return out;
}

}  // namespace

std::string decomposition_prompt(MbtiType mbti, std::string_view personality_description, int count) {
    if (count < 1) {
        throw SchemaError("character count must be at least 1");
    }
    if (trim(personality_description).empty()) {
        throw SchemaError("personality description must not be empty");
    }
    return render_template(load_template("decomposition"),
                           {{"count", std::to_string(count)},
                            {"mbti", mbti.str()},
                            {"description", std::string(personality_description)},
                            {"persona_attributes", join(kRequiredPersonaAttributes)},
                            {"memory_aspects", join(kRequiredMemoryAspects)}});
}

std::vector<CharacterProfile> generate_characters(ChatBackend& backend, MbtiType mbti, int count,
                                                  std::uint64_t seed, const GenerationOptions& options) {
    if (count < 1) {
        throw SchemaError("character count must be at least 1");
    }
    const int batch_size = std::max(1, options.batch_size);
    const std::string description = personality_description(mbti);
    std::vector<CharacterProfile> out;
    int batch_index = 0;
    while (static_cast<int>(out.size()) < count) {
        const int want = std::min(batch_size, count - static_cast<int>(out.size()));
        const int first_index = static_cast<int>(out.size()) + 1;
        GenerationParams params;
        params.temperature = options.temperature;
        params.max_tokens = 700 * want + 200;
        params.seed = mix_seed(seed, static_cast<std::uint64_t>(batch_index));
        auto batch = complete_with_repair(
            backend, {{Role::User, decomposition_prompt(mbti, description, want)}}, params,
            options.repair_retries,
            [&](const std::string& reply) { return parse_batch(reply, mbti, want, first_index); });
        for (auto& c : batch) {
            out.push_back(std::move(c));
        }
        ++batch_index;
    }
    return out;
}

CharacterBank generate_bank(ChatBackend& backend, int per_type, std::uint64_t seed,
                            const GenerationOptions& options) {
    std::vector<CharacterProfile> all;
    for (const auto type : all_mbti_types()) {
        spdlog::info("generating {} characters of type {}", per_type, type.str());
        auto chars = generate_characters(backend, type, per_type, mix_seed(seed, type.bits()), options);
        for (auto& c : chars) {
            all.push_back(std::move(c));
        }
    }
    return CharacterBank(std::move(all), per_type);
}

}  // namespace s2conv
