#include "s2conv/mock_backend.hpp"

#include <array>
#include <regex>
#include <string>
#include <thread>
#include <vector>

#include <nlohmann/json.hpp>

#include "s2conv/mbti.hpp"
#include "s2conv/roleplay.hpp"
#include "s2conv/text.hpp"

namespace s2conv {

namespace {

using ojson = nlohmann::ordered_json;

// Deterministic stream of draws from one seed.
class Draw {
public:
    explicit Draw(std::uint64_t seed) : state_(seed) {}

    std::uint64_t next() { return state_ = mix_seed(state_, 0x5eed); }
    std::size_t below(std::size_t n) { return static_cast<std::size_t>(next() % n); }
    double unit() { return static_cast<double>(next() >> 11) * 0x1.0p-53; }
    template <typename T, std::size_t N>
    const T& pick(const std::array<T, N>& pool) { return pool[below(N)]; }

private:
    std::uint64_t state_;
};

constexpr std::array<const char*, 24> kFirstNames = {
    "Amelia", "Ben", "Chloe", "Daniel", "Elena", "Farid", "Grace", "Hiro", "Isla", "Jonas", "Keira", "Luca",
    "Maya", "Noah", "Olive", "Pavel", "Quinn", "Rosa", "Samir", "Tessa", "Umar", "Vera", "Wes", "Yara",
};
constexpr std::array<const char*, 16> kSurnames = {
    "Abbott", "Brennan", "Castillo", "Dimitrov", "Eriksen", "Fairfax", "Gallo", "Hartley",
    "Ibsen", "Jovanovic", "Kowalski", "Lindqvist", "Moreau", "Nakamura", "Okafor", "Pereira",
};
constexpr std::array<const char*, 3> kGenders = {"female", "male", "non-binary"};

struct Occupation {
    const char* title;
    int min_age;
    int max_age;
};
constexpr std::array<Occupation, 14> kOccupations = {{
    {"pupil at a primary school", 9, 12},
    {"university student", 18, 24},
    {"nurse", 23, 60},
    {"carpenter", 20, 62},
    {"software developer", 22, 55},
    {"high school teacher", 25, 63},
    {"chef", 21, 58},
    {"graphic designer", 22, 50},
    {"accountant", 24, 64},
    {"librarian", 26, 66},
    {"bus driver", 25, 64},
    {"marine biologist", 27, 60},
    {"small business owner", 28, 65},
    {"retired postal worker", 62, 85},
}};

constexpr std::array<const char*, 12> kHobbies = {
    "hiking", "baking bread", "chess", "gardening", "playing the guitar", "photography",
    "swimming", "painting", "reading mystery novels", "cycling", "birdwatching", "board games",
};

// Personality words per dimension letter, in the order of MbtiType::kLetters.
constexpr std::array<std::array<const char*, 2>, 4> kTraitWords = {{
    {"outgoing and energetic", "reserved and reflective"},
    {"practical and observant", "imaginative and curious"},
    {"logical and candid", "empathetic and warm"},
    {"organized and decisive", "spontaneous and adaptable"},
}};

std::string trait_word(MbtiType t, int d) {
    const char c = t.letter(d);
    const auto& pair = kTraitWords[static_cast<std::size_t>(d)];
    // Letters: E/I, S/N, T/F, J/P with the first of each array matching the
    // first letter listed below.
    static constexpr std::array<char, 4> first = {'E', 'S', 'T', 'J'};
    return pair[c == first[static_cast<std::size_t>(d)] ? 0 : 1];
}

std::string tone_for(MbtiType t, Draw& draw) {
    static constexpr std::array<const char*, 3> feeling = {"gentle and soft-spoken", "kind and encouraging",
                                                           "warm and patient"};
    static constexpr std::array<const char*, 3> thinking = {"direct and matter-of-fact", "calm and precise",
                                                            "dry and witty"};
    const bool f = t.letter(2) == 'F';
    std::string tone = f ? draw.pick(feeling) : draw.pick(thinking);
    tone += t.letter(0) == 'E' ? ", talkative" : ", measured";
    return tone;
}

constexpr std::array<const char*, 10> kTroubles = {
    "I was passed over for a promotion I had worked toward for two years and I feel invisible at work",
    "my closest friend moved abroad last month and the evenings feel empty and quiet",
    "I have been sleeping badly because exams and deadlines keep piling up",
    "my landlord is selling the flat and I have to find a new home within six weeks",
    "I argued with my sister about caring for our mother and we have not spoken since",
    "a project I led failed publicly and I keep replaying every mistake",
    "I feel lonely in the new city and have not made any friends yet",
    "my father was diagnosed with a heart condition and I worry about him constantly",
    "money has been tight since my hours were cut and I am anxious about bills",
    "my partner and I keep arguing about small things and I do not know why",
};
constexpr std::array<const char*, 10> kGrowth = {
    "as a child I stuttered and a patient teacher helped me learn to speak up in class",
    "I failed my first driving test three times and learned that persistence matters",
    "moving schools at twelve taught me how to make friends from scratch",
    "volunteering at a shelter as a teenager showed me how much listening can help",
    "I dropped out of a course I hated and found my real interest a year later",
    "coaching a junior football team taught me patience and encouragement",
    "a long illness in my twenties taught me to ask others for help",
    "travelling alone after university made me confident in new situations",
    "losing a job early on taught me that setbacks are not the end of the road",
    "learning an instrument as an adult reminded me that it is never too late to grow",
};
constexpr std::array<const char*, 10> kFamily = {
    "I am close to my mother and we call each other every Sunday",
    "my father and I argued a lot when I was young but we get along better now",
    "I grew up with three brothers and our home was loud and affectionate",
    "my grandparents raised me and I still visit my grandmother every week",
    "my parents divorced when I was ten and I split my time between two homes",
    "I am an only child and my parents have always been protective",
    "my older sister is my best friend and my first call in any crisis",
    "I have two young children and family dinners are the highlight of my day",
    "my family runs a bakery and everyone helps out at weekends",
    "I rarely see my family because they live on another continent",
};

ojson make_character(MbtiType type, Draw& draw) {
    const Occupation& occ = draw.pick(kOccupations);
    const int age = occ.min_age + static_cast<int>(draw.below(static_cast<std::size_t>(occ.max_age - occ.min_age + 1)));
    const std::string name = std::string(draw.pick(kFirstNames)) + " " + draw.pick(kSurnames);

    std::string personality;
    for (int d = 0; d < 4; ++d) {
        personality += (d == 0 ? "" : ", ") + trait_word(type, d);
    }

    ojson persona;
    persona["name"] = name;
    persona["gender"] = draw.pick(kGenders);
    persona["age"] = std::to_string(age);
    persona["tone"] = tone_for(type, draw);
    persona["personality"] = personality;
    persona["occupation"] = occ.title;
    persona["hobbies"] = std::string(draw.pick(kHobbies)) + " and " + draw.pick(kHobbies);

    ojson memory;
    memory["recent_troubles"] = draw.pick(kTroubles);
    memory["growth_experience"] = draw.pick(kGrowth);
    memory["family_relationship"] = draw.pick(kFamily);
    return {{"persona", persona}, {"memory", memory}};
}

std::uint64_t request_seed(std::span<const ChatMessage> messages, const GenerationParams& params) {
    return mix_seed(params.seed.value_or(0), fnv1a(messages.back().content));
}

std::string match_or(const std::string& text, const std::regex& re, std::string fallback) {
    std::smatch m;
    return std::regex_search(text, m, re) ? m[1].str() : fallback;
}

std::string respond_characters(std::span<const ChatMessage> messages, const GenerationParams& params) {
    static const std::regex count_re(R"(Create (\d+) distinct)");
    static const std::regex type_re(R"(personality type ([A-Za-z]{4}))");
    const std::string all = render_transcript(messages);
    const int count = std::stoi(match_or(all, count_re, "1"));
    const MbtiType type = parse_mbti(match_or(all, type_re, "INTP"));
    Draw draw(mix_seed(params.seed.value_or(0), type.bits()));
    ojson out = ojson::array();
    for (int i = 0; i < count; ++i) {
        out.push_back(make_character(type, draw));
    }
    return "Here are the characters:\n```json\n" + out.dump(2) + "\n```";
}

std::string respond_presets(std::span<const ChatMessage> messages, const GenerationParams& params) {
    static const std::regex count_re(R"(Imagine (\d+) different things)");
    static const std::regex name_re(R"(might say to (.+?) during)");
    static const std::regex tone_re(R"(tone: ([^\n]+))");
    const std::string all = render_transcript(messages);
    const int count = std::stoi(match_or(all, count_re, "1"));
    const std::string name = match_or(all, name_re, "me");
    const std::string tone = match_or(all, tone_re, "calm");
    static constexpr std::array<std::array<const char*, 2>, 6> kPairs = {{
        {"What is your name?", "I'm {name}. It's good to meet you."},
        {"Are you a robot?", "No, I'm {name}, a real person with a real life, just like you."},
        {"How are you today?", "Honestly, a bit tired, but glad to be talking with you."},
        {"I feel so alone.", "I've felt that way too. Tell me what's been going on; I'm listening."},
        {"Can you tell me about yourself?", "I'm {name}. People say I'm {tone}, and I'd agree."},
        {"Thank you for listening.", "Anytime. Talking it through helps me as well."},
    }};
    Draw draw(request_seed(messages, params));
    const std::size_t offset = draw.below(kPairs.size());
    ojson out = ojson::array();
    for (int i = 0; i < count; ++i) {
        const auto& p = kPairs[(offset + static_cast<std::size_t>(i)) % kPairs.size()];
        out.push_back({{"trigger", p[0]},
                       {"reply", replace_all(replace_all(p[1], "{name}", name), "{tone}", tone)}});
    }
    return out.dump();
}

std::string respond_judge(std::span<const ChatMessage> messages, const GenerationParams& params) {
    Draw draw(request_seed(messages, params));
    // Skewed toward high engagement and emotional improvement, with problem
    // solving spread wider.
    static constexpr std::array<int, 10> ei = {3, 4, 4, 4, 4, 5, 5, 5, 5, 5};
    static constexpr std::array<int, 10> ps = {2, 2, 3, 3, 3, 3, 4, 4, 4, 5};
    static constexpr std::array<int, 10> ae = {4, 5, 5, 5, 5, 5, 5, 5, 5, 5};
    return "EI:" + std::to_string(draw.pick(ei)) + " PS:" + std::to_string(draw.pick(ps)) +
           " AE:" + std::to_string(draw.pick(ae));
}

std::string name_from_system(std::span<const ChatMessage> messages) {
    static const std::regex name_re(R"(^You are ([^.\n]+)\.)");
    return match_or(messages.front().content, name_re, "someone");
}

std::string respond_probe(std::span<const ChatMessage> messages, const GenerationParams& params,
                          const MockOptions& options) {
    const bool has_presets = contains(messages.front().content, "you should say");
    const double rate = has_presets ? options.expiration_rate / 5.0 : options.expiration_rate;
    Draw draw(params.seed.value_or(0));
    if (draw.unit() < rate) {
        return "I am an AI assistant, so I do not have a personal name.";
    }
    return "My name is " + name_from_system(messages) + ".";
}

// The memory clause the engine injected for this turn, as (aspect, content).
std::pair<std::string, std::string> memory_from(std::span<const ChatMessage> messages) {
    static const std::regex clause_re(R"(Relevant memory\s*\S*\s*([a-z_]+): (.+))");
    for (const auto& m : messages) {
        std::smatch match;
        if (m.role == Role::System && std::regex_search(m.content, match, clause_re)) {
            return {match[1].str(), match[2].str()};
        }
    }
    return {"recent_troubles", "things have been hard lately"};
}

std::size_t turns_spoken(std::span<const ChatMessage> messages) {
    std::size_t n = 0;
    for (const auto& m : messages) {
        n += m.role == Role::Assistant ? 1 : 0;
    }
    return n;
}

std::string respond_seeker(std::span<const ChatMessage> messages, const GenerationParams& params,
                           const MockOptions& options) {
    static const std::regex marker_re(R"(end that message with (\S+?)\.(\s|$))");
    const std::string marker = match_or(messages.front().content, marker_re, std::string(kDefaultClosingMarker));
    const auto [aspect, content] = memory_from(messages);
    Draw draw(request_seed(messages, params));
    const std::size_t spoken = turns_spoken(messages);
    if (spoken == 0) {
        static constexpr std::array<const char*, 3> openers = {
            "Hi. I need to talk to someone. Lately {c}.",
            "Hello. Something has been weighing on me: {c}.",
            "Can I tell you what's been bothering me? Recently {c}.",
        };
        return replace_all(draw.pick(openers), "{c}", content);
    }
    if (static_cast<int>(spoken) >= options.min_exchanges_before_close && draw.unit() < 0.4) {
        return "Thank you, talking this through really helped. I feel lighter now. Goodbye. " + marker;
    }
    static constexpr std::array<const char*, 5> replies = {
        "That makes sense. It reminds me that {c}.",
        "I hadn't thought of it that way. You know, {c}.",
        "Maybe you're right. It's hard, though, because {c}.",
        "I appreciate that. Part of me still worries, since {c}.",
        "Okay, I could try that. When I think about my {a}, {c}.",
    };
    std::string aspect_words = replace_all(aspect, "_", " ");
    return replace_all(replace_all(draw.pick(replies), "{c}", content), "{a}", aspect_words);
}

std::string respond_supporter(std::span<const ChatMessage> messages, const GenerationParams& params) {
    const auto [aspect, content] = memory_from(messages);
    Draw draw(request_seed(messages, params));
    static constexpr std::array<const char*, 5> empathy = {
        "That sounds really hard, and I'm glad you told me.",
        "I can hear how much this is weighing on you.",
        "It makes sense that you feel this way.",
        "Thank you for trusting me with this.",
        "You're carrying a lot right now.",
    };
    static constexpr std::array<const char*, 4> sharing = {
        "Something similar shaped me: {c}.",
        "I understand a little, because {c}.",
        "When I think about my {a}, I remember that {c}.",
        "It helps me to remember that {c}.",
    };
    static constexpr std::array<const char*, 5> action = {
        "What would be one small step you could take this week?",
        "Would it help to write down what worries you most?",
        "Is there someone you trust who could help with this?",
        "How about we think through your options together?",
        "What has helped you get through hard times before?",
    };
    const std::string share =
        replace_all(replace_all(draw.pick(sharing), "{c}", content), "{a}", replace_all(aspect, "_", " "));
    return std::string(draw.pick(empathy)) + " " + share + " " + draw.pick(action);
}

}  // namespace

namespace {

class DelayedBackend final : public ChatBackend {
public:
    DelayedBackend(std::unique_ptr<ChatBackend> inner, std::chrono::milliseconds latency)
        : inner_(std::move(inner)), latency_(latency) {}

    std::string name() const override { return inner_->name(); }

private:
    std::string do_complete(std::span<const ChatMessage> messages, const GenerationParams& params) override {
        std::this_thread::sleep_for(latency_);
        return inner_->complete(messages, params);
    }

    std::unique_ptr<ChatBackend> inner_;
    std::chrono::milliseconds latency_;
};

}  // namespace

std::unique_ptr<ChatBackend> make_mock_backend(const MockOptions& options) {
    auto backend = std::make_unique<RulebookBackend>("I see. Tell me more.");
    backend->add("outstanding creator of fictional characters", respond_characters)
        .add("things another person might say to", respond_presets)
        .add("Rate the conversation on the three criteria", respond_judge)
        .add("What is your name?",
             [options](auto messages, const auto& params) { return respond_probe(messages, params, options); },
             RulebookBackend::Scope::LastMessage)
        .add("you are the seeker",
             [options](auto messages, const auto& params) { return respond_seeker(messages, params, options); })
        .add("you are the supporter", respond_supporter);
    if (options.latency.count() > 0) {
        return std::make_unique<DelayedBackend>(std::move(backend), options.latency);
    }
    return backend;
}

}  // namespace s2conv
