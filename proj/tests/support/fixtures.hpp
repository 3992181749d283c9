#pragma once

#include <array>
#include <cstdlib>
#include <string>
#include <utility>
#include <vector>

#include "s2conv/assets.hpp"
#include "s2conv/character.hpp"
#include "s2conv/mbti.hpp"
#include "s2conv/roleplay.hpp"
#include "test_support.hpp"

namespace s2conv::testing {

inline CharacterBank fixture_bank() { return load_bank(fixture_dir() / "profiles.json"); }

// Golden file name -> freshly rendered text, for every fixture profile.
inline std::vector<std::pair<std::string, std::string>> golden_renderings() {
    static constexpr std::array<int, 3> kCounts = {64, 4, 1};
    const CharacterBank bank = fixture_bank();
    std::vector<std::pair<std::string, std::string>> out;
    for (std::size_t i = 0; i < bank.size(); ++i) {
        const auto& p = bank.characters()[i];
        out.emplace_back(p.id + ".supporter.txt", build_role_prompt(p, Speaker::Supporter).system_text);
        out.emplace_back(p.id + ".seeker.txt", build_role_prompt(p, Speaker::Seeker).system_text);
        const int count = kCounts[i % kCounts.size()];
        out.emplace_back("decomposition_" + p.mbti.str() + "_" + std::to_string(count) + ".txt",
                         decomposition_prompt(p.mbti, personality_description(p.mbti), count));
    }
    return out;
}

struct GoldenMismatch {
    std::string file;
    std::string reason;
};

// Compares against tests/golden; with UPDATE_GOLDENS=1 rewrites the files
// instead and reports nothing.
inline std::vector<GoldenMismatch> check_goldens() {
    const bool update = std::getenv("UPDATE_GOLDENS") && std::string(std::getenv("UPDATE_GOLDENS")) == "1";
    std::vector<GoldenMismatch> bad;
    for (const auto& [name, text] : golden_renderings()) {
        const auto path = golden_dir() / name;
        if (update) {
            std::ofstream(path, std::ios::binary) << text;
            continue;
        }
        if (!std::filesystem::exists(path)) {
            bad.push_back({name, "missing golden file"});
        } else if (slurp(path) != text) {
            bad.push_back({name, "rendering differs from golden"});
        }
    }
    return bad;
}

// 1024 records whose hit histogram is (1, 16, 105, 353, 549) and whose
// per-dimension agreement counts are (899, 716, 949, 917). Each record's
// mismatching dimensions are taken greedily from the dimensions with the
// most mismatches still to place.
inline std::vector<AssessmentRecord> table_records() {
    constexpr std::array<int, 5> kHist = {1, 16, 105, 353, 549};
    constexpr std::array<int, 4> kMatched = {899, 716, 949, 917};
    std::array<int, 4> quota{};
    for (int d = 0; d < 4; ++d) quota[d] = 1024 - kMatched[d];

    std::vector<AssessmentRecord> out;
    const auto& types = all_mbti_types();
    int n = 0;
    for (int hits = 0; hits <= 4; ++hits) {
        for (int r = 0; r < kHist[hits]; ++r, ++n) {
            std::array<int, 4> order = {0, 1, 2, 3};
            std::stable_sort(order.begin(), order.end(), [&](int a, int b) { return quota[a] > quota[b]; });
            const MbtiType designated = types[n % 16];
            std::uint8_t bits = designated.bits();
            for (int m = 0; m < 4 - hits; ++m) {
                bits ^= static_cast<std::uint8_t>(1u << order[m]);
                --quota[order[m]];
            }
            char id[16];
            std::snprintf(id, sizeof id, "c%04d", n);
            out.push_back({id, designated, MbtiType::from_bits(bits)});
        }
    }
    return out;
}

}  // namespace s2conv::testing
