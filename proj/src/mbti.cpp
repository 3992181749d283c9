#include "s2conv/mbti.hpp"

#include <algorithm>
#include <bit>
#include <cctype>
#include <cmath>
#include <fstream>
#include <set>

#include <nlohmann/json.hpp>

#include "s2conv/error.hpp"
#include "s2conv/text.hpp"

namespace s2conv {

MbtiType MbtiType::from_bits(std::uint8_t bits) {
    if (bits >= kCount) {
        throw InvalidMbti("MBTI bit pattern out of range: " + std::to_string(bits));
    }
    return MbtiType(bits);
}

char MbtiType::letter(std::size_t dimension) const {
    return kLetters.at(dimension)[(bits_ >> dimension) & 1U];
}

std::string MbtiType::str() const {
    std::string out(kDimensions, ' ');
    for (std::size_t d = 0; d < kDimensions; ++d) {
        out[d] = letter(d);
    }
    return out;
}

MbtiType parse_mbti(std::string_view text) {
    const std::string code = to_upper(trim(text));
    if (code.size() != MbtiType::kDimensions) {
        throw InvalidMbti("MBTI code must have 4 letters: '" + std::string(text) + "'");
    }
    std::uint8_t bits = 0;
    for (std::size_t d = 0; d < MbtiType::kDimensions; ++d) {
        const auto& pair = MbtiType::kLetters[d];
        if (code[d] == pair[1]) {
            bits |= static_cast<std::uint8_t>(1U << d);
        } else if (code[d] != pair[0]) {
            throw InvalidMbti("position " + std::to_string(d + 1) + " of '" + std::string(text) +
                              "' must be " + pair[0] + " or " + pair[1]);
        }
    }
    return MbtiType::from_bits(bits);
}

const std::array<MbtiType, MbtiType::kCount>& all_mbti_types() {
    static const auto types = [] {
        std::array<MbtiType, MbtiType::kCount> out;
        for (std::uint8_t b = 0; b < MbtiType::kCount; ++b) {
            out[b] = MbtiType::from_bits(b);
        }
        std::sort(out.begin(), out.end());
        return out;
    }();
    return types;
}

int hit_count(MbtiType designated, MbtiType assessed) {
    const unsigned differing = (designated.bits() ^ assessed.bits()) & 0xFU;
    return static_cast<int>(MbtiType::kDimensions) - std::popcount(differing);
}

HitHistogram hit_histogram(std::span<const AssessmentRecord> records) {
    if (records.empty()) {
        throw EmptyInput("hit_histogram requires at least one record");
    }
    HitHistogram counts{};
    for (const auto& r : records) {
        ++counts[static_cast<std::size_t>(hit_count(r.designated, r.assessed))];
    }
    return counts;
}

double DimensionAccuracy::fraction(std::size_t dimension) const {
    return static_cast<double>(matched.at(dimension)) / static_cast<double>(total);
}

double DimensionAccuracy::percent_rounded(std::size_t dimension) const {
    // Integer arithmetic: round(10000 * matched / total) / 100.
    const auto scaled = 2 * 10000 * matched.at(dimension) + total;
    const auto hundredths = scaled / (2 * total);
    return static_cast<double>(hundredths) / 100.0;
}

DimensionAccuracy dimension_accuracy(std::span<const AssessmentRecord> records) {
    if (records.empty()) {
        throw EmptyInput("dimension_accuracy requires at least one record");
    }
    DimensionAccuracy acc;
    acc.total = records.size();
    for (const auto& r : records) {
        for (std::size_t d = 0; d < MbtiType::kDimensions; ++d) {
            if (r.designated.letter(d) == r.assessed.letter(d)) {
                ++acc.matched[d];
            }
        }
    }
    return acc;
}

std::vector<AssessmentRecord> load_assessments(const std::filesystem::path& path) {
    std::ifstream in(path);
    if (!in) {
        throw IoError("cannot open assessment file " + path.string());
    }
    std::vector<AssessmentRecord> records;
    std::set<std::string> seen;
    std::string line;
    std::size_t line_no = 0;
    while (std::getline(in, line)) {
        ++line_no;
        if (trim(line).empty()) {
            continue;
        }
        try {
            const auto j = nlohmann::json::parse(line);
            AssessmentRecord r{j.at("character_id").get<std::string>(),
                               parse_mbti(j.at("designated").get<std::string>()),
                               parse_mbti(j.at("assessed").get<std::string>())};
            if (!seen.insert(r.character_id).second) {
                throw SchemaError("duplicate character_id " + r.character_id);
            }
            records.push_back(std::move(r));
        } catch (const nlohmann::json::exception& e) {
            throw SchemaError(path.string() + ":" + std::to_string(line_no) + ": " + e.what());
        }
    }
    return records;
}

void save_assessments(const std::filesystem::path& path, std::span<const AssessmentRecord> records) {
    std::ofstream out(path);
    if (!out) {
        throw IoError("cannot write assessment file " + path.string());
    }
    for (const auto& r : records) {
        nlohmann::ordered_json j;
        j["character_id"] = r.character_id;
        j["designated"] = r.designated.str();
        j["assessed"] = r.assessed.str();
        out << j.dump() << '\n';
    }
}

}  // namespace s2conv
