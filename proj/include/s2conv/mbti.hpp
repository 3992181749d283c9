#pragma once

#include <array>
#include <cstdint>
#include <filesystem>
#include <span>
#include <string>
#include <string_view>
#include <vector>

namespace s2conv {

// Four-dimension personality code. Each field holds one letter of its pair;
// the canonical text form concatenates them in E/I, N/S, T/F, J/P order.
class MbtiType {
public:
    static constexpr std::size_t kDimensions = 4;
    static constexpr std::size_t kCount = 16;

    // Letter pairs per dimension, first letter of each pair is bit 0.
    static constexpr std::array<std::array<char, 2>, kDimensions> kLetters{{
        {'E', 'I'}, {'N', 'S'}, {'T', 'F'}, {'J', 'P'},
    }};

    MbtiType() = default;

    // `bits` holds one bit per dimension; bit d set selects the second letter.
    static MbtiType from_bits(std::uint8_t bits);

    char letter(std::size_t dimension) const;
    char attitude() const { return letter(0); }
    char perceiving() const { return letter(1); }
    char judging_fn() const { return letter(2); }
    char lifestyle() const { return letter(3); }

    std::uint8_t bits() const { return bits_; }
    std::string str() const;

    friend bool operator==(MbtiType, MbtiType) = default;
    // Orders by canonical text, so sorting matches lexicographic code order.
    friend bool operator<(MbtiType a, MbtiType b) { return a.str() < b.str(); }

private:
    explicit MbtiType(std::uint8_t bits) : bits_(bits) {}
    std::uint8_t bits_ = 0;
};

// Case-insensitive, whitespace-trimmed; canonical dimension order only.
MbtiType parse_mbti(std::string_view text);

// All 16 codes sorted lexicographically by their text form.
const std::array<MbtiType, MbtiType::kCount>& all_mbti_types();

struct AssessmentRecord {
    std::string character_id;
    MbtiType designated;
    MbtiType assessed;
};

int hit_count(MbtiType designated, MbtiType assessed);

using HitHistogram = std::array<std::size_t, MbtiType::kDimensions + 1>;

HitHistogram hit_histogram(std::span<const AssessmentRecord> records);

// Exact per-dimension agreement; rounding is left to presentation.
struct DimensionAccuracy {
    std::array<std::size_t, MbtiType::kDimensions> matched{};
    std::size_t total = 0;

    double fraction(std::size_t dimension) const;
    // Percentage rounded half-away-from-zero to two decimals.
    double percent_rounded(std::size_t dimension) const;
};

DimensionAccuracy dimension_accuracy(std::span<const AssessmentRecord> records);

// One JSON object per line: {character_id, designated, assessed}.
std::vector<AssessmentRecord> load_assessments(const std::filesystem::path& path);
void save_assessments(const std::filesystem::path& path, std::span<const AssessmentRecord> records);

}  // namespace s2conv
