#pragma once

#include <array>
#include <cstdint>
#include <filesystem>
#include <optional>
#include <span>
#include <string>
#include <string_view>
#include <vector>

#include "s2conv/conversation.hpp"
#include "s2conv/llm.hpp"
#include "s2conv/mbti.hpp"
#include "s2conv/scores.hpp"

namespace s2conv {

enum class Criterion { EI, PS, AE };

inline constexpr std::array<Criterion, 3> kCriteria = {Criterion::EI, Criterion::PS, Criterion::AE};

std::string_view to_string(Criterion criterion);
// Accepts "ei", "EI", "ps", ... Throws SchemaError.
Criterion parse_criterion(std::string_view text);
int score_of(const EvalScores& scores, Criterion criterion);

struct ScoredConversation {
    std::string conversation_id;
    MbtiType seeker_mbti;
    MbtiType supporter_mbti;
    EvalScores scores;

    friend bool operator==(const ScoredConversation&, const ScoredConversation&) = default;
};

// The judge prompt for one conversation: transcript plus the rating request.
std::string judge_prompt(const Conversation& conversation);

// Parses "EI:<int> PS:<int> AE:<int>" anywhere in the reply, clamping
// out-of-range values into [1,5] with a warning. Throws MalformedOutput.
EvalScores parse_judge_reply(std::string_view reply);

struct JudgeOptions {
    int repair_retries = 2;
    GenerationParams params{.temperature = 0.0, .max_tokens = 32, .seed = std::nullopt};
};

// Throws SchemaError for conversations with fewer than two turns and
// MalformedJudgeOutput when no parsable reply arrives within the retries.
EvalScores judge_conversation(const Conversation& conversation, ChatBackend& backend,
                              const JudgeOptions& options = {});

struct JudgeFailure {
    std::string conversation_id;
    std::string error;
};

struct JudgeResult {
    std::vector<ScoredConversation> scored;
    std::vector<JudgeFailure> failed;
};

// Judges every conversation; types come from the bank. Output order follows
// the input order regardless of `parallelism`.
JudgeResult judge_dataset(std::span<const Conversation> conversations, const CharacterBank& bank,
                          ChatBackend& backend, std::uint64_t seed, const JudgeOptions& options = {},
                          int parallelism = 1);

// Mean of the three criteria.
double compatibility(const EvalScores& scores);

struct CriterionStats {
    double avg = 0.0;
    double min = 0.0;
    double max = 0.0;
    double std = 0.0;  // population standard deviation
};

struct DatasetStats {
    std::size_t count = 0;
    CriterionStats ei;
    CriterionStats ps;
    CriterionStats ae;

    const CriterionStats& of(Criterion criterion) const;
};

// Throws EmptyInput.
DatasetStats dataset_stats(std::span<const ScoredConversation> scores);
CriterionStats summarize(std::span<const double> values);

// Seeker type (row) by supporter type (column), both in all_mbti_types() order.
struct PairMatrix {
    std::array<std::array<std::optional<double>, MbtiType::kCount>, MbtiType::kCount> mean{};
    std::array<std::array<std::size_t, MbtiType::kCount>, MbtiType::kCount> count{};

    std::size_t present_cells() const;
};

// Throws EmptyInput.
PairMatrix mbti_pair_matrix(std::span<const ScoredConversation> scores, Criterion criterion);

// Header row and column of MBTI codes; absent cells are left empty.
std::string pair_matrix_csv(const PairMatrix& matrix);

// Sample Pearson correlation. Throws LengthMismatch or ZeroVariance.
double pearson(std::span<const double> x, std::span<const double> y);

// Scores JSONL: {conversation_id, seeker_mbti, supporter_mbti, ei, ps, ae}.
void save_scores(const std::filesystem::path& path, std::span<const ScoredConversation> scores);
std::vector<ScoredConversation> load_scores(const std::filesystem::path& path);

}  // namespace s2conv
