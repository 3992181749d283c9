#pragma once

#include <cstdint>
#include <filesystem>
#include <optional>
#include <span>
#include <string>
#include <string_view>
#include <vector>

#include <Eigen/Dense>

#include "s2conv/character.hpp"
#include "s2conv/conversation.hpp"
#include "s2conv/evaluator.hpp"
#include "s2conv/llm.hpp"

namespace s2conv {

struct MatchExample {
    std::string seeker_id;
    std::string supporter_id;
    double compatibility = 0.0;
};

// Bilinear two-tower head: 1 + 4 * sigmoid(scale * e_s' W e_u + bias).
struct MatchModel {
    Eigen::MatrixXd w;
    double bias = 0.0;
    double scale = 1.0;
    std::string embedder_fingerprint;

    std::size_t dim() const { return static_cast<std::size_t>(w.rows()); }
    static MatchModel initial(std::size_t dim, std::string embedder_fingerprint = {});
};

// Embedding of the persona "attr: value" lines; memory is not part of it.
EmbeddingVector featurize(const CharacterProfile& profile, const Embedder& embedder);

// Throws DimensionMismatch.
double predict(const MatchModel& model, const EmbeddingVector& seeker, const EmbeddingVector& supporter);

inline constexpr int kDefaultMatcherEpochs = 200;
inline constexpr double kDefaultMatcherLearningRate = 0.05;

inline constexpr double kMatcherPreconditionRidge = 0.01;

enum class MatcherOptimizer {
    GradientDescent,  // W -= lr * G
    Preconditioned,   // W -= lr * P G P, P = (F'F / n + ridge I)^-1 over training characters
};

struct MatcherTraining {
    MatchModel model;                 // parameters with the lowest training loss seen
    std::vector<double> loss_trace;   // MSE before each epoch's update, then after the last
    double best_loss = 0.0;
};

/**
 * Full-batch gradient descent on mean squared error from W = I, bias = 0,
 * scale = 1. The default preconditions the W step with the inverse feature
 * second moment; bias and scale always take plain steps. Throws EmptyInput
 * for fewer than two examples, UnknownCharacter for ids missing from the
 * bank, NonFiniteLoss when training diverges. Training is deterministic;
 * `seed` is kept for interface stability.
 */
MatcherTraining train_matcher(std::span<const MatchExample> examples, const CharacterBank& bank,
                              const Embedder& embedder, int epochs = kDefaultMatcherEpochs,
                              double lr = kDefaultMatcherLearningRate, std::uint64_t seed = 0,
                              MatcherOptimizer optimizer = MatcherOptimizer::Preconditioned);

// Mean squared error of the model over the examples.
double matcher_loss(const MatchModel& model, std::span<const MatchExample> examples,
                    const CharacterBank& bank, const Embedder& embedder);

// Supporter features for a bank, computed once and shared read-only.
class FeatureIndex {
public:
    FeatureIndex(const CharacterBank& bank, const Embedder& embedder);

    const std::vector<std::string>& ids() const { return ids_; }
    const std::vector<EmbeddingVector>& features() const { return features_; }
    const EmbeddingVector* find(std::string_view id) const;
    std::size_t size() const { return ids_.size(); }

private:
    std::vector<std::string> ids_;
    std::vector<EmbeddingVector> features_;
};

struct MatchCandidate {
    std::string supporter_id;
    double score = 0.0;

    friend bool operator==(const MatchCandidate&, const MatchCandidate&) = default;
};

/**
 * Top-k supporters by predicted score, descending, ties by id ascending.
 * `exclude_id` (the seeker, when it is a bank member) is never returned.
 * Throws EmptyBank, or SchemaError unless 1 <= k <= bank size.
 */
std::vector<MatchCandidate> dispatch(const MatchModel& model, const EmbeddingVector& seeker,
                                     const FeatureIndex& index, std::size_t k,
                                     std::optional<std::string_view> exclude_id = std::nullopt);
std::vector<MatchCandidate> dispatch(const MatchModel& model, const CharacterProfile& seeker,
                                     const CharacterBank& bank, const Embedder& embedder, std::size_t k);
std::vector<MatchCandidate> dispatch(const MatchModel& model, std::string_view seeker_persona,
                                     const CharacterBank& bank, const Embedder& embedder, std::size_t k);

// Used when no trained model is available: a seeded shuffle of the bank with
// neutral scores. Same validation as dispatch.
std::vector<MatchCandidate> fallback_dispatch(std::string_view seeker_persona, const FeatureIndex& index,
                                              std::size_t k, std::uint64_t seed = 0);

// Training examples JSONL: {seeker_id, supporter_id, compatibility}.
void save_match_examples(const std::filesystem::path& path, std::span<const MatchExample> examples);
std::vector<MatchExample> load_match_examples(const std::filesystem::path& path);

// Joins judged scores with the dataset that produced them.
std::vector<MatchExample> match_examples_from(std::span<const Conversation> conversations,
                                              std::span<const ScoredConversation> scores);

// Model file: {dim, w, bias, scale, embedder}. Loading checks the embedder
// fingerprint when `expected_fingerprint` is given (SchemaError on mismatch).
void save_match_model(const MatchModel& model, const std::filesystem::path& path);
MatchModel load_match_model(const std::filesystem::path& path,
                            std::optional<std::string_view> expected_fingerprint = std::nullopt);

}  // namespace s2conv
