#pragma once

#include <filesystem>
#include <span>
#include <string>
#include <utility>
#include <vector>

#include <Eigen/Dense>

#include "s2conv/character.hpp"
#include "s2conv/llm.hpp"
#include "s2conv/turn.hpp"

namespace s2conv {

inline constexpr int kDefaultMemoryWindow = 2;
// Scores closer than this are treated as tied; the smaller aspect name wins.
inline constexpr double kScoreTieTolerance = 1e-12;

struct MemorySelection {
    std::string aspect;
    std::string content;
    double score = 0.0;
    std::vector<std::pair<std::string, double>> scores_all;  // memory map order
};

// Square projection applied to both query and aspect embeddings before the
// cosine. The identity reproduces the plain embedding cosine.
struct MemoryReranker {
    Eigen::MatrixXd weights;

    static MemoryReranker identity(std::size_t dim);
    std::size_t dim() const { return static_cast<std::size_t>(weights.rows()); }
};

// "<aspect>: <content>", the text embedded for each memory aspect.
std::string aspect_text(const std::string& aspect, const std::string& content);

// Newline-joined text of the last `window` turns.
std::string context_query(std::span<const ChatTurn> context_turns, int window);

/**
 * Picks the memory aspect whose "<aspect>: <content>" embedding is most
 * cosine-similar to the recent context. Throws EmptyMemory, EmptyContext,
 * and DimensionMismatch when a reranker does not fit the embedder.
 */
MemorySelection select_memory(std::span<const ChatTurn> context_turns, const OrderedTextMap& memory,
                              const Embedder& embedder, int window = kDefaultMemoryWindow,
                              const MemoryReranker* reranker = nullptr);

// Same selection rule over an explicit query text.
MemorySelection select_memory_for_query(const std::string& query, const OrderedTextMap& memory,
                                        const Embedder& embedder,
                                        const MemoryReranker* reranker = nullptr);

struct SelectorExample {
    std::string context;
    OrderedTextMap memory;
    std::string gold_aspect;
};

struct RerankerTraining {
    MemoryReranker reranker;
    std::vector<double> loss_trace;  // loss before each epoch, plus the final loss
};

// Softmax temperature applied to the projected cosines during training.
inline constexpr double kRerankerLogitScale = 10.0;

/**
 * Learns the projection by full-batch gradient descent on softmax
 * cross-entropy over each example's aspects. Starts from the identity and
 * returns the lowest-loss weights seen, so the final loss never exceeds the
 * initial one.
 */
RerankerTraining train_selector_reranker(std::span<const SelectorExample> examples,
                                         const Embedder& embedder, int epochs, double lr);

double reranker_loss(const MemoryReranker& reranker, std::span<const SelectorExample> examples,
                     const Embedder& embedder);

// JSON {dim, rows: [[...], ...]}.
void save_reranker(const MemoryReranker& reranker, const std::filesystem::path& path);
MemoryReranker load_reranker(const std::filesystem::path& path);

}  // namespace s2conv
