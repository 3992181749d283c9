#include <gtest/gtest.h>

#include <random>

#include "fixtures.hpp"
#include "s2conv/error.hpp"
#include "s2conv/memory_selector.hpp"

using namespace s2conv;
namespace oracle = s2conv::testing::oracle;

namespace {

const std::vector<std::string> kWords = {"mother", "father", "job", "exam", "sleep", "moved", "friend",
                                         "money",  "school", "lost", "grew", "sister", "fear",  "hope",
                                         "boss",   "garden", "rain", "city", "night", "music"};

std::string random_sentence(std::mt19937& rng, int min_words, int max_words) {
    std::uniform_int_distribution<int> len(min_words, max_words);
    std::uniform_int_distribution<std::size_t> pick(0, kWords.size() - 1);
    std::string out;
    const int n = len(rng);
    for (int i = 0; i < n; ++i) {
        if (!out.empty()) out += ' ';
        out += kWords[pick(rng)];
    }
    return out;
}

std::vector<ChatTurn> turns_of(const std::vector<std::string>& texts) {
    std::vector<ChatTurn> out;
    for (std::size_t i = 0; i < texts.size(); ++i) {
        out.push_back({i % 2 == 0 ? Speaker::Seeker : Speaker::Supporter, texts[i], std::nullopt, i});
    }
    return out;
}

}  // namespace

TEST(MemorySelector, ContextQueryTakesTheLastWindowTurns) {
    const auto turns = turns_of({"a", "b", "c"});
    EXPECT_EQ(context_query(turns, 2), "b\nc");
    EXPECT_EQ(context_query(turns, 1), "c");
    EXPECT_EQ(context_query(turns, 10), "a\nb\nc");
    EXPECT_EQ(aspect_text("family_relationship", "x"), "family_relationship: x");
}

TEST(MemorySelector, PicksTheObviousAspect) {
    const HashingEmbedder embedder;
    const OrderedTextMap memory = {{"recent_troubles", "my boss fired me from the job"},
                                   {"growth_experience", "I grew up in a small city"},
                                   {"family_relationship", "my sister and I are close"}};
    const auto turns = turns_of({"hello there", "how is your sister doing? my sister worries me"});
    const auto sel = select_memory(turns, memory, embedder);
    EXPECT_EQ(sel.aspect, "family_relationship");
    EXPECT_EQ(sel.content, "my sister and I are close");
    ASSERT_EQ(sel.scores_all.size(), 3u);
    EXPECT_EQ(sel.scores_all[0].first, "recent_troubles");
    for (const auto& [aspect, s] : sel.scores_all) EXPECT_LE(s, sel.score + 1e-12) << aspect;
}

TEST(MemorySelector, MatchesBruteForceOracleOnRandomCases) {
    std::mt19937 rng(2024);
    for (const std::size_t dim : {32u, 256u}) {
        const HashingEmbedder embedder(dim);
        for (int trial = 0; trial < 150; ++trial) {
            std::vector<std::pair<std::string, std::string>> raw;
            OrderedTextMap memory;
            const int aspects = 1 + trial % 5;
            for (int a = 0; a < aspects; ++a) {
                const std::string name = "aspect_" + std::string(1, static_cast<char>('e' - a));
                const auto content = random_sentence(rng, 1, 6);
                raw.emplace_back(name, content);
                memory.push_back(name, content);
            }
            std::vector<std::string> texts;
            const int n = 1 + trial % 4;
            for (int t = 0; t < n; ++t) texts.push_back(random_sentence(rng, 1, 8));
            const auto turns = turns_of(texts);
            const std::size_t take = std::min<std::size_t>(2, texts.size());
            std::string query;
            for (std::size_t i = texts.size() - take; i < texts.size(); ++i) {
                query += (query.empty() ? "" : "\n") + texts[i];
            }
            EXPECT_EQ(select_memory(turns, memory, embedder).aspect, oracle::best_aspect(query, raw, dim))
                << "dim " << dim << " trial " << trial;
        }
    }
}

TEST(MemorySelector, TiesGoToTheSmallerAspectName) {
    const HashingEmbedder embedder;
    // Identical content under different names gives identical scores except
    // for the name token, so use names that hash like nothing in the query.
    const OrderedTextMap memory = {{"zeta", "rain"}, {"alpha", "rain"}};
    const auto a = select_memory_for_query("sunshine", memory, embedder);
    const std::vector<std::pair<std::string, std::string>> raw = {{"zeta", "rain"}, {"alpha", "rain"}};
    EXPECT_EQ(a.aspect, oracle::best_aspect("sunshine", raw));
    if (std::abs(a.scores_all[0].second - a.scores_all[1].second) <= kScoreTieTolerance) {
        EXPECT_EQ(a.aspect, "alpha");
    }
}

TEST(MemorySelector, InvariantToMemoryOrder) {
    std::mt19937 rng(5);
    const HashingEmbedder embedder;
    for (int trial = 0; trial < 40; ++trial) {
        std::vector<OrderedTextMap::Entry> entries;
        for (int a = 0; a < 4; ++a) entries.emplace_back("m" + std::to_string(a), random_sentence(rng, 1, 5));
        const auto query = random_sentence(rng, 2, 6);
        OrderedTextMap forward, backward;
        for (const auto& [k, v] : entries) forward.push_back(k, v);
        for (auto it = entries.rbegin(); it != entries.rend(); ++it) backward.push_back(it->first, it->second);
        EXPECT_EQ(select_memory_for_query(query, forward, embedder).aspect,
                  select_memory_for_query(query, backward, embedder).aspect);
    }
}

TEST(MemorySelector, IdentityRerankerReproducesPlainCosine) {
    std::mt19937 rng(8);
    const HashingEmbedder embedder(64);
    const auto identity = MemoryReranker::identity(64);
    for (int trial = 0; trial < 30; ++trial) {
        OrderedTextMap memory;
        for (int a = 0; a < 3; ++a) memory.push_back("k" + std::to_string(a), random_sentence(rng, 1, 5));
        const auto query = random_sentence(rng, 1, 6);
        const auto plain = select_memory_for_query(query, memory, embedder);
        const auto reranked = select_memory_for_query(query, memory, embedder, &identity);
        EXPECT_EQ(plain.aspect, reranked.aspect);
        for (std::size_t i = 0; i < 3; ++i) {
            EXPECT_NEAR(plain.scores_all[i].second, reranked.scores_all[i].second, 1e-12);
        }
    }
}

TEST(MemorySelector, ErrorCases) {
    const HashingEmbedder embedder(64);
    const OrderedTextMap memory = {{"a", "b"}};
    EXPECT_THROW(select_memory(turns_of({"x"}), OrderedTextMap{}, embedder), EmptyMemory);
    EXPECT_THROW(select_memory({}, memory, embedder), EmptyContext);
    EXPECT_THROW(select_memory_for_query("   ", memory, embedder), EmptyContext);
    const auto wrong = MemoryReranker::identity(32);
    EXPECT_THROW(select_memory_for_query("x", memory, embedder, &wrong), DimensionMismatch);
}

namespace {

// Contexts mention one cue word; the gold aspect is tied to the cue only
// through the training labels, never through shared tokens.
std::vector<SelectorExample> cue_examples() {
    const OrderedTextMap memory = {{"recent_troubles", "money boss"},
                                   {"growth_experience", "school grew"},
                                   {"family_relationship", "mother sister"}};
    const std::vector<std::pair<std::string, std::string>> cues = {
        {"rain night", "recent_troubles"}, {"garden music", "growth_experience"}, {"city fear", "family_relationship"}};
    std::vector<SelectorExample> out;
    for (const auto& [context, gold] : cues) out.push_back({context, memory, gold});
    return out;
}

}  // namespace

TEST(SelectorReranker, TrainingLowersLossAndFitsCues) {
    const HashingEmbedder embedder(32);
    const auto examples = cue_examples();
    const double before = reranker_loss(MemoryReranker::identity(32), examples, embedder);
    const auto trained = train_selector_reranker(examples, embedder, 300, 0.5);
    ASSERT_EQ(trained.loss_trace.size(), 301u);
    EXPECT_DOUBLE_EQ(trained.loss_trace.front(), before);
    const double after = reranker_loss(trained.reranker, examples, embedder);
    EXPECT_LE(after, before);
    EXPECT_LT(after, 0.5 * before);
    const auto best = *std::min_element(trained.loss_trace.begin(), trained.loss_trace.end());
    EXPECT_NEAR(after, best, 1e-12);
    for (const auto& ex : examples) {
        EXPECT_EQ(select_memory_for_query(ex.context, ex.memory, embedder, &trained.reranker).aspect, ex.gold_aspect);
    }
}

TEST(SelectorReranker, ZeroEpochsKeepsIdentity) {
    const HashingEmbedder embedder(16);
    const auto trained = train_selector_reranker(cue_examples(), embedder, 0, 0.5);
    EXPECT_TRUE(trained.reranker.weights.isApprox(Eigen::MatrixXd::Identity(16, 16)));
    EXPECT_EQ(trained.loss_trace.size(), 1u);
}

TEST(SelectorReranker, RejectsBadExamples) {
    const HashingEmbedder embedder(16);
    EXPECT_THROW(train_selector_reranker({}, embedder, 1, 0.1), EmptyInput);
    auto bad = cue_examples();
    bad[0].gold_aspect = "nope";
    EXPECT_THROW(train_selector_reranker(bad, embedder, 1, 0.1), SchemaError);
}

TEST(SelectorReranker, FileRoundTrip) {
    s2conv::testing::TempDir dir;
    const HashingEmbedder embedder(16);
    const auto trained = train_selector_reranker(cue_examples(), embedder, 5, 0.5);
    save_reranker(trained.reranker, dir / "r.json");
    const auto back = load_reranker(dir / "r.json");
    EXPECT_TRUE(back.weights.isApprox(trained.reranker.weights, 1e-15));
    std::ofstream(dir / "bad.json") << R"({"dim": 2, "rows": [[1, 0]]})";
    EXPECT_THROW(load_reranker(dir / "bad.json"), SchemaError);
}
