#include <gtest/gtest.h>

#include <random>

#include "fixtures.hpp"
#include "s2conv/error.hpp"
#include "s2conv/evaluator.hpp"
#include "s2conv/mock_backend.hpp"

using namespace s2conv;
namespace oracle = s2conv::testing::oracle;

namespace {

Conversation two_turns(const std::string& id = "ISTP-001__ENFJ-001") {
    return {id,
            "ISTP-001",
            "ENFJ-001",
            {{Speaker::Seeker, "I may lose my shop.", std::nullopt, 0},
             {Speaker::Supporter, "That sounds frightening.", "recent_troubles", 1}},
            ConversationStatus::Closed};
}

std::vector<ScoredConversation> random_scores(std::size_t n, std::uint32_t seed) {
    std::mt19937 rng(seed);
    std::uniform_int_distribution<int> score(1, 5), type(0, 15);
    std::vector<ScoredConversation> out;
    for (std::size_t i = 0; i < n; ++i) {
        out.push_back({"c" + std::to_string(i), all_mbti_types()[type(rng)], all_mbti_types()[type(rng)],
                       {score(rng), score(rng), score(rng)}});
    }
    return out;
}

}  // namespace

TEST(JudgeReply, ParsesCanonicalAndLooseForms) {
    EXPECT_EQ(parse_judge_reply("EI:4 PS:3 AE:5"), (EvalScores{4, 3, 5}));
    EXPECT_EQ(parse_judge_reply("Sure. ei: 2, ps: 1; ae:3\n"), (EvalScores{2, 1, 3}));
    EXPECT_EQ(parse_judge_reply("EI:9 PS:0 AE:-2"), (EvalScores{5, 1, 1}));
    EXPECT_EQ(parse_judge_reply("EI:99999999999999999999 PS:3 AE:3"), (EvalScores{5, 3, 3}));
    EXPECT_THROW(parse_judge_reply("EI:4 PS:3"), MalformedOutput);
    EXPECT_THROW(parse_judge_reply("four, three, five"), MalformedOutput);
}

TEST(JudgeReply, CriterionNames) {
    EXPECT_EQ(parse_criterion("ei"), Criterion::EI);
    EXPECT_EQ(parse_criterion(" PS "), Criterion::PS);
    EXPECT_EQ(to_string(Criterion::AE), "AE");
    EXPECT_THROW(parse_criterion("xx"), SchemaError);
    EXPECT_EQ(score_of({1, 2, 3}, Criterion::PS), 2);
}

TEST(Judge, PromptContainsTranscriptAndScale) {
    const auto prompt = judge_prompt(two_turns());
    EXPECT_NE(prompt.find("Seeker: I may lose my shop.\nSupporter: That sounds frightening."), std::string::npos);
    EXPECT_NE(prompt.find("EI:<integer> PS:<integer> AE:<integer>"), std::string::npos);
}

TEST(Judge, RetriesThenFails) {
    ReplayBackend ok(std::vector<ReplayBackend::Step>{{"Seeker:", "I think EI:3 PS:2 AE:4"}});
    EXPECT_EQ(judge_conversation(two_turns(), ok), (EvalScores{3, 2, 4}));

    ReplayBackend repaired({{"", "great chat"}, {"", "EI:1 PS:1 AE:2"}});
    EXPECT_EQ(judge_conversation(two_turns(), repaired), (EvalScores{1, 1, 2}));

    ReplayBackend junk({{"", "a"}, {"", "b"}, {"", "c"}});
    EXPECT_THROW(judge_conversation(two_turns(), junk), MalformedJudgeOutput);

    auto short_conv = two_turns();
    short_conv.turns.pop_back();
    EXPECT_THROW(judge_conversation(short_conv, ok), SchemaError);
}

TEST(Judge, DatasetKeepsOrderAndRecordsFailures) {
    const auto bank = s2conv::testing::fixture_bank();
    std::vector<Conversation> convs = {two_turns("a"), two_turns("b"), two_turns("c")};
    RulebookBackend backend;
    backend.set_default([](std::span<const ChatMessage> m, const GenerationParams&) {
        return m.front().content.find("lose my shop") != std::string::npos && m.size() == 1
                   ? std::string("EI:4 PS:4 AE:4")
                   : std::string("nope");
    });
    const auto result = judge_dataset(convs, bank, backend, 1, {}, 2);
    ASSERT_EQ(result.scored.size(), 3u);
    EXPECT_EQ(result.scored[1].conversation_id, "b");
    EXPECT_EQ(result.scored[0].seeker_mbti, parse_mbti("ISTP"));
    EXPECT_EQ(result.scored[0].supporter_mbti, parse_mbti("ENFJ"));

    RulebookBackend broken("nonsense");
    const auto failed = judge_dataset(convs, bank, broken, 1);
    EXPECT_TRUE(failed.scored.empty());
    EXPECT_EQ(failed.failed.size(), 3u);
}

TEST(Judge, MockScoresAreValidAndDeterministic) {
    auto mock = make_mock_backend();
    const auto bank = s2conv::testing::fixture_bank();
    const std::vector<Conversation> convs = {two_turns("x"), two_turns("y")};
    const auto a = judge_dataset(convs, bank, *mock, 5);
    const auto b = judge_dataset(convs, bank, *mock, 5, {}, 2);
    EXPECT_EQ(a.scored, b.scored);
    for (const auto& s : a.scored) EXPECT_TRUE(s.scores.valid());
}

TEST(Statistics, MatchIndependentOracle) {
    for (std::uint32_t seed : {1u, 2u, 3u, 4u}) {
        const auto scores = random_scores(50 + seed * 97, seed);
        const auto stats = dataset_stats(scores);
        EXPECT_EQ(stats.count, scores.size());
        for (const auto c : kCriteria) {
            std::vector<double> xs;
            for (const auto& s : scores) xs.push_back(score_of(s.scores, c));
            const auto m = oracle::population_moments(xs);
            EXPECT_NEAR(stats.of(c).avg, m.avg, 1e-9);
            EXPECT_NEAR(stats.of(c).min, m.min, 1e-9);
            EXPECT_NEAR(stats.of(c).max, m.max, 1e-9);
            EXPECT_NEAR(stats.of(c).std, m.std, 1e-9);
        }
    }
}

TEST(Statistics, HandComputedSummary) {
    const std::vector<double> v = {2, 4, 4, 4, 5, 5, 7, 9};
    const auto s = summarize(v);
    EXPECT_DOUBLE_EQ(s.avg, 5.0);
    EXPECT_DOUBLE_EQ(s.std, 2.0);
    EXPECT_DOUBLE_EQ(s.min, 2.0);
    EXPECT_DOUBLE_EQ(s.max, 9.0);
    const std::vector<double> one = {3};
    EXPECT_DOUBLE_EQ(summarize(one).std, 0.0);
    EXPECT_THROW(summarize(std::vector<double>{}), EmptyInput);
    EXPECT_THROW(dataset_stats({}), EmptyInput);
}

TEST(Statistics, Compatibility) {
    EXPECT_DOUBLE_EQ(compatibility({3, 4, 5}), 4.0);
    EXPECT_DOUBLE_EQ(compatibility({1, 1, 2}), 4.0 / 3.0);
}

TEST(PairMatrixTest, CellsAreMeansOverMatchingRecords) {
    const auto scores = random_scores(400, 9);
    for (const auto c : kCriteria) {
        const auto m = mbti_pair_matrix(scores, c);
        std::size_t total = 0;
        for (std::size_t r = 0; r < 16; ++r) {
            for (std::size_t k = 0; k < 16; ++k) {
                double sum = 0;
                std::size_t n = 0;
                for (const auto& s : scores) {
                    if (s.seeker_mbti == all_mbti_types()[r] && s.supporter_mbti == all_mbti_types()[k]) {
                        sum += score_of(s.scores, c);
                        ++n;
                    }
                }
                EXPECT_EQ(m.count[r][k], n);
                total += n;
                if (n == 0) {
                    EXPECT_FALSE(m.mean[r][k].has_value());
                } else {
                    EXPECT_NEAR(*m.mean[r][k], sum / static_cast<double>(n), 1e-12);
                }
            }
        }
        EXPECT_EQ(total, scores.size());
    }
}

TEST(PairMatrixTest, IndependentOfRecordOrder) {
    auto scores = random_scores(300, 12);
    const auto before = mbti_pair_matrix(scores, Criterion::EI);
    std::shuffle(scores.begin(), scores.end(), std::mt19937(3));
    const auto after = mbti_pair_matrix(scores, Criterion::EI);
    EXPECT_EQ(before.mean, after.mean);
    EXPECT_EQ(pair_matrix_csv(before), pair_matrix_csv(after));
}

TEST(PairMatrixTest, CsvLayout) {
    const std::vector<ScoredConversation> one = {{"a", parse_mbti("ESTJ"), parse_mbti("INFP"), {2, 3, 4}}};
    const auto m = mbti_pair_matrix(one, Criterion::PS);
    EXPECT_EQ(m.present_cells(), 1u);
    const auto csv = pair_matrix_csv(m);
    EXPECT_EQ(std::count(csv.begin(), csv.end(), '\n'), 17);
    EXPECT_EQ(csv.rfind("seeker\\supporter,ENFJ,", 0), 0u);
    const auto row = csv.find("\nESTJ,");
    ASSERT_NE(row, std::string::npos);
    const auto line = csv.substr(row + 1, csv.find('\n', row + 1) - row - 1);
    // INFP is the tenth code in canonical order.
    EXPECT_EQ(line, "ESTJ" + std::string(10, ',') + "3.0000" + std::string(6, ','));
    EXPECT_THROW(mbti_pair_matrix({}, Criterion::EI), EmptyInput);
}

TEST(Pearson, MatchesDefinitionOnRandomData) {
    std::mt19937 rng(77);
    std::normal_distribution<double> noise(0.0, 1.0);
    for (int trial = 0; trial < 50; ++trial) {
        std::vector<double> x, y;
        const int n = 3 + trial;
        for (int i = 0; i < n; ++i) {
            x.push_back(noise(rng));
            y.push_back(0.3 * x.back() + noise(rng));
        }
        const double r = pearson(x, y);
        EXPECT_NEAR(r, oracle::pearson_definition(x, y), 1e-9);
        EXPECT_NEAR(r, pearson(y, x), 1e-12);
        std::vector<double> scaled;
        for (double v : x) scaled.push_back(2.5 * v - 7.0);
        EXPECT_NEAR(pearson(scaled, y), r, 1e-9);
    }
}

TEST(Pearson, ExactAndDegenerateCases) {
    const std::vector<double> x = {1, 2, 3, 4};
    EXPECT_EQ(pearson(x, std::vector<double>{2, 4, 6, 8}), 1.0);
    EXPECT_EQ(pearson(x, std::vector<double>{8, 6, 4, 2}), -1.0);
    const std::vector<double> five = {1, 2, 3, 4, 5};
    EXPECT_EQ(pearson(five, std::vector<double>{3, 5, 7, 9, 11}), 1.0);
    EXPECT_EQ(pearson(five, std::vector<double>{10, 8, 6, 4, 2}), -1.0);
    EXPECT_THROW(pearson(x, std::vector<double>{1, 1, 1, 1}), ZeroVariance);
    EXPECT_THROW(pearson(x, std::vector<double>{1, 2}), LengthMismatch);
    EXPECT_THROW(pearson(std::vector<double>{1}, std::vector<double>{1}), LengthMismatch);
}

TEST(ScoresFile, RoundTrip) {
    s2conv::testing::TempDir dir;
    const auto scores = random_scores(20, 1);
    save_scores(dir / "s.jsonl", scores);
    EXPECT_EQ(load_scores(dir / "s.jsonl"), scores);
    std::ofstream(dir / "bad.jsonl") << R"({"conversation_id":"a","seeker_mbti":"XXXX","supporter_mbti":"INTP","ei":1,"ps":1,"ae":1})"
                                     << "\n";
    EXPECT_THROW(load_scores(dir / "bad.jsonl"), SchemaError);
}
