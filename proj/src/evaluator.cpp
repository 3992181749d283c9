#include "s2conv/evaluator.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <regex>

#include <nlohmann/json.hpp>
#include <spdlog/spdlog.h>

#include "s2conv/assets.hpp"
#include "s2conv/error.hpp"
#include "s2conv/parallel.hpp"
#include "s2conv/structured_output.hpp"
#include "s2conv/text.hpp"

namespace s2conv {

std::string_view to_string(Criterion criterion) {
    switch (criterion) {
        case Criterion::EI: return "EI";
        case Criterion::PS: return "PS";
        case Criterion::AE: return "AE";
    }
    return "?";
}

Criterion parse_criterion(std::string_view text) {
    const std::string up = to_upper(trim(text));
    for (const auto c : kCriteria) {
        if (up == to_string(c)) {
            return c;
        }
    }
    throw SchemaError("unknown criterion '" + std::string(text) + "' (expected ei, ps or ae)");
}

int score_of(const EvalScores& scores, Criterion criterion) {
    switch (criterion) {
        case Criterion::EI: return scores.ei;
        case Criterion::PS: return scores.ps;
        case Criterion::AE: return scores.ae;
    }
    return 0;
}

// ---------------------------------------------------------------- judging

std::string judge_prompt(const Conversation& conversation) {
    std::string transcript;
    for (const auto& t : conversation.turns) {
        transcript += t.speaker == Speaker::Seeker ? "Seeker: " : "Supporter: ";
        transcript += t.text;
        transcript += '\n';
    }
    if (!transcript.empty()) {
        transcript.pop_back();
    }
    return render_template(load_template("judge"), {{"transcript", transcript}});
}

EvalScores parse_judge_reply(std::string_view reply) {
    static const std::regex pattern(
        R"(EI\s*:\s*(-?\d+)\s*[,;]?\s*PS\s*:\s*(-?\d+)\s*[,;]?\s*AE\s*:\s*(-?\d+))", std::regex::icase);
    std::cmatch m;
    if (!std::regex_search(reply.data(), reply.data() + reply.size(), m, pattern)) {
        throw MalformedOutput("judge reply lacks the \"EI:<n> PS:<n> AE:<n>\" line");
    }
    const auto clamp = [](const std::string& digits, std::string_view label) {
        long v = 0;
        try {
            v = std::stol(digits);
        } catch (const std::out_of_range&) {
            v = digits.starts_with('-') ? kMinScore - 1 : kMaxScore + 1;
        }
        const long c = std::clamp<long>(v, kMinScore, kMaxScore);
        if (c != v) {
            spdlog::warn("judge gave {}={} outside [{}, {}]; clamped to {}", label, digits, kMinScore,
                         kMaxScore, c);
        }
        return static_cast<int>(c);
    };
    return {clamp(m[1].str(), "EI"), clamp(m[2].str(), "PS"), clamp(m[3].str(), "AE")};
}

EvalScores judge_conversation(const Conversation& conversation, ChatBackend& backend,
                              const JudgeOptions& options) {
    if (conversation.turns.size() < 2) {
        throw SchemaError("conversation '" + conversation.id + "' needs at least two turns to be judged");
    }
    std::vector<ChatMessage> messages{{Role::User, judge_prompt(conversation)}};
    try {
        return complete_with_repair(backend, std::move(messages), options.params, options.repair_retries,
                                    [](const std::string& reply) { return parse_judge_reply(reply); });
    } catch (const MalformedOutput& e) {
        throw MalformedJudgeOutput("conversation '" + conversation.id + "': " + e.what());
    }
}

JudgeResult judge_dataset(std::span<const Conversation> conversations, const CharacterBank& bank,
                          ChatBackend& backend, std::uint64_t seed, const JudgeOptions& options,
                          int parallelism) {
    std::vector<std::optional<ScoredConversation>> scored(conversations.size());
    std::vector<std::optional<JudgeFailure>> failed(conversations.size());
    parallel_for(conversations.size(), parallelism, [&](std::size_t i) {
        const auto& c = conversations[i];
        const MbtiType seeker = bank.at(c.seeker_id).mbti;
        const MbtiType supporter = bank.at(c.supporter_id).mbti;
        JudgeOptions per = options;
        per.params.seed = mix_seed(seed, fnv1a(c.id));
        try {
            scored[i] = ScoredConversation{c.id, seeker, supporter, judge_conversation(c, backend, per)};
        } catch (const MalformedJudgeOutput& e) {
            spdlog::warn("{}", e.what());
            failed[i] = JudgeFailure{c.id, e.what()};
        }
    });
    JudgeResult out;
    for (std::size_t i = 0; i < conversations.size(); ++i) {
        if (scored[i]) {
            out.scored.push_back(std::move(*scored[i]));
        } else if (failed[i]) {
            out.failed.push_back(std::move(*failed[i]));
        }
    }
    return out;
}

// ------------------------------------------------------------- statistics

double compatibility(const EvalScores& scores) {
    return static_cast<double>(scores.ei + scores.ps + scores.ae) / 3.0;
}

const CriterionStats& DatasetStats::of(Criterion criterion) const {
    switch (criterion) {
        case Criterion::EI: return ei;
        case Criterion::PS: return ps;
        case Criterion::AE: return ae;
    }
    return ei;
}

CriterionStats summarize(std::span<const double> values) {
    if (values.empty()) {
        throw EmptyInput("cannot summarize an empty list");
    }
    CriterionStats s;
    const auto [lo, hi] = std::minmax_element(values.begin(), values.end());
    s.min = *lo;
    s.max = *hi;
    double sum = 0.0;
    for (const double v : values) {
        sum += v;
    }
    const auto n = static_cast<double>(values.size());
    s.avg = sum / n;
    double ss = 0.0;
    for (const double v : values) {
        ss += (v - s.avg) * (v - s.avg);
    }
    s.std = std::sqrt(ss / n);
    return s;
}

DatasetStats dataset_stats(std::span<const ScoredConversation> scores) {
    if (scores.empty()) {
        throw EmptyInput("dataset_stats needs at least one scored conversation");
    }
    DatasetStats out;
    out.count = scores.size();
    std::vector<double> values(scores.size());
    for (const auto c : kCriteria) {
        for (std::size_t i = 0; i < scores.size(); ++i) {
            values[i] = score_of(scores[i].scores, c);
        }
        const auto s = summarize(values);
        switch (c) {
            case Criterion::EI: out.ei = s; break;
            case Criterion::PS: out.ps = s; break;
            case Criterion::AE: out.ae = s; break;
        }
    }
    return out;
}

namespace {

std::size_t type_index(MbtiType t) {
    const auto& all = all_mbti_types();
    return static_cast<std::size_t>(std::find(all.begin(), all.end(), t) - all.begin());
}

}  // namespace

std::size_t PairMatrix::present_cells() const {
    std::size_t n = 0;
    for (const auto& row : mean) {
        n += static_cast<std::size_t>(std::count_if(row.begin(), row.end(), [](auto v) { return v.has_value(); }));
    }
    return n;
}

PairMatrix mbti_pair_matrix(std::span<const ScoredConversation> scores, Criterion criterion) {
    if (scores.empty()) {
        throw EmptyInput("mbti_pair_matrix needs at least one scored conversation");
    }
    // Integer sums keep the cell means independent of record order.
    std::array<std::array<long long, MbtiType::kCount>, MbtiType::kCount> sums{};
    PairMatrix m;
    for (const auto& s : scores) {
        const auto r = type_index(s.seeker_mbti);
        const auto c = type_index(s.supporter_mbti);
        sums[r][c] += score_of(s.scores, criterion);
        ++m.count[r][c];
    }
    for (std::size_t r = 0; r < MbtiType::kCount; ++r) {
        for (std::size_t c = 0; c < MbtiType::kCount; ++c) {
            if (m.count[r][c] > 0) {
                m.mean[r][c] = static_cast<double>(sums[r][c]) / static_cast<double>(m.count[r][c]);
            }
        }
    }
    return m;
}

std::string pair_matrix_csv(const PairMatrix& matrix) {
    const auto& all = all_mbti_types();
    std::string out = "seeker\\supporter";
    for (const auto t : all) {
        out += "," + t.str();
    }
    out += '\n';
    char buf[32];
    for (std::size_t r = 0; r < MbtiType::kCount; ++r) {
        out += all[r].str();
        for (std::size_t c = 0; c < MbtiType::kCount; ++c) {
            out += ',';
            if (const auto& v = matrix.mean[r][c]) {
                std::snprintf(buf, sizeof buf, "%.4f", *v);
                out += buf;
            }
        }
        out += '\n';
    }
    return out;
}

double pearson(std::span<const double> x, std::span<const double> y) {
    if (x.size() != y.size()) {
        throw LengthMismatch("pearson inputs differ in length (" + std::to_string(x.size()) + " vs " +
                             std::to_string(y.size()) + ")");
    }
    if (x.size() < 2) {
        throw LengthMismatch("pearson needs at least two paired values");
    }
    const auto n = static_cast<double>(x.size());
    double mx = 0.0;
    double my = 0.0;
    for (std::size_t i = 0; i < x.size(); ++i) {
        mx += x[i];
        my += y[i];
    }
    mx /= n;
    my /= n;
    double sxy = 0.0;
    double sxx = 0.0;
    double syy = 0.0;
    for (std::size_t i = 0; i < x.size(); ++i) {
        const double dx = x[i] - mx;
        const double dy = y[i] - my;
        sxy += dx * dy;
        sxx += dx * dx;
        syy += dy * dy;
    }
    if (sxx == 0.0 || syy == 0.0) {
        throw ZeroVariance("pearson is undefined when an input is constant");
    }
    return std::clamp(sxy / std::sqrt(sxx * syy), -1.0, 1.0);
}

// ------------------------------------------------------------------ files

void save_scores(const std::filesystem::path& path, std::span<const ScoredConversation> scores) {
    std::string content;
    for (const auto& s : scores) {
        nlohmann::ordered_json j;
        j["conversation_id"] = s.conversation_id;
        j["seeker_mbti"] = s.seeker_mbti.str();
        j["supporter_mbti"] = s.supporter_mbti.str();
        j["ei"] = s.scores.ei;
        j["ps"] = s.scores.ps;
        j["ae"] = s.scores.ae;
        content += j.dump() + "\n";
    }
    write_text_file(path, content);
}

std::vector<ScoredConversation> load_scores(const std::filesystem::path& path) {
    std::ifstream in(path);
    if (!in) {
        throw IoError("cannot open scores file " + path.string());
    }
    std::vector<ScoredConversation> out;
    std::string line;
    std::size_t line_no = 0;
    while (std::getline(in, line)) {
        ++line_no;
        if (trim(line).empty()) {
            continue;
        }
        const std::string where = path.string() + ":" + std::to_string(line_no);
        try {
            const auto j = nlohmann::json::parse(line);
            ScoredConversation s{j.at("conversation_id").get<std::string>(),
                                 parse_mbti(j.at("seeker_mbti").get<std::string>()),
                                 parse_mbti(j.at("supporter_mbti").get<std::string>()),
                                 {j.at("ei").get<int>(), j.at("ps").get<int>(), j.at("ae").get<int>()}};
            if (!s.scores.valid()) {
                throw SchemaError(where + ": scores must be integers in [1, 5]");
            }
            out.push_back(std::move(s));
        } catch (const nlohmann::json::exception& e) {
            throw SchemaError(where + ": " + e.what());
        } catch (const InvalidMbti& e) {
            throw SchemaError(where + ": " + e.what());
        }
    }
    return out;
}

}  // namespace s2conv
