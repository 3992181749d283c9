#pragma once

namespace s2conv {

inline constexpr int kMinScore = 1;
inline constexpr int kMaxScore = 5;

// Emotional Improvement, Problem Solving and Active Engagement on the 1-5
// scale (1=poor, 2=weak, 3=moderate, 4=strong, 5=excellent).
struct EvalScores {
    int ei = kMinScore;
    int ps = kMinScore;
    int ae = kMinScore;

    bool valid() const {
        const auto ok = [](int v) { return v >= kMinScore && v <= kMaxScore; };
        return ok(ei) && ok(ps) && ok(ae);
    }

    friend bool operator==(const EvalScores&, const EvalScores&) = default;
};

}  // namespace s2conv
