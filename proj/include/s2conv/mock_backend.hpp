#pragma once

#include <chrono>
#include <memory>

#include "s2conv/llm.hpp"

namespace s2conv {

struct MockOptions {
    // Chance per probe turn that an agent without behavior presets answers
    // as an assistant; agents with presets slip at a fifth of this rate.
    double expiration_rate = 0.06;
    // Seeker turns before the simulated seeker may close the conversation.
    int min_exchanges_before_close = 3;
    // Delay added to every reply, for exercising clients against a slow model.
    std::chrono::milliseconds latency{0};
};

/**
 * Offline stand-in for a chat model. It recognises every prompt template the
 * engine sends (character creation, behavior presets, seeker and supporter
 * role-play, judging, name probes) and answers deterministically from the
 * request seed and content. No network access.
 */
std::unique_ptr<ChatBackend> make_mock_backend(const MockOptions& options = {});

}  // namespace s2conv
