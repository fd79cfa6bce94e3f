#pragma once

// Rule-based rewards: boxed-answer accuracy plus the language-mode and
// latent-mode format rewards. All functions are pure and total over
// arbitrary input strings.

#include <iosfwd>
#include <string>
#include <vector>

namespace lst {

struct RewardBreakdown {
    double accuracy = 0.0;  // {0, 1}
    double format = 0.0;    // {-1, 0, 0.5, 1}
    double total = 0.0;     // accuracy + format
};

// Removes all whitespace, then leading '+' and leading zeros (keeping a
// single final zero).
std::string normalize_answer(const std::string& s);

// 1 iff a \boxed{...} whose normalized content equals the normalized gold
// answer appears inside the first <answer>...</answer> block.
double accuracy_reward(const std::string& response_text,
                       const std::string& gold_answer);

// 1: <think>...</think><answer>\boxed{...}</answer>
// 0.5: same without the \boxed{...}; 0 otherwise.
double format_reward_language(const std::string& response_text);

// 1: latent block then <answer>\boxed{...}</answer>; 0.5 without the boxed;
// -1 if <|start-latent|>, <|end-latent|> or <think> appears after the first
// latent block (dominates every positive condition); 0 otherwise.
double format_reward_latent(const std::string& rendered_text);

RewardBreakdown score_language(const std::string& text, const std::string& gold);
RewardBreakdown score_latent(const std::string& text, const std::string& gold);

struct RewardFixtureCase {
    std::string kind;  // "accuracy", "format_language", "format_latent"
    std::string text;
    std::string gold;  // accuracy cases only
    double expected = 0.0;
};

std::vector<RewardFixtureCase> read_reward_fixtures(const std::string& path);

// Runs every case, printing one line per failure. Returns the failure count.
int run_reward_fixtures(const std::string& path, std::ostream& out);

}  // namespace lst
