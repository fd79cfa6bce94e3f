#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include "doctest.h"

#include <sstream>

#include "lst/rewards.hpp"

using namespace lst;

TEST_CASE("shipped fixture suite passes exactly") {
    std::ostringstream out;
    CHECK(run_reward_fixtures(std::string(LST_DATA_DIR) + "/reward_fixtures.jsonl",
                              out) == 0);
    CHECK(out.str().find("20/20") != std::string::npos);
}

TEST_CASE("answer normalization") {
    CHECK(normalize_answer(" 4 2 ") == "42");
    CHECK(normalize_answer("042") == "42");
    CHECK(normalize_answer("+9") == "9");
    CHECK(normalize_answer("0") == "0");
    CHECK(normalize_answer("00") == "0");
}

TEST_CASE("accuracy requires boxed inside the answer tags") {
    CHECK(accuracy_reward("<answer> \\boxed{ 4 2 } </answer>", "42") == 1.0);
    CHECK(accuracy_reward("\\boxed{ 4 2 } <answer> 4 2 </answer>", "42") == 0.0);
    CHECK(accuracy_reward("<answer> 4 2 </answer>", "42") == 0.0);
    CHECK(accuracy_reward("<answer> \\boxed{ 4 3 } </answer>", "42") == 0.0);
    // First answer block and first boxed expression win.
    CHECK(accuracy_reward(
              "<answer> \\boxed{ 1 } \\boxed{ 4 2 } </answer>", "42") == 0.0);
}

TEST_CASE("language format tiers") {
    CHECK(format_reward_language(
              "<think> x </think> <answer> \\boxed{ 1 } </answer>") == 1.0);
    CHECK(format_reward_language("<think> x </think> <answer> 1 </answer>") == 0.5);
    CHECK(format_reward_language("<answer> \\boxed{ 1 } </answer>") == 0.0);
    CHECK(format_reward_language(
              "<think> x </think> <answer> 1 </answer> extra") == 0.0);
    CHECK(format_reward_language("") == 0.0);
}

TEST_CASE("latent format tiers and penalty precedence") {
    const std::string block = "<|start-latent|> <|latent|> <|latent|> <|end-latent|>";
    CHECK(format_reward_latent(block + " <answer> \\boxed{ 1 } </answer>") == 1.0);
    CHECK(format_reward_latent(block + " <answer> 1 </answer>") == 0.5);
    CHECK(format_reward_latent(block + " junk") == 0.0);
    // Latent delimiters or think tags after the block: penalty dominates even
    // an otherwise perfect tail.
    CHECK(format_reward_latent(block + " <|start-latent|> <|end-latent|> "
                                       "<answer> \\boxed{ 1 } </answer>") == -1.0);
    CHECK(format_reward_latent(block + " <think> x </think> "
                                       "<answer> \\boxed{ 1 } </answer>") == -1.0);
    CHECK(format_reward_latent("no block at all") == 0.0);
    // Trailing <eos> markers are ignored.
    CHECK(format_reward_latent(block +
                               " <answer> \\boxed{ 1 } </answer> <eos>") == 1.0);
}

TEST_CASE("reward functions are pure") {
    const std::string text =
        "<|start-latent|> <|latent|> <|end-latent|> <answer> \\boxed{ 7 } </answer>";
    for (int i = 0; i < 3; ++i) {
        CHECK(accuracy_reward(text, "7") == 1.0);
        CHECK(format_reward_latent(text) == 1.0);
    }
}

TEST_CASE("score helpers sum accuracy and format") {
    RewardBreakdown lang = score_language(
        "<think> s </think> <answer> \\boxed{ 5 } </answer>", "5");
    CHECK(lang.accuracy == 1.0);
    CHECK(lang.format == 1.0);
    CHECK(lang.total == 2.0);
    RewardBreakdown lat = score_latent("junk", "5");
    CHECK(lat.total == lat.accuracy + lat.format);
}
