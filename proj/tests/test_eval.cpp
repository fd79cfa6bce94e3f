#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include "doctest.h"

#include <cstdio>
#include <fstream>
#include <random>

#include "lst/eval.hpp"

using namespace lst;

namespace {

ModelParams small_model(uint64_t seed) {
    Tokenizer tok;
    ModelConfig cfg;
    cfg.vocab_size = tok.vocab_size();
    cfg.hidden_dim = 16;
    cfg.n_layers = 1;
    cfg.n_heads = 2;
    cfg.max_context = 64;
    return ModelParams::init(cfg, seed);
}

}  // namespace

TEST_CASE("pass@1 equals c/n across the whole grid up to n = 8") {
    for (int n = 1; n <= 8; ++n) {
        for (int c = 0; c <= n; ++c) {
            CHECK(pass_at_k(n, c, 1) ==
                  doctest::Approx(static_cast<double>(c) / n).epsilon(1e-12));
        }
    }
}

TEST_CASE("pass@k is monotone in c and k") {
    for (int n = 2; n <= 8; ++n) {
        for (int c = 0; c < n; ++c) {
            for (int k = 1; k < n; ++k) {
                CHECK(pass_at_k(n, c + 1, k) >= pass_at_k(n, c, k));
                CHECK(pass_at_k(n, c, k + 1) >= pass_at_k(n, c, k));
            }
        }
    }
}

TEST_CASE("closed form matches a 100k-draw sampling oracle") {
    std::mt19937_64 rng(31);
    for (int c : {1, 2, 3}) {
        for (int k : {1, 4}) {
            const int n = 4;
            const int trials = 100000;
            int hits = 0;
            std::vector<int> pool(n);
            for (int t = 0; t < trials; ++t) {
                for (int i = 0; i < n; ++i) pool[i] = i < c ? 1 : 0;
                // Draw k without replacement.
                bool hit = false;
                int remaining = n;
                for (int d = 0; d < k; ++d) {
                    std::uniform_int_distribution<int> pick(0, remaining - 1);
                    const int idx = pick(rng);
                    if (pool[idx] == 1) hit = true;
                    std::swap(pool[idx], pool[remaining - 1]);
                    --remaining;
                }
                if (hit) ++hits;
            }
            const double mc = static_cast<double>(hits) / trials;
            CHECK(std::abs(pass_at_k(n, c, k) - mc) <= 0.01);
        }
    }
}

TEST_CASE("edge cases and preconditions") {
    CHECK(pass_at_k(4, 0, 3) == 0.0);
    CHECK(pass_at_k(4, 1, 4) == 1.0);  // C(3,4) = 0
    CHECK(pass_at_k(4, 2, 1) == doctest::Approx(0.5));
    CHECK_THROWS_AS(pass_at_k(4, 5, 1), std::invalid_argument);
    CHECK_THROWS_AS(pass_at_k(4, -1, 1), std::invalid_argument);
    CHECK_THROWS_AS(pass_at_k(4, 2, 5), std::invalid_argument);
    CHECK_THROWS_AS(pass_at_k(4, 2, 0), std::invalid_argument);
}

TEST_CASE("evaluation is deterministic under a fixed seed") {
    Tokenizer tok;
    ModelParams params = small_model(1);
    auto questions = generate_corpus(3, 4, 1);
    EvalConfig cfg;
    cfg.samples_per_question = 2;
    cfg.max_new_tokens = 8;
    cfg.seed = 5;
    EvalReport a = evaluate(params, questions, tok, cfg);
    EvalReport b = evaluate(params, questions, tok, cfg);
    CHECK(a.pass_at_1 == b.pass_at_1);
    CHECK(a.avg_tokens == b.avg_tokens);
    REQUIRE(a.questions.size() == b.questions.size());
    for (size_t i = 0; i < a.questions.size(); ++i) {
        CHECK(a.questions[i].first_sample == b.questions[i].first_sample);
    }
    CHECK(a.pass_at_1 <= a.pass_at_4);
}

TEST_CASE("the sweep emits one row per C and flags context overflow") {
    Tokenizer tok;
    ModelParams params = small_model(2);  // max_context 64
    auto questions = generate_corpus(4, 3, 1);
    EvalConfig cfg;
    cfg.samples_per_question = 1;
    cfg.max_new_tokens = 6;
    auto entries = latent_step_sweep(params, questions, tok, cfg, {2, 4, 64});
    REQUIRE(entries.size() == 3);
    CHECK(entries[0].ok);
    CHECK(entries[1].ok);
    CHECK_FALSE(entries[2].ok);
    CHECK(entries[2].error.find("context") != std::string::npos);

    const std::string path = "test_eval_sweep.csv";
    write_sweep_csv(path, entries);
    std::ifstream in(path);
    std::string line;
    std::getline(in, line);
    CHECK(line ==
          "latent_steps,pass_at_1,pass_at_4,avg_tokens,format_compliance,error");
    int rows = 0;
    while (std::getline(in, line)) ++rows;
    CHECK(rows == 3);
    in.close();
    std::remove(path.c_str());
}

TEST_CASE("report files round-trip the headline numbers") {
    Tokenizer tok;
    ModelParams params = small_model(3);
    auto questions = generate_corpus(5, 2, 1);
    EvalConfig cfg;
    cfg.samples_per_question = 1;
    cfg.max_new_tokens = 6;
    EvalReport report = evaluate(params, questions, tok, cfg);
    const std::string path = "test_eval_report.json";
    write_eval_report(path, report);
    std::ifstream in(path);
    std::string text((std::istreambuf_iterator<char>(in)),
                     std::istreambuf_iterator<char>());
    CHECK(text.find("pass_at_1") != std::string::npos);
    CHECK(text.find("format_compliance") != std::string::npos);
    in.close();
    std::remove(path.c_str());
}
