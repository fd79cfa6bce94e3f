#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include "doctest.h"

#include <cstdio>
#include <fstream>
#include <sstream>

#include "lst/corpus.hpp"

using namespace lst;

namespace {

// Independent evaluator: re-derives the answer from the question text alone.
long eval_question(const std::string& question) {
    std::istringstream in(question);
    std::string w;
    std::vector<std::string> words;
    while (in >> w) words.push_back(w);
    // "you start with D [D] . then <op> D . ... what is the final value ?"
    size_t i = 3;
    long value = 0;
    while (i < words.size() && words[i] != ".") {
        value = value * 10 + (words[i][0] - '0');
        ++i;
    }
    ++i;  // skip "."
    while (i < words.size() && words[i] == "then") {
        const bool add = words[i + 1] == "add";
        long d = 0;
        size_t j = i + 2;
        while (words[j] != ".") {
            d = d * 10 + (words[j][0] - '0');
            ++j;
        }
        value += add ? d : -d;
        i = j + 1;
    }
    return value;
}

}  // namespace

TEST_CASE("generator is deterministic under seed and differs across seeds") {
    auto a = generate_corpus(7, 50, 3);
    auto b = generate_corpus(7, 50, 3);
    auto c = generate_corpus(8, 50, 3);
    CHECK(a == b);
    CHECK(a != c);
}

TEST_CASE("generated answers match an independent evaluator") {
    for (uint64_t seed : {1ull, 2ull, 3ull}) {
        for (int n_steps : {1, 3, 5}) {
            auto corpus = generate_corpus(seed, 200, n_steps);
            for (const TrainingExample& ex : corpus) {
                CHECK(static_cast<int>(ex.steps.size()) == n_steps);
                CHECK(std::to_string(eval_question(ex.question)) == ex.answer);
                const long v = std::stol(ex.answer);
                CHECK(v >= 1);
                CHECK(v <= 98);
            }
        }
    }
}

TEST_CASE("every generated token is in the vocabulary") {
    Tokenizer tok;
    for (const TrainingExample& ex : generate_corpus(5, 100, 3)) {
        CHECK_NOTHROW(tok.encode(ex.question));
        for (const std::string& s : ex.steps) CHECK_NOTHROW(tok.encode(s));
    }
}

TEST_CASE("tokenizer round-trips and rejects unknown pieces") {
    Tokenizer tok;
    const std::string text = "you start with 4 7 . <think> 4 7 plus 8 </think>";
    CHECK(tok.decode(tok.encode(text)) == text);
    CHECK_THROWS_AS(tok.id("banana"), std::out_of_range);
}

TEST_CASE("think-tag encoding masks exactly the response") {
    Tokenizer tok;
    TrainingExample ex{"you start with 4 7 . what is the final value ?",
                       {"4 7 plus 8 equals 5 5 ."},
                       "55",
                       "train"};
    EncodedExample enc = encode_example(ex, tok, EncodeFormat::think_tags);
    const size_t qlen = tok.encode(ex.question).size();
    CHECK(enc.question_len == static_cast<int>(qlen));
    CHECK(enc.n_latents == 0);
    for (size_t i = 0; i < enc.ids.size(); ++i) {
        CHECK(enc.loss_mask[i] == (i >= qlen));
    }
    CHECK(enc.ids[qlen] == tok.specials().think_open);
    CHECK(enc.ids.back() == tok.specials().eos);
}

TEST_CASE("latent-stage encoding structure and masking") {
    Tokenizer tok;
    auto corpus = generate_corpus(3, 5, 3);
    const TrainingExample& ex = corpus[0];
    const size_t qlen = tok.encode(ex.question).size();
    for (int k = 1; k <= 3; ++k) {
        EncodedExample enc = encode_example(ex, tok, EncodeFormat::latent_stage, k);
        CHECK(enc.n_latents == 2 * k);
        CHECK(enc.latent_start == static_cast<int>(qlen) + 1);
        CHECK(enc.ids[qlen] == tok.specials().start_latent);
        for (int j = 0; j < 2 * k; ++j) {
            const size_t p = qlen + 1 + j;
            CHECK(enc.ids[p] == tok.specials().latent_placeholder);
            CHECK_FALSE(enc.loss_mask[p]);
        }
        const size_t end_pos = qlen + 1 + 2 * k;
        CHECK(enc.ids[end_pos] == tok.specials().end_latent);
        // Question, delimiters and latent placeholders carry no loss.
        for (size_t i = 0; i <= end_pos; ++i) CHECK_FALSE(enc.loss_mask[i]);
        // Remaining steps and the answer block are supervised.
        for (size_t i = end_pos + 1; i < enc.ids.size(); ++i) {
            CHECK(enc.loss_mask[i]);
        }
        // Stage k removes exactly the first k steps.
        std::string tail;
        for (size_t s = k; s < ex.steps.size(); ++s) {
            tail += (tail.empty() ? "" : " ") + ex.steps[s];
        }
        const std::string decoded = tok.decode(std::vector<int>(
            enc.ids.begin() + end_pos + 1, enc.ids.end()));
        CHECK(decoded.rfind(tail, 0) == 0);
    }
    CHECK_THROWS_AS(encode_example(ex, tok, EncodeFormat::latent_stage, 4),
                    std::out_of_range);
}

TEST_CASE("token-wise removal drops k * tokens_per_latent step tokens") {
    Tokenizer tok;
    auto corpus = generate_corpus(4, 3, 3);
    const TrainingExample& ex = corpus[0];
    std::vector<int> step_stream;
    for (const std::string& s : ex.steps) {
        for (int id : tok.encode(s)) step_stream.push_back(id);
    }
    const size_t qlen = tok.encode(ex.question).size();
    for (int k = 1; k <= 2; ++k) {
        const int tokens_per_latent = 3;
        EncodedExample enc = encode_example_token_wise(ex, tok, k, tokens_per_latent);
        CHECK(enc.n_latents == 2 * k);
        const size_t removed =
            std::min(step_stream.size(), static_cast<size_t>(k * tokens_per_latent));
        const size_t tail_start = qlen + 1 + 2 * k + 1;
        for (size_t j = removed; j < step_stream.size(); ++j) {
            CHECK(enc.ids[tail_start + (j - removed)] == step_stream[j]);
        }
    }
}

TEST_CASE("dataset round-trips and reports the bad line on parse errors") {
    const std::string path = "test_corpus_roundtrip.jsonl";
    auto corpus = generate_corpus(9, 20, 2);
    write_dataset(path, corpus);
    CHECK(read_dataset(path) == corpus);

    std::ofstream out(path, std::ios::app);
    out << "{not json\n";
    out.close();
    try {
        read_dataset(path);
        FAIL("expected parse error");
    } catch (const std::runtime_error& e) {
        CHECK(std::string(e.what()).find("21") != std::string::npos);
    }
    std::remove(path.c_str());
}

TEST_CASE("spell_number spaces digits") {
    CHECK(spell_number(47) == "4 7");
    CHECK(spell_number(5) == "5");
    CHECK(spell_number(103) == "1 0 3");
}
