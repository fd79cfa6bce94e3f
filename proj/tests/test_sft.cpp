#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include "doctest.h"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <filesystem>
#include <fstream>

#include "lst/checkpoint.hpp"
#include "lst/sft.hpp"

using namespace lst;

namespace {

ModelParams small_model(uint64_t seed) {
    Tokenizer tok;
    ModelConfig cfg;
    cfg.vocab_size = tok.vocab_size();
    cfg.hidden_dim = 16;
    cfg.n_layers = 2;
    cfg.n_heads = 2;
    cfg.max_context = 120;
    return ModelParams::init(cfg, seed);
}

std::vector<double> all_grads(ModelParams& params) {
    std::vector<double> out;
    for (NamedTensor& nt : params.named_params()) {
        if (!nt.tensor.has_grad()) continue;
        const auto& g = nt.tensor.grad();
        out.insert(out.end(), g.begin(), g.end());
    }
    return out;
}

void zero_all(ModelParams& params) {
    for (NamedTensor& nt : params.named_params()) nt.tensor.zero_grad();
}

}  // namespace

TEST_CASE("response-only loss matches an independent shifted cross-entropy") {
    Tokenizer tok;
    ModelParams params = small_model(1);
    auto corpus = generate_corpus(2, 3, 2);
    for (const TrainingExample& ex : corpus) {
        EncodedExample enc = encode_example(ex, tok, EncodeFormat::think_tags);
        const double got = example_loss(params, enc, tok.specials()).item();

        // Oracle: log-softmax over the vanilla forward, averaged by hand over
        // positions whose successor is a response token.
        ForwardResult r = forward_tokens(params, enc.ids);
        Tensor lsm = log_softmax_rows(r.logits);
        double sum = 0.0;
        int count = 0;
        for (size_t i = 0; i + 1 < enc.ids.size(); ++i) {
            if (!enc.loss_mask[i + 1]) continue;
            sum += -lsm.at(static_cast<int64_t>(i), enc.ids[i + 1]);
            ++count;
        }
        CHECK(got == doctest::Approx(sum / count).epsilon(1e-6));
    }
}

TEST_CASE("loss and gradients ignore target ids at masked positions") {
    Tokenizer tok;
    ModelParams params = small_model(2);
    auto corpus = generate_corpus(3, 1, 3);
    EncodedExample enc = encode_example(corpus[0], tok, EncodeFormat::latent_stage, 2);

    auto run = [&](const std::vector<int>& targets) {
        zero_all(params);
        Tape tape;
        HybridSequence seq = build_training_sequence(params, enc, tok.specials());
        Tensor loss = sequence_loss(params, seq, targets, enc.loss_mask);
        const double v = loss.item();
        tape.backward(loss);
        return std::pair<double, std::vector<double>>{v, all_grads(params)};
    };

    auto base = run(enc.ids);
    std::vector<int> scrambled = enc.ids;
    for (size_t i = 0; i < scrambled.size(); ++i) {
        if (!enc.loss_mask[i]) scrambled[i] = (scrambled[i] + 5) % tok.vocab_size();
    }
    auto alt = run(scrambled);
    CHECK(base.first == alt.first);
    CHECK(base.second == alt.second);
}

TEST_CASE("detaching the latent chain measurably changes gradients") {
    Tokenizer tok;
    ModelParams params = small_model(3);
    auto corpus = generate_corpus(4, 1, 3);
    EncodedExample enc = encode_example(corpus[0], tok, EncodeFormat::latent_stage, 1);

    auto run = [&](bool build_latents) {
        zero_all(params);
        Tape tape;
        Tensor loss = example_loss(params, enc, tok.specials(), build_latents);
        tape.backward(loss);
        return all_grads(params);
    };
    auto live = run(true);
    auto detached = run(false);
    REQUIRE(live.size() == detached.size());
    double diff = 0.0;
    for (size_t i = 0; i < live.size(); ++i) {
        diff = std::max(diff, std::abs(live[i] - detached[i]));
    }
    CHECK(diff > 1e-8);
}

TEST_CASE("stage-0 curriculum degenerates to standard SFT") {
    Tokenizer tok;
    auto corpus = generate_corpus(5, 8, 2);
    SftConfig cfg;
    cfg.epochs = 1;
    cfg.batch_size = 4;
    cfg.seed = 9;

    ModelParams a = small_model(4);
    ModelParams b = a.clone();
    TrainResult ra = train_sft(a, corpus, tok, cfg);
    CurriculumSchedule sched;
    sched.n_stages = 0;
    TrainResult rb = train_coconut(b, corpus, tok, cfg, sched);
    REQUIRE(ra.trace.size() == rb.trace.size());
    for (size_t i = 0; i < ra.trace.size(); ++i) {
        CHECK(std::abs(ra.trace[i].loss - rb.trace[i].loss) <= 1e-6);
    }
}

TEST_CASE("a tiny model overfits a single batch") {
    Tokenizer tok;
    auto corpus = generate_corpus(6, 4, 1);
    SftConfig cfg;
    cfg.epochs = 200;
    cfg.batch_size = 4;
    cfg.lr = 3e-3;
    cfg.lr_gamma = 1.0;
    ModelParams params = small_model(5);
    TrainResult result = train_sft(params, corpus, tok, cfg);
    REQUIRE(result.trace.size() >= 10);
    CHECK(result.trace.back().loss < 0.25 * result.trace.front().loss);
}

TEST_CASE("curriculum runs all stages, skips short examples and checkpoints") {
    namespace fs = std::filesystem;
    Tokenizer tok;
    auto corpus = generate_corpus(7, 6, 3);
    auto short_ones = generate_corpus(8, 2, 1);  // fewer steps than stage 2+
    corpus.insert(corpus.end(), short_ones.begin(), short_ones.end());

    SftConfig cfg;
    cfg.epochs = 1;
    cfg.batch_size = 4;
    CurriculumSchedule sched;
    sched.n_stages = 3;
    sched.epochs_per_stage = 1;
    sched.stage_checkpoint_dir = "test_sft_stages";
    fs::create_directories(sched.stage_checkpoint_dir);

    ModelParams params = small_model(6);
    TrainResult result = train_coconut(params, corpus, tok, cfg, sched);
    // The two 1-step examples are usable at stage 1 only.
    CHECK(result.skipped_examples == 4);
    int max_stage = 0;
    for (const LossTracePoint& p : result.trace) max_stage = std::max(max_stage, p.stage);
    CHECK(max_stage == 3);
    for (int s = 1; s <= 3; ++s) {
        CHECK(fs::exists(fs::path("test_sft_stages") /
                         ("coconut_stage" + std::to_string(s) + ".ckpt")));
    }
    fs::remove_all("test_sft_stages");
}

TEST_CASE("curriculum rejects a latent multiplier other than 2") {
    Tokenizer tok;
    auto corpus = generate_corpus(9, 2, 2);
    SftConfig cfg;
    CurriculumSchedule sched;
    sched.latents_per_removed_step = 3;
    ModelParams params = small_model(7);
    CHECK_THROWS_AS(train_coconut(params, corpus, tok, cfg, sched),
                    std::invalid_argument);
}

TEST_CASE("loss trace file has the expected header") {
    const std::string path = "test_sft_trace.csv";
    write_loss_trace(path, {{1, 0, 2.5}, {2, 1, 1.5}});
    std::ifstream in(path);
    std::string line;
    std::getline(in, line);
    CHECK(line == "step,stage,loss");
    std::getline(in, line);
    CHECK(line == "1,0,2.5");
    in.close();
    std::remove(path.c_str());
}
