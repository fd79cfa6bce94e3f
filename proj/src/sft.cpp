#include "lst/sft.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <numeric>
#include <random>
#include <stdexcept>

#include "lst/checkpoint.hpp"

namespace lst {

HybridSequence build_training_sequence(const ModelParams& params,
                                       const EncodedExample& enc,
                                       const SpecialTokens& sp,
                                       bool build_latents) {
    HybridSequence seq;
    seq.prompt_len = enc.question_len;
    if (enc.n_latents == 0) {
        for (int id : enc.ids) seq.push_token(id);
        return seq;
    }
    for (int i = 0; i < enc.latent_start; ++i) seq.push_token(enc.ids[i]);
    for (int c = 0; c < enc.n_latents; ++c) {
        Tensor h;
        if (build_latents) {
            ForwardResult r = forward(params, seq);
            h = slice_rows(r.hidden, r.hidden.rows() - 1, 1);
        } else {
            NoGradScope ng;
            ForwardResult r = forward(params, seq);
            h = slice_rows(r.hidden, r.hidden.rows() - 1, 1);
        }
        seq.push_latent(std::move(h));
    }
    for (size_t i = enc.latent_start + enc.n_latents; i < enc.ids.size(); ++i) {
        seq.push_token(enc.ids[i]);
    }
    return seq;
}

Tensor sequence_loss(const ModelParams& params, const HybridSequence& seq,
                     const std::vector<int>& target_ids,
                     const std::vector<bool>& loss_mask) {
    const size_t t = seq.size();
    if (target_ids.size() != t || loss_mask.size() != t) {
        throw std::invalid_argument("sequence_loss: target/mask length mismatch");
    }
    ForwardResult r = forward(params, seq);
    // Position i predicts the element at i+1.
    std::vector<int> shifted(t, 0);
    std::vector<bool> shifted_mask(t, false);
    for (size_t i = 0; i + 1 < t; ++i) {
        shifted[i] = target_ids[i + 1];
        shifted_mask[i] = loss_mask[i + 1] && target_ids[i + 1] >= 0;
    }
    return cross_entropy(r.logits, shifted, shifted_mask);
}

Tensor example_loss(const ModelParams& params, const EncodedExample& enc,
                    const SpecialTokens& sp, bool build_latents) {
    HybridSequence seq = build_training_sequence(params, enc, sp, build_latents);
    return sequence_loss(params, seq, enc.ids, enc.loss_mask);
}

namespace {

struct BatchTrainer {
    ModelParams& params;
    AdamW optimizer;
    StepLrSchedule schedule;
    double grad_clip;
    int64_t global_step = 0;

    BatchTrainer(ModelParams& p, const SftConfig& cfg)
        : params(p),
          optimizer(AdamW::Config{cfg.lr, 0.9, 0.999, 1e-8, cfg.weight_decay}),
          schedule(cfg.lr, cfg.lr_gamma, cfg.lr_step_size),
          grad_clip(cfg.grad_clip) {}

    void reset() {
        optimizer.reset_state();
    }

    // One optimizer step over a batch of encodings. Returns the batch loss.
    double step(const std::vector<EncodedExample>& batch, const SpecialTokens& sp,
                int64_t schedule_step) {
        Tape tape;
        Tensor total;
        for (const EncodedExample& enc : batch) {
            Tensor l = example_loss(params, enc, sp);
            total = total.defined() ? add(total, l) : l;
        }
        Tensor loss = scale(total, 1.0 / batch.size());
        const double loss_value = loss.item();
        if (!std::isfinite(loss_value)) {
            throw std::runtime_error("training diverged: loss is not finite at step " +
                                     std::to_string(global_step));
        }
        tape.backward(loss);
        auto named = params.named_params();
        clip_grad_norm(named, grad_clip);
        optimizer.set_lr(schedule.lr_at(schedule_step));
        optimizer.step(named);
        optimizer.zero_grad(named);
        ++global_step;
        return loss_value;
    }
};

std::vector<size_t> shuffled_indices(size_t n, std::mt19937_64& rng) {
    std::vector<size_t> idx(n);
    std::iota(idx.begin(), idx.end(), size_t{0});
    std::shuffle(idx.begin(), idx.end(), rng);
    return idx;
}

size_t effective_count(size_t n, int max_examples) {
    if (max_examples <= 0) return n;
    return std::min(n, static_cast<size_t>(max_examples));
}

}  // namespace

TrainResult train_sft(ModelParams& params,
                      const std::vector<TrainingExample>& corpus,
                      const Tokenizer& tok, const SftConfig& cfg) {
    const SpecialTokens& sp = tok.specials();
    TrainResult result;
    BatchTrainer trainer(params, cfg);
    std::mt19937_64 rng(cfg.seed);
    const size_t n = effective_count(corpus.size(), cfg.max_examples);
    int64_t sched_step = 0;
    for (int epoch = 0; epoch < cfg.epochs; ++epoch) {
        auto order = shuffled_indices(n, rng);
        for (size_t b = 0; b < n; b += cfg.batch_size) {
            std::vector<EncodedExample> batch;
            for (size_t i = b; i < std::min(n, b + cfg.batch_size); ++i) {
                batch.push_back(
                    encode_example(corpus[order[i]], tok, EncodeFormat::think_tags));
            }
            const double loss = trainer.step(batch, sp, sched_step++);
            result.trace.push_back({trainer.global_step, 0, loss});
        }
    }
    return result;
}

TrainResult train_coconut(ModelParams& params,
                          const std::vector<TrainingExample>& corpus,
                          const Tokenizer& tok, const SftConfig& cfg,
                          const CurriculumSchedule& schedule) {
    if (schedule.latents_per_removed_step != 2) {
        throw std::invalid_argument(
            "curriculum: latents_per_removed_step is fixed at 2");
    }
    if (schedule.n_stages == 0) {
        return train_sft(params, corpus, tok, cfg);
    }
    const SpecialTokens& sp = tok.specials();
    TrainResult result;
    BatchTrainer trainer(params, cfg);
    std::mt19937_64 rng(cfg.seed);
    const size_t base_n = effective_count(corpus.size(), cfg.max_examples);
    for (int stage = 1; stage <= schedule.n_stages; ++stage) {
        if (schedule.reset_optimizer_per_stage) trainer.reset();
        int64_t sched_step = 0;
        const size_t n = effective_count(base_n, schedule.max_examples_per_stage);
        int epochs = schedule.epochs_per_stage;
        if (stage == schedule.n_stages) epochs += schedule.final_stage_extra_epochs;
        for (int epoch = 0; epoch < epochs; ++epoch) {
            auto order = shuffled_indices(n, rng);
            std::vector<EncodedExample> batch;
            auto flush = [&] {
                if (batch.empty()) return;
                const double loss = trainer.step(batch, sp, sched_step++);
                result.trace.push_back({trainer.global_step, stage, loss});
                batch.clear();
            };
            for (size_t i = 0; i < n; ++i) {
                const TrainingExample& ex = corpus[order[i]];
                if (schedule.removal_mode == RemovalMode::step_wise) {
                    if (static_cast<int>(ex.steps.size()) < stage) {
                        ++result.skipped_examples;
                        continue;
                    }
                    batch.push_back(
                        encode_example(ex, tok, EncodeFormat::latent_stage, stage));
                } else {
                    batch.push_back(encode_example_token_wise(
                        ex, tok, stage, schedule.tokens_per_latent));
                }
                if (static_cast<int>(batch.size()) == cfg.batch_size) flush();
            }
            flush();
        }
        if (!schedule.stage_checkpoint_dir.empty()) {
            save_model(schedule.stage_checkpoint_dir + "/coconut_stage" +
                           std::to_string(stage) + ".ckpt",
                       params);
        }
    }
    return result;
}

void write_loss_trace(const std::string& path,
                      const std::vector<LossTracePoint>& trace) {
    std::ofstream out(path);
    if (!out) throw std::runtime_error("loss trace: cannot open " + path);
    out << "step,stage,loss\n";
    for (const LossTracePoint& p : trace) {
        out << p.step << ',' << p.stage << ',' << p.loss << '\n';
    }
}

}  // namespace lst
